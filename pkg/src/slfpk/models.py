"""Concrete problem instances: oscillator, Lotka-Volterra, meeting-cost crowds.

Each model supplies coefficient fields (and costs where relevant) in the
evaluator form the stepping engine consumes.  All evaluators are pure and safe
for concurrent use; the crowd-cost convolution field is precomputed once per
measure slice and cached immutably.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

from .fpk import CoefficientField, SolverError
from .hjb import CostPair
from .lattice import Boundary, Lattice
from .measure import GridMeasure, MeasurePath


# -- damped noisy harmonic oscillator -----------------------------------------


@dataclass(frozen=True)
class OscillatorParams:
    """Damping ``gamma`` (> 2 so the exact-solution roots are real), noise
    ``sigma`` and initial Dirac location ``x0``."""

    gamma: float
    sigma: float
    x0: tuple[float, float]

    def __post_init__(self):
        if self.gamma <= 2.0:
            raise ValueError("gamma must exceed 2 (real characteristic roots)")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "x0", tuple(float(c) for c in self.x0))

    @property
    def roots(self) -> tuple[float, float]:
        """Characteristic roots; their product is 1 and their sum is -gamma."""
        disc = np.sqrt(self.gamma**2 / 4.0 - 1.0)
        return (-self.gamma / 2.0 + disc, -self.gamma / 2.0 - disc)


def oscillator_coefficients(params: OscillatorParams) -> CoefficientField:
    """Linear oscillator field: ``b = (x2, -x1 - gamma x2)``, one noise column
    ``(0, sqrt(2 sigma))`` acting on the velocity component."""
    gamma = params.gamma
    noise = np.sqrt(2.0 * params.sigma)

    def drift(path, x, t):
        return np.stack([x[:, 1], -x[:, 0] - gamma * x[:, 1]], axis=1)

    def diffusion(path, x, t):
        col = np.zeros((1, x.shape[0], 2))
        col[0, :, 1] = noise
        return col

    return CoefficientField(
        drift=drift,
        diffusion_columns=diffusion,
        r=1,
        causal=True,
        growth_constant=1.0 + gamma + noise,
    )


def oscillator_unnormalized_density(params: OscillatorParams, points, t: float) -> np.ndarray:
    """The closed-form (unnormalized) transition density started from ``x0``."""
    if t <= 0:
        raise ValueError("the exact density requires t > 0")
    x = np.atleast_2d(np.asarray(points, dtype=float))
    mu1, mu2 = params.roots
    sig = params.sigma
    psi = (x[:, 0] * mu1 - x[:, 1]) * np.exp(-mu2 * t)
    eta = (x[:, 0] * mu2 - x[:, 1]) * np.exp(-mu1 * t)
    psi0 = params.x0[0] * mu1 - params.x0[1]
    eta0 = params.x0[0] * mu2 - params.x0[1]
    big_h = -(2.0 * sig / (mu1 + mu2)) * (1.0 - np.exp(-(mu1 + mu2) * t))
    a_t = (sig / mu1) * (1.0 - np.exp(-2.0 * mu1 * t))
    b_t = (sig / mu2) * (1.0 - np.exp(-2.0 * mu2 * t))
    delta = a_t * b_t - big_h**2
    if delta <= 0:
        raise SolverError(f"covariance determinant {delta} <= 0 at t={t}")
    s = (
        a_t * (psi - psi0) ** 2
        + 2.0 * big_h * (psi - psi0) * (eta - eta0)
        + b_t * (eta - eta0) ** 2
    )
    return np.exp(params.gamma * t - s / (2.0 * delta)) / (2.0 * np.pi * np.sqrt(delta))


_norm_cache: dict[tuple, float] = {}


def _oscillator_normalization(
    params: OscillatorParams, t: float, lo, hi, quad_per_axis: int
) -> float:
    key = (params, float(t), tuple(lo), tuple(hi), int(quad_per_axis))
    if key not in _norm_cache:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        steps = (hi - lo) / quad_per_axis
        axes = [
            lo[k] + (np.arange(quad_per_axis) + 0.5) * steps[k] for k in range(2)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        vals = oscillator_unnormalized_density(params, pts, t)
        _norm_cache[key] = float(vals.sum() * np.prod(steps))
    return _norm_cache[key]


def oscillator_exact_density(
    params: OscillatorParams, points, t: float, lo, hi, quad_per_axis: int = 1024
) -> np.ndarray:
    """Exact density normalized over the box ``[lo, hi]`` by midpoint quadrature."""
    single = np.asarray(points).ndim == 1
    vals = oscillator_unnormalized_density(params, points, t)
    vals = vals / _oscillator_normalization(params, t, lo, hi, quad_per_axis)
    return float(vals[0]) if single else vals


def oscillator_density_on_lattice(
    params: OscillatorParams, lattice: Lattice, t: float, refine: int = 4
) -> np.ndarray:
    """Exact density sampled at the lattice nodes (normalized over the box
    with the lattice's own midpoint quadrature refined ``refine`` times)."""
    quad = (lattice.shape[0] - 1) * refine
    vals = oscillator_exact_density(params, lattice.nodes(), t, lattice.lo, lattice.hi, quad)
    return vals.reshape(lattice.shape)


# -- seasonal Lotka-Volterra (first order, substepped flow) --------------------


@dataclass(frozen=True)
class LotkaVolterraParams:
    """Seasonality ``lam``, self-limitation ``gamma`` and Euler substep count.

    The characteristic map uses ``substeps`` inner Euler steps of size
    ``delta = h / substeps``; when ``delta`` is given explicitly it must
    satisfy ``h = substeps * delta`` exactly at run time.
    """

    lam: float
    gamma: float
    substeps: int = 1
    delta: float | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.delta is not None and self.delta <= 0:
            raise ValueError("delta must be positive")


def lotka_volterra_drift(params: LotkaVolterraParams):
    lam, gamma = params.lam, params.gamma

    def drift(path, x, t):
        with np.errstate(over="ignore"):
            e1 = np.exp(x[:, 0])
            e2 = np.exp(x[:, 1])
            out = np.stack([-1.0 + e2, 1.0 + lam * np.sin(t) - e1 - gamma * e2], axis=1)
        if not np.all(np.isfinite(out)):
            node = int(np.argmax(~np.isfinite(out).all(axis=1)))
            raise SolverError(f"Lotka-Volterra drift overflowed at node {node}, t={t}")
        return out

    return drift


def lotka_volterra_coefficients(
    params: LotkaVolterraParams, lattice: Lattice | None = None
) -> CoefficientField:
    """First-order field whose characteristic map is the P-fold Euler substep.

    ``z^0 = x_i``, ``z^{p+1} = z^p + delta b(z^p, t_k + p delta)`` with
    ``delta = h / substeps``.  On a reflecting lattice every substep folds the
    trajectory back into the box (trajectories reflect when they touch the
    boundary).
    """
    drift = lotka_volterra_drift(params)
    p_sub = params.substeps
    reflecting = lattice is not None and lattice.boundary is Boundary.REFLECT

    def flow(path, x, t, h):
        if params.delta is not None and h != p_sub * params.delta:
            raise ValueError(f"h={h} != substeps * delta = {p_sub * params.delta}")
        delta = h / p_sub
        z = x
        for p in range(p_sub):
            z = z + delta * drift(path, z, t + p * delta)
            if reflecting:
                z = lattice.reflect(z)
        return z

    return CoefficientField(drift=drift, diffusion_columns=None, r=0, causal=True, flow=flow)


def lotka_volterra_equilibrium(params: LotkaVolterraParams) -> np.ndarray:
    """Stationary point of the lam = 0 drift: ``x2 = 0``, ``x1 = ln(1 - gamma)``."""
    if params.gamma >= 1:
        raise ValueError("no positive equilibrium for gamma >= 1")
    return np.array([np.log(1.0 - params.gamma), 0.0])


def time_averaged_density(path: MeasurePath, window: tuple[float, float]) -> np.ndarray:
    """h-weighted average of slice densities with ``t_k`` in ``[t_a, t_b)``.

    The half-open window keeps the average exact (sum of h-weights equals the
    window length when it is a whole number of steps), so a constant-in-time
    path averages to its common density.
    """
    t_a, t_b = window
    if t_b <= t_a:
        raise ValueError("window must have positive length")
    total = np.zeros(path.lattice.shape)
    found = False
    for k, m in enumerate(path.slices):
        if t_a - 1e-12 <= k * path.h < t_b - 1e-12:
            total += m.density() * path.h
            found = True
    if not found:
        raise ValueError("no slice time falls inside the window")
    return total / (t_b - t_a)


# -- meeting-area crowd costs --------------------------------------------------


@dataclass(frozen=True)
class MeetingCostParams:
    """Meeting set (union of closed boxes), Gaussian width ``delta`` of the
    congestion kernel, and the domain box the model lives on."""

    meeting_set: tuple
    delta: float
    domain: tuple

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        regions = []
        for lo, hi in self.meeting_set:
            lo = tuple(np.atleast_1d(np.asarray(lo, dtype=float)))
            hi = tuple(np.atleast_1d(np.asarray(hi, dtype=float)))
            if any(b < a for a, b in zip(lo, hi)):
                raise ValueError(f"malformed region lo={lo} hi={hi}")
            regions.append((lo, hi))
        if not regions:
            raise ValueError("meeting_set must be non-empty")
        object.__setattr__(self, "meeting_set", tuple(regions))
        dlo, dhi = self.domain
        dlo = tuple(np.atleast_1d(np.asarray(dlo, dtype=float)))
        dhi = tuple(np.atleast_1d(np.asarray(dhi, dtype=float)))
        object.__setattr__(self, "domain", (dlo, dhi))
        for lo, hi in regions:
            if any(a < da or b > db for a, b, da, db in zip(lo, hi, dlo, dhi)):
                raise ValueError("meeting regions must lie inside the domain")


def distance_to_set(points, regions) -> np.ndarray:
    """Euclidean distance to a union of closed boxes (0 inside)."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    best = None
    for lo, hi in regions:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        gap = np.maximum(np.maximum(lo - x, x - hi), 0.0)
        dist = np.linalg.norm(gap, axis=1)
        best = dist if best is None else np.minimum(best, dist)
    return best


def _gaussian_kernel_1d(delta: float, rho: float, n_sigmas: float = 4.0) -> np.ndarray:
    halfwidth = max(int(np.ceil(n_sigmas * delta / rho)), 1)
    offs = np.arange(-halfwidth, halfwidth + 1) * rho
    k = np.exp(-(offs**2) / (2.0 * delta**2))
    return k / k.sum()


class _CongestionField:
    """Double Gaussian convolution of a measure's density, cached per slice."""

    def __init__(self, delta: float):
        self.delta = delta
        self._cache: list[tuple[GridMeasure, np.ndarray]] = []

    def field(self, m: GridMeasure) -> np.ndarray:
        for cached_m, cached_f in self._cache:
            if cached_m is m:
                return cached_f
        lat = m.lattice
        kern = _gaussian_kernel_1d(self.delta, lat.rho)
        out = m.weights.astype(float)
        for _ in range(2):
            for ax in range(lat.d):
                out = ndimage.convolve1d(out, kern, axis=ax, mode="constant", cval=0.0)
        out = out / lat.rho**lat.d
        out.setflags(write=False)
        self._cache.append((m, out))
        if len(self._cache) > 512:
            del self._cache[0]
        return out

    def __call__(self, points, m: GridMeasure) -> np.ndarray:
        return m.lattice.interpolate(self.field(m), np.atleast_2d(points))


def meeting_costs(params: MeetingCostParams) -> CostPair:
    """Crowd-aversion costs ``F(x, m) = dist(x, P)^2 V_delta(x, m)``, ``G = F``.

    ``V_delta`` is the congestion field: the measure's density convolved
    twice with a per-axis Gaussian of width ``delta`` (discrete kernel,
    renormalized to unit sum).
    """
    congestion = _CongestionField(params.delta)
    regions = params.meeting_set

    def cost(points, m: GridMeasure) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return distance_to_set(pts, regions) ** 2 * congestion(pts, m)

    return CostPair(running=cost, terminal=cost, bound=None)
