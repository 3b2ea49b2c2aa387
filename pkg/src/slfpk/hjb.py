"""Backward Semi-Lagrangian solver for the HJB equations of the couplings.

The value recursion (quadratic Hamiltonian, isotropic noise ``sigma``) is

    v_{i,N}  = G(x_i, terminal measure)
    v_{i,k}  = min_alpha { (h/2)|alpha|^2
               + (1/2d) sum_l [ I[v_{.,k+1}](x_i + h alpha + sigma sqrt(hd) e_l)
                              + I[v_{.,k+1}](x_i + h alpha - sigma sqrt(hd) e_l) ] }
               + h F(x_i, running measure)

with ``I`` the multilinear interpolation operator and query points clamped
to the box.  Two coupling modes share the recursion:

* forecasting mode -- the running cost reads the measure path slice by slice
  and the terminal cost reads the final slice;
* frozen mode (Hughes) -- both costs are frozen at a single measure and the
  recursion runs from a given start step.

The continuum ``inf`` over controls is realized as a min over a finite
symmetric grid (optionally refined once around the discrete argmin); ties go
to the smallest ``|alpha|``, then lexicographic order, so runs are
deterministic.  Each backward step is pure (reads slice k+1, writes slice k).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

from .fpk import MollifierSpec, SolverError, mollifier_stencil
from .lattice import Lattice
from .measure import GridMeasure, MeasurePath


@dataclass(frozen=True)
class ControlGrid:
    """Symmetric candidate grid for the control minimization.

    Contains ``alpha = 0``; ``points_per_axis`` must be odd and >= 3.  With
    ``refine`` set, one extra pass tests controls at half the grid spacing
    around the per-node argmin.
    """

    a_max: float
    points_per_axis: int = 21
    refine: bool = False

    def __post_init__(self):
        if self.a_max <= 0:
            raise ValueError("a_max must be positive")
        if self.points_per_axis < 3 or self.points_per_axis % 2 == 0:
            raise ValueError("points_per_axis must be an odd integer >= 3")

    @property
    def spacing(self) -> float:
        return 2.0 * self.a_max / (self.points_per_axis - 1)

    def candidates(self, d: int) -> np.ndarray:
        """Control candidates, ordered by (|alpha|^2, lexicographic)."""
        axis = np.linspace(-self.a_max, self.a_max, self.points_per_axis)
        pts = np.stack(
            [m.reshape(-1) for m in np.meshgrid(*([axis] * d), indexing="ij")], axis=1
        )
        order = sorted(range(len(pts)), key=lambda i: (np.sum(pts[i] ** 2), tuple(pts[i])))
        return pts[order]


@dataclass(frozen=True)
class CostPair:
    """Running and terminal costs ``F(x, m)`` and ``G(x, m)``.

    Both evaluators map an ``(n, d)`` batch of points and a measure to
    ``n`` values.  ``bound`` optionally declares the uniform bound assumed by
    the theory; when set it is re-checked on every evaluation.
    """

    running: Callable
    terminal: Callable
    bound: float | None = None


class ValueGrid:
    """HJB value samples ``v_{i,k}`` for ``k = 0..N`` on a lattice."""

    def __init__(self, lattice: Lattice, values: np.ndarray, h: float, sigma: float):
        vals = np.asarray(values, dtype=float)
        expected = (vals.shape[0],) + lattice.shape
        if vals.shape != expected:
            raise ValueError(f"values shape {vals.shape} != {expected}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("value grid contains non-finite entries")
        self.lattice = lattice
        self.values = vals
        self.values.setflags(write=False)
        self.h = float(h)
        self.sigma = float(sigma)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    def slice(self, k: int) -> np.ndarray:
        return self.values[k]


def _eval_cost(fn, pts, measure, what: str, k: int, bound: float | None) -> np.ndarray:
    vals = np.asarray(fn(pts, measure), dtype=float)
    if not np.all(np.isfinite(vals)):
        node = int(np.argmax(~np.isfinite(vals)))
        raise SolverError(f"non-finite {what} cost at node {node}, step {k}")
    if bound is not None and np.max(np.abs(vals)) > bound + 1e-9:
        raise SolverError(
            f"{what} cost exceeds its declared bound {bound} at step {k}"
        )
    return vals


def solve_hjb(
    costs: CostPair,
    measure_source,
    sigma: float,
    lattice: Lattice,
    h: float,
    n_steps: int,
    start_k: int = 0,
    control: ControlGrid | None = None,
) -> ValueGrid:
    """Backward value sweep from ``k = n_steps`` down to ``start_k``.

    ``measure_source`` is either a :class:`MeasurePath` (running cost reads
    slice ``k``, terminal cost reads the final slice) or a single
    :class:`GridMeasure` (both costs frozen at it -- the Hughes coupling).
    Entries below ``start_k`` are filled with the ``start_k`` values.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if h <= 0:
        raise ValueError("h must be positive")
    if not 0 <= start_k <= n_steps:
        raise ValueError("start_k out of range")
    if control is None:
        control = ControlGrid(a_max=1.0)
    frozen = isinstance(measure_source, GridMeasure)
    if not frozen and len(measure_source) != n_steps + 1:
        raise ValueError("measure path length must be n_steps + 1")

    d = lattice.d
    nodes = lattice.nodes()
    alphas = control.candidates(d)
    noise = sigma * np.sqrt(h * d)
    offsets = noise * np.eye(d)

    def measure_at(k: int) -> GridMeasure:
        return measure_source if frozen else measure_source[k]

    def expected_next(v_next: np.ndarray, shifted: np.ndarray) -> np.ndarray:
        acc = np.zeros(shifted.shape[0])
        for e in offsets:
            acc += lattice.interpolate(v_next, np.clip(shifted + e, lattice.lo, lattice.hi))
            acc += lattice.interpolate(v_next, np.clip(shifted - e, lattice.lo, lattice.hi))
        return acc / (2.0 * d)

    values = np.empty((n_steps + 1,) + lattice.shape)
    values[n_steps] = _eval_cost(
        costs.terminal, nodes, measure_at(n_steps), "terminal", n_steps, costs.bound
    ).reshape(lattice.shape)

    for k in range(n_steps - 1, start_k - 1, -1):
        v_next = values[k + 1]
        best = None
        best_idx = None
        for a_idx, alpha in enumerate(alphas):
            val = 0.5 * h * np.sum(alpha**2) + expected_next(v_next, nodes + h * alpha)
            if best is None:
                best = val
                best_idx = np.zeros(len(val), dtype=np.int64)
            else:
                better = val < best
                best = np.where(better, val, best)
                if control.refine:
                    best_idx = np.where(better, a_idx, best_idx)
        if control.refine:
            half = 0.5 * control.spacing
            base_alpha = alphas[best_idx]
            for off in itertools.product((-half, 0.0, half), repeat=d):
                off = np.asarray(off)
                if not np.any(off):
                    continue
                cand = base_alpha + off
                val = 0.5 * h * np.sum(cand**2, axis=1) + expected_next(
                    v_next, nodes + h * cand
                )
                best = np.minimum(best, val)
        running = _eval_cost(costs.running, nodes, measure_at(k), "running", k, costs.bound)
        values[k] = (best + h * running).reshape(lattice.shape)

    for k in range(start_k):
        values[k] = values[start_k]
    return ValueGrid(lattice, values, h, sigma)


def mollify_value(v: ValueGrid, spec: MollifierSpec) -> ValueGrid:
    """Per-time-slice discrete convolution with the renormalized kernel.

    Near the boundary the kernel is truncated to the available nodes and
    renormalized per node, so constants are preserved exactly everywhere and
    symmetric cancellation holds at interior nodes.
    """
    lat = v.lattice
    offsets, weights = mollifier_stencil(spec, lat)
    halfwidth = int(np.max(np.abs(offsets)))
    kernel = np.zeros((2 * halfwidth + 1,) * lat.d)
    for off, w in zip(offsets, weights):
        kernel[tuple(off + halfwidth)] = w
    den = ndimage.convolve(np.ones(lat.shape), kernel, mode="constant", cval=0.0)
    out = np.empty_like(v.values)
    for k in range(v.values.shape[0]):
        num = ndimage.convolve(v.values[k], kernel, mode="constant", cval=0.0)
        out[k] = num / den
    return ValueGrid(lat, out, v.h, v.sigma)


def gradient_field(v: ValueGrid) -> np.ndarray:
    """Nodal spatial gradients of the value grid, shape ``(N+1, *shape, d)``.

    Centred differences with step ``rho`` in the interior, first-order
    one-sided differences at the box faces.
    """
    lat = v.lattice
    comps = [
        np.gradient(v.values, lat.rho, axis=1 + ax, edge_order=1)
        for ax in range(lat.d)
    ]
    return np.stack(comps, axis=-1)


def drift_from_node_field(lattice: Lattice, node_field: np.ndarray, h: float):
    """Drift evaluator backed by per-step nodal vectors (e.g. ``-grad v``).

    ``node_field`` has shape ``(N+1, *shape, d)``; evaluation at arbitrary
    points interpolates each component multilinearly, and the time index is
    the nearest step of ``t`` (the scheme only queries ``t = t_k``).
    """
    n_steps = node_field.shape[0] - 1

    def drift(path, x, t):
        k = min(max(int(round(t / h)), 0), n_steps)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        for ax in range(lattice.d):
            out[:, ax] = lattice.interpolate(node_field[k][..., ax], x)
        return out

    return drift
