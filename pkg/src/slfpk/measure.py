"""Discrete measures on a lattice: weights, paths, moments and transport distances.

A :class:`GridMeasure` stores one time slice of non-negative node weights
``m_i`` (a sub-probability: total mass <= 1, and exactly 1 under a
reflecting boundary).  A :class:`MeasurePath` is the full sequence of slices
``k = 0..N`` together with the piecewise-linear-in-time extension

    mu(t) = ((t - t_k)/h) m_{k+1} + ((t_{k+1} - t)/h) m_k,   t in [t_k, t_{k+1}).

Wasserstein distances are exact: quantile coupling in 1D, a network-flow
linear program on active nodes in d >= 2 (test-sized instances only).
Measures and paths are immutable after construction; reads are freely
concurrent.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize, sparse

from .lattice import Boundary, Lattice

MASS_TOL = 1e-12
#: active-node cap for the d >= 2 transport LP
LP_NODE_CAP = 2000


# -- initial data -----------------------------------------------------------


@dataclass(frozen=True)
class DiracInit:
    """Unit mass concentrated at ``point``."""

    point: tuple


@dataclass(frozen=True)
class DensityInit:
    """Density function on the box, projected by per-cell midpoint quadrature.

    ``subsamples`` midpoints per axis per cell (default 4); the projected
    weights are renormalized to total mass 1.  Sample points falling outside
    the box contribute zero (densities are implicitly restricted to the box).
    """

    density: Callable[[np.ndarray], np.ndarray]
    subsamples: int = 4


@dataclass(frozen=True)
class TableInit:
    """Explicit weight table, validated and copied."""

    weights: np.ndarray


class GridMeasure:
    """Non-negative weights on the nodes of a lattice (one time slice)."""

    def __init__(self, lattice: Lattice, weights: np.ndarray):
        w = np.asarray(weights, dtype=float)
        if w.shape != lattice.shape:
            w = w.reshape(lattice.shape)
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0):
            raise ValueError(f"weights must be non-negative, min={w.min()}")
        self.lattice = lattice
        self.weights = w.copy()
        self.weights.setflags(write=False)
        self.mass = float(w.sum())
        if self.mass > 1.0 + MASS_TOL:
            raise ValueError(f"total mass {self.mass} exceeds 1")

    def check(self) -> None:
        """Re-assert the type invariants (used after scheme steps)."""
        if np.any(self.weights < 0):
            raise AssertionError("negative weight")
        if self.mass > 1.0 + MASS_TOL:
            raise AssertionError(f"mass {self.mass} exceeds 1")
        if self.lattice.boundary is Boundary.REFLECT and abs(self.mass - 1.0) > MASS_TOL:
            raise AssertionError(f"mass {self.mass} != 1 under REFLECT")

    def density(self) -> np.ndarray:
        """Node densities ``weights / rho^d``."""
        return self.weights / self.lattice.rho**self.lattice.d

    def flat(self) -> np.ndarray:
        return self.weights.reshape(-1)


def project_initial(lattice: Lattice, init) -> GridMeasure:
    """Project an initial datum onto the lattice (``m_{i,0} = m0(E_i)``)."""
    if isinstance(init, DiracInit):
        return dirac_measure(lattice, init.point)
    if isinstance(init, DensityInit):
        return density_measure(lattice, init.density, subsamples=init.subsamples)
    if isinstance(init, TableInit):
        return GridMeasure(lattice, init.weights)
    raise TypeError(f"unsupported initial datum {type(init).__name__}")


def dirac_measure(lattice: Lattice, point) -> GridMeasure:
    """Full mass at the cell containing ``point``."""
    idx = lattice.cell_of(np.asarray(point, dtype=float))
    if idx is None:
        raise ValueError(f"Dirac location {point} is outside the box")
    w = np.zeros(lattice.shape)
    w[idx] = 1.0
    return GridMeasure(lattice, w)


def density_measure(lattice: Lattice, density, subsamples: int = 4) -> GridMeasure:
    """Per-cell midpoint quadrature of ``density``, renormalized to mass 1.

    ``density`` maps an ``(n, d)`` array of points to ``n`` non-negative
    values.  Each cell ``E_i`` is sampled on a ``subsamples**d`` midpoint
    grid; samples outside the box count as zero.
    """
    if subsamples < 1:
        raise ValueError("subsamples must be >= 1")
    q = int(subsamples)
    rho, d = lattice.rho, lattice.d
    # midpoint offsets within a cell centred at 0
    offs_1d = (np.arange(q) + 0.5) / q * rho - rho / 2.0
    nodes = lattice.nodes()
    w = np.zeros(lattice.num_nodes)
    for off in itertools.product(offs_1d, repeat=d):
        pts = nodes + np.asarray(off)
        vals = np.asarray(density(pts), dtype=float)
        if np.any(vals < 0):
            raise ValueError("density returned a negative sample")
        inside = np.all((pts >= lattice.lo) & (pts <= lattice.hi), axis=1)
        w += np.where(inside, vals, 0.0)
    w *= (rho / q) ** d
    total = w.sum()
    if total <= 0:
        raise ValueError("density integrates to zero over the box")
    return GridMeasure(lattice, (w / total).reshape(lattice.shape))


class MeasurePath:
    """Sequence of grid measures at times ``t_k = k h`` with time interpolation."""

    def __init__(self, lattice: Lattice, slices: list[GridMeasure], h: float):
        if h <= 0 or not np.isfinite(h):
            raise ValueError("h must be positive")
        if not slices:
            raise ValueError("a path needs at least one slice")
        for m in slices:
            if m.lattice is not lattice:
                raise ValueError("all slices must live on the path's lattice")
        self.lattice = lattice
        self.slices = list(slices)
        self.h = float(h)

    @property
    def n_steps(self) -> int:
        return len(self.slices) - 1

    @property
    def T(self) -> float:
        return self.n_steps * self.h

    def __len__(self) -> int:
        return len(self.slices)

    def __getitem__(self, k: int) -> GridMeasure:
        return self.slices[k]

    def eval_at_time(self, t: float) -> GridMeasure:
        """Convex combination of the bracketing slices at time ``t``."""
        if not (0.0 <= t <= self.T + 1e-12):
            raise ValueError(f"t={t} outside [0, {self.T}]")
        k = int(np.floor(t / self.h))
        if k >= self.n_steps:
            return self.slices[self.n_steps]
        lam = (t - k * self.h) / self.h
        if lam == 0.0:
            return self.slices[k]
        w = lam * self.slices[k + 1].weights + (1.0 - lam) * self.slices[k].weights
        return GridMeasure(self.lattice, w)

    def weights_array(self) -> np.ndarray:
        """All slice weights stacked into one ``(N+1, *shape)`` array."""
        return np.stack([m.weights for m in self.slices])


def eval_at_time(path: MeasurePath, t: float) -> GridMeasure:
    return path.eval_at_time(t)


# -- moments and norms -------------------------------------------------------


def moment2(m: GridMeasure) -> float:
    """Second moment ``sum_i |x_i|^2 m_i``."""
    sq = np.sum(m.lattice.nodes() ** 2, axis=1)
    return float(sq @ m.flat())


def sup_norm_diff(a, b) -> float:
    """Max node-wise weight difference; for paths, also max over time slices."""
    if isinstance(a, MeasurePath) and isinstance(b, MeasurePath):
        if len(a) != len(b):
            raise ValueError("paths must have the same number of slices")
        return max(
            float(np.max(np.abs(ma.weights - mb.weights)))
            for ma, mb in zip(a.slices, b.slices)
        )
    return float(np.max(np.abs(a.weights - b.weights)))


# -- Wasserstein distances ----------------------------------------------------


def _check_pair(m1: GridMeasure, m2: GridMeasure) -> None:
    if m1.lattice is not m2.lattice:
        raise ValueError("measures must share a lattice")
    if abs(m1.mass - m2.mass) > 1e-9:
        raise ValueError(f"unequal masses: {m1.mass} vs {m2.mass}")


def _quantile_cost(x: np.ndarray, p1: np.ndarray, p2: np.ndarray, power: int) -> float:
    """Exact 1D coupling cost for atomic measures via merged quantile levels."""
    c1 = np.cumsum(p1)
    c2 = np.cumsum(p2)
    levels = np.union1d(c1, c2)
    levels = levels[levels > 1e-15]
    prev = np.concatenate([[0.0], levels[:-1]])
    spans = levels - prev
    mids = 0.5 * (levels + prev)
    i1 = np.searchsorted(c1, mids)
    i2 = np.searchsorted(c2, mids)
    i1 = np.minimum(i1, len(x) - 1)
    i2 = np.minimum(i2, len(x) - 1)
    return float(np.sum(spans * np.abs(x[i1] - x[i2]) ** power))


def _lp_cost(x1: np.ndarray, w1: np.ndarray, x2: np.ndarray, w2: np.ndarray, power: int) -> float:
    """Exact transport LP on active nodes (d >= 2); test-sized instances only."""
    n, m = len(w1), len(w2)
    if n > LP_NODE_CAP or m > LP_NODE_CAP:
        raise ValueError(
            f"transport LP capped at {LP_NODE_CAP} active nodes per side "
            f"(got {n} x {m}); subsample the measures first"
        )
    cost = np.linalg.norm(x1[:, None, :] - x2[None, :, :], axis=2) ** power
    # marginal constraints: row sums = w1, column sums = w2
    var = np.arange(n * m)
    row_of = var // m
    col_of = var % m
    a_eq = sparse.coo_matrix(
        (
            np.ones(2 * n * m),
            (np.concatenate([row_of, n + col_of]), np.concatenate([var, var])),
        ),
        shape=(n + m, n * m),
    ).tocsr()
    b_eq = np.concatenate([w1, w2])
    # one equality row is redundant; dropping it keeps the LP non-degenerate
    res = optimize.linprog(cost.reshape(-1), A_eq=a_eq[:-1], b_eq=b_eq[:-1], method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def _wasserstein(m1: GridMeasure, m2: GridMeasure, power: int) -> float:
    _check_pair(m1, m2)
    mass = 0.5 * (m1.mass + m2.mass)
    if mass <= 0:
        return 0.0
    lat = m1.lattice
    if lat.d == 1:
        x = lat.axis_coords(0)
        cost = _quantile_cost(x, m1.flat() / m1.mass, m2.flat() / m2.mass, power)
    else:
        w1 = m1.flat()
        w2 = m2.flat()
        a1 = w1 > 0
        a2 = w2 > 0
        nodes = lat.nodes()
        cost = _lp_cost(
            nodes[a1], w1[a1] / m1.mass, nodes[a2], w2[a2] / m2.mass, power
        )
    return float(mass * cost) ** (1.0 / power) if power > 1 else float(mass * cost)


def wasserstein1(m1: GridMeasure, m2: GridMeasure) -> float:
    """Exact 1-Wasserstein (Kantorovich-Rubinstein) distance."""
    _check_pair(m1, m2)
    lat = m1.lattice
    if lat.d == 1:
        # d1 = integral of |F1 - F2|; exact for atoms on a uniform grid
        diff = np.cumsum(m1.flat() - m2.flat())[:-1]
        return float(np.sum(np.abs(diff)) * lat.rho)
    return _wasserstein(m1, m2, power=1)


def wasserstein2(m1: GridMeasure, m2: GridMeasure) -> float:
    """Exact 2-Wasserstein distance (squared ground cost, final square root)."""
    return _wasserstein(m1, m2, power=2)
