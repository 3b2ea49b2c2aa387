"""Uniform lattice, multilinear (Q1) nodal basis and boundary handling.

A :class:`Lattice` is a uniform tensor grid on a box ``[lo, hi]`` with step
``rho`` in every axis.  Node coordinates are ``x_i = lo + i * rho`` for a
multi-index ``i`` in the index box.  The nodal basis is the tensor product of
1D hat functions: non-negative, a partition of unity inside the box, and
exact on affine functions.  Two boundary policies are supported:

* ``TRUNCATE`` -- mass carried outside the box is dropped; interpolation
  queries outside the box are clamped to the boundary (and can be flagged).
* ``REFLECT``  -- points are folded back into the box by coordinate-wise
  mirror reflection (discrete Neumann condition).

All operations are pure functions of immutable lattice data and safe to call
concurrently.
"""

from __future__ import annotations

import enum
import itertools

import numpy as np


class Boundary(enum.Enum):
    """What happens to points that leave the bounding box."""

    TRUNCATE = "truncate"
    REFLECT = "reflect"


def _as_vector(x, d: int, name: str) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.shape != (d,):
        raise ValueError(f"{name} must be a {d}-vector, got shape {v.shape}")
    return v


class Lattice:
    """Uniform grid with spacing ``rho`` on the box ``[lo, hi]``.

    Parameters
    ----------
    rho : float
        Space step, identical in every axis.
    lo, hi : array_like
        Box corners; each component must be an integer multiple of ``rho``
        and ``(hi - lo) / rho`` must be an integer >= 2 per axis.
    boundary : Boundary
        Boundary policy, fixed at construction.
    """

    def __init__(self, rho: float, lo, hi, boundary: Boundary = Boundary.TRUNCATE):
        rho = float(rho)
        if not np.isfinite(rho) or rho <= 0:
            raise ValueError(f"rho must be positive and finite, got {rho}")
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = _as_vector(hi, lo.size, "hi")
        if lo.ndim != 1 or lo.size < 1:
            raise ValueError("lo must be a non-empty 1D vector")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box corners must be finite")
        if np.any(hi <= lo):
            raise ValueError("hi must exceed lo in every axis")

        cells = (hi - lo) / rho
        cells_int = np.rint(cells)
        if np.any(np.abs(cells - cells_int) > 1e-9 * np.maximum(1.0, cells_int)):
            raise ValueError(f"(hi - lo)/rho must be integral per axis, got {cells}")
        if np.any(cells_int < 2):
            raise ValueError("box must span at least 2 cells per axis")
        for name, corner in (("lo", lo), ("hi", hi)):
            mult = corner / rho
            if np.any(np.abs(mult - np.rint(mult)) > 1e-6):
                raise ValueError(f"{name} must be a multiple of rho, got {corner}")

        self.rho = rho
        self.lo = lo.copy()
        self.hi = hi.copy()
        self.boundary = boundary
        self.d = lo.size
        #: nodes per axis (number of cells + 1)
        self.shape: tuple[int, ...] = tuple(int(c) + 1 for c in cells_int)
        self.num_nodes = int(np.prod(self.shape))
        self._cells = np.asarray([s - 1 for s in self.shape], dtype=float)
        self._nodes: np.ndarray | None = None

        self.lo.setflags(write=False)
        self.hi.setflags(write=False)

    def __repr__(self) -> str:
        return (
            f"Lattice(rho={self.rho}, lo={self.lo.tolist()}, hi={self.hi.tolist()}, "
            f"boundary={self.boundary.value}, shape={self.shape})"
        )

    # -- geometry ---------------------------------------------------------

    def axis_coords(self, k: int) -> np.ndarray:
        """Node coordinates along axis ``k``."""
        return self.lo[k] + self.rho * np.arange(self.shape[k])

    def nodes(self) -> np.ndarray:
        """All node coordinates as an ``(num_nodes, d)`` array (C order, cached)."""
        if self._nodes is None:
            axes = [self.axis_coords(k) for k in range(self.d)]
            mesh = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
            pts.setflags(write=False)
            self._nodes = pts
        return self._nodes

    def node_coord(self, i) -> np.ndarray:
        """Coordinates of the node with multi-index ``i``."""
        idx = np.asarray(i, dtype=float)
        return self.lo + idx * self.rho

    def fractional(self, points: np.ndarray) -> np.ndarray:
        """Map points to index space: ``u = (x - lo) / rho``."""
        return (np.asarray(points, dtype=float) - self.lo) / self.rho

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the closed box."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((p >= self.lo) & (p <= self.hi), axis=1)

    # -- Q1 basis ----------------------------------------------------------

    def basis_eval(self, i, x) -> float:
        """Tensor-product hat function of node ``i`` at point ``x``.

        ``beta_i(x) = prod_k max(1 - |x_k - (x_i)_k| / rho, 0)``; equals 1 at
        the node itself, 0 at every other node, and the values over all nodes
        sum to 1 for any ``x`` inside the box.
        """
        x = _as_vector(x, self.d, "x")
        if not np.all(np.isfinite(x)):
            raise ValueError("x must be finite")
        xi = self.node_coord(i)
        w = np.maximum(1.0 - np.abs(x - xi) / self.rho, 0.0)
        return float(np.prod(w))

    def _corners(self, points: np.ndarray, clamp: bool):
        """Decompose points into base index, per-axis weights and validity.

        Returns ``(base, frac)`` with ``base`` an int array (n, d) and
        ``frac`` in ``[0, 1]`` per axis when ``clamp`` is set; without
        clamping, base may index outside the grid and the caller must mask.
        """
        u = self.fractional(points)
        if clamp:
            u = np.clip(u, 0.0, self._cells)
        base = np.floor(u).astype(np.int64)
        if clamp:
            base = np.minimum(base, (self._cells - 1).astype(np.int64))
            base = np.maximum(base, 0)
        frac = u - base
        return base, frac

    def interpolate(self, values: np.ndarray, points, return_clamped: bool = False):
        """Piecewise-multilinear interpolation of nodal ``values`` at ``points``.

        Exact on affine functions.  Queries outside the box are clamped to
        the boundary first; set ``return_clamped`` to also get the mask of
        points that needed clamping.

        Parameters
        ----------
        values : ndarray
            Nodal values, shape ``lattice.shape`` (or flat of length
            ``num_nodes``).
        points : array_like
            Single d-vector or ``(n, d)`` batch.
        """
        v = np.asarray(values, dtype=float)
        if v.shape != self.shape:
            v = v.reshape(self.shape)
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.d:
            raise ValueError(f"points must have {self.d} columns")
        clamped = ~self.contains(pts)
        base, frac = self._corners(pts, clamp=True)
        out = np.zeros(pts.shape[0])
        for corner in itertools.product((0, 1), repeat=self.d):
            idx = base + np.asarray(corner, dtype=np.int64)
            w = np.ones(pts.shape[0])
            for k, c in enumerate(corner):
                w *= frac[:, k] if c else (1.0 - frac[:, k])
            out += v[tuple(idx.T)] * w
        if single:
            out = float(out[0])
            clamped = bool(clamped[0])
        if return_clamped:
            return out, clamped
        return out

    # -- boundary ----------------------------------------------------------

    def reflect(self, points):
        """Fold points into the box by coordinate-wise mirror reflection.

        Interior points are returned unchanged (bitwise); exterior
        coordinates are reflected about the violated face as many times as
        needed.  Requires the ``REFLECT`` boundary policy.
        """
        if self.boundary is not Boundary.REFLECT:
            raise ValueError("reflect requires a lattice with the REFLECT boundary policy")
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        p = np.atleast_2d(pts)
        if not np.all(np.isfinite(p)):
            raise ValueError("cannot reflect non-finite points")
        span = self.hi - self.lo
        y = np.mod(p - self.lo, 2.0 * span)
        y = np.where(y > span, 2.0 * span - y, y)
        folded = self.lo + y
        inside = (p >= self.lo) & (p <= self.hi)
        out = np.where(inside, p, folded)
        return out[0] if single else out

    def cell_of(self, x):
        """Multi-index of the cell ``E_i`` containing ``x``.

        ``E_i`` is the closed hypercube of side ``rho`` centred at the node;
        points exactly on a shared face go to the smaller index.  Outside the
        box: ``REFLECT`` folds first, ``TRUNCATE`` returns ``None``.
        """
        x = _as_vector(x, self.d, "x")
        if not np.all(np.isfinite(x)):
            raise ValueError("x must be finite")
        if not bool(self.contains(x)[0]):
            if self.boundary is Boundary.REFLECT:
                x = self.reflect(x)
            else:
                return None
        u = self.fractional(x)
        idx = np.ceil(u - 0.5).astype(np.int64)
        idx = np.clip(idx, 0, np.asarray(self._cells, dtype=np.int64))
        return tuple(int(j) for j in idx)

    def ravel_index(self, idx: np.ndarray) -> np.ndarray:
        """Linearize multi-indices (C order), matching ``nodes()`` ordering."""
        return np.ravel_multi_index(tuple(np.asarray(idx).T), self.shape)
