"""Semi-Lagrangian stepping engine for Fokker-Planck-Kolmogorov equations.

One step follows the discrete characteristics from every node and
redistributes the node mass through the Q1 basis weights of the endpoints:

    Phi_{j,k}^{l,+-} = x_j + h b(x_j, t_k) +- sqrt(r h) sigma_l(x_j, t_k)
    m_{i,k+1} = (1/2r) sum_l sum_j [beta_i(Phi^{l,+}) + beta_i(Phi^{l,-})] m_{j,k}

The scatter is a convex redistribution, so weights stay non-negative and
(under a reflecting boundary) the total mass is conserved exactly.  The
deterministic case ``r = 0`` uses the single endpoint ``x_j + h b`` (or a
model-supplied flow map, e.g. a substepped Euler integrator).

Scatter contributions are accumulated in ascending node-index order
(``numpy.bincount``), so runs are bit-reproducible.  ``step`` is data
parallel over source nodes in principle; this implementation is serial
vectorized numpy, which already satisfies the fixed reduction order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lattice import Boundary, Lattice
from .measure import GridMeasure, MeasurePath


class SolverError(RuntimeError):
    """Raised when the scheme cannot proceed (non-finite coefficients, ...)."""


# -- coefficient fields -------------------------------------------------------


@dataclass(frozen=True)
class CoefficientField:
    """Drift and diffusion evaluators ``b[mu](x, t)`` and ``sigma_l[mu](x, t)``.

    ``drift(path, X, t)`` maps an ``(n, d)`` batch of points to ``(n, d)``
    drift vectors; ``diffusion_columns(path, X, t)`` returns the ``r``
    diffusion columns as an ``(r, n, d)`` array (``None`` when ``r == 0``).
    ``causal`` declares that the evaluators only read ``{mu(s): s <= t}``;
    evaluators violating their declared causality produce undefined
    fixed-point behaviour (documented, not policed).

    ``flow`` optionally overrides the deterministic characteristic map
    (``r == 0`` only): ``flow(path, X, t, h) -> (n, d)`` endpoints replacing
    ``X + h b``.

    ``growth_constant`` declares the linear-growth bound
    ``|b| + |sigma| <= C (1 + |x|)``; when set, :func:`check_linear_growth`
    verifies it by sampling (and :func:`propagate` does so once per run).
    """

    drift: Callable
    diffusion_columns: Callable | None
    r: int
    causal: bool
    flow: Callable | None = None
    growth_constant: float | None = None

    def __post_init__(self):
        if self.r < 0:
            raise ValueError("r must be >= 0")
        if self.r > 0 and self.diffusion_columns is None:
            raise ValueError("diffusion_columns required when r > 0")
        if self.flow is not None and self.r != 0:
            raise ValueError("a flow override is only meaningful for r = 0")


def constant_field(
    lattice_dim: int,
    b: np.ndarray | None = None,
    sigma_columns: np.ndarray | None = None,
    drift_matrix: np.ndarray | None = None,
) -> CoefficientField:
    """Linear, measure-independent field ``b(x) = b0 + A x`` with constant columns."""
    b0 = np.zeros(lattice_dim) if b is None else np.asarray(b, dtype=float)
    a_mat = None if drift_matrix is None else np.asarray(drift_matrix, dtype=float)
    cols = None if sigma_columns is None else np.atleast_2d(np.asarray(sigma_columns, dtype=float))
    r = 0 if cols is None else cols.shape[0]

    def drift(path, x, t):
        out = np.broadcast_to(b0, x.shape).copy()
        if a_mat is not None:
            out += x @ a_mat.T
        return out

    diffusion = None
    if r > 0:
        def diffusion(path, x, t):
            return np.broadcast_to(cols[:, None, :], (r, x.shape[0], lattice_dim))

    growth = float(np.abs(b0).sum() + (0.0 if a_mat is None else np.abs(a_mat).sum())
                   + (0.0 if cols is None else np.linalg.norm(cols)))
    return CoefficientField(
        drift=drift, diffusion_columns=diffusion, r=r, causal=True,
        growth_constant=max(growth, 1e-12),
    )


def check_linear_growth(
    coeffs: CoefficientField,
    lattice: Lattice,
    path: MeasurePath,
    times=None,
    samples: int = 256,
    seed: int = 0,
) -> None:
    """Sample ``|b| + |sigma| <= C (1 + |x|)`` on the box; raise on violation."""
    if coeffs.growth_constant is None:
        return
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lattice.lo, lattice.hi, size=(samples, lattice.d))
    if times is None:
        times = [0.0]
    c = coeffs.growth_constant
    for t in times:
        total = np.linalg.norm(coeffs.drift(path, pts, t), axis=1)
        if coeffs.r > 0:
            cols = np.asarray(coeffs.diffusion_columns(path, pts, t))
            total = total + np.sqrt(np.sum(cols**2, axis=(0, 2)))
        bound = c * (1.0 + np.linalg.norm(pts, axis=1))
        bad = total > bound * (1.0 + 1e-9)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise SolverError(
                f"linear growth violated at x={pts[i]}, t={t}: "
                f"|b|+|sigma|={total[i]:.6g} > C(1+|x|)={bound[i]:.6g}"
            )


# -- characteristics and transitions ------------------------------------------


def characteristics(
    coeffs: CoefficientField,
    path: MeasurePath,
    points: np.ndarray,
    t: float,
    h: float,
    lattice: Lattice,
) -> np.ndarray:
    """Endpoints of the discrete characteristics started at ``points``.

    Returns ``(2r, n, d)`` (or ``(1, n, d)`` when ``r == 0``).  Under the
    ``REFLECT`` policy every endpoint is folded into the box before return.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if coeffs.r == 0:
        if coeffs.flow is not None:
            pts = coeffs.flow(path, x, t, h)[None, :, :]
        else:
            pts = (x + h * coeffs.drift(path, x, t))[None, :, :]
    else:
        b = np.asarray(coeffs.drift(path, x, t), dtype=float)
        cols = np.asarray(coeffs.diffusion_columns(path, x, t), dtype=float)
        if cols.shape != (coeffs.r, x.shape[0], lattice.d):
            raise SolverError(
                f"diffusion_columns returned shape {cols.shape}, "
                f"expected {(coeffs.r, x.shape[0], lattice.d)}"
            )
        mean = x + h * b
        amp = np.sqrt(coeffs.r * h)
        pts = np.concatenate([mean[None] + amp * cols, mean[None] - amp * cols])
    if not np.all(np.isfinite(pts)):
        bad = np.argwhere(~np.isfinite(pts))[0]
        raise SolverError(
            f"non-finite characteristic endpoint at t={t} "
            f"(branch {bad[0]}, source node {bad[1]})"
        )
    if lattice.boundary is Boundary.REFLECT:
        pts = np.stack([lattice.reflect(p) for p in pts])
    return pts


@dataclass
class TransitionRow:
    """One row of the approximating Markov chain kernel."""

    source: tuple
    targets: list[tuple[tuple, float]] = field(default_factory=list)

    def probability_sum(self) -> float:
        return float(sum(p for _, p in self.targets))


def transition_row(coeffs: CoefficientField, path: MeasurePath, j, k: int) -> TransitionRow:
    """Transition probabilities out of node ``j`` at step ``k``.

    ``p_{ji} = (1/2r) sum_l [beta_i(Phi^{l,+}) + beta_i(Phi^{l,-})]``;
    the deterministic case uses the single endpoint with weight 1.  Under
    ``TRUNCATE`` the probabilities may sum to less than 1 (dropped mass).
    """
    lat = path.lattice
    x_j = lat.node_coord(j)[None, :]
    pts = characteristics(coeffs, path, x_j, k * path.h, path.h, lat)
    share = 1.0 / pts.shape[0]
    probs: dict[tuple, float] = {}
    cells = np.asarray(lat.shape, dtype=np.int64) - 1
    for branch in pts:
        u = lat.fractional(branch[0])
        if lat.boundary is Boundary.REFLECT:
            u = np.clip(u, 0.0, cells)
        base = np.floor(u).astype(np.int64)
        base = np.minimum(base, cells - 1) if lat.boundary is Boundary.REFLECT else base
        base = np.maximum(base, 0) if lat.boundary is Boundary.REFLECT else base
        frac = u - base
        for corner in itertools.product((0, 1), repeat=lat.d):
            idx = base + np.asarray(corner, dtype=np.int64)
            if np.any(idx < 0) or np.any(idx > cells):
                continue
            w = 1.0
            for ax, c in enumerate(corner):
                w *= frac[ax] if c else (1.0 - frac[ax])
            if w == 0.0:
                continue
            key = tuple(int(v) for v in idx)
            probs[key] = probs.get(key, 0.0) + share * w
    row = TransitionRow(
        source=tuple(int(v) for v in np.atleast_1d(j)), targets=sorted(probs.items())
    )
    total = row.probability_sum()
    if total > 1.0 + 1e-12:
        raise SolverError(f"transition probabilities sum to {total} > 1")
    if lat.boundary is Boundary.REFLECT and abs(total - 1.0) > 1e-12:
        raise SolverError(f"transition probabilities sum to {total} != 1 under REFLECT")
    return row


# -- stepping -----------------------------------------------------------------


def _scatter(lattice: Lattice, points: np.ndarray, masses: np.ndarray, out: np.ndarray) -> None:
    """Add ``masses`` at ``points`` to flat node accumulator ``out`` via Q1 weights."""
    cells = np.asarray(lattice.shape, dtype=np.int64) - 1
    u = lattice.fractional(points)
    reflecting = lattice.boundary is Boundary.REFLECT
    if reflecting:
        # folding can leave u marginally outside [0, n] through rounding
        u = np.clip(u, 0.0, cells)
    base = np.floor(u).astype(np.int64)
    if reflecting:
        base = np.clip(base, 0, cells - 1)
    frac = u - base
    one_minus = 1.0 - frac
    for corner in itertools.product((0, 1), repeat=lattice.d):
        idx = base + np.asarray(corner, dtype=np.int64)
        w = masses.copy()
        for ax, c in enumerate(corner):
            w *= frac[:, ax] if c else one_minus[:, ax]
        if reflecting:
            lin = np.ravel_multi_index(tuple(idx.T), lattice.shape)
            out += np.bincount(lin, weights=w, minlength=out.size)
        else:
            valid = np.all((idx >= 0) & (idx <= cells), axis=1)
            if not np.any(valid):
                continue
            lin = np.ravel_multi_index(tuple(idx[valid].T), lattice.shape)
            out += np.bincount(lin, weights=w[valid], minlength=out.size)


def step(m_k: GridMeasure, coeffs: CoefficientField, path: MeasurePath, k: int) -> GridMeasure:
    """One explicit scheme step: scatter every node mass through its transition row."""
    lat = m_k.lattice
    nodes = lat.nodes()
    masses = m_k.flat()
    pts = characteristics(coeffs, path, nodes, k * path.h, path.h, lat)
    share = 1.0 / pts.shape[0]
    out = np.zeros(lat.num_nodes)
    for branch in pts:
        _scatter(lat, branch, masses * share, out)
    m_next = GridMeasure(lat, out.reshape(lat.shape))
    if lat.boundary is Boundary.REFLECT:
        if abs(m_next.mass - m_k.mass) > 1e-12:
            raise SolverError(
                f"mass not conserved under REFLECT: {m_k.mass} -> {m_next.mass}"
            )
    elif m_next.mass > m_k.mass + 1e-12:
        raise SolverError(f"mass grew under TRUNCATE: {m_k.mass} -> {m_next.mass}")
    return m_next


def propagate(
    m0: GridMeasure,
    coeffs: CoefficientField,
    n_steps: int,
    h: float | None = None,
    frozen_path: MeasurePath | None = None,
) -> MeasurePath:
    """Run the full scheme from ``m0`` for ``n_steps`` steps.

    For non-causal coefficients a ``frozen_path`` must be supplied; the sweep
    is then one evaluation of the fixed-point map ``mu -> F(mu)``.  Causal
    coefficients may read the path under construction (only slices ``<= k``
    exist at step ``k``, which is exactly what causality permits).
    """
    if frozen_path is None:
        if not coeffs.causal:
            raise ValueError("non-causal coefficients require a frozen_path")
        if h is None:
            raise ValueError("h is required when no frozen_path is given")
    else:
        if h is None:
            h = frozen_path.h
        elif abs(h - frozen_path.h) > 1e-15:
            raise ValueError("h disagrees with frozen_path.h")
        if frozen_path.n_steps < n_steps:
            raise ValueError("frozen_path is shorter than the requested sweep")
    path = MeasurePath(m0.lattice, [m0], h)
    if coeffs.growth_constant is not None:
        check_linear_growth(coeffs, m0.lattice, frozen_path or path)
    source = frozen_path if frozen_path is not None else path
    for k in range(n_steps):
        path.slices.append(step(path.slices[k], coeffs, source, k))
    return path


# -- mollification ------------------------------------------------------------


@dataclass(frozen=True)
class MollifierSpec:
    """Width and shape of the regularizing kernel ``phi_eps``.

    ``radius`` is the truncation radius in units of ``epsilon`` (the compact
    bump is supported on one epsilon by construction).  Discrete kernel
    weights are non-negative and renormalized to sum exactly 1.
    """

    epsilon: float
    kernel: str = "truncated_gaussian"
    radius: float | None = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.kernel not in ("truncated_gaussian", "compact_bump"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.radius is None:
            object.__setattr__(
                self, "radius", 4.0 if self.kernel == "truncated_gaussian" else 1.0
            )
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    def profile(self, sq_dist_over_eps2: np.ndarray) -> np.ndarray:
        """Unnormalized kernel value as a function of ``|x/eps|^2``."""
        s = np.asarray(sq_dist_over_eps2, dtype=float)
        if self.kernel == "truncated_gaussian":
            # tolerant cutoff so points exactly at the truncation radius are
            # included regardless of how their distance was computed
            vals = np.where(s <= self.radius**2 * (1.0 + 1e-12), np.exp(-0.5 * s), 0.0)
        else:
            with np.errstate(divide="ignore", over="ignore"):
                vals = np.where(s < 1.0, np.exp(-1.0 / np.maximum(1.0 - s, 1e-300)), 0.0)
        return vals


def mollifier_stencil(spec: MollifierSpec, lattice: Lattice) -> tuple[np.ndarray, np.ndarray]:
    """Index offsets and renormalized weights of the discrete kernel.

    Raises when ``epsilon < rho`` (the kernel would be under-resolved).
    """
    if spec.epsilon < lattice.rho:
        raise ValueError(
            f"mollifier epsilon={spec.epsilon} under-resolved by rho={lattice.rho}"
        )
    halfwidth = int(np.floor(spec.radius * spec.epsilon / lattice.rho))
    axes = [np.arange(-halfwidth, halfwidth + 1)] * lattice.d
    mesh = np.meshgrid(*axes, indexing="ij")
    offsets = np.stack([m.reshape(-1) for m in mesh], axis=1)
    sq = np.sum((offsets * lattice.rho) ** 2, axis=1) / spec.epsilon**2
    weights = spec.profile(sq)
    keep = weights > 0
    offsets, weights = offsets[keep], weights[keep]
    return offsets, weights / weights.sum()


def mollify_coefficients(
    coeffs: CoefficientField, spec: MollifierSpec, lattice: Lattice
) -> CoefficientField:
    """Replace ``b``/``sigma`` by their discrete mollifications on the lattice.

    The mollified field at ``x`` is the kernel-weighted average of the base
    field over lattice nodes within the kernel support, with the weights
    renormalized over the nodes actually available (so constants are
    preserved exactly, including near the boundary).
    """
    offsets, _ = mollifier_stencil(spec, lattice)
    cells = np.asarray(lattice.shape, dtype=np.int64) - 1

    def smoothed(evaluate, path, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        base = np.rint(lattice.fractional(x)).astype(np.int64)
        acc = None
        wsum = np.zeros(x.shape[0])
        for off in offsets:
            idx = base + off
            valid = np.all((idx >= 0) & (idx <= cells), axis=1)
            # clamp before evaluating so the base field is only queried in-box;
            # clamped entries carry zero weight
            nodes = lattice.lo + np.clip(idx, 0, cells) * lattice.rho
            sq = np.sum((x - nodes) ** 2, axis=1) / spec.epsilon**2
            w = spec.profile(sq) * valid
            vals = evaluate(path, nodes, t)
            term = w[..., None] * vals if vals.ndim == 2 else w[None, :, None] * vals
            acc = term if acc is None else acc + term
            wsum += w
        wsum = np.maximum(wsum, 1e-300)
        return acc / (wsum[..., None] if acc.ndim == 2 else wsum[None, :, None])

    def drift(path, x, t):
        return smoothed(coeffs.drift, path, x, t)

    diffusion = None
    if coeffs.r > 0:
        def diffusion(path, x, t):
            return smoothed(
                lambda p, y, s: np.asarray(coeffs.diffusion_columns(p, y, s), dtype=float),
                path, x, t,
            )

    return CoefficientField(
        drift=drift,
        diffusion_columns=diffusion,
        r=coeffs.r,
        causal=coeffs.causal,
        flow=None,
        growth_constant=coeffs.growth_constant,
    )


# -- generator and weak-form residual ------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """C^2 test function with analytic gradient and Hessian evaluators.

    ``value(X) -> (n,)``, ``gradient(X) -> (n, d)``, ``hessian(X) -> (n, d, d)``.
    """

    __test__ = False  # keep pytest from collecting this as a test class

    value: Callable
    gradient: Callable
    hessian: Callable


def generator_apply(
    coeffs: CoefficientField,
    path: MeasurePath,
    testfn: TestFunction,
    points: np.ndarray,
    t: float,
):
    """Generator ``L phi = b . grad(phi) + (1/2) sum_l sigma_l^T H sigma_l``."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    single = np.asarray(points).ndim == 1
    b = np.asarray(coeffs.drift(path, x, t), dtype=float)
    grad = np.asarray(testfn.gradient(x), dtype=float)
    out = np.sum(b * grad, axis=1)
    if coeffs.r > 0:
        hess = np.asarray(testfn.hessian(x), dtype=float)
        cols = np.asarray(coeffs.diffusion_columns(path, x, t), dtype=float)
        out = out + 0.5 * np.einsum("rni,nij,rnj->n", cols, hess, cols)
    return float(out[0]) if single else out


def weak_residual(
    path: MeasurePath, coeffs: CoefficientField, testfn: TestFunction, t: float
) -> float:
    """Defect of the weak-solution identity at time ``t``.

    ``| int phi dm(t) - int phi dm(0) - int_0^t int L phi dm(s) ds |`` with
    the time integral by the trapezoid rule over the slice times.  Expected
    to decay like ``O(rho^2/h + h)`` for smooth compactly supported phi.
    """
    if not (0.0 <= t <= path.T + 1e-12):
        raise ValueError(f"t={t} outside [0, {path.T}]")
    lat = path.lattice
    nodes = lat.nodes()
    phi = np.asarray(testfn.value(nodes), dtype=float)

    def pairing(measure: GridMeasure) -> float:
        return float(phi @ measure.flat())

    def l_term(measure: GridMeasure, s: float) -> float:
        vals = generator_apply(coeffs, path, testfn, nodes, s)
        return float(vals @ measure.flat())

    k_end = int(np.floor(t / path.h + 1e-12))
    k_end = min(k_end, path.n_steps)
    times = [j * path.h for j in range(k_end + 1)]
    g = [l_term(path.slices[j], times[j]) for j in range(k_end + 1)]
    integral = float(np.trapezoid(g, dx=path.h)) if len(g) > 1 else 0.0
    if t > times[-1] + 1e-12:
        g_t = l_term(path.eval_at_time(t), t)
        integral += 0.5 * (g[-1] + g_t) * (t - times[-1])
    return abs(pairing(path.eval_at_time(t)) - pairing(path.slices[0]) - integral)
