"""Nonlinear couplings: explicit (Hughes-type) marching and fictitious play.

Two regimes, matching the two ways coefficients may depend on the crowd:

* causal coefficients (the drift at time ``t_k`` reads only slices ``<= k``)
  are solved by one explicit forward sweep -- :func:`solve_explicit`;
* forecasting couplings (the drift reads the whole path, as in mean field
  games) are solved as a fixed point by fictitious play: each round solves
  the value function against the running average of all past crowd iterates
  and propagates against the newest value gradient --
  :func:`solve_fictitious_play`.

Non-convergence of fictitious play is a reported outcome, not an error; the
existence theory is not the solver's guarantee.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .fpk import CoefficientField, MollifierSpec, propagate
from .hjb import (
    ControlGrid,
    CostPair,
    ValueGrid,
    drift_from_node_field,
    gradient_field,
    mollify_value,
    solve_hjb,
)
from .lattice import Lattice
from .measure import GridMeasure, MeasurePath, sup_norm_diff


@dataclass(frozen=True)
class FictitiousPlayConfig:
    """Stopping rule and discretization knobs for the learning iteration."""

    mollifier: MollifierSpec
    control: ControlGrid
    tol: float = 0.01
    max_iters: int = 200

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class CouplingReport:
    """Outcome of a coupling solve; ``gap_history`` has one entry per iteration."""

    iterations: int
    final_gap: float
    converged: bool
    gap_history: list[float] = field(default_factory=list)
    #: elapsed seconds at the end of each iteration
    iteration_times: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    max_mass_error: float = 0.0


def isotropic_diffusion(d: int, sigma: float):
    """Diffusion columns ``sigma_l = sigma e_l`` for ``l = 1..d``."""

    def diffusion(path, x, t):
        cols = np.zeros((d, x.shape[0], d))
        for ax in range(d):
            cols[ax, :, ax] = sigma
        return cols

    return diffusion


def crowd_field(lattice: Lattice, sigma: float, drift) -> CoefficientField:
    """Causal field with the given drift and isotropic noise ``sigma I``."""
    return CoefficientField(
        drift=drift,
        diffusion_columns=isotropic_diffusion(lattice.d, sigma),
        r=lattice.d,
        causal=True,
    )


def solve_explicit(
    m0: GridMeasure, coeffs: CoefficientField, n_steps: int, h: float
) -> MeasurePath:
    """Single forward sweep for causal coefficients.

    Identical to :func:`slfpk.fpk.propagate` (same reduction order, bitwise);
    nonlinearity enters only through the coefficient evaluators, which may
    run an inner HJB solve on the frozen current slice (the Hughes model).
    """
    if not coeffs.causal:
        raise ValueError("solve_explicit requires causal coefficients")
    return propagate(m0, coeffs, n_steps, h)


def hughes_drift_field(
    costs: CostPair,
    sigma: float,
    lattice: Lattice,
    h: float,
    n_steps: int,
    mollifier: MollifierSpec,
    control: ControlGrid,
) -> CoefficientField:
    """Drift of the Hughes-type coupling: at each step ``k`` solve the value
    function with both costs frozen at the current slice, mollify the slice-k
    values, and descend the gradient."""

    def drift(path, x, t):
        k = min(max(int(round(t / h)), 0), n_steps)
        frozen = path.slices[min(k, len(path.slices) - 1)]
        v = solve_hjb(costs, frozen, sigma, lattice, h, n_steps, start_k=k, control=control)
        v_k = ValueGrid(lattice, v.values[k:k + 1], h, sigma)
        grad = gradient_field(mollify_value(v_k, mollifier))[0]
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        for ax in range(lattice.d):
            out[:, ax] = -lattice.interpolate(grad[..., ax], x)
        return out

    return crowd_field(lattice, sigma, drift)


def _descent_field(
    lattice: Lattice,
    v: ValueGrid,
    sigma: float,
    mollifier: MollifierSpec,
) -> CoefficientField:
    grad = gradient_field(mollify_value(v, mollifier))
    return crowd_field(lattice, sigma, drift_from_node_field(lattice, -grad, v.h))


def _average_path(lattice: Lattice, weight_sum: np.ndarray, count: int, h: float) -> MeasurePath:
    slices = [GridMeasure(lattice, w / count) for w in weight_sum]
    return MeasurePath(lattice, slices, h)


def solve_fictitious_play(
    m0: GridMeasure,
    costs: CostPair,
    sigma: float,
    n_steps: int,
    h: float,
    config: FictitiousPlayConfig,
) -> tuple[MeasurePath, ValueGrid, CouplingReport]:
    """Fictitious-play iteration for the implicit (forecasting) coupling.

    ``m^0`` is the zero-drift diffusion of ``m0``; each round solves the
    value function on the running average ``(1/(p+1)) sum_{p'<=p} m^{p'}``
    and propagates against the newest mollified value gradient.  Stops when
    consecutive raw iterates differ by less than ``tol`` in the discrete
    infinity norm over all slices and nodes, or when ``max_iters`` rounds
    have run (reported via ``converged``, not an exception).
    """
    start = time.perf_counter()
    lat = m0.lattice
    mass0 = m0.mass

    def zero_drift(path, x, t):
        return np.zeros_like(x)

    report = CouplingReport(iterations=0, final_gap=np.inf, converged=False)

    def track_mass(path: MeasurePath) -> None:
        err = max(abs(m.mass - mass0) for m in path.slices)
        report.max_mass_error = max(report.max_mass_error, err)

    current = propagate(m0, crowd_field(lat, sigma, zero_drift), n_steps, h)
    track_mass(current)
    weight_sum = current.weights_array().copy()
    count = 1

    v = solve_hjb(costs, current, sigma, lat, h, n_steps, control=config.control)
    while True:
        nxt = propagate(m0, _descent_field(lat, v, sigma, config.mollifier), n_steps, h)
        track_mass(nxt)
        gap = sup_norm_diff(current, nxt)
        report.gap_history.append(gap)
        report.iteration_times.append(time.perf_counter() - start)
        report.iterations = len(report.gap_history)
        report.final_gap = gap
        current = nxt
        weight_sum += current.weights_array()
        count += 1
        if gap < config.tol:
            report.converged = True
            break
        if report.iterations >= config.max_iters:
            break
        v = solve_hjb(
            costs, _average_path(lat, weight_sum, count, h), sigma, lat, h, n_steps,
            control=config.control,
        )
    report.wall_time = time.perf_counter() - start
    return current, v, report


def equilibrium_residual(
    path: MeasurePath,
    costs: CostPair,
    sigma: float,
    mollifier: MollifierSpec,
    control: ControlGrid,
) -> float:
    """Direct fixed-point defect: re-solve the value function on ``path``,
    re-propagate from its initial slice, and return the sup-norm gap between
    input and output paths."""
    lat = path.lattice
    v = solve_hjb(costs, path, sigma, lat, path.h, path.n_steps, control=control)
    replay = propagate(
        path.slices[0], _descent_field(lat, v, sigma, mollifier), path.n_steps, path.h
    )
    return sup_norm_diff(path, replay)
