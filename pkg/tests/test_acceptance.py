"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v`` (add ``-s`` to stream the
per-criterion lines; they also appear in the ``-rA`` summary).
"""

import time

import numpy as np
import pytest

from slfpk.coupling import (
    FictitiousPlayConfig,
    equilibrium_residual,
    hughes_drift_field,
    solve_explicit,
    solve_fictitious_play,
)
from slfpk.fpk import (
    CoefficientField,
    MollifierSpec,
    TestFunction,
    constant_field,
    propagate,
    transition_row,
    weak_residual,
)
from slfpk.hjb import ControlGrid, CostPair, solve_hjb
from slfpk.lattice import Boundary, Lattice
from slfpk.measure import (
    GridMeasure,
    MeasurePath,
    density_measure,
    dirac_measure,
    moment2,
    wasserstein1,
    wasserstein2,
)
from slfpk.models import (
    LotkaVolterraParams,
    MeetingCostParams,
    OscillatorParams,
    lotka_volterra_coefficients,
    lotka_volterra_drift,
    lotka_volterra_equilibrium,
    meeting_costs,
    oscillator_coefficients,
    oscillator_density_on_lattice,
)
from slfpk.cli import error_metric, mass_in_region

# minimum weight observed across every path produced by this module (criterion 3)
_MIN_WEIGHTS: list[float] = []


def _track(path: MeasurePath) -> MeasurePath:
    _MIN_WEIGHTS.append(float(min(m.weights.min() for m in path.slices)))
    return path


def report(num: int, name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {num:02d} {'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"criterion {num} ({name}): {detail}"


# -- shared models ------------------------------------------------------------


def random_linear_model() -> CoefficientField:
    """Smooth bounded d=2, r=2 field used by criteria 4 and 5."""

    def drift(path, x, t):
        return np.stack(
            [0.3 * np.sin(x[:, 1] + t), 0.25 * np.cos(x[:, 0] - 0.5 * t)], axis=1
        )

    def diffusion(path, x, t):
        cols = np.empty((2, x.shape[0], 2))
        cols[0, :, 0] = 0.20 * np.cos(x[:, 1])
        cols[0, :, 1] = 0.10 * np.sin(x[:, 0] + t)
        cols[1, :, 0] = 0.15 * np.sin(0.5 * x[:, 0])
        cols[1, :, 1] = 0.20 * np.cos(x[:, 1] - t)
        return cols

    return CoefficientField(drift=drift, diffusion_columns=diffusion, r=2, causal=True)


# pointwise bounds of the model above (sums of amplitudes, deliberately crude)
RANDOM_MODEL_B_SUP = 0.55
RANDOM_MODEL_S2_SUP = 0.2**2 + 0.1**2 + 0.15**2 + 0.2**2

OSC = OscillatorParams(gamma=2.1, sigma=0.8, x0=(1.0, 1.0))

CROWD_RHO = 0.05
CROWD_H = 0.05
CROWD_STEPS = 40  # T = 2
CROWD_SIGMA = 0.01
CROWD_REGIONS = (((-2.5,), (-2.0,)), ((1.0,), (1.5,)))


def crowd_setup():
    lat = Lattice(CROWD_RHO, [-3.0], [3.0], Boundary.REFLECT)
    m0 = density_measure(lat, lambda p: np.exp(-p[:, 0] ** 2 / 0.2))
    params = MeetingCostParams(meeting_set=CROWD_REGIONS, delta=0.05,
                               domain=((-3.0,), (3.0,)))
    costs = meeting_costs(params)
    mollifier = MollifierSpec(epsilon=0.2)
    control = ControlGrid(a_max=2.0, points_per_axis=21)
    return lat, m0, costs, mollifier, control


# -- criteria -------------------------------------------------------------------


def test_c01_table1_reproduction():
    expected = {0.1: 1.02e-2, 0.05: 5.37e-3, 0.025: 2.45e-3}
    field = oscillator_coefficients(OSC)
    errs = []
    t0 = time.perf_counter()
    for rho, h in [(0.1, 0.05), (0.05, 0.025), (0.025, 0.0125)]:
        lat = Lattice(rho, (-4, -4), (4, 4), Boundary.TRUNCATE)
        m0 = dirac_measure(lat, OSC.x0)
        n = int(round(2.0 / h))
        path = _track(propagate(m0, field, n, h))
        exact = oscillator_density_on_lattice(OSC, lat, 2.0)
        errs.append(error_metric(path[n], exact, lat.shape[0]))
    rates = [np.log2(errs[i - 1] / errs[i]) for i in range(1, 3)]
    in_band = all(
        0.7 * ref <= e <= 1.3 * ref for e, ref in zip(errs, expected.values())
    )
    rates_ok = all(0.7 <= r <= 1.4 for r in rates)
    report(
        1, "table-1 oscillator errors and rates", in_band and rates_ok,
        f"E={['%.3e' % e for e in errs]} vs {list(expected.values())}, "
        f"rates={['%.2f' % r for r in rates]}, {time.perf_counter() - t0:.0f}s",
    )


def test_c02_mass_conservation_reflect():
    lat = Lattice(0.06, (-1.5, -1.5), (1.5, 1.5), Boundary.REFLECT)
    center = np.array([0.4, 0.4])
    m0 = density_measure(lat, lambda p: np.exp(-np.sum((p - center) ** 2, axis=1) / 0.05))
    params = LotkaVolterraParams(lam=0.05, gamma=0.05, substeps=16)
    h = 8 * 0.06
    n = 21  # T = 10.08, the T=10 horizon rounded up to whole steps
    path = _track(propagate(m0, lotka_volterra_coefficients(params, lat), n, h))
    worst = max(abs(m.mass - 1.0) for m in path.slices)
    report(2, "mass conservation under reflection", worst <= 1e-10,
           f"max |mass-1| = {worst:.2e} over {n} steps of h={h}")


def test_c03_non_negativity():
    # one canonical run plus every path produced by the other criteria so far
    lat = Lattice(0.1, [-4.0], [4.0], Boundary.REFLECT)
    m0 = density_measure(lat, lambda p: np.exp(-p[:, 0] ** 2 / 0.5))
    field = constant_field(1, b=[0.4], sigma_columns=np.array([[0.6]]))
    _track(propagate(m0, field, 30, 0.1))
    worst = min(_MIN_WEIGHTS)
    report(3, "non-negativity of all weights", worst >= 0.0,
           f"min weight across {len(_MIN_WEIGHTS)} runs = {worst}")


def _consistency_errors(rho: float, n_nodes: int = 200):
    coeffs = random_linear_model()
    h = 0.01
    lat = Lattice(rho, (-2, -2), (2, 2), Boundary.TRUNCATE)
    path = MeasurePath(lat, [dirac_measure(lat, (0.0, 0.0))], h)
    coords = lat.nodes()
    interior = np.all(np.abs(coords) <= 1.5, axis=1)
    rng = np.random.default_rng(42)
    picks = rng.choice(np.nonzero(interior)[0], size=n_nodes, replace=False)
    drift_err = 0.0
    var_ratio = 0.0
    for lin in picks:
        j = np.unravel_index(lin, lat.shape)
        row = transition_row(coeffs, path, j, 0)
        xj = lat.node_coord(j)
        b = coeffs.drift(path, xj[None, :], 0.0)[0]
        cols = coeffs.diffusion_columns(path, xj[None, :], 0.0)[:, 0, :]
        mean = sum(p * (lat.node_coord(i) - xj) for i, p in row.targets)
        drift_err = max(drift_err, float(np.max(np.abs(mean - h * b))))
        var = sum(p * np.sum((lat.node_coord(i) - xj - h * b) ** 2)
                  for i, p in row.targets)
        e = var - h * float(np.sum(cols**2))
        var_ratio = max(var_ratio, abs(e) / rho**2)
    return drift_err, var_ratio


def test_c04_markov_chain_consistency():
    drift_fine, kappa_fit = _consistency_errors(0.01)
    kappa = 1.1 * kappa_fit  # fitted at the finest grid, small safety margin
    details = [f"kappa={kappa:.3f}"]
    ok = drift_fine <= 1e-12
    details.append(f"drift_err(0.01)={drift_fine:.1e}")
    for rho in (0.02, 0.04):
        drift_err, ratio = _consistency_errors(rho)
        ok = ok and drift_err <= 1e-12 and ratio <= kappa
        details.append(f"rho={rho}: drift={drift_err:.1e} |e|/rho^2={ratio:.3f}")
    report(4, "chain drift/variance consistency", ok, ", ".join(details))


def test_c05_second_moment_bound():
    coeffs = random_linear_model()
    rho, h, t_final = 0.04, 0.01, 1.0
    n = int(round(t_final / h))
    lat = Lattice(rho, (-2, -2), (2, 2), Boundary.TRUNCATE)
    m0 = density_measure(lat, lambda p: np.exp(-np.sum(p**2, axis=1) / 0.1))
    path = _track(propagate(m0, coeffs, n, h))
    b_sup, s2_sup = RANDOM_MODEL_B_SUP, RANDOM_MODEL_S2_SUP
    c_growth = b_sup + b_sup**2 * h + s2_sup
    bound = np.exp(c_growth * t_final) * (
        moment2(m0) + c_growth * t_final + rho**2 * t_final / h
    ) * 1.01
    worst = max(moment2(m) for m in path.slices)
    report(5, "second-moment bound", worst <= bound,
           f"max moment2 = {worst:.4f} <= bound {bound:.4f} (C={c_growth:.3f})")


def test_c06_holder_half_equicontinuity():
    lat = Lattice(0.05, [-4.0], [4.0], Boundary.REFLECT)
    m0 = density_measure(lat, lambda p: np.exp(-(p[:, 0] - 0.5) ** 2 / 0.25))
    field = constant_field(1, sigma_columns=np.array([[0.5]]), drift_matrix=[[-1.0]])
    h0 = 0.1
    ratios = {}
    for h in (h0, h0 / 2, h0 / 4):
        n = int(round(1.0 / h))
        path = _track(propagate(m0, field, n, h))
        ratios[h] = max(
            wasserstein2(path[k + 1], path[k]) / np.sqrt(h) for k in range(n)
        )
    cap = 1.1 * ratios[h0 / 4]  # common constant from the finest grid
    ok = all(r <= cap for r in ratios.values())
    report(6, "Holder-1/2 equicontinuity", ok,
           f"ratios={[f'{h}:{r:.4f}' for h, r in ratios.items()]}, cap={cap:.4f}")


def test_c07_hjb_affine_closed_form():
    c, sigma, h, n = 0.5, 0.1, 0.1, 5
    lat = Lattice(0.1, [-2.0], [2.0], Boundary.TRUNCATE)
    costs = CostPair(
        running=lambda x, m: np.zeros(len(np.atleast_2d(x))),
        terminal=lambda x, m: c * np.atleast_2d(x)[:, 0],
    )
    control = ControlGrid(a_max=1.0, points_per_axis=5)  # -c = -0.5 on the grid
    dummy = GridMeasure(lat, np.zeros(lat.shape))
    v = solve_hjb(costs, dummy, sigma, lat, h, n, control=control)
    x = lat.axis_coords(0)
    reach = n * (h * control.a_max + sigma * np.sqrt(h)) + lat.rho
    interior = (x >= -2.0 + reach) & (x <= 2.0 - reach)
    worst = 0.0
    for k in range(n + 1):
        expected = c * x - (n - k) * h * c**2 / 2
        worst = max(worst, float(np.max(np.abs(v.values[k][interior] - expected[interior]))))
    report(7, "HJB affine closed form", worst <= 1e-10,
           f"max interior defect = {worst:.2e} over {int(interior.sum())} nodes x {n + 1} steps")


def _bump_testfn(radius: float) -> TestFunction:
    r2 = radius**2

    def s_plus(x):
        return np.maximum(1.0 - np.sum(x**2, axis=1) / r2, 0.0)

    return TestFunction(
        value=lambda x: s_plus(x) ** 4,
        gradient=lambda x: (4 * s_plus(x) ** 3 * (-2.0 / r2))[:, None] * x,
        hessian=lambda x: (12 * s_plus(x) ** 2)[:, None, None]
        * (4.0 / r2**2) * (x[:, :, None] * x[:, None, :])
        + (4 * s_plus(x) ** 3 * (-2.0 / r2))[:, None, None]
        * np.broadcast_to(np.eye(x.shape[1]), (x.shape[0], x.shape[1], x.shape[1])),
    )


def test_c08_weak_residual_convergence():
    field = oscillator_coefficients(OSC)
    phi = _bump_testfn(3.0)
    residuals = []
    for rho, h in [(0.2, 0.1), (0.1, 0.05), (0.05, 0.025)]:  # rho^2/h = 2 rho -> 0
        lat = Lattice(rho, (-4, -4), (4, 4), Boundary.TRUNCATE)
        m0 = dirac_measure(lat, OSC.x0)
        path = _track(propagate(m0, field, int(round(2.0 / h)), h))
        residuals.append(weak_residual(path, field, phi, 2.0))
    ok = residuals[0] > residuals[1] > residuals[2]
    report(8, "weak-residual decrease down the ladder", ok,
           f"residuals={['%.4f' % r for r in residuals]}")


def test_c09_mfg_fictitious_play():
    t0 = time.perf_counter()
    lat, m0, costs, mollifier, control = crowd_setup()
    # solver tolerance tighter than the acceptance gap so the fixed-point
    # defect of the returned iterate lands within the criterion budget
    config = FictitiousPlayConfig(mollifier=mollifier, control=control,
                                  tol=0.001, max_iters=200)
    path, _, rep = solve_fictitious_play(m0, costs, CROWD_SIGMA, CROWD_STEPS,
                                         CROWD_H, config)
    _track(path)
    residual = equilibrium_residual(path, costs, CROWD_SIGMA, mollifier, control)
    pad = 0.1 * lat.rho
    dilated = tuple(((lo[0] - pad,), (hi[0] + pad,)) for lo, hi in CROWD_REGIONS)
    mass_start = mass_in_region(path[0], dilated)
    mass_end = mass_in_region(path[CROWD_STEPS], dilated)
    ok = (
        rep.converged
        and rep.final_gap < 0.01
        and rep.iterations <= 200
        and rep.max_mass_error <= 1e-10
        and residual <= 0.03
        and mass_end > mass_start
    )
    report(
        9, "MFG fictitious play (reduced scale)", ok,
        f"gap={rep.final_gap:.4f} iters={rep.iterations} "
        f"mass_err={rep.max_mass_error:.1e} residual={residual:.4f} "
        f"meeting mass {mass_start:.4f}->{mass_end:.4f}, {time.perf_counter() - t0:.0f}s",
    )


def test_c10_hughes_explicit_marching():
    t0 = time.perf_counter()
    lat, m0, costs, mollifier, control = crowd_setup()
    drift = hughes_drift_field(costs, CROWD_SIGMA, lat, CROWD_H, CROWD_STEPS,
                               mollifier, control)
    path = _track(solve_explicit(m0, drift, CROWD_STEPS, CROWD_H))
    mass_err = max(abs(m.mass - 1.0) for m in path.slices)
    mass_start = mass_in_region(path[0], CROWD_REGIONS)
    mass_end = mass_in_region(path[CROWD_STEPS], CROWD_REGIONS)
    ok = mass_err <= 1e-10 and mass_end > mass_start
    report(10, "Hughes explicit marching (reduced scale)", ok,
           f"mass_err={mass_err:.1e} meeting mass {mass_start:.4f}->{mass_end:.4f}, "
           f"{time.perf_counter() - t0:.0f}s")


def test_c11_lotka_volterra_substeps():
    lat = Lattice(0.06, (-1.5, -1.5), (1.5, 1.5), Boundary.REFLECT)
    center = np.array([0.4, 0.4])
    m0 = density_measure(lat, lambda p: np.exp(-np.sum((p - center) ** 2, axis=1) / 0.05))
    params = LotkaVolterraParams(lam=0.05, gamma=0.05, substeps=1)
    h = 0.48
    sub = _track(propagate(m0, lotka_volterra_coefficients(params, lat), 6, h))
    plain_field = CoefficientField(
        drift=lotka_volterra_drift(params), diffusion_columns=None, r=0, causal=True
    )
    plain = _track(propagate(m0, plain_field, 6, h))
    bitwise = all(
        np.array_equal(a.weights, b.weights) for a, b in zip(sub.slices, plain.slices)
    )
    eq_params = LotkaVolterraParams(lam=0.0, gamma=0.05)
    eq = lotka_volterra_equilibrium(eq_params)
    drift_eq = float(np.max(np.abs(
        lotka_volterra_drift(eq_params)(None, eq[None, :], 0.7)
    )))
    ok = bitwise and drift_eq <= 1e-14
    report(11, "Lotka-Volterra substep equivalence", ok,
           f"P=1 bitwise={bitwise}, |b(equilibrium)|={drift_eq:.1e}")


def test_c12_monte_carlo_cross_check():
    t0 = time.perf_counter()
    rho, h, t_final = 0.05, 0.05, 1.0
    mean0, sd0, sigma = 0.5, 0.5, 0.5
    lat = Lattice(rho, [-4.0], [4.0], Boundary.REFLECT)
    m0 = density_measure(lat, lambda p: np.exp(-(p[:, 0] - mean0) ** 2 / (2 * sd0**2)))
    field = constant_field(1, sigma_columns=np.array([[sigma]]), drift_matrix=[[-1.0]])
    n = int(round(t_final / h))
    path = _track(propagate(m0, field, n, h))

    # Euler-Maruyama oracle: 1e6 Gaussian-increment paths, same h, reflected
    rng = np.random.default_rng(2024)
    m_paths = 1_000_000
    span = float(lat.hi[0] - lat.lo[0])

    def fold(y):
        y = np.mod(y - lat.lo[0], 2 * span)
        return lat.lo[0] + np.where(y > span, 2 * span - y, y)

    x = fold(rng.normal(mean0, sd0, size=m_paths))
    for _ in range(n):
        x = fold(x + h * (-x) + sigma * np.sqrt(h) * rng.standard_normal(m_paths))
    edges = np.concatenate([lat.axis_coords(0) - rho / 2, [lat.hi[0] + rho / 2]])
    counts, _ = np.histogram(x, bins=edges)
    mc = GridMeasure(lat, counts / m_paths)
    w1 = wasserstein1(path[n], mc)
    report(12, "Euler-Maruyama Monte-Carlo cross-check", w1 <= 3 * rho,
           f"W1={w1:.4f} <= 3 rho = {3 * rho:.2f}, {time.perf_counter() - t0:.0f}s")
