"""Experiment driver: config parsing, the four model runs, CSV outputs.

Configs are flat INI files with one section per concern::

    [run]      experiment = oscillator | lotka_volterra | mfg | hughes | custom_linear
    [lattice]  rho, lo, hi, boundary
    [time]     T, h
    [init]     kind = dirac | gaussian | uniform (+ point / center / width)
    [model]    experiment-specific parameters
    [output]   stride, avg_window
    [study]    ladder = rho:h rho:h ...

Commands: ``fpk-sl run <config>``, ``fpk-sl study <config>``,
``fpk-sl validate <config>``.  Exit codes: 0 success, 1 config error,
2 solver error.  ``FPK_SL_OUTPUT_ROOT`` prepends a root to relative output
directories.  Re-running a config reproduces all CSVs byte-identically.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import coupling, fpk, hjb, models
from .lattice import Boundary, Lattice
from .measure import (
    DensityInit,
    DiracInit,
    GridMeasure,
    MeasurePath,
    density_measure,
    dirac_measure,
    project_initial,
)


class ConfigError(Exception):
    """Invalid or missing configuration; exits with status 1."""


EXPERIMENTS = ("oscillator", "lotka_volterra", "mfg", "hughes", "custom_linear")


# -- config --------------------------------------------------------------------


@dataclass
class RunConfig:
    experiment: str
    rho: float
    lo: tuple
    hi: tuple
    boundary: Boundary
    T: float
    h: float
    n_steps: int
    output_dir: Path
    stride: int
    init: dict
    model: dict
    avg_window: tuple | None = None
    ladder: list[tuple[float, float]] = field(default_factory=list)
    resolved: dict = field(default_factory=dict)


def _get(cp: configparser.ConfigParser, section: str, key: str, default=None, required=False):
    if cp.has_option(section, key):
        return cp.get(section, key)
    if required:
        raise ConfigError(f"missing required key [{section}] {key}")
    return default


def _floats(text: str, key: str) -> tuple:
    try:
        return tuple(float(tok) for tok in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"cannot parse numbers for {key}: {text!r}") from exc


def load_config(path) -> RunConfig:
    """Parse and validate a config file; every resolved value (including
    defaults) is recorded for the run manifest."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    experiment = _get(cp, "run", "experiment", required=True).strip().lower()
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r} (choose from {EXPERIMENTS})")

    try:
        rho = float(_get(cp, "lattice", "rho", required=True))
    except ValueError as exc:
        raise ConfigError(f"bad [lattice] rho: {exc}") from exc
    lo = _floats(_get(cp, "lattice", "lo", required=True), "[lattice] lo")
    hi = _floats(_get(cp, "lattice", "hi", required=True), "[lattice] hi")
    if len(lo) != len(hi):
        raise ConfigError("[lattice] lo and hi must have the same dimension")
    bnd_text = _get(cp, "lattice", "boundary", default="truncate").strip().lower()
    try:
        boundary = Boundary(bnd_text)
    except ValueError as exc:
        raise ConfigError(f"bad [lattice] boundary {bnd_text!r}") from exc

    try:
        t_final = float(_get(cp, "time", "T", required=True))
        h = float(_get(cp, "time", "h", required=True))
    except ValueError as exc:
        raise ConfigError(f"bad [time] value: {exc}") from exc
    if t_final <= 0 or h <= 0:
        raise ConfigError("[time] T and h must be positive")
    n_steps = int(round(t_final / h))
    if abs(t_final / h - n_steps) > 1e-9 * max(1, n_steps) or n_steps < 1:
        raise ConfigError(f"T/h = {t_final / h} is not a positive integer")

    init = dict(cp.items("init")) if cp.has_section("init") else {}
    model = dict(cp.items("model")) if cp.has_section("model") else {}

    output_dir = Path(_get(cp, "run", "output_dir", default=f"runs/{experiment}"))
    root = os.environ.get("FPK_SL_OUTPUT_ROOT")
    if root and not output_dir.is_absolute():
        output_dir = Path(root) / output_dir

    stride_text = _get(cp, "output", "stride", default=None)
    stride = int(stride_text) if stride_text is not None else max(1, n_steps // 50)
    if stride < 1:
        raise ConfigError("[output] stride must be >= 1")
    window_text = _get(cp, "output", "avg_window", default=None)
    avg_window = _floats(window_text, "[output] avg_window") if window_text else None

    ladder = []
    ladder_text = _get(cp, "study", "ladder", default=None)
    if ladder_text:
        for tok in ladder_text.replace(",", " ").split():
            try:
                r_text, h_text = tok.split(":")
                ladder.append((float(r_text), float(h_text)))
            except ValueError as exc:
                raise ConfigError(f"bad ladder entry {tok!r}; expected rho:h") from exc

    cfg = RunConfig(
        experiment=experiment, rho=rho, lo=lo, hi=hi, boundary=boundary,
        T=t_final, h=h, n_steps=n_steps, output_dir=output_dir, stride=stride,
        init=init, model=model, avg_window=avg_window, ladder=ladder,
    )
    cfg.resolved = {
        "run": {"experiment": experiment, "output_dir": str(output_dir)},
        "lattice": {
            "rho": repr(rho),
            "lo": " ".join(repr(v) for v in lo),
            "hi": " ".join(repr(v) for v in hi),
            "boundary": boundary.value,
        },
        "time": {"T": repr(t_final), "h": repr(h), "n_steps": str(n_steps)},
        "init": dict(init),
        "model": dict(model),
        "output": {
            "stride": str(stride),
            "avg_window": " ".join(repr(v) for v in avg_window) if avg_window else "",
        },
        "study": {"ladder": ladder_text or ""},
    }
    _validate_model(cfg)
    return cfg


def _model_float(cfg: RunConfig, key: str, default=None) -> float:
    if key in cfg.model:
        try:
            return float(cfg.model[key])
        except ValueError as exc:
            raise ConfigError(f"bad [model] {key}: {cfg.model[key]!r}") from exc
    if default is None:
        raise ConfigError(f"missing required key [model] {key}")
    return float(default)


def _parse_regions(text: str, d: int) -> tuple:
    """Regions like ``-2.5:-2 1:1.5`` (1D) or ``a b:c d ...`` (boxes)."""
    regions = []
    for tok in text.split():
        try:
            lo_text, hi_text = tok.split(":")
            lo = tuple(float(v) for v in lo_text.split(","))
            hi = tuple(float(v) for v in hi_text.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad region {tok!r}; expected lo:hi") from exc
        if len(lo) != d or len(hi) != d:
            raise ConfigError(f"region {tok!r} does not match dimension {d}")
        regions.append((lo, hi))
    if not regions:
        raise ConfigError("[model] regions is empty")
    return tuple(regions)


def _validate_model(cfg: RunConfig) -> None:
    d = len(cfg.lo)
    if cfg.experiment == "oscillator":
        if d != 2:
            raise ConfigError("the oscillator model is two-dimensional")
        gamma = _model_float(cfg, "gamma", 2.1)
        if gamma <= 2.0:
            raise ConfigError("[model] gamma must exceed 2")
        _model_float(cfg, "sigma", 0.8)
    elif cfg.experiment == "lotka_volterra":
        if d != 2:
            raise ConfigError("the Lotka-Volterra model is two-dimensional")
        if cfg.boundary is not Boundary.REFLECT:
            raise ConfigError("the Lotka-Volterra run needs boundary = reflect")
        _model_float(cfg, "lam", 0.05)
        _model_float(cfg, "gamma", 0.05)
        substeps = int(_model_float(cfg, "substeps", 16))
        if substeps < 1:
            raise ConfigError("[model] substeps must be >= 1")
    elif cfg.experiment in ("mfg", "hughes"):
        if cfg.boundary is not Boundary.REFLECT:
            raise ConfigError(f"the {cfg.experiment} run needs boundary = reflect")
        _model_float(cfg, "sigma", None)
        _model_float(cfg, "delta", None)
        epsilon = _model_float(cfg, "epsilon", None)
        if epsilon < cfg.rho:
            raise ConfigError("[model] epsilon must be >= rho")
        _parse_regions(cfg.model.get("regions", "-2.5:-2 1:1.5"), d)
    elif cfg.experiment == "custom_linear":
        pass


# -- building blocks -----------------------------------------------------------


def _lattice(cfg: RunConfig, rho: float | None = None) -> Lattice:
    try:
        return Lattice(rho or cfg.rho, cfg.lo, cfg.hi, cfg.boundary)
    except ValueError as exc:
        raise ConfigError(f"bad lattice: {exc}") from exc


def _initial_measure(cfg: RunConfig, lattice: Lattice) -> GridMeasure:
    kind = cfg.init.get("kind", "").strip().lower()
    if cfg.experiment == "oscillator" and not kind:
        x0 = _floats(cfg.model.get("x0", "1 1"), "[model] x0")
        return project_initial(lattice, DiracInit(x0))
    if not kind or kind == "gaussian":
        center = np.asarray(
            _floats(cfg.init.get("center", " ".join(["0.4"] * lattice.d)), "[init] center")
        )
        width = float(cfg.init.get("width", 0.05))

        def gaussian(pts):
            return np.exp(-np.sum((pts - center) ** 2, axis=1) / width)

        return project_initial(lattice, DensityInit(gaussian))
    if kind == "dirac":
        return project_initial(lattice, DiracInit(_floats(cfg.init["point"], "[init] point")))
    if kind == "uniform":
        return project_initial(lattice, DensityInit(lambda pts: np.ones(len(pts))))
    raise ConfigError(f"unknown [init] kind {kind!r}")


def mass_in_region(m: GridMeasure, regions) -> float:
    """Total weight of nodes inside a union of closed boxes."""
    nodes = m.lattice.nodes()
    mask = np.zeros(len(nodes), dtype=bool)
    for lo, hi in regions:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        mask |= np.all((nodes >= lo) & (nodes <= hi), axis=1)
    return float(m.flat()[mask].sum())


def error_metric(numeric: GridMeasure, exact_density: np.ndarray, k_per_axis: int) -> float:
    """Discrete L2 density error ``sqrt(sum_i (dens_i - exact_i)^2 / K^2)``
    with ``K`` the per-axis node count (an RMS over a square grid)."""
    diff = numeric.density() - np.asarray(exact_density, dtype=float).reshape(numeric.lattice.shape)
    return float(np.sqrt(np.sum(diff**2) / k_per_axis**2))


@dataclass
class ErrorTable:
    """Rows of (rho, h, error, observed rate)."""

    rows: list[tuple[float, float, float, float | None]] = field(default_factory=list)

    def add(self, rho: float, h: float, err: float) -> None:
        rate = None
        if self.rows:
            prev_rho, _, prev_err, _ = self.rows[-1]
            if not rho < prev_rho:
                raise ValueError("study ladder must have strictly decreasing rho")
            rate = float(np.log(prev_err / err) / np.log(prev_rho / rho))
        self.rows.append((rho, h, err, rate))


# -- output writers -------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_manifest(cfg: RunConfig, out: Path) -> None:
    cp = configparser.ConfigParser()
    for section, entries in cfg.resolved.items():
        cp[section] = {k: str(v) for k, v in entries.items()}
    with open(out / "manifest.ini", "w") as fh:
        cp.write(fh)


def _write_snapshots(path: MeasurePath, stride: int, out: Path) -> None:
    """Measure CSV: ``k,t,i0[,i1],x0[,x1],weight,density``; active nodes only."""
    lat = path.lattice
    d = lat.d
    cols = (
        ["k", "t"]
        + [f"i{a}" for a in range(d)]
        + [f"x{a}" for a in range(d)]
        + ["weight", "density"]
    )
    nodes = lat.nodes()
    vol = lat.rho**d
    dumped = sorted(set(range(0, path.n_steps + 1, stride)) | {path.n_steps})
    with open(out / "snapshots.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for k in dumped:
            w = path[k].flat()
            active = np.nonzero(w > 0)[0]
            t = k * path.h
            for lin in active:
                idx = np.unravel_index(lin, lat.shape)
                fields = [str(k), _fmt(t)]
                fields += [str(int(i)) for i in idx]
                fields += [_fmt(c) for c in nodes[lin]]
                fields += [_fmt(w[lin]), _fmt(w[lin] / vol)]
                fh.write(",".join(fields) + "\n")


def _write_error_table(table: ErrorTable, out: Path) -> None:
    with open(out / "error_table.csv", "w") as fh:
        fh.write("rho,h,error,rate\n")
        for rho, h, err, rate in table.rows:
            fh.write(f"{_fmt(rho)},{_fmt(h)},{_fmt(err)},{'' if rate is None else _fmt(rate)}\n")


def _write_mass_series(path: MeasurePath, regions, out: Path) -> None:
    with open(out / "mass_in_region.csv", "w") as fh:
        fh.write("k,t,mass\n")
        for k in range(path.n_steps + 1):
            fh.write(f"{k},{_fmt(k * path.h)},{_fmt(mass_in_region(path[k], regions))}\n")


def _write_coupling_report(report: coupling.CouplingReport, out: Path) -> None:
    with open(out / "coupling.csv", "w") as fh:
        fh.write("iteration,gap,wall_time\n")
        for i, (gap, elapsed) in enumerate(
            zip(report.gap_history, report.iteration_times), start=1
        ):
            fh.write(f"{i},{_fmt(gap)},{_fmt(elapsed)}\n")


def _write_density_grid(lattice: Lattice, dens: np.ndarray, name: str, out: Path) -> None:
    d = lattice.d
    nodes = lattice.nodes()
    flat = np.asarray(dens).reshape(-1)
    cols = [f"i{a}" for a in range(d)] + [f"x{a}" for a in range(d)] + ["density"]
    with open(out / name, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for lin in range(len(flat)):
            idx = np.unravel_index(lin, lattice.shape)
            fields = [str(int(i)) for i in idx]
            fields += [_fmt(c) for c in nodes[lin]]
            fields.append(_fmt(flat[lin]))
            fh.write(",".join(fields) + "\n")


# -- experiments -----------------------------------------------------------------


def _oscillator_params(cfg: RunConfig) -> models.OscillatorParams:
    return models.OscillatorParams(
        gamma=_model_float(cfg, "gamma", 2.1),
        sigma=_model_float(cfg, "sigma", 0.8),
        x0=_floats(cfg.model.get("x0", "1 1"), "[model] x0"),
    )


def _run_oscillator(cfg: RunConfig, out: Path, rho: float | None = None,
                    h: float | None = None) -> float:
    lattice = _lattice(cfg, rho)
    params = _oscillator_params(cfg)
    m0 = dirac_measure(lattice, params.x0)
    h_run = h or cfg.h
    n_steps = int(round(cfg.T / h_run))
    path = fpk.propagate(m0, models.oscillator_coefficients(params), n_steps, h_run)
    exact = models.oscillator_density_on_lattice(params, lattice, cfg.T)
    err = error_metric(path[n_steps], exact, lattice.shape[0])
    if out is not None:
        _write_snapshots(path, cfg.stride, out)
        table = ErrorTable()
        table.add(lattice.rho, h_run, err)
        _write_error_table(table, out)
    return err


def _run_lotka_volterra(cfg: RunConfig, out: Path) -> MeasurePath:
    lattice = _lattice(cfg)
    params = models.LotkaVolterraParams(
        lam=_model_float(cfg, "lam", 0.05),
        gamma=_model_float(cfg, "gamma", 0.05),
        substeps=int(_model_float(cfg, "substeps", 16)),
    )
    m0 = _initial_measure(cfg, lattice)
    path = fpk.propagate(m0, models.lotka_volterra_coefficients(params, lattice),
                         cfg.n_steps, cfg.h)
    window = cfg.avg_window or (2.0 * cfg.T / 3.0, cfg.T)
    avg = models.time_averaged_density(path, window)
    _write_snapshots(path, cfg.stride, out)
    _write_density_grid(lattice, avg, "time_avg_density.csv", out)
    return path


def _crowd_setup(cfg: RunConfig):
    lattice = _lattice(cfg)
    d = lattice.d
    regions = _parse_regions(cfg.model.get("regions", "-2.5:-2 1:1.5"), d)
    params = models.MeetingCostParams(
        meeting_set=regions,
        delta=_model_float(cfg, "delta", None),
        domain=(cfg.lo, cfg.hi),
    )
    costs = models.meeting_costs(params)
    sigma = _model_float(cfg, "sigma", None)
    mollifier = fpk.MollifierSpec(epsilon=_model_float(cfg, "epsilon", None))
    control = hjb.ControlGrid(
        a_max=_model_float(cfg, "a_max", 2.0),
        points_per_axis=int(_model_float(cfg, "control_points", 21)),
    )
    m0 = _initial_measure(cfg, lattice)
    return lattice, regions, costs, sigma, mollifier, control, m0


def _run_mfg(cfg: RunConfig, out: Path):
    lattice, regions, costs, sigma, mollifier, control, m0 = _crowd_setup(cfg)
    fp_config = coupling.FictitiousPlayConfig(
        mollifier=mollifier,
        control=control,
        tol=_model_float(cfg, "tol", 0.01),
        max_iters=int(_model_float(cfg, "max_iters", 200)),
    )
    path, _, report = coupling.solve_fictitious_play(
        m0, costs, sigma, cfg.n_steps, cfg.h, fp_config
    )
    _write_snapshots(path, cfg.stride, out)
    _write_coupling_report(report, out)
    _write_mass_series(path, regions, out)
    return path, report


def _run_hughes(cfg: RunConfig, out: Path) -> MeasurePath:
    lattice, regions, costs, sigma, mollifier, control, m0 = _crowd_setup(cfg)
    drift = coupling.hughes_drift_field(
        costs, sigma, lattice, cfg.h, cfg.n_steps, mollifier, control
    )
    path = coupling.solve_explicit(m0, drift, cfg.n_steps, cfg.h)
    _write_snapshots(path, cfg.stride, out)
    _write_mass_series(path, regions, out)
    return path


def _run_custom_linear(cfg: RunConfig, out: Path) -> MeasurePath:
    lattice = _lattice(cfg)
    d = lattice.d
    b0 = _floats(cfg.model.get("b0", " ".join(["0"] * d)), "[model] b0")
    matrix_text = cfg.model.get("drift_matrix")
    drift_matrix = None
    if matrix_text:
        flat = _floats(matrix_text, "[model] drift_matrix")
        if len(flat) != d * d:
            raise ConfigError(f"[model] drift_matrix needs {d * d} entries")
        drift_matrix = np.asarray(flat).reshape(d, d)
    sigma = _model_float(cfg, "sigma", 0.0)
    cols = sigma * np.eye(d) if sigma > 0 else None
    field_ = fpk.constant_field(d, b=b0, sigma_columns=cols, drift_matrix=drift_matrix)
    m0 = _initial_measure(cfg, lattice)
    path = fpk.propagate(m0, field_, cfg.n_steps, cfg.h)
    _write_snapshots(path, cfg.stride, out)
    return path


def run(cfg: RunConfig) -> Path:
    """Execute one configured run; returns the output directory."""
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(cfg, out)
    if cfg.experiment == "oscillator":
        _run_oscillator(cfg, out)
    elif cfg.experiment == "lotka_volterra":
        _run_lotka_volterra(cfg, out)
    elif cfg.experiment == "mfg":
        _run_mfg(cfg, out)
    elif cfg.experiment == "hughes":
        _run_hughes(cfg, out)
    else:
        _run_custom_linear(cfg, out)
    return out


def convergence_study(cfg: RunConfig) -> ErrorTable:
    """Run the (rho, h) ladder and tabulate errors and observed rates."""
    if cfg.experiment != "oscillator":
        raise ConfigError("convergence studies require the oscillator experiment "
                          "(the one model with an exact solution)")
    if len(cfg.ladder) < 2:
        raise ConfigError("[study] ladder needs at least two rho:h entries")
    table = ErrorTable()
    for rho, h in cfg.ladder:
        n = int(round(cfg.T / h))
        if abs(cfg.T / h - n) > 1e-9 * max(1, n):
            raise ConfigError(f"ladder step h={h} does not divide T={cfg.T}")
        err = _run_oscillator(cfg, None, rho=rho, h=h)
        try:
            table.add(rho, h, err)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(cfg, out)
    _write_error_table(table, out)
    return table


# -- entry point ------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fpk-sl",
        description="Semi-Lagrangian Fokker-Planck-Kolmogorov experiment driver",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("run", "execute a configured experiment"),
        ("study", "run a (rho, h) convergence ladder"),
        ("validate", "parse and validate a config file"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("config", help="path to the INI config file")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    if args.command == "validate":
        print(f"ok: {cfg.experiment} run, grid {cfg.rho} on {cfg.lo}..{cfg.hi}, "
              f"{cfg.n_steps} steps of h={cfg.h}")
        return 0
    try:
        if args.command == "run":
            out = run(cfg)
            print(f"wrote {out}")
        else:
            table = convergence_study(cfg)
            for rho, h, err, rate in table.rows:
                rate_text = "--" if rate is None else f"{rate:.2f}"
                print(f"rho={rho:g} h={h:g} error={err:.3e} rate={rate_text}")
            print(f"wrote {cfg.output_dir}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # solver failures exit 2 with the propagated message
        print(f"solver error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
