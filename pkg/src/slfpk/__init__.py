"""Mass-conservative Semi-Lagrangian solvers for FPK equations on lattices."""

from .coupling import (
    CouplingReport,
    FictitiousPlayConfig,
    equilibrium_residual,
    hughes_drift_field,
    solve_explicit,
    solve_fictitious_play,
)
from .fpk import (
    CoefficientField,
    MollifierSpec,
    SolverError,
    TestFunction,
    TransitionRow,
    characteristics,
    constant_field,
    generator_apply,
    mollify_coefficients,
    propagate,
    step,
    transition_row,
    weak_residual,
)
from .hjb import (
    ControlGrid,
    CostPair,
    ValueGrid,
    gradient_field,
    mollify_value,
    solve_hjb,
)
from .lattice import Boundary, Lattice
from .measure import (
    DensityInit,
    DiracInit,
    GridMeasure,
    MeasurePath,
    TableInit,
    density_measure,
    dirac_measure,
    eval_at_time,
    moment2,
    project_initial,
    sup_norm_diff,
    wasserstein1,
    wasserstein2,
)

__version__ = "0.1.0"
