"""Numerical laboratory for the L2 curvature flow on symmetric metric classes.

Subpackages by theme: geometry (warped-product metrics and reduced
curvature), products (exact homogeneous ODE reductions), flow (the discrete
Riesz-gradient flow engine), spectral (first eigenvalue and the backward
biharmonic flow), diagnostics (comparison-geometry monitors), cli (the
config-driven command line).
"""

from .errors import (
    BoundaryViolation,
    ConvergenceFailure,
    DegenerateFiber,
    GridError,
    L2FlowError,
    MissingVelocity,
    NonPositiveDensity,
    ParseError,
    PastSingularTime,
    ShapeMismatch,
    SingularMass,
    StepSizeUnderflow,
    StepUnderflow,
    UnsupportedState,
    ValidationError,
    ZeroFunction,
)
from .products import (
    Curvature,
    Factor,
    OdeTrajectory,
    ProductState,
    Termination,
    analytic_sphere,
    collapse_scalar,
    conserved_ratio,
    integrate,
    product_invariants,
    product_rhs,
    riem_sq_unit_sphere,
    round_sphere,
    sphere_circle,
    sphere_lifespan,
    sphere_rate_coefficient,
    write_trajectory_csv,
)
from .geometry import (
    CurvatureProfile,
    FiberSpec,
    NoncollapseReport,
    ROUND_S2_FIBER,
    Topology,
    WarpedMetric,
    arclength,
    curvature_profile,
    diam_interval,
    energy,
    energy_density,
    from_profile,
    noncollapse_quantities,
    quad_weights,
    read_snapshot,
    resample_arclength,
    scaled,
    volume,
    write_snapshot,
)
from .flow import (
    FLOW_CSV_FIELDS,
    FlowConfig,
    FlowSample,
    FlowTrajectory,
    ResidualReport,
    TangentField,
    Termination as FlowTermination,
    flow_energy,
    flow_volume,
    grad_energy,
    l2_inner,
    monitor_residuals,
    run,
    step,
    velocity,
    write_flow_csv,
)
from .diagnostics import (
    DiagnosticsRecord,
    cheeger_witness,
    kpw,
    lateral_isoperimetric,
    record,
    records_to_csv,
    write_records_csv,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
