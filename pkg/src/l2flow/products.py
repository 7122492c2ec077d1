"""Homogeneous product reductions of the quadratic-curvature flow.

Products of round spheres and flat factors evolve by rescaling each block,
so the flow reduces to an ODE system for the per-factor scales. Everything
here is exact enough to serve as an oracle layer: curvature constants come
from a brute-force orthonormal-frame contraction, sphere trajectories have
closed forms, and two-factor systems carry a conserved scale ratio.

Conventions. A factor of dimension m and scale A carries the metric
A * (unit metric), so lengths scale like sqrt(A). The squared curvature
norm used here is the full tensor norm: a unit round m-sphere contributes
c_m = 2m(m-1) and a scaled one c_m / A^2. The flow direction is

    dg/dt = 2 * Rcheck - (1/2) |Rm|^2 g          ("GradientDerived")

evaluated blockwise, where Rcheck is the quadratic curvature contraction
R_iabc R_jabc. The alternative "PaperLiteral" mode uses displayed
coefficients that are exactly half of these rates; it exists only for the
configurations where such displays exist (single round spheres and the
S^5 x S^1 system) and raises UnsupportedState elsewhere.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (
    PastSingularTime,
    ShapeMismatch,
    StepSizeUnderflow,
    UnsupportedState,
    ValidationError,
)

__all__ = [
    "Curvature",
    "Factor",
    "ProductState",
    "Termination",
    "OdeTrajectory",
    "RhsReport",
    "riem_sq_unit_sphere",
    "product_invariants",
    "product_rhs",
    "analytic_sphere",
    "sphere_rate_coefficient",
    "sphere_lifespan",
    "integrate",
    "conserved_ratio",
    "collapse_scalar",
    "write_trajectory_csv",
    "round_sphere",
    "sphere_circle",
]

MODES = ("GradientDerived", "PaperLiteral")

SCALE_FLOOR_DEFAULT = 1e-8
RIEM_CEILING_DEFAULT = 1e12
RTOL_DEFAULT = 1e-10


class Curvature(enum.Enum):
    SPHERE = 1
    FLAT = 0


@dataclass(frozen=True)
class Factor:
    """One block of a product metric: dim, curvature type, and scale A > 0."""

    dim: int
    curv: Curvature
    scale: float

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError(f"factor dimension must be >= 1, got {self.dim}")
        if self.curv is Curvature.SPHERE and self.dim < 2:
            raise ValidationError("a 1-sphere is flat; use Curvature.FLAT")
        if not self.scale > 0:
            raise ValidationError(f"factor scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class ProductState:
    """An ordered product of factors at a moment in time."""

    factors: tuple[Factor, ...]
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if self.n < 2:
            raise ValidationError("total dimension must be at least 2")

    @property
    def n(self) -> int:
        return sum(f.dim for f in self.factors)

    @property
    def scales(self) -> np.ndarray:
        return np.array([f.scale for f in self.factors])

    def with_scales(self, scales, t: float) -> "ProductState":
        factors = tuple(
            Factor(f.dim, f.curv, float(a)) for f, a in zip(self.factors, scales)
        )
        return ProductState(factors, t)


def round_sphere(n: int, scale: float = 1.0) -> ProductState:
    """Single round-sphere state S^n with metric scale * unit."""
    return ProductState((Factor(n, Curvature.SPHERE, scale),))


def sphere_circle(m: int, a0: float, b0: float, flat_dim: int = 1) -> ProductState:
    """S^m(A) x flat(B) two-factor state."""
    return ProductState(
        (Factor(m, Curvature.SPHERE, a0), Factor(flat_dim, Curvature.FLAT, b0))
    )


# ---------------------------------------------------------------------------
# curvature constants from first principles
# ---------------------------------------------------------------------------


def riem_sq_unit_sphere(m: int) -> float:
    """|Rm|^2 of the unit round m-sphere by brute-force frame contraction.

    Builds R_ijkl = d_ik d_jl - d_il d_jk in an orthonormal frame and
    contracts. Equals 2m(m-1); computed rather than assumed so every
    downstream constant has an independent origin.
    """
    eye = np.eye(m)
    riem = np.einsum("ik,jl->ijkl", eye, eye) - np.einsum("il,jk->ijkl", eye, eye)
    return float(np.einsum("ijkl,ijkl->", riem, riem))


def _check_r_unit_sphere(m: int) -> float:
    """Coefficient of R_iabc R_jabc against the identity on the unit m-sphere."""
    eye = np.eye(m)
    riem = np.einsum("ik,jl->ijkl", eye, eye) - np.einsum("il,jk->ijkl", eye, eye)
    rcheck = np.einsum("iabc,jabc->ij", riem, riem)
    coeff = rcheck[0, 0]
    if not np.allclose(rcheck, coeff * eye):
        raise AssertionError("quadratic curvature contraction is not isotropic")
    return float(coeff)


class _FactorConstants:
    """Cache of (c_m, Rcheck coefficient) per sphere dimension."""

    def __init__(self):
        self._cache: dict[int, tuple[float, float]] = {}

    def __call__(self, m: int) -> tuple[float, float]:
        if m not in self._cache:
            self._cache[m] = (riem_sq_unit_sphere(m), _check_r_unit_sphere(m))
        return self._cache[m]


_constants = _FactorConstants()


class ProductInvariants(tuple):
    """(riem_sq, check_r per factor, total dimension)."""

    __slots__ = ()

    def __new__(cls, riem_sq: float, check_r: tuple[float, ...], n: int):
        return super().__new__(cls, (riem_sq, check_r, n))

    @property
    def riem_sq(self) -> float:
        return self[0]

    @property
    def check_r(self) -> tuple[float, ...]:
        return self[1]

    @property
    def n(self) -> int:
        return self[2]


def product_invariants(s: ProductState) -> ProductInvariants:
    """Total |Rm|^2, per-factor quadratic-contraction coefficients, dimension.

    A sphere factor of dim m and scale A contributes c_m/A^2 to |Rm|^2 and
    carries Rcheck = (c_m/m)/A times its unit metric; flat factors
    contribute nothing.
    """
    riem_sq = 0.0
    check_r = []
    for f in s.factors:
        if f.curv is Curvature.SPHERE:
            c_m, rc_unit = _constants(f.dim)
            riem_sq += c_m / f.scale**2
            # rc_unit/A^2 in frame components = (c_m/m)/A against the unit metric
            check_r.append(rc_unit / f.scale)
        else:
            check_r.append(0.0)
    return ProductInvariants(riem_sq, tuple(check_r), s.n)


class RhsReport(tuple):
    """(per-factor dA/dt, proportionality of GradientDerived to PaperLiteral)."""

    __slots__ = ()

    def __new__(cls, rates: np.ndarray, mode_factor: float | None):
        return super().__new__(cls, (rates, mode_factor))

    @property
    def rates(self) -> np.ndarray:
        return self[0]

    @property
    def mode_factor(self) -> float | None:
        return self[1]


def _is_round_sphere(s: ProductState) -> bool:
    return len(s.factors) == 1 and s.factors[0].curv is Curvature.SPHERE


def _is_sphere_times_flat(s: ProductState) -> bool:
    return (
        len(s.factors) == 2
        and s.factors[0].curv is Curvature.SPHERE
        and s.factors[1].curv is Curvature.FLAT
    )


def _literal_supported(s: ProductState) -> bool:
    if _is_round_sphere(s):
        return True
    return _is_sphere_times_flat(s) and s.factors[0].dim == 5 and s.factors[1].dim == 1


def product_rhs(s: ProductState, mode: str = "GradientDerived") -> RhsReport:
    """Per-factor scale rates dA_j/dt for the homogeneous flow.

    GradientDerived evaluates dg/dt = 2 Rcheck - (1/2)|Rm|^2 g blockwise:
    dA_j/dt = 2 (c_m/m)/A_j - (1/2)|Rm|^2 A_j, with no Rcheck term on flat
    factors. PaperLiteral uses the displayed coefficients for single round
    spheres and S^5 x S^1 (exactly half the derived rates) and refuses any
    other configuration. The report carries the proportionality constant
    between the two modes whenever both are defined.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown rhs mode {mode!r}; expected one of {MODES}")
    rates = np.empty(len(s.factors))
    for j, f in enumerate(s.factors):
        # split |Rm|^2 into this block's own term and the rest so that the
        # exact cancellation 2 c_m/m - c_m/2 (zero at m = 4) survives floats
        other = 0.0
        own = 0.0
        for i, fi in enumerate(s.factors):
            if fi.curv is not Curvature.SPHERE:
                continue
            c_i, rc_i = _constants(fi.dim)
            if i == j:
                own = 2.0 * rc_i - 0.5 * c_i
            else:
                other += c_i / fi.scale**2
        rates[j] = own / f.scale - 0.5 * other * f.scale
    literal = _literal_supported(s)
    if mode == "PaperLiteral":
        if not literal:
            raise UnsupportedState(
                "PaperLiteral rates are only displayed for single round spheres "
                "and the S^5 x S^1 system"
            )
        rates *= 0.5
    return RhsReport(rates, 2.0 if literal else None)


def sphere_rate_coefficient(n: int, mode: str = "GradientDerived") -> float:
    """beta in dA/dt = beta/A for the round n-sphere, per mode."""
    if mode not in MODES:
        raise ValidationError(f"unknown rhs mode {mode!r}; expected one of {MODES}")
    if n < 2:
        raise ValidationError(f"round sphere needs dimension >= 2, got {n}")
    c_n, rc_n = _constants(n)
    # c_n (2/n - 1/2) arranged so the table values stay exact integers
    beta = 2.0 * rc_n - 0.5 * c_n
    return beta if mode == "GradientDerived" else 0.5 * beta


def sphere_lifespan(n: int, a0: float, mode: str = "GradientDerived") -> float:
    """Time at which A(t) = sqrt(A0^2 + 2 beta t) hits zero; inf if beta >= 0."""
    beta = sphere_rate_coefficient(n, mode)
    if beta >= 0.0:
        return math.inf
    return a0**2 / (-2.0 * beta)


def analytic_sphere(n: int, a0: float, t, mode: str = "GradientDerived"):
    """Closed-form round-sphere scale A(t) = sqrt(A0^2 + 2 beta t).

    Accepts scalar or array t; raises PastSingularTime at or beyond the
    vanishing time when beta < 0.
    """
    if not a0 > 0:
        raise ValidationError(f"initial scale must be positive, got {a0}")
    beta = sphere_rate_coefficient(n, mode)
    t_arr = np.asarray(t, dtype=float)
    arg = a0**2 + 2.0 * beta * t_arr
    if np.any(arg <= 0.0):
        raise PastSingularTime(
            f"round S^{n} shrinks away at t = {sphere_lifespan(n, a0, mode):.6g}"
        )
    out = np.sqrt(arg)
    return float(out) if np.isscalar(t) else out


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


class Termination(enum.Enum):
    REACHED_END = "ReachedEnd"
    SINGULARITY_DETECTED = "SingularityDetected"


@dataclass(frozen=True)
class OdeTrajectory:
    """Time-ordered samples of a product-scale integration.

    scales has one row per sample and one column per factor; riem_sq is the
    total squared curvature norm per sample. meta records the acceptance
    parameters the integrator ran with.
    """

    template: ProductState
    mode: str
    t: np.ndarray
    scales: np.ndarray
    riem_sq: np.ndarray
    termination: Termination
    t_sing: float | None
    meta: dict = field(default_factory=dict)

    def state_at(self, i: int) -> ProductState:
        return self.template.with_scales(self.scales[i], float(self.t[i]))

    @property
    def n_samples(self) -> int:
        return self.t.size


def integrate(
    s0: ProductState,
    mode: str = "GradientDerived",
    t_end: float = 1.0,
    rtol: float = RTOL_DEFAULT,
    atol: float = 1e-20,
    scale_floor: float = SCALE_FLOOR_DEFAULT,
    riem_ceiling: float = RIEM_CEILING_DEFAULT,
    t_eval=None,
) -> OdeTrajectory:
    """Adaptive Runge-Kutta integration of the product-scale system.

    Stops early with SingularityDetected when any factor scale reaches
    scale_floor or |Rm| reaches riem_ceiling. A step-size underflow next to
    a guard boundary counts as the same singularity (the crossing time can
    sit inside one float spacing of t, where no step can complete); an
    underflow away from the guards raises StepSizeUnderflow.

    Internally the solver advances the squared scales u_j = A_j^2, whose
    rates are 2 A_j dA_j/dt = (4 c/m - c) - u_j * (rest of |Rm|^2); for a
    lone sphere that is a constant, so the affine law for A^2 is integrated
    exactly and the extinction approach is not stiff. rtol and atol apply
    to the squared scales; atol defaults low enough that relative control
    governs all the way down to the scale floor.
    """
    if not t_end > 0:
        raise ValidationError(f"t_end must be positive, got {t_end}")
    if mode == "PaperLiteral" and not _literal_supported(s0):
        raise UnsupportedState(
            "PaperLiteral rates are only displayed for single round spheres "
            "and the S^5 x S^1 system"
        )

    factors = s0.factors
    consts = [
        _constants(f.dim) if f.curv is Curvature.SPHERE else (0.0, 0.0)
        for f in factors
    ]
    own = np.array([4.0 * rc - c for c, rc in consts])
    c_arr = np.array([c for c, _ in consts])
    half = 0.5 if mode == "PaperLiteral" else 1.0
    u_eps = (scale_floor * 1e-3) ** 2

    def riem_sq_of(u):
        return float(np.sum(c_arr / np.maximum(u, u_eps)))

    def rhs(t, u):
        total = riem_sq_of(u)
        du = np.empty_like(u)
        for j in range(len(factors)):
            u_j = max(u[j], u_eps)
            du[j] = own[j] - u[j] * (total - c_arr[j] / u_j)
        return half * du

    def hit_floor(t, u):
        return float(np.min(u)) - scale_floor**2

    def hit_ceiling(t, u):
        return riem_ceiling - math.sqrt(riem_sq_of(u))

    hit_floor.terminal = True
    hit_floor.direction = -1
    hit_ceiling.terminal = True
    hit_ceiling.direction = -1

    sol = solve_ivp(
        rhs,
        (s0.t, s0.t + t_end),
        s0.scales**2,
        method="RK45",
        rtol=rtol,
        atol=atol,
        t_eval=t_eval,
        events=(hit_floor, hit_ceiling),
        dense_output=False,
    )
    t = sol.t
    u_rows = sol.y.T
    if sol.status == -1:
        if t.size == 0:
            raise StepSizeUnderflow(f"integrator failed: {sol.message}")
        u_last = u_rows[-1]
        near_floor = float(np.min(u_last)) <= (10.0 * scale_floor) ** 2
        near_ceiling = math.sqrt(riem_sq_of(u_last)) >= 0.1 * riem_ceiling
        if not (near_floor or near_ceiling):
            raise StepSizeUnderflow(f"integrator failed: {sol.message}")
        t_sing = float(t[-1])
        termination = Termination.SINGULARITY_DETECTED
    elif sol.status == 1:
        hits = [ev[-1] for ev in sol.t_events if ev.size]
        t_sing = float(min(hits))
        termination = Termination.SINGULARITY_DETECTED
    else:
        t_sing = None
        termination = Termination.REACHED_END

    scales = np.sqrt(np.maximum(u_rows, 0.0))
    if t.size and t[0] == s0.t:
        scales[0] = s0.scales
    riem = np.array([riem_sq_of(row) for row in u_rows])
    meta = {
        "rtol": rtol,
        "atol": atol,
        "scale_floor": scale_floor,
        "riem_ceiling": riem_ceiling,
        "solver": "RK45",
    }
    return OdeTrajectory(s0, mode, t, scales, riem, termination, t_sing, meta)


# ---------------------------------------------------------------------------
# conserved quantities and collapse monitoring
# ---------------------------------------------------------------------------


class DriftReport(tuple):
    """(exponent, initial ratio, max relative drift)."""

    __slots__ = ()

    def __new__(cls, p: float, initial: float, max_drift: float):
        return super().__new__(cls, (p, initial, max_drift))

    @property
    def p(self) -> float:
        return self[0]

    @property
    def initial(self) -> float:
        return self[1]

    @property
    def max_drift(self) -> float:
        return self[2]


def _two_factor_columns(traj: OdeTrajectory) -> tuple[int, int]:
    factors = traj.template.factors
    if len(factors) != 2:
        raise ShapeMismatch("need a two-factor trajectory")
    flats = [j for j, f in enumerate(factors) if f.curv is Curvature.FLAT]
    if len(flats) != 1:
        raise ShapeMismatch("need exactly one flat factor")
    return 1 - flats[0], flats[0]


def conserved_ratio(traj: OdeTrajectory, p: float) -> DriftReport:
    """Max relative drift of B/A^p along a (sphere, flat) trajectory."""
    sphere_col, flat_col = _two_factor_columns(traj)
    a = traj.scales[:, sphere_col]
    b = traj.scales[:, flat_col]
    ratio = b / a**p
    initial = float(ratio[0])
    drift = float(np.max(np.abs(ratio - initial)) / abs(initial))
    return DriftReport(p, initial, drift)


def conserving_exponent(traj_or_state) -> float:
    """The p with B/A^p exactly conserved: p = m/(m-4) for a sphere factor
    of dimension m (+inf direction degenerates at m = 4, returned as nan)."""
    template = (
        traj_or_state.template
        if isinstance(traj_or_state, OdeTrajectory)
        else traj_or_state
    )
    factors = template.factors
    spheres = [f for f in factors if f.curv is Curvature.SPHERE]
    if len(factors) != 2 or len(spheres) != 1:
        raise ShapeMismatch("need one sphere factor and one flat factor")
    m = spheres[0].dim
    if m == 4:
        return math.nan
    return m / (m - 4.0)


def collapse_scalar(traj: OdeTrajectory) -> np.ndarray:
    """Scale-invariant collapse series |Rm| * pi * B along the trajectory.

    B is the flat-factor scale, standing in for the squared injectivity
    radius of the collapsing circle direction up to a constant.
    """
    _, flat_col = _two_factor_columns(traj)
    b = traj.scales[:, flat_col]
    return np.sqrt(traj.riem_sq) * math.pi * b


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return "nan" if not math.isfinite(x) else f"{x:.17g}"


def write_trajectory_csv(traj: OdeTrajectory, path) -> None:
    """One row per sample: t, factor scales, riem_sq, ratio_p, collapse, mode."""
    k = traj.scales.shape[1]
    header = (
        ["t"]
        + [f"scale_{j}" for j in range(k)]
        + ["riem_sq", "ratio_p", "collapse_scalar", "mode"]
    )
    try:
        p = conserving_exponent(traj)
        sphere_col, flat_col = _two_factor_columns(traj)
        ratio = traj.scales[:, flat_col] / traj.scales[:, sphere_col] ** p
        collapse = collapse_scalar(traj)
    except ShapeMismatch:
        ratio = np.full(traj.n_samples, math.nan)
        collapse = np.full(traj.n_samples, math.nan)
    lines = [",".join(header)]
    for i in range(traj.n_samples):
        cells = [_fmt(traj.t[i])]
        cells += [_fmt(v) for v in traj.scales[i]]
        cells += [_fmt(traj.riem_sq[i]), _fmt(ratio[i]), _fmt(collapse[i]), traj.mode]
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
