"""Warped-product metrics on a 1D lateral grid and their reduced geometry.

A metric g = phi(x)^2 dx^2 + psi(x)^2 g_Sigma over a circle (CircleProduct)
or an interval with fiber collapse at both ends (SphereSO3, a topological
3-sphere) is stored as node samples of (phi, psi) on a uniform x grid. The
fiber (Sigma, g_Sigma) is a closed constant-curvature surface described by
FiberSpec. All reduced formulas live here: arclength, the two sectional
curvatures

    K1 = -psi_ss / psi,        K2 = (K_Sigma - psi_s^2) / psi^2,

volume, the quartic curvature energy F = integral of |Rm|^2 dV, arclength
resampling, and the noncollapse monitors.

Conventions. Derivatives with respect to arclength s (ds = phi dx) use a
fourth-order centered first-derivative stencil (odd-mirror ghosts across
poles) and a second-order conservative second derivative. The pointwise
|Rm|^2 is 4 K1^2 + 2 K2^2 under the default "paper" reduction, doubled under
curvature_norm = "full" (the full tensor norm of this class of metrics);
the active convention is carried by the metric and recorded in snapshots.
Metrics are immutable after construction (arrays are frozen), so every
operation here is a pure function and safe to call from concurrent workers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    BoundaryViolation,
    DegenerateFiber,
    GridError,
    NonPositiveDensity,
    ParseError,
    ValidationError,
)

MIN_NODES = 16
PSI_FLOOR_DEFAULT = 1e-10
POLE_SLOPE_TOL_DEFAULT = 1e-2


class Topology(enum.Enum):
    """Lateral topology of the warped product."""

    CIRCLE_PRODUCT = "CircleProduct"
    SPHERE_SO3 = "SphereSO3"


@dataclass(frozen=True)
class FiberSpec:
    """Constant-curvature fiber surface (Sigma, g_Sigma).

    k_sigma is the curvature sign (+1 round sphere, -1 hyperbolic; the flat
    case is excluded from this class of metrics). fiber_area is Vol(g_Sigma):
    4*pi for the unit round 2-sphere, 4*pi*(genus-1) for hyperbolic surfaces
    by Gauss-Bonnet. fiber_mu1 is the first nonzero Laplace eigenvalue of the
    fiber (2 for the unit round sphere); it only enters the spectral module.
    """

    k_sigma: int
    fiber_area: float
    fiber_mu1: float = 2.0

    def __post_init__(self):
        if self.k_sigma not in (-1, 1):
            raise ValidationError(f"k_sigma must be -1 or +1, got {self.k_sigma}")
        if not self.fiber_area > 0:
            raise ValidationError(f"fiber_area must be positive, got {self.fiber_area}")
        if self.fiber_mu1 < 0:
            raise ValidationError(f"fiber_mu1 must be nonnegative, got {self.fiber_mu1}")


ROUND_S2_FIBER = FiberSpec(k_sigma=1, fiber_area=4.0 * math.pi, fiber_mu1=2.0)


@dataclass(frozen=True)
class WarpedMetric:
    """Validated warped-product metric on a uniform lateral grid.

    Use from_profile() to construct; the constructor itself only freezes the
    arrays. curvature_norm selects the |Rm|^2 convention ("paper" reduced or
    "full" tensor norm, a global factor of 2).
    """

    topology: Topology
    fiber: FiberSpec
    x: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    curvature_norm: str = "paper"

    def __post_init__(self):
        for name in ("x", "phi", "psi"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def hx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def is_sphere(self) -> bool:
        return self.topology is Topology.SPHERE_SO3

    def interior(self) -> slice:
        """Index slice of nodes where psi > 0 is required."""
        return slice(1, self.n - 1) if self.is_sphere else slice(0, self.n)

    def with_profiles(
        self,
        phi: np.ndarray,
        psi: np.ndarray,
        pole_tol: float = POLE_SLOPE_TOL_DEFAULT,
    ) -> "WarpedMetric":
        """Same grid/fiber/convention, new (phi, psi); revalidates.

        pole_tol loosens the sphere pole-slope check for callers (such as the
        flow stepper) whose intermediate states carry a grid-scale kink at the
        poles that the next resampling removes.
        """
        return from_profile(
            self.topology,
            self.fiber,
            self.x,
            phi,
            psi,
            curvature_norm=self.curvature_norm,
            pole_tol=pole_tol,
        )


@dataclass(frozen=True)
class CurvatureProfile:
    """Pointwise reduced curvature along the lateral grid.

    riem_sq follows the metric's curvature_norm convention. At SphereSO3
    poles k2 is set to its smoothness limit k1.
    """

    k1: np.ndarray
    k2: np.ndarray
    riem_sq: np.ndarray
    ricci_min: np.ndarray
    scalar: np.ndarray


class NoncollapseReport(NamedTuple):
    L: float
    min_psi: float
    inj_proxy: float


# ---------------------------------------------------------------------------
# construction / validation
# ---------------------------------------------------------------------------


def from_profile(
    topology: Topology,
    fiber: FiberSpec,
    x: np.ndarray,
    phi: np.ndarray,
    psi: np.ndarray,
    curvature_norm: str = "paper",
    pole_tol: float = POLE_SLOPE_TOL_DEFAULT,
) -> WarpedMetric:
    """Validate samples and build a WarpedMetric.

    Raises GridError for bad grids, NonPositiveDensity for nonpositive phi or
    interior psi, BoundaryViolation when SphereSO3 pole conditions (psi = 0
    exactly, arclength slope within pole_tol of -/+1) fail.
    """
    x = np.asarray(x, dtype=float)
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if curvature_norm not in ("paper", "full"):
        raise ValidationError(f"curvature_norm must be 'paper' or 'full', got {curvature_norm!r}")
    if x.ndim != 1 or phi.shape != x.shape or psi.shape != x.shape:
        raise GridError("x, phi, psi must be 1D arrays of one common length")
    n = x.size
    if n < MIN_NODES:
        raise GridError(f"need at least {MIN_NODES} nodes, got {n}")
    dx = np.diff(x)
    if np.any(dx <= 0):
        raise GridError("x must be strictly increasing")
    span = float(x[-1] - x[0])
    if np.max(np.abs(dx - dx[0])) > 1e-9 * span:
        raise GridError("x must be uniformly spaced")
    if not np.all(np.isfinite(phi)) or not np.all(np.isfinite(psi)):
        raise ValidationError("phi and psi must be finite")
    if np.any(phi <= 0):
        raise NonPositiveDensity("phi must be positive everywhere")

    m = WarpedMetric(topology, fiber, x, phi, psi, curvature_norm)
    inter = m.interior()
    if np.any(psi[inter] <= 0):
        raise NonPositiveDensity("psi must be positive at interior nodes")
    if m.is_sphere:
        if psi[0] != 0.0 or psi[-1] != 0.0:
            raise BoundaryViolation(
                f"SphereSO3 requires psi = 0 exactly at both poles, got {psi[0]}, {psi[-1]}"
            )
        if fiber.k_sigma != 1:
            raise ValidationError("SphereSO3 requires a k_sigma = +1 fiber")
        s, _ = arclength(m)
        slope_l = _pole_fit(s, psi, left=True).slope_pole
        slope_r = _pole_fit(s, psi, left=False).slope_pole
        if abs(slope_l - 1.0) > pole_tol or abs(slope_r - 1.0) > pole_tol:
            raise BoundaryViolation(
                "pole slopes of psi must be -/+1 within "
                f"{pole_tol:g}: got {slope_l:.6g} (left), {-slope_r:.6g} (right)"
            )
    return m


def scaled(m: WarpedMetric, lam: float) -> WarpedMetric:
    """The metric lam^2 * g, realized as phi -> lam*phi, psi -> lam*psi."""
    if not lam > 0:
        raise ValidationError("scale factor must be positive")
    return m.with_profiles(lam * m.phi, lam * m.psi)


# ---------------------------------------------------------------------------
# quadrature and stencils
# ---------------------------------------------------------------------------


def quad_weights(n: int, hx: float, periodic: bool, scheme: str = "simpson") -> np.ndarray:
    """Quadrature weights on the uniform grid.

    "trapezoid" or "simpson". Periodic Simpson needs an even node count and
    silently falls back to the (spectrally accurate) periodic trapezoid rule
    when n is odd. Closed Simpson handles an odd interval count with a 3/8
    tail.
    """
    if scheme not in ("trapezoid", "simpson"):
        raise ValidationError(f"unknown quadrature scheme {scheme!r}")
    w = np.full(n, hx)
    if periodic:
        if scheme == "simpson" and n % 2 == 0:
            w = np.where(np.arange(n) % 2 == 1, 4.0, 2.0) * (hx / 3.0)
        return w
    if scheme == "trapezoid":
        w[0] = w[-1] = hx / 2.0
        return w
    w = np.zeros(n)
    intervals = n - 1
    m = intervals if intervals % 2 == 0 else intervals - 3
    # composite Simpson over the first m intervals (m even, possibly zero)
    if m > 0:
        w[0] += hx / 3.0
        w[m] += hx / 3.0
        w[1:m:2] += 4.0 * hx / 3.0
        w[2:m:2] += 2.0 * hx / 3.0
    if m < intervals:  # 3/8 rule over the last three intervals
        w[m] += 3.0 * hx / 8.0
        w[m + 1] += 9.0 * hx / 8.0
        w[m + 2] += 9.0 * hx / 8.0
        w[m + 3] += 3.0 * hx / 8.0
    return w


def _extend(arr: np.ndarray, is_sphere: bool, odd: bool) -> np.ndarray:
    """Pad with two ghost nodes per side: wrap on circles, mirror at poles.

    Sphere ghosts mirror across the pole node: odd fields (psi) flip sign,
    even fields (phi) do not.
    """
    n = arr.size
    ext = np.empty(n + 4)
    ext[2 : n + 2] = arr
    if not is_sphere:
        ext[0:2] = arr[-2:]
        ext[n + 2 :] = arr[:2]
        return ext
    sign = -1.0 if odd else 1.0
    ext[1] = sign * arr[1]
    ext[0] = sign * arr[2]
    ext[n + 2] = sign * arr[n - 2]
    ext[n + 3] = sign * arr[n - 3]
    return ext


class _PoleFit(NamedTuple):
    """Odd quintic psi ~ a t + c t^3 + e t^5 in t = d/d3, d = pole distance."""

    a: float
    c: float
    e: float
    d3: float
    t1: float

    @property
    def slope_pole(self) -> float:
        return self.a / self.d3

    @property
    def slope_adj(self) -> float:
        return (self.a + 3.0 * self.c * self.t1**2 + 5.0 * self.e * self.t1**4) / self.d3

    @property
    def k1_pole(self) -> float:
        # -psi'''(0)/psi'(0), the smoothness limit of -psi_ss/psi
        return -6.0 * self.c / (self.a * self.d3**2)

    def psi_ss_adj(self) -> float:
        return (6.0 * self.c * self.t1 + 20.0 * self.e * self.t1**3) / self.d3**2


def _pole_fit(s: np.ndarray, psi: np.ndarray, left: bool) -> _PoleFit:
    """Fit the three nodes nearest a pole by an odd quintic in arclength.

    Exact for odd quintics of the pole distance whatever the lateral gauge,
    which the coordinate-mirrored ghost stencils are not. Solved in the
    normalized variable t = d/d3 for conditioning.
    """
    if left:
        dist = s[1:4].copy()
        vals = psi[1:4]
    else:
        dist = s[-1] - s[-4:-1][::-1]
        vals = psi[-4:-1][::-1]
    d3 = float(dist[2])
    t = dist / d3
    vand = np.column_stack((t, t**3, t**5))
    a, c, e = np.linalg.solve(vand, vals)
    return _PoleFit(float(a), float(c), float(e), d3, float(t[0]))


def _psi_s(m: WarpedMetric, s: np.ndarray | None = None) -> np.ndarray:
    """d psi / ds at every node, fourth-order centered.

    At SphereSO3 poles the centered stencil would need ghost nodes mirrored
    in the coordinate x, which is only accurate when the arclength density is
    locally symmetric about the pole. The pole node and its neighbor are
    instead filled from an odd quintic fit of psi in arclength distance,
    which is gauge-robust.
    """
    pe = _extend(m.psi, m.is_sphere, odd=True)
    j = np.arange(m.n) + 2
    dpsi_dx = (pe[j - 2] - 8.0 * pe[j - 1] + 8.0 * pe[j + 1] - pe[j + 2]) / (12.0 * m.hx)
    out = dpsi_dx / m.phi
    if m.is_sphere:
        if s is None:
            s, _ = arclength(m)
        fit_l = _pole_fit(s, m.psi, left=True)
        fit_r = _pole_fit(s, m.psi, left=False)
        out[0], out[1] = fit_l.slope_pole, fit_l.slope_adj
        out[-1], out[-2] = -fit_r.slope_pole, -fit_r.slope_adj
    return out


def _psi_ss(m: WarpedMetric) -> np.ndarray:
    """d^2 psi / ds^2, fourth-order via the chain rule.

    psi_ss = psi_xx/phi^2 - psi_x phi_x/phi^3 with fourth-order centered
    stencils. Stencil values within two nodes of a SphereSO3 pole lean on
    mirrored ghosts and are overwritten by the caller with pole-fit values.
    """
    pe = _extend(m.psi, m.is_sphere, odd=True)
    fe = _extend(m.phi, m.is_sphere, odd=False)
    j = np.arange(m.n) + 2
    psi_x = (pe[j - 2] - 8.0 * pe[j - 1] + 8.0 * pe[j + 1] - pe[j + 2]) / (12.0 * m.hx)
    phi_x = (fe[j - 2] - 8.0 * fe[j - 1] + 8.0 * fe[j + 1] - fe[j + 2]) / (12.0 * m.hx)
    psi_xx = (
        -pe[j - 2] + 16.0 * pe[j - 1] - 30.0 * pe[j] + 16.0 * pe[j + 1] - pe[j + 2]
    ) / (12.0 * m.hx**2)
    return psi_xx / m.phi**2 - psi_x * phi_x / m.phi**3


# ---------------------------------------------------------------------------
# reduced geometry
# ---------------------------------------------------------------------------


def _arclength_trapezoid(m: WarpedMetric) -> tuple[np.ndarray, float]:
    mids = 0.5 * (m.phi[:-1] + m.phi[1:]) * m.hx
    s = np.concatenate(([0.0], np.cumsum(mids)))
    if m.is_sphere:
        return s, float(s[-1])
    return s, float(s[-1] + 0.5 * (m.phi[-1] + m.phi[0]) * m.hx)


def arclength(m: WarpedMetric) -> tuple[np.ndarray, float]:
    """Cumulative arclength s at the nodes and total lateral length L.

    Integrates a cubic spline of phi (periodic on circles), which keeps the
    node positions fourth-order accurate on non-uniform gauges; cumulative
    trapezoid is the fallback if the spline density is not strictly
    increasing. For CircleProduct, L closes the loop.
    """
    if m.is_sphere:
        density = CubicSpline(m.x, m.phi)
        s = density.antiderivative()(m.x)
        s -= s[0]
        total = float(s[-1])
    else:
        x_ext = np.concatenate((m.x, [m.x[0] + m.n * m.hx]))
        phi_ext = np.concatenate((m.phi, [m.phi[0]]))
        density = CubicSpline(x_ext, phi_ext, bc_type="periodic")
        s_ext = density.antiderivative()(x_ext)
        s_ext -= s_ext[0]
        s, total = s_ext[:-1], float(s_ext[-1])
    monotone = bool(np.all(np.diff(s) > 0.0))
    wrap_ok = m.is_sphere or total > s[-1]
    if not (monotone and wrap_ok):
        return _arclength_trapezoid(m)
    return s, total


def curvature_profile(m: WarpedMetric, psi_floor: float = PSI_FLOOR_DEFAULT) -> CurvatureProfile:
    """Sectional curvatures and derived pointwise invariants.

    k1 = -psi_ss/psi, k2 = (K_Sigma - psi_s^2)/psi^2 at interior nodes; at
    SphereSO3 poles both equal the smoothness limit of k1 (odd-quintic fit
    in arclength, which also replaces k1 at the pole-adjacent nodes).
    ricci_min = min(2 k1, k1 + k2); scalar = 2(2 k1 + k2); riem_sq =
    (4 k1^2 + 2 k2^2), doubled for the "full" norm convention.
    """
    inter = m.interior()
    if np.min(m.psi[inter]) < psi_floor:
        raise DegenerateFiber(
            f"interior psi below floor {psi_floor:g}: min = {np.min(m.psi[inter]):.3g}"
        )
    s = arclength(m)[0] if m.is_sphere else None
    psi_s = _psi_s(m, s)
    psi_ss = _psi_ss(m)
    k1 = np.empty(m.n)
    k2 = np.empty(m.n)
    k1[inter] = -psi_ss[inter] / m.psi[inter]
    k2[inter] = (m.fiber.k_sigma - psi_s[inter] ** 2) / m.psi[inter] ** 2
    if m.is_sphere:
        for left, idx, adj in ((True, 0, 1), (False, m.n - 1, m.n - 2)):
            fit = _pole_fit(s, m.psi, left=left)
            k1[idx] = fit.k1_pole
            k2[idx] = fit.k1_pole  # smoothness limit
            # stencil values next to a pole lean on mirrored ghosts, which
            # lose accuracy whenever the gauge is not symmetric about it
            k1[adj] = -fit.psi_ss_adj() / m.psi[adj]
    mult = 2.0 if m.curvature_norm == "full" else 1.0
    riem_sq = mult * (4.0 * k1**2 + 2.0 * k2**2)
    ricci_min = np.minimum(2.0 * k1, k1 + k2)
    scalar = 2.0 * (2.0 * k1 + k2)
    return CurvatureProfile(k1, k2, riem_sq, ricci_min, scalar)


def volume(m: WarpedMetric, scheme: str = "simpson") -> float:
    """Vol(g) = fiber_area * integral of psi^2 phi dx."""
    w = quad_weights(m.n, m.hx, periodic=not m.is_sphere, scheme=scheme)
    return float(m.fiber.fiber_area * np.sum(w * m.psi**2 * m.phi))


def energy_density(m: WarpedMetric, psi_floor: float = PSI_FLOOR_DEFAULT) -> np.ndarray:
    """Integrand of F against phi dx: fiber_area * riem_sq * psi^2.

    Pointwise this is fiber_area * (4 psi_ss^2 + 2 q^2/psi^2) with
    q = K_Sigma - psi_s^2, built from the same curvature arrays that
    curvature_profile reports so the two evaluation paths agree to round-off.
    Pole entries are exactly 0 (psi^2 kills the finite pole curvature).
    """
    prof = curvature_profile(m, psi_floor=psi_floor)
    return m.fiber.fiber_area * prof.riem_sq * m.psi**2


def energy(m: WarpedMetric, scheme: str = "simpson") -> float:
    """F(g), the integral of |Rm|^2 dV in the metric's norm convention."""
    w = quad_weights(m.n, m.hx, periodic=not m.is_sphere, scheme=scheme)
    return float(np.sum(w * energy_density(m) * m.phi))


def noncollapse_quantities(
    m: WarpedMetric, fiber_injectivity_scale: float = math.pi
) -> NoncollapseReport:
    """Lateral length, minimum interior fiber radius, and an injectivity proxy.

    inj_proxy = min(L/2, pi * min_psi * fiber_injectivity_scale) is a
    documented heuristic surrogate for the injectivity radius (lateral loops
    versus fiber size), not a certified bound; the default scale pi matches
    the round 2-sphere fiber normalization used throughout.
    """
    _, L = arclength(m)
    min_psi = float(np.min(m.psi[m.interior()]))
    inj = min(L / 2.0, math.pi * min_psi * fiber_injectivity_scale)
    return NoncollapseReport(L, min_psi, inj)


def diam_interval(m: WarpedMetric) -> tuple[float, float]:
    """Certified [lower, upper] bounds for the diameter.

    SphereSO3: the diameter is exactly L (pole-to-pole along the lateral
    geodesic; any path projects onto s without getting shorter, and any two
    points connect through the nearer pole). CircleProduct: lower bound
    max(L/2, pi*min_psi) for a round fiber (the fiber projection scaled by
    min_psi is distance-decreasing), upper bound L/2 + pi*max_psi.
    """
    _, L = arclength(m)
    if m.is_sphere:
        return L, L
    max_psi = float(np.max(m.psi))
    lo = L / 2.0
    if m.fiber.k_sigma == 1:
        lo = max(lo, math.pi * float(np.min(m.psi)))
    return lo, L / 2.0 + math.pi * max_psi


def resample_arclength(
    m: WarpedMetric,
    n_new: int | None = None,
    tol: float | None = 1e-6,
    pole_tol: float = POLE_SLOPE_TOL_DEFAULT,
) -> WarpedMetric:
    """Re-grid to uniform arclength spacing with constant phi.

    psi is interpolated by a cubic spline in s: periodic on circles, clamped
    to the exact pole slopes (+1, -1) on spheres, which renormalizes any
    drifted pole slope back onto the boundary condition. phi becomes
    L / (coordinate span). When tol is not None, a relative change of volume
    or energy beyond tol raises ValidationError. pole_tol is forwarded to the
    output validation; profiles with a grid-scale pole kink keep that kink
    through the spline, so callers resampling such states loosen it.
    """
    if n_new is None:
        n_new = m.n
    if n_new < MIN_NODES:
        raise GridError(f"need at least {MIN_NODES} nodes, got {n_new}")
    s, L = arclength(m)
    if m.is_sphere:
        spline = CubicSpline(s, m.psi, bc_type=((1, 1.0), (1, -1.0)))
        s_new = np.linspace(0.0, L, n_new)
        psi_new = spline(s_new)
        psi_new[0] = 0.0
        psi_new[-1] = 0.0
        np.clip(psi_new, 0.0, None, out=psi_new)
        x_new = np.linspace(-1.0, 1.0, n_new)
        phi_new = np.full(n_new, L / 2.0)
    else:
        s_ext = np.concatenate((s, [L]))
        psi_ext = np.concatenate((m.psi, [m.psi[0]]))
        spline = CubicSpline(s_ext, psi_ext, bc_type="periodic")
        s_new = np.arange(n_new) * (L / n_new)
        psi_new = spline(s_new)
        span = m.x[-1] - m.x[0] + m.hx
        x_new = m.x[0] + np.arange(n_new) * (span / n_new)
        phi_new = np.full(n_new, L / span)
    out = from_profile(
        m.topology, m.fiber, x_new, phi_new, psi_new, m.curvature_norm, pole_tol=pole_tol
    )
    if tol is not None:
        for f in (volume, energy):
            before, after = f(m), f(out)
            if abs(after - before) > tol * max(abs(before), 1e-300):
                raise ValidationError(
                    f"resampling changed {f.__name__} by more than {tol:g} relative "
                    f"({before:.12g} -> {after:.12g})"
                )
    return out


# ---------------------------------------------------------------------------
# snapshot files
# ---------------------------------------------------------------------------

_SNAPSHOT_KEYS = {"topology", "k_sigma", "fiber_area", "fiber_mu1", "curvature_norm"}


def write_snapshot(m: WarpedMetric, path) -> None:
    """Plain-text metric snapshot: header comments, then `x phi psi` rows."""
    lines = [
        f"# topology={m.topology.value}",
        f"# k_sigma={m.fiber.k_sigma}",
        f"# fiber_area={m.fiber.fiber_area:.17g}",
        f"# fiber_mu1={m.fiber.fiber_mu1:.17g}",
        f"# curvature_norm={m.curvature_norm}",
    ]
    for xv, pv, sv in zip(m.x, m.phi, m.psi):
        lines.append(f"{xv:.17g} {pv:.17g} {sv:.17g}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_snapshot(path) -> WarpedMetric:
    """Parse a snapshot file written by write_snapshot.

    ParseError reports the offending line; geometric validation errors
    (non-monotone grid, bad pole data) propagate from from_profile.
    """
    header: dict[str, str] = {}
    rows: list[tuple[float, float, float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" not in body:
                    raise ParseError(f"malformed header comment {line!r}", lineno)
                key, _, value = body.partition("=")
                key = key.strip()
                if key not in _SNAPSHOT_KEYS:
                    raise ParseError(f"unknown snapshot header key {key!r}", lineno)
                header[key] = value.strip()
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(f"expected 3 columns `x phi psi`, got {len(parts)}", lineno)
            try:
                rows.append((float(parts[0]), float(parts[1]), float(parts[2])))
            except ValueError:
                raise ParseError(f"non-numeric data in row {line!r}", lineno) from None
    for key in ("topology", "k_sigma", "fiber_area", "curvature_norm"):
        if key not in header:
            raise ParseError(f"missing required snapshot header `# {key}=...`")
    try:
        topology = Topology(header["topology"])
    except ValueError:
        raise ParseError(f"unknown topology {header['topology']!r}") from None
    try:
        fiber = FiberSpec(
            k_sigma=int(header["k_sigma"]),
            fiber_area=float(header["fiber_area"]),
            fiber_mu1=float(header.get("fiber_mu1", "2.0")),
        )
    except ValueError:
        raise ParseError("non-numeric fiber header value") from None
    if not rows:
        raise ParseError("snapshot contains no data rows")
    data = np.array(rows)
    return from_profile(
        topology, fiber, data[:, 0], data[:, 1], data[:, 2], header["curvature_norm"]
    )
