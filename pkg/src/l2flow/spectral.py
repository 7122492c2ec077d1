"""First Laplace eigenvalue and the backward biharmonic smoothing flow.

The eigenvalue solver works branch-wise over the two lowest fiber modes of
a warped metric. Each branch reduces to a one-dimensional variational
problem: the Dirichlet form int (f_s^2 + mu_k f^2 / psi^2) dV against the
measure dV = fa * phi * psi^2 dx, discretized with edge stiffness
c_e = fa * edgemean(psi)^2 / edgemean(phi) / hx and a diagonal mass. The
squared edge mean (rather than the mean of squares) and the quadratically
smoothed sphere masses are both exact for a linearly vanishing fiber
radius, which keeps the pointwise operator second order all the way into
the pole layer. The discrete operator is Delta = -M^{-1} L with L
symmetric, so Rayleigh quotients, inverse iteration, and the backward flow
below all share one quadrature.

On SphereSO3 grids the k = 0 branch is naturally Neumann: the pole nodes
carry zero measure and their edges drop out of the form (the true
eigenfunctions have vanishing arclength derivative at the poles, so the
omitted edge energy is higher order). The k = 1 branch pins the poles to
zero. Pole entries of operator outputs are filled with their smoothness
limits for display but never feed back into interior rows; that is what
makes int Delta f dV = 0 hold to machine precision and in turn makes the
backward flow conserve mass.

The backward flow integrates d/dtau f = -Delta^2 f + (1/2) f tr E against
a time-reversed trajectory, where E is the stored forward velocity and
tau runs opposite to flow time. Each step applies the zeroth-order term in
its exact multiplicative form f * (phi psi^2)_now / (phi psi^2)_next, which
transports the density f dV exactly; the biharmonic term is applied on the
arrival metric, where its dV-integral vanishes identically. Mass drift over
a full back-run is therefore pure round-off, far inside the 1e-8 budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import flow, geometry
from .errors import (
    ConvergenceFailure,
    DegenerateFiber,
    MissingVelocity,
    ShapeMismatch,
    StepUnderflow,
    UnsupportedState,
    ValidationError,
    ZeroFunction,
)

__all__ = [
    "ScalarProfile",
    "EigenReport",
    "EigenDecayReport",
    "laplace_apply",
    "lambda1",
    "dirichlet_energy",
    "biharmonic_backstep",
    "backstep_limit",
    "run_backward",
    "l2_norm_sq",
    "h1_seminorm_sq",
    "l2_norm_rate",
    "h1_seminorm_rate",
    "write_decay_report",
]

RESIDUAL_TOL_DEFAULT = 1e-8
MAX_ITERATIONS_DEFAULT = 500
BACKSTEP_SAFETY_DEFAULT = 0.45
DT_FLOOR = 1e-16


@dataclass(frozen=True)
class ScalarProfile:
    """Nodal scalar on a warped metric, tagged with its fiber mode.

    fiber_mode 0 is a function of the base coordinate alone; fiber_mode 1
    multiplies the first fiber eigenfunction, contributing mu_1 / psi^2 to
    the operator and making the dV-mean vanish automatically.
    """

    values: np.ndarray
    fiber_mode: int
    metric: geometry.WarpedMetric

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.shape[0] != self.metric.n:
            raise ShapeMismatch(
                f"profile length {values.shape} does not match metric nodes {self.metric.n}"
            )
        if self.fiber_mode not in (0, 1):
            raise ValidationError(f"fiber_mode must be 0 or 1, got {self.fiber_mode}")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def dv_mass(self) -> float:
        """Reduced integral of the profile against the volume measure.

        For fiber_mode 0 this is the manifold integral of the function.
        For fiber_mode 1 it is the coefficient of the fiber mode; the
        manifold integral itself vanishes identically because the fiber
        eigenfunction integrates to zero over the fiber.
        """
        w = _mass_diag(self.metric, self.fiber_mode)
        return float(np.sum(w * self.values))


@dataclass(frozen=True)
class EigenReport:
    """Converged first-eigenvalue result: value, minimizing fiber branch,
    eigenprofile normalized to unit dV-norm, iteration count of the winning
    branch, and the operator residual |Delta f + lambda f| / |f|."""

    lambda1: float
    branch: int
    eigenprofile: ScalarProfile
    iterations: int
    residual: float


@dataclass(frozen=True)
class EigenDecayReport:
    """Back-flow certificate for eigenvalue decay.

    lambda_0_bound is the Rayleigh quotient of the back-flowed test
    function on the initial metric, an upper bound for the true initial
    eigenvalue lambda_0_true up to solver residual. slack is
    lambda_0_bound - 2 * lambda_T, the measured constant of the decay
    inequality. sobolev_A is caller-supplied context; epsilon records the
    initial energy of the trajectory.
    """

    lambda_T: float
    lambda_0_bound: float
    lambda_0_true: float
    mass_drift: float
    sobolev_A: float
    epsilon: float

    @property
    def slack(self) -> float:
        return self.lambda_0_bound - 2.0 * self.lambda_T


def _check_fiber(m: geometry.WarpedMetric) -> None:
    if float(np.min(m.psi[m.interior()])) < geometry.PSI_FLOOR_DEFAULT:
        raise DegenerateFiber("interior fiber radius below the degeneracy floor")


def _mass_diag(m: geometry.WarpedMetric, mode: int) -> np.ndarray:
    """Diagonal dV weights per node for one fiber branch.

    Circles use the plain nodal weight fa * hx * phi * psi^2, which makes
    the discrete rate of the measure match the nodal trace of the velocity
    exactly. Spheres smooth the interior weights quadratically (exact for
    cell integrals of a linearly vanishing fiber radius, which is what
    keeps the pointwise operator second order up to the poles); the folded
    k = 0 branch merges the pole cap into the adjacent cell, giving it
    9/8 of its nodal weight, while the pinned k = 1 branch drops the cap
    with its zero boundary value. Pole nodes always carry zero weight.
    """
    fa = m.fiber.fiber_area
    if not m.is_sphere:
        return fa * m.hx * m.phi * m.psi**2
    p2 = m.psi**2
    w = np.zeros(m.n)
    w[1:-1] = (p2[:-2] + 22.0 * p2[1:-1] + p2[2:]) / 24.0
    if mode == 0:
        w[1] = (27.0 / 24.0) * p2[1]
        w[-2] = (27.0 / 24.0) * p2[-2]
    return fa * m.hx * m.phi * w


def _forms(m: geometry.WarpedMetric, mode: int):
    """Edge stiffness, diagonal term, and mass for one fiber branch.

    Returns (c, d, mass, lo, hi): c[e] couples nodes e and e+1 (with
    wrap-around on circles, where c has length n); active unknowns are
    indices lo..hi-1. The stiffness weight is the squared edge mean of the
    fiber radius, exact for the linear vanishing at sphere poles. Sphere
    k = 0 zeroes the pole edges (natural Neumann fold); sphere k = 1 keeps
    them against pinned zero pole values.
    """
    n = m.n
    fa = m.fiber.fiber_area
    mu = 0.0 if mode == 0 else m.fiber.fiber_mu1
    if m.is_sphere:
        idx = np.arange(n - 1)
        nxt = idx + 1
    else:
        idx = np.arange(n)
        nxt = (idx + 1) % n
    psi2 = (0.5 * (m.psi[idx] + m.psi[nxt])) ** 2
    phim = 0.5 * (m.phi[idx] + m.phi[nxt])
    c = fa * psi2 / (phim * m.hx)
    d = mu * fa * m.hx * m.phi.copy()
    mass = _mass_diag(m, mode)
    if m.is_sphere:
        lo, hi = 1, n - 1
        if mode == 0:
            c[0] = 0.0
            c[-1] = 0.0
        d[0] = d[-1] = 0.0
    else:
        lo, hi = 0, n
    return c, d, mass, lo, hi


def _stiffness_apply(f, c, d, m: geometry.WarpedMetric, mode: int) -> np.ndarray:
    """L f on the full grid; sphere k = 1 reads the poles as zero."""
    n = m.n
    g = f
    if m.is_sphere and mode == 1:
        g = f.copy()
        g[0] = g[-1] = 0.0
    out = d * g
    if m.is_sphere:
        diff = g[1:] - g[:-1]
        flux = c * diff
        out[:-1] -= flux
        out[1:] += flux
    else:
        diff = np.roll(g, -1) - g
        flux = c * diff
        out -= flux
        out += np.roll(flux, 1)
    if m.is_sphere and mode == 1:
        out[0] = out[-1] = 0.0
    return out


def _laplacian_values(f, m: geometry.WarpedMetric, mode: int) -> np.ndarray:
    """Delta f = -M^{-1} L f on active nodes, smoothness limits at poles."""
    c, d, mass, lo, hi = _forms(m, mode)
    lf = _stiffness_apply(f, c, d, m, mode)
    out = np.zeros(m.n)
    out[lo:hi] = -lf[lo:hi] / mass[lo:hi]
    if m.is_sphere:
        if mode == 0:
            ds_l = m.hx * 0.5 * (m.phi[0] + m.phi[1])
            ds_r = m.hx * 0.5 * (m.phi[-1] + m.phi[-2])
            out[0] = 3.0 * 2.0 * (f[1] - f[0]) / ds_l**2
            out[-1] = 3.0 * 2.0 * (f[-2] - f[-1]) / ds_r**2
        else:
            out[0] = 0.0
            out[-1] = 0.0
    return out


def _match(f: ScalarProfile, m: geometry.WarpedMetric) -> None:
    if f.n != m.n:
        raise ShapeMismatch(f"profile length {f.n} does not match metric nodes {m.n}")


def laplace_apply(f: ScalarProfile, m: geometry.WarpedMetric) -> ScalarProfile:
    """Reduced Laplace operator: f_ss + 2 (psi_s/psi) f_s - mu_k psi^-2 f.

    Interior values come from the variational stencil; sphere poles carry
    the smoothness limit (3 f_ss for the base branch, zero for the fiber
    branch) and never influence interior applications.
    """
    _match(f, m)
    _check_fiber(m)
    return ScalarProfile(_laplacian_values(f.values, m, f.fiber_mode), f.fiber_mode, m)


def dirichlet_energy(f: ScalarProfile, m: geometry.WarpedMetric) -> float:
    """Rayleigh quotient: int (|f_s|^2 + mu_k psi^-2 f^2) dV / int f^2 dV."""
    _match(f, m)
    _check_fiber(m)
    num = h1_seminorm_sq(f, m)
    den = l2_norm_sq(f, m)
    if den <= 0.0:
        raise ZeroFunction("profile vanishes in the dV norm")
    return num / den


def l2_norm_sq(f: ScalarProfile, m: geometry.WarpedMetric) -> float:
    """Squared dV norm of the profile (pole values carry zero measure)."""
    _match(f, m)
    mass = _mass_diag(m, f.fiber_mode)
    v = f.values
    if m.is_sphere and f.fiber_mode == 1:
        v = v.copy()
        v[0] = v[-1] = 0.0
    return float(np.sum(mass * v * v))


def h1_seminorm_sq(f: ScalarProfile, m: geometry.WarpedMetric) -> float:
    """Dirichlet numerator: int (|f_s|^2 + mu_k psi^-2 f^2) dV."""
    _match(f, m)
    c, d, _, _, _ = _forms(m, f.fiber_mode)
    v = f.values
    if m.is_sphere:
        if f.fiber_mode == 1:
            v = v.copy()
            v[0] = v[-1] = 0.0
        diff = v[1:] - v[:-1]
    else:
        diff = np.roll(v, -1) - v
    return float(np.sum(c * diff * diff) + np.sum(d * v * v))


def _assemble(m: geometry.WarpedMetric, mode: int):
    """Sparse stiffness and mass vector on the active unknowns."""
    c, d, mass, lo, hi = _forms(m, mode)
    na = hi - lo
    diag = d[lo:hi].copy()
    if m.is_sphere:
        diag[:-1] += c[lo : hi - 1]
        diag[1:] += c[lo : hi - 1]
        if mode == 1:
            diag[0] += c[0]
            diag[-1] += c[-1]
        off = -c[lo : hi - 1]
        L = sp.diags([off, diag, off], offsets=(-1, 0, 1), format="csc")
    else:
        diag += c + np.roll(c, 1)
        rows = np.concatenate([np.arange(na), np.arange(na), np.arange(na)])
        cols = np.concatenate(
            [np.arange(na), (np.arange(na) + 1) % na, (np.arange(na) - 1) % na]
        )
        vals = np.concatenate([diag, -c, -np.roll(c, 1)])
        L = sp.csc_matrix((vals, (rows, cols)), shape=(na, na))
    return L, mass[lo:hi], lo, hi


def _start_block(m, mode, lo, hi):
    """Two smooth start columns with a small random admixture.

    Smooth starts keep the Rayleigh quotients at the scale of the lowest
    eigenvalues (raw random vectors sit near the top of the spectrum); the
    random part guarantees overlap with the lowest eigenspace when
    symmetry would otherwise cancel the smooth parts against it. The pair
    spans complementary symmetry classes: both circle phases of theta, or
    odd and even profiles about the sphere equator, with the constant in
    place of the even column on the unconstrained fiber branch.
    """
    if m.is_sphere:
        s = np.concatenate([[0.0], np.cumsum(0.5 * (m.phi[:-1] + m.phi[1:])) * m.hx])
        s = s[lo:hi]
        a = s - 0.5 * s[-1]
        b = np.ones_like(s) if mode == 1 else a * a
    else:
        ang = 2.0 * math.pi * m.x / (m.n * m.hx)
        a = np.cos(ang)
        b = np.ones(hi - lo) if mode == 1 else np.sin(ang)
    rng = np.random.default_rng(0)
    noise = 0.01 * rng.standard_normal((hi - lo, 2))
    cols = np.stack([a, b], axis=1)
    return cols + noise * np.max(np.abs(cols), axis=0)


def _branch_lambda1(m, mode, tol, max_iterations):
    """Smallest branch eigenvalue by block-2 shifted inverse iteration.

    Each sweep applies the shifted inverse to both columns and extracts
    Ritz pairs from the projected 2 x 2 problem, which separates nearly
    degenerate lowest pairs (neck states) exactly instead of stalling on
    them, and never chases a shift toward a possibly wrong eigenvalue.
    The shift stays conservatively below the spectrum: zero on the
    coercive fiber branch, a small negative multiple of the running Ritz
    value on the base branch (refactored when it goes stale).
    """
    L, mass, lo, hi = _assemble(m, mode)
    M = sp.diags(mass)

    def project(V):
        if mode == 0:
            V = V - mass @ V / np.sum(mass)
        return V

    def orthonormalize(V):
        for j in range(V.shape[1]):
            for i in range(j):
                V[:, j] -= float((mass * V[:, i]) @ V[:, j]) * V[:, i]
            nrm = math.sqrt(float((mass * V[:, j]) @ V[:, j]))
            if nrm <= 0.0:
                raise ConvergenceFailure("iteration subspace lost rank")
            V[:, j] /= nrm
        return V

    def factor(s):
        return spla.factorized(sp.csc_matrix(L - s * M))

    V = orthonormalize(project(_start_block(m, mode, lo, hi)))
    lam = float(V[:, 0] @ (L @ V[:, 0]))
    sigma = -1e-3 * max(lam, 1e-30) if mode == 0 else 0.0
    solve = factor(sigma)
    for it in range(1, max_iterations + 1):
        W = np.stack([solve(mass * V[:, 0]), solve(mass * V[:, 1])], axis=1)
        W = orthonormalize(project(W))
        A = W.T @ (L @ W)
        ritz, U = np.linalg.eigh(0.5 * (A + A.T))
        V = W @ U
        lam = float(ritz[0])
        v = V[:, 0]
        r = L @ v - lam * (mass * v)
        residual = math.sqrt(float(np.sum(r * r / mass)))
        if residual <= tol:
            return lam, v, lo, hi, it, residual
        if mode == 0 and -sigma > 0.1 * max(lam, 1e-30):
            sigma = -1e-3 * max(lam, 1e-30)
            solve = factor(sigma)
    raise ConvergenceFailure(
        f"inverse iteration on branch {mode} stalled at residual {residual:.3e} "
        f"after {max_iterations} iterations"
    )


def lambda1(
    m: geometry.WarpedMetric,
    residual_tol: float = RESIDUAL_TOL_DEFAULT,
    max_iterations: int = MAX_ITERATIONS_DEFAULT,
    modes: tuple[int, ...] = (0, 1),
) -> EigenReport:
    """Smallest Laplace eigenvalue over the two lowest fiber branches.

    Branch 0 searches mean-zero functions of the base coordinate; branch 1
    searches first-fiber-mode profiles (mean-zero automatically). Inverse
    iteration runs to an absolute operator residual of residual_tol in the
    dV norm and the smaller branch wins. modes restricts the branch search
    (for probing a single branch).
    """
    if not modes or any(mode not in (0, 1) for mode in modes):
        raise ValidationError(f"modes must be a nonempty subset of (0, 1), got {modes}")
    _check_fiber(m)
    best = None
    for mode in modes:
        lam, v, lo, hi, its, res = _branch_lambda1(m, mode, residual_tol, max_iterations)
        if best is None or lam < best[0]:
            best = (lam, mode, v, lo, hi, its, res)
    lam, mode, v, lo, hi, its, res = best
    full = np.zeros(m.n)
    full[lo:hi] = v
    if m.is_sphere and mode == 0:
        full[0] = full[1]
        full[-1] = full[-2]
    return EigenReport(
        lambda1=lam,
        branch=mode,
        eigenprofile=ScalarProfile(full, mode, m),
        iterations=its,
        residual=res,
    )


def _trace_e(m: geometry.WarpedMetric, e: flow.TangentField) -> np.ndarray:
    """tr_g E = 2 dphi/phi + 4 dpsi/psi, zeroed at zero-measure poles."""
    tr = np.zeros(m.n)
    lo, hi = (1, m.n - 1) if m.is_sphere else (0, m.n)
    sl = slice(lo, hi)
    tr[sl] = 2.0 * e.dphi[sl] / m.phi[sl] + 4.0 * e.dpsi[sl] / m.psi[sl]
    return tr


def backstep_limit(
    m: geometry.WarpedMetric, mode: int, safety: float = BACKSTEP_SAFETY_DEFAULT
) -> float:
    """Largest stable explicit step for the biharmonic term.

    Gershgorin bounds the Laplacian spectrum row-wise; the squared bound
    gives the biharmonic one, and explicit Euler is stable up to 2 over it.
    """
    c, d, mass, lo, hi = _forms(m, mode)
    row = d.copy()
    if m.is_sphere:
        row[:-1] += 2.0 * c
        row[1:] += 2.0 * c
    else:
        row += 2.0 * (c + np.roll(c, 1))
    g = float(np.max(row[lo:hi] / mass[lo:hi]))
    if g <= 0.0:
        raise ValidationError("degenerate operator: zero Gershgorin bound")
    return 2.0 * safety / (g * g)


def biharmonic_backstep(
    f: ScalarProfile,
    m: geometry.WarpedMetric,
    e_field: flow.TangentField,
    dtau: float,
) -> ScalarProfile:
    """One explicit step of d/dtau f = -Delta^2 f + (1/2) f tr_g E.

    e_field is the forward flow velocity; the metric itself moves backward
    by dtau against it, and the returned profile references the moved
    metric. The zeroth-order term is applied in its exact multiplicative
    form (density transport), and the biharmonic term is integrated
    against the arrival measure, where its base-branch integral vanishes
    identically; together these make the reduced integral of a base-branch
    profile change only through round-off, where the naive additive form
    would drift at O(dtau^2) per step. Fiber branches conserve the
    manifold integral trivially (it is zero by symmetry) while their
    reduced coefficient moves with the fiber term of the operator.
    """
    _match(f, m)
    if e_field.n != m.n:
        raise ShapeMismatch(
            f"velocity length {e_field.n} does not match metric nodes {m.n}"
        )
    if not dtau > DT_FLOOR:
        raise StepUnderflow(f"backward step {dtau:.3e} below the step floor")
    _check_fiber(m)
    phi2 = m.phi - dtau * e_field.dphi
    psi2 = m.psi - dtau * e_field.dpsi
    interior = m.interior()
    if float(np.min(psi2[interior])) < geometry.PSI_FLOOR_DEFAULT:
        raise DegenerateFiber("backward step collapses the fiber radius")
    m2 = m.with_profiles(phi2, psi2, pole_tol=flow.POLE_SLOPE_FLOW_TOL)
    w_old = _mass_diag(m, f.fiber_mode)
    w_new = _mass_diag(m2, f.fiber_mode)
    ratio = np.empty(m.n)
    lo, hi = (1, m.n - 1) if m.is_sphere else (0, m.n)
    sl = slice(lo, hi)
    ratio[sl] = w_old[sl] / w_new[sl]
    if m.is_sphere:
        ratio[0] = m.phi[0] / phi2[0]
        ratio[-1] = m.phi[-1] / phi2[-1]
    g = f.values * ratio
    lap = _laplacian_values(g, m2, f.fiber_mode)
    lap2 = _laplacian_values(lap, m2, f.fiber_mode)
    return ScalarProfile(g - dtau * lap2, f.fiber_mode, m2)


def l2_norm_rate(f: ScalarProfile, m: geometry.WarpedMetric, e: flow.TangentField) -> float:
    """Backward-time rate of the squared dV norm:
    -2 |Delta f|^2 + int (1/2) tr E f^2 dV."""
    _match(f, m)
    mass = _mass_diag(m, f.fiber_mode)
    lap = _laplacian_values(f.values, m, f.fiber_mode)
    tr = _trace_e(m, e)
    v = f.values
    if m.is_sphere and f.fiber_mode == 1:
        v = v.copy()
        v[0] = v[-1] = 0.0
    lap_sq = float(np.sum(mass * lap * lap))
    return -2.0 * lap_sq + 0.5 * float(np.sum(tr * mass * v * v))


def h1_seminorm_rate(
    f: ScalarProfile, m: geometry.WarpedMetric, e: flow.TangentField
) -> float:
    """Backward-time rate of the Dirichlet numerator:
    -2 |grad Delta f|^2 + int <E, grad f x grad f> dV
    - int tr E (f Delta f + |grad f|^2 / 2) dV.

    With the metric moving backward against the forward velocity E, the
    inverse metric grows along E, so the pairing term enters with a plus
    sign; the measure and zeroth-order terms carry the minus signs. Each
    term reduces to the warped 1D quadratures below.
    """
    _match(f, m)
    mode = f.fiber_mode
    c, d, mass, lo, hi = _forms(m, mode)
    v = f.values
    if m.is_sphere and mode == 1:
        v = v.copy()
        v[0] = v[-1] = 0.0
    lap = _laplacian_values(v, m, mode)
    grad_lap_sq = h1_seminorm_sq(ScalarProfile(lap, mode, m), m)
    tr = _trace_e(m, e)
    rphi = np.zeros(m.n)
    rpsi = np.zeros(m.n)
    sl = slice(1, m.n - 1) if m.is_sphere else slice(0, m.n)
    rphi[sl] = 2.0 * e.dphi[sl] / m.phi[sl]
    rpsi[sl] = 2.0 * e.dpsi[sl] / m.psi[sl]
    if m.is_sphere:
        diff = v[1:] - v[:-1]
        edge_sq = c * diff * diff
        tr_e = 0.5 * (tr[:-1] + tr[1:])
        rphi_e = 0.5 * (rphi[:-1] + rphi[1:])
    else:
        diff = np.roll(v, -1) - v
        edge_sq = c * diff * diff
        tr_e = 0.5 * (tr + np.roll(tr, -1))
        rphi_e = 0.5 * (rphi + np.roll(rphi, -1))
    e_pair = float(np.sum(rphi_e * edge_sq) + np.sum(rpsi * d * v * v))
    tr_lap = float(np.sum(tr * mass * v * lap))
    tr_grad = 0.5 * (float(np.sum(tr_e * edge_sq)) + float(np.sum(tr * d * v * v)))
    return -2.0 * grad_lap_sq + e_pair - tr_lap - tr_grad


def _gap_checks(traj: flow.FlowTrajectory) -> None:
    if traj.n_samples < 2:
        raise ValidationError("backward run needs at least 2 samples")
    n0 = traj.samples[0].metric.n
    for s in traj.samples:
        if s.metric.n != n0:
            raise UnsupportedState(
                "backward run across resampled grids is not supported; "
                "record the trajectory with regridding disabled"
            )
        if s.regridded:
            raise UnsupportedState(
                "trajectory contains regridded gaps; record with regridding disabled"
            )
        if s.e_field is None or not (
            np.all(np.isfinite(s.e_field.dphi)) and np.all(np.isfinite(s.e_field.dpsi))
        ):
            raise MissingVelocity("trajectory sample lacks a finite velocity field")


def run_backward(
    traj: flow.FlowTrajectory,
    f_T: ScalarProfile,
    sobolev_A: float = math.nan,
    safety: float = BACKSTEP_SAFETY_DEFAULT,
) -> EigenDecayReport:
    """Transport a final-time test function to the initial metric.

    Integrates the backward biharmonic flow against the time-reversed
    trajectory, metric and velocity linear within each recorded gap, and
    reports the Rayleigh quotient of the arrival profile on the initial
    metric (an upper bound for its first eigenvalue), the independently
    solved initial eigenvalue, the mass drift of the transport, and the
    slack of the decay inequality.
    """
    _gap_checks(traj)
    samples = traj.samples
    m_T = samples[-1].metric
    _match(f_T, m_T)
    lambda_T = dirichlet_energy(f_T, m_T)
    f = ScalarProfile(f_T.values.copy(), f_T.fiber_mode, m_T)
    mass0 = f.dv_mass()
    scale = float(np.sum(_mass_diag(m_T, f_T.fiber_mode) * np.abs(f_T.values)))
    if scale <= 0.0:
        raise ZeroFunction("test function vanishes in the dV norm")
    # The conserved manifold integral is the reduced integral on the base
    # branch; on fiber branches it vanishes identically (the fiber mode
    # integrates to zero over the fiber), so its drift is zero by symmetry
    # and the reduced coefficient is not a conserved quantity.
    track_mass = f_T.fiber_mode == 0
    drift = 0.0
    m_cur = m_T
    for k in range(len(samples) - 1, 0, -1):
        a, b = samples[k - 1], samples[k]
        dt_gap = b.t - a.t
        if not dt_gap > 0.0:
            raise ValidationError("trajectory samples are not strictly ordered in time")
        e = b.e_field
        n_sub = max(1, math.ceil(dt_gap / backstep_limit(m_cur, f.fiber_mode, safety)))
        dtau = dt_gap / n_sub
        for _ in range(n_sub):
            f = biharmonic_backstep(f, m_cur, e, dtau)
            m_cur = f.metric
        m_cur = a.metric
        f = ScalarProfile(f.values, f.fiber_mode, m_cur)
        if track_mass:
            drift = max(drift, abs(f.dv_mass() - mass0) / scale)
    m0 = samples[0].metric
    lambda_0_bound = dirichlet_energy(f, m0)
    lambda_0_true = lambda1(m0).lambda1
    return EigenDecayReport(
        lambda_T=lambda_T,
        lambda_0_bound=lambda_0_bound,
        lambda_0_true=lambda_0_true,
        mass_drift=drift,
        sobolev_A=float(sobolev_A),
        epsilon=flow.flow_energy(m0),
    )


DECAY_REPORT_FIELDS = (
    "lambda_T",
    "lambda_0_bound",
    "lambda_0_true",
    "slack",
    "mass_drift",
    "sobolev_A",
    "epsilon",
)


def write_decay_report(report: EigenDecayReport, path) -> None:
    """Append the report as a flat key-value block to a report file."""
    lines = [f"{name} = {getattr(report, name):.17g}" for name in DECAY_REPORT_FIELDS]
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n\n")
