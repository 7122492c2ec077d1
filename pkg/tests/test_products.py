"""Tests for the homogeneous product ODE reductions."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l2flow import products as P
from l2flow.errors import (
    PastSingularTime,
    ShapeMismatch,
    UnsupportedState,
    ValidationError,
)

# ---------------------------------------------------------------------------
# curvature constants
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("m", range(2, 8))
def test_unit_sphere_constant_matches_closed_form(m):
    assert P.riem_sq_unit_sphere(m) == 2 * m * (m - 1)


def test_unit_s5_invariants():
    inv = P.product_invariants(P.round_sphere(5))
    assert inv.riem_sq == 40.0
    assert inv.check_r == (8.0,)
    assert inv.n == 5


def test_flat_factor_contributes_nothing():
    s = P.sphere_circle(5, 1.0, 7.0)
    inv = P.product_invariants(s)
    assert inv.riem_sq == 40.0
    assert inv.check_r[1] == 0.0
    assert inv.n == 6


def test_s2_s1_invariants():
    s = P.sphere_circle(2, 3.0, 0.5)
    inv = P.product_invariants(s)
    assert inv.riem_sq == pytest.approx(4.0 / 9.0, rel=1e-15)
    assert inv.check_r[0] == pytest.approx(2.0 / 3.0, rel=1e-15)


@given(
    scales=st.lists(st.floats(0.2, 5.0), min_size=1, max_size=3),
    dims=st.lists(st.integers(2, 6), min_size=1, max_size=3),
)
def test_riem_sq_sums_over_factors(scales, dims):
    k = min(len(scales), len(dims))
    factors = tuple(P.Factor(d, P.Curvature.SPHERE, a) for d, a in zip(dims, scales))
    inv = P.product_invariants(P.ProductState(factors[:k]))
    expected = sum(2 * d * (d - 1) / a**2 for d, a in zip(dims[:k], scales[:k]))
    assert inv.riem_sq == pytest.approx(expected, rel=1e-14)


# ---------------------------------------------------------------------------
# state validation
# ---------------------------------------------------------------------------


def test_factor_rejects_bad_dim():
    with pytest.raises(ValidationError):
        P.Factor(0, P.Curvature.FLAT, 1.0)


def test_factor_rejects_one_sphere():
    with pytest.raises(ValidationError):
        P.Factor(1, P.Curvature.SPHERE, 1.0)


def test_factor_rejects_nonpositive_scale():
    with pytest.raises(ValidationError):
        P.Factor(2, P.Curvature.SPHERE, 0.0)


def test_state_rejects_total_dim_one():
    with pytest.raises(ValidationError):
        P.ProductState((P.Factor(1, P.Curvature.FLAT, 1.0),))


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------


def test_round_s3_literal_rate_is_plus_one():
    rep = P.product_rhs(P.round_sphere(3), "PaperLiteral")
    assert rep.rates[0] == 1.0
    assert rep.mode_factor == 2.0


def test_round_s4_static_in_both_modes():
    for mode in P.MODES:
        rep = P.product_rhs(P.round_sphere(4, 1.7), mode)
        assert rep.rates[0] == 0.0


def test_s5_s1_block_rates():
    s = P.sphere_circle(5, 1.0, 1.0)
    gd = P.product_rhs(s, "GradientDerived")
    pl = P.product_rhs(s, "PaperLiteral")
    assert gd.rates == pytest.approx([-4.0, -20.0], rel=0, abs=0)
    assert pl.rates == pytest.approx([-2.0, -10.0], rel=0, abs=0)
    assert gd.mode_factor == 2.0


def test_modes_proportional_with_constant_two():
    for state in (
        P.round_sphere(2, 0.7),
        P.round_sphere(6, 2.2),
        P.sphere_circle(5, 1.4, 0.3),
    ):
        gd = P.product_rhs(state, "GradientDerived").rates
        pl = P.product_rhs(state, "PaperLiteral").rates
        assert np.all(gd == 2.0 * pl)


def test_literal_refuses_undisplayed_configs():
    with pytest.raises(UnsupportedState):
        P.product_rhs(P.sphere_circle(2, 4.0, 1.0 / 16.0), "PaperLiteral")
    with pytest.raises(UnsupportedState):
        P.product_rhs(P.sphere_circle(5, 1.0, 1.0, flat_dim=2), "PaperLiteral")
    with pytest.raises(UnsupportedState):
        P.integrate(P.sphere_circle(3, 1.0, 1.0), "PaperLiteral", t_end=0.1)


def test_rhs_rejects_unknown_mode():
    with pytest.raises(ValidationError):
        P.product_rhs(P.round_sphere(3), "Midpoint")


def test_mode_factor_unreported_off_menu():
    rep = P.product_rhs(P.sphere_circle(2, 4.0, 1.0 / 16.0), "GradientDerived")
    assert rep.mode_factor is None


@given(lam=st.floats(0.3, 3.0))
def test_rates_scale_inversely(lam):
    s = P.sphere_circle(5, 1.1, 0.9)
    base = P.product_rhs(s).rates
    scaled = P.product_rhs(s.with_scales(lam * s.scales, 0.0)).rates
    assert scaled == pytest.approx(base / lam, rel=1e-12)


# ---------------------------------------------------------------------------
# closed-form spheres
# ---------------------------------------------------------------------------


def test_sign_table_both_modes():
    for mode in P.MODES:
        signs = [math.copysign(1, P.sphere_rate_coefficient(n, mode))
                 if P.sphere_rate_coefficient(n, mode) != 0 else 0
                 for n in range(2, 8)]
        assert signs == [1, 1, 0, -1, -1, -1]


def test_analytic_s2_literal():
    t = np.linspace(0.0, 3.0, 7)
    a = P.analytic_sphere(2, 1.0, t, "PaperLiteral")
    assert a == pytest.approx(np.sqrt(1.0 + 2.0 * t), rel=1e-15)


def test_analytic_s4_constant():
    assert P.analytic_sphere(4, 1.3, 100.0) == 1.3


def test_s5_literal_lifespan_is_one():
    assert P.sphere_lifespan(5, 2.0, "PaperLiteral") == 1.0


def test_analytic_raises_at_and_past_extinction():
    with pytest.raises(PastSingularTime):
        P.analytic_sphere(5, 2.0, 1.0, "PaperLiteral")
    with pytest.raises(PastSingularTime):
        P.analytic_sphere(5, 2.0, np.array([0.5, 1.5]), "PaperLiteral")


def test_analytic_rejects_bad_scale():
    with pytest.raises(ValidationError):
        P.analytic_sphere(3, -1.0, 0.5)


# ---------------------------------------------------------------------------
# integration vs closed form
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("mode", P.MODES)
@pytest.mark.parametrize("n", range(2, 8))
def test_integrate_matches_analytic(n, mode):
    life = P.sphere_lifespan(n, 1.0, mode)
    t_end = 0.9 * life if math.isfinite(life) else 1.0
    te = np.linspace(0.0, t_end, 40)
    traj = P.integrate(P.round_sphere(n), mode, t_end=t_end, t_eval=te)
    exact = P.analytic_sphere(n, 1.0, te, mode)
    rel = np.max(np.abs(traj.scales[:, 0] - exact) / exact)
    assert rel <= 1e-8
    assert traj.termination is P.Termination.REACHED_END


def test_s4_drift_tiny():
    traj = P.integrate(P.round_sphere(4, 1.7), "GradientDerived", t_end=5.0)
    assert np.max(np.abs(traj.scales[:, 0] - 1.7)) <= 1e-12


@pytest.mark.parametrize("n", [2, 5])
def test_scale_squared_affine_in_time(n):
    life = P.sphere_lifespan(n, 1.0, "GradientDerived")
    t_end = 0.999 * life if math.isfinite(life) else 2.0
    traj = P.integrate(P.round_sphere(n), "GradientDerived", t_end=t_end, rtol=1e-12)
    a2 = traj.scales[:, 0] ** 2
    coef = np.polyfit(traj.t, a2, 1)
    res = np.max(np.abs(np.polyval(coef, traj.t) - a2)) / np.max(a2)
    assert res <= 1e-10


def test_shrinking_sphere_reaches_singularity():
    traj = P.integrate(P.round_sphere(5, 1.3), "GradientDerived", t_end=100.0)
    assert traj.termination is P.Termination.SINGULARITY_DETECTED
    T = P.sphere_lifespan(5, 1.3, "GradientDerived")
    assert abs(traj.t_sing - T) / T < 1e-6


def test_riem_ceiling_trips():
    traj = P.integrate(
        P.round_sphere(5), "GradientDerived", t_end=10.0, riem_ceiling=100.0
    )
    assert traj.termination is P.Termination.SINGULARITY_DETECTED
    rm_final = math.sqrt(traj.riem_sq[-1])
    assert rm_final == pytest.approx(100.0, rel=1e-6)


def test_integrate_rejects_nonpositive_horizon():
    with pytest.raises(ValidationError):
        P.integrate(P.round_sphere(3), t_end=0.0)


def test_trajectory_meta_records_acceptance_parameters():
    traj = P.integrate(P.round_sphere(3), t_end=0.1)
    assert traj.meta["rtol"] == P.RTOL_DEFAULT
    assert traj.meta["scale_floor"] == P.SCALE_FLOOR_DEFAULT
    assert traj.meta["riem_ceiling"] == P.RIEM_CEILING_DEFAULT
    assert traj.state_at(0).factors[0].scale == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# conserved ratio and collapse
# ---------------------------------------------------------------------------


def _s5_s1_run(mode, frac=0.99, a0=1.0, b0=1.0):
    T = P.sphere_lifespan(5, a0, mode)
    te = np.linspace(0.0, frac * T, 200)
    return P.integrate(P.sphere_circle(5, a0, b0), mode, t_end=frac * T, t_eval=te)


@pytest.mark.parametrize("mode", P.MODES)
def test_ratio_b_over_a5_conserved(mode):
    rep = P.conserved_ratio(_s5_s1_run(mode), 5.0)
    assert rep.max_drift <= 1e-8
    assert rep.p == 5.0


def test_wrong_exponent_drift_grows_toward_extinction():
    early = P.conserved_ratio(_s5_s1_run("PaperLiteral", frac=0.9), 4.0).max_drift
    late = P.conserved_ratio(_s5_s1_run("PaperLiteral", frac=0.99), 4.0).max_drift
    assert late > early > 0.1


def test_drift_minimizing_exponent_is_five():
    traj = _s5_s1_run("PaperLiteral")
    drifts = {p: P.conserved_ratio(traj, p).max_drift for p in (4.0, 4.5, 5.0, 5.5, 6.0)}
    assert min(drifts, key=drifts.get) == 5.0


def test_singular_time_matches_displayed_lifespan():
    a0 = 1.0
    c5 = P.riem_sq_unit_sphere(5)
    T = 10.0 * a0**2 / c5
    traj = P.integrate(P.sphere_circle(5, a0, 1.0), "PaperLiteral", t_end=2.0 * T)
    assert traj.termination is P.Termination.SINGULARITY_DETECTED
    assert abs(traj.t_sing - T) / T <= 0.01


@pytest.mark.parametrize("mode", P.MODES)
def test_collapse_scalar_decreases_to_near_zero(mode):
    series = P.collapse_scalar(_s5_s1_run(mode))
    assert np.all(np.diff(series) < 0)
    assert series[-1] <= 1e-2 * series[0]


def test_collapse_scalar_closed_form():
    traj = _s5_s1_run("PaperLiteral")
    a = traj.scales[:, 0]
    c5 = P.riem_sq_unit_sphere(5)
    expected = math.pi * math.sqrt(c5) * a**4
    assert P.collapse_scalar(traj) == pytest.approx(expected, rel=1e-7)


def test_s2_s1_expander_grows_sphere():
    traj = P.integrate(P.sphere_circle(2, 4.0, 1.0 / 16.0), "GradientDerived", t_end=3.0)
    a = traj.scales[:, 0]
    assert np.all(np.diff(a) > 0)
    assert P.conserved_ratio(traj, -1.0).max_drift <= 1e-9
    series = P.collapse_scalar(traj)
    assert np.all(np.diff(series) < 0)


def test_ratio_requires_two_factor_shape():
    traj = P.integrate(P.round_sphere(3), t_end=0.1)
    with pytest.raises(ShapeMismatch):
        P.conserved_ratio(traj, 5.0)
    with pytest.raises(ShapeMismatch):
        P.collapse_scalar(traj)


def test_conserving_exponent():
    assert P.conserving_exponent(P.sphere_circle(5, 1.0, 1.0)) == 5.0
    assert P.conserving_exponent(P.sphere_circle(2, 1.0, 1.0)) == -1.0
    assert math.isnan(P.conserving_exponent(P.sphere_circle(4, 1.0, 1.0)))


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def test_trajectory_csv_roundtrip(tmp_path):
    traj = _s5_s1_run("PaperLiteral", frac=0.5)
    path = tmp_path / "traj.csv"
    P.write_trajectory_csv(traj, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,scale_0,scale_1,riem_sq,ratio_p,collapse_scalar,mode"
    assert len(lines) == traj.n_samples + 1
    cells = lines[5].split(",")
    i = 4
    assert float(cells[0]) == traj.t[i]
    assert float(cells[1]) == traj.scales[i, 0]
    assert float(cells[2]) == traj.scales[i, 1]
    assert float(cells[3]) == traj.riem_sq[i]
    assert cells[6] == "PaperLiteral"


def test_trajectory_csv_single_sphere_nan_columns(tmp_path):
    traj = P.integrate(P.round_sphere(3), t_end=0.1)
    path = tmp_path / "s3.csv"
    P.write_trajectory_csv(traj, path)
    row = path.read_text().splitlines()[1].split(",")
    assert row[2] != "nan"
    assert row[3] == "nan" and row[4] == "nan"
    assert row[5] == "GradientDerived"


@settings(max_examples=25)
@given(a0=st.floats(0.5, 2.5), frac=st.floats(0.1, 0.95))
def test_analytic_consistency_property(a0, frac):
    T = P.sphere_lifespan(5, a0, "GradientDerived")
    a = P.analytic_sphere(5, a0, frac * T, "GradientDerived")
    assert a == pytest.approx(a0 * math.sqrt(1.0 - frac), rel=1e-12)
