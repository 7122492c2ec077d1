"""Flow tests: inner-product oracles, exact-adjoint gradient checks, step
and run behavior, structural identities, and residual monitors."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from l2flow import _kernels, flow, geometry as geo, presets, products
from l2flow.errors import (
    ConvergenceFailure,
    DegenerateFiber,
    ShapeMismatch,
    ValidationError,
)

PI = math.pi


def conformal_direction(m):
    """The variation generated by scaling the metric tensor itself."""
    return flow.TangentField(0.5 * m.phi.copy(), 0.5 * m.psi.copy())


def admissible_direction(m, rng):
    """Random tangent restricted to the class the Riesz gradient lives in."""
    hphi = rng.standard_normal(m.n)
    hpsi = rng.standard_normal(m.n)
    if m.is_sphere:
        hpsi[0] = hpsi[-1] = 0.0
        hphi[0] = m.phi[0] / m.phi[1] * hphi[1]
        hphi[-1] = m.phi[-1] / m.phi[-2] * hphi[-2]
    return flow.TangentField(hphi, hpsi)


def fd_directional(m, h, eps):
    fp = flow.flow_energy(m.with_profiles(m.phi + eps * h.dphi, m.psi + eps * h.dpsi))
    fm = flow.flow_energy(m.with_profiles(m.phi - eps * h.dphi, m.psi - eps * h.dpsi))
    return (fp - fm) / (2.0 * eps)


# ---------------------------------------------------------------------------
# functional oracles
# ---------------------------------------------------------------------------


def test_flow_functionals_round_sphere_values():
    m = presets.round_s3(201)
    assert flow.flow_volume(m) == pytest.approx(2 * PI**2, rel=1e-12)
    assert flow.flow_energy(m) == pytest.approx(12 * PI**2, rel=1e-4)


def test_flow_energy_second_order_convergence():
    exact = 12 * PI**2
    errs = [abs(flow.flow_energy(presets.round_s3(n)) - exact) for n in (101, 201, 401)]
    assert errs[0] / errs[1] >= 3.5
    assert errs[1] / errs[2] >= 3.5


def test_flat_tube_energy_exact():
    m = presets.warped_tube(64, psi0=2.0)
    assert flow.flow_energy(m) == pytest.approx(2 * PI, rel=1e-14)
    assert flow.flow_volume(m) == pytest.approx(16 * PI, rel=1e-14)


@settings(max_examples=20, deadline=None)
@given(lam=st.floats(min_value=0.4, max_value=2.5))
def test_functional_scaling_laws(lam):
    m = presets.random_tube(n_nodes=32, seed=7, rough=0.08)
    ms = geo.scaled(m, lam)
    assert flow.flow_energy(ms) == pytest.approx(flow.flow_energy(m) / lam, rel=1e-11)
    assert flow.flow_volume(ms) == pytest.approx(lam**3 * flow.flow_volume(m), rel=1e-11)


# ---------------------------------------------------------------------------
# inner product oracles
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "factory",
    [lambda: presets.warped_tube(48), lambda: presets.round_s3(65)],
    ids=["tube", "sphere"],
)
def test_inner_product_conformal_norm_is_three_volumes(factory):
    # the scaling direction has |dg|^2 = n = 3 pointwise, so its squared
    # norm integrates to exactly three volumes
    m = factory()
    c = conformal_direction(m)
    assert flow.l2_inner(c, c, m) == pytest.approx(3 * flow.flow_volume(m), rel=1e-12)


def test_inner_product_pure_gauge_and_pure_fiber_weights():
    m = presets.warped_tube(48)
    vol = flow.flow_volume(m)
    zero = np.zeros(m.n)
    gauge = flow.TangentField(m.phi.copy(), zero.copy())
    fiber = flow.TangentField(zero.copy(), m.psi.copy())
    assert flow.l2_inner(gauge, gauge, m) == pytest.approx(4 * vol, rel=1e-12)
    assert flow.l2_inner(fiber, fiber, m) == pytest.approx(8 * vol, rel=1e-12)
    assert flow.l2_inner(gauge, fiber, m) == 0.0


def test_inner_product_symmetric_and_bilinear():
    m = presets.random_tube(n_nodes=40, seed=11)
    rng = np.random.default_rng(5)
    h = admissible_direction(m, rng)
    k = admissible_direction(m, rng)
    w = admissible_direction(m, rng)
    assert flow.l2_inner(h, k, m) == flow.l2_inner(k, h, m)
    combo = flow.TangentField(2.5 * h.dphi + w.dphi, 2.5 * h.dpsi + w.dpsi)
    lhs = flow.l2_inner(combo, k, m)
    rhs = 2.5 * flow.l2_inner(h, k, m) + flow.l2_inner(w, k, m)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_inner_product_shape_mismatch():
    m = presets.warped_tube(48)
    short = flow.TangentField(np.ones(32), np.ones(32))
    good = flow.TangentField(np.ones(48), np.ones(48))
    with pytest.raises(ShapeMismatch):
        flow.l2_inner(short, good, m)
    with pytest.raises(ShapeMismatch):
        flow.TangentField(np.ones(5), np.ones(6))


# ---------------------------------------------------------------------------
# gradient vs central finite differences (exact-adjoint check)
# ---------------------------------------------------------------------------

# flat and homogeneous states sit at the minimum of the bending term, where
# the third-derivative coefficient of the central difference is O(h^-4), so
# they get a smaller eps than generic curved states
GRADIENT_CASES = [
    ("round_sphere", lambda: presets.round_s3(65), 1e-7),
    ("round_sphere_full", lambda: presets.round_s3(65, curvature_norm="full"), 1e-7),
    ("dumbbell", lambda: presets.so3_dumbbell(65, neck_depth=0.5), 1e-7),
    ("deep_dumbbell", lambda: presets.so3_dumbbell(129, neck_depth=0.95), 1e-7),
    ("flat_tube", lambda: presets.warped_tube(48), 1e-8),
    ("hyperbolic_tube", lambda: presets.hyperbolic_tube(48), 1e-8),
    ("product_tube", lambda: presets.s2xs1(48), 1e-8),
    ("pinched_tube", lambda: presets.pinched_tube(128, min_psi=0.05), 1e-7),
    ("random_tube", lambda: presets.random_tube(48, seed=3), 1e-7),
]


@pytest.mark.parametrize(
    "factory,eps", [(f, e) for _, f, e in GRADIENT_CASES], ids=[c[0] for c in GRADIENT_CASES]
)
def test_gradient_matches_finite_differences(factory, eps):
    m = factory()
    g = flow.grad_energy(m)
    rng = np.random.default_rng(4242)
    for _ in range(4):
        h = admissible_direction(m, rng)
        lhs = flow.l2_inner(g, h, m)
        rhs = fd_directional(m, h, eps)
        assert lhs == pytest.approx(rhs, rel=1e-6)


def test_gradient_full_norm_is_twice_base_norm():
    mp = presets.random_tube(n_nodes=48, seed=9)
    mf = geo.from_profile(mp.topology, mp.fiber, mp.x, mp.phi, mp.psi, "full")
    gp = flow.grad_energy(mp)
    gf = flow.grad_energy(mf)
    np.testing.assert_allclose(gf.dphi, 2.0 * gp.dphi, rtol=1e-13)
    np.testing.assert_allclose(gf.dpsi, 2.0 * gp.dpsi, rtol=1e-13)


def test_gradient_degenerate_fiber_raises():
    x = np.linspace(0.0, 1.0, 33, endpoint=False)
    m = geo.WarpedMetric(
        geo.Topology.CIRCLE_PRODUCT,
        geo.ROUND_S2_FIBER,
        x,
        np.ones(33),
        np.full(33, 1e-12),
    )
    with pytest.raises(DegenerateFiber):
        flow.grad_energy(m)


@settings(max_examples=20, deadline=None)
@given(lam=st.floats(min_value=0.5, max_value=2.0))
def test_gradient_scaling_homogeneity(lam):
    # velocities carry dimension length / time = lambda / lambda^4
    m = presets.random_tube(n_nodes=32, seed=1, rough=0.08)
    g = flow.grad_energy(m)
    gs = flow.grad_energy(geo.scaled(m, lam))
    tol = 1e-11 * max(np.abs(g.dphi).max(), np.abs(g.dpsi).max())
    np.testing.assert_allclose(gs.dphi, g.dphi / lam**3, rtol=1e-9, atol=tol)
    np.testing.assert_allclose(gs.dpsi, g.dpsi / lam**3, rtol=1e-9, atol=tol)


def test_round_sphere_gradient_is_conformal_in_bulk():
    # on the round sphere the gradient is a multiple of the metric up to
    # discretization error; the multiple matches the scalar scale ODE
    expected = -0.5 * products.sphere_rate_coefficient(3, "PaperLiteral")
    devs = {}
    for n in (65, 129):
        m = presets.round_s3(n)
        g = flow.grad_energy(m)
        margin = max(5, n // 8)
        core = slice(margin, n - margin)
        dev_phi = np.abs(g.dphi[core] / m.phi[core] - expected).max()
        dev_psi = np.abs(g.dpsi[core] / m.psi[core] - expected).max()
        devs[n] = max(dev_phi, dev_psi)
    assert devs[65] < 0.1
    assert devs[129] < 0.03
    assert devs[65] / devs[129] >= 3.0


# ---------------------------------------------------------------------------
# structural pairing identities of the discretization
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "factory",
    [
        lambda: presets.round_s3(65),
        lambda: presets.so3_dumbbell(65, neck_depth=0.5),
        lambda: presets.random_tube(48, seed=2),
        lambda: presets.hyperbolic_tube(48),
    ],
    ids=["sphere", "dumbbell", "random_tube", "hyperbolic_tube"],
)
def test_gradient_conformal_pairing_is_minus_half_energy(factory):
    # scaling homogeneity of the discrete energy makes this algebraic
    m = factory()
    g = flow.grad_energy(m)
    c = conformal_direction(m)
    F = flow.flow_energy(m)
    assert flow.l2_inner(g, c, m) == pytest.approx(-0.5 * F, rel=1e-12)


def test_velocity_volume_rate_identity():
    # dVol(h) = <h, c> / 2, so the unnormalized flow obeys dVol/dt = F/4
    # exactly at the discrete level
    m = presets.so3_dumbbell(65, neck_depth=0.5)
    v = flow.velocity(m)
    c = conformal_direction(m)
    F = flow.flow_energy(m)
    assert 0.5 * flow.l2_inner(v, c, m) == pytest.approx(0.25 * F, rel=1e-12)


def test_velocity_normalized_volume_stationary():
    m = presets.random_tube(48, seed=6)
    v = flow.velocity(m, normalized=True)
    c = conformal_direction(m)
    F = flow.flow_energy(m)
    assert abs(flow.l2_inner(v, c, m)) <= 1e-12 * F


def test_velocity_is_negative_gradient():
    m = presets.random_tube(48, seed=6)
    g = flow.grad_energy(m)
    v = flow.velocity(m)
    np.testing.assert_array_equal(v.dphi, -g.dphi)
    np.testing.assert_array_equal(v.dpsi, -g.dpsi)


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------


def test_step_decreases_energy_and_grows_volume():
    m = presets.random_tube(48, seed=8, rough=0.08)
    cfg = flow.FlowConfig(t_end=1.0)
    m2, e, dt = flow.step(m, cfg)
    assert dt > 0
    assert flow.flow_energy(m2) < flow.flow_energy(m)
    assert flow.flow_volume(m2) > flow.flow_volume(m)


def test_step_realized_field_reconstructs_state():
    m = presets.warped_tube(48)
    cfg = flow.FlowConfig(t_end=1.0)
    m2, e, dt = flow.step(m, cfg)
    np.testing.assert_allclose(m.phi + dt * e.dphi, m2.phi, rtol=1e-12)
    np.testing.assert_allclose(m.psi + dt * e.dpsi, m2.psi, rtol=1e-12)


def test_step_normalized_guards_volume():
    m = presets.random_tube(48, seed=8, rough=0.08)
    cfg = flow.FlowConfig(t_end=1.0, normalized=True)
    vol = flow.flow_volume(m)
    m2, _, _ = flow.step(m, cfg)
    assert abs(flow.flow_volume(m2) - vol) <= 2e-8 * vol


def test_step_rk2_scheme_descends():
    m = presets.random_tube(48, seed=8, rough=0.08)
    cfg = flow.FlowConfig(t_end=1.0, scheme="rk2")
    m2, _, dt = flow.step(m, cfg)
    assert dt > 0
    assert flow.flow_energy(m2) < flow.flow_energy(m)


def test_step_raises_on_degenerate_fiber_floor():
    m = presets.pinched_tube(64, min_psi=0.05)
    cfg = flow.FlowConfig(t_end=1.0, psi_floor=0.2)
    with pytest.raises(DegenerateFiber):
        flow.step(m, cfg)


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------


def test_run_tube_reaches_end_with_strict_descent():
    m = presets.pinched_tube(32, min_psi=0.6, bulge=0.5)
    cfg = flow.FlowConfig(t_end=1e-3, regrid_every=0, record_every=5)
    traj = flow.run(m, cfg)
    assert traj.termination is flow.Termination.REACHED_END
    assert traj.meta["detail"] == "reached t_end"
    ts = traj.times()
    assert ts[-1] >= cfg.t_end
    fs = [s.record.F for s in traj.samples]
    assert all(b < a for a, b in zip(fs, fs[1:]))
    vols = [s.record.Vol for s in traj.samples]
    assert all(b > a for a, b in zip(vols, vols[1:]))
    assert all(s.dt > 0 for s in traj.samples[1:])
    assert math.isnan(traj.samples[0].dt)


def test_run_sphere_with_regridding_stays_admissible():
    m = presets.round_s3(65)
    cfg = flow.FlowConfig(t_end=2e-4, regrid_every=50, record_every=400)
    traj = flow.run(m, cfg)
    assert traj.termination is flow.Termination.REACHED_END
    assert any(s.regridded for s in traj.samples[1:])
    fs = [s.record.F for s in traj.samples]
    # regridding may move F by its tolerance, never more
    assert all(b <= a * (1 + 2 * cfg.regrid_tol) for a, b in zip(fs, fs[1:]))
    assert fs[-1] < fs[0]
    vols = [s.record.Vol for s in traj.samples]
    assert vols[-1] > vols[0]
    for s in traj.samples:
        assert s.metric.psi[0] == 0.0 and s.metric.psi[-1] == 0.0


def test_run_dumbbell_descends_through_neck():
    m = presets.so3_dumbbell(65, neck_depth=0.5)
    cfg = flow.FlowConfig(t_end=5e-5, regrid_every=500, record_every=100)
    traj = flow.run(m, cfg)
    assert traj.termination is flow.Termination.REACHED_END
    fs = [s.record.F for s in traj.samples]
    assert fs[-1] < fs[0]
    for a, b in zip(traj.samples, traj.samples[1:]):
        if not b.regridded:
            assert b.record.F <= a.record.F


def test_run_stops_at_riem_ceiling():
    m = presets.pinched_tube(64, min_psi=0.05)
    cfg = flow.FlowConfig(t_end=1.0, riem_ceiling=10.0)
    traj = flow.run(m, cfg)
    assert traj.termination is flow.Termination.SINGULARITY_DETECTED
    assert traj.meta["detail"] == "riem_sq ceiling exceeded"


def test_run_stops_at_psi_floor():
    m = presets.pinched_tube(64, min_psi=0.05)
    cfg = flow.FlowConfig(t_end=1.0, psi_floor=0.2, riem_ceiling=1e30)
    traj = flow.run(m, cfg)
    assert traj.termination is flow.Termination.SINGULARITY_DETECTED
    assert traj.meta["detail"] == "fiber radius crossed psi_floor"


def test_run_exhausted_step_budget_raises():
    m = presets.warped_tube(32)
    cfg = flow.FlowConfig(t_end=10.0, max_steps=5)
    with pytest.raises(ConvergenceFailure):
        flow.run(m, cfg)


def test_termination_labels_are_frozen():
    assert flow.Termination.REACHED_END.value == "ReachedEnd"
    assert flow.Termination.SINGULARITY_DETECTED.value == "SingularityDetected"
    assert flow.Termination.STEP_UNDERFLOW.value == "StepUnderflow"


# ---------------------------------------------------------------------------
# residual monitors
# ---------------------------------------------------------------------------


def test_residuals_small_and_first_order_in_dt():
    m = presets.pinched_tube(32, min_psi=0.6, bulge=0.5)
    meds = {}
    for safety in (0.4, 0.2):
        cfg = flow.FlowConfig(
            t_end=1.5e-3, dt_safety=safety, regrid_every=0, record_every=1
        )
        rep = flow.monitor_residuals(flow.run(m, cfg))
        assert rep.vol_rate_median <= 1e-2
        assert rep.dissipation_median <= 1e-2
        meds[safety] = rep
    assert 1.5 <= meds[0.4].vol_rate_median / meds[0.2].vol_rate_median <= 2.7
    assert 1.5 <= meds[0.4].dissipation_median / meds[0.2].dissipation_median <= 2.7


def test_normalized_run_conserves_volume_and_descends_ftilde():
    m = presets.random_tube(n_nodes=64, seed=2, rough=0.05)
    cfg = flow.FlowConfig(t_end=2e-3, normalized=True, regrid_every=0, record_every=20)
    traj = flow.run(m, cfg)
    rep = flow.monitor_residuals(traj)
    assert rep.vol_drift_rate <= 1e-6
    assert rep.max_ftilde_violation <= 1e-10
    fts = [s.record.F_tilde for s in traj.samples]
    assert fts[-1] < fts[0]


def test_monitor_requires_three_samples():
    m = presets.warped_tube(32)
    cfg = flow.FlowConfig(t_end=1e-5, record_every=10_000)
    traj = flow.run(m, cfg)
    assert traj.n_samples == 2
    with pytest.raises(ValidationError):
        flow.monitor_residuals(traj)


def test_regridding_leaves_observables_unchanged():
    m = presets.random_tube(n_nodes=48, seed=5, rough=0.05)
    finals = {}
    for regrid in (0, 40):
        cfg = flow.FlowConfig(t_end=2e-3, regrid_every=regrid, record_every=100)
        last = flow.run(m, cfg).samples[-1].record
        finals[regrid] = (last.Vol, last.F)
    assert finals[0][0] == pytest.approx(finals[40][0], rel=1e-9)
    assert finals[0][1] == pytest.approx(finals[40][1], rel=1e-5)


# ---------------------------------------------------------------------------
# csv output
# ---------------------------------------------------------------------------


def test_write_flow_csv_layout(tmp_path):
    m = presets.warped_tube(32)
    cfg = flow.FlowConfig(t_end=1e-5, record_every=5)
    traj = flow.run(m, cfg)
    path = tmp_path / "run.csv"
    flow.write_flow_csv(traj, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == ",".join(flow.FLOW_CSV_FIELDS)
    assert len(lines) == traj.n_samples + 1
    first = lines[1].split(",")
    cols = dict(zip(flow.FLOW_CSV_FIELDS, first))
    assert cols["dt"] == "nan"
    assert cols["lambda1"] == "nan"
    assert float(cols["Vol"]) == pytest.approx(traj.samples[0].record.Vol, rel=1e-15)
    assert float(cols["t"]) == 0.0


# ---------------------------------------------------------------------------
# configuration validation
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        {"t_end": 0.0},
        {"t_end": -1.0},
        {"t_end": 1.0, "dt_safety": 0.0},
        {"t_end": 1.0, "regrid_every": -1},
        {"t_end": 1.0, "record_every": 0},
        {"t_end": 1.0, "max_steps": 0},
        {"t_end": 1.0, "riem_ceiling": 0.0},
        {"t_end": 1.0, "psi_floor": -1.0},
        {"t_end": 1.0, "regrid_tol": 0.0},
        {"t_end": 1.0, "scheme": "leapfrog"},
    ],
)
def test_flow_config_rejects_bad_fields(kwargs):
    with pytest.raises(ValidationError):
        flow.FlowConfig(**kwargs)


# ---------------------------------------------------------------------------
# kernel fallback equivalence
# ---------------------------------------------------------------------------


@pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="no jit available")
def test_kernel_python_fallback_matches_compiled():
    m = presets.so3_dumbbell(49, neck_depth=0.5)
    fa, ks = m.fiber.fiber_area, float(m.fiber.k_sigma)
    args = (m.phi, m.psi, m.hx, fa, ks, 1.0, True)
    S, R = np.zeros(m.n), np.zeros(m.n)
    Sp, Rp = np.zeros(m.n), np.zeros(m.n)
    jit_out = _kernels._functionals(*args, S, R)
    py_out = _kernels._functionals.py_func(*args, Sp, Rp)
    np.testing.assert_allclose(jit_out, py_out, rtol=1e-13)
    work = _kernels.make_work(m.n)
    gphi, gpsi = np.zeros(m.n), np.zeros(m.n)
    _kernels._gradient(*args, work[0], work[1], work[2], work[3], work[4], gphi, gpsi)
    workp = _kernels.make_work(m.n)
    gphip, gpsip = np.zeros(m.n), np.zeros(m.n)
    _kernels._gradient.py_func(
        *args, workp[0], workp[1], workp[2], workp[3], workp[4], gphip, gpsip
    )
    np.testing.assert_allclose(gphi, gphip, rtol=1e-13)
    np.testing.assert_allclose(gpsi, gpsip, rtol=1e-13)
