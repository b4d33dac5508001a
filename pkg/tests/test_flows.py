import numpy as np
import pytest

from ricci_s2 import entropy as ent
from ricci_s2 import flows
from ricci_s2 import geometry as geo
from ricci_s2.errors import ConfigurationError, DomainError, TransferError

FOUR_PI = 4 * np.pi


@pytest.fixture(scope="module")
def grid32():
    return geo.make_grid(32)


def p2(grid, eps=0.1):
    g, _ = ent.area_projection(geo.ConformalMetric(grid, eps * geo.legendre(2, grid.x)))
    return g


def state(g):
    return flows.with_diagnostics(flows.FlowState(0.0, g))


def test_round_is_fixed_by_normalized_flow(grid64):
    out = flows.ricci_step(state(geo.round_metric(grid64)), 1.0)
    assert np.max(np.abs(out.metric.phi)) < 1e-10
    assert out.time == 1.0


def test_round_is_fixed_by_modified_flow(grid64):
    g = geo.round_metric(grid64)
    out = flows.modified_ricci_step(state(g), 0.01)
    assert flows.metric_sup_distance(out.metric, g) < 1e-10


def test_constant_mode_area_ode(grid32):
    # phi = c is the scaled round metric; unprojected, dA/dt = A - 4 pi
    a0 = 1.2 * FOUR_PI
    g = geo.round_metric(grid32).scaled(1.2)
    cfg = flows.StepperConfig(area_projection=False, tol=1e-11)
    out = flows.ricci_step(flows.FlowState(0.0, g), 0.3, cfg)
    expected = FOUR_PI + (a0 - FOUR_PI) * np.exp(0.3)
    assert abs(geo.area(out.metric) - expected) < 1e-8 * expected
    assert np.ptp(out.metric.phi) < 1e-12


def test_p2_curvature_deviation_decreases(grid64):
    cfg = flows.StepperConfig(horizon=1.0, cadence=0.1)
    traj = flows.run_flow(p2(grid64), cfg)
    dev = traj.series("sup_R_dev")
    assert len(dev) == 11
    assert np.all(np.diff(dev) < 0)
    assert np.all(np.abs(traj.series("area") - FOUR_PI) < 1e-10)


def test_projection_keeps_area_and_reports_drift(grid32):
    g = geo.round_metric(grid32).scaled(1.3)
    projected, drift = flows.area_projection(g)
    assert abs(geo.area(projected) - FOUR_PI) < 1e-12
    assert abs(drift - 0.3) < 1e-12
    _, none = flows.area_projection(geo.round_metric(grid32))
    assert abs(none) < 1e-14


def test_step_drift_is_small(grid64):
    stats = flows._StepStats()
    flows.ricci_step(state(p2(grid64)), 0.5, stats=stats)
    assert stats.max_drift < 1e-8
    assert stats.accepted > 0


def test_modified_velocity_trace_identity(grid64, rng):
    g = p2(grid64)
    res = ent.minimize_w(g)
    f = res.minimizer_f
    v = flows.modified_velocity(g, f)
    # Ric = (R/2) g in two dimensions
    expected = 2.0 - geo.scalar_curvature(g) - geo.laplacian(g, f)
    assert np.max(np.abs(geo.tensor_trace(g, v) - expected)) < 1e-9


def test_modified_flow_area_identity(grid64):
    # d Area / dt = int (1 - R/2 - Lap f / 2) dV = Area - 4 pi
    g = geo.warped_from_conformal(p2(grid64)).scaled(1.2)
    cfg = flows.StepperConfig(area_projection=False)
    out = flows.modified_ricci_step(flows.FlowState(0.0, g), 0.01, cfg)
    expected = FOUR_PI + (1.2 * FOUR_PI - FOUR_PI) * np.exp(0.01)
    assert abs(geo.area(out.metric) - expected) < 1e-8


def test_modified_flow_keeps_area_when_projected(grid64):
    g = geo.warped_from_conformal(p2(grid64))
    stats = flows._StepStats()
    out = flows.modified_ricci_step(state(g), 0.01, stats=stats)
    assert abs(geo.area(out.metric) - FOUR_PI) < 1e-12
    assert stats.max_drift < 1e-8


def test_run_from_round_converges_immediately(grid32):
    traj = flows.run_flow(geo.round_metric(grid32))
    assert traj.termination == "converged"
    assert len(traj.states) == 1


def test_refinement_agrees(grid32, grid64):
    cfg = flows.StepperConfig(horizon=0.5, cadence=0.5)
    a = flows.run_flow(p2(grid32), cfg).states[-1].metric
    b = flows.run_flow(p2(grid64), cfg).states[-1].metric
    assert np.max(np.abs(grid64.interpolate(b.phi, grid32.x) - a.phi)) < 1e-6


def test_explicit_and_semi_implicit_agree(grid32):
    g = p2(grid32)
    a = flows.ricci_step(state(g), 0.2, flows.StepperConfig(method="explicit"))
    b = flows.ricci_step(state(g), 0.2)
    assert np.max(np.abs(a.metric.phi - b.metric.phi)) < 1e-7


def test_transfer_at_round_is_identity(grid32):
    g = geo.round_metric(grid32)
    cfg = flows.StepperConfig(horizon=0.2, cadence=0.1, tol_R=1e-300, tol_grad=1e-300)
    traj = flows.run_flow(g, cfg)
    moved = flows.gauge_transfer(traj)
    assert len(moved.states) == len(traj.states) == 3
    for s in moved.states:
        assert flows.metric_sup_distance(s.metric, g) < 1e-10


def test_transfer_needs_normalized_trajectory(grid32):
    traj = flows.Trajectory(kind=flows.MODIFIED)
    with pytest.raises(TransferError):
        flows.gauge_transfer(traj)


def test_normalized_flow_rejects_warped_input(grid32):
    w = geo.warped_from_conformal(geo.round_metric(grid32))
    with pytest.raises(DomainError):
        flows.run_flow(w)
    with pytest.raises(DomainError):
        flows.ricci_step(flows.FlowState(0.0, w), 0.1)


def test_unknown_flow_kind(grid32):
    with pytest.raises(ConfigurationError):
        flows.run_flow(geo.round_metric(grid32), kind="backwards")


@pytest.mark.parametrize("kwargs", [{"tol": 0.0}, {"tol": 1e-16}, {"safety": 1.5},
                                    {"dt_min": 1.0, "dt_max": 0.1}, {"method": "rk4"},
                                    {"horizon": -1.0}])
def test_stepper_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        flows.StepperConfig(**kwargs)


def test_jacobian_matches_finite_differences(grid32, rng):
    phi = 0.1 * geo.legendre(2, grid32.x) + 0.02 * rng.standard_normal(32) * grid32.sin_sq
    J = flows.normalized_jacobian(grid32, phi)
    e = np.zeros(32)
    e[7] = 1.0
    h = 1e-6
    fd = (flows.normalized_rhs(grid32, phi + h * e) - flows.normalized_rhs(grid32, phi - h * e)) / (2 * h)
    assert np.max(np.abs(J[:, 7] - fd)) < 1e-6 * max(1.0, np.max(np.abs(fd)))


def test_mu_nondecreasing_along_short_run(grid64):
    cfg = flows.StepperConfig(horizon=0.5, cadence=0.05)
    mu = flows.run_flow(p2(grid64, 0.2), cfg).series("mu")
    assert np.min(np.diff(mu)) > -1e-10
