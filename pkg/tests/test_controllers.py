import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hkdelay.controllers import (
    CONSENSUS,
    DONE,
    STEERING,
    PointwiseConsensus,
    Steer,
    WaypointController,
    alpha_distributed,
    alpha_pointwise,
    build_waypoint_plan,
    consensus_distributed_control,
    consensus_pointwise_control,
    distributed_alphas,
    u_consensus_distributed,
    u_consensus_pointwise,
    u_steer,
)
from hkdelay.domain import (
    History,
    HKSystem,
    ModelParams,
    Trajectory,
    constant_delay,
    cucker_smale,
    linear_ramp,
    uniform_kernel,
)
from hkdelay.engine import IntegratorConfig, ModelKind, Window, integrate
from hkdelay.errors import CertificateViolationError, ControllerTimeoutError, DomainError

PHI = cucker_smale()


def system(n, dim=1, gamma=1.0, M=1.0, tau=1.0, kernel=None, a_inner=1.0, a_outer=2.0):
    p = ModelParams(n, dim, gamma, M, a_inner, a_outer, PHI.lipschitz)
    return HKSystem(p, linear_ramp(a_inner, a_outer), PHI, constant_delay(tau), kernel)


def const_traj(state, tau=1.0):
    return Trajectory.from_history(History.constant(np.asarray(state, float), tau), step=0.05)


# ------------------------------------------------------------ pointwise


def test_alpha_degenerate_sum():
    traj = const_traj(np.zeros((4, 1)))
    assert alpha_pointwise(traj, 0.0, system(3)) == pytest.approx(1 / 6)
    np.testing.assert_array_equal(u_consensus_pointwise(traj, 0.0, system(3)), [0.0])


def test_alpha_branches():
    traj = const_traj([[0.0], [1.0]])
    assert alpha_pointwise(traj, 0.0, system(1, M=10.0)) == pytest.approx(0.5 * 2**-1.5, rel=1e-15)
    assert alpha_pointwise(traj, 0.0, system(1, M=0.01)) == pytest.approx(0.01, rel=1e-15)


def test_u_consensus_pointwise_value():
    traj = const_traj([[0.0], [1.0]])
    u = u_consensus_pointwise(traj, 0.0, system(1, M=10.0))
    assert u[0] == pytest.approx(0.0625, rel=1e-14)  # phi(1)^2 / 2


def test_argmax_uses_current_time_lowest_index():
    sys_ = system(2, M=10.0)
    y = np.array([[0.0], [1.0], [-1.0]])  # tie at current time: agent 1 wins
    yd = np.array([[0.0], [0.2], [3.0]])
    _, alpha = consensus_pointwise_control(sys_, y, yd)
    assert alpha == pytest.approx(0.5 * min(PHI(0.2) / 2, 20 / 3.2))


# ---------------------------------------------------------- distributed


def test_alpha_distributed_examples():
    traj = const_traj(np.zeros((3, 1)))
    assert alpha_distributed(traj, 0.0, -0.5, system(2)) == pytest.approx(0.25)
    traj = const_traj([[0.0], [1.0]])
    assert alpha_distributed(traj, 0.0, -0.3, system(1, M=10.0)) == pytest.approx(0.5 * 2**-1.5)
    # second branch: sum of delayed distances 40, first branch larger
    y = np.array([[0.0], [1.0], [0.5]])
    ys = np.array([[[0.0], [0.5], [39.5]]])
    a = distributed_alphas(system(2), y, ys)
    assert PHI(0.5) / 2 > 0.05 and a[0] == pytest.approx(0.025)


def test_u_distributed_constant_matches_pointwise():
    state = [[0.1], [0.9], [-0.4], [0.3]]
    sys_ = system(3, kernel=uniform_kernel(1.0, 1.0))
    traj = const_traj(state)
    ud = u_consensus_distributed(traj, 0.0, sys_, IntegratorConfig(0.05))
    up = u_consensus_pointwise(traj, 0.0, sys_)
    np.testing.assert_allclose(ud, up, rtol=1e-13)
    np.testing.assert_array_equal(u_consensus_distributed(const_traj(np.ones((4, 1))), 0.0, sys_, IntegratorConfig(0.05)), 0.0)


# --------------------------------------------------------- admissibility

coords = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=300)
@given(
    st.integers(1, 8),
    st.integers(1, 3),
    st.floats(0.01, 5.0),
    st.floats(1e-3, 10.0),
    st.data(),
)
def test_admissibility_property(n, dim, gamma, M, data):
    sys_ = system(n, dim, gamma=gamma, M=M)
    y = data.draw(arrays(float, (n + 1, dim), elements=coords))
    yd = data.draw(arrays(float, (n + 1, dim), elements=coords))
    u, alpha = consensus_pointwise_control(sys_, y, yd)
    assert np.linalg.norm(u) <= M
    assert n * alpha <= 1.0
    m = data.draw(st.integers(2, 6))
    ys = data.draw(arrays(float, (m, n + 1, dim), elements=coords))
    w = np.full(m, 1.0 / m)
    ud, alphas = consensus_distributed_control(sys_, y, Window(np.linspace(0, 1, m), w, 1.0), ys)
    assert np.linalg.norm(ud) <= M
    assert np.all(n * alphas <= 1.0)


# -------------------------------------------------------------- steering


@pytest.mark.parametrize(
    "x0, xi, M, expected",
    [([4.0], [4.0], 2.0, [0.0]), ([0.0], [4.0], 2.0, [2.0]), ([3.0, 4.0], [0.0, 0.0], 1.0, [-0.6, -0.8])],
)
def test_u_steer(x0, xi, M, expected):
    np.testing.assert_allclose(u_steer(x0, xi, M), expected, rtol=1e-15)


def test_u_steer_dead_band():
    np.testing.assert_array_equal(u_steer([4.0 + 1e-7], [4.0], 1.0), [0.0])


def test_steer_reaches_target_at_rate_M():
    sys_ = system(2, M=2.0)
    hist = History.constant(np.array([[0.0], [0.3], [-0.2]]), 1.0)
    traj = integrate(sys_, Steer((4.0,)), hist, 3.0, IntegratorConfig(0.01))
    t = traj.times
    x0 = traj.states[:, 0, 0]
    moving = (t >= 0) & (t <= 2.0 - 1e-9)
    np.testing.assert_allclose(4.0 - x0[moving], 4.0 - 2.0 * t[moving], atol=1e-12)
    assert abs(traj.lookup(2.0)[0, 0] - 4.0) <= 1e-12
    assert np.all(np.abs(x0[t >= 2.0] - 4.0) <= 1e-12)


# ------------------------------------------------------------- waypoints


def test_build_plan_examples():
    assert len(build_waypoint_plan([1.0], [1.0], 1.0)) == 1
    plan = build_waypoint_plan([0.0], [4.0], 1.0)
    assert len(plan) == 17
    np.testing.assert_allclose(np.diff(np.asarray(plan.waypoints)[:, 0]), 0.25)
    plan = build_waypoint_plan([0.0, 0.0], [0.3, 0.4], 1.0)
    assert len(plan) == 3 and plan.spacing == pytest.approx(0.25)
    np.testing.assert_array_equal(plan.target, [0.3, 0.4])


@given(arrays(float, 2, elements=st.floats(-20, 20)), arrays(float, 2, elements=st.floats(-20, 20)), st.floats(0.1, 5))
def test_plan_spacing_property(a, b, delta):
    plan = build_waypoint_plan(a, b, delta)
    pts = np.asarray(plan.waypoints)
    assert np.all(np.linalg.norm(np.diff(pts, axis=0), axis=1) <= delta / 4 * (1 + 1e-12))
    np.testing.assert_array_equal(pts[-1], b)
    assert len(plan) - 1 == (math.ceil(4 * np.linalg.norm(b - a) / delta - 1e-12) if np.any(a != b) else 0)


def test_waypoint_already_at_target():
    sys_ = system(3)
    hist = History.constant(np.full((4, 1), 2.0), 1.0)
    traj = integrate(sys_, WaypointController((2.0,)), hist, 1.0, IntegratorConfig(0.05))
    assert traj.events[-1][1] == DONE and traj.events[-1][0] == 0.0
    np.testing.assert_array_equal(traj.controls[traj.forward()], 0.0)


def test_waypoint_halanay_violation():
    sys_ = system(3, gamma=0.1)
    hist = History.constant(np.zeros((4, 1)), 1.0)
    with pytest.raises(CertificateViolationError):
        integrate(sys_, WaypointController((1.0,)), hist, 1.0, IntegratorConfig(0.05))


def test_waypoint_timeout():
    sys_ = system(2)
    # followers far outside the interaction range of each other and the leader never agree
    hist = History.constant(np.array([[0.0], [0.0], [30.0]]), 1.0)
    with pytest.raises(ControllerTimeoutError):
        integrate(sys_, WaypointController((1.0,), max_phase_time=5.0), hist, 10.0, IntegratorConfig(0.05))


def test_waypoint_small_run_phases_monotone():
    sys_ = system(4)
    hist = History.constant(np.array([[0.0], [0.2], [-0.3], [0.1], [0.4]]), 1.0)
    traj = integrate(sys_, WaypointController((1.5,)), hist, 40.0, IntegratorConfig(0.02))
    idx = [e[2] for e in traj.events]
    assert idx == sorted(idx)
    assert traj.events[0][1] == CONSENSUS and traj.events[-1][1] == DONE
    assert any(e[1] == STEERING for e in traj.events)
    assert np.max(np.abs(traj.states[-1] - 1.5)) <= 0.05
    assert np.all(np.linalg.norm(traj.controls, axis=1) <= 1.0)


def test_target_dimension_checked():
    with pytest.raises(DomainError):
        integrate(system(2), WaypointController((1.0, 2.0)), History.constant(np.zeros((3, 1)), 1.0), 1.0, IntegratorConfig(0.05))
