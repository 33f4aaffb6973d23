import json
import math

import numpy as np
import pytest

from rotunda.geometry import Pose, quat_angle_between, rotvec_from_matrix
from rotunda.kinematics import (
    ArmParams,
    ArmState,
    JointLimitError,
    NoContact,
    OffPanel,
    Unreachable,
    compliance_step,
    estimate_contact,
    estimate_wrench,
    forward_kinematics,
    inverse_kinematics,
    jacobian,
    plan_trajectory,
)

Q_NOMINAL = np.array([0.0, 0.6, 0.0, 1.2, 0.0, -0.9, 0.0])


@pytest.fixture(scope="module")
def params():
    return ArmParams()


def random_q(params, rng, margin=0.9):
    lo, hi = params.joint_limits[:, 0], params.joint_limits[:, 1]
    return rng.uniform(margin * lo, margin * hi)


# -- forward kinematics ------------------------------------------------------


def _rot_z(t):
    T = np.eye(4)
    T[0, 0] = T[1, 1] = math.cos(t)
    T[0, 1] = -math.sin(t)
    T[1, 0] = math.sin(t)
    return T


def _rot_x(t):
    T = np.eye(4)
    T[1, 1] = T[2, 2] = math.cos(t)
    T[1, 2] = -math.sin(t)
    T[2, 1] = math.sin(t)
    return T


def _trans(x, y, z):
    T = np.eye(4)
    T[:3, 3] = (x, y, z)
    return T


def fk_reference(params, q):
    """Chain of primitive transforms; independent of the fused DH matrix."""
    T = np.eye(4)
    for (a, alpha, d, off), qi in zip(params.dh, q):
        T = T @ _rot_z(qi + off) @ _trans(0, 0, d) @ _trans(a, 0, 0) @ _rot_x(alpha)
    return T @ params.tool_transform.matrix()


def test_fk_zero_posture(params):
    pose = forward_kinematics(params, np.zeros(7))
    assert np.allclose(pose.position, [0.0, 0.0, 2.05], atol=1e-12)
    assert quat_angle_between(pose.orientation, [1, 0, 0, 0]) < 1e-12


def test_fk_matches_primitive_chain(params):
    rng = np.random.default_rng(5)
    for _ in range(100):
        q = random_q(params, rng)
        T_ref = fk_reference(params, q)
        pose = forward_kinematics(params, q)
        assert np.allclose(pose.position, T_ref[:3, 3], atol=1e-12)
        assert np.allclose(pose.rotation(), T_ref[:3, :3], atol=1e-12)


def test_fk_rejects_out_of_limit_joints(params):
    q = np.zeros(7)
    q[0] = math.radians(171.0)
    with pytest.raises(JointLimitError):
        forward_kinematics(params, q)


def test_max_reach(params):
    assert params.max_reach() == pytest.approx(2.05, abs=1e-12)


# -- jacobian ----------------------------------------------------------------


def jacobian_fd(params, q, eps=1e-7):
    J = np.zeros((6, 7))
    for i in range(7):
        dq = np.zeros(7)
        dq[i] = eps
        hi = forward_kinematics(params, q + dq)
        lo = forward_kinematics(params, q - dq)
        J[:3, i] = (hi.position - lo.position) / (2 * eps)
        J[3:, i] = rotvec_from_matrix(hi.rotation() @ lo.rotation().T) / (2 * eps)
    return J


def test_jacobian_matches_finite_differences(params):
    rng = np.random.default_rng(17)
    for _ in range(25):
        q = random_q(params, rng)
        assert np.max(np.abs(jacobian(params, q) - jacobian_fd(params, q))) < 1e-6


# -- inverse kinematics --------------------------------------------------


def test_ik_roundtrip(params):
    rng = np.random.default_rng(7)
    for _ in range(50):
        q_true = random_q(params, rng, margin=0.8)
        target = forward_kinematics(params, q_true)
        seed = np.clip(
            q_true + rng.normal(scale=0.1, size=7),
            params.joint_limits[:, 0],
            params.joint_limits[:, 1],
        )
        q = inverse_kinematics(params, target, seed)
        reached = forward_kinematics(params, q)
        assert np.linalg.norm(reached.position - target.position) <= 1e-3
        assert quat_angle_between(reached.orientation, target.orientation) <= math.radians(0.1)
        assert np.all(q >= params.joint_limits[:, 0] - 1e-12)
        assert np.all(q <= params.joint_limits[:, 1] + 1e-12)


def test_ik_is_deterministic(params):
    target = forward_kinematics(params, Q_NOMINAL)
    seed = np.zeros(7)
    q1 = inverse_kinematics(params, target, seed)
    q2 = inverse_kinematics(params, target, seed)
    assert np.array_equal(q1, q2)


def test_ik_unreachable_reports_residual(params):
    with pytest.raises(Unreachable) as exc:
        inverse_kinematics(params, Pose.from_xyz(3.0, 0.0, 0.0), np.zeros(7))
    assert exc.value.pos_err > 0


# -- wrench / contact ----------------------------------------------------


def test_wrench_recovery_noise_free(params):
    rng = np.random.default_rng(23)
    for _ in range(20):
        q = random_q(params, rng, margin=0.7)
        J = jacobian(params, q)
        W_true = rng.normal(size=6) * [10, 10, 10, 2, 2, 2]
        state = ArmState(q=q, tau_ext=J.T @ W_true)
        W_est, resid = estimate_wrench(params, state)
        assert np.allclose(W_est, W_true, atol=1e-8)
        assert resid < 1e-9


class PanelStub:
    def __init__(self, hu=0.3425, hv=0.609):
        self._h = (hu, hv)

    def half_extents(self):
        return self._h


def press_torques(params, q, uv, force_vec):
    """Joint torques for a point force applied at panel coords uv."""
    pose = forward_kinematics(params, q)
    R = pose.rotation()
    lever = R @ np.array([uv[0], uv[1], 0.0])
    W = np.concatenate([force_vec, np.cross(lever, force_vec)])
    return jacobian(params, q).T @ W


def test_contact_point_exact_without_noise(params):
    q = Q_NOMINAL
    R = forward_kinematics(params, q).rotation()
    tau = press_torques(params, q, (0.20, 0.10), -10.0 * R[:, 2])
    est = estimate_contact(params, ArmState(q=q, tau_ext=tau), PanelStub())
    assert np.allclose(est.point_local, [0.20, 0.10], atol=1e-9)
    assert np.linalg.norm(est.force) == pytest.approx(10.0, abs=1e-9)
    assert 0 < est.confidence <= 1


def test_contact_oblique_force_fallback(params):
    # force with a large tangential component: the press model cannot fit it,
    # the free-direction refinement must take over and still localize exactly
    q = Q_NOMINAL
    R = forward_kinematics(params, q).rotation()
    force = -8.0 * R[:, 2] + 5.0 * R[:, 0]
    tau = press_torques(params, q, (-0.15, 0.25), force)
    est = estimate_contact(params, ArmState(q=q, tau_ext=tau), PanelStub())
    assert np.allclose(est.point_local, [-0.15, 0.25], atol=1e-6)
    assert np.allclose(est.force, force, atol=1e-6)


def test_contact_force_deadband(params):
    q = Q_NOMINAL
    R = forward_kinematics(params, q).rotation()
    tau = press_torques(params, q, (0.0, 0.0), -2.0 * R[:, 2])
    with pytest.raises(NoContact):
        estimate_contact(params, ArmState(q=q, tau_ext=tau), PanelStub())


def test_contact_off_panel(params):
    q = Q_NOMINAL
    R = forward_kinematics(params, q).rotation()
    tau = press_torques(params, q, (0.45, 0.0), -10.0 * R[:, 2])
    with pytest.raises(OffPanel):
        estimate_contact(params, ArmState(q=q, tau_ext=tau), PanelStub(hu=0.3425, hv=0.609))


def test_contact_noisy_localization_sane(params):
    # loose sanity bound; the full statistical criterion lives in the
    # acceptance suite
    rng = np.random.default_rng(11)
    q = Q_NOMINAL
    R = forward_kinematics(params, q).rotation()
    hits = 0
    for _ in range(100):
        uv = rng.uniform([-0.3, -0.55], [0.3, 0.55])
        tau = press_torques(params, q, uv, -rng.uniform(5, 20) * R[:, 2])
        tau = tau + rng.normal(scale=params.torque_noise_sigma, size=7)
        try:
            est = estimate_contact(params, ArmState(q=q, tau_ext=tau), PanelStub())
        except (NoContact, OffPanel):
            continue
        hits += np.linalg.norm(est.point_local - uv) <= 0.02
    assert hits >= 90


# -- compliance ----------------------------------------------------------


def test_compliance_requires_compliant_mode(params):
    state = ArmState(q=Q_NOMINAL.copy(), mode="position")
    with pytest.raises(ValueError):
        compliance_step(params, state, np.zeros(6), 0.01)
    state.mode = "compliant"
    with pytest.raises(ValueError):
        compliance_step(params, state, np.zeros(6), 0.06)


def test_compliance_descent_rate(params):
    # 10 N downward for 1 s at the linear admittance 0.002 (m/s)/N -> 2 cm
    state = ArmState(q=Q_NOMINAL.copy(), mode="compliant")
    start = forward_kinematics(params, state.q).position.copy()
    wrench = np.array([0.0, 0.0, -10.0, 0.0, 0.0, 0.0])
    for _ in range(100):
        state.q, clamped = compliance_step(params, state, wrench, 0.01)
        assert not clamped
    disp = forward_kinematics(params, state.q).position - start
    assert disp[2] == pytest.approx(-0.02, rel=0.02)
    assert np.linalg.norm(disp[:2]) < 1e-3


def test_compliance_passive_even_at_singularities(params):
    rng = np.random.default_rng(31)
    postures = [np.zeros(7)] + [random_q(params, rng) for _ in range(30)]
    for q in postures:
        state = ArmState(q=q, mode="compliant")
        W = rng.normal(size=6) * [20, 20, 20, 5, 5, 5]
        J = jacobian(params, q)
        q_new, _ = compliance_step(params, state, W, 0.01)
        twist = J @ (q_new - q)
        assert float(twist @ W) >= -1e-12


def test_compliance_clamps_to_limits(params):
    state = ArmState(q=Q_NOMINAL.copy(), mode="compliant")
    wrench = np.array([0.0, 0.0, 500.0, 0.0, 0.0, 0.0])
    clamped_seen = False
    for _ in range(2000):
        state.q, clamped = compliance_step(params, state, wrench, 0.05)
        clamped_seen = clamped_seen or clamped
    assert clamped_seen
    assert np.all(state.q >= params.joint_limits[:, 0])
    assert np.all(state.q <= params.joint_limits[:, 1])


# -- trajectories ----------------------------------------------------------


def test_trajectory_counts_and_bounds():
    q_to = np.zeros(7)
    q_to[2] = 0.05
    traj = plan_trajectory(np.zeros(7), q_to, max_step=0.01)
    assert len(traj) == 6
    assert np.allclose(traj.waypoints[0], np.zeros(7))
    assert np.allclose(traj.waypoints[-1], q_to)
    assert np.max(np.abs(np.diff(traj.waypoints, axis=0))) <= 0.01 + 1e-12


def test_trajectory_degenerate():
    q = np.full(7, 0.3)
    traj = plan_trajectory(q, q)
    assert len(traj) == 1
    with pytest.raises(ValueError):
        plan_trajectory(q, q, max_step=0.0)


# -- config I/O ------------------------------------------------------------


def test_params_roundtrip_dict(params):
    again = ArmParams.from_dict(params.to_dict())
    assert np.allclose(again.dh, params.dh)
    assert np.allclose(again.joint_limits, params.joint_limits)
    assert again.tool_transform.approx_equal(params.tool_transform)


def test_params_load_yaml_and_json(tmp_path, params):
    doc = {"arm": params.to_dict()}
    yml = tmp_path / "arm.yaml"
    yml.write_text("arm:\n  torque_noise_sigma: 0.07\n")
    loaded = ArmParams.load(str(yml))
    assert loaded.torque_noise_sigma == 0.07
    assert np.allclose(loaded.dh, params.dh)  # defaults fill the gaps

    js = tmp_path / "arm.json"
    js.write_text(json.dumps(doc))
    loaded = ArmParams.load(str(js))
    assert np.allclose(loaded.joint_limits, params.joint_limits)


def test_arm_state_validation():
    with pytest.raises(ValueError):
        ArmState(q=np.zeros(6))
    with pytest.raises(ValueError):
        ArmState(q=np.zeros(7), mode="levitate")
