"""7-DOF serial arm kinematics for the screen-carrying ceiling arms.

Covers forward kinematics from a DH table, the geometric Jacobian, damped
least-squares inverse kinematics with null-space joint centering, contact
estimation from external joint torques (the panels double as touch
surfaces), admittance-style compliance stepping, and joint-space
trajectory planning.

Everything operates in the arm base frame; mounting the arm in the room
is a plain pose composition handled by the caller.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .geometry import Pose, quat_from_matrix, rotvec_from_matrix

IK_POS_TOL = 1e-3  # 1 mm
IK_ANG_TOL = math.radians(0.1)
IK_MAX_ITERS = 200
IK_DAMPING = 0.01

CONTACT_FORCE_DEADBAND = 3.0  # N
CONTACT_PANEL_SLACK = 0.05  # m beyond the panel half extents

# Admittance gains: translational (m/s)/N, rotational (rad/s)/(N*m).
ADMITTANCE_LIN = 0.002
ADMITTANCE_ANG = 0.01
COMPLIANCE_MAX_DT = 0.05

_DEF_LIMIT_DEG = (170.0, 135.0, 170.0, 135.0, 170.0, 135.0, 175.0)


class JointLimitError(ValueError):
    """A joint command violates the configured limits."""


class Unreachable(RuntimeError):
    """IK failed to converge; carries the best residual seen."""

    def __init__(self, pos_err: float, ang_err: float):
        super().__init__(f"no IK solution: best residual {pos_err:.4f} m / {math.degrees(ang_err):.3f} deg")
        self.pos_err = pos_err
        self.ang_err = ang_err


class NoContact(RuntimeError):
    """Estimated contact force is below the dead-band."""


class OffPanel(RuntimeError):
    """Estimated contact point lies outside the panel (plus slack)."""


@dataclass(eq=False)
class ArmParams:
    """DH table rows are (a, alpha, d, theta_offset); joint i rotates about z."""

    dh: np.ndarray = field(
        default_factory=lambda: np.array(
            [
                [0.0, -math.pi / 2, 0.50, 0.0],
                [0.0, math.pi / 2, 0.0, 0.0],
                [0.0, -math.pi / 2, 0.60, 0.0],
                [0.0, math.pi / 2, 0.0, 0.0],
                [0.0, -math.pi / 2, 0.50, 0.0],
                [0.0, math.pi / 2, 0.0, 0.0],
                [0.0, 0.0, 0.20, 0.0],
            ]
        )
    )
    joint_limits: np.ndarray = field(
        default_factory=lambda: np.array([[-math.radians(v), math.radians(v)] for v in _DEF_LIMIT_DEG])
    )
    torque_noise_sigma: float = 0.05  # N*m per joint
    # Flange-to-panel-center mount; +Z of the tool frame is the panel normal.
    tool_transform: Pose = field(default_factory=lambda: Pose.from_xyz(0.0, 0.0, 0.25))

    def __post_init__(self):
        self.dh = np.asarray(self.dh, dtype=float)
        self.joint_limits = np.asarray(self.joint_limits, dtype=float)
        if self.dh.shape != (7, 4):
            raise ValueError(f"expected a 7x4 DH table, got {self.dh.shape}")
        if self.joint_limits.shape != (7, 2):
            raise ValueError("expected 7x2 joint limits")
        if np.any(self.joint_limits[:, 0] >= self.joint_limits[:, 1]):
            raise ValueError("joint limit lower bounds must be below upper bounds")

    @property
    def num_joints(self) -> int:
        return 7

    def joint_centers(self) -> np.ndarray:
        return 0.5 * (self.joint_limits[:, 0] + self.joint_limits[:, 1])

    def max_reach(self) -> float:
        return float(
            np.sum(np.abs(self.dh[:, 0]))
            + np.sum(np.abs(self.dh[:, 2]))
            + np.linalg.norm(self.tool_transform.position)
        )

    # -- config I/O ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dh": [[float(v) for v in row] for row in self.dh],
            "joint_limits": [[float(lo), float(hi)] for lo, hi in self.joint_limits],
            "torque_noise_sigma": float(self.torque_noise_sigma),
            "tool_transform": self.tool_transform.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "ArmParams":
        kwargs = {}
        if "dh" in d:
            kwargs["dh"] = np.asarray(d["dh"], dtype=float)
        if "joint_limits" in d:
            kwargs["joint_limits"] = np.asarray(d["joint_limits"], dtype=float)
        if "torque_noise_sigma" in d:
            kwargs["torque_noise_sigma"] = float(d["torque_noise_sigma"])
        if "tool_transform" in d:
            kwargs["tool_transform"] = Pose.from_dict(d["tool_transform"])
        return ArmParams(**kwargs)

    @staticmethod
    def load(path: str) -> "ArmParams":
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
        doc = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
        if "arm" in doc:
            doc = doc["arm"]
        return ArmParams.from_dict(doc)


@dataclass(eq=False)
class ArmState:
    q: np.ndarray
    tau_ext: np.ndarray = field(default_factory=lambda: np.zeros(7))
    mode: str = "position"  # "position" | "compliant"

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.tau_ext = np.asarray(self.tau_ext, dtype=float)
        if self.q.shape != (7,) or self.tau_ext.shape != (7,):
            raise ValueError("ArmState vectors must have 7 entries")
        if self.mode not in ("position", "compliant"):
            raise ValueError(f"unknown arm mode {self.mode!r}")


@dataclass(eq=False)
class ContactEstimate:
    force: np.ndarray  # world/base-frame contact force (N)
    point_local: np.ndarray  # (u, v) meters on the panel plane, panel frame
    residual: float  # moment-fit inconsistency (N*m)
    confidence: float  # in (0, 1]


@dataclass(eq=False)
class Trajectory:
    waypoints: np.ndarray  # (N, 7)
    max_step: float

    def __len__(self) -> int:
        return len(self.waypoints)


# ---------------------------------------------------------------------------
# forward kinematics


def _dh_matrix(a: float, alpha: float, d: float, theta: float) -> np.ndarray:
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(alpha), math.sin(alpha)
    return np.array(
        [
            [ct, -st * ca, st * sa, a * ct],
            [st, ct * ca, -ct * sa, a * st],
            [0.0, sa, ca, d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def _check_limits(params: ArmParams, q: np.ndarray, tol: float = 1e-6) -> None:
    lo, hi = params.joint_limits[:, 0], params.joint_limits[:, 1]
    if np.any(q < lo - tol) or np.any(q > hi + tol):
        idx = int(np.argmax(np.maximum(lo - q, q - hi)))
        raise JointLimitError(f"joint {idx} value {q[idx]:.4f} outside [{lo[idx]:.4f}, {hi[idx]:.4f}]")


def fk_frames(params: ArmParams, q) -> tuple[list[np.ndarray], np.ndarray]:
    """Per-joint frames (before each joint) and the tool transform matrix."""
    q = np.asarray(q, dtype=float)
    if q.shape != (7,):
        raise ValueError("expected 7 joint values")
    _check_limits(params, q)
    T = np.eye(4)
    frames = [T]
    for i in range(7):
        a, alpha, d, off = params.dh[i]
        T = T @ _dh_matrix(a, alpha, d, q[i] + off)
        frames.append(T)
    tool = T @ params.tool_transform.matrix()
    return frames, tool


def forward_kinematics(params: ArmParams, q) -> Pose:
    """Tool (panel center) pose in the arm base frame."""
    _, tool = fk_frames(params, q)
    return Pose.from_matrix(tool)


def jacobian(params: ArmParams, q) -> np.ndarray:
    """Geometric Jacobian (6x7) at the tool point: linear rows then angular."""
    frames, tool = fk_frames(params, q)
    p_tool = tool[:3, 3]
    J = np.zeros((6, 7))
    for i in range(7):
        z = frames[i][:3, 2]
        p = frames[i][:3, 3]
        J[:3, i] = np.cross(z, p_tool - p)
        J[3:, i] = z
    return J


# ---------------------------------------------------------------------------
# inverse kinematics


def _pose_error(target: Pose, current: np.ndarray) -> tuple[np.ndarray, float, float]:
    """6-vector twist error and its (position, angle) magnitudes."""
    p_err = target.position - current[:3, 3]
    R_err = target.rotation() @ current[:3, :3].T
    w_err = rotvec_from_matrix(R_err)
    return np.concatenate([p_err, w_err]), float(np.linalg.norm(p_err)), float(np.linalg.norm(w_err))


def inverse_kinematics(
    params: ArmParams,
    target: Pose,
    q_seed,
    pos_tol: float = IK_POS_TOL,
    ang_tol: float = IK_ANG_TOL,
    max_iters: int = IK_MAX_ITERS,
    damping: float = IK_DAMPING,
) -> np.ndarray:
    """Damped least-squares IK with null-space pull toward joint centers.

    Raises :class:`Unreachable` (carrying the best residual) if the target
    cannot be met within the iteration budget.  Deterministic: stalls are
    handled by seeded re-starts inside the same budget.
    """
    q_seed = np.clip(np.asarray(q_seed, dtype=float), params.joint_limits[:, 0], params.joint_limits[:, 1])
    if float(np.linalg.norm(target.position)) > params.max_reach() + 1e-9:
        raise Unreachable(float(np.linalg.norm(target.position)) - params.max_reach(), math.pi)

    centers = params.joint_centers()
    lo, hi = params.joint_limits[:, 0], params.joint_limits[:, 1]
    q = q_seed.copy()
    best = (math.inf, math.inf)
    best_q = q.copy()
    stall = 0
    lam = damping
    prev_err = math.inf
    rng = np.random.default_rng(12345)

    for _ in range(max_iters):
        frames, tool = fk_frames(params, q)
        e, p_err, a_err = _pose_error(target, tool)
        if p_err < pos_tol and a_err < ang_tol:
            return q
        if (p_err, a_err) < best:
            best = (p_err, a_err)
            best_q = q.copy()
            stall = 0
        else:
            stall += 1

        # Levenberg-style damping schedule: back off when a step regresses.
        err_scalar = p_err + 0.5 * a_err
        lam = min(0.2, lam * 2.0) if err_scalar > prev_err else max(damping, lam * 0.7)
        prev_err = err_scalar

        if stall > 15:
            # Stuck in a local minimum: hop to a fresh basin.  The rng is
            # seeded per call, so the whole solve stays deterministic.
            q = rng.uniform(lo, hi)
            stall = 0
            lam = damping
            prev_err = math.inf
            continue

        p_tool = tool[:3, 3]
        J = np.zeros((6, 7))
        for i in range(7):
            z = frames[i][:3, 2]
            p = frames[i][:3, 3]
            J[:3, i] = np.cross(z, p_tool - p)
            J[3:, i] = z

        JJt = J @ J.T
        K = JJt + (lam**2) * np.eye(6)
        dq = J.T @ np.linalg.solve(K, e)
        # Null-space drift toward joint-range centers; faded out near the
        # solution so it cannot hold the task error just above tolerance.
        ns_gain = 0.1 * min(1.0, p_err / (10.0 * pos_tol))
        if ns_gain > 1e-6:
            Jpinv = J.T @ np.linalg.inv(K)
            N = np.eye(7) - Jpinv @ J
            dq += N @ (ns_gain * (centers - q))

        step = float(np.max(np.abs(dq)))
        if step > 0.5:
            dq *= 0.5 / step
        q = np.clip(q + dq, lo, hi)

    raise Unreachable(best[0], best[1])


# ---------------------------------------------------------------------------
# contact estimation


def estimate_wrench(params: ArmParams, state: ArmState) -> tuple[np.ndarray, float]:
    """Least-squares external wrench at the tool point from joint torques.

    Returns (wrench, torque_residual); wrench is (F, M) in the base frame
    with the moment taken about the tool point.
    """
    J = jacobian(params, state.q)
    W, res, _, _ = np.linalg.lstsq(J.T, state.tau_ext, rcond=None)
    residual = math.sqrt(float(res[0])) if len(res) else 0.0
    return W, residual


def _press_fit(J: np.ndarray, R: np.ndarray, tau: np.ndarray):
    """Fit tau to a pure press into the panel: F = -f*n applied at (px, py).

    Linear in (f, a, b) with a = f*px, b = f*py, so a single least-squares
    solve recovers both force magnitude and contact point.
    """
    n_w = R[:, 2]
    x_w = R[:, 0]
    y_w = R[:, 1]
    D = np.column_stack(
        [
            J.T @ np.concatenate([-n_w, np.zeros(3)]),
            J.T @ np.concatenate([np.zeros(3), y_w]),
            J.T @ np.concatenate([np.zeros(3), -x_w]),
        ]
    )
    u, _, _, _ = np.linalg.lstsq(D, tau, rcond=None)
    resid = float(np.linalg.norm(D @ u - tau))
    return u, resid


def _point_force_fit(J: np.ndarray, R: np.ndarray, tau: np.ndarray, F0, p0, iters: int = 20):
    """Gauss-Newton fit of a free-direction point force on the panel plane."""
    x = np.concatenate([F0, p0])
    for _ in range(iters):
        F = x[:3]
        r_w = R @ np.array([x[3], x[4], 0.0])
        W = np.concatenate([F, np.cross(r_w, F)])
        resid = J.T @ W - tau
        dW = np.zeros((6, 5))
        dW[:3, :3] = np.eye(3)
        rx, ry, rz = r_w
        dW[3:, :3] = np.array([[0, -rz, ry], [rz, 0, -rx], [-ry, rx, 0]])
        dW[3:, 3] = np.cross(R[:, 0], F)
        dW[3:, 4] = np.cross(R[:, 1], F)
        G = J.T @ dW
        dx, _, _, _ = np.linalg.lstsq(G, -resid, rcond=None)
        x = x + dx
        if float(np.linalg.norm(dx)) < 1e-12:
            break
    F = x[:3]
    r_w = R @ np.array([x[3], x[4], 0.0])
    resid = float(np.linalg.norm(J.T @ np.concatenate([F, np.cross(r_w, F)]) - tau))
    return F, x[3:5], resid


def estimate_contact(params: ArmParams, state: ArmState, screen) -> ContactEstimate:
    """Locate a touch on the panel from external joint torques.

    ``screen`` only needs a ``half_extents() -> (hu, hv)`` method.  Touches
    are modeled as presses into the panel (force along -normal); when the
    torque signature does not fit a press, a free-direction point force on
    the panel plane is fitted instead.
    """
    J = jacobian(params, state.q)
    R = forward_kinematics(params, state.q).rotation()
    tau = state.tau_ext

    # Unconstrained wrench fit: dead-band gating and fallback seeding.
    W, _, _, _ = np.linalg.lstsq(J.T, tau, rcond=None)
    full_resid = float(np.linalg.norm(J.T @ W - tau))

    u, press_resid = _press_fit(J, R, tau)
    f, a, b = float(u[0]), float(u[1]), float(u[2])
    # Chi-square gate on the residual increase of the 3-parameter press model
    # over the saturated wrench fit (3 dof, 99.9th percentile = 16.27).
    sigma = max(params.torque_noise_sigma, 1e-9)
    press_ok = press_resid**2 - full_resid**2 <= 16.27 * sigma**2
    if f > 0 and press_ok:
        force = -f * R[:, 2]
        point = np.array([a / f, b / f])
        residual = press_resid
    else:
        F0, M0 = W[:3], W[3:]
        F_loc, M_loc = R.T @ F0, R.T @ M0
        A = np.array([[0.0, F_loc[2]], [-F_loc[2], 0.0], [F_loc[1], -F_loc[0]]])
        p0, _, _, _ = np.linalg.lstsq(A, M_loc, rcond=None)
        force, point, residual = _point_force_fit(J, R, tau, F0, p0)

    f_norm = float(np.linalg.norm(force))
    if f_norm < CONTACT_FORCE_DEADBAND:
        raise NoContact(f"estimated force {f_norm:.2f} N below dead-band")

    hu, hv = screen.half_extents()
    if abs(point[0]) > hu + CONTACT_PANEL_SLACK or abs(point[1]) > hv + CONTACT_PANEL_SLACK:
        raise OffPanel(f"contact point {point} outside panel {hu:.3f}x{hv:.3f} (+slack)")
    confidence = float(math.exp(-residual / 0.1))
    return ContactEstimate(force=force, point_local=point, residual=residual, confidence=max(1e-3, confidence))


# ---------------------------------------------------------------------------
# compliance


def compliance_step(params: ArmParams, state: ArmState, wrench_ext, dt: float) -> tuple[np.ndarray, bool]:
    """One admittance integration step; returns (q_new, limit_clamped).

    The damped least-squares resolution runs in admittance-scaled twist
    coordinates, which keeps the realized displacement dissipative
    (displacement . wrench >= 0) even near singularities.
    """
    if not (0.0 < dt <= COMPLIANCE_MAX_DT):
        raise ValueError(f"dt {dt} outside (0, {COMPLIANCE_MAX_DT}]")
    if state.mode != "compliant":
        raise ValueError("compliance_step requires the arm to be in compliant mode")
    W = np.asarray(wrench_ext, dtype=float)
    if W.shape != (6,):
        raise ValueError("wrench must be a 6-vector")

    J = jacobian(params, state.q)
    b = np.sqrt(np.array([ADMITTANCE_LIN] * 3 + [ADMITTANCE_ANG] * 3))
    Js = J / b[:, None]  # rows scaled by 1/sqrt(a_i)
    K = Js @ Js.T + (IK_DAMPING**2) * np.eye(6)
    dq = Js.T @ np.linalg.solve(K, b * W * dt)

    lo, hi = params.joint_limits[:, 0], params.joint_limits[:, 1]
    q_new = state.q + dq
    clamped = bool(np.any(q_new < lo) or np.any(q_new > hi))
    return np.clip(q_new, lo, hi), clamped


# ---------------------------------------------------------------------------
# trajectories


def plan_trajectory(q_from, q_to, max_step: float = math.radians(1.0)) -> Trajectory:
    """Linear joint-space interpolation with per-joint steps <= max_step."""
    q_from = np.asarray(q_from, dtype=float)
    q_to = np.asarray(q_to, dtype=float)
    if q_from.shape != (7,) or q_to.shape != (7,):
        raise ValueError("expected 7 joint values")
    if max_step <= 0:
        raise ValueError("max_step must be positive")
    span = float(np.max(np.abs(q_to - q_from)))
    if span == 0.0:
        return Trajectory(waypoints=q_from[None, :].copy(), max_step=max_step)
    n = int(math.ceil(span / max_step)) + 1
    steps = np.linspace(0.0, 1.0, n)
    return Trajectory(waypoints=q_from[None, :] + steps[:, None] * (q_to - q_from)[None, :], max_step=max_step)
