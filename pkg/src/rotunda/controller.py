"""Central coordinator for the room.

Owns the :class:`RoomModel`, runs the fixed 100 Hz simulation tick, executes
motion jobs through kinematics and safety, manages views and analysis
groups, and routes every interaction event — touches, gestures, spoken
commands, remote pose pulls — to its effect.  All outputs leave through the
event bus; state reaches replicas as snapshots and deltas.

The controller is the single logical owner of the room: external inputs are
queued with :meth:`Controller.inject_event` and drained at the start of each
tick, which makes identical scripts produce identical event logs.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .bus import EventBus, ManualClock
from .geometry import Pose, wrap_angle
from .kinematics import (
    IK_ANG_TOL,
    ArmParams,
    ArmState,
    NoContact,
    OffPanel,
    Trajectory,
    Unreachable,
    compliance_step,
    estimate_contact,
    inverse_kinematics,
    jacobian,
    plan_trajectory,
)
from .language import (
    Ambiguous,
    NoSpeaker,
    NotAddressed,
    ParseError,
    ResolveContext,
    ResolvedCommand,
    UnresolvableDeixis,
    UtteranceEvent,
    azimuth_to_speaker,
    parse,
    pretty,
    resolve,
)
from .perception import (
    GestureClassifier,
    GestureEvent,
    NoLandmarks,
    PersonObservation,
    Tracker,
    merge_clouds,
    pointing_ray,
    render_depth,
    segment_people,
)
from .room import (
    PANEL_THICKNESS,
    NamedConfiguration,
    RoomModel,
    UnknownEntity,
    configuration_groups,
    generate_configuration,
    screen_yaw,
)
from .safety import (
    OBB_MARGIN,
    PERSON_HALT_CLEARANCE,
    PersonCapsule,
    Violation,
    shell_excess,
    check_configuration,
    obb_from_screen,
    person_clearance,
    sat_clearance,
    screen_pose_from_joints,
    validate_trajectory,
)
from .sync import DeltaLog, Snapshot, make_delta

TICK_DT = 0.01  # fixed heartbeat; replay determinism needs an exact grid
PERCEPTION_EVERY = 5  # ticks -> 20 Hz, the minimum gesture sampling rate
SNAPSHOT_EVERY = 100  # ticks
DRAG_THRESHOLD = 0.01  # m of panel-plane displacement
FOCUS_MAX_YAW = math.radians(30.0)
FOCUS_MIN_YAW = math.radians(0.5)  # skip jobs below this; not worth an arm move
SPAN_GAP = 0.01  # m between abutted panels
RETREAT_OFFSET = 0.15  # m off the face planes; all travel/reorientation happens out there
ARC_STEP = math.radians(6.0)  # max bearing/normal-yaw change between travel via-poses
ARC_DIST_STEP = 0.20  # max translation between travel via-poses (m)
LIFT_STEP = 0.10  # max vertical change per via-pose (m); descents refold the elbow quickly
WALL_SLACK = 0.03  # covers the joint-interpolation bulge between adjacent via-poses
HOP_Q_MAX = 1.0  # rad; an IK hop jumping further than this left the arm's posture branch
PUBLISHER = "controller"

EVENT_TYPES = (
    "utterance",
    "person_enter",
    "person_move",
    "person_gesture",
    "person_leave",
    "push",
    "remote_pose",
)


class MotionBusy(RuntimeError):
    """An involved arm is already executing a motion job."""


class AssignmentError(ValueError):
    """A view/screen assignment request violates the assignment rules."""


class CommandError(ValueError):
    """A resolved command cannot be executed in the current state."""


# ---------------------------------------------------------------------------
# display and motion bookkeeping


@dataclass(eq=False)
class View:
    """Content handle; may span several contiguous screens."""

    id: int
    content_ref: str
    assignment: tuple = ()  # ordered screen ids, contiguous along the circle
    group_id: int | None = None

    def viewports(self) -> tuple:
        """Per-screen (u0, v0, u1, v1) rectangles of the joint canvas."""
        k = len(self.assignment)
        return tuple((j / k, 0.0, (j + 1) / k, 1.0) for j in range(k))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "content_ref": self.content_ref,
            "assignment": [int(s) for s in self.assignment],
            "viewports": [list(v) for v in self.viewports()],
            "group_id": self.group_id,
        }


@dataclass(eq=False)
class AnalysisGroup:
    id: int
    screen_ids: tuple
    label: str = ""

    def to_dict(self) -> dict:
        return {"id": self.id, "screen_ids": [int(s) for s in self.screen_ids], "label": self.label}


@dataclass(eq=False)
class MotionJob:
    """One coordinated arm move.

    Multi-arm jobs execute staged: arms move one at a time in ascending id
    order, so each sweep can be validated against the others pinned at their
    start or goal poses — simultaneous joint-space interpolation lets
    converging panels clip each other mid-flight.
    """

    id: int
    targets: dict = field(default_factory=dict)  # arm_id -> goal joint vector
    trajectories: dict = field(default_factory=dict)  # arm_id -> Trajectory
    state: str = "planned"  # planned|validating|executing|done|rejected|halted
    progress: float = 0.0
    source: str = "local"
    reason: str | None = None
    stage: int = 0  # index into arms: which arm is moving
    cursor: int = 0  # waypoint index within the active arm's trajectory
    pending_assignment: tuple | None = None  # (view_id, ordered screen ids)
    # formation change applied when the job completes: ("set", groups) after a
    # configuration/span, ("drop", screen ids) after a screen leaves its group
    formation_commit: tuple | None = None
    violation: dict | None = None  # set when a safety check caused the rejection

    @property
    def arms(self) -> tuple:
        return tuple(sorted(self.trajectories))

    @property
    def total_steps(self) -> int:
        return sum(len(t) - 1 for t in self.trajectories.values())

    def completed_steps(self) -> int:
        done = sum(len(self.trajectories[a]) - 1 for a in self.arms[: self.stage])
        return done + self.cursor

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "state": self.state,
            "progress": float(self.progress),
            "arms": [int(a) for a in self.arms],
            "source": self.source,
            "reason": self.reason,
        }
        if self.violation is not None:
            out["violation"] = self.violation
        return out


def _circular_run(ids, n: int) -> tuple | None:
    """Order ``ids`` as one consecutive run around a circle of ``n``, or None."""
    ids = sorted(set(int(i) for i in ids))
    if not ids:
        return None
    k = len(ids)
    for start in ids:
        run = [(start + j) % n for j in range(k)]
        if sorted(run) == ids:
            return tuple(run)
    return None


# ---------------------------------------------------------------------------
# scripted people (the simulation's stand-in for live depth sensing)


def _scripted_landmarks(person: dict, room: RoomModel, ts: float) -> dict:
    """Skeleton landmark set for a scripted person, shaped by the active gesture."""
    pos = person["position"]
    h = float(person["height"])
    x, y = float(pos[0]), float(pos[1])
    base = np.array([x, y, 0.0])
    r = math.hypot(x, y)
    fwd = np.array([-x / r, -y / r, 0.0]) if r > 1e-9 else np.array([1.0, 0.0, 0.0])
    left = np.array([-fwd[1], fwd[0], 0.0])
    lm = {
        "head": base + np.array([0.0, 0.0, h]),
        "shoulder_l": base + 0.18 * left + np.array([0.0, 0.0, 0.84 * h]),
        "shoulder_r": base - 0.18 * left + np.array([0.0, 0.0, 0.84 * h]),
        "wrist_l": base + 0.25 * left + 0.10 * fwd + np.array([0.0, 0.0, 0.50 * h]),
        "wrist_r": base - 0.25 * left + 0.10 * fwd + np.array([0.0, 0.0, 0.50 * h]),
    }
    g = person.get("gesture")
    table = room.table
    if g == "raise_one_hand":
        lm["wrist_r"] = base - 0.20 * left + 0.05 * fwd + np.array([0.0, 0.0, h + 0.22])
    elif g == "raise_both_hands":
        for side, s in (("l", 1.0), ("r", -1.0)):
            lm[f"wrist_{side}"] = base + 0.20 * s * left + 0.25 * fwd + np.array([0.0, 0.0, 0.84 * h + 0.28])
    elif g == "table_touch":
        u, v = person.get("target_uv", (0.6, 0.5))
        tx = table.center_xy[0] + (u - 0.5) * 2.0 * table.radius
        ty = table.center_xy[1] + (v - 0.5) * 2.0 * table.radius
        lm["wrist_r"] = np.array([tx, ty, table.surface_height + 0.010])
    elif g == "table_pinch":
        u, v = person.get("target_uv", (0.5, 0.5))
        mid = np.array(
            [
                table.center_xy[0] + (u - 0.5) * 2.0 * table.radius,
                table.center_xy[1] + (v - 0.5) * 2.0 * table.radius,
                table.surface_height + 0.010,
            ]
        )
        sep = person.get("pinch_base", 0.2) + person.get("pinch_rate", 0.05) * (ts - person["gesture_start"])
        lm["wrist_l"] = mid + 0.5 * sep * left
        lm["wrist_r"] = mid - 0.5 * sep * left
    elif g == "point":
        target = room.screen(person["target_screen"]).pose.position
        shoulder = lm["shoulder_r"]
        d = np.asarray(target, dtype=float) - shoulder
        lm["wrist_r"] = shoulder + 0.55 * d / float(np.linalg.norm(d))
    return lm


def depth_observation_source(noise_sigma: float = 0.0, seed: int | None = None):
    """Observation source that renders the depth ring and segments people.

    Orders of magnitude slower than scripted observations; intended for
    integration tests that exercise the full sensing path inside the tick.
    """
    from .perception import SensorExtrinsics, SensorIntrinsics

    def source(room: RoomModel, capsules: list, ts: float):
        rng = None if seed is None else np.random.default_rng(seed + int(round(ts / TICK_DT)))
        intr = SensorIntrinsics()
        clouds = []
        extr = []
        for mount in room.sensors:
            ext = SensorExtrinsics(sensor_id=mount.sensor_id, pose=mount.pose)
            clouds.append(render_depth(room, (intr, ext), capsules, noise_sigma=noise_sigma, rng=rng))
            extr.append(ext)
        merged = merge_clouds(clouds, extr)
        return segment_people(merged, room)

    return source


# ---------------------------------------------------------------------------


class Controller:
    """Single-owner coordinator; see the module docstring."""

    def __init__(
        self,
        room: RoomModel | None = None,
        bus: EventBus | None = None,
        clock: ManualClock | None = None,
        arm_params: ArmParams | None = None,
    ):
        self.clock = clock if clock is not None else ManualClock()
        self.bus = bus if bus is not None else EventBus(clock=self.clock)
        self.room = room if room is not None else RoomModel.build_default()
        self.params = arm_params if arm_params is not None else ArmParams()
        self.ticks = 0

        self.jobs: dict[int, MotionJob] = {}
        self.views: dict[int, View] = {}
        self.groups: dict[int, AnalysisGroup] = {}
        self._next_job = 1
        self._next_view = 1
        self._next_group = 1

        self.tracker = Tracker()
        self.gestures = GestureClassifier()
        self.observation_source = None  # optional: (room, capsules, ts) -> observations
        self._people: dict[int, dict] = {}  # scripted bodies keyed by script id
        self._capsules: list[PersonCapsule] = []
        self._track_sig: tuple = ()
        self._pushes: list[dict] = []
        self._modes: dict[int, str] = {a.arm_id: "position" for a in self.room.arms}
        self._touches: dict[int, dict] = {}  # screen_id -> active contact record
        self._span_formations: dict[int, list[int]] = {}  # view id -> abutted members
        self._inbox: deque = deque()

        self._reconcile_joints()
        self._shadow = self._entities()
        self._published_seq = self.room.seq
        self.delta_log = DeltaLog(base_seq=self.room.seq)
        self._publish("ds/state/snapshot", self.snapshot().to_dict())

    # -- construction -------------------------------------------------------

    def _reconcile_joints(self) -> None:
        """Solve joints for the boot screen poses and snap poses onto FK.

        Identical base-frame targets (the default ring is symmetric) share
        one IK solve.
        """
        solved: dict[tuple, np.ndarray] = {}
        for arm in self.room.arms:
            screen = self.room.screen_for_arm(arm.arm_id)
            target = arm.base.inverse().compose(screen.pose)
            key = tuple(np.round(np.concatenate([target.position, target.orientation]), 9))
            if key not in solved:
                solved[key] = inverse_kinematics(self.params, target, arm.q)
            arm.q = solved[key].copy()
            screen.pose = screen_pose_from_joints(self.room, arm.arm_id, arm.q, self.params)
        self.room.bump()

    # -- state sync -----------------------------------------------------------

    def _entities(self) -> dict:
        room = self.room
        ents: dict[str, dict] = {
            "room": {
                "room_radius": float(room.room_radius),
                "ceiling_height": float(room.ceiling_height),
                "table": room.table.to_dict(),
                "cowling": room.cowling.to_dict(),
                "sensors": [s.to_dict() for s in room.sensors],
                "people": list(room.people),
                "formations": [list(g) for g in room.formations],
            }
        }
        for arm in room.arms:
            ents[f"arm/{arm.arm_id}"] = arm.to_dict()
        for screen in room.screens:
            ents[f"screen/{screen.id}"] = screen.to_dict()
        for vid in sorted(self.views):
            ents[f"view/{vid}"] = self.views[vid].to_dict()
        for gid in sorted(self.groups):
            ents[f"group/{gid}"] = self.groups[gid].to_dict()
        for track in self.tracker.tracks:
            ents[f"track/{track.id}"] = {
                "id": track.id,
                "centroid": [float(c) for c in track.centroid],
                "velocity": [float(v) for v in track.velocity],
                "last_seen": float(track.last_seen),
            }
        return ents

    def snapshot(self) -> Snapshot:
        """Live full-state snapshot at the current sequence number."""
        return Snapshot.build(self.room.seq, self._entities())

    def _emit_state(self) -> None:
        if self.room.seq != self._published_seq:
            new = self._entities()
            delta = make_delta(self._published_seq, self.room.seq, self._shadow, new)
            self.delta_log.append(delta)
            self._publish("ds/state/delta", delta.to_dict())
            self._shadow = new
            self._published_seq = self.room.seq
        if self.ticks % SNAPSHOT_EVERY == 0:
            snap = Snapshot.build(self._published_seq, self._shadow)
            self._publish("ds/state/snapshot", snap.to_dict())

    def _publish(self, topic: str, payload: dict, publisher: str = PUBLISHER) -> None:
        self.bus.publish(topic, {"v": 1, **payload}, publisher)

    # -- events in ------------------------------------------------------------

    def inject_event(self, event: dict) -> None:
        """Queue one simulation/world event for the next tick."""
        etype = event.get("type")
        if etype not in EVENT_TYPES:
            raise ValueError(f"unknown event type {etype!r}")
        self._inbox.append(dict(event))

    def _handle_event(self, event: dict) -> None:
        etype = event["type"]
        self.bus.publish(f"ds/sim/{etype}", {"v": 1, **event}, "sim")
        if etype == "utterance":
            azimuth = event.get("azimuth")
            if azimuth is None:
                body = self._people[int(event["person"])]
                azimuth = math.atan2(float(body["position"][1]), float(body["position"][0]))
            self.handle_utterance(
                UtteranceEvent(
                    transcript=event["transcript"],
                    azimuth=float(azimuth),
                    confidence=float(event.get("confidence", 1.0)),
                    ts=self.ticks * TICK_DT,
                )
            )
        elif etype == "person_enter":
            self._people[int(event["person"])] = {
                "position": np.array(event["position"], dtype=float),
                "velocity": np.zeros(2),
                "height": float(event.get("height", 1.7)),
                "gesture": None,
                "gesture_until": 0.0,
                "gesture_start": 0.0,
            }
        elif etype == "person_move":
            body = self._people[int(event["person"])]
            if "position" in event:
                body["position"] = np.array(event["position"], dtype=float)
            if "velocity" in event:
                body["velocity"] = np.array(event["velocity"], dtype=float)
        elif etype == "person_gesture":
            body = self._people[int(event["person"])]
            body["gesture"] = event["gesture"]
            body["gesture_start"] = self.ticks * TICK_DT
            body["gesture_until"] = self.ticks * TICK_DT + float(event.get("duration_s", 1.5))
            for key in ("target_uv", "target_screen", "pinch_base", "pinch_rate"):
                if key in event:
                    body[key] = event[key]
        elif etype == "person_leave":
            self._people.pop(int(event["person"]), None)
        elif etype == "push":
            self._begin_push(event)
        elif etype == "remote_pose":
            self._remote_pose(event)

    def _remote_pose(self, event: dict) -> None:
        sid = int(event["screen"])
        screen = self.room.screen(sid)
        if "pose" in event:
            pose = Pose.from_dict(event["pose"])
        else:
            offset = np.array(event["offset"], dtype=float)
            pose = Pose(screen.pose.position + offset, screen.pose.orientation)
        try:
            self.submit_pose_intent(sid, pose, source="remote")
        except MotionBusy as exc:
            self._publish("ds/motion/rejected", {"screen": sid, "reason": str(exc), "source": "remote"})

    # -- motion jobs ------------------------------------------------------------

    def _busy_arms(self) -> set:
        return {a for j in self.jobs.values() if j.state == "executing" for a in j.arms}

    def _new_job(self, source: str) -> MotionJob:
        job = MotionJob(id=self._next_job, source=source)
        self._next_job += 1
        self.jobs[job.id] = job
        return job

    def _job_event(self, job: MotionJob) -> None:
        self._publish(f"ds/motion/job/{job.id}/state", job.to_dict())

    def _reject(self, job: MotionJob, reason: str) -> MotionJob:
        job.state = "rejected"
        job.reason = reason
        self._job_event(job)
        return job

    def job(self, job_id: int) -> MotionJob:
        if job_id not in self.jobs:
            raise UnknownEntity(f"job {job_id}")
        return self.jobs[job_id]

    def _solve_near(self, base_inv: Pose, target: Pose, q_seed) -> np.ndarray:
        """IK constrained to the seed's posture branch.

        The solver restarts from random joint vectors when it stalls, so it can
        return a mirror-posture (elbow-flipped) solution; interpolating joints
        across such a flip sweeps the panel far off the intended path.  Chained
        plan targets are close together, so any solution further than HOP_Q_MAX
        from its seed is rejected as a branch change.
        """
        q = inverse_kinematics(self.params, base_inv.compose(target), q_seed)
        if float(np.max(np.abs(q - q_seed))) > HOP_Q_MAX:
            raise Unreachable(math.inf, math.pi)
        return q

    def _solve_off_face(self, arm, pose: Pose, q_seed, guard: bool = True) -> tuple[np.ndarray, Pose]:
        """IK for a pose floated off the face plane along the panel normal.

        Prefers the side behind the face and the full RETREAT_OFFSET; falls
        forward or shallower when the arm cannot reach behind (outward rings
        put the back side in a contorted wrist posture) or when the float
        would poke the panel past the wall margin.  `guard=False` skips the
        posture-branch check for probes whose joint solution is discarded.
        """
        base_inv = arm.base.inverse()
        screen = self.room.screen_for_arm(arm.arm_id)
        # Prefer floating along the radial with the normal's inward/outward
        # sense: a yawed panel backing off its own (yawed) normal drifts
        # tangentially into the neighbor's corridor.  The true normal stays
        # as a fallback — some yawed postures only reach straight back.
        normal = pose.rotation()[:, 2]
        directions = [normal]
        radial = np.array([pose.position[0], pose.position[1], 0.0])
        r_len = float(np.linalg.norm(radial))
        along = float(normal[:2] @ radial[:2])
        if r_len > 1e-6 and abs(along) > 0.2 * r_len:
            rad_dir = radial / r_len * math.copysign(1.0, along)
            if float(np.linalg.norm(rad_dir - normal)) > 1e-6:
                directions = [rad_dir, normal]
        err = Unreachable(math.inf, math.pi)
        for offset in (RETREAT_OFFSET, 0.12, 0.10, 0.08, 0.06):
            for sign in (-1.0, 1.0):
                for direction in directions:
                    cand = Pose(pose.position + sign * offset * direction, pose.orientation)
                    if shell_excess(self.room, obb_from_screen(screen, cand), OBB_MARGIN + WALL_SLACK) > 0.0:
                        continue
                    try:
                        if guard:
                            return self._solve_near(base_inv, cand, q_seed), cand
                        return inverse_kinematics(self.params, base_inv.compose(cand), q_seed), cand
                    except Unreachable as exc:
                        err = exc
        raise err

    @staticmethod
    def _upright(pose: Pose) -> bool:
        # Residual tilt accumulates at up to IK_ANG_TOL per chained solve, so
        # allow a few solves' worth; intentional tilts are whole degrees.
        tol = 5.0 * IK_ANG_TOL
        R = pose.rotation()
        return abs(R[2, 2]) < tol and R[2, 1] > 1.0 - tol

    @staticmethod
    def _ring_pose(bearing: float, radius: float, z: float, normal_angle: float) -> Pose:
        zax = np.array([math.cos(normal_angle), math.sin(normal_angle), 0.0])
        yax = np.array([0.0, 0.0, 1.0])
        xax = np.cross(yax, zax)
        pos = np.array([radius * math.cos(bearing), radius * math.sin(bearing), z])
        return Pose.from_rotation(np.column_stack([xax, yax, zax]), pos)

    def _radius_cap(self, screen, rel: float) -> float:
        """Largest safe centre radius for a panel whose normal is `rel` off
        the local radial direction — an edge-on panel reaches half its width
        further toward the wall than a tangential one."""
        hu = screen.half_extents()[0]
        footprint = hu * abs(math.sin(rel)) + 0.5 * PANEL_THICKNESS * abs(math.cos(rel))
        return self.room.room_radius - OBB_MARGIN - WALL_SLACK - footprint

    def _travel_specs(
        self, screen, a: Pose, b: Pose, flip: bool = False, climb_first: bool = True
    ) -> list[tuple]:
        """Via-pose parameters (bearing, z, normal angle, radius, radius cap)
        subdividing the travel between two upright poses.

        The vertical change happens in its own leg (before the arc when
        `climb_first`, after it otherwise) so the yaw arc runs at constant
        height — blending z into the arc steers it through unreachable
        pockets of the workspace.  `flip` rotates the panel normal the long
        way round; a near-180° flip threads cleanly in one direction but
        winds the base joint into its limit in the other.
        """
        if not (self._upright(a) and self._upright(b)):
            return []
        pa, pb = a.position, b.position
        ra, rb = math.hypot(pa[0], pa[1]), math.hypot(pb[0], pb[1])
        if min(ra, rb) < 0.5:
            return []
        tha, thb = math.atan2(pa[1], pa[0]), math.atan2(pb[1], pb[0])
        dth = wrap_angle(thb - tha)
        na, nb = a.rotation()[:, 2], b.rotation()[:, 2]
        nua, nub = math.atan2(na[1], na[0]), math.atan2(nb[1], nb[0])
        dnu = wrap_angle(nub - nua)
        if flip:
            dnu -= math.copysign(2.0 * math.pi, dnu) if dnu != 0.0 else 0.0
        k = max(
            int(math.ceil(abs(dnu) / ARC_STEP)),
            int(math.ceil(abs(dth) / ARC_STEP)),
            int(math.ceil(math.hypot(rb - ra, ra * dth) / ARC_DIST_STEP)),
        )
        za, zb = float(pa[2]), float(pb[2])
        lift = abs(zb - za) > 0.02
        if k <= 1 and not lift:
            return []
        arc_z = zb if climb_first else za

        def lift_specs(th: float, nu: float, r_pref: float, z_from: float, z_to: float) -> list:
            # The posture refolds steadily along a vertical slide; stepping z
            # keeps each IK hop inside the branch guard.
            cap = self._radius_cap(screen, wrap_angle(nu - th))
            m = max(1, int(math.ceil(abs(z_to - z_from) / LIFT_STEP)))
            return [
                (th, z_from + (z_to - z_from) * j / m, nu, float(min(r_pref, cap)), float(cap))
                for j in range(1, m + 1)
            ]

        specs = []
        if lift and climb_first:
            specs.extend(lift_specs(tha, nua, ra, za, zb))
        for j in range(1, k):
            t = j / k
            bearing = tha + t * dth
            nu = nua + t * dnu
            cap = self._radius_cap(screen, wrap_angle(nu - bearing))
            r = min(ra + t * (rb - ra), cap)
            specs.append((bearing, arc_z, nu, float(r), float(cap)))
        if lift and not climb_first:
            specs.extend(lift_specs(thb, nub, rb, za, zb))
        return specs

    def _plan_arm(self, arm, goal_world: Pose) -> tuple[np.ndarray, Trajectory]:
        """Plan a multi-leg path: back off the start plane, travel along short
        IK'd hops, then slide straight into the goal.

        Two constraints shape this.  Panels may finish 1 cm from a neighbour,
        so reorientation must happen off the face planes where corner sweeps
        stay clear.  And plain joint-space interpolation between distant
        postures swings the panel far off the straight line — a 180-degree
        flip lets corners roam past the wall — so the travel is subdivided
        into via-poses the interpolation cannot stray far from.
        """
        start_world = screen_pose_from_joints(self.room, arm.arm_id, arm.q, self.params)
        base_inv = arm.base.inverse()
        if goal_world.approx_equal(start_world):
            q_goal = inverse_kinematics(self.params, base_inv.compose(goal_world), arm.q)
            return q_goal, plan_trajectory(arm.q, q_goal)
        screen = self.room.screen_for_arm(arm.arm_id)
        q_out, back_out = self._solve_off_face(arm, start_world, arm.q)
        _, staging = self._solve_off_face(arm, goal_world, q_out, guard=False)
        level = abs(float(back_out.position[2] - staging.position[2])) <= 0.02
        attempts = [(f, cf) for f in (False, True) for cf in ((True,) if level else (True, False))]
        last_err = None
        for flip, climb_first in attempts:
            q_chain = [arm.q, q_out]
            try:
                for bearing, z, nu, r_pref, r_cap in self._travel_specs(
                    screen, back_out, staging, flip, climb_first
                ):
                    solved = None
                    for dr in (0.0, 0.05, 0.10, -0.05, -0.10):
                        r = min(r_pref + dr, r_cap)
                        if r < 0.5:
                            continue
                        try:
                            solved = self._solve_near(
                                base_inv, self._ring_pose(bearing, r, z, nu), q_chain[-1]
                            )
                            break
                        except Unreachable:
                            continue
                    if solved is None:
                        raise Unreachable(math.inf, math.pi)
                    q_chain.append(solved)
                q_chain.append(self._solve_near(base_inv, staging, q_chain[-1]))
                q_goal = self._solve_near(base_inv, goal_world, q_chain[-1])
                q_chain.append(q_goal)
                break
            except Unreachable as exc:
                last_err = exc
        else:
            raise last_err
        legs = [plan_trajectory(q_chain[i], q_chain[i + 1]) for i in range(len(q_chain) - 1)]
        waypoints = np.vstack([legs[0].waypoints] + [leg.waypoints[1:] for leg in legs[1:]])
        return q_goal, Trajectory(waypoints=waypoints, max_step=legs[0].max_step)

    def apply_configuration(self, name: str, params: dict | None = None, source: str = "local") -> MotionJob:
        """Drive every arm to a stock layout; all-or-nothing validation."""
        config = NamedConfiguration.named(name, **(params or {}))
        busy = self._busy_arms()
        if busy:
            raise MotionBusy(f"arms {sorted(busy)} are executing")
        poses = generate_configuration(self.room, config)

        job = self._new_job(source)
        self._job_event(job)
        old_modes = {s.id: s.orientation_mode for s in self.room.screens}
        old_formations = [list(g) for g in self.room.formations]
        new_formations = [list(g) for g in configuration_groups(self.room, config)]
        for s in self.room.screens:
            s.orientation_mode = config.orientation_mode
        # Panels that start abutted stay within their old margin waiver while
        # they separate, and converging ones need the new waiver on the way
        # in — so both hold during the transition; the new set commits with
        # job completion.
        self.room.formations = old_formations + [g for g in new_formations if g not in old_formations]
        job.formation_commit = ("set", new_formations)

        def rollback():
            for s in self.room.screens:
                s.orientation_mode = old_modes[s.id]
            self.room.formations = old_formations

        try:
            for arm in self.room.arms:
                sid = self.room.screen_for_arm(arm.arm_id).id
                q_goal, traj = self._plan_arm(arm, poses[sid])
                job.targets[arm.arm_id] = q_goal
                job.trajectories[arm.arm_id] = traj
        except Unreachable as exc:
            rollback()
            return self._reject(job, f"unreachable: {exc}")

        job.state = "validating"
        self._job_event(job)
        goal_poses = {
            self.room.screen_for_arm(a).id: screen_pose_from_joints(self.room, a, job.targets[a], self.params)
            for a in job.arms
        }
        violation = self._end_state_violation(goal_poses, new_formations) or self._validate_staged(job)
        if violation is not None:
            rollback()
            job.violation = violation.to_dict()
            self._publish("ds/safety/violation", job.violation)
            return self._reject(job, str(violation))

        self._unassign_moved_spans(set(poses), "configuration change")
        self.room.bump()  # commit orientation modes + transitional formations
        job.state = "executing"
        self._job_event(job)
        return job

    def _end_state_violation(self, cand: dict[int, Pose], formations: list) -> Violation | None:
        """Margin check of the post-job state under its post-job formations."""
        saved = self.room.formations
        self.room.formations = formations
        try:
            viols = check_configuration(
                self.room, candidate_poses=cand, people=self._capsules, only_screens=set(cand)
            )
        finally:
            self.room.formations = saved
        return viols[0] if viols else None

    def _validate_staged(self, job: MotionJob) -> Violation | None:
        """Check each arm's sweep with the job's other arms pinned.

        Arms earlier in the stage order sit at their goal poses, later ones
        at their start poses — exactly the states they hold while this arm
        moves.
        """
        arm_screens = {a: self.room.screen_for_arm(a).id for a in job.trajectories}
        goal_poses = {
            arm_screens[a]: screen_pose_from_joints(self.room, a, job.targets[a], self.params)
            for a in job.arms
        }
        pinned: dict[int, Pose] = {}  # start poses are the live ones; override as arms finish
        for arm_id in job.arms:
            sid = arm_screens[arm_id]
            traj = job.trajectories[arm_id]
            for k in range(1, len(traj)):
                cand = dict(pinned)
                cand[sid] = screen_pose_from_joints(self.room, arm_id, traj.waypoints[k], self.params)
                viols = check_configuration(
                    self.room, candidate_poses=cand, people=self._capsules, only_screens={sid}
                )
                if viols:
                    v = viols[0]
                    return Violation(v.kind, v.entities, v.penetration_depth, waypoint_index=k)
            pinned[sid] = goal_poses[sid]
        return None

    def submit_pose_intent(
        self, screen_id: int, pose: Pose, source: str = "local", orientation_mode: str | None = None
    ) -> MotionJob:
        """Single-screen motion: IK, swept validation, then ticked execution."""
        screen = self.room.screen(screen_id)
        arm_id = screen.arm_id
        if arm_id in self._busy_arms():
            raise MotionBusy(f"arm {arm_id} is executing")

        job = self._new_job(source)
        self._job_event(job)
        old_mode = screen.orientation_mode
        if orientation_mode is not None:
            screen.orientation_mode = orientation_mode
        arm = self.room.arm(arm_id)
        try:
            q_goal, traj = self._plan_arm(arm, pose)
        except Unreachable as exc:
            screen.orientation_mode = old_mode
            return self._reject(job, f"unreachable: {exc}")
        job.targets[arm_id] = q_goal
        job.trajectories[arm_id] = traj

        job.state = "validating"
        self._job_event(job)
        # A member that leaves its abutment loses the group's margin waiver
        # (the end state must stand on its own); one that stays nestled — a
        # panel pulled straight down, say — keeps it, since the panels remain
        # intentionally close.  Overlap is forbidden either way.
        goal_fk = screen_pose_from_joints(self.room, arm_id, q_goal, self.params)
        separates = self._clears_formation(screen_id, goal_fk)
        violation = validate_trajectory(self.room, arm_id, traj, people=self._capsules, params=self.params)
        if violation is None:
            formations = (
                [g for g in self.room.formations if screen_id not in g]
                if separates
                else self.room.formations
            )
            violation = self._end_state_violation({screen_id: goal_fk}, formations)
        if violation is not None:
            screen.orientation_mode = old_mode
            job.violation = violation.to_dict()
            self._publish("ds/safety/violation", job.violation)
            return self._reject(job, str(violation))

        if separates and any(screen_id in g for g in self.room.formations):
            job.formation_commit = ("drop", {screen_id})
        self._unassign_moved_spans({screen_id}, "member screen moved individually")
        if orientation_mode is not None and orientation_mode != old_mode:
            self.room.bump()
        job.state = "executing"
        self._job_event(job)
        return job

    def _clears_formation(self, screen_id: int, end_pose: Pose) -> bool:
        """True when the end pose clears the margin against every formation
        partner, i.e. the move genuinely separates the panel from its group."""
        partners = {s for g in self.room.formations if screen_id in g for s in g} - {screen_id}
        if not partners:
            return True
        moved = obb_from_screen(self.room.screen(screen_id), end_pose)
        return all(
            sat_clearance(moved, obb_from_screen(self.room.screen(p))) >= OBB_MARGIN
            for p in partners
        )

    def _halt_all(self, reason: str) -> None:
        for job in self.jobs.values():
            if job.state == "executing":
                job.state = "halted"
                job.reason = reason
                job.cursor = max(0, job.cursor - 1)
                self._job_event(job)

    def _advance_motion(self) -> None:
        executing = [j for j in sorted(self.jobs.values(), key=lambda j: j.id) if j.state == "executing"]
        if not executing:
            return
        moved: dict[int, tuple[int, np.ndarray]] = {}
        cand: dict[int, Pose] = {}
        advanced: list[MotionJob] = []
        for job in executing:
            # skip over zero-length stages (arm already at its goal)
            while job.stage < len(job.arms) and job.cursor >= len(job.trajectories[job.arms[job.stage]]) - 1:
                job.stage += 1
                job.cursor = 0
            if job.stage >= len(job.arms):
                self._complete_job(job)
                continue
            arm_id = job.arms[job.stage]
            traj = job.trajectories[arm_id]
            job.cursor += 1
            q = traj.waypoints[job.cursor]
            sid = self.room.screen_for_arm(arm_id).id
            moved[sid] = (arm_id, q)
            cand[sid] = screen_pose_from_joints(self.room, arm_id, q, self.params)
            advanced.append(job)
        if not moved:
            return

        if self._capsules:
            clearance, pair = person_clearance(self.room, self._capsules, candidate_poses=cand)
            if clearance < PERSON_HALT_CLEARANCE:
                self._publish("ds/safety/halt", {"clearance": float(clearance), "pair": list(pair)})
                self._halt_all(f"person clearance {clearance:.3f} m")
                return
        viols = check_configuration(
            self.room, candidate_poses=cand, people=self._capsules, only_screens=set(moved)
        )
        if viols:
            self._publish("ds/safety/violation", viols[0].to_dict())
            self._halt_all(str(viols[0]))
            return

        for sid, (arm_id, q) in moved.items():
            self.room.set_arm_q(arm_id, q, bump=False)
            self.room.set_screen_pose(sid, cand[sid], bump=False)
        self.room.bump()
        for job in advanced:
            total = job.total_steps
            job.progress = 1.0 if total == 0 else min(1.0, job.completed_steps() / total)
            if job.completed_steps() >= total:
                self._complete_job(job)

    def _complete_job(self, job: MotionJob) -> None:
        self._commit_formations(job)
        job.state = "done"
        job.progress = 1.0
        self._job_event(job)
        self._finish_job(job)

    def _commit_formations(self, job: MotionJob) -> None:
        if job.formation_commit is None:
            return
        kind, payload = job.formation_commit
        if kind == "set":
            new = [list(g) for g in payload]
        else:  # "drop": screens that left their abutment
            new = []
            for g in self.room.formations:
                kept = [s for s in g if s not in payload]
                if len(kept) >= 2:
                    new.append(kept)
        if new != self.room.formations:
            self.room.formations = new
            self.room.bump()

    def _finish_job(self, job: MotionJob) -> None:
        if job.pending_assignment is None:
            return
        view_id, screens = job.pending_assignment
        try:
            self.assign_view(view_id, screens)
        except (AssignmentError, UnknownEntity) as exc:
            self._publish(f"ds/display/view/{view_id}/warning", {"reason": str(exc)})

    # -- views and groups -------------------------------------------------------

    def create_view(self, content_ref: str) -> View:
        view = View(id=self._next_view, content_ref=str(content_ref))
        self._next_view += 1
        self.views[view.id] = view
        self._publish(f"ds/display/view/{view.id}/created", view.to_dict())
        return view

    def _view_by_ref(self, content_ref: str) -> View:
        for view in self.views.values():
            if view.content_ref == content_ref:
                return view
        return self.create_view(content_ref)

    def _holder(self, screen_id: int) -> View | None:
        for view in self.views.values():
            if screen_id in view.assignment:
                return view
        return None

    def _mirror(self) -> None:
        self.room.set_view_mirror({v.id: list(v.assignment) for v in self.views.values() if v.assignment})

    def assign_view(self, view_id: int, screen_ids) -> View:
        """Assign a view to one screen or a contiguous ordered span."""
        if view_id not in self.views:
            raise UnknownEntity(f"view {view_id}")
        view = self.views[view_id]
        screens = tuple(int(s) for s in screen_ids)
        if not screens:
            raise AssignmentError("assignment needs at least one screen")
        for sid in screens:
            self.room.screen(sid)
        if len(set(screens)) != len(screens):
            raise AssignmentError("duplicate screens in assignment")
        if len(screens) > 1:
            run = _circular_run(screens, len(self.room.screens))
            if run is None or tuple(run) != screens:
                raise AssignmentError(f"span {list(screens)} is not contiguous along the circle")
        for sid in screens:
            holder = self._holder(sid)
            if holder is not None and holder.id != view_id:
                raise AssignmentError(f"screen {sid} already holds view {holder.id}")
        view.assignment = screens
        self._mirror()
        self._publish(f"ds/display/view/{view_id}/assigned", view.to_dict())
        return view

    def unassign_view(self, view_id: int, reason: str = "cleared") -> None:
        if view_id not in self.views:
            raise UnknownEntity(f"view {view_id}")
        view = self.views[view_id]
        if not view.assignment:
            return
        view.assignment = ()
        # The abutment formation outlives the content: the panels are still
        # physically adjacent, so the clearance waiver must hold until one of
        # them actually moves away (motion jobs drop it on completion).
        self._span_formations.pop(view_id, None)
        self._mirror()
        self._publish(f"ds/display/view/{view_id}/cleared", {"reason": reason})

    def _unassign_moved_spans(self, moved_screens: set, reason: str) -> None:
        """A spanned view whose member screen moves individually loses the span."""
        for view in list(self.views.values()):
            if len(view.assignment) > 1 and moved_screens.intersection(view.assignment):
                if set(view.assignment) <= moved_screens and len(moved_screens) == len(view.assignment):
                    continue  # the whole span moves together (its own span job)
                self._publish(f"ds/display/view/{view.id}/warning", {"reason": reason})
                self.unassign_view(view.id, reason=reason)

    def create_group(self, screen_ids, label: str = "") -> AnalysisGroup:
        screens = tuple(sorted(int(s) for s in screen_ids))
        if not screens:
            raise AssignmentError("group needs at least one screen")
        for sid in screens:
            self.room.screen(sid)
        taken = {s for g in self.groups.values() for s in g.screen_ids}
        overlap = taken.intersection(screens)
        if overlap:
            raise AssignmentError(f"screens {sorted(overlap)} already grouped")
        group = AnalysisGroup(id=self._next_group, screen_ids=screens, label=label)
        self._next_group += 1
        self.groups[group.id] = group
        self.room.bump()  # group entity joins the sync state
        self._publish(f"ds/display/group/{group.id}/created", group.to_dict())
        return group

    # -- touch routing ------------------------------------------------------------

    def _route_contact(self, screen_id: int, contact) -> None:
        screen = self.room.screen(screen_id)
        hu, hv = screen.half_extents()
        uv = (
            float(contact.point_local[0] / (2.0 * hu) + 0.5),
            float(contact.point_local[1] / (2.0 * hv) + 0.5),
        )
        metres = (float(contact.point_local[0]), float(contact.point_local[1]))
        rec = self._touches.get(screen_id)
        view = self._holder(screen_id)
        if rec is None:
            rec = {"start": metres, "dragged": False, "view": view.id if view else None}
            self._touches[screen_id] = rec
            phase = "down"
            if view is None:
                self._publish(f"ds/display/screen/{screen_id}/notice", {"reason": "touch on empty screen"})
        else:
            phase = "move"
        if math.hypot(metres[0] - rec["start"][0], metres[1] - rec["start"][1]) > DRAG_THRESHOLD:
            rec["dragged"] = True
        rec["last_uv"] = uv
        rec["force"] = float(np.linalg.norm(contact.force))
        if view is not None:
            self._publish(
                f"ds/display/view/{view.id}/input",
                {
                    "phase": phase,
                    "uv": list(self._joint_uv(view, screen_id, uv)),
                    "screen": screen_id,
                    "force_n": rec["force"],
                    "drag": rec["dragged"],
                },
            )

    def _end_contact(self, screen_id: int) -> None:
        rec = self._touches.pop(screen_id, None)
        if rec is None:
            return
        view = self.views.get(rec["view"]) if rec["view"] is not None else None
        if view is not None and view.assignment:
            self._publish(
                f"ds/display/view/{view.id}/input",
                {
                    "phase": "up",
                    "uv": list(self._joint_uv(view, screen_id, rec.get("last_uv", (0.5, 0.5)))),
                    "screen": screen_id,
                    "force_n": rec.get("force", 0.0),
                    "drag": rec["dragged"],
                    "gesture": "drag" if rec["dragged"] else "click",
                },
            )

    @staticmethod
    def _joint_uv(view: View, screen_id: int, uv) -> tuple:
        j = view.assignment.index(screen_id)
        k = len(view.assignment)
        return ((j + uv[0]) / k, uv[1])

    # -- compliance / pushes --------------------------------------------------------

    def _begin_push(self, event: dict) -> None:
        sid = int(event["screen"])
        screen = self.room.screen(sid)
        push = {
            "screen_id": sid,
            "arm_id": screen.arm_id,
            "uv": tuple(float(c) for c in event.get("uv", (0.5, 0.5))),
            "force_n": float(event.get("force_n", 8.0)),
            "until_tick": self.ticks + max(1, int(round(float(event.get("duration_s", 0.3)) / TICK_DT))),
            "compliant": bool(event.get("compliant", False)),
        }
        if push["compliant"] and screen.arm_id not in self._busy_arms():
            self._modes[screen.arm_id] = "compliant"
        self._pushes.append(push)

    def _push_wrench(self, push: dict):
        """Base-frame wrench at the tool point for a scripted panel press."""
        screen = self.room.screen(push["screen_id"])
        arm = self.room.arm(push["arm_id"])
        hu, hv = screen.half_extents()
        u, v = push["uv"]
        p_local = np.array([(u - 0.5) * 2.0 * hu, (v - 0.5) * 2.0 * hv, 0.0])
        n_world = screen.pose.transform_direction([0.0, 0.0, 1.0])
        f_world = -push["force_n"] * n_world
        p_world = screen.pose.transform_point(p_local)
        rb = arm.base.rotation()
        f_base = rb.T @ f_world
        r_base = rb.T @ (p_world - screen.pose.position)
        return np.concatenate([f_base, np.cross(r_base, f_base)])

    def _compliance(self) -> None:
        if not self._pushes:
            return
        still = []
        for push in self._pushes:
            if self.ticks >= push["until_tick"]:
                self._end_contact(push["screen_id"])
                if push["compliant"]:
                    self._modes[push["arm_id"]] = "position"
                continue
            still.append(push)
            arm = self.room.arm(push["arm_id"])
            screen = self.room.screen(push["screen_id"])
            wrench = self._push_wrench(push)
            tau = jacobian(self.params, arm.q).T @ wrench
            state = ArmState(q=arm.q, tau_ext=tau, mode=self._modes[push["arm_id"]])
            try:
                contact = estimate_contact(self.params, state, screen)
            except (NoContact, OffPanel):
                contact = None
            if contact is not None:
                self._route_contact(push["screen_id"], contact)
            if self._modes[push["arm_id"]] == "compliant" and push["arm_id"] not in self._busy_arms():
                q_new, _clamped = compliance_step(
                    self.params, ArmState(q=arm.q, tau_ext=tau, mode="compliant"), wrench, TICK_DT
                )
                pose = screen_pose_from_joints(self.room, push["arm_id"], q_new, self.params)
                viols = check_configuration(
                    self.room,
                    candidate_poses={screen.id: pose},
                    people=self._capsules,
                    only_screens={screen.id},
                )
                if not viols:
                    self._unassign_moved_spans({screen.id}, "member screen moved individually")
                    self.room.set_arm_q(push["arm_id"], q_new, bump=False)
                    self.room.set_screen_pose(screen.id, pose, bump=False)
                    self.room.bump()
        self._pushes = still

    # -- perception ------------------------------------------------------------------

    def _perception(self) -> None:
        ts = self.ticks * TICK_DT
        dt = PERCEPTION_EVERY * TICK_DT
        if self.observation_source is not None:
            observations = list(self.observation_source(self.room, self._capsules, ts))
        else:
            observations = []
            for key in sorted(self._people):
                body = self._people[key]
                body["position"] = body["position"] + body["velocity"] * dt
                if body["gesture"] is not None and ts > body["gesture_until"]:
                    body["gesture"] = None
                lm = _scripted_landmarks(body, self.room, ts)
                centroid = np.array([body["position"][0], body["position"][1], 0.5 * body["height"]])
                observations.append(PersonObservation(centroid=centroid, point_count=400, landmarks=lm))
        if not observations and not self.tracker.tracks:
            return

        tracks = self.tracker.update(observations, dt)
        ids = [t.id for t in tracks]
        sig = tuple(
            (t.id, tuple(float(c) for c in t.centroid), tuple(float(v) for v in t.velocity)) for t in tracks
        )
        if ids != self.room.people:
            self.room.set_people(ids)
        elif sig != self._track_sig:
            self.room.bump()
        self._track_sig = sig
        self._capsules = [
            PersonCapsule(
                track_id=t.id,
                base=np.array([t.centroid[0], t.centroid[1], 0.0]),
                height=float(np.clip(2.0 * t.centroid[2], 0.5, 2.3)),
            )
            for t in tracks
        ]
        for track in tracks:
            self.gestures.observe(track, ts)
        for event in self.gestures.classify(self.room, ts):
            self.route_gesture(event)

    def _track(self, track_id: int | None):
        for t in self.tracker.tracks:
            if t.id == track_id:
                return t
        return None

    # -- gesture routing -----------------------------------------------------------------

    def route_gesture(self, event: GestureEvent) -> None:
        self._publish(
            f"ds/perception/track/{event.track_id}/gesture",
            {
                "kind": event.kind,
                "target": list(event.target) if isinstance(event.target, tuple) else event.target,
                "ts": float(event.ts),
                **({"zoom_rate": float(event.data["zoom_rate"])} if event.data else {}),
            },
        )
        if event.kind == "raise_both_hands":
            holder = self._holder(int(event.target))
            if holder is None:
                self._publish(
                    f"ds/display/screen/{int(event.target)}/notice", {"reason": "no view to clear"}
                )
            else:
                self.unassign_view(holder.id, reason="cleared by gesture")
        elif event.kind == "raise_one_hand":
            track = self._track(event.track_id)
            if track is not None:
                self._focus_towards(track.centroid, event.track_id)
        elif event.kind == "table_touch":
            self._publish(
                "ds/display/table/input",
                {"kind": "touch", "uv": list(event.target), "track": event.track_id},
            )
        elif event.kind == "table_pinch":
            self._publish(
                "ds/display/table/input",
                {
                    "kind": "pinch",
                    "uv": list(event.target),
                    "track": event.track_id,
                    "zoom_rate": float(event.data["zoom_rate"]),
                },
            )

    def _yaw_target(self, screen, toward) -> Pose | None:
        """Pose yawing the panel toward a point, clamped to the focus limit."""
        pos = screen.pose.position
        desired = math.atan2(float(toward[1] - pos[1]), float(toward[0] - pos[0]))
        delta = wrap_angle(desired - screen_yaw(screen))
        delta = float(np.clip(delta, -FOCUS_MAX_YAW, FOCUS_MAX_YAW))
        if abs(delta) < FOCUS_MIN_YAW:
            return None
        rz = Pose.from_axis_angle([0.0, 0.0, 1.0], delta).rotation()
        return Pose.from_rotation(rz @ screen.pose.rotation(), pos)

    def _focus_towards(self, point, track_id: int) -> list:
        """Yaw every free screen toward the requester; emit the lighting cue."""
        azimuth = math.atan2(float(point[1]), float(point[0]))
        self._publish("ds/display/focus", {"azimuth": azimuth, "track": track_id})
        self._publish("ds/room/lighting", {"azimuth": azimuth, "track": track_id})
        jobs = []
        busy = self._busy_arms()
        for screen in sorted(self.room.screens, key=lambda s: s.id):
            if screen.arm_id in busy or self._holder(screen.id) is not None:
                continue
            target = self._yaw_target(screen, point)
            if target is None:
                continue
            jobs.append(self.submit_pose_intent(screen.id, target, source="focus"))
        return jobs

    # -- spoken commands ------------------------------------------------------------------

    def handle_utterance(self, utt: UtteranceEvent, locate_speaker: bool = True) -> dict | None:
        """Parse, resolve, and execute one transcript.

        `locate_speaker=False` skips bearing attribution (remote clients have
        no microphone-array azimuth); deictic commands then reject at resolve.
        """
        ast = parse(utt.transcript)
        if isinstance(ast, NotAddressed):
            return None
        if isinstance(ast, ParseError):
            return self._command_rejected(utt, "parse", ast.message, position=ast.position)
        speaker = azimuth_to_speaker(utt.azimuth, self.tracker.tracks) if locate_speaker else NoSpeaker()
        if isinstance(speaker, Ambiguous):
            return self._command_rejected(utt, "speaker", "ambiguous speaker bearing")
        track = None if isinstance(speaker, NoSpeaker) else self._track(speaker)
        pointing = None
        if track is not None:
            try:
                pointing = pointing_ray(track)
            except NoLandmarks:
                pointing = None
        ctx = ResolveContext(
            room=self.room,
            speaker=track,
            pointing=pointing,
            groups={gid: tuple(g.screen_ids) for gid, g in self.groups.items()},
        )
        try:
            cmd = resolve(ast, ctx)
        except (UnresolvableDeixis, UnknownEntity, KeyError, ValueError) as exc:
            return self._command_rejected(utt, "resolve", str(exc))
        try:
            result = self.execute_command(cmd)
        except (MotionBusy, AssignmentError, CommandError, UnknownEntity, ValueError) as exc:
            return self._command_rejected(utt, "execute", str(exc))
        payload = {
            "status": "accepted",
            "transcript": utt.transcript,
            "canonical": pretty(ast),
            **result,
        }
        self._publish("ds/audio/command", payload)
        return payload

    def _command_rejected(self, utt: UtteranceEvent, stage: str, reason: str, position: int | None = None) -> dict:
        payload = {"status": "rejected", "stage": stage, "reason": reason, "transcript": utt.transcript}
        if position is not None:
            payload["position"] = position
        self._publish("ds/audio/command", payload)
        return payload

    def execute_command(self, cmd: ResolvedCommand) -> dict:
        """Perform a resolved command; returns a result summary for the caller."""
        if cmd.verb == "apply":
            names = {"radius": "radius", "height": "screen_height", "gap": "gap"}
            overrides = {names[n]: v for n, v in cmd.settings}
            job = self.apply_configuration(cmd.config, overrides, source="voice")
            return {"action": "apply", "config": cmd.config, "job": job.id, "job_state": job.state}
        if cmd.verb == "move":
            sid = cmd.screen_ids[0]
            job = self.submit_pose_intent(sid, self._moved_pose(sid, cmd.direction, cmd.distance_m), source="voice")
            return {"action": "move", "screen": sid, "job": job.id, "job_state": job.state}
        if cmd.verb == "load":
            screens = list(cmd.screen_ids) or list(cmd.group_screen_ids)
            view = self._view_by_ref(cmd.view)
            if len(screens) > 1:
                run = _circular_run(screens, len(self.room.screens))
                if run is None:
                    raise AssignmentError(f"group {screens} is not contiguous along the circle")
                screens = list(run)
            if view.assignment:
                self.unassign_view(view.id, reason="reassigned")
            for sid in screens:
                holder = self._holder(sid)
                if holder is not None:
                    self.unassign_view(holder.id, reason=f"replaced by view {view.id}")
            self.assign_view(view.id, screens)
            return {"action": "load", "view": view.id, "screens": screens}
        if cmd.verb == "clear":
            screens = list(cmd.screen_ids) or list(cmd.group_screen_ids)
            cleared = []
            for sid in screens:
                holder = self._holder(sid)
                if holder is not None and holder.id not in cleared:
                    self.unassign_view(holder.id, reason="cleared by command")
                    cleared.append(holder.id)
            if not cleared:
                for sid in screens:
                    self._publish(f"ds/display/screen/{sid}/notice", {"reason": "no view to clear"})
            return {"action": "clear", "views": cleared, "screens": screens}
        if cmd.verb == "swap":
            a, b = cmd.screen_ids
            return self._swap(a, b)
        if cmd.verb == "span":
            return self._span(cmd.view, list(cmd.group_screen_ids))
        if cmd.verb == "focus":
            track = self._track(cmd.speaker_track)
            if track is None:
                raise CommandError("focus needs a located speaker")
            sid = cmd.screen_ids[0]
            target = self._yaw_target(self.room.screen(sid), track.centroid)
            if target is None:
                return {"action": "focus", "screen": sid, "job": None}
            job = self.submit_pose_intent(sid, target, source="voice")
            return {"action": "focus", "screen": sid, "job": job.id, "job_state": job.state}
        raise CommandError(f"unknown verb {cmd.verb!r}")

    def _moved_pose(self, screen_id: int, direction: str, distance: float) -> Pose:
        screen = self.room.screen(screen_id)
        pos = screen.pose.position
        theta = math.atan2(float(pos[1]), float(pos[0]))
        radial = np.array([math.cos(theta), math.sin(theta), 0.0])
        tangent = np.array([-math.sin(theta), math.cos(theta), 0.0])  # viewer-at-center's left
        step = {
            "up": np.array([0.0, 0.0, 1.0]),
            "down": np.array([0.0, 0.0, -1.0]),
            "in": -radial,
            "out": radial,
            "left": tangent,
            "right": -tangent,
        }[direction]
        return Pose(pos + distance * step, screen.pose.orientation)

    def _swap(self, a: int, b: int) -> dict:
        va, vb = self._holder(a), self._holder(b)
        if va is None and vb is None:
            raise AssignmentError(f"screens {a} and {b} are both empty; nothing to swap")
        if va is vb:
            raise AssignmentError(f"screens {a} and {b} hold the same view")
        for v in (va, vb):
            if v is not None and len(v.assignment) > 1:
                raise AssignmentError(f"view {v.id} spans several screens; cannot swap")
        if va is not None:
            va.assignment = (b,)
        if vb is not None:
            vb.assignment = (a,)
        self._mirror()  # both reassignments commit under a single seq bump
        self._publish(
            "ds/display/swap",
            {"screens": [a, b], "views": [va.id if va else None, vb.id if vb else None]},
        )
        return {"action": "swap", "screens": [a, b], "views": [va.id if va else None, vb.id if vb else None]}

    def _span(self, view_ref: str, screens: list) -> dict:
        n = len(self.room.screens)
        run = _circular_run(screens, n)
        if run is None:
            raise AssignmentError(f"span {sorted(screens)} is not contiguous along the circle")
        arms = {self.room.screen(sid).arm_id for sid in run}
        busy = arms.intersection(self._busy_arms())
        if busy:
            raise MotionBusy(f"arms {sorted(busy)} are executing")
        view = self._view_by_ref(view_ref)
        if view.assignment:
            self.unassign_view(view.id, reason="re-spanned")
        for sid in run:
            holder = self._holder(sid)
            if holder is not None:
                self.unassign_view(holder.id, reason=f"replaced by span of view {view.id}")

        poses = self._span_poses(run)
        job = self._new_job("voice")
        self._job_event(job)
        old_formations = [list(g) for g in self.room.formations]
        final = [g for g in old_formations if not set(g).intersection(run)] + [sorted(run)]
        if sorted(run) not in old_formations:
            self.room.formations = old_formations + [sorted(run)]
        job.formation_commit = ("set", final)
        try:
            for sid in run:
                arm = self.room.arm(self.room.screen(sid).arm_id)
                q_goal, traj = self._plan_arm(arm, poses[sid])
                job.targets[arm.arm_id] = q_goal
                job.trajectories[arm.arm_id] = traj
        except Unreachable as exc:
            self.room.formations = old_formations
            self._reject(job, f"unreachable: {exc}")
            return {"action": "span", "view": view.id, "job": job.id, "job_state": job.state}

        job.state = "validating"
        self._job_event(job)
        goal_poses = {
            self.room.screen_for_arm(a).id: screen_pose_from_joints(self.room, a, job.targets[a], self.params)
            for a in job.arms
        }
        violation = self._end_state_violation(goal_poses, final) or self._validate_staged(job)
        if violation is not None:
            self.room.formations = old_formations
            job.violation = violation.to_dict()
            self._publish("ds/safety/violation", job.violation)
            self._reject(job, str(violation))
            return {"action": "span", "view": view.id, "job": job.id, "job_state": job.state}

        self._span_formations[view.id] = sorted(run)
        self.room.bump()  # commit the transitional formation
        job.pending_assignment = (view.id, run)
        job.state = "executing"
        self._job_event(job)
        return {"action": "span", "view": view.id, "screens": list(run), "job": job.id, "job_state": job.state}

    def _span_poses(self, run: tuple) -> dict:
        """Abutting side-by-side targets for a contiguous screen run."""
        n = len(self.room.screens)
        members = [self.room.screen(sid) for sid in run]
        ids = sorted(s.id for s in self.room.screens)
        first = ids.index(run[0])
        beta = 2.0 * math.pi * (first + 0.5 * (len(run) - 1)) / n
        radius = float(np.mean([np.linalg.norm(s.pose.position[:2]) for s in members]))
        height = float(np.mean([s.pose.position[2] for s in members]))
        width = max(s.extents()[0] for s in members)
        spacing = width + SPAN_GAP
        radial = np.array([math.cos(beta), math.sin(beta), 0.0])
        tangent = np.array([-math.sin(beta), math.cos(beta), 0.0])
        z_axis = -radial  # panels face the room center
        y_axis = np.array([0.0, 0.0, 1.0])
        x_axis = np.cross(y_axis, z_axis)
        rot = np.column_stack([x_axis, y_axis, z_axis])
        poses = {}
        for j, screen in enumerate(members):
            offset = (j - 0.5 * (len(run) - 1)) * spacing
            pos = radius * radial + offset * tangent
            pos[2] = height
            poses[screen.id] = Pose.from_rotation(rot, pos)
        return poses

    # -- the heartbeat ------------------------------------------------------------------------

    def tick(self) -> None:
        """One 10 ms simulation step; see the module docstring for the phases."""
        self.ticks += 1
        while self._inbox:
            self._handle_event(self._inbox.popleft())
        if self.ticks % PERCEPTION_EVERY == 0:
            self._perception()
        self._advance_motion()
        self._compliance()
        self._emit_state()
        self.clock.advance(int(TICK_DT * 1e9))

    def run(self, ticks: int) -> None:
        for _ in range(int(ticks)):
            self.tick()
