"""Collision gating between screens, people, and the room structure.

All checks are pure functions over a room snapshot plus candidate poses, so
they can run in parallel across arms and always reproduce.  Screen panels are
oriented boxes; people are vertical capsules.  Separation uses the 15-axis
test with an additive clearance margin: a pair is in violation when no axis
certifies at least ``margin`` of clearance.  Screens that belong to the same
formation (an intentionally abutting group) are exempt from the margin but
still may not overlap outright.
"""

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose, quat_to_matrix
from .kinematics import ArmParams, Trajectory, forward_kinematics
from .room import PANEL_THICKNESS, RoomModel, Screen, UnknownEntity  # noqa: F401

OBB_MARGIN = 0.05  # required clearance between independent screens (m)
PERSON_HALT_CLEARANCE = 0.10  # controller halts all motion below this (m)

_EPS = 1e-12


@dataclass(eq=False)
class Obb:
    """Oriented box: center, half extents along local axes, unit quaternion."""

    center: np.ndarray
    half_extents: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.half_extents = np.asarray(self.half_extents, dtype=float)
        self.orientation = np.asarray(self.orientation, dtype=float)
        if self.center.shape != (3,) or self.half_extents.shape != (3,):
            raise ValueError("Obb center/half_extents must be 3-vectors")
        if np.any(self.half_extents <= 0):
            raise ValueError("Obb half extents must be positive")
        n = float(np.linalg.norm(self.orientation))
        if self.orientation.shape != (4,) or abs(n - 1.0) > 1e-6:
            raise ValueError("Obb orientation must be a unit quaternion")
        self.orientation = self.orientation / n
        self._rotation = quat_to_matrix(self.orientation)
        self.bounding_radius = float(np.linalg.norm(self.half_extents))

    def rotation(self) -> np.ndarray:
        return self._rotation

    def corners(self) -> np.ndarray:
        R = self.rotation()
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=float,
        )
        return self.center + (signs * self.half_extents) @ R.T

    @staticmethod
    def from_pose(pose: Pose, half_extents) -> "Obb":
        return Obb(pose.position.copy(), np.asarray(half_extents, dtype=float), pose.orientation.copy())


@dataclass(eq=False)
class PersonCapsule:
    """Standing person: vertical capsule from the floor point, total height."""

    track_id: int
    base: np.ndarray
    height: float
    radius: float = 0.30

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=float)
        if self.base.shape != (3,):
            raise ValueError("capsule base must be a 3-vector")
        if not (0.5 <= self.height <= 2.3):
            raise ValueError(f"person height {self.height} outside [0.5, 2.3]")
        if self.radius <= 0:
            raise ValueError("person radius must be positive")

    def segment(self) -> tuple[np.ndarray, np.ndarray]:
        inset = min(self.radius, 0.5 * self.height)
        p0 = self.base + np.array([0.0, 0.0, inset])
        p1 = self.base + np.array([0.0, 0.0, self.height - inset])
        return p0, p1


@dataclass(eq=False)
class Violation:
    kind: str  # screen-screen | screen-person | screen-structure
    entities: tuple[str, str]
    penetration_depth: float
    waypoint_index: int | None = None

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "entities": list(self.entities),
            "penetration_depth": float(self.penetration_depth),
        }
        if self.waypoint_index is not None:
            d["waypoint_index"] = int(self.waypoint_index)
        return d


# ---------------------------------------------------------------------------
# separation primitives


def sat_clearance(a: Obb, b: Obb) -> float:
    """Largest certified separation over the 15 candidate axes.

    Positive: the boxes are at least that far apart along some direction.
    <= 0: no axis separates them, i.e. the boxes intersect (0 = touching).
    The value never exceeds the true distance, so requiring
    ``sat_clearance >= margin`` is conservative.
    """
    Ra, Rb = a.rotation(), b.rotation()
    T = b.center - a.center
    axes = [Ra[:, i] for i in range(3)] + [Rb[:, i] for i in range(3)]
    for i in range(3):
        for j in range(3):
            axes.append(np.cross(Ra[:, i], Rb[:, j]))
    best = -math.inf
    for L in axes:
        n = float(np.linalg.norm(L))
        if n < _EPS:
            continue  # parallel edge pair; covered by the face axes
        L = L / n
        ra = float(np.abs(L @ Ra) @ a.half_extents)
        rb = float(np.abs(L @ Rb) @ b.half_extents)
        gap = abs(float(L @ T)) - ra - rb
        if gap > best:
            best = gap
    return best


def obb_intersect(a: Obb, b: Obb) -> bool:
    """True iff the boxes overlap (touching counts)."""
    return sat_clearance(a, b) <= _EPS


def _pair_gap(a: Obb, b: Obb, margin: float) -> float | None:
    """sat_clearance with a bounding-sphere early-out; None means >= margin."""
    bound = float(np.linalg.norm(b.center - a.center)) - a.bounding_radius - b.bounding_radius
    if bound >= margin:
        return None
    gap = sat_clearance(a, b)
    return None if gap >= margin - _EPS else gap


def point_box_distance(point, box: Obb) -> float:
    local = box.rotation().T @ (np.asarray(point, dtype=float) - box.center)
    excess = np.maximum(np.abs(local) - box.half_extents, 0.0)
    return float(np.linalg.norm(excess))


def segment_box_distance(p0, p1, box: Obb) -> float:
    """Min distance from segment to box.

    Distance-to-box is convex along the segment, so a coarse scan brackets
    the minimum and a golden-section pass refines it.
    """
    R = box.rotation()
    a = R.T @ (np.asarray(p0, dtype=float) - box.center)
    b = R.T @ (np.asarray(p1, dtype=float) - box.center)
    he = box.half_extents
    if float(np.linalg.norm(b - a)) < _EPS:
        return float(np.linalg.norm(np.maximum(np.abs(a) - he, 0.0)))

    ts = np.linspace(0.0, 1.0, 33)
    pts = a + ts[:, None] * (b - a)
    dists = np.linalg.norm(np.maximum(np.abs(pts) - he, 0.0), axis=1)
    k = int(np.argmin(dists))
    lo, hi = ts[max(0, k - 1)], ts[min(len(ts) - 1, k + 1)]

    def f(t: float) -> float:
        p = a + t * (b - a)
        return float(np.linalg.norm(np.maximum(np.abs(p) - he, 0.0)))

    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - inv_phi * (hi - lo)
    x2 = lo + inv_phi * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(40):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - inv_phi * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + inv_phi * (hi - lo)
            f2 = f(x2)
    return min(float(dists[k]), f1, f2)


def capsule_clearance(capsule: PersonCapsule, box: Obb) -> float:
    """Surface-to-surface distance; negative when interpenetrating."""
    p0, p1 = capsule.segment()
    return segment_box_distance(p0, p1, box) - capsule.radius


def _point_segment_distance(p, a, b) -> float:
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom < _EPS else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def _capsule_gap(capsule: PersonCapsule, box: Obb, margin: float) -> float | None:
    """capsule_clearance with a bounding-sphere early-out; None means >= margin."""
    p0, p1 = capsule.segment()
    bound = _point_segment_distance(box.center, p0, p1) - box.bounding_radius - capsule.radius
    if bound >= margin:
        return None
    clearance = segment_box_distance(p0, p1, box) - capsule.radius
    return None if clearance >= margin - _EPS else clearance


# ---------------------------------------------------------------------------
# room assembly


def obb_from_screen(screen: Screen, pose: Pose | None = None) -> Obb:
    pose = pose if pose is not None else screen.pose
    hu, hv = screen.half_extents()
    return Obb.from_pose(pose, (hu, hv, 0.5 * PANEL_THICKNESS))


def structure_obbs(room: RoomModel) -> list[tuple[str, Obb]]:
    """Table and cowling as circumscribing boxes (conservative)."""
    t = room.table
    h = t.surface_height
    table = Obb(
        np.array([t.center_xy[0], t.center_xy[1], 0.5 * h]),
        np.array([t.radius, t.radius, 0.5 * h]),
        np.array([1.0, 0.0, 0.0, 0.0]),
    )
    c = room.cowling
    cowling = Obb(
        np.array([0.0, 0.0, room.ceiling_height - 0.5 * c.depth]),
        np.array([c.radius, c.radius, 0.5 * c.depth]),
        np.array([1.0, 0.0, 0.0, 0.0]),
    )
    return [("table", table), ("cowling", cowling)]


def shell_excess(room: RoomModel, box: Obb, margin: float) -> float:
    """How far the box (plus margin) pokes out of the room cylinder/floor/ceiling."""
    corners = box.corners()
    radial = float(np.max(np.hypot(corners[:, 0], corners[:, 1]))) + margin - room.room_radius
    low = margin - float(np.min(corners[:, 2]))
    high = float(np.max(corners[:, 2])) + margin - room.ceiling_height
    return max(radial, low, high)


def _resolved_poses(room: RoomModel, candidate_poses) -> dict[int, Pose]:
    poses = {s.id: s.pose for s in room.screens}
    if candidate_poses:
        for sid, pose in candidate_poses.items():
            room.screen(sid)  # raises UnknownEntity for bad ids
            poses[int(sid)] = pose
    return poses


def _formation_pairs(room: RoomModel) -> set[frozenset]:
    pairs: set[frozenset] = set()
    for group in room.formations:
        for i, a in enumerate(group):
            for b in group[i + 1 :]:
                pairs.add(frozenset((a, b)))
    return pairs


def check_configuration(
    room: RoomModel,
    candidate_poses: dict[int, Pose] | None = None,
    people: list[PersonCapsule] = (),
    margin: float = OBB_MARGIN,
    only_screens: "set[int] | None" = None,
) -> list[Violation]:
    """All pairwise screen/person/structure checks; empty list means ok.

    ``only_screens`` restricts the sweep to pairs that involve the given
    screen ids — the incremental form used to re-assert safety after a tick
    in which only those screens moved (pairs of unmoved screens cannot have
    newly violated).
    """
    poses = _resolved_poses(room, candidate_poses)
    screens = sorted(room.screens, key=lambda s: s.id)
    boxes = {s.id: obb_from_screen(s, poses[s.id]) for s in screens}
    exempt = _formation_pairs(room)
    watched = None if only_screens is None else {int(s) for s in only_screens}

    out: list[Violation] = []
    ids = [s.id for s in screens]
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            if watched is not None and a not in watched and b not in watched:
                continue
            m = 0.0 if frozenset((a, b)) in exempt else margin
            gap = _pair_gap(boxes[a], boxes[b], m)
            if gap is not None:
                out.append(
                    Violation("screen-screen", (f"screen:{a}", f"screen:{b}"), m - gap)
                )
    structures = structure_obbs(room)
    for sid in ids:
        if watched is not None and sid not in watched:
            continue
        for name, sbox in structures:
            gap = _pair_gap(boxes[sid], sbox, margin)
            if gap is not None:
                out.append(Violation("screen-structure", (f"screen:{sid}", name), margin - gap))
        excess = shell_excess(room, boxes[sid], margin)
        if excess > _EPS:
            out.append(Violation("screen-structure", (f"screen:{sid}", "room"), excess))
    for sid in ids:
        if watched is not None and sid not in watched:
            continue
        for person in people:
            clearance = _capsule_gap(person, boxes[sid], margin)
            if clearance is not None:
                out.append(
                    Violation(
                        "screen-person",
                        (f"screen:{sid}", f"person:{person.track_id}"),
                        margin - clearance,
                    )
                )
    return out


def person_clearance(
    room: RoomModel,
    people: list[PersonCapsule],
    candidate_poses: dict[int, Pose] | None = None,
) -> tuple[float, tuple[str, str] | None]:
    """Minimum screen-to-person distance; (+inf, None) with nobody around."""
    if not people:
        return math.inf, None
    poses = _resolved_poses(room, candidate_poses)
    candidates = []
    for s in sorted(room.screens, key=lambda s: s.id):
        box = obb_from_screen(s, poses[s.id])
        for person in people:
            p0, p1 = person.segment()
            bound = _point_segment_distance(box.center, p0, p1) - box.bounding_radius - person.radius
            candidates.append((bound, s.id, person, box))
    candidates.sort(key=lambda c: (c[0], c[1], c[2].track_id))
    best = math.inf
    pair = None
    for bound, sid, person, box in candidates:
        if bound >= best:
            break  # sorted: nothing closer remains
        d = max(0.0, capsule_clearance(person, box))
        if d < best:
            best = d
            pair = (f"screen:{sid}", f"person:{person.track_id}")
    return best, pair


def screen_pose_from_joints(room: RoomModel, arm_id: int, q, params: ArmParams | None = None) -> Pose:
    """World pose of the panel carried by ``arm_id`` at joint vector ``q``."""
    params = params if params is not None else ArmParams()
    return room.arm(arm_id).base.compose(forward_kinematics(params, q))


def validate_trajectory(
    room: RoomModel,
    arm_id: int,
    traj: Trajectory,
    people: list[PersonCapsule] = (),
    params: ArmParams | None = None,
    margin: float = OBB_MARGIN,
) -> Violation | None:
    """Earliest violating waypoint of a single-arm sweep, or None if clean."""
    params = params if params is not None else ArmParams()
    moving = room.screen_for_arm(arm_id)
    exempt = _formation_pairs(room)
    others = [
        (s.id, obb_from_screen(s)) for s in sorted(room.screens, key=lambda s: s.id) if s.id != moving.id
    ]
    structures = structure_obbs(room)

    for k, q in enumerate(traj.waypoints):
        pose = screen_pose_from_joints(room, arm_id, q, params)
        box = obb_from_screen(moving, pose)
        for sid, other in others:
            m = 0.0 if frozenset((moving.id, sid)) in exempt else margin
            gap = _pair_gap(box, other, m)
            if gap is not None:
                pair = tuple(f"screen:{x}" for x in sorted((moving.id, sid)))
                return Violation("screen-screen", pair, m - gap, waypoint_index=k)
        for name, sbox in structures:
            gap = _pair_gap(box, sbox, margin)
            if gap is not None:
                return Violation(
                    "screen-structure", (f"screen:{moving.id}", name), margin - gap, waypoint_index=k
                )
        excess = shell_excess(room, box, margin)
        if excess > _EPS:
            return Violation(
                "screen-structure", (f"screen:{moving.id}", "room"), excess, waypoint_index=k
            )
        for person in people:
            clearance = _capsule_gap(person, box, margin)
            if clearance is not None:
                return Violation(
                    "screen-person",
                    (f"screen:{moving.id}", f"person:{person.track_id}"),
                    margin - clearance,
                    waypoint_index=k,
                )
    return None
