"""Room state: screens on ceiling-mounted arms around a central table.

The room is a cylinder (origin at floor center, +Z up).  Fifteen arms hang
from a mount circle at the ceiling, one screen per arm.  Two projectors
cover the table surface; eight depth sensors sit on the central cowling.

All mutating entry points bump ``RoomModel.seq`` so downstream consumers
can order snapshots and deltas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, Ray, quat_from_matrix, wrap_angle

# Physical defaults: a 16 ft diameter, 9 ft tall room with a 2.5 m mount circle.
DEFAULT_ROOM_RADIUS = 2.438
DEFAULT_CEILING_HEIGHT = 2.743
MOUNT_CIRCLE_RADIUS = 2.5
MOUNT_CIRCLE_TOL = 1e-9
NUM_ARMS = 15

# 55-inch 16:9 panel, 4K.
DEFAULT_SCREEN_SIZE = (1.218, 0.685)
DEFAULT_SCREEN_RESOLUTION = (3840, 2160)
PANEL_THICKNESS = 0.06

CONFIGURATION_NAMES = ("immersion", "context", "triptych", "outward")


class NoScreens(LookupError):
    """Raised when an operation needs at least one screen and none exist."""


class UnknownConfiguration(KeyError):
    pass


class UnknownEntity(KeyError):
    pass


class RoomBounds(ValueError):
    """A pose left the room cylinder."""


@dataclass(eq=False)
class ArmMount:
    arm_id: int
    base: Pose  # world; z axis points at the floor
    q: np.ndarray = field(default_factory=lambda: np.zeros(7))

    def to_dict(self) -> dict:
        return {
            "arm_id": self.arm_id,
            "base": self.base.to_dict(),
            "q": [float(v) for v in self.q],
        }


@dataclass(eq=False)
class Screen:
    """Flat panel; +Z of the pose is the outward (viewing) normal.

    ``size_m`` is the physical panel (long side, short side).  In landscape
    mode the long side runs along local +X; portrait swaps the two.
    """

    id: int
    arm_id: int
    pose: Pose
    size_m: tuple[float, float] = DEFAULT_SCREEN_SIZE
    resolution_px: tuple[int, int] = DEFAULT_SCREEN_RESOLUTION
    orientation_mode: str = "portrait"

    def extents(self) -> tuple[float, float]:
        """(horizontal, vertical) panel dimensions for the active mode."""
        w, h = self.size_m
        if self.orientation_mode == "portrait":
            return (h, w)
        return (w, h)

    def half_extents(self) -> tuple[float, float]:
        u, v = self.extents()
        return (0.5 * u, 0.5 * v)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "arm_id": self.arm_id,
            "pose": self.pose.to_dict(),
            "size_m": [float(self.size_m[0]), float(self.size_m[1])],
            "resolution_px": [int(self.resolution_px[0]), int(self.resolution_px[1])],
            "orientation_mode": self.orientation_mode,
        }


@dataclass(eq=False)
class TableGeom:
    center_xy: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.75
    surface_height: float = 0.9
    raise_range: tuple[float, float] = (0.7, 1.1)
    projector_count: int = 2
    projector_resolution_px: tuple[int, int] = (1920, 1080)

    def to_dict(self) -> dict:
        return {
            "center_xy": [float(self.center_xy[0]), float(self.center_xy[1])],
            "radius": float(self.radius),
            "surface_height": float(self.surface_height),
            "raise_range": [float(self.raise_range[0]), float(self.raise_range[1])],
            "projector_count": self.projector_count,
            "projector_resolution_px": list(self.projector_resolution_px),
        }


@dataclass(eq=False)
class CowlingGeom:
    """Central ceiling structure carrying projectors and depth sensors."""

    radius: float = 0.5
    depth: float = 0.3  # how far it hangs below the ceiling

    def to_dict(self) -> dict:
        return {"radius": float(self.radius), "depth": float(self.depth)}


@dataclass(eq=False)
class SensorMount:
    sensor_id: int
    pose: Pose  # camera frame: +Z view direction, +X right, +Y down

    def to_dict(self) -> dict:
        return {"sensor_id": self.sensor_id, "pose": self.pose.to_dict()}


@dataclass(frozen=True)
class NamedConfiguration:
    """One of the stock room layouts plus its parameters."""

    name: str
    radius: float
    screen_height: float
    group_size: int = 3
    gap: float = 0.01
    orientation_mode: str = "portrait"

    @staticmethod
    def named(name: str, **overrides) -> "NamedConfiguration":
        defaults = {
            "immersion": dict(radius=1.9, screen_height=1.5, orientation_mode="portrait"),
            "context": dict(radius=2.2, screen_height=1.3, orientation_mode="landscape"),
            "triptych": dict(radius=1.8, screen_height=1.35, group_size=3, gap=0.01,
                             orientation_mode="portrait"),
            "outward": dict(radius=2.2, screen_height=1.5, orientation_mode="portrait"),
        }
        if name not in defaults:
            raise UnknownConfiguration(name)
        params = defaults[name]
        # immersion and context pin their orientation; the rest accept overrides
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in ("radius", "screen_height", "group_size", "gap", "orientation_mode"):
                raise ValueError(f"unknown configuration parameter {key!r}")
            if key == "orientation_mode" and name in ("immersion", "context"):
                continue
            params[key] = value
        return NamedConfiguration(name=name, **params)


def _facing_center_orientation(theta: float) -> np.ndarray:
    """Quaternion: +Z points from (r, theta) toward the room center, +Y up."""
    c, s = math.cos(theta), math.sin(theta)
    z = np.array([-c, -s, 0.0])
    y = np.array([0.0, 0.0, 1.0])
    x = np.cross(y, z)
    return quat_from_matrix(np.column_stack([x, y, z]))


def _facing_outward_orientation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    z = np.array([c, s, 0.0])
    y = np.array([0.0, 0.0, 1.0])
    x = np.cross(y, z)
    return quat_from_matrix(np.column_stack([x, y, z]))


class RoomModel:
    """Authoritative room state with a strictly increasing sequence number."""

    def __init__(
        self,
        arms: list[ArmMount],
        screens: list[Screen],
        table: TableGeom | None = None,
        cowling: CowlingGeom | None = None,
        sensors: list[SensorMount] | None = None,
        room_radius: float = DEFAULT_ROOM_RADIUS,
        ceiling_height: float = DEFAULT_CEILING_HEIGHT,
    ):
        self.seq = 0
        self.room_radius = float(room_radius)
        self.ceiling_height = float(ceiling_height)
        self.arms = list(arms)
        self.screens = list(screens)
        self.table = table if table is not None else TableGeom()
        self.cowling = cowling if cowling is not None else CowlingGeom()
        self.sensors = list(sensors) if sensors is not None else []
        self.people: list[int] = []  # track ids, mirrored from perception
        self.views: dict[int, list[int]] = {}  # view id -> screen ids (controller mirror)
        # Screens deliberately abutting as one surface (triptych groups, spans).
        # Safety drops the clearance margin inside a formation; raw overlap
        # between members is still a violation.
        self.formations: list[list[int]] = []
        self._validate()

    # -- construction ----------------------------------------------------

    @staticmethod
    def build_default(
        num_arms: int = NUM_ARMS,
        room_radius: float = DEFAULT_ROOM_RADIUS,
        ceiling_height: float = DEFAULT_CEILING_HEIGHT,
        screen_size: tuple[float, float] = DEFAULT_SCREEN_SIZE,
        num_sensors: int = 8,
    ) -> "RoomModel":
        arms = []
        screens = []
        for i in range(num_arms):
            theta = 2.0 * math.pi * i / num_arms
            base_pos = np.array(
                [MOUNT_CIRCLE_RADIUS * math.cos(theta), MOUNT_CIRCLE_RADIUS * math.sin(theta), ceiling_height]
            )
            # Base frame: z down, x toward the room center.
            z = np.array([0.0, 0.0, -1.0])
            x = np.array([-math.cos(theta), -math.sin(theta), 0.0])
            y = np.cross(z, x)
            base = Pose(base_pos, quat_from_matrix(np.column_stack([x, y, z])))
            arms.append(ArmMount(arm_id=i, base=base))
            # Placeholder pose; the controller sets real poses via kinematics.
            screens.append(
                Screen(
                    id=i,
                    arm_id=i,
                    pose=Pose(
                        np.array([1.9 * math.cos(theta), 1.9 * math.sin(theta), 1.5]),
                        _facing_center_orientation(theta),
                    ),
                    size_m=screen_size,
                )
            )
        cowling = CowlingGeom()
        sensors = default_sensor_ring(cowling, ceiling_height, num_sensors)
        return RoomModel(
            arms,
            screens,
            sensors=sensors,
            cowling=cowling,
            room_radius=room_radius,
            ceiling_height=ceiling_height,
        )

    def _validate(self) -> None:
        for arm in self.arms:
            r = float(np.linalg.norm(arm.base.position[:2]))
            if abs(r - MOUNT_CIRCLE_RADIUS) > MOUNT_CIRCLE_TOL:
                raise ValueError(f"arm {arm.arm_id} base off the mount circle: r={r}")
            if abs(float(arm.base.position[2]) - self.ceiling_height) > MOUNT_CIRCLE_TOL:
                raise ValueError(f"arm {arm.arm_id} base not at ceiling height")
        arm_ids = [a.arm_id for a in self.arms]
        screen_arms = [s.arm_id for s in self.screens]
        if sorted(arm_ids) != sorted(screen_arms):
            raise ValueError("each arm must carry exactly one screen")
        ids = [s.id for s in self.screens]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate screen ids")

    # -- lookups ----------------------------------------------------------

    def screen(self, screen_id: int) -> Screen:
        for s in self.screens:
            if s.id == screen_id:
                return s
        raise UnknownEntity(f"screen {screen_id}")

    def arm(self, arm_id: int) -> ArmMount:
        for a in self.arms:
            if a.arm_id == arm_id:
                return a
        raise UnknownEntity(f"arm {arm_id}")

    def screen_for_arm(self, arm_id: int) -> Screen:
        for s in self.screens:
            if s.arm_id == arm_id:
                return s
        raise UnknownEntity(f"arm {arm_id} has no screen")

    # -- mutation (all bump seq) -------------------------------------------

    def bump(self) -> int:
        self.seq += 1
        return self.seq

    def set_screen_pose(
        self, screen_id: int, pose: Pose, orientation_mode: str | None = None, bump: bool = True
    ) -> None:
        if float(np.linalg.norm(pose.position[:2])) > self.room_radius + 1e-6:
            raise RoomBounds(f"screen {screen_id} center outside the room cylinder")
        if not (-1e-6 <= float(pose.position[2]) <= self.ceiling_height + 1e-6):
            raise RoomBounds(f"screen {screen_id} center outside the room cylinder")
        s = self.screen(screen_id)
        s.pose = pose
        if orientation_mode is not None:
            s.orientation_mode = orientation_mode
        if bump:  # batched multi-screen updates bump once at the call site
            self.bump()

    def set_arm_q(self, arm_id: int, q: np.ndarray, bump: bool = True) -> None:
        self.arm(arm_id).q = np.array(q, dtype=float)
        if bump:
            self.bump()

    def set_people(self, track_ids: list[int]) -> None:
        self.people = sorted(track_ids)
        self.bump()

    def set_view_mirror(self, views: dict[int, list[int]]) -> None:
        self.views = {int(k): list(v) for k, v in views.items()}
        self.bump()

    def set_formations(self, groups: list[list[int]]) -> None:
        seen: set[int] = set()
        cleaned = []
        for group in groups:
            members = sorted(int(s) for s in group)
            for sid in members:
                self.screen(sid)  # raises UnknownEntity
                if sid in seen:
                    raise ValueError(f"screen {sid} in more than one formation")
                seen.add(sid)
            if len(members) >= 2:
                cleaned.append(members)
        self.formations = cleaned
        self.bump()

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "room_radius": float(self.room_radius),
            "ceiling_height": float(self.ceiling_height),
            "mount_circle_radius": MOUNT_CIRCLE_RADIUS,
            "table": self.table.to_dict(),
            "cowling": self.cowling.to_dict(),
            "arms": [a.to_dict() for a in self.arms],
            "screens": [s.to_dict() for s in self.screens],
            "sensors": [s.to_dict() for s in self.sensors],
            "people": list(self.people),
            "views": {str(k): list(v) for k, v in sorted(self.views.items())},
            "formations": [list(g) for g in self.formations],
        }


def default_sensor_ring(cowling: CowlingGeom, ceiling_height: float, count: int = 8) -> list[SensorMount]:
    """Depth sensors on the cowling rim, crossfiring outward and down."""
    sensors = []
    tilt = math.radians(52.0)
    z_mount = ceiling_height - cowling.depth
    for k in range(count):
        phi = 2.0 * math.pi * k / count
        pos = np.array([cowling.radius * math.cos(phi), cowling.radius * math.sin(phi), z_mount])
        # Camera frame: +Z view direction (outward, pitched down), +Y down-ish.
        view = np.array(
            [math.cos(phi) * math.cos(tilt), math.sin(phi) * math.cos(tilt), -math.sin(tilt)]
        )
        right = np.array([-math.sin(phi), math.cos(phi), 0.0])
        down = np.cross(view, right)
        R = np.column_stack([right, down, view])
        sensors.append(SensorMount(sensor_id=k, pose=Pose(pos, quat_from_matrix(R))))
    return sensors


# ---------------------------------------------------------------------------
# spatial queries


def ray_screen_hit(room: RoomModel, ray: Ray) -> tuple[int, tuple[float, float], float] | None:
    """Nearest front-face panel hit: (screen_id, (u, v), distance) or None.

    ``u, v`` are normalized panel coordinates in [0, 1]^2 with (0, 0) at the
    lower-left corner as seen by a viewer facing the panel front.
    """
    best: tuple[float, int, tuple[float, float]] | None = None
    for s in room.screens:
        n = s.pose.transform_direction([0.0, 0.0, 1.0])
        denom = float(np.dot(ray.direction, n))
        if denom >= -1e-12:
            continue  # back face or parallel
        t = float(np.dot(s.pose.position - ray.origin, n) / denom)
        if t <= 1e-12:
            continue
        p = ray.point_at(t)
        d = p - s.pose.position
        u_loc = float(np.dot(d, s.pose.transform_direction([1.0, 0.0, 0.0])))
        v_loc = float(np.dot(d, s.pose.transform_direction([0.0, 1.0, 0.0])))
        hu, hv = s.half_extents()
        if abs(u_loc) > hu or abs(v_loc) > hv:
            continue
        uv = (u_loc / (2.0 * hu) + 0.5, v_loc / (2.0 * hv) + 0.5)
        key = (t, s.id)
        if best is None or key < (best[0], best[1]):
            best = (t, s.id, uv)
    if best is None:
        return None
    return (best[1], best[2], best[0])


def nearest_screen(room: RoomModel, point) -> int:
    """Screen whose center is nearest ``point``; ties break to the lowest id."""
    if not room.screens:
        raise NoScreens("room has no screens")
    point = np.asarray(point, dtype=float)
    best_id = -1
    best_d = math.inf
    for s in sorted(room.screens, key=lambda s: s.id):
        d = float(np.linalg.norm(s.pose.position - point))
        if d < best_d - 1e-15:
            best_d = d
            best_id = s.id
    return best_id


def panel_point_world(screen: Screen, uv: tuple[float, float]) -> np.ndarray:
    """World position of normalized panel coordinates ``uv``."""
    hu, hv = screen.half_extents()
    local = np.array([(uv[0] - 0.5) * 2.0 * hu, (uv[1] - 0.5) * 2.0 * hv, 0.0])
    return screen.pose.transform_point(local)


def screen_yaw(screen: Screen) -> float:
    """Horizontal bearing of the panel normal."""
    n = screen.pose.transform_direction([0.0, 0.0, 1.0])
    return math.atan2(float(n[1]), float(n[0]))


# ---------------------------------------------------------------------------
# configuration generators


def generate_configuration(room: RoomModel, config: NamedConfiguration) -> dict[int, Pose]:
    """Target panel poses for a stock layout, keyed by screen id.

    Poses are pure geometry; reachability and collision checks happen in the
    kinematics and safety layers.
    """
    if config.name not in CONFIGURATION_NAMES:
        raise UnknownConfiguration(config.name)
    n = len(room.screens)
    if n == 0:
        raise NoScreens("room has no screens")
    if config.radius <= 0:
        raise ValueError("configuration radius must be positive")
    if not (0.0 < config.screen_height < room.ceiling_height):
        raise ValueError("screen_height outside the room")

    ids = sorted(s.id for s in room.screens)
    poses: dict[int, Pose] = {}

    if config.name in ("immersion", "context"):
        for i, sid in enumerate(ids):
            theta = 2.0 * math.pi * i / n
            pos = np.array(
                [config.radius * math.cos(theta), config.radius * math.sin(theta), config.screen_height]
            )
            poses[sid] = Pose(pos, _facing_center_orientation(theta))
    elif config.name == "outward":
        for i, sid in enumerate(ids):
            theta = 2.0 * math.pi * i / n
            pos = np.array(
                [config.radius * math.cos(theta), config.radius * math.sin(theta), config.screen_height]
            )
            poses[sid] = Pose(pos, _facing_outward_orientation(theta))
    else:  # triptych
        gs = config.group_size
        if gs < 1 or n % gs != 0:
            raise ValueError(f"group_size {gs} does not divide {n} screens")
        sample = room.screens[0]
        w, h = sample.size_m
        panel_w = h if config.orientation_mode == "portrait" else w
        spacing = panel_w + config.gap
        for g in range(n // gs):
            members = ids[g * gs : (g + 1) * gs]
            beta = 2.0 * math.pi * (g * gs + 0.5 * (gs - 1)) / n
            radial = np.array([math.cos(beta), math.sin(beta), 0.0])
            tangent = np.array([-math.sin(beta), math.cos(beta), 0.0])
            orientation = _facing_center_orientation(beta)
            for j, sid in enumerate(members):
                offset = (j - 0.5 * (gs - 1)) * spacing
                pos = config.radius * radial + offset * tangent
                pos[2] = config.screen_height
                poses[sid] = Pose(pos, orientation)
    return poses


def configuration_groups(room: RoomModel, config: NamedConfiguration) -> list[list[int]]:
    """Screen-id groups that move as a coordinated unit (triptych only)."""
    if config.name != "triptych":
        return []
    ids = sorted(s.id for s in room.screens)
    gs = config.group_size
    return [ids[g * gs : (g + 1) * gs] for g in range(len(ids) // gs)]


def total_pixel_budget(room: RoomModel) -> int:
    """Addressable pixels: every panel plus the table projection."""
    total = sum(s.resolution_px[0] * s.resolution_px[1] for s in room.screens)
    t = room.table
    total += t.projector_count * t.projector_resolution_px[0] * t.projector_resolution_px[1]
    return total
