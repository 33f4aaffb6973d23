"""Synthetic sensing: depth rendering, cloud fusion, tracking, and gestures.

The depth path is an analytic ray caster over the room's primitives (panels as
boxes, people as vertical capsules, table, floor, wall), so rendered clouds
are exactly reproducible.  Everything downstream (merge, ICP refinement,
person segmentation, tracking, gesture classification) is deterministic given
identical inputs.
"""

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose, Ray
from .room import RoomModel

DEDUP_VOXEL = 0.01
CLUSTER_VOXEL = 0.05  # connectivity grid for person clustering
CLUSTER_MIN_POINTS = 200
CLUSTER_MIN_TOP = 0.5  # clusters whose highest point is below this are debris
STATIC_MARGIN = 0.03
ASSOC_GATE = 0.5
RETIRE_AFTER = 1.0
VEL_ALPHA = 0.5
ICP_PAIR_GATE = 0.5
ICP_MIN_POINTS = 500
ICP_MAX_ITERS = 50
ICP_RMS_TOL = 1e-6
ICP_MAX_GROWTH = 5

GESTURE_WINDOW = 1.0
GESTURE_MIN_SPAN = 0.8
GESTURE_MIN_RATE = 20.0
HOLD_TIME = 0.5
RAISE_ABOVE_HEAD = 0.15
CLEAR_MAX_DISTANCE = 1.5
CLEAR_MAX_ANGLE = math.radians(25.0)
TABLE_TOUCH_HEIGHT = 0.015
DEBOUNCE = 1.0


class UnknownSensor(KeyError):
    pass


class NoConvergence(RuntimeError):
    pass


class NoLandmarks(RuntimeError):
    pass


@dataclass(eq=False)
class SensorIntrinsics:
    fov_h: float = math.radians(70.0)
    fov_v: float = math.radians(60.0)
    width: int = 80
    height: int = 64
    depth_min: float = 0.3
    depth_max: float = 8.0

    def to_dict(self) -> dict:
        return {
            "fov_h": float(self.fov_h),
            "fov_v": float(self.fov_v),
            "width": self.width,
            "height": self.height,
            "depth_min": float(self.depth_min),
            "depth_max": float(self.depth_max),
        }

    @staticmethod
    def from_dict(d: dict) -> "SensorIntrinsics":
        return SensorIntrinsics(**{k: d[k] for k in d})


@dataclass(eq=False)
class SensorExtrinsics:
    sensor_id: int
    pose: Pose  # camera frame: +Z view direction, +X right, +Y down
    intrinsics: SensorIntrinsics = field(default_factory=SensorIntrinsics)

    def to_dict(self) -> dict:
        return {
            "sensor_id": self.sensor_id,
            "pose": self.pose.to_dict(),
            "intrinsics": self.intrinsics.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "SensorExtrinsics":
        intr = SensorIntrinsics.from_dict(d["intrinsics"]) if "intrinsics" in d else SensorIntrinsics()
        return SensorExtrinsics(sensor_id=int(d["sensor_id"]), pose=Pose.from_dict(d["pose"]), intrinsics=intr)

    @staticmethod
    def load_all(path: str) -> list["SensorExtrinsics"]:
        """Sensor block of the shared config document (same file as the arm)."""
        import json

        import yaml

        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
        doc = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
        return [SensorExtrinsics.from_dict(entry) for entry in doc["sensors"]]

    @staticmethod
    def default_ring(room: RoomModel) -> list["SensorExtrinsics"]:
        return [SensorExtrinsics(sensor_id=m.sensor_id, pose=m.pose) for m in room.sensors]


@dataclass(eq=False)
class PointCloud:
    points: np.ndarray  # (N, 3) m
    frame: str  # "sensor:<id>" | "room"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud contains non-finite coordinates")

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, pose: Pose, frame: str) -> "PointCloud":
        R = pose.rotation()
        return PointCloud(self.points @ R.T + pose.position, frame)


def save_ply(cloud: PointCloud, path: str) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"comment frame {cloud.frame}\n")
        f.write(f"element vertex {len(cloud)}\n")
        f.write("property float x\nproperty float y\nproperty float z\nend_header\n")
        for x, y, z in cloud.points:
            f.write(f"{x:.6f} {y:.6f} {z:.6f}\n")


def load_ply(path: str) -> PointCloud:
    frame = "room"
    points = []
    with open(path, "r", encoding="ascii") as f:
        line = f.readline().strip()
        if line != "ply":
            raise ValueError("not a PLY file")
        n = 0
        while True:
            line = f.readline().strip()
            if line.startswith("comment frame "):
                frame = line[len("comment frame ") :]
            elif line.startswith("element vertex"):
                n = int(line.split()[-1])
            elif line == "end_header":
                break
            elif line == "":
                raise ValueError("truncated PLY header")
        for _ in range(n):
            points.append([float(v) for v in f.readline().split()[:3]])
    return PointCloud(np.array(points, dtype=float).reshape(-1, 3), frame)


# ---------------------------------------------------------------------------
# depth rendering


def sensor_rays(intr: SensorIntrinsics) -> np.ndarray:
    """Unit pixel rays in the camera frame (+Z forward, +X right, +Y down)."""
    tx = math.tan(0.5 * intr.fov_h)
    ty = math.tan(0.5 * intr.fov_v)
    xs = tx * (2.0 * (np.arange(intr.width) + 0.5) / intr.width - 1.0)
    ys = ty * (2.0 * (np.arange(intr.height) + 0.5) / intr.height - 1.0)
    gx, gy = np.meshgrid(xs, ys)
    dirs = np.stack([gx.ravel(), gy.ravel(), np.ones(gx.size)], axis=1)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def _hit_plane_disk(o, d, z, radius, center_xy=(0.0, 0.0)):
    """t of ray-disk hits; inf where missed."""
    t = np.full(len(d), np.inf)
    dz = d[:, 2]
    ok = np.abs(dz) > 1e-12
    tc = np.where(ok, (z - o[2]) / np.where(ok, dz, 1.0), np.inf)
    px = o[0] + tc * d[:, 0] - center_xy[0]
    py = o[1] + tc * d[:, 1] - center_xy[1]
    good = ok & (tc > 0) & (px * px + py * py <= radius * radius)
    t[good] = tc[good]
    return t


def _hit_cylinder_side(o, d, radius, z_lo, z_hi, center_xy=(0.0, 0.0)):
    """Nearest positive t on an open vertical cylinder surface."""
    ox, oy = o[0] - center_xy[0], o[1] - center_xy[1]
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2.0 * (ox * d[:, 0] + oy * d[:, 1])
    c = ox * ox + oy * oy - radius * radius
    disc = b * b - 4 * a * c
    t = np.full(len(d), np.inf)
    ok = (disc >= 0) & (a > 1e-12)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    for sign in (-1.0, 1.0):
        tc = np.where(ok, (-b + sign * sq) / (2 * np.where(ok, a, 1.0)), np.inf)
        z = o[2] + tc * d[:, 2]
        good = ok & (tc > 1e-9) & (z >= z_lo) & (z <= z_hi)
        t = np.where(good & (tc < t), tc, t)
    return t


def _hit_box(o, d, center, rotation, half_extents):
    """Slab-method ray-box t; inf where missed."""
    ol = rotation.T @ (o - center)
    dl = d @ rotation  # == (R.T @ d.T).T
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dl
        t1 = (-half_extents - ol) * inv
        t2 = (half_extents - ol) * inv
    tmin = np.nanmax(np.minimum(t1, t2), axis=1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=1)
    # parallel rays: hit only if origin inside that slab
    par = np.abs(dl) < 1e-12
    inside = np.abs(ol) <= half_extents
    bad = np.any(par & ~inside, axis=1)
    hit = (~bad) & (tmax >= tmin) & (tmax > 0)
    t = np.where(hit, np.where(tmin > 1e-9, tmin, np.inf), np.inf)
    return t


def _hit_sphere(o, d, center, radius):
    oc = o - center
    b = 2.0 * d @ oc
    c = float(oc @ oc) - radius * radius
    disc = b * b - 4.0 * c
    t = np.full(len(d), np.inf)
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    for sign in (-1.0, 1.0):
        tc = np.where(ok, 0.5 * (-b + sign * sq), np.inf)
        good = ok & (tc > 1e-9)
        t = np.where(good & (tc < t), tc, t)
    return t


def _hit_vertical_capsule(o, d, base_xy, z0, z1, radius):
    """Capsule = finite cylinder + two sphere caps, axis vertical."""
    t_cyl = _hit_cylinder_side(o, d, radius, z0, z1, center_xy=base_xy)
    t0 = _hit_sphere(o, d, np.array([base_xy[0], base_xy[1], z0]), radius)
    t1 = _hit_sphere(o, d, np.array([base_xy[0], base_xy[1], z1]), radius)
    return np.minimum(t_cyl, np.minimum(t0, t1))


def render_depth(
    room: RoomModel,
    sensor: SensorExtrinsics,
    people=(),
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> PointCloud:
    """Ray-cast the room from one sensor; returns a sensor-frame cloud."""
    intr = sensor.intrinsics
    cam = sensor_rays(intr)
    R = sensor.pose.rotation()
    o = sensor.pose.position
    d = cam @ R.T

    t = _hit_plane_disk(o, d, 0.0, room.room_radius)  # floor
    t = np.minimum(t, _hit_cylinder_side(o, d, room.room_radius, 0.0, room.ceiling_height))
    tbl = room.table
    t = np.minimum(t, _hit_plane_disk(o, d, tbl.surface_height, tbl.radius, tbl.center_xy))
    t = np.minimum(t, _hit_cylinder_side(o, d, tbl.radius, 0.0, tbl.surface_height, tbl.center_xy))
    for s in room.screens:
        hu, hv = s.half_extents()
        t = np.minimum(
            t, _hit_box(o, d, s.pose.position, s.pose.rotation(), np.array([hu, hv, 0.03]))
        )
    for person in people:
        p0, p1 = person.segment()
        t = np.minimum(
            t, _hit_vertical_capsule(o, d, p0[:2], p0[2], p1[2], person.radius)
        )

    if noise_sigma > 0.0:
        if rng is None:
            raise ValueError("noise_sigma > 0 requires an rng")
        t = t + np.where(np.isfinite(t), rng.normal(scale=noise_sigma, size=len(t)), 0.0)

    good = np.isfinite(t) & (t >= intr.depth_min) & (t <= intr.depth_max)
    return PointCloud(cam[good] * t[good, None], f"sensor:{sensor.sensor_id}")


# ---------------------------------------------------------------------------
# fusion


def _voxel_keys(points: np.ndarray, size: float) -> np.ndarray:
    return np.floor(points / size).astype(np.int64)


def voxel_dedup(points: np.ndarray, size: float = DEDUP_VOXEL) -> np.ndarray:
    """Keep the first point seen in each voxel (order-dependent within a cell)."""
    if len(points) == 0:
        return points.reshape(0, 3)
    keys = _voxel_keys(points, size)
    _, first = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(first)]


def merge_clouds(clouds: list[PointCloud], extrinsics: list[SensorExtrinsics]) -> PointCloud:
    """Transform sensor clouds into the room frame and voxel de-duplicate."""
    by_id = {e.sensor_id: e for e in extrinsics}
    parts = []
    for cloud in clouds:
        if not cloud.frame.startswith("sensor:"):
            raise ValueError(f"merge_clouds expects sensor-frame clouds, got {cloud.frame!r}")
        sid = int(cloud.frame.split(":", 1)[1])
        if sid not in by_id:
            raise UnknownSensor(f"sensor {sid}")
        parts.append(cloud.transformed(by_id[sid].pose, "room").points)
    if not parts:
        return PointCloud(np.zeros((0, 3)), "room")
    merged = np.concatenate(parts, axis=0)
    return PointCloud(voxel_dedup(merged), "room")


# ---------------------------------------------------------------------------
# registration


def refine_extrinsics(
    cloud_a: PointCloud,
    cloud_b: PointCloud,
    guess: Pose,
    return_history: bool = False,
):
    """ICP: the rigid pose taking cloud_b's frame onto cloud_a's.

    Point-to-point with nearest-neighbour pairs gated at 0.5 m, Procrustes
    update per iteration, capped at 50 iterations or an RMS change < 1e-6.
    RMS growing five iterations in a row aborts with NoConvergence.
    """
    if len(cloud_a) < ICP_MIN_POINTS or len(cloud_b) < ICP_MIN_POINTS:
        raise ValueError(f"refine_extrinsics needs >= {ICP_MIN_POINTS} points per cloud")
    tree = cKDTree(cloud_a.points)
    pose = guess
    prev_rms = math.inf
    growth = 0
    history: list[float] = []
    for _ in range(ICP_MAX_ITERS):
        moved = cloud_b.points @ pose.rotation().T + pose.position
        dist, idx = tree.query(moved)
        mask = dist <= ICP_PAIR_GATE
        if int(mask.sum()) < 3:
            raise NoConvergence("no stable point pairs inside the gate")
        src = moved[mask]
        dst = cloud_a.points[idx[mask]]
        rms = float(np.sqrt(np.mean(dist[mask] ** 2)))
        if rms > prev_rms:
            growth += 1
            if growth >= ICP_MAX_GROWTH:
                raise NoConvergence(f"RMS diverging: {rms:.6f}")
        else:
            growth = 0
            history.append(rms)
        done = abs(prev_rms - rms) < ICP_RMS_TOL
        prev_rms = rms

        cs = src.mean(axis=0)
        cd = dst.mean(axis=0)
        H = (src - cs).T @ (dst - cd)
        U, _, Vt = np.linalg.svd(H)
        D = np.diag([1.0, 1.0, float(np.sign(np.linalg.det(Vt.T @ U.T)))])
        R = Vt.T @ D @ U.T
        step = Pose.from_rotation(R, cd - R @ cs)
        pose = step.compose(pose)
        if done:
            break
    return (pose, history) if return_history else pose


# ---------------------------------------------------------------------------
# person segmentation


def static_mask(points: np.ndarray, room: RoomModel, margin: float = STATIC_MARGIN) -> np.ndarray:
    """True where a point belongs to the known static geometry."""
    if len(points) == 0:
        return np.zeros(0, dtype=bool)
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    r = np.hypot(x, y)
    near = np.abs(z) <= margin  # floor
    near |= r >= room.room_radius - margin  # wall
    near |= z >= room.ceiling_height - margin  # ceiling fixtures
    tbl = room.table
    tr = np.hypot(x - tbl.center_xy[0], y - tbl.center_xy[1])
    near |= (tr <= tbl.radius + margin) & (z <= tbl.surface_height + margin)
    c = room.cowling
    near |= (r <= c.radius + margin) & (z >= room.ceiling_height - c.depth - margin)
    for s in room.screens:
        hu, hv = s.half_extents()
        he = np.array([hu, hv, 0.03])
        local = (points - s.pose.position) @ s.pose.rotation()
        excess = np.maximum(np.abs(local) - he, 0.0)
        near |= np.einsum("ij,ij->i", excess, excess) <= margin * margin
    return near


@dataclass(eq=False)
class PersonObservation:
    centroid: np.ndarray  # estimated body-axis midpoint, not the raw point mean
    point_count: int
    landmarks: dict | None = None

    def __post_init__(self):
        self.centroid = np.asarray(self.centroid, dtype=float)


def _fit_axis_midpoint(pts: np.ndarray) -> np.ndarray:
    """Body-axis midpoint from a partial surface shell.

    Depth sensors only see the lit side of a person, so the raw centroid is
    pulled toward the sensors.  The horizontal cross-section is close to a
    circle: an algebraic circle fit recovers the axis even from a partial
    arc, and the midpoint height is half the top height (people stand on the
    floor).
    """
    top = float(pts[:, 2].max())
    # fit on the torso band only: the head/shoulder cap curves inward and
    # would drag the circle centre off the axis
    band = pts[(pts[:, 2] > 0.3 * top) & (pts[:, 2] < 0.7 * top)]
    if len(band) < 8:
        band = pts
    x, y = band[:, 0], band[:, 1]
    A = np.column_stack([2.0 * x, 2.0 * y, np.ones(len(band))])
    b = x * x + y * y
    sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    cx, cy = (float(sol[0]), float(sol[1])) if rank == 3 else (float(x.mean()), float(y.mean()))
    return np.array([cx, cy, 0.5 * top])


def _cluster_voxels(points: np.ndarray, size: float) -> list[np.ndarray]:
    """Connected components (26-neighbourhood) over occupied voxels."""
    keys = _voxel_keys(points, size)
    voxel_of_point = {}
    members: dict[tuple, list[int]] = {}
    for i, k in enumerate(map(tuple, keys)):
        members.setdefault(k, []).append(i)
    parent = {k: k for k in members}

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    offsets = [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
        if (dx, dy, dz) != (0, 0, 0)
    ]
    for k in members:
        for off in offsets:
            nb = (k[0] + off[0], k[1] + off[1], k[2] + off[2])
            if nb in members:
                union(k, nb)
    clusters: dict[tuple, list[int]] = {}
    for k, idxs in members.items():
        clusters.setdefault(find(k), []).extend(idxs)
    return [np.array(sorted(v)) for _, v in sorted(clusters.items())]


def segment_people(merged: PointCloud, room: RoomModel) -> list[PersonObservation]:
    """Foreground clusters large and tall enough to be people."""
    if merged.frame != "room":
        raise ValueError("segment_people expects a room-frame cloud")
    fg = merged.points[~static_mask(merged.points, room)]
    out = []
    for idxs in _cluster_voxels(fg, CLUSTER_VOXEL):
        pts = fg[idxs]
        if len(pts) < CLUSTER_MIN_POINTS or float(pts[:, 2].max()) < CLUSTER_MIN_TOP:
            continue
        out.append(PersonObservation(centroid=_fit_axis_midpoint(pts), point_count=len(pts)))
    out.sort(key=lambda o: (round(o.centroid[0], 9), round(o.centroid[1], 9)))
    return out


# ---------------------------------------------------------------------------
# tracking


@dataclass(eq=False)
class PersonTrack:
    id: int
    centroid: np.ndarray
    landmarks: dict | None
    velocity: np.ndarray
    last_seen: float

    def __post_init__(self):
        self.centroid = np.asarray(self.centroid, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)


class Tracker:
    """Greedy nearest-neighbour tracker; ids increase monotonically."""

    def __init__(self):
        self.tracks: list[PersonTrack] = []
        self.next_id = 1
        self.now = 0.0

    def update(self, observations: list[PersonObservation], dt: float) -> list[PersonTrack]:
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.now += dt
        cands = []
        for ti, tr in enumerate(self.tracks):
            for oi, ob in enumerate(observations):
                d = float(np.linalg.norm(ob.centroid - tr.centroid))
                if d <= ASSOC_GATE:
                    cands.append((d, tr.id, oi, ti))
        cands.sort()
        used_t: set[int] = set()
        used_o: set[int] = set()
        for d, _tid, oi, ti in cands:
            if ti in used_t or oi in used_o:
                continue
            used_t.add(ti)
            used_o.add(oi)
            tr = self.tracks[ti]
            ob = observations[oi]
            v_obs = (ob.centroid - tr.centroid) / dt
            tr.velocity = VEL_ALPHA * v_obs + (1.0 - VEL_ALPHA) * tr.velocity
            tr.centroid = ob.centroid.copy()
            if ob.landmarks is not None:
                tr.landmarks = dict(ob.landmarks)
            tr.last_seen = self.now
        for oi, ob in enumerate(observations):
            if oi in used_o:
                continue
            self.tracks.append(
                PersonTrack(
                    id=self.next_id,
                    centroid=ob.centroid.copy(),
                    landmarks=dict(ob.landmarks) if ob.landmarks else None,
                    velocity=np.zeros(3),
                    last_seen=self.now,
                )
            )
            self.next_id += 1
        self.tracks = [t for t in self.tracks if self.now - t.last_seen <= RETIRE_AFTER]
        self.tracks.sort(key=lambda t: t.id)
        return self.tracks


# ---------------------------------------------------------------------------
# pointing and gestures


def pointing_ray(track: PersonTrack) -> Ray:
    """Shoulder-to-wrist ray of the higher-raised arm (left wins ties)."""
    lm = track.landmarks or {}
    arms = []
    for side in ("l", "r"):  # left first: tie-break by order
        s, w = lm.get(f"shoulder_{side}"), lm.get(f"wrist_{side}")
        if s is not None and w is not None:
            s = np.asarray(s, dtype=float)
            w = np.asarray(w, dtype=float)
            arms.append((float(w[2] - s[2]), side, s, w))
    if not arms:
        raise NoLandmarks(f"track {track.id} has no shoulder/wrist landmarks")
    arms.sort(key=lambda a: -a[0])
    best = arms[0]
    if len(arms) == 2 and arms[0][0] == arms[1][0]:
        best = next(a for a in arms if a[1] == "l")
    _, _, shoulder, wrist = best
    d = wrist - shoulder
    n = float(np.linalg.norm(d))
    if n < 1e-12:
        raise NoLandmarks(f"track {track.id} wrist coincides with shoulder")
    return Ray(shoulder, d / n)


@dataclass(eq=False)
class GestureEvent:
    kind: str  # raise_one_hand | raise_both_hands | table_touch | table_pinch
    track_id: int
    target: object = None  # screen_id for raises, (u, v) for table kinds
    ts: float = 0.0
    data: dict | None = None

    def __post_init__(self):
        if self.kind in ("raise_both_hands", "table_touch", "table_pinch") and self.target is None:
            raise ValueError(f"{self.kind} events require a target")


def _table_uv(table, x: float, y: float) -> tuple[float, float]:
    u = (x - table.center_xy[0]) / (2.0 * table.radius) + 0.5
    v = (y - table.center_xy[1]) / (2.0 * table.radius) + 0.5
    return (float(u), float(v))


class GestureClassifier:
    """Sliding-window classifier over per-track landmark samples."""

    def __init__(self):
        self._windows: dict[int, deque] = {}
        self._last_emit: dict[tuple[str, int], float] = {}

    def observe(self, track: PersonTrack, ts: float) -> None:
        if track.landmarks is None:
            return
        win = self._windows.setdefault(track.id, deque())
        win.append((ts, dict(track.landmarks), np.asarray(track.centroid, dtype=float)))
        while win and ts - win[0][0] > GESTURE_WINDOW:
            win.popleft()

    def _debounced(self, kind: str, track_id: int, ts: float) -> bool:
        last = self._last_emit.get((kind, track_id))
        return last is not None and ts - last < DEBOUNCE

    def _emit(self, events, kind, track_id, target, ts, data=None):
        if self._debounced(kind, track_id, ts):
            return
        self._last_emit[(kind, track_id)] = ts
        events.append(GestureEvent(kind=kind, track_id=track_id, target=target, ts=ts, data=data))

    def classify(self, room: RoomModel, ts: float) -> list[GestureEvent]:
        events: list[GestureEvent] = []
        for track_id in sorted(self._windows):
            win = self._windows[track_id]
            if len(win) < 2:
                continue
            span = win[-1][0] - win[0][0]
            rate = (len(win) - 1) / span if span > 0 else 0.0
            if span < GESTURE_MIN_SPAN or rate < GESTURE_MIN_RATE:
                continue
            # hold window = most recent HOLD_TIME of samples, with half a
            # sample period of slack so grid misalignment cannot starve it
            period = span / (len(win) - 1)
            hold = [s for s in win if win[-1][0] - s[0] <= HOLD_TIME + 0.5 * period]
            if not hold or win[-1][0] - hold[0][0] < HOLD_TIME - 0.6 * period:
                continue

            def wrist_above(lm, side, ref_key, lift):
                w, ref = lm.get(f"wrist_{side}"), lm.get(ref_key)
                return w is not None and ref is not None and w[2] >= ref[2] + lift

            both_up = all(
                wrist_above(lm, "l", "shoulder_l", 0.0) and wrist_above(lm, "r", "shoulder_r", 0.0)
                for _, lm, _c in hold
            )
            fired_both = False
            if both_up:
                target = self._clear_target(room, hold[-1][2])
                if target is not None:
                    self._emit(events, "raise_both_hands", track_id, target, ts)
                    fired_both = True
            if not fired_both:
                one_up = all(
                    wrist_above(lm, "l", "head", RAISE_ABOVE_HEAD)
                    or wrist_above(lm, "r", "head", RAISE_ABOVE_HEAD)
                    for _, lm, _c in hold
                )
                if one_up:
                    self._emit(events, "raise_one_hand", track_id, None, ts)

            lm_now = win[-1][1]
            touching = []
            for side in ("l", "r"):
                w = lm_now.get(f"wrist_{side}")
                if w is None:
                    continue
                tbl = room.table
                dr = math.hypot(w[0] - tbl.center_xy[0], w[1] - tbl.center_xy[1])
                dz = w[2] - tbl.surface_height
                if dr <= tbl.radius and 0.0 <= dz <= TABLE_TOUCH_HEIGHT:
                    touching.append(np.asarray(w, dtype=float))
            if len(touching) == 2:
                mid = 0.5 * (touching[0] + touching[1])
                zoom = self._pinch_rate(win, room)
                self._emit(
                    events,
                    "table_pinch",
                    track_id,
                    _table_uv(room.table, mid[0], mid[1]),
                    ts,
                    data={"zoom_rate": zoom},
                )
            elif len(touching) == 1:
                w = touching[0]
                self._emit(events, "table_touch", track_id, _table_uv(room.table, w[0], w[1]), ts)
        return events

    @staticmethod
    def _clear_target(room: RoomModel, centroid: np.ndarray) -> int | None:
        """Nearest screen within reach that faces the person.

        Facing is judged in the horizontal plane: a person's centroid sits
        well below panel centers, so the 3D angle would reject panels that
        are squarely turned toward them.
        """
        best = None
        for s in sorted(room.screens, key=lambda s: s.id):
            to_person = centroid - s.pose.position
            dist = float(np.linalg.norm(to_person))
            if dist > CLEAR_MAX_DISTANCE or dist < 1e-9:
                continue
            normal = s.pose.transform_direction([0, 0, 1])
            flat_p, flat_n = to_person[:2], np.asarray(normal[:2])
            np_, nn = float(np.linalg.norm(flat_p)), float(np.linalg.norm(flat_n))
            if np_ < 1e-9 or nn < 1e-9:
                continue
            angle = math.acos(np.clip(float(flat_n @ flat_p) / (np_ * nn), -1.0, 1.0))
            if angle <= CLEAR_MAX_ANGLE and (best is None or dist < best[0]):
                best = (dist, s.id)
        return None if best is None else best[1]

    @staticmethod
    def _pinch_rate(win, room: RoomModel) -> float:
        """d/dt of the inter-wrist distance over the most recent samples."""
        samples = []
        for t, lm, _c in win:
            wl, wr = lm.get("wrist_l"), lm.get("wrist_r")
            if wl is None or wr is None:
                continue
            samples.append((t, float(np.linalg.norm(np.asarray(wl) - np.asarray(wr)))))
        if len(samples) < 2:
            return 0.0
        (t0, d0), (t1, d1) = samples[-2], samples[-1]
        return 0.0 if t1 <= t0 else (d1 - d0) / (t1 - t0)
