import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from rotunda.canon import canonical_dumps
from rotunda.geometry import Pose, quat_from_axis_angle
from rotunda.kinematics import ArmParams, Trajectory, inverse_kinematics
from rotunda.room import (
    NamedConfiguration,
    RoomModel,
    UnknownEntity,
    configuration_groups,
    generate_configuration,
)
from rotunda.safety import (
    Obb,
    PersonCapsule,
    capsule_clearance,
    check_configuration,
    obb_from_screen,
    obb_intersect,
    person_clearance,
    point_box_distance,
    sat_clearance,
    screen_pose_from_joints,
    segment_box_distance,
    validate_trajectory,
)


def random_obb(rng, scale=1.0, spread=2.0):
    he = rng.uniform(0.05, 0.8, 3) * scale
    q = quat_from_axis_angle(rng.normal(size=3), rng.uniform(-math.pi, math.pi))
    return Obb(rng.uniform(-spread, spread, 3), he, q)


def sample_in(box, n, rng):
    local = rng.uniform(-box.half_extents, box.half_extents, (n, 3))
    return box.center + local @ box.rotation().T


def containment_depth(box, pts):
    """Deepest sampled point inside the box (0 when none are)."""
    local = (pts - box.center) @ box.rotation()
    inside = np.all(np.abs(local) <= box.half_extents, axis=1)
    if not inside.any():
        return 0.0
    return float(np.min(box.half_extents - np.abs(local[inside]), axis=1).max())


@pytest.fixture()
def immersion_room():
    room = RoomModel.build_default()
    cfg = NamedConfiguration.named("immersion", radius=1.8, screen_height=1.5)
    for sid, pose in generate_configuration(room, cfg).items():
        room.set_screen_pose(sid, pose)
    return room


# -- box primitives ---------------------------------------------------------


def test_obb_validation():
    with pytest.raises(ValueError):
        Obb(np.zeros(3), np.array([1.0, 0.0, 1.0]), np.array([1.0, 0, 0, 0]))
    with pytest.raises(ValueError):
        Obb(np.zeros(3), np.ones(3), np.array([1.0, 0, 0, 0.5]))


def test_obb_intersect_trivial():
    a = Obb(np.zeros(3), np.ones(3), np.array([1.0, 0, 0, 0]))
    b = Obb(np.zeros(3), np.ones(3), np.array([1.0, 0, 0, 0]))
    assert obb_intersect(a, b)
    c = Obb(np.array([3.0, 0.0, 0.0]), np.full(3, 0.5), np.array([1.0, 0, 0, 0]))
    assert not obb_intersect(a, c)
    assert sat_clearance(a, c) == pytest.approx(1.5, abs=1e-12)


def test_sat_vs_sampling_oracle():
    # separating-axis verdicts must agree with dense containment sampling
    # whenever the sampled penetration is deeper than a millimetre
    rng = np.random.default_rng(2024)
    disagreements = 0
    for _ in range(1000):
        a = random_obb(rng)
        b = random_obb(rng)
        hit = obb_intersect(a, b)
        if hit:
            continue  # SAT overlap claims are exact for boxes
        pen = max(
            containment_depth(b, sample_in(a, 5000, rng)),
            containment_depth(a, sample_in(b, 5000, rng)),
        )
        if pen > 1e-3:
            disagreements += 1
    assert disagreements == 0


def test_sat_clearance_never_exceeds_true_distance():
    rng = np.random.default_rng(7)
    for _ in range(200):
        a = random_obb(rng)
        b = random_obb(rng)
        c = sat_clearance(a, b)
        if c <= 0:
            continue
        pa = sample_in(a, 400, rng)
        pb = sample_in(b, 400, rng)
        dmin = np.min(np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2))
        assert c <= dmin + 1e-9


def test_point_box_distance_hand_cases():
    box = Obb(np.zeros(3), np.ones(3), np.array([1.0, 0, 0, 0]))
    assert point_box_distance([2.0, 0.0, 0.0], box) == pytest.approx(1.0, abs=1e-12)
    assert point_box_distance([0.3, -0.2, 0.9], box) == 0.0
    assert point_box_distance([2.0, 2.0, 2.0], box) == pytest.approx(math.sqrt(3.0), abs=1e-12)


def test_segment_box_distance_matches_bounded_minimizer():
    rng = np.random.default_rng(13)
    for _ in range(200):
        box = random_obb(rng)
        p0, p1 = rng.uniform(-3, 3, 3), rng.uniform(-3, 3, 3)
        got = segment_box_distance(p0, p1, box)
        R = box.rotation()
        a = R.T @ (p0 - box.center)
        b = R.T @ (p1 - box.center)

        def f(t):
            return float(np.linalg.norm(np.maximum(np.abs(a + t * (b - a)) - box.half_extents, 0.0)))

        res = minimize_scalar(f, bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-14})
        ref = min(res.fun, f(0.0), f(1.0))
        assert got == pytest.approx(ref, abs=1e-9)


# -- people -------------------------------------------------------------------


def test_person_capsule_validation():
    with pytest.raises(ValueError):
        PersonCapsule(1, np.zeros(3), height=0.4)
    with pytest.raises(ValueError):
        PersonCapsule(1, np.zeros(3), height=1.8, radius=0.0)


def test_capsule_touching_panel_is_zero(immersion_room):
    box = obb_from_screen(immersion_room.screen(0))
    # panel inner face sits at x = 1.8 - 0.03; stand so the capsule surface touches it
    p = PersonCapsule(7, np.array([1.8 - 0.03 - 0.30, 0.0, 0.0]), height=1.8, radius=0.30)
    assert capsule_clearance(p, box) == pytest.approx(0.0, abs=1e-9)


def test_capsule_half_metre_from_panel(immersion_room):
    p = PersonCapsule(2, np.array([1.8 - 0.03 - 0.5 - 0.30, 0.0, 0.0]), height=1.8, radius=0.30)
    d, pair = person_clearance(immersion_room, [p])
    assert d == pytest.approx(0.5, abs=1e-6)
    assert pair == ("screen:0", "person:2")


def test_person_clearance_empty_sentinel(immersion_room):
    assert person_clearance(immersion_room, []) == (math.inf, None)


# -- configuration gate -------------------------------------------------------


def test_immersion_acceptably_spaced(immersion_room):
    assert check_configuration(immersion_room) == []


def test_default_immersion_radius_ok():
    room = RoomModel.build_default()
    for sid, pose in generate_configuration(room, NamedConfiguration.named("immersion")).items():
        room.set_screen_pose(sid, pose)
    assert check_configuration(room) == []


def test_context_landscape_rejected_at_default_size():
    # fifteen landscape panels cannot keep 5 cm clearance on a 2.2 m ring
    room = RoomModel.build_default()
    cfg = NamedConfiguration.named("context")
    for sid, pose in generate_configuration(room, cfg).items():
        room.set_screen_pose(sid, pose, orientation_mode=cfg.orientation_mode)
    violations = check_configuration(room)
    assert len(violations) == 15
    assert all(v.kind == "screen-screen" for v in violations)


def test_coincident_screens_penetration(immersion_room):
    v = check_configuration(immersion_room, candidate_poses={1: immersion_room.screen(0).pose})
    assert len(v) == 1
    assert v[0].kind == "screen-screen"
    assert v[0].entities == ("screen:0", "screen:1")
    # panel thickness plus the clearance margin
    assert v[0].penetration_depth == pytest.approx(0.06 + 0.05, abs=1e-9)


def test_person_at_screen_target(immersion_room):
    p = PersonCapsule(1, np.array([1.8, 0.0, 0.0]), height=1.8)
    v = check_configuration(immersion_room, people=[p])
    assert any(x.kind == "screen-person" and x.entities == ("screen:0", "person:1") for x in v)
    assert all(x.penetration_depth >= 0 for x in v)


def test_unknown_candidate_screen(immersion_room):
    with pytest.raises(UnknownEntity):
        check_configuration(immersion_room, candidate_poses={99: Pose.identity()})


def test_triptych_needs_formations():
    room = RoomModel.build_default()
    cfg = NamedConfiguration.named("triptych")
    poses = generate_configuration(room, cfg)
    for sid, pose in poses.items():
        room.set_screen_pose(sid, pose, orientation_mode=cfg.orientation_mode)
    # 5 groups x 2 abutting neighbour pairs, all below margin
    assert len(check_configuration(room)) == 10
    room.set_formations(configuration_groups(room, cfg))
    assert check_configuration(room) == []
    # raw overlap inside a formation is still a violation
    v = check_configuration(room, candidate_poses={1: room.screen(0).pose})
    assert any(x.entities == ("screen:0", "screen:1") for x in v)


def test_margin_is_monotone(immersion_room):
    rng = np.random.default_rng(5)
    # jostle the ring so some pairs sit near the margin boundary
    candidate = {}
    for s in immersion_room.screens:
        jitter = rng.normal(scale=0.05, size=3)
        jitter[2] *= 0.2
        candidate[s.id] = Pose(s.pose.position + jitter, s.pose.orientation)
    previous: set = set()
    for margin in (0.0, 0.02, 0.05, 0.1, 0.2):
        v = check_configuration(immersion_room, candidate_poses=candidate, margin=margin)
        pairs = {x.entities for x in v}
        assert previous <= pairs
        previous = pairs


def test_violation_serializes():
    from rotunda.safety import Violation

    doc = Violation("screen-screen", ("screen:0", "screen:1"), 0.11, waypoint_index=3).to_dict()
    blob = canonical_dumps(doc)
    assert '"kind":"screen-screen"' in blob
    assert '"waypoint_index":3' in blob


# -- structures ---------------------------------------------------------------


def test_screen_poking_past_wall(immersion_room):
    pose = Pose(np.array([2.4, 0.0, 1.5]), immersion_room.screen(0).pose.orientation)
    v = check_configuration(immersion_room, candidate_poses={0: pose})
    assert any(x.kind == "screen-structure" and x.entities == ("screen:0", "room") for x in v)


def test_screen_into_table(immersion_room):
    pose = Pose(np.array([0.5, 0.0, 0.8]), immersion_room.screen(0).pose.orientation)
    v = check_configuration(immersion_room, candidate_poses={0: pose})
    assert any(x.kind == "screen-structure" and x.entities == ("screen:0", "table") for x in v)


# -- trajectories ---------------------------------------------------------------


def sweep_towards_neighbor(room, frac=0.65, steps=12):
    """Joint trajectory moving screen 0 toward screen 1's slot."""
    params = ArmParams()
    base_inv = room.arm(0).base.inverse()
    start = room.screen(0).pose
    goal = room.screen(1).pose
    seed = np.array([0.0, 0.6, 0.0, 1.2, 0.0, -0.9, 0.0])
    qs = []
    for t in np.linspace(0.0, frac, steps):
        pos = (1 - t) * start.position + t * goal.position
        q = inverse_kinematics(params, base_inv.compose(Pose(pos, start.orientation)), seed)
        qs.append(q)
        seed = q
    return Trajectory(waypoints=np.array(qs), max_step=1.0)


def clearance_profile(room, traj):
    neighbor = obb_from_screen(room.screen(1))
    out = []
    for q in traj.waypoints:
        moving = obb_from_screen(room.screen(0), screen_pose_from_joints(room, 0, q))
        out.append(sat_clearance(moving, neighbor))
    return out


@pytest.fixture(scope="module")
def default_ring_room():
    room = RoomModel.build_default()
    cfg = NamedConfiguration.named("immersion", radius=1.9)
    for sid, pose in generate_configuration(room, cfg).items():
        room.set_screen_pose(sid, pose)
    return room


def test_sweep_reports_earliest_violating_waypoint(default_ring_room):
    room = default_ring_room
    traj = sweep_towards_neighbor(room)
    v = validate_trajectory(room, 0, traj)
    assert v is not None
    assert v.kind == "screen-screen"
    assert v.entities == ("screen:0", "screen:1")
    profile = clearance_profile(room, traj)
    expected = next(k for k, c in enumerate(profile) if c < 0.05)
    assert v.waypoint_index == expected
    assert v.waypoint_index > 0  # the start pose itself is clean


def test_sweep_margin_monotone_index(default_ring_room):
    room = default_ring_room
    traj = sweep_towards_neighbor(room)
    v_tight = validate_trajectory(room, 0, traj, margin=0.0)
    v_wide = validate_trajectory(room, 0, traj, margin=0.05)
    assert v_tight is not None and v_wide is not None
    assert v_wide.waypoint_index <= v_tight.waypoint_index


def test_reverse_sweep_reports_iff_forward(default_ring_room):
    room = default_ring_room
    traj = sweep_towards_neighbor(room)
    rev = Trajectory(waypoints=traj.waypoints[::-1].copy(), max_step=traj.max_step)
    assert (validate_trajectory(room, 0, traj) is None) == (
        validate_trajectory(room, 0, rev) is None
    )
    hold = Trajectory(waypoints=traj.waypoints[:1].copy(), max_step=traj.max_step)
    hold_rev = Trajectory(waypoints=hold.waypoints[::-1].copy(), max_step=traj.max_step)
    assert validate_trajectory(room, 0, hold) is None
    assert validate_trajectory(room, 0, hold_rev) is None


def test_empty_trajectory_is_vacuously_ok(default_ring_room):
    traj = Trajectory(waypoints=np.zeros((0, 7)), max_step=1.0)
    assert validate_trajectory(default_ring_room, 0, traj) is None


def test_sweep_into_person(default_ring_room):
    room = default_ring_room
    # person standing in front of screen 0's panel, inside its sweep path
    person = PersonCapsule(4, np.array([1.55, 0.35, 0.0]), height=1.9, radius=0.30)
    traj = sweep_towards_neighbor(room, frac=0.4, steps=8)
    v = validate_trajectory(room, 0, traj, people=[person])
    assert v is not None
    assert v.kind == "screen-person"
    assert v.entities[1] == "person:4"
