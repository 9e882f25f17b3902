import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mirrorboard.geometry import vdist, vnorm, vnormalize
from mirrorboard.session import (
    AvatarPose,
    BoardPlane,
    DegeneratePose,
    MalformedPosePayload,
    RoleKind,
    SessionState,
    UnknownUser,
    apply_pose_update,
    apply_roster_update,
    mirror_pose,
    pose_at,
    render_poses,
    visible_avatars,
)
from mirrorboard.wire import DeliveryClass, Flake, Payload

BOARD = BoardPlane(origin=(0.0, 0.0, 0.0), normal=(0.0, 0.0, 1.0), extents=(2.0, 1.25))


def random_board(rng: random.Random) -> BoardPlane:
    n = vnormalize((rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.2, 1)))
    o = (rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2))
    return BoardPlane(origin=o, normal=n, extents=(2.0, 1.25))


def random_pose(rng: random.Random, board: BoardPlane, user="U") -> AvatarPose:
    # Positioned on the normal side, gazing at a point on the board plane.
    u, v = board.plane.basis()
    dn, du, dv = rng.uniform(0.5, 3.0), rng.uniform(-2, 2), rng.uniform(-1, 1)
    pos = tuple(board.origin[i] + board.normal[i] * dn + u[i] * du + v[i] * dv for i in range(3))
    hu, hv = rng.uniform(-1.8, 1.8), rng.uniform(-1.1, 1.1)
    hit = tuple(board.origin[i] + u[i] * hu + v[i] * hv for i in range(3))
    return pose_at(user, t=0, position=pos, look_at=hit)


# ---------------------------------------------------------------------------
# mirror geometry
# ---------------------------------------------------------------------------


def test_mirror_axis_aligned_example():
    p = pose_at("P", 0, position=(0.5, 1.6, 1.0), look_at=(0.5, 1.6, 0.0))
    assert p.forward == (0.0, 0.0, -1.0)
    m = mirror_pose(p, BOARD)
    assert m.position == (0.5, 1.6, -1.0)
    assert m.forward == (0.0, 0.0, 1.0)
    assert m.user == p.user and m.t == p.t


def test_mirror_plane_fixed_point():
    p = AvatarPose(
        "P", 0, (0.3, 1.2, 0.0), (0.0, 0.0, -1.0), (0.0, 1.0, 0.0), (0.3, 1.2, 0.0), (0.0, 0.0, -1.0)
    )
    m = mirror_pose(p, BOARD)
    assert vdist(m.position, p.position) < 1e-12
    assert vdist(m.gaze_origin, p.gaze_origin) < 1e-12


def test_mirror_gaze_point_preserved_worked_example():
    # Gaze from (0,1.6,1) toward the board point (0.2,1.0,0).
    p = pose_at("P", 0, position=(0.0, 1.6, 1.0), look_at=(0.2, 1.0, 0.0))
    hit = BOARD.plane.ray_intersect(p.gaze_origin, p.gaze_dir)
    assert vdist(hit, (0.2, 1.0, 0.0)) < 1e-12
    m = mirror_pose(p, BOARD)
    mhit = BOARD.plane.ray_intersect(m.gaze_origin, m.gaze_dir)
    assert vdist(mhit, (0.2, 1.0, 0.0)) < 1e-9


def test_mirror_involution_and_isometry_random():
    rng = random.Random(2024)
    for _ in range(500):
        board = random_board(rng)
        p = random_pose(rng, board)
        m = mirror_pose(mirror_pose(p, board), board)
        assert vdist(m.position, p.position) < 1e-9
        assert vdist(m.forward, p.forward) < 1e-9
        assert vdist(m.up, p.up) < 1e-9
        assert vdist(m.gaze_dir, p.gaze_dir) < 1e-9
        # Reflection is an isometry of distance-to-plane.
        d0 = board.plane.signed_distance(p.position)
        d1 = board.plane.signed_distance(mirror_pose(p, board).position)
        assert abs(abs(d0) - abs(d1)) < 1e-9


def test_mirror_gaze_point_preserved_random():
    rng = random.Random(77)
    for _ in range(2000):
        board = random_board(rng)
        p = random_pose(rng, board)
        hit = board.plane.ray_intersect(p.gaze_origin, p.gaze_dir)
        assert hit is not None
        m = mirror_pose(p, board)
        mhit = board.plane.ray_intersect(m.gaze_origin, m.gaze_dir)
        assert mhit is not None
        assert vdist(hit, mhit) < 1e-9


def test_mirror_output_stays_unit():
    rng = random.Random(3)
    for _ in range(200):
        board = random_board(rng)
        m = mirror_pose(random_pose(rng, board), board)
        for v in (m.forward, m.up, m.gaze_dir):
            assert abs(vnorm(v) - 1.0) < 1e-9


def test_mirror_rejects_degenerate_pose():
    bad = AvatarPose(
        "P", 0, (0, 0, 1), (0, 0, -2.0), (0, 1, 0), (0, 0, 1), (0, 0, -1.0)
    )
    with pytest.raises(DegeneratePose):
        mirror_pose(bad, BOARD)
    skew = AvatarPose(
        "P", 0, (0, 0, 1), (0, 0, -1.0), (0, 0, -1.0), (0, 0, 1), (0, 0, -1.0)
    )
    with pytest.raises(DegeneratePose):
        mirror_pose(skew, BOARD)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 5))
@settings(max_examples=200, deadline=None)
def test_mirror_flips_handedness(x, y, z):
    # forward x up must flip sign along the reflection normal.
    p = pose_at("P", 0, position=(x, y, z), look_at=(0.0, 0.0, 0.0))
    m = mirror_pose(p, BOARD)
    from mirrorboard.geometry import vcross

    r0 = vcross(p.forward, p.up)
    r1 = vcross(m.forward, m.up)
    refl = BOARD.plane.reflect_dir(r0)
    # The mirrored basis is left-handed: its cross product is the negated
    # reflection of the original one.
    assert vdist(r1, tuple(-c for c in refl)) < 1e-9


# ---------------------------------------------------------------------------
# visibility
# ---------------------------------------------------------------------------


def make_session(audience: int) -> SessionState:
    s = SessionState(board=BOARD)
    s.add_participant("P", RoleKind.PRESENTER)
    for i in range(audience):
        s.add_participant(f"A{i + 1}", RoleKind.AUDIENCE)
    return s


def test_visibility_examples():
    s = make_session(2)
    assert visible_avatars(s, "P") == {"A1", "A2"}
    assert visible_avatars(s, "A1") == {"P"}
    assert visible_avatars(s, "A2") == {"P"}


def test_visibility_presenter_only():
    s = make_session(0)
    assert visible_avatars(s, "P") == set()


def test_visibility_unknown_user():
    with pytest.raises(UnknownUser):
        visible_avatars(make_session(1), "ghost")


@pytest.mark.parametrize("k", range(6))
def test_visibility_is_presenter_star(k):
    s = make_session(k)
    users = ["P"] + [f"A{i + 1}" for i in range(k)]
    for viewer in users:
        vis = visible_avatars(s, viewer)
        assert viewer not in vis
        if viewer == "P":
            assert vis == set(users) - {"P"}
        else:
            assert vis == {"P"}
    # Star asymmetry between audience pairs: A_i never sees A_j.
    for a in users[1:]:
        for b in users[1:]:
            if a != b:
                assert b not in visible_avatars(s, a)


def test_single_presenter_enforced():
    s = make_session(1)
    with pytest.raises(Exception):
        s.add_participant("Q", RoleKind.PRESENTER)


# ---------------------------------------------------------------------------
# pose updates
# ---------------------------------------------------------------------------


def pose_flake(user: str, seq: int, pos=(0.0, 1.6, 1.5), t_ms: float | None = None) -> Flake:
    vecs3 = [pos, (0.0, 0.0, -1.0), (0.0, 1.0, 0.0), (0.0, 0.0, -1.0)]
    if t_ms is None:
        payload = Payload.vec3s(vecs3)
    else:
        payload = Payload.vec4s([v + (t_ms if i == 0 else 0.0,) for i, v in enumerate(vecs3)])
    return Flake("demo", f"pose.{user}", user, DeliveryClass.STATE, seq, payload)


def test_pose_update_newer_replaces():
    s = make_session(1)
    apply_pose_update(s, pose_flake("A1", 1, pos=(0.0, 1.0, 1.0), t_ms=100.0))
    apply_pose_update(s, pose_flake("A1", 2, pos=(0.5, 1.0, 1.0), t_ms=200.0))
    assert s.participants["A1"].pose.position[0] == 0.5
    assert s.participants["A1"].pose.t == 200


def test_pose_update_older_ignored():
    s = make_session(1)
    apply_pose_update(s, pose_flake("A1", 2, pos=(0.5, 1.0, 1.0), t_ms=200.0))
    before = s.participants["A1"].pose
    apply_pose_update(s, pose_flake("A1", 1, pos=(0.0, 1.0, 1.0), t_ms=100.0))
    assert s.participants["A1"].pose is before


def test_pose_update_vec3_layout_uses_receive_time():
    s = make_session(1)
    apply_pose_update(s, pose_flake("A1", 5), now_ms=777)
    assert s.participants["A1"].pose.t == 777
    assert s.participants["A1"].pose.gaze_origin == s.participants["A1"].pose.position


def test_pose_update_open_join_registers_audience():
    s = make_session(0)
    apply_pose_update(s, pose_flake("newcomer", 1, t_ms=1.0))
    assert s.participants["newcomer"].role is RoleKind.AUDIENCE
    s2 = make_session(0)
    s2.open_join = False
    with pytest.raises(UnknownUser):
        apply_pose_update(s2, pose_flake("newcomer", 1, t_ms=1.0))


def test_pose_update_malformed():
    s = make_session(1)
    bad = Flake("demo", "pose.A1", "A1", DeliveryClass.STATE, 1, Payload.floats([1.0, 2.0]))
    with pytest.raises(MalformedPosePayload):
        apply_pose_update(s, bad)
    nolabel = Flake("demo", "render", "A1", DeliveryClass.STATE, 1, Payload.vec3s([(0, 0, 0)] * 4))
    with pytest.raises(MalformedPosePayload):
        apply_pose_update(s, nolabel)


def test_pose_replay_matches_max_timestamp_reduction():
    # 3 users x 100 interleaved updates: final state holds each user's
    # max-(t, seq) pose, per an independent sort-based reduction.
    rng = random.Random(11)
    users = ["P", "A1", "A2"]
    updates = []
    seqs = {u: 0 for u in users}
    for _ in range(300):
        u = rng.choice(users)
        seqs[u] += 1
        t = rng.randrange(0, 10_000)
        updates.append((u, seqs[u], t, (rng.uniform(-2, 2), 1.6, rng.uniform(0.5, 3))))
    s = make_session(2)
    for u, seq, t, pos in updates:
        apply_pose_update(s, pose_flake(u, seq, pos=pos, t_ms=float(t)))
    for u in users:
        expected = max((r for r in updates if r[0] == u), key=lambda r: (r[2], r[1]))
        got = s.participants[u].pose
        assert got.t == expected[2]
        assert got.position == pytest.approx(expected[3], abs=1e-6)


def test_render_poses_are_mirrored_and_visible_only():
    s = make_session(2)
    for u, z in (("P", 1.5), ("A1", 1.2), ("A2", 0.8)):
        apply_pose_update(s, pose_flake(u, 1, pos=(0.0, 1.6, z), t_ms=1.0))
    rp = render_poses(s, "A1")
    assert set(rp) == {"P"}
    assert rp["P"].position[2] == pytest.approx(-1.5, abs=1e-6)
    rp_p = render_poses(s, "P")
    assert set(rp_p) == {"A1", "A2"}


def test_roster_update_sets_roles():
    s = SessionState(board=BOARD)
    f = Flake(
        "demo",
        "session.roster.P",
        "P",
        DeliveryClass.STATE,
        1,
        Payload.text('{"user": "P", "role": "PRESENTER"}'),
    )
    apply_roster_update(s, f)
    assert s.participants["P"].role is RoleKind.PRESENTER
    # A second presenter claim is ignored; the first one wins.
    g = Flake(
        "demo",
        "session.roster.Q",
        "Q",
        DeliveryClass.STATE,
        1,
        Payload.text('{"user": "Q", "role": "PRESENTER"}'),
    )
    apply_roster_update(s, g)
    assert s.presenter() == "P"
