"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run `pytest -s tests/test_acceptance.py` to see the lines, or execute this
file directly (`python tests/test_acceptance.py`) for a plain report.
"""

import math
import random
import socket
import time
from pathlib import Path

from test_gaze import canon, grid_oracle, random_trace, rle_oracle
from test_wire import random_flake

from mirrorboard.behavior import (
    mat_apply,
    mat_mul,
    mat_rotation_x,
    mat_rotation_y,
    mat_rotation_z,
    mat_translation,
)
from mirrorboard.gaze import build_intervals, detect_eye_contact, summarize
from mirrorboard.geometry import vdist
from mirrorboard.harness import make_default_scenario, run_scenario
from mirrorboard.relay import NodeRegistration, NodeRole, Router
from mirrorboard.session import (
    BoardPlane,
    RoleKind,
    SessionState,
    mirror_pose,
    visible_avatars,
)
from mirrorboard.wire import (
    DecodeError,
    DeliveryClass,
    Flake,
    Payload,
    StreamDecoder,
    decode_flake,
    encode_flake,
)

GOLDEN = Path(__file__).parent / "golden" / "lesson.board.txt"


def report(name: str, ok: bool, detail: str = "") -> None:
    print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else ""))
    assert ok, f"acceptance criterion failed: {name} {detail}"


# ---------------------------------------------------------------------------


def test_acceptance_wire_codec():
    t0 = time.monotonic()
    rng = random.Random(0xACCE97)

    ok_round_trip = True
    for _ in range(100_000):
        f = random_flake(rng)
        b = encode_flake(f)
        if decode_flake(b) != f or encode_flake(decode_flake(b)) != b:
            ok_round_trip = False
            break

    ok_total = True
    for _ in range(1_000_000):
        buf = rng.randbytes(rng.randrange(0, 48))
        try:
            decode_flake(buf)
        except DecodeError:
            pass
        except Exception:
            ok_total = False
            break

    originals = [random_flake(rng) for _ in range(100)]
    stream = b"".join(encode_flake(f) for f in originals)
    ok_chunking = True
    for _ in range(20):
        dec = StreamDecoder()
        got = []
        pos = 0
        while pos < len(stream):
            step = rng.randrange(1, 333)
            got.extend(dec.feed(stream[pos : pos + step]))
            pos += step
        if [decode_flake(p) for p in got] != originals:
            ok_chunking = False
            break

    elapsed = time.monotonic() - t0
    report(
        "wire codec: 1e5 round-trips byte-exact, 1e6-buffer fuzz total, chunking invariant",
        ok_round_trip and ok_total and ok_chunking and elapsed < 60.0,
        f"{elapsed:.1f}s < 60s",
    )


def test_acceptance_relay_semantics():
    t0 = time.monotonic()
    rng = random.Random(0xB0A2D)
    router = Router()
    em = frozenset({NodeRole.EMITTER})
    sk = frozenset({NodeRole.SINK})
    e = router.register(NodeRegistration("E", em | sk, frozenset({"render"})))
    sinks = {
        "S1": router.register(NodeRegistration("S1", sk, frozenset({"render", "pose.*"}))),
        "S2": router.register(NodeRegistration("S2", sk, frozenset({"render"}))),
        "S3": router.register(NodeRegistration("S3", sk, frozenset({"other"}))),
    }
    published_events: list[int] = []
    got_events = {name: [] for name in sinks}
    coalescing_ok = True
    echo_ok = True
    seq = 0
    for tick in range(1000):
        last_state = None
        for _ in range(rng.randrange(0, 5)):
            seq += 1
            if rng.random() < 0.6:
                router.publish(
                    e, Flake("s", "render", "E", DeliveryClass.EVENT, seq, Payload.ints([seq]))
                )
                published_events.append(seq)
            else:
                last_state = seq
                router.publish(
                    e,
                    Flake("s", "pose.E", "E", DeliveryClass.STATE, seq, Payload.ints([seq])),
                )
        out = router.run_tick()
        if "E" in out:
            echo_ok = False  # the emitter subscribed to render; must never self-receive
        for name in sinks:
            for f in out.get(name, []):
                if f.delivery is DeliveryClass.EVENT:
                    got_events[name].append(f.seq)
                elif f.label == "pose.E" and f.seq != last_state:
                    coalescing_ok = False
    exactly_once = (
        got_events["S1"] == published_events
        and got_events["S2"] == published_events
        and got_events["S3"] == []
    )

    # Second relay on the same port is rejected.
    import asyncio

    from mirrorboard.relay import RelayConfig, SingleRelayViolation, start_relay

    def free_port() -> int:
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            return s.getsockname()[1]

    async def check_single_relay() -> bool:
        port, ws = free_port(), free_port()
        relay = await start_relay(RelayConfig(port=port, ws_port=ws))
        try:
            await start_relay(RelayConfig(port=port, ws_port=free_port()))
            return False
        except SingleRelayViolation:
            return True
        finally:
            await relay.stop()

    single_ok = asyncio.run(check_single_relay())
    elapsed = time.monotonic() - t0
    report(
        "relay: exactly-once EVENTs over 1000 ticks, last-per-tick STATE, no echo, single relay",
        exactly_once and coalescing_ok and echo_ok and single_ok and elapsed < 30.0,
        f"{elapsed:.1f}s < 30s",
    )


def test_acceptance_mirror_geometry():
    from test_session import random_board, random_pose

    rng = random.Random(0x313B02)
    worst_involution = 0.0
    worst_fixed = 0.0
    worst_gaze = 0.0
    for _ in range(10_000):
        board = random_board(rng)
        p = random_pose(rng, board)
        m = mirror_pose(p, board)
        mm = mirror_pose(m, board)
        worst_involution = max(
            worst_involution,
            vdist(mm.position, p.position),
            vdist(mm.forward, p.forward),
            vdist(mm.up, p.up),
            vdist(mm.gaze_dir, p.gaze_dir),
        )
        # A point on the plane is fixed by the reflection.
        u, v = board.plane.basis()
        cu, cv = rng.uniform(-2, 2), rng.uniform(-2, 2)
        q = tuple(board.origin[i] + u[i] * cu + v[i] * cv for i in range(3))
        worst_fixed = max(worst_fixed, vdist(board.plane.reflect_point(q), q))
        hit = board.plane.ray_intersect(p.gaze_origin, p.gaze_dir)
        mhit = board.plane.ray_intersect(m.gaze_origin, m.gaze_dir)
        worst_gaze = max(worst_gaze, vdist(hit, mhit))
    report(
        "mirror: involution<=1e-9, plane fixed points<=1e-12, gaze point preserved<=1e-9",
        worst_involution <= 1e-9 and worst_fixed <= 1e-12 and worst_gaze <= 1e-9,
        f"inv {worst_involution:.2e}, fix {worst_fixed:.2e}, gaze {worst_gaze:.2e}",
    )


def test_acceptance_visibility_star():
    board = BoardPlane((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), (2.0, 1.25))
    ok = True
    for k in range(6):
        s = SessionState(board=board)
        s.add_participant("P", RoleKind.PRESENTER)
        names = [f"A{i}" for i in range(1, k + 1)]
        for n in names:
            s.add_participant(n, RoleKind.AUDIENCE)
        ok &= visible_avatars(s, "P") == set(names)
        for n in names:
            ok &= visible_avatars(s, n) == {"P"}
    report("visibility: presenter-centered star for k=0..5 audience", ok)


def test_acceptance_matrix_lesson_math():
    tr = mat_mul(mat_translation(1, 0, 0), mat_rotation_z(math.pi / 2))
    rt = mat_mul(mat_rotation_z(math.pi / 2), mat_translation(1, 0, 0))
    p_tr = mat_apply(tr, (1, 0, 0, 1))
    p_rt = mat_apply(rt, (1, 0, 0, 1))
    ok_points = max(
        abs(a - b) for a, b in zip(p_tr, (1.0, 1.0, 0.0, 1.0))
    ) <= 1e-12 and max(abs(a - b) for a, b in zip(p_rt, (0.0, 2.0, 0.0, 1.0))) <= 1e-12
    rng = random.Random(0x90)
    ortho_ok = True
    for _ in range(500):
        rot = rng.choice([mat_rotation_x, mat_rotation_y, mat_rotation_z])(rng.uniform(-10, 10))
        for i in range(3):
            for j in range(3):
                dot = sum(rot[i * 4 + r] * rot[j * 4 + r] for r in range(3))
                if abs(dot - (1.0 if i == j else 0.0)) > 1e-12:
                    ortho_ok = False
    report(
        "matrix lesson: T.R->(1,1,0,1), R.T->(0,2,0,1), rotations orthonormal<=1e-12",
        ok_points and ortho_ok,
    )


def test_acceptance_gaze_analytics():
    t0 = time.monotonic()
    rng = random.Random(0x6A5E)
    intervals_ok = True
    events_ok = True
    for i in range(1000):
        users = ("A", "B") if i % 3 else ("A", "B", "C")
        samples, context = random_trace(rng, users=users, n=24)
        ivs = build_intervals(samples, context)
        if canon(ivs) != canon(rle_oracle(samples, context)):
            intervals_ok = False
            break
        if detect_eye_contact(ivs) != grid_oracle(ivs):
            events_ok = False
            break

    from test_gaze import planted_trace

    planted = planted_trace(17)
    events = detect_eye_contact(planted, min_duration_ms=100)
    m = summarize(planted, events, duration_ms=40_000)
    planted_ok = (
        len(events) == 17
        and m["per_user"]["A"]["eye_contact_count"] == 17
        and m["per_user"]["B"]["eye_contact_count"] == 17
    )
    elapsed = time.monotonic() - t0
    report(
        "gaze: 1e3 traces match RLE + ms-grid oracles; planted trace yields exactly 17 contacts",
        intervals_ok and events_ok and planted_ok,
        f"{elapsed:.1f}s",
    )


def test_acceptance_end_to_end(tmp_path):
    t0 = time.monotonic()
    cfg1 = make_default_scenario(audience=2, seed=42, time_scale=20.0)
    cfg2 = make_default_scenario(audience=2, seed=42, time_scale=20.0)
    r1 = run_scenario(cfg1, tmp_path / "one")
    r2 = run_scenario(cfg2, tmp_path / "two")

    files1 = {p.relative_to(tmp_path / "one"): p.read_bytes() for p in sorted((tmp_path / "one").rglob("*")) if p.is_file()}
    files2 = {p.relative_to(tmp_path / "two"): p.read_bytes() for p in sorted((tmp_path / "two").rglob("*")) if p.is_file()}
    deterministic = files1 == files2

    golden = GOLDEN.read_text()
    mr_clients = [p.name for p in cfg1.participants if p.view_mode.value == "MR"]
    golden_ok = all(r1.snapshots[n] == golden for n in mr_clients)

    projected = next(p.name for p in cfg1.participants if p.view_mode.value == "PROJECTED")
    # pan_semantics covers: MR count unchanged across the PAN, and the
    # PROJECTED client's final visible count strictly below the MR client's.
    pan_ok = r1.checks["pan_semantics"] and r1.ok

    elapsed = time.monotonic() - t0
    report(
        "end-to-end: byte-deterministic, MR snapshots match golden, projected < MR after pan",
        deterministic and golden_ok and pan_ok and elapsed < 120.0,
        f"{elapsed:.1f}s < 120s (projected client: {projected})",
    )


if __name__ == "__main__":
    import sys
    import tempfile

    failures = 0
    for fn in [
        test_acceptance_wire_codec,
        test_acceptance_relay_semantics,
        test_acceptance_mirror_geometry,
        test_acceptance_visibility_star,
        test_acceptance_matrix_lesson_math,
        test_acceptance_gaze_analytics,
    ]:
        try:
            fn()
        except AssertionError:
            failures += 1
    try:
        with tempfile.TemporaryDirectory() as d:
            test_acceptance_end_to_end(Path(d))
    except AssertionError:
        failures += 1
    sys.exit(1 if failures else 0)
