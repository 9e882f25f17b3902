"""Regenerates the cross-implementation wire vectors.

tests/vectors/wire_vectors.json pins packet and command bytes that the
TypeScript client asserts against; test_vectors.py keeps this file honest
on the Python side.  Run `python tests/make_vectors.py` after any
intentional protocol change (which is a protocol break: bump the wire
version byte).
"""

import json
import math
from pathlib import Path

from mirrorboard import board as bd
from mirrorboard.behavior import mat_rotation_z, mat_translation
from mirrorboard.wire import DeliveryClass, Flake, Payload, encode_flake

OUT = Path(__file__).parent / "vectors" / "wire_vectors.json"


def flake_record(name: str, f: Flake) -> dict:
    payload: dict = {"tag": f.payload.tag.name, "count": f.payload.count}
    if f.payload.tag.name in ("VEC3", "VEC4"):
        payload["data"] = [list(v) for v in f.payload.data]
    elif f.payload.tag.name in ("FLOATS", "INTS"):
        payload["data"] = list(f.payload.data)
    elif f.payload.tag.name == "BYTES":
        payload["data"] = f.payload.data.hex()
    else:
        payload["data"] = f.payload.data
    return {
        "name": name,
        "scope": f.scope,
        "label": f.label,
        "origin": f.origin,
        "class": f.delivery.name,
        "seq": f.seq,
        "payload": payload,
        "hex": encode_flake(f).hex(),
    }


def command_record(name: str, cmd) -> dict:
    return {"name": name, "op": cmd.op.name, "hex": bd.encode_command(cmd).hex()}


def build() -> dict:
    flakes = [
        flake_record(
            "vec3_pose",
            Flake("demo", "pose.P", "P", DeliveryClass.STATE, 1, Payload.vec3s([(1.0, 2.0, 3.0)])),
        ),
        flake_record(
            "vec3_pose_full",
            Flake(
                "demo",
                "pose.A1",
                "A1",
                DeliveryClass.STATE,
                7,
                Payload.vec3s(
                    [(0.5, 1.6, 1.5), (0.0, 0.0, -1.0), (0.0, 1.0, 0.0), (0.0, 0.0, -1.0)]
                ),
            ),
        ),
        flake_record(
            "vec4_pose_with_t",
            Flake(
                "demo",
                "pose.A1",
                "A1",
                DeliveryClass.STATE,
                8,
                Payload.vec4s(
                    [
                        (0.5, 1.6, 1.5, 1234.0),
                        (0.0, 0.0, -1.0, 0.0),
                        (0.0, 1.0, 0.0, 0.0),
                        (0.0, 0.0, -1.0, 0.0),
                    ]
                ),
            ),
        ),
        flake_record(
            "register_text",
            Flake(
                "demo",
                "sys.register",
                "web1",
                DeliveryClass.EVENT,
                1,
                Payload.text(
                    '{"name": "web1", "roles": ["EMITTER", "SINK"], '
                    '"subscriptions": ["pose.*", "render", "session.roster.*"]}'
                ),
            ),
        ),
        flake_record(
            "unicode_text",
            Flake("demo", "chat", "λ-user", DeliveryClass.EVENT, 42, Payload.text("héllo Ω ♞")),
        ),
        flake_record(
            "empty_bytes",
            Flake("demo", "ping", "P", DeliveryClass.EVENT, 4294967295, Payload.raw(b"")),
        ),
        flake_record(
            "floats",
            Flake("demo", "vals", "P", DeliveryClass.STATE, 3, Payload.floats([0.1, -2.5, 65536.0])),
        ),
        flake_record(
            "ints",
            Flake("demo", "counts", "P", DeliveryClass.EVENT, 9, Payload.ints([-2147483648, 0, 2147483647])),
        ),
        flake_record(
            "render_stroke_bytes",
            Flake(
                "demo",
                "render",
                "behavior",
                DeliveryClass.EVENT,
                11,
                Payload.raw(
                    bd.encode_command(
                        bd.stroke(5, [(0.0, 0.0, 0.0), (1.0, 0.5, 0.0)], color=(1.0, 0.25, 0.5, 1.0), width=0.01)
                    )
                ),
            ),
        ),
    ]
    commands = [
        command_record("begin_frame", bd.begin_frame(12)),
        command_record("end_frame", bd.end_frame(12)),
        command_record("create_sketch", bd.create_sketch(3, "cube")),
        command_record("delete_sketch", bd.delete_sketch(3)),
        command_record(
            "stroke",
            bd.stroke(2, [(0.5, -1.25, 0.0), (1.0, 2.0, 3.0), (0.1, 0.2, 0.3)], color=(1.0, 0.5, 0.25, 1.0), width=0.02),
        ),
        command_record("text", bd.text(2, "hello λ", (0.1, 0.2, 0.0), height=0.12)),
        command_record("set_transform_t", bd.set_transform(4, mat_translation(1.0, 0.0, 0.0))),
        command_record("set_transform_rz", bd.set_transform(4, mat_rotation_z(math.pi / 2))),
        command_record("link", bd.link(4, 5)),
        command_record("set_value", bd.set_value(4, 0.75)),
        command_record("cursor", bd.cursor((0.5, 0.5, 0.0))),
        command_record("pan", bd.pan((-5.0, 0.0, 0.0))),
    ]
    # A small command sequence plus the canonical snapshot it must produce;
    # pins the TypeScript board's state machine and float formatting to the
    # Python one.
    seq = [
        bd.begin_frame(1),
        bd.create_sketch(1, "cube"),
        bd.stroke(1, [(0.5, -1.25, 0.0), (1.0, 2.0, 3.0), (0.0384615, 0.2, 0.3)], color=(0.9, 0.8, 0.2, 1.0), width=0.006),
        bd.text(1, "hello λ", (0.1, 0.2, 0.0), height=0.12),
        bd.set_transform(1, mat_rotation_z(math.pi / 2)),
        bd.create_sketch(2, "plot"),
        bd.set_value(2, 0.123456789),
        bd.link(1, 2),
        bd.cursor((0.5, 0.5, 0.0)),
        bd.pan((-5.0, 0.0, 0.0)),
        bd.end_frame(1),
    ]
    board = bd.Board()
    for cmd in seq:
        board.apply(cmd)
    board_scenario = {
        "commands": [bd.encode_command(c).hex() for c in seq],
        "snapshot": bd.snapshot(board.committed),
    }
    # Float formatting parity pairs for the snapshot serializers ('%.6g').
    import struct

    def f32(x: float) -> float:
        return struct.unpack(">f", struct.pack(">f", x))[0]

    g6_inputs = [
        0.0,
        -0.0,
        1.0,
        -2.5,
        0.5,
        1753.0,
        65536.0,
        f32(0.1),
        f32(0.2),
        f32(0.0384615),
        f32(math.cos(math.pi / 2)),
        f32(0.123456789),
        123456.7,
        1234567.8,
        999999.4,
        999999.5,
        1e-5,
        1.234e-5,
        -1e-7,
        1e6,
        -6.123233995736766e-17,
        3.14159265358979,
        0.000123456,
        f32(-1.25),
        f32(1e-4),
        f32(123456789.0),
    ]
    g6 = [[x, ("0" if format(x, ".6g") == "-0" else format(x, ".6g"))] for x in g6_inputs]
    return {
        "schema": "mirrorboard-wire-vectors-v1",
        "flakes": flakes,
        "commands": commands,
        "board_scenario": board_scenario,
        "g6": g6,
    }


def main() -> None:
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(build(), indent=2, ensure_ascii=False, sort_keys=True) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
