"""Command-line entry points.

    mirrorboard relay   --port 9090 --ws-port 9091 --tick 60 [--log relay.jsonl]
    mirrorboard behave  --script lesson.json --relay host:9090 --time-scale 10
    mirrorboard lesson  --out lesson.json
    mirrorboard run     --scenario s.json --out dir/   (omit --scenario for the default lesson)
    mirrorboard replay  dir/
    mirrorboard analyze --log session.jsonl --cone 10 --min-contact 100 --out metrics.json
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path


def _cmd_relay(args) -> int:
    from .relay import AddressInUse, RelayConfig, run_relay_forever

    cfg = RelayConfig(
        host=args.host,
        port=args.port,
        ws_port=args.ws_port,
        tick_hz=args.tick,
        log_path=args.log,
    )
    try:
        run_relay_forever(cfg)
    except AddressInUse as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        pass
    return 0


def _cmd_behave(args) -> int:
    from .behavior import BehaviorServer, LectureScript, generate_matrix_lesson
    from .board import INPUT_LABEL
    from .relay import NodeRegistration, NodeRole, RelayClient
    from .wire import DeliveryClass

    if args.script:
        script = LectureScript.load(args.script)
    else:
        script = generate_matrix_lesson()
    host, _, port = args.relay.partition(":")
    server = BehaviorServer(
        script,
        scope=args.scope,
        time_scale=args.time_scale,
        emit_empty_frames=args.empty_frames,
    )

    async def main() -> None:
        client = RelayClient("behavior", host=host or "127.0.0.1", port=int(port or 9090))
        await client.connect(
            NodeRegistration(
                "behavior",
                frozenset({NodeRole.EMITTER, NodeRole.SINK}),
                frozenset({INPUT_LABEL}),
            ),
            scope=args.scope,
        )
        print(f"behavior: script of {script.duration:.0f}s at x{args.time_scale}", flush=True)
        loop = asyncio.get_running_loop()
        period = 1.0 / args.tick
        start = loop.time()
        next_at = start
        while True:
            await asyncio.sleep(max(0.0, next_at - loop.time()))
            next_at += period
            while not client.inbox.empty():
                f = client.inbox.get_nowait()
                if f.label == INPUT_LABEL:
                    server.handle_input(f)
            flakes, notes = server.tick(loop.time() - start)
            for note in notes:
                print(f"[{note.t_ms:>8} ms] {note.kind}: {json.dumps(note.params, sort_keys=True)}", flush=True)
            if flakes:
                await client.publish_many(
                    [(f.label, f.payload, DeliveryClass.EVENT) for f in flakes], scope=args.scope
                )
            if server.finished and not args.stay:
                break
        await client.close()
        print("behavior: script finished", flush=True)

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
    except ConnectionRefusedError:
        print(f"error: no relay at {args.relay}", file=sys.stderr)
        return 2
    return 0


def _cmd_lesson(args) -> int:
    from .behavior import generate_matrix_lesson

    text = generate_matrix_lesson().to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def _cmd_run(args) -> int:
    from .harness import ScenarioConfig, make_default_scenario, run_scenario

    if args.scenario:
        cfg = ScenarioConfig.from_json(Path(args.scenario).read_text())
    else:
        cfg = make_default_scenario(
            audience=args.audience, seed=args.seed, time_scale=args.time_scale
        )
    result = run_scenario(cfg, args.out)
    for name, passed in result.checks.items():
        print(f"{'PASS' if passed else 'FAIL'}  {name}")
    print(f"artifacts: {result.out_dir}")
    print(f"eye contact events: {result.metrics['eye_contact_total']}")
    return 0 if result.ok else 1


def _cmd_replay(args) -> int:
    from .harness import replay

    ok, metrics = replay(args.dir)
    print(f"{'PASS' if ok else 'FAIL'}  metrics reproduce from the gaze log")
    if args.verbose:
        print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0 if ok else 1


def _cmd_analyze(args) -> int:
    from .gaze import analyze_log

    metrics = analyze_log(args.log, args.cone, args.min_contact)
    text = json.dumps(metrics, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mirrorboard", description=__doc__.strip().splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("relay", help="run the central relay node")
    r.add_argument("--host", default="127.0.0.1")
    r.add_argument("--port", type=int, default=9090)
    r.add_argument("--ws-port", type=int, default=9091)
    r.add_argument("--tick", type=float, default=60.0)
    r.add_argument("--log", default=None, help="JSONL relay event log")
    r.set_defaults(func=_cmd_relay)

    b = sub.add_parser("behave", help="run the behavior server against a relay")
    b.add_argument("--script", default=None, help="lecture script JSON (default: built-in lesson)")
    b.add_argument("--relay", default="127.0.0.1:9090")
    b.add_argument("--scope", default="demo")
    b.add_argument("--time-scale", type=float, default=1.0)
    b.add_argument("--tick", type=float, default=60.0)
    b.add_argument("--empty-frames", action="store_true", help="emit frame markers on idle ticks")
    b.add_argument("--stay", action="store_true", help="keep serving input after the script ends")
    b.set_defaults(func=_cmd_behave)

    l = sub.add_parser("lesson", help="print or write the built-in matrix lesson script")
    l.add_argument("--out", default=None)
    l.set_defaults(func=_cmd_lesson)

    n = sub.add_parser("run", help="run a scripted end-to-end scenario")
    n.add_argument("--scenario", default=None, help="scenario JSON (default: built-in lesson)")
    n.add_argument("--out", required=True)
    n.add_argument("--audience", type=int, default=2)
    n.add_argument("--seed", type=int, default=42)
    n.add_argument("--time-scale", type=float, default=20.0)
    n.set_defaults(func=_cmd_run)

    y = sub.add_parser("replay", help="recompute metrics from run artifacts")
    y.add_argument("dir")
    y.add_argument("-v", "--verbose", action="store_true")
    y.set_defaults(func=_cmd_replay)

    a = sub.add_parser("analyze", help="recompute gaze metrics from a session log")
    a.add_argument("--log", required=True)
    a.add_argument("--cone", type=float, default=None, help="cone half-angle, degrees")
    a.add_argument("--min-contact", type=int, default=None, help="eye-contact threshold, ms")
    a.add_argument("--out", default=None)
    a.set_defaults(func=_cmd_analyze)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
