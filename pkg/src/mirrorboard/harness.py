"""End-to-end scenario runner: relay + behavior + scripted clients in one
process on a virtual clock.

Each tick: the behavior server emits its frame, scripted participants
publish poses, the router flushes, clients fold their deliveries into
their own board and session state, and gaze gets sampled.  Everything is
driven from one thread in a fixed order, so a fixed seed makes the whole
run (snapshots, logs, metrics) byte-deterministic.

Participants follow waypoint-free scripted trajectories: a standing spot
with small seeded sway, plus a gaze plan that alternates between the
content (cursor/board) and the mirrored heads of visible users.  Human
behavior is exactly what this harness does NOT try to reproduce; it only
produces plausible, replayable session geometry.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

from . import board as bd
from .behavior import BehaviorServer, LectureScript
from .board import Board, INPUT_LABEL, RENDER_LABEL, Op, ViewMode, snapshot, visible_content
from .gaze import (
    DEFAULT_CONE_DEG,
    DEFAULT_MIN_CONTACT_MS,
    GazeSample,
    RecordedContext,
    build_intervals,
    detect_eye_contact,
    log_lines,
    summarize,
)
from .geometry import Vec3, vnorm, vnormalize, vsub
from .relay import NodeRegistration, NodeRole, Router
from .session import (
    BoardPlane,
    RoleKind,
    SessionState,
    apply_pose_update,
    apply_roster_update,
    render_poses,
    visible_avatars,
)
from .wire import DeliveryClass, Flake, Payload

RUN_SCHEMA = "mirrorboard-run-v1"

EM_SINK = frozenset({NodeRole.EMITTER, NodeRole.SINK})
CLIENT_SUBS = frozenset({RENDER_LABEL, "pose.*", "session.roster.*"})


class HarnessError(Exception):
    pass


class PortInUse(HarnessError):
    pass


class ScriptParseError(HarnessError):
    pass


class MissingArtifact(HarnessError):
    pass


class SchemaMismatch(HarnessError):
    pass


@dataclass
class GazePhase:
    """One entry of a gaze plan: look at `target` during script seconds
    [t0, t1).  Targets: 'cursor', 'board', 'void', or 'user:<name>'."""

    t0: float
    t1: float
    target: str


@dataclass
class ParticipantSpec:
    name: str
    role: RoleKind
    view_mode: ViewMode = ViewMode.MR
    base: Vec3 | None = None  # standing spot; default assigned per role
    gaze_plan: list[GazePhase] = field(default_factory=list)
    input_script: dict[int, list] = field(default_factory=dict)  # tick -> commands
    scripted: bool = True  # False = placeholder seat for a live web client


@dataclass
class ScenarioConfig:
    participants: list[ParticipantSpec]
    script: LectureScript
    board: BoardPlane = BoardPlane((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), (2.0, 1.25))
    time_scale: float = 20.0
    seed: int = 42
    tick_hz: int = 60
    gaze_every_ticks: int = 2  # 30 Hz at the default tick rate
    cone_half_angle_deg: float = DEFAULT_CONE_DEG
    min_contact_ms: int = DEFAULT_MIN_CONTACT_MS
    scope: str = "demo"

    def __post_init__(self) -> None:
        presenters = [p for p in self.participants if p.role is RoleKind.PRESENTER]
        if len(presenters) != 1:
            raise HarnessError(f"need exactly one presenter, got {len(presenters)}")

    def presenter(self) -> ParticipantSpec:
        return next(p for p in self.participants if p.role is RoleKind.PRESENTER)

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema": RUN_SCHEMA,
                "seed": self.seed,
                "time_scale": self.time_scale,
                "tick_hz": self.tick_hz,
                "gaze_every_ticks": self.gaze_every_ticks,
                "cone_half_angle_deg": self.cone_half_angle_deg,
                "min_contact_ms": self.min_contact_ms,
                "scope": self.scope,
                "board": {
                    "origin": list(self.board.origin),
                    "normal": list(self.board.normal),
                    "extents": list(self.board.extents),
                },
                "participants": [
                    {
                        "name": p.name,
                        "role": p.role.value,
                        "view_mode": p.view_mode.value,
                        "base": list(p.base) if p.base else None,
                        "gaze_plan": [[g.t0, g.t1, g.target] for g in p.gaze_plan],
                        "scripted": p.scripted,
                    }
                    for p in self.participants
                ],
                "script": json.loads(self.script.to_json()),
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            raw = json.loads(text)
            if raw.get("schema", RUN_SCHEMA) != RUN_SCHEMA:
                raise SchemaMismatch(f"unsupported scenario schema {raw.get('schema')!r}")
            b = raw.get("board", {})
            board = BoardPlane(
                tuple(b.get("origin", (0, 0, 0))),
                tuple(b.get("normal", (0, 0, 1))),
                tuple(b.get("extents", (2.0, 1.25))),
            )
            participants = [
                ParticipantSpec(
                    name=p["name"],
                    role=RoleKind(p["role"]),
                    view_mode=ViewMode(p.get("view_mode", "MR")),
                    base=tuple(p["base"]) if p.get("base") else None,
                    gaze_plan=[GazePhase(*g) for g in p.get("gaze_plan", [])],
                    scripted=bool(p.get("scripted", True)),
                )
                for p in raw["participants"]
            ]
            script = LectureScript.from_json(json.dumps(raw["script"]))
            return cls(
                participants=participants,
                script=script,
                board=board,
                time_scale=float(raw.get("time_scale", 20.0)),
                seed=int(raw.get("seed", 42)),
                tick_hz=int(raw.get("tick_hz", 60)),
                gaze_every_ticks=int(raw.get("gaze_every_ticks", 2)),
                cone_half_angle_deg=float(raw.get("cone_half_angle_deg", DEFAULT_CONE_DEG)),
                min_contact_ms=int(raw.get("min_contact_ms", DEFAULT_MIN_CONTACT_MS)),
                scope=raw.get("scope", "demo"),
            )
        except SchemaMismatch:
            raise
        except (KeyError, ValueError, TypeError) as exc:
            raise ScriptParseError(f"bad scenario config: {exc}") from exc


def default_gaze_plan(role: RoleKind, audience: list[str], script_end: float) -> list[GazePhase]:
    """A repeating per-minute attention cycle, in script time.

    The presenter works the content, then checks on each audience member in
    turn; audience members follow the cursor, watch the presenter for a
    stretch, and drift off briefly.  The overlap of 'presenter checks on A'
    with 'A watches presenter' is what produces eye contact.
    """
    plan: list[GazePhase] = []
    block = 60.0
    t = 0.0
    k = max(1, len(audience))
    i = 0
    while t < script_end:
        if role is RoleKind.PRESENTER:
            plan.append(GazePhase(t, t + 42.0, "cursor"))
            if audience:
                target = audience[i % len(audience)]
                plan.append(GazePhase(t + 42.0, t + 54.0, f"user:{target}"))
            else:
                plan.append(GazePhase(t + 42.0, t + 54.0, "board"))
            plan.append(GazePhase(t + 54.0, t + block, "cursor"))
        else:
            plan.append(GazePhase(t, t + 40.0, "cursor"))
            plan.append(GazePhase(t + 40.0, t + 56.0, "user:__presenter__"))
            plan.append(GazePhase(t + 56.0, t + block, "void"))
        t += block
        i += 1
    return plan


def make_default_scenario(
    audience: int = 2,
    seed: int = 42,
    time_scale: float = 20.0,
    projected_last: bool = True,
    script: LectureScript | None = None,
) -> ScenarioConfig:
    """Canonical lesson scenario: one presenter plus `audience` members, the
    last one watching in PROJECTED mode when `projected_last`."""
    from .behavior import generate_matrix_lesson

    script = script or generate_matrix_lesson()
    participants = [ParticipantSpec("P", RoleKind.PRESENTER, ViewMode.MR, base=(0.0, 1.6, 1.5))]
    for i in range(audience):
        mode = ViewMode.PROJECTED if (projected_last and i == audience - 1) else ViewMode.MR
        x = -0.8 + 1.6 * (i / max(1, audience - 1)) if audience > 1 else 0.0
        participants.append(
            ParticipantSpec(f"A{i + 1}", RoleKind.AUDIENCE, mode, base=(x, 1.55, 1.8))
        )
    return ScenarioConfig(participants=participants, script=script, seed=seed, time_scale=time_scale)


class ScriptedClient:
    """In-process stand-in for a render client: applies routed flakes to its
    own board + session, publishes poses, and samples gaze."""

    def __init__(self, spec: ParticipantSpec, cfg: ScenarioConfig, presenter_name: str) -> None:
        self.spec = spec
        self.cfg = cfg
        self.name = spec.name
        self.board = Board()
        self.session = SessionState(board=cfg.board, open_join=True)
        for p in cfg.participants:
            self.session.add_participant(p.name, p.role)
        self.presenter_name = presenter_name
        rng = random.Random(f"{cfg.seed}:{spec.name}")
        self.phase = tuple(rng.uniform(0, 2 * math.pi) for _ in range(3))
        self.sway = 0.04
        self.seq = 0
        self.received_render_seqs: list[int] = []
        self.star_violations = 0
        self.saw_pan = False
        self.counts_before_pan: dict[str, int] | None = None

    # -- trajectory -----------------------------------------------------------

    def position(self, now_s: float) -> Vec3:
        bx, by, bz = self.spec.base
        p1, p2, p3 = self.phase
        return (
            bx + self.sway * math.sin(0.31 * now_s + p1),
            by + 0.5 * self.sway * math.sin(0.23 * now_s + p2),
            bz + 0.3 * self.sway * math.sin(0.17 * now_s + p3),
        )

    def _gaze_target_point(self, script_now: float) -> Vec3 | None:
        """Where this participant is looking (None = off into the void)."""
        target = "cursor"
        for phase in self.spec.gaze_plan:
            if phase.t0 <= script_now < phase.t1:
                target = phase.target
                break
        if target.startswith("user:"):
            user = target[5:]
            if user == "__presenter__":
                user = self.presenter_name
            try:
                poses = render_poses(self.session, self.name)
            except Exception:
                poses = {}
            pose = poses.get(user)
            if pose is not None:
                return pose.position
            target = "board"  # cannot see them (yet): fall back to content
        if target == "void":
            return None
        if target == "cursor":
            cur = self.board.committed.cursor
            if cur is not None:
                return cur
            target = "board"
        o = self.cfg.board.origin
        return (o[0], o[1] + 0.2, o[2])

    def gaze_sample(self, now_s: float, now_ms: int) -> GazeSample:
        pos = self.position(now_s)
        point = self._gaze_target_point(now_s * self.cfg.time_scale)
        if point is None or vnorm(vsub(point, pos)) < 1e-9:
            direction = vnormalize((0.05, 1.0, 0.05))
        else:
            direction = vnormalize(vsub(point, pos))
        return GazeSample(self.name, now_ms, pos, direction)

    # -- outbound flakes --------------------------------------------------------

    def pose_flake(self, now_s: float, now_ms: int) -> Flake:
        sample = self.gaze_sample(now_s, now_ms)
        pos = sample.gaze_origin
        fwd = sample.gaze_dir
        d = fwd[1]  # Gram-Schmidt (0,1,0) against forward
        up = vnormalize((0.0 - d * fwd[0], 1.0 - d * fwd[1], 0.0 - d * fwd[2]))
        self.seq += 1
        return Flake(
            scope=self.cfg.scope,
            label=f"pose.{self.name}",
            origin=self.name,
            delivery=DeliveryClass.STATE,
            seq=self.seq,
            payload=Payload.vec4s(
                [pos + (float(now_ms),), fwd + (0.0,), up + (0.0,), fwd + (0.0,)]
            ),
        )

    def roster_flake(self, now_ms: int) -> Flake:
        self.seq += 1
        return Flake(
            scope=self.cfg.scope,
            label=f"session.roster.{self.name}",
            origin=self.name,
            delivery=DeliveryClass.STATE,
            seq=self.seq,
            payload=Payload.text(
                json.dumps({"user": self.name, "role": self.spec.role.value}, sort_keys=True)
            ),
        )

    def input_flakes(self, tick: int) -> list[Flake]:
        out = []
        for cmd in self.spec.input_script.get(tick, ()):
            self.seq += 1
            out.append(
                Flake(
                    scope=self.cfg.scope,
                    label=INPUT_LABEL,
                    origin=self.name,
                    delivery=DeliveryClass.EVENT,
                    seq=self.seq,
                    payload=Payload.raw(bd.encode_command(cmd)),
                )
            )
        return out

    # -- inbound flakes -----------------------------------------------------------

    def deliver(self, f: Flake, now_ms: int) -> None:
        if f.label == RENDER_LABEL:
            cmd = bd.decode_command(bytes(f.payload.data))
            if cmd.op is Op.PAN and not self.saw_pan:
                self.saw_pan = True
                self.counts_before_pan = self._visible_counts()
            self.board.apply(cmd)
            self.received_render_seqs.append(f.seq)
        elif f.label.startswith("pose."):
            apply_pose_update(self.session, f, now_ms)
        elif f.label.startswith("session.roster."):
            apply_roster_update(self.session, f)

    def _visible_counts(self) -> dict[str, int]:
        c = self.board.committed
        return {
            "PROJECTED": len(visible_content(c, self.cfg.board, ViewMode.PROJECTED)),
            "MR": len(visible_content(c, self.cfg.board, ViewMode.MR)),
        }

    def check_star(self) -> None:
        expected = (
            {p.name for p in self.cfg.participants if p.role is RoleKind.AUDIENCE}
            if self.spec.role is RoleKind.PRESENTER
            else {self.presenter_name}
        )
        if visible_avatars(self.session, self.name) != expected:
            self.star_violations += 1

    def final_counts(self) -> dict[str, int]:
        return self._visible_counts()


@dataclass
class RunResult:
    ok: bool
    checks: dict
    metrics: dict
    out_dir: Path
    snapshots: dict[str, str]


def _metrics_bytes(metrics: dict) -> str:
    return json.dumps(metrics, indent=2, sort_keys=True) + "\n"


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path) -> RunResult:
    """Run the scripted session and write all artifacts under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "boards").mkdir(exist_ok=True)

    router = Router()
    behavior = BehaviorServer(cfg.script, scope=cfg.scope, time_scale=cfg.time_scale)
    behavior_node = router.register(
        NodeRegistration("behavior", EM_SINK, frozenset({INPUT_LABEL}))
    )
    presenter_name = cfg.presenter().name
    audience = [p.name for p in cfg.participants if p.role is RoleKind.AUDIENCE]
    clients: dict[str, ScriptedClient] = {}
    nodes = {}
    for spec in cfg.participants:
        if not spec.scripted:
            continue  # placeholder seat for a live web client: roster only
        if not spec.gaze_plan:
            spec.gaze_plan = default_gaze_plan(spec.role, audience, cfg.script.duration)
        if spec.base is None:
            spec.base = (0.0, 1.6, 1.5)
        clients[spec.name] = ScriptedClient(spec, cfg, presenter_name)
        nodes[spec.name] = router.register(NodeRegistration(spec.name, EM_SINK, CLIENT_SUBS))
    scripted_specs = [p for p in cfg.participants if p.scripted]

    relay_log: list[str] = []
    annotations: list[dict] = []
    samples: list[GazeSample] = []
    sample_targets: dict[tuple[str, int], dict[str, Vec3]] = {}
    published_render_seqs: list[int] = []

    n_ticks = int(math.ceil(cfg.script.duration / cfg.time_scale * cfg.tick_hz)) + cfg.tick_hz // 6

    def log_pub(tick: int, f: Flake) -> None:
        relay_log.append(
            json.dumps(
                {
                    "kind": "pub",
                    "tick": tick,
                    "origin": f.origin,
                    "label": f.label,
                    "class": f.delivery.name,
                    "seq": f.seq,
                },
                sort_keys=True,
            )
        )

    for tick in range(n_ticks):
        now_s = tick / cfg.tick_hz
        now_ms = round(tick * 1000 / cfg.tick_hz)

        # Behavior frame first: ingests input delivered at the previous tick.
        flakes, notes = behavior.tick(now_s)
        for note in notes:
            annotations.append({"t": note.t_ms, "kind": note.kind, **note.params})
        for f in flakes:
            router.publish(behavior_node, f)
            published_render_seqs.append(f.seq)
            log_pub(tick, f)

        # Participant emissions at the gaze cadence (30 Hz by default).
        emit_this_tick = tick % cfg.gaze_every_ticks == 0
        for spec in scripted_specs:
            client = clients[spec.name]
            outbound = client.input_flakes(tick)
            if emit_this_tick:
                outbound.append(client.pose_flake(now_s, now_ms))
                if tick % (cfg.tick_hz // 2 or 1) == 0:
                    outbound.append(client.roster_flake(now_ms))
            for f in outbound:
                router.publish(nodes[spec.name], f)
                log_pub(tick, f)

        # Flush the tick and fold deliveries into every node.
        deliveries = router.run_tick()
        for name in sorted(deliveries):
            for f in deliveries[name]:
                relay_log.append(
                    json.dumps(
                        {
                            "kind": "del",
                            "tick": tick,
                            "node": name,
                            "origin": f.origin,
                            "label": f.label,
                            "class": f.delivery.name,
                            "seq": f.seq,
                        },
                        sort_keys=True,
                    )
                )
        behavior_node.outbox.clear()
        for f in deliveries.get("behavior", ()):
            if f.label == INPUT_LABEL:
                behavior.handle_input(f)
        for spec in scripted_specs:
            client = clients[spec.name]
            node = nodes[spec.name]
            while node.outbox:
                client.deliver(node.outbox.popleft(), now_ms)

        # Gaze sampling after state settles, at the same cadence.
        if emit_this_tick:
            for spec in scripted_specs:
                client = clients[spec.name]
                s = client.gaze_sample(now_s, now_ms)
                samples.append(s)
                targets = {
                    u: p.position for u, p in render_poses(client.session, client.name).items()
                }
                sample_targets[(client.name, now_ms)] = targets
                client.check_star()

    duration_ms = round((n_ticks - 1) * 1000 / cfg.tick_hz)

    # Analytics over the recorded trace.
    context = RecordedContext(cfg.board, sample_targets)
    intervals = build_intervals(samples, context, cfg.cone_half_angle_deg)
    events = detect_eye_contact(intervals, cfg.min_contact_ms)
    metrics = summarize(intervals, events, duration_ms)

    snapshots = {name: snapshot(c.board.committed) for name, c in clients.items()}

    # End-to-end invariants.
    checks: dict[str, bool] = {}
    checks["conservation"] = all(
        clients[name].received_render_seqs == published_render_seqs for name in clients
    )
    mr_names = [p.name for p in scripted_specs if p.view_mode is ViewMode.MR]
    checks["cross_client_snapshots_identical"] = len({snapshots[n] for n in clients}) == 1
    checks["star_visibility"] = all(c.star_violations == 0 for c in clients.values())
    pan_checks = []
    for name, client in clients.items():
        if client.counts_before_pan is not None:
            final = client.final_counts()
            pan_checks.append(final["MR"] == client.counts_before_pan["MR"])
            if client.spec.view_mode is ViewMode.PROJECTED:
                mr_peer = next((clients[n] for n in mr_names), None)
                if mr_peer is not None:
                    pan_checks.append(final["PROJECTED"] < mr_peer.final_counts()["MR"])
    checks["pan_semantics"] = all(pan_checks)  # vacuously true for pan-free scripts
    ok = all(checks.values())

    # Artifacts.
    (out / "scenario.json").write_text(cfg.to_json())
    (out / "relay_log.jsonl").write_text("\n".join(relay_log) + "\n")
    lines = log_lines(
        cfg.board,
        samples,
        sample_targets,
        intervals,
        events,
        annotations=annotations,
        duration_ms=duration_ms,
        cone_half_angle_deg=cfg.cone_half_angle_deg,
        min_contact_ms=cfg.min_contact_ms,
    )
    (out / "session.jsonl").write_text("\n".join(lines) + "\n")
    for name, text in snapshots.items():
        (out / "boards" / f"{name}.board.txt").write_text(text)
    (out / "metrics.json").write_text(_metrics_bytes(metrics))
    manifest = {
        "schema": RUN_SCHEMA,
        "seed": cfg.seed,
        "time_scale": cfg.time_scale,
        "tick_hz": cfg.tick_hz,
        "n_ticks": n_ticks,
        "duration_ms": duration_ms,
        "participants": [p.name for p in cfg.participants],
        "render_events_published": len(published_render_seqs),
        "gaze_samples": len(samples),
        "eye_contact_events": len(events),
        "checks": checks,
        "ok": ok,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return RunResult(ok=ok, checks=checks, metrics=metrics, out_dir=out, snapshots=snapshots)


def replay(artifact_dir: str | Path) -> tuple[bool, dict]:
    """Recompute metrics from the recorded gaze log and compare with the
    stored metrics.json.  Pure: reads artifacts, writes nothing."""
    from .gaze import analyze_log

    out = Path(artifact_dir)
    manifest_path = out / "manifest.json"
    if not manifest_path.exists():
        raise MissingArtifact(str(manifest_path))
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("schema") != RUN_SCHEMA:
        raise SchemaMismatch(f"unsupported run schema {manifest.get('schema')!r}")
    for name in ("session.jsonl", "metrics.json"):
        if not (out / name).exists():
            raise MissingArtifact(str(out / name))
    recomputed = analyze_log(out / "session.jsonl")
    stored = (out / "metrics.json").read_text()
    return _metrics_bytes(recomputed) == stored, recomputed
