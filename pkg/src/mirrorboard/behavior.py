"""Scripted behavior server: sketch simulations and the matrix lesson.

This stands in for the live sketch engine.  It owns the sketch logic
(pendulum, xy plot, matrix cards, cube geometry, freehand ink), steps a
deterministic per-frame dataflow over sketch links, and translates a timed
lecture script into render-command flakes.  Client input (strokes, cursor,
pan) arrives as ``input`` flakes and is folded back into the render stream,
so the behavior server stays the single writer of board state.

Matrices are 4x4 homogeneous, column-major: element (row r, col c) sits at
index c*4 + r.  mat_mul(a, b) composes a after b (apply b first).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from . import board as bd
from .board import RENDER_LABEL, Op, RenderCommand
from .wire import DeliveryClass, Flake, Payload, PayloadTag

log = logging.getLogger(__name__)

Mat4 = tuple[float, ...]


class NonFiniteInput(ValueError):
    pass


def _check_finite(*vals: float) -> None:
    for v in vals:
        if not math.isfinite(v):
            raise NonFiniteInput(f"non-finite argument: {v!r}")


def mat_identity() -> Mat4:
    return bd.IDENTITY_16


def mat_translation(dx: float, dy: float, dz: float) -> Mat4:
    _check_finite(dx, dy, dz)
    return (
        1.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
        dx, dy, dz, 1.0,
    )


def mat_rotation_x(angle: float) -> Mat4:
    _check_finite(angle)
    c, s = math.cos(angle), math.sin(angle)
    return (
        1.0, 0.0, 0.0, 0.0,
        0.0, c, s, 0.0,
        0.0, -s, c, 0.0,
        0.0, 0.0, 0.0, 1.0,
    )


def mat_rotation_y(angle: float) -> Mat4:
    _check_finite(angle)
    c, s = math.cos(angle), math.sin(angle)
    return (
        c, 0.0, -s, 0.0,
        0.0, 1.0, 0.0, 0.0,
        s, 0.0, c, 0.0,
        0.0, 0.0, 0.0, 1.0,
    )


def mat_rotation_z(angle: float) -> Mat4:
    _check_finite(angle)
    c, s = math.cos(angle), math.sin(angle)
    return (
        c, s, 0.0, 0.0,
        -s, c, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    )


def mat_mul(a: Mat4, b: Mat4) -> Mat4:
    """Standard 4x4 product a.b: the composition applies b first, then a."""
    out = [0.0] * 16
    for c in range(4):
        for r in range(4):
            out[c * 4 + r] = (
                a[r] * b[c * 4]
                + a[4 + r] * b[c * 4 + 1]
                + a[8 + r] * b[c * 4 + 2]
                + a[12 + r] * b[c * 4 + 3]
            )
    return tuple(out)


def mat_apply(m: Mat4, v: tuple[float, float, float, float]) -> tuple[float, float, float, float]:
    x, y, z, w = v
    return (
        m[0] * x + m[4] * y + m[8] * z + m[12] * w,
        m[1] * x + m[5] * y + m[9] * z + m[13] * w,
        m[2] * x + m[6] * y + m[10] * z + m[14] * w,
        m[3] * x + m[7] * y + m[11] * z + m[15] * w,
    )


# ---------------------------------------------------------------------------
# pendulum
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PendulumState:
    theta0: float  # initial angle, radians
    omega: float  # angular frequency, rad/s
    t: float  # seconds since excitation

    def __post_init__(self) -> None:
        if not self.omega > 0:
            raise ValueError("omega must be positive")


def pendulum_value(s: PendulumState) -> float:
    """Small-angle closed form: theta(t) = theta0 * cos(omega * t)."""
    return s.theta0 * math.cos(s.omega * s.t)


# ---------------------------------------------------------------------------
# sketch simulations
# ---------------------------------------------------------------------------


class SketchSim:
    """One simulated sketch.  Subclasses override the bits they need.

    ``out_value`` is the value other sketches read through links; it is
    double-buffered: receives during a frame only become visible in the
    next frame's outputs.
    """

    kind = "sketch"

    def __init__(self, sketch_id: int) -> None:
        self.id = sketch_id
        self.out_value: object | None = None
        self._inbox: list[object] = []

    def receive(self, value: object) -> None:
        self._inbox.append(value)

    def step(self, t: float) -> None:
        """Advance intrinsic dynamics to absolute script time t (seconds)."""

    def end_frame(self) -> list[RenderCommand]:
        """Consume the inbox, publish the next out_value, emit commands."""
        self._inbox.clear()
        return []

    def spawn_commands(self, at: tuple[float, float, float]) -> list[RenderCommand]:
        """Render commands that create this sketch's initial geometry."""
        return [bd.create_sketch(self.id, self.kind), bd.set_transform(self.id, mat_translation(*at))]


class PendulumSim(SketchSim):
    kind = "pendulum"

    def __init__(self, sketch_id: int, omega: float = 2.0) -> None:
        super().__init__(sketch_id)
        self.omega = omega
        self.theta0 = 0.0
        self.excited_at = 0.0
        self.value: float = 0.0
        self.base_pos: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def excite(self, theta0: float, at_t: float) -> None:
        self.theta0 = max(-0.8, min(0.8, theta0))
        self.excited_at = at_t

    def step(self, t: float) -> None:
        if self.theta0 == 0.0:
            self.value = 0.0
        else:
            self.value = pendulum_value(
                PendulumState(self.theta0, self.omega, max(0.0, t - self.excited_at))
            )

    def end_frame(self) -> list[RenderCommand]:
        self._inbox.clear()
        changed = self.out_value != self.value
        self.out_value = self.value
        return [bd.set_value(self.id, self.value)] if changed else []

    def spawn_commands(self, at):
        cmds = super().spawn_commands(at)
        # Static pivot-and-bob glyph; the live angle shows as the value.
        cmds.append(bd.stroke(self.id, [(0.0, 0.25, 0.0), (0.0, -0.15, 0.0)], width=0.005))
        cmds.append(
            bd.stroke(
                self.id,
                [(0.0, -0.15, 0.0), (0.05, -0.2, 0.0), (0.0, -0.25, 0.0), (-0.05, -0.2, 0.0), (0.0, -0.15, 0.0)],
                color=(0.9, 0.4, 0.3, 1.0),
                width=0.005,
            )
        )
        return cmds


class PlotSim(SketchSim):
    """xy plot: appends every float sample received over a link."""

    kind = "plot"

    def __init__(self, sketch_id: int) -> None:
        super().__init__(sketch_id)
        self.samples: list[float] = []

    def end_frame(self) -> list[RenderCommand]:
        cmds: list[RenderCommand] = []
        got = [v for v in self._inbox if isinstance(v, float)]
        self._inbox.clear()
        if got:
            self.samples.extend(got)
            self.out_value = got[-1]
            cmds.append(bd.set_value(self.id, got[-1]))
        return cmds

    def flush_curve(self) -> list[RenderCommand]:
        """Emit the accumulated curve as one stroke (local sketch space)."""
        if len(self.samples) < 2:
            return []
        n = len(self.samples)
        pts = [(i / (n - 1) * 0.8, 0.4 * v, 0.0) for i, v in enumerate(self.samples)]
        return [bd.stroke(self.id, pts, color=(0.3, 0.9, 0.5, 1.0), width=0.005)]

    def spawn_commands(self, at):
        cmds = super().spawn_commands(at)
        cmds.append(bd.stroke(self.id, [(0.0, 0.3, 0.0), (0.0, -0.3, 0.0), (0.8, -0.3, 0.0)], width=0.004))
        return cmds


class MatrixSim(SketchSim):
    """A matrix card: holds a 4x4 value and offers it to linked sketches."""

    kind = "matrix"

    def __init__(self, sketch_id: int, matrix: Mat4 | None = None, label: str = "") -> None:
        super().__init__(sketch_id)
        self.matrix = matrix if matrix is not None else mat_identity()
        self.label = label
        self.out_value = self.matrix

    def set_matrix(self, m: Mat4) -> None:
        self.matrix = m

    def end_frame(self) -> list[RenderCommand]:
        self._inbox.clear()
        self.out_value = self.matrix
        return []

    def spawn_commands(self, at):
        cmds = super().spawn_commands(at)
        if self.label:
            cmds.append(bd.text(self.id, self.label, (0.0, 0.0, 0.0), height=0.12))
        # Bracket glyphs around the card.
        cmds.append(bd.stroke(self.id, [(-0.35, 0.18, 0.0), (-0.4, 0.18, 0.0), (-0.4, -0.18, 0.0), (-0.35, -0.18, 0.0)], width=0.004))
        cmds.append(bd.stroke(self.id, [(0.35, 0.18, 0.0), (0.4, 0.18, 0.0), (0.4, -0.18, 0.0), (0.35, -0.18, 0.0)], width=0.004))
        return cmds


class CubeSim(SketchSim):
    """Unit cube wireframe; linked matrices compose into its transform."""

    kind = "cube"

    def __init__(self, sketch_id: int, base: tuple[float, float, float] = (0.0, 0.0, 0.0)) -> None:
        super().__init__(sketch_id)
        self.base = base
        self.applied: Mat4 = mat_identity()

    def end_frame(self) -> list[RenderCommand]:
        mats = [v for v in self._inbox if isinstance(v, tuple) and len(v) == 16]
        self._inbox.clear()
        if not mats:
            return []
        composed = mats[0]
        for m in mats[1:]:
            composed = mat_mul(composed, m)
        if composed == self.applied:
            return []
        self.applied = composed
        # Apply the composed lesson transform in the cube's local frame, then
        # place it at its base spot on the board.
        world = mat_mul(mat_translation(*self.base), composed)
        return [bd.set_transform(self.id, world)]

    def spawn_commands(self, at):
        self.base = at
        h = 0.3
        corners = {
            i: ((h if i & 1 else -h), (h if i & 2 else -h), (h if i & 4 else -h)) for i in range(8)
        }
        edges = [(a, b) for a in range(8) for b in range(a + 1, 8) if bin(a ^ b).count("1") == 1]
        cmds = [bd.create_sketch(self.id, self.kind), bd.set_transform(self.id, mat_translation(*at))]
        for a, b in edges:
            cmds.append(bd.stroke(self.id, [corners[a], corners[b]], color=(0.9, 0.8, 0.2, 1.0), width=0.006))
        return cmds


class CardSim(SketchSim):
    """Static text card (titles, captions)."""

    kind = "card"

    def __init__(self, sketch_id: int, label: str = "", height: float = 0.14) -> None:
        super().__init__(sketch_id)
        self.label = label
        self.height = height

    def spawn_commands(self, at):
        cmds = super().spawn_commands(at)
        if self.label:
            cmds.append(bd.text(self.id, self.label, (0.0, 0.0, 0.0), height=self.height))
        return cmds


class FreehandSim(SketchSim):
    """Accumulates raw ink strokes forwarded from client input."""

    kind = "freehand"


SKETCH_KINDS = {
    "pendulum": PendulumSim,
    "plot": PlotSim,
    "matrix": MatrixSim,
    "cube": CubeSim,
    "card": CardSim,
    "freehand": FreehandSim,
}


def propagate_links(
    sims: dict[int, SketchSim],
    links: list[tuple[int, int]],
    emit: list[RenderCommand] | None = None,
) -> dict[int, object]:
    """One synchronous dataflow step.

    Reads every source's pre-frame out_value (double buffer), delivers along
    links, then lets each sketch fold its inbox and publish the next output.
    Returns the new outputs; order-independent within the frame, and safe on
    cyclic graphs because values only move one hop per frame.  Render
    commands produced by the sketches are appended to ``emit`` if given.
    """
    outs = {sid: sim.out_value for sid, sim in sims.items()}
    for a, b in links:
        if a in sims and b in sims and outs.get(a) is not None:
            sims[b].receive(outs[a])
    emitted: dict[int, object] = {}
    for sid, sim in sims.items():
        cmds = sim.end_frame()
        if emit is not None:
            emit.extend(cmds)
        emitted[sid] = sim.out_value
    return emitted


# ---------------------------------------------------------------------------
# lecture scripts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Action:
    t: float  # seconds from lesson start, nondecreasing
    kind: str
    params: dict = field(default_factory=dict)


@dataclass
class LectureScript:
    actions: list[Action] = field(default_factory=list)

    def __post_init__(self) -> None:
        for prev, nxt in zip(self.actions, self.actions[1:]):
            if nxt.t < prev.t:
                raise ValueError("script timestamps must be nondecreasing")

    @property
    def duration(self) -> float:
        return self.actions[-1].t if self.actions else 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": 1,
                "actions": [{"t": a.t, "kind": a.kind, **a.params} for a in self.actions],
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "LectureScript":
        raw = json.loads(text)
        if raw.get("version") != 1:
            raise ValueError(f"unsupported script version {raw.get('version')!r}")
        actions = []
        for rec in raw["actions"]:
            rec = dict(rec)
            t = float(rec.pop("t"))
            kind = rec.pop("kind")
            actions.append(Action(t, kind, rec))
        return cls(actions)

    @classmethod
    def load(cls, path: str | Path) -> "LectureScript":
        return cls.from_json(Path(path).read_text())


def _mat_param(name: str, params: dict) -> Mat4:
    spec = params[name]
    if spec[0] == "T":
        return mat_translation(*spec[1:4])
    if spec[0] == "Rz":
        return mat_rotation_z(spec[1])
    if spec[0] == "Rx":
        return mat_rotation_x(spec[1])
    if spec[0] == "Ry":
        return mat_rotation_y(spec[1])
    if spec[0] == "mul":
        return mat_mul(_mat_param_from(spec[1]), _mat_param_from(spec[2]))
    raise ValueError(f"unknown matrix spec {spec!r}")


def _mat_param_from(spec) -> Mat4:
    return _mat_param("m", {"m": spec})


def generate_matrix_lesson() -> LectureScript:
    """The scripted transformation-matrix lecture, nominally ~10 minutes.

    Segment 1 warms up with a pendulum linked into an xy plot to show live
    dataflow.  Segment 2 applies a translation and a rotation card to a cube
    through links.  Segment 3 shows both composition orders side by side
    (they disagree, which is the point).  Segment 4 pans the finished board
    aside.  Cursor moves, gestures, and deictic remarks are interleaved
    throughout; gesture/say actions are annotations for the session log, not
    render traffic.
    """
    a: list[Action] = []
    add = lambda t, kind, **params: a.append(Action(float(t), kind, params))

    # --- segment 1: linked sketches warm-up (0..150 s)
    add(0, "create", id=1, sketch_kind="card", label="4x4 transforms", at=[0.0, 1.05, 0.0])
    add(4, "say", who="presenter", text="today: how matrices move geometry")
    add(8, "create", id=2, sketch_kind="pendulum", at=[-1.5, 0.45, 0.0])
    add(14, "create", id=3, sketch_kind="plot", at=[-0.4, 0.45, 0.0])
    add(20, "link", from_id=2, to_id=3)
    add(24, "cursor", at=[-1.5, 0.45, 0.0])
    add(26, "say", who="presenter", text="this sketch feeds its angle into that plot")
    add(28, "gesture", who="presenter", name="sweep")
    add(30, "excite", id=2, theta0=0.5)
    add(55, "flush_plot", id=3)
    add(58, "cursor", at=[-0.4, 0.45, 0.0])
    add(60, "say", who="presenter", text="here is the motion traced over time")

    # --- segment 2: translation and rotation applied to a cube (150..360 s)
    add(150, "create", id=4, sketch_kind="cube", at=[0.6, 0.35, 0.0])
    add(160, "create", id=5, sketch_kind="matrix", label="T(1,0,0)", m=["T", 1.0, 0.0, 0.0], at=[1.45, 0.9, 0.0])
    add(170, "cursor", at=[1.45, 0.9, 0.0])
    add(172, "say", who="presenter", text="a translation matrix: slide by one unit")
    add(178, "link", from_id=5, to_id=4)
    add(182, "gesture", who="presenter", name="point")
    add(200, "create", id=6, sketch_kind="matrix", label="Rz(90)", m=["Rz", math.pi / 2], at=[1.45, 0.55, 0.0])
    add(210, "cursor", at=[1.45, 0.55, 0.0])
    add(212, "say", who="presenter", text="and this one rotates a quarter turn")
    add(218, "link", from_id=6, to_id=4)
    add(230, "gesture", who="presenter", name="rotate-hand")

    # --- segment 3: composition order matters (360..540 s)
    add(360, "create", id=7, sketch_kind="cube", at=[-1.3, -0.55, 0.0])
    add(365, "create", id=8, sketch_kind="cube", at=[0.9, -0.55, 0.0])
    add(370, "create", id=9, sketch_kind="card", label="T.R", at=[-1.3, -1.0, 0.0])
    add(372, "create", id=10, sketch_kind="card", label="R.T", at=[0.9, -1.0, 0.0])
    add(380, "create", id=11, sketch_kind="matrix", label="T(1,0,0).Rz(90)",
        m=["mul", ["T", 1.0, 0.0, 0.0], ["Rz", math.pi / 2]], at=[-2.0, -1.0, 0.0])
    add(385, "link", from_id=11, to_id=7)
    add(395, "create", id=12, sketch_kind="matrix", label="Rz(90).T(1,0,0)",
        m=["mul", ["Rz", math.pi / 2], ["T", 1.0, 0.0, 0.0]], at=[1.8, -1.0, 0.0])
    add(400, "link", from_id=12, to_id=8)
    add(410, "cursor", at=[-1.3, -0.55, 0.0])
    add(412, "say", who="presenter", text="watch this cube: rotate first, then slide")
    add(420, "cursor", at=[0.9, -0.55, 0.0])
    add(422, "say", who="presenter", text="same two matrices, other order: it lands elsewhere")
    add(430, "gesture", who="presenter", name="compare")
    add(440, "say", who="presenter", text="matrix multiplication does not commute")

    # --- segment 4: pan the finished board aside (540..600 s)
    add(540, "create", id=13, sketch_kind="card", label="recap: order matters", at=[0.0, -1.15, 0.0])
    add(560, "say", who="presenter", text="let me slide all of this over to keep it around")
    add(565, "pan", delta=[-5.0, 0.0, 0.0])
    add(575, "cursor", at=[-4.4, 0.35, 0.0])
    add(580, "say", who="presenter", text="nothing was erased; it lives just off to the side")
    add(600, "end")
    return LectureScript(a)


# ---------------------------------------------------------------------------
# behavior server
# ---------------------------------------------------------------------------

ANNOTATION_KINDS = {"say", "gesture"}


@dataclass(frozen=True)
class Annotation:
    t_ms: int
    kind: str
    params: dict


class BehaviorServer:
    """Replays a lecture script as render flakes and folds client input back
    into the stream.  Driven by tick(); one call per relay tick."""

    def __init__(
        self,
        script: LectureScript,
        scope: str = "demo",
        origin: str = "behavior",
        time_scale: float = 1.0,
        emit_empty_frames: bool = False,
    ) -> None:
        if time_scale <= 0:
            raise ValueError("time_scale must be positive")
        self.script = script
        self.scope = scope
        self.origin = origin
        self.time_scale = time_scale
        self.emit_empty_frames = emit_empty_frames
        self.sims: dict[int, SketchSim] = {}
        self.links: list[tuple[int, int]] = []
        self.frame_no = 0
        self.seq = 0
        self._now = 0.0
        self._cursor_action = 0
        self._pending_input: list[RenderCommand] = []
        self._freehand_id = 900
        self._ink: dict[str, int] = {}
        self.finished = False

    @property
    def duration_s(self) -> float:
        """Compressed wall duration of the script."""
        return self.script.duration / self.time_scale

    # -- input ------------------------------------------------------------

    def handle_input(self, f: Flake) -> None:
        """Fold a client's ``input`` flake (stroke/cursor/pan) into the next
        frame.  Strokes land on a per-user freehand sketch unless they hit a
        pendulum, which treats them as an excitation gesture.

        This is the trust boundary for client traffic: malformed input is
        dropped, never propagated into the render stream."""
        if f.payload.tag is not PayloadTag.BYTES:
            log.warning("ignoring input from %s: payload tag %s", f.origin, f.payload.tag.name)
            return
        try:
            cmd = bd.decode_command(bytes(f.payload.data))
        except bd.MalformedCommand as exc:
            log.warning("ignoring malformed input from %s: %s", f.origin, exc)
            return
        if cmd.op is Op.STROKE:
            target = self._pendulum_near(cmd.points[0])
            if target is not None:
                swing = cmd.points[-1][1] - cmd.points[0][1]
                target.excite(theta0=swing, at_t=self._now)
                return
            sid = self._ink.get(f.origin)
            if sid is None:
                self._freehand_id += 1
                sid = self._freehand_id
                self._ink[f.origin] = sid
                sim = FreehandSim(sid)
                self.sims[sid] = sim
                self._pending_input.extend(sim.spawn_commands((0.0, 0.0, 0.0)))
            self._pending_input.append(
                bd.stroke(sid, cmd.points, color=cmd.color, width=cmd.width)
            )
        elif cmd.op is Op.CURSOR:
            self._pending_input.append(bd.cursor(cmd.vec))
        elif cmd.op is Op.PAN:
            self._pending_input.append(bd.pan(cmd.vec))
        # anything else from clients is ignored

    def _pendulum_near(self, p, radius: float = 0.3) -> PendulumSim | None:
        for sim in self.sims.values():
            if isinstance(sim, PendulumSim):
                dx = p[0] - sim.base_pos[0]
                dy = p[1] - sim.base_pos[1]
                if dx * dx + dy * dy <= radius * radius:
                    return sim
        return None

    # -- script actions ----------------------------------------------------

    def _apply_action(self, act: Action) -> list[RenderCommand]:
        p = act.params
        if act.kind == "create":
            sid = int(p["id"])
            sketch_kind = p["sketch_kind"]
            ctor = SKETCH_KINDS[sketch_kind]
            if sketch_kind == "matrix":
                sim = MatrixSim(sid, _mat_param("m", p) if "m" in p else mat_identity(), p.get("label", ""))
            elif sketch_kind == "card":
                sim = CardSim(sid, p.get("label", ""))
            else:
                sim = ctor(sid)
            at = tuple(p.get("at", (0.0, 0.0, 0.0)))
            if isinstance(sim, PendulumSim):
                sim.base_pos = at
            self.sims[sid] = sim
            return sim.spawn_commands(at)
        if act.kind == "delete":
            sid = int(p["id"])
            self.sims.pop(sid, None)
            self.links = [(x, y) for x, y in self.links if x != sid and y != sid]
            return [bd.delete_sketch(sid)]
        if act.kind == "link":
            a, b = int(p["from_id"]), int(p["to_id"])
            if (a, b) not in self.links:
                self.links.append((a, b))
            return [bd.link(a, b)]
        if act.kind == "excite":
            sim = self.sims[int(p["id"])]
            sim.excite(float(p["theta0"]), self._now)
            return []
        if act.kind == "flush_plot":
            sim = self.sims[int(p["id"])]
            return sim.flush_curve()
        if act.kind == "cursor":
            return [bd.cursor(tuple(p["at"]))]
        if act.kind == "pan":
            return [bd.pan(tuple(p["delta"]))]
        if act.kind == "set_value":
            return [bd.set_value(int(p["id"]), float(p["value"]))]
        if act.kind == "end":
            self.finished = True
            return []
        raise ValueError(f"unknown script action kind {act.kind!r}")

    # -- ticking ------------------------------------------------------------

    def tick(self, now_s: float) -> tuple[list[Flake], list[Annotation]]:
        """Advance to virtual time ``now_s`` (wall seconds since start).

        Returns (render flakes for this frame, annotations that fired).
        Actions fire when their compressed time t/time_scale has arrived.
        """
        self._now = now_s * self.time_scale  # script-time seconds
        annotations: list[Annotation] = []
        commands: list[RenderCommand] = list(self._pending_input)
        self._pending_input = []
        while self._cursor_action < len(self.script.actions):
            act = self.script.actions[self._cursor_action]
            if act.t > self._now:
                break
            self._cursor_action += 1
            if act.kind in ANNOTATION_KINDS:
                annotations.append(Annotation(int(round(now_s * 1000)), act.kind, act.params))
            else:
                commands.extend(self._apply_action(act))
        for sim in self.sims.values():
            sim.step(self._now)
        propagate_links(self.sims, self.links, emit=commands)
        if not commands and not self.emit_empty_frames:
            return [], annotations
        self.frame_no += 1
        framed = [bd.begin_frame(self.frame_no), *commands, bd.end_frame(self.frame_no)]
        flakes = [self._render_flake(c) for c in framed]
        return flakes, annotations

    def _render_flake(self, cmd: RenderCommand) -> Flake:
        self.seq += 1
        return Flake(
            scope=self.scope,
            label=RENDER_LABEL,
            origin=self.origin,
            delivery=DeliveryClass.EVENT,
            seq=self.seq,
            payload=Payload.raw(bd.encode_command(cmd)),
        )
