"""The shared content plane: render commands, sketch/link graph, pan.

The behavior server drives every client's board through a stream of render
commands, each carried as one EVENT flake labeled ``render`` whose BYTES
payload holds the compact binary encoding below (op byte, sketch id u32 BE,
op-specific body; strings u16-length-prefixed UTF-8, floats binary32 BE).
Commands are only legal between BEGIN_FRAME and END_FRAME; clients observe
state at END_FRAME boundaries, never mid-frame.

PAN shifts the whole content layer by an offset and deletes nothing: in MR
view mode everything stays reachable, in PROJECTED mode items outside the
board extents clip away.
"""

from __future__ import annotations

import copy
import math
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum

from .geometry import Vec3, vadd
from .session import BoardPlane

RENDER_LABEL = "render"
INPUT_LABEL = "input"

IDENTITY_16 = (
    1.0, 0.0, 0.0, 0.0,
    0.0, 1.0, 0.0, 0.0,
    0.0, 0.0, 1.0, 0.0,
    0.0, 0.0, 0.0, 1.0,
)


class BoardError(Exception):
    pass


class UnknownSketch(BoardError):
    pass


class DuplicateSketch(BoardError):
    pass


class DanglingLink(BoardError):
    pass


class OutOfFrameCommand(BoardError):
    pass


class MalformedCommand(BoardError):
    pass


def _q32(x: float) -> float:
    return struct.unpack(">f", struct.pack(">f", x))[0]


class Op(IntEnum):
    BEGIN_FRAME = 0x01
    CREATE_SKETCH = 0x02
    STROKE = 0x03
    TEXT = 0x04
    SET_TRANSFORM = 0x05
    LINK = 0x06
    SET_VALUE = 0x07
    CURSOR = 0x08
    PAN = 0x09
    DELETE_SKETCH = 0x0A
    END_FRAME = 0x0B


class ViewMode(Enum):
    PROJECTED = "PROJECTED"
    MR = "MR"


@dataclass(frozen=True)
class RenderCommand:
    op: Op
    sketch_id: int = 0
    frame_no: int = 0
    kind: str = ""
    color: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    width: float = 0.01
    points: tuple[Vec3, ...] = ()
    text: str = ""
    anchor: Vec3 = (0.0, 0.0, 0.0)
    height: float = 0.1
    matrix: tuple[float, ...] = IDENTITY_16
    from_id: int = 0
    to_id: int = 0
    value: float = 0.0
    vec: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        # Float fields travel as binary32; quantize at construction so a
        # command always equals its own wire round-trip and all peers hold
        # identical board state.
        q = _q32
        object.__setattr__(self, "color", tuple(q(c) for c in self.color))
        object.__setattr__(self, "width", q(self.width))
        object.__setattr__(self, "points", tuple(tuple(q(c) for c in p) for p in self.points))
        object.__setattr__(self, "anchor", tuple(q(c) for c in self.anchor))
        object.__setattr__(self, "height", q(self.height))
        object.__setattr__(self, "matrix", tuple(q(c) for c in self.matrix))
        object.__setattr__(self, "value", q(self.value))
        object.__setattr__(self, "vec", tuple(q(c) for c in self.vec))


def begin_frame(n: int) -> RenderCommand:
    return RenderCommand(Op.BEGIN_FRAME, frame_no=n)


def end_frame(n: int) -> RenderCommand:
    return RenderCommand(Op.END_FRAME, frame_no=n)


def create_sketch(sketch_id: int, kind: str) -> RenderCommand:
    if sketch_id == 0:
        raise MalformedCommand("sketch id 0 is reserved for board-global commands")
    return RenderCommand(Op.CREATE_SKETCH, sketch_id=sketch_id, kind=kind)


def delete_sketch(sketch_id: int) -> RenderCommand:
    return RenderCommand(Op.DELETE_SKETCH, sketch_id=sketch_id)


def stroke(sketch_id: int, points, color=(1.0, 1.0, 1.0, 1.0), width=0.01) -> RenderCommand:
    pts = tuple(tuple(p) for p in points)
    if len(pts) < 2:
        raise MalformedCommand("stroke needs at least two points")
    return RenderCommand(Op.STROKE, sketch_id=sketch_id, points=pts, color=tuple(color), width=width)


def text(sketch_id: int, s: str, anchor: Vec3, height: float = 0.1) -> RenderCommand:
    return RenderCommand(Op.TEXT, sketch_id=sketch_id, text=s, anchor=tuple(anchor), height=height)


def set_transform(sketch_id: int, matrix) -> RenderCommand:
    m = tuple(float(x) for x in matrix)
    if len(m) != 16 or not all(math.isfinite(x) for x in m):
        raise MalformedCommand("transform must be 16 finite floats")
    return RenderCommand(Op.SET_TRANSFORM, sketch_id=sketch_id, matrix=m)


def link(from_id: int, to_id: int) -> RenderCommand:
    return RenderCommand(Op.LINK, sketch_id=from_id, from_id=from_id, to_id=to_id)


def set_value(sketch_id: int, value: float) -> RenderCommand:
    return RenderCommand(Op.SET_VALUE, sketch_id=sketch_id, value=float(value))


def cursor(pos: Vec3) -> RenderCommand:
    return RenderCommand(Op.CURSOR, vec=tuple(pos))


def pan(delta: Vec3) -> RenderCommand:
    return RenderCommand(Op.PAN, vec=tuple(delta))


# ---------------------------------------------------------------------------
# binary codec (payload body of `render` / `input` flakes)
# ---------------------------------------------------------------------------


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise MalformedCommand("string too long for command encoding")
    return struct.pack(">H", len(raw)) + raw


def encode_command(c: RenderCommand) -> bytes:
    out = [struct.pack(">BI", c.op, c.sketch_id)]
    if c.op in (Op.BEGIN_FRAME, Op.END_FRAME):
        out.append(struct.pack(">I", c.frame_no))
    elif c.op is Op.CREATE_SKETCH:
        out.append(_pack_str(c.kind))
    elif c.op is Op.STROKE:
        out.append(struct.pack(">4f", *c.color))
        out.append(struct.pack(">f", c.width))
        out.append(struct.pack(">I", len(c.points)))
        flat = [x for p in c.points for x in p]
        out.append(struct.pack(f">{len(flat)}f", *flat))
    elif c.op is Op.TEXT:
        out.append(_pack_str(c.text))
        out.append(struct.pack(">3f", *c.anchor))
        out.append(struct.pack(">f", c.height))
    elif c.op is Op.SET_TRANSFORM:
        out.append(struct.pack(">16f", *c.matrix))
    elif c.op is Op.LINK:
        out.append(struct.pack(">II", c.from_id, c.to_id))
    elif c.op is Op.SET_VALUE:
        out.append(struct.pack(">f", c.value))
    elif c.op in (Op.CURSOR, Op.PAN):
        out.append(struct.pack(">3f", *c.vec))
    # DELETE_SKETCH carries no body.
    return b"".join(out)


def _f32s(vals):
    return tuple(struct.unpack(f">{len(vals)}f", struct.pack(f">{len(vals)}f", *vals)))


def decode_command(data: bytes) -> RenderCommand:
    try:
        op_byte, sketch_id = struct.unpack_from(">BI", data, 0)
        op = Op(op_byte)
        off = 5
        if op in (Op.BEGIN_FRAME, Op.END_FRAME):
            (n,) = struct.unpack_from(">I", data, off)
            off += 4
            cmd = RenderCommand(op, sketch_id=sketch_id, frame_no=n)
        elif op is Op.CREATE_SKETCH:
            (n,) = struct.unpack_from(">H", data, off)
            off += 2
            kind = data[off : off + n].decode("utf-8")
            if len(data[off : off + n]) != n:
                raise MalformedCommand("truncated kind")
            off += n
            cmd = RenderCommand(op, sketch_id=sketch_id, kind=kind)
        elif op is Op.STROKE:
            color = struct.unpack_from(">4f", data, off)
            off += 16
            (width,) = struct.unpack_from(">f", data, off)
            off += 4
            (count,) = struct.unpack_from(">I", data, off)
            off += 4
            flat = struct.unpack_from(f">{count * 3}f", data, off)
            off += count * 12
            pts = tuple(flat[i * 3 : i * 3 + 3] for i in range(count))
            if len(pts) < 2:
                raise MalformedCommand("stroke needs at least two points")
            cmd = RenderCommand(op, sketch_id=sketch_id, color=color, width=width, points=pts)
        elif op is Op.TEXT:
            (n,) = struct.unpack_from(">H", data, off)
            off += 2
            s = data[off : off + n].decode("utf-8")
            if len(data[off : off + n]) != n:
                raise MalformedCommand("truncated text")
            off += n
            anchor = struct.unpack_from(">3f", data, off)
            off += 12
            (height,) = struct.unpack_from(">f", data, off)
            off += 4
            cmd = RenderCommand(op, sketch_id=sketch_id, text=s, anchor=anchor, height=height)
        elif op is Op.SET_TRANSFORM:
            m = struct.unpack_from(">16f", data, off)
            off += 64
            if not all(math.isfinite(x) for x in m):
                raise MalformedCommand("non-finite transform")
            cmd = RenderCommand(op, sketch_id=sketch_id, matrix=m)
        elif op is Op.LINK:
            a, b = struct.unpack_from(">II", data, off)
            off += 8
            cmd = RenderCommand(op, sketch_id=sketch_id, from_id=a, to_id=b)
        elif op is Op.SET_VALUE:
            (v,) = struct.unpack_from(">f", data, off)
            off += 4
            cmd = RenderCommand(op, sketch_id=sketch_id, value=v)
        elif op in (Op.CURSOR, Op.PAN):
            vec = struct.unpack_from(">3f", data, off)
            off += 12
            cmd = RenderCommand(op, sketch_id=sketch_id, vec=vec)
        else:  # DELETE_SKETCH
            cmd = RenderCommand(op, sketch_id=sketch_id)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise MalformedCommand(str(exc)) from exc
    if off != len(data):
        raise MalformedCommand(f"trailing bytes after {op.name}")
    return cmd


# ---------------------------------------------------------------------------
# board state
# ---------------------------------------------------------------------------


@dataclass
class Sketch:
    kind: str = ""
    strokes: list = field(default_factory=list)  # (color, width, points)
    texts: list = field(default_factory=list)  # (text, anchor, height)
    transform: tuple[float, ...] = IDENTITY_16
    value: float | None = None


@dataclass
class BoardContent:
    sketches: dict[int, Sketch] = field(default_factory=dict)
    links: list[tuple[int, int]] = field(default_factory=list)
    pan_offset: Vec3 = (0.0, 0.0, 0.0)
    cursor: Vec3 | None = None
    frame_no: int = 0


def _transform_point(m: tuple[float, ...], p: Vec3) -> Vec3:
    # Column-major homogeneous transform applied to (p, 1).
    x, y, z = p
    return (
        m[0] * x + m[4] * y + m[8] * z + m[12],
        m[1] * x + m[5] * y + m[9] * z + m[13],
        m[2] * x + m[6] * y + m[10] * z + m[14],
    )


@dataclass(frozen=True)
class DrawItem:
    """One drawable primitive with world-space (transform + pan) points."""

    sketch_id: int
    kind: str  # "stroke" | "text"
    points: tuple[Vec3, ...]
    payload: tuple


def content_items(content: BoardContent) -> list[DrawItem]:
    items: list[DrawItem] = []
    for sid in sorted(content.sketches):
        sk = content.sketches[sid]
        for color, width, pts in sk.strokes:
            world = tuple(vadd(_transform_point(sk.transform, p), content.pan_offset) for p in pts)
            items.append(DrawItem(sid, "stroke", world, (color, width)))
        for s, anchor, height in sk.texts:
            world = (vadd(_transform_point(sk.transform, anchor), content.pan_offset),)
            items.append(DrawItem(sid, "text", world, (s, height)))
    return items


def visible_content(content: BoardContent, board: BoardPlane, mode: ViewMode) -> list[DrawItem]:
    """Drawable items under the view mode.

    MR is the infinite screen: every item, at stored position + pan offset.
    PROJECTED keeps only items with at least one point inside the board
    extents rectangle.
    """
    items = content_items(content)
    if mode is ViewMode.MR:
        return items
    u, v = board.plane.basis()
    hw, hh = board.extents
    ox, oy, oz = board.origin

    def inside(p: Vec3) -> bool:
        dx = (p[0] - ox, p[1] - oy, p[2] - oz)
        pu = dx[0] * u[0] + dx[1] * u[1] + dx[2] * u[2]
        pv = dx[0] * v[0] + dx[1] * v[1] + dx[2] * v[2]
        return abs(pu) <= hw and abs(pv) <= hh

    return [it for it in items if any(inside(p) for p in it.points)]


class Board:
    """Single-writer board state machine fed by decoded render commands.

    Mutations happen on a working copy; ``committed`` advances only at
    END_FRAME so readers never observe torn frames.
    """

    def __init__(self) -> None:
        self.current = BoardContent()
        self.committed = BoardContent()
        self.in_frame = False

    def apply(self, c: RenderCommand) -> None:
        cur = self.current
        if not self.in_frame:
            if c.op is not Op.BEGIN_FRAME:
                raise OutOfFrameCommand(f"{c.op.name} outside BEGIN_FRAME/END_FRAME")
            self.in_frame = True
            cur.frame_no = c.frame_no
            return
        if c.op is Op.BEGIN_FRAME:
            raise OutOfFrameCommand("nested BEGIN_FRAME")
        if c.op is Op.END_FRAME:
            self.in_frame = False
            self.committed = copy.deepcopy(cur)
            return
        if c.op is Op.CREATE_SKETCH:
            if c.sketch_id in cur.sketches:
                raise DuplicateSketch(str(c.sketch_id))
            if c.sketch_id == 0:
                raise MalformedCommand("sketch id 0 is reserved")
            cur.sketches[c.sketch_id] = Sketch(kind=c.kind)
        elif c.op is Op.DELETE_SKETCH:
            if c.sketch_id not in cur.sketches:
                raise UnknownSketch(str(c.sketch_id))
            del cur.sketches[c.sketch_id]
            cur.links = [(a, b) for a, b in cur.links if a != c.sketch_id and b != c.sketch_id]
        elif c.op is Op.STROKE:
            sk = cur.sketches.get(c.sketch_id)
            if sk is None:
                raise UnknownSketch(str(c.sketch_id))
            if len(c.points) < 2:
                raise MalformedCommand("stroke needs at least two points")
            sk.strokes.append((c.color, c.width, c.points))
        elif c.op is Op.TEXT:
            sk = cur.sketches.get(c.sketch_id)
            if sk is None:
                raise UnknownSketch(str(c.sketch_id))
            sk.texts.append((c.text, c.anchor, c.height))
        elif c.op is Op.SET_TRANSFORM:
            sk = cur.sketches.get(c.sketch_id)
            if sk is None:
                raise UnknownSketch(str(c.sketch_id))
            if not all(math.isfinite(x) for x in c.matrix):
                raise MalformedCommand("non-finite transform")
            sk.transform = c.matrix
        elif c.op is Op.LINK:
            if c.from_id not in cur.sketches or c.to_id not in cur.sketches:
                raise DanglingLink(f"{c.from_id}->{c.to_id}")
            if (c.from_id, c.to_id) not in cur.links:
                cur.links.append((c.from_id, c.to_id))
        elif c.op is Op.SET_VALUE:
            sk = cur.sketches.get(c.sketch_id)
            if sk is None:
                raise UnknownSketch(str(c.sketch_id))
            sk.value = c.value
        elif c.op is Op.CURSOR:
            cur.cursor = c.vec
        elif c.op is Op.PAN:
            cur.pan_offset = vadd(cur.pan_offset, c.vec)
        else:  # pragma: no cover - enum is exhaustive
            raise MalformedCommand(c.op.name)


# ---------------------------------------------------------------------------
# canonical snapshot
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    """Fixed 6-significant-digit float formatting; -0 normalizes to 0."""
    if x == 0:
        x = 0.0
    s = format(float(x), ".6g")
    return "0" if s == "-0" else s


def _fmt_vec(v) -> str:
    return ",".join(_fmt(c) for c in v)


def snapshot(content: BoardContent) -> str:
    """Deterministic, byte-stable serialization for golden-file comparison.

    Sketch ids sorted ascending; all floats at 6 significant digits.
    """
    lines = ["board v1"]
    lines.append(f"frame {content.frame_no}")
    lines.append(f"pan {_fmt_vec(content.pan_offset)}")
    lines.append(f"cursor {_fmt_vec(content.cursor) if content.cursor is not None else 'none'}")
    for sid in sorted(content.sketches):
        sk = content.sketches[sid]
        val = _fmt(sk.value) if sk.value is not None else "none"
        lines.append(f"sketch {sid} kind={sk.kind} value={val}")
        lines.append(f"  transform {_fmt_vec(sk.transform)}")
        for color, width, pts in sk.strokes:
            pts_s = " ".join(_fmt_vec(p) for p in pts)
            lines.append(f"  stroke color={_fmt_vec(color)} width={_fmt(width)} points={pts_s}")
        for s, anchor, height in sk.texts:
            lines.append(f"  text {s!r} anchor={_fmt_vec(anchor)} height={_fmt(height)}")
    for a, b in sorted(content.links):
        lines.append(f"link {a}->{b}")
    return "\n".join(lines) + "\n"
