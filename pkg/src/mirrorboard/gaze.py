"""Gaze analytics: board intersections, focus intervals, eye contact.

Per subject we classify each gaze sample against the head positions of the
users that subject can actually see (already mirrored by the session), plus
the board plane.  Consecutive samples with an identical focus set merge
into intervals; an empty set yields an explicit NONE interval, and a
parallel BOARD interval runs whenever the gaze ray meets the board.  All
intervals are half-open [t_start, t_end) in integer milliseconds.

Eye contact between two users is a maximal span where each focuses the
other simultaneously, kept when it lasts at least ``min_duration_ms``.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from .geometry import Vec3, vnorm, vsub
from .session import BoardPlane

NONE_TARGET = "NONE"
BOARD_TARGET = "BOARD"

DEFAULT_CONE_DEG = 10.0
DEFAULT_MIN_CONTACT_MS = 100
DEFAULT_GAP_MS = 500


class GazeError(Exception):
    pass


class UnsortedSamples(GazeError):
    pass


@dataclass(frozen=True)
class GazeSample:
    user: str
    t: int  # ms
    gaze_origin: Vec3
    gaze_dir: Vec3

    def __post_init__(self) -> None:
        n = vnorm(self.gaze_dir)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"gaze_dir must be unit length (|d|={n!r})")


@dataclass(frozen=True)
class FocusInterval:
    subject: str
    target: str  # user name, NONE, or BOARD
    t_start: int
    t_end: int

    def __post_init__(self) -> None:
        if not self.t_start < self.t_end:
            raise ValueError("interval requires t_start < t_end")

    @property
    def duration(self) -> int:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class EyeContactEvent:
    users: tuple[str, str]  # sorted pair
    t_start: int
    t_end: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "users", tuple(sorted(self.users)))

    @property
    def duration(self) -> int:
        return self.t_end - self.t_start


class FocusContext(Protocol):
    """What build_intervals needs from the session: the board plane and, per
    subject and time, the visible users' (mirrored) head positions."""

    board: BoardPlane

    def targets_for(self, subject: str, t: int) -> Mapping[str, Vec3]: ...


@dataclass
class StaticContext:
    """FocusContext with time-invariant targets; also used by log replay."""

    board: BoardPlane
    targets: Mapping[str, Mapping[str, Vec3]]  # subject -> user -> head

    def targets_for(self, subject: str, t: int) -> Mapping[str, Vec3]:
        return self.targets.get(subject, {})


def intersect_board(s: GazeSample, board: BoardPlane) -> Vec3 | None:
    """Forward ray-plane intersection of the gaze ray with the board, or
    None when the ray is parallel to the plane or points away from it."""
    return board.plane.ray_intersect(s.gaze_origin, s.gaze_dir)


def classify_focus(
    s: GazeSample,
    others: Mapping[str, Vec3],
    cone_half_angle_deg: float = DEFAULT_CONE_DEG,
) -> frozenset[str]:
    """Users whose head lies within the gaze cone.

    ``others`` must already be restricted to the users visible to the
    subject (session rules) and hold the positions the subject actually
    sees, i.e. mirrored ones.
    """
    if not 0.0 < cone_half_angle_deg < 45.0:
        raise ValueError("cone_half_angle_deg must be in (0, 45)")
    cos_limit = math.cos(math.radians(cone_half_angle_deg))
    hit = set()
    for user, head in others.items():
        to_head = vsub(head, s.gaze_origin)
        dist = vnorm(to_head)
        if dist < 1e-12:
            continue
        cos_angle = (
            to_head[0] * s.gaze_dir[0] + to_head[1] * s.gaze_dir[1] + to_head[2] * s.gaze_dir[2]
        ) / dist
        if cos_angle >= cos_limit - 1e-15:
            hit.add(user)
    return frozenset(hit)


def _runs(labels: list, times: list[int]) -> list[tuple[object, int, int]]:
    """Run-length encode a label sequence over sample times.

    Returns (label, t_start, t_end) with t_end at the first sample of the
    next run, or the final sample time for the last run (which is dropped
    when zero-length).
    """
    out = []
    i = 0
    n = len(labels)
    while i < n:
        j = i
        while j + 1 < n and labels[j + 1] == labels[i]:
            j += 1
        t_start = times[i]
        t_end = times[j + 1] if j + 1 < n else times[j]
        if t_end > t_start:
            out.append((labels[i], t_start, t_end))
        i = j + 1
    return out


def build_intervals(
    samples: Iterable[GazeSample],
    context: FocusContext,
    cone_half_angle_deg: float = DEFAULT_CONE_DEG,
    gap_ms: int = DEFAULT_GAP_MS,
) -> list[FocusInterval]:
    """Fold gaze samples into focus intervals.

    Per subject, samples must be time-sorted (strictly increasing).  A gap
    longer than ``gap_ms`` between consecutive samples closes all open
    intervals at the earlier sample and starts fresh ones at the later.
    """
    by_user: dict[str, list[GazeSample]] = {}
    for s in samples:
        by_user.setdefault(s.user, []).append(s)
    intervals: list[FocusInterval] = []
    for user in sorted(by_user):
        seq = by_user[user]
        for a, b in zip(seq, seq[1:]):
            if b.t <= a.t:
                raise UnsortedSamples(f"samples for {user!r} not strictly increasing at t={b.t}")
        # Split into contiguous segments at dropout gaps.
        segments: list[list[GazeSample]] = [[seq[0]]] if seq else []
        for s in seq[1:]:
            if s.t - segments[-1][-1].t > gap_ms:
                segments.append([s])
            else:
                segments[-1].append(s)
        for seg in segments:
            times = [s.t for s in seg]
            focus_sets = [
                classify_focus(s, context.targets_for(user, s.t), cone_half_angle_deg)
                for s in seg
            ]
            board_hits = [intersect_board(s, context.board) is not None for s in seg]
            for label, t0, t1 in _runs(focus_sets, times):
                if label:
                    for target in sorted(label):
                        intervals.append(FocusInterval(user, target, t0, t1))
                else:
                    intervals.append(FocusInterval(user, NONE_TARGET, t0, t1))
            for hit, t0, t1 in _runs(board_hits, times):
                if hit:
                    intervals.append(FocusInterval(user, BOARD_TARGET, t0, t1))
    return intervals


def _merged_spans(intervals: Iterable[FocusInterval]) -> list[tuple[int, int]]:
    """Sorted union of [start, end) spans with overlapping/touching merged."""
    spans = sorted((iv.t_start, iv.t_end) for iv in intervals)
    out: list[tuple[int, int]] = []
    for s, e in spans:
        if out and s <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], e))
        else:
            out.append((s, e))
    return out


def detect_eye_contact(
    intervals: Sequence[FocusInterval],
    min_duration_ms: int = DEFAULT_MIN_CONTACT_MS,
) -> list[EyeContactEvent]:
    """Mutual-focus components per user pair, at least min_duration_ms long."""
    directed: dict[tuple[str, str], list[FocusInterval]] = {}
    for iv in intervals:
        if iv.target in (NONE_TARGET, BOARD_TARGET) or iv.target == iv.subject:
            continue
        directed.setdefault((iv.subject, iv.target), []).append(iv)
    events: list[EyeContactEvent] = []
    for a, b in sorted(k for k in directed if k[0] < k[1]):
        back = directed.get((b, a))
        if not back:
            continue
        sa = _merged_spans(directed[(a, b)])
        sb = _merged_spans(back)
        i = j = 0
        while i < len(sa) and j < len(sb):
            s = max(sa[i][0], sb[j][0])
            e = min(sa[i][1], sb[j][1])
            if e - s >= min_duration_ms:
                events.append(EyeContactEvent((a, b), s, e))
            if sa[i][1] <= sb[j][1]:
                i += 1
            else:
                j += 1
    events.sort(key=lambda ev: (ev.t_start, ev.users))
    return events


def _segment_categories(ivs: Sequence[FocusInterval]) -> list[tuple[int, int, object]]:
    """Timeline of (start, end, category) segments for one subject.

    Category precedence per instant: named target set > BOARD > NONE;
    uncovered time yields no segment (dropout).
    """
    cuts = sorted({t for iv in ivs for t in (iv.t_start, iv.t_end)})
    segments = []
    for s, e in zip(cuts, cuts[1:]):
        named = frozenset(
            iv.target
            for iv in ivs
            if iv.target not in (NONE_TARGET, BOARD_TARGET) and iv.t_start <= s and e <= iv.t_end
        )
        if named:
            cat: object = named
        elif any(
            iv.target == BOARD_TARGET and iv.t_start <= s and e <= iv.t_end for iv in ivs
        ):
            cat = BOARD_TARGET
        elif any(
            iv.target == NONE_TARGET and iv.t_start <= s and e <= iv.t_end for iv in ivs
        ):
            cat = NONE_TARGET
        else:
            continue
        segments.append((s, e, cat))
    return segments


def summarize(
    intervals: Sequence[FocusInterval],
    events: Sequence[EyeContactEvent],
    duration_ms: int,
) -> dict:
    """Per-user metrics: eye-contact count/duration, focus-time fractions,
    and focus-shift count (touching timeline boundaries where the focus
    category changes)."""
    users = sorted({iv.subject for iv in intervals} | {u for ev in events for u in ev.users})
    per_user = {}
    for u in users:
        mine = [iv for iv in intervals if iv.subject == u]
        contact = [ev for ev in events if u in ev.users]
        focus_ms: dict[str, int] = {}
        for iv in mine:
            focus_ms[iv.target] = focus_ms.get(iv.target, 0) + iv.duration
        segments = _segment_categories(mine)
        shifts = sum(
            1
            for (s0, e0, c0), (s1, e1, c1) in zip(segments, segments[1:])
            if e0 == s1 and c0 != c1
        )
        per_user[u] = {
            "eye_contact_count": len(contact),
            "eye_contact_ms": sum(ev.duration for ev in contact),
            "focus_ms": dict(sorted(focus_ms.items())),
            "focus_fraction": {
                k: (v / duration_ms if duration_ms > 0 else 0.0)
                for k, v in sorted(focus_ms.items())
            },
            "focus_shift_count": shifts,
        }
    return {
        "duration_ms": duration_ms,
        "eye_contact_total": len(events),
        "per_user": per_user,
    }


# ---------------------------------------------------------------------------
# JSON-lines gaze log
# ---------------------------------------------------------------------------

LOG_SCHEMA = "mirrorboard-gaze-v1"


def _floats(v):
    # Full-precision floats: repr round-trips exactly, so replaying the log
    # reproduces the original classification bit for bit.
    return [float(c) for c in v]


def log_lines(
    board: BoardPlane,
    samples: Sequence[GazeSample],
    sample_targets: Mapping[tuple[str, int], Mapping[str, Vec3]],
    intervals: Sequence[FocusInterval],
    events: Sequence[EyeContactEvent],
    annotations: Sequence[dict] = (),
    duration_ms: int = 0,
    cone_half_angle_deg: float = DEFAULT_CONE_DEG,
    min_contact_ms: int = DEFAULT_MIN_CONTACT_MS,
) -> list[str]:
    """Serialize one session's gaze records: a header line, then one JSON
    object per sample (with the target heads it was classified against),
    interval, eye-contact event, and annotation."""
    header = {
        "type": "header",
        "schema": LOG_SCHEMA,
        "board": {
            "origin": _floats(board.origin),
            "normal": _floats(board.normal),
            "extents": _floats(board.extents),
        },
        "duration_ms": duration_ms,
        "cone_half_angle_deg": cone_half_angle_deg,
        "min_contact_ms": min_contact_ms,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for s in samples:
        targets = sample_targets.get((s.user, s.t), {})
        lines.append(
            json.dumps(
                {
                    "type": "sample",
                    "user": s.user,
                    "t": s.t,
                    "origin": _floats(s.gaze_origin),
                    "dir": list(s.gaze_dir),
                    "targets": {u: _floats(p) for u, p in sorted(targets.items())},
                },
                sort_keys=True,
            )
        )
    for note in annotations:
        lines.append(json.dumps({"type": "annotation", **note}, sort_keys=True))
    for iv in intervals:
        lines.append(
            json.dumps(
                {
                    "type": "interval",
                    "subject": iv.subject,
                    "target": iv.target,
                    "t_start": iv.t_start,
                    "t_end": iv.t_end,
                },
                sort_keys=True,
            )
        )
    for ev in events:
        lines.append(
            json.dumps(
                {
                    "type": "contact",
                    "users": list(ev.users),
                    "t_start": ev.t_start,
                    "t_end": ev.t_end,
                },
                sort_keys=True,
            )
        )
    return lines


@dataclass
class RecordedContext:
    """FocusContext rebuilt from a gaze log's per-sample target records."""

    board: BoardPlane
    by_sample: dict[tuple[str, int], dict[str, Vec3]]

    def targets_for(self, subject: str, t: int) -> Mapping[str, Vec3]:
        return self.by_sample.get((subject, t), {})


def read_log(path: str | Path) -> tuple[RecordedContext, list[GazeSample], dict]:
    """Parse a gaze log; returns (context, samples, header)."""
    samples: list[GazeSample] = []
    by_sample: dict[tuple[str, int], dict[str, Vec3]] = {}
    header: dict | None = None
    board: BoardPlane | None = None
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec["type"] == "header":
            if rec.get("schema") != LOG_SCHEMA:
                raise GazeError(f"unsupported gaze log schema {rec.get('schema')!r}")
            header = rec
            b = rec["board"]
            board = BoardPlane(tuple(b["origin"]), tuple(b["normal"]), tuple(b["extents"]))
        elif rec["type"] == "sample":
            s = GazeSample(rec["user"], int(rec["t"]), tuple(rec["origin"]), tuple(rec["dir"]))
            samples.append(s)
            by_sample[(s.user, s.t)] = {u: tuple(p) for u, p in rec["targets"].items()}
    if header is None or board is None:
        raise GazeError("gaze log has no header line")
    return RecordedContext(board, by_sample), samples, header


def analyze_log(
    path: str | Path,
    cone_half_angle_deg: float | None = None,
    min_contact_ms: int | None = None,
) -> dict:
    """Recompute intervals, events, and metrics from a gaze log's samples."""
    context, samples, header = read_log(path)
    cone = cone_half_angle_deg if cone_half_angle_deg is not None else header["cone_half_angle_deg"]
    min_ms = min_contact_ms if min_contact_ms is not None else header["min_contact_ms"]
    intervals = build_intervals(samples, context, cone)
    events = detect_eye_contact(intervals, min_ms)
    return summarize(intervals, events, header["duration_ms"])
