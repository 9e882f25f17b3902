"""Session model: roles, avatar poses, the face-to-face mirror, visibility.

All participants stand on the same side of the board in shared coordinates
(the side the board normal points toward); each client renders every remote
participant reflected across the board plane, so both parties appear to
face each other through the content while the content itself stays
non-reversed.  The reflection preserves where a gaze ray meets the board,
which is what makes mutual gaze work.

The reflected basis is left-handed; renderers rebuild their right vector as
forward x up after mirroring.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .geometry import Plane, Vec3, vdot, vnorm, vnormalize
from .wire import Flake, PayloadTag

UNIT_TOL = 1e-6

POSE_LABEL_PREFIX = "pose."
ROSTER_LABEL_PREFIX = "session.roster."


class SessionError(Exception):
    pass


class DegeneratePose(SessionError):
    """Pose basis is non-unit or non-orthogonal beyond tolerance."""


class UnknownUser(SessionError):
    pass


class MalformedPosePayload(SessionError):
    pass


class RoleKind(Enum):
    PRESENTER = "PRESENTER"
    AUDIENCE = "AUDIENCE"


@dataclass(frozen=True)
class BoardPlane:
    """The shared content plane.  ``normal`` points toward the presenter's
    side; ``extents`` are the projected-mode viewport half-sizes in meters."""

    origin: Vec3
    normal: Vec3
    extents: tuple[float, float] = (2.0, 1.25)

    def __post_init__(self) -> None:
        if abs(vnorm(self.normal) - 1.0) > 1e-9:
            raise ValueError("board normal must be unit length")
        if self.extents[0] <= 0 or self.extents[1] <= 0:
            raise ValueError("board extents must be positive")

    @property
    def plane(self) -> Plane:
        return Plane(self.origin, self.normal)


@dataclass(frozen=True)
class AvatarPose:
    """Head position, orientation basis, and gaze ray at a timestamp (ms)."""

    user: str
    t: int
    position: Vec3
    forward: Vec3
    up: Vec3
    gaze_origin: Vec3
    gaze_dir: Vec3

    def check_basis(self, tol: float = UNIT_TOL) -> None:
        for name, v in (("forward", self.forward), ("up", self.up), ("gaze_dir", self.gaze_dir)):
            if abs(vnorm(v) - 1.0) > tol:
                raise DegeneratePose(f"{name} is not unit length: |v|={vnorm(v)!r}")
        if abs(vdot(self.forward, self.up)) > tol:
            raise DegeneratePose("forward and up are not orthogonal")


def pose_at(
    user: str,
    t: int,
    position: Vec3,
    look_at: Vec3,
    up_hint: Vec3 = (0.0, 1.0, 0.0),
    gaze_at: Vec3 | None = None,
) -> AvatarPose:
    """Build a valid pose looking from ``position`` toward ``look_at``."""
    fwd = vnormalize(
        (look_at[0] - position[0], look_at[1] - position[1], look_at[2] - position[2])
    )
    # Gram-Schmidt the up hint against forward.
    d = vdot(up_hint, fwd)
    up = (up_hint[0] - d * fwd[0], up_hint[1] - d * fwd[1], up_hint[2] - d * fwd[2])
    up = vnormalize(up)
    target = gaze_at if gaze_at is not None else look_at
    gdir = vnormalize(
        (target[0] - position[0], target[1] - position[1], target[2] - position[2])
    )
    return AvatarPose(user, t, position, fwd, up, position, gdir)


def mirror_pose(p: AvatarPose, board: BoardPlane) -> AvatarPose:
    """Reflect a pose across the board plane.

    Positions reflect as x' = x - 2((x-o).n)n, directions as d' = d - 2(d.n)n;
    direction vectors are renormalized to unit length.  User and timestamp
    are unchanged.  Raises DegeneratePose when the input basis is invalid.
    """
    p.check_basis()
    plane = board.plane
    return replace(
        p,
        position=plane.reflect_point(p.position),
        forward=vnormalize(plane.reflect_dir(p.forward)),
        up=vnormalize(plane.reflect_dir(p.up)),
        gaze_origin=plane.reflect_point(p.gaze_origin),
        gaze_dir=vnormalize(plane.reflect_dir(p.gaze_dir)),
    )


@dataclass
class Participant:
    role: RoleKind
    pose: AvatarPose | None = None
    pose_seq: int = -1


@dataclass
class SessionState:
    """Single-writer session state; hand out ``snapshot()`` copies across
    concurrent contexts."""

    board: BoardPlane
    participants: dict[str, Participant] = field(default_factory=dict)
    pan_offset: Vec3 = (0.0, 0.0, 0.0)
    open_join: bool = True

    def presenter(self) -> str | None:
        for name, p in self.participants.items():
            if p.role is RoleKind.PRESENTER:
                return name
        return None

    def add_participant(self, user: str, role: RoleKind) -> None:
        if role is RoleKind.PRESENTER and self.presenter() not in (None, user):
            raise SessionError(f"session already has presenter {self.presenter()!r}")
        existing = self.participants.get(user)
        if existing is None:
            self.participants[user] = Participant(role)
        else:
            existing.role = role

    def set_role(self, user: str, role: RoleKind) -> None:
        self.add_participant(user, role)

    def snapshot(self) -> "SessionState":
        return SessionState(
            board=self.board,
            participants={
                u: Participant(p.role, p.pose, p.pose_seq) for u, p in self.participants.items()
            },
            pan_offset=self.pan_offset,
            open_join=self.open_join,
        )


def visible_avatars(state: SessionState, viewer: str) -> set[str]:
    """Who the viewer may see: the presenter sees all audience members, each
    audience member sees only the presenter.  Never contains the viewer."""
    me = state.participants.get(viewer)
    if me is None:
        raise UnknownUser(viewer)
    if me.role is RoleKind.PRESENTER:
        return {u for u, p in state.participants.items() if p.role is RoleKind.AUDIENCE}
    pres = state.presenter()
    return {pres} if pres is not None else set()


def render_poses(state: SessionState, viewer: str) -> dict[str, AvatarPose]:
    """Mirrored poses of the users visible to ``viewer`` (those with a pose).

    These are the positions at which remote avatars are rendered, and the
    head positions the gaze classifier measures against.
    """
    out: dict[str, AvatarPose] = {}
    for user in sorted(visible_avatars(state, viewer)):
        pose = state.participants[user].pose
        if pose is not None:
            out[user] = mirror_pose(pose, state.board)
    return out


def parse_pose_flake(f: Flake, now_ms: int) -> AvatarPose:
    """Decode a ``pose.<user>`` flake.

    Layouts (see docs/wire.md):
      VEC3 count=4: position, forward, up, gaze_dir; timestamp = receive time.
      VEC4 count=4: same vectors with position.w carrying the timestamp in ms
                    (session-relative); remaining w components are reserved 0.
    gaze_origin is the head position in both layouts.
    """
    if not f.label.startswith(POSE_LABEL_PREFIX) or len(f.label) <= len(POSE_LABEL_PREFIX):
        raise MalformedPosePayload(f"not a pose label: {f.label!r}")
    user = f.label[len(POSE_LABEL_PREFIX) :]
    p = f.payload
    if p.tag is PayloadTag.VEC3 and p.count == 4:
        pos, fwd, up, gdir = p.data
        t = now_ms
    elif p.tag is PayloadTag.VEC4 and p.count == 4:
        (px, py, pz, tw), (fx, fy, fz, _), (ux, uy, uz, _), (gx, gy, gz, _) = p.data
        pos, fwd, up, gdir = (px, py, pz), (fx, fy, fz), (ux, uy, uz), (gx, gy, gz)
        t = int(round(tw))
    else:
        raise MalformedPosePayload(
            f"pose payload must be VEC3 or VEC4 count=4, got {p.tag.name} count={p.count}"
        )
    for v in (fwd, up, gdir):
        if not all(math.isfinite(c) for c in v) or vnorm(v) == 0.0:
            raise MalformedPosePayload("zero or non-finite direction vector")
    # Re-unitize after the wire's binary32 quantization.
    return AvatarPose(user, t, pos, vnormalize(fwd), vnormalize(up), pos, vnormalize(gdir))


def apply_pose_update(state: SessionState, f: Flake, now_ms: int | None = None) -> SessionState:
    """Fold a pose flake into the session; stale updates are ignored.

    Freshness: newer (t, seq) wins lexicographically.  Unknown users
    auto-register as AUDIENCE when the session is in open-join mode.
    """
    if now_ms is None:
        now_ms = f.seq
    pose = parse_pose_flake(f, now_ms)
    part = state.participants.get(pose.user)
    if part is None:
        if not state.open_join:
            raise UnknownUser(pose.user)
        state.add_participant(pose.user, RoleKind.AUDIENCE)
        part = state.participants[pose.user]
    if part.pose is not None and (pose.t, f.seq) <= (part.pose.t, part.pose_seq):
        return state
    part.pose = pose
    part.pose_seq = f.seq
    return state


def apply_roster_update(state: SessionState, f: Flake) -> SessionState:
    """Fold a ``session.roster.<user>`` flake (TEXT JSON {user, role})."""
    if not f.label.startswith(ROSTER_LABEL_PREFIX):
        raise SessionError(f"not a roster label: {f.label!r}")
    try:
        rec = json.loads(f.payload.data)
        user = rec["user"]
        role = RoleKind(rec["role"])
    except (ValueError, KeyError, TypeError) as exc:
        raise SessionError(f"bad roster payload: {exc}") from exc
    try:
        state.set_role(user, role)
    except SessionError:
        pass  # second presenter claim: first one wins
    return state


def load_session_config(path: str | Path) -> SessionState:
    """Session config JSON: board plane, roles, open-join flag."""
    raw = json.loads(Path(path).read_text())
    b = raw["board"]
    board = BoardPlane(
        origin=tuple(b.get("origin", (0.0, 0.0, 0.0))),
        normal=vnormalize(tuple(b.get("normal", (0.0, 0.0, 1.0)))),
        extents=tuple(b.get("extents", (2.0, 1.25))),
    )
    state = SessionState(board=board, open_join=bool(raw.get("open_join", True)))
    for part in raw.get("participants", []):
        state.add_participant(part["name"], RoleKind(part["role"]))
    return state
