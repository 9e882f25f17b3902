/**
 * Session-side math and state: the face-to-face mirror, role-based
 * visibility, and the local roster built from pose/roster flakes.
 *
 * Every participant's raw pose lives on the presenter-normal side of the
 * board; remote users render reflected across the plane. The reflection
 * preserves where a gaze ray crosses the board, so pointing and looking
 * read correctly on both sides.
 */

import type { BoardPlaneSpec } from "./board.js";
import type { Vec3 } from "./wire.js";

export type Role = "PRESENTER" | "AUDIENCE";

export interface Pose {
  user: string;
  t: number;
  position: Vec3;
  forward: Vec3;
  up: Vec3;
  gazeOrigin: Vec3;
  gazeDir: Vec3;
}

const sub = (a: Vec3, b: Vec3): Vec3 => [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
const scale = (a: Vec3, s: number): Vec3 => [a[0] * s, a[1] * s, a[2] * s];
const dot = (a: Vec3, b: Vec3): number => a[0] * b[0] + a[1] * b[1] + a[2] * b[2];

export function normalize(v: Vec3): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]);
  if (n === 0) throw new Error("cannot normalize zero vector");
  return [v[0] / n, v[1] / n, v[2] / n];
}

export function reflectPoint(plane: BoardPlaneSpec, p: Vec3): Vec3 {
  const d = dot(sub(p, plane.origin), plane.normal);
  return sub(p, scale(plane.normal, 2 * d));
}

export function reflectDir(plane: BoardPlaneSpec, d: Vec3): Vec3 {
  return sub(d, scale(plane.normal, 2 * dot(d, plane.normal)));
}

export function mirrorPose(p: Pose, plane: BoardPlaneSpec): Pose {
  return {
    user: p.user,
    t: p.t,
    position: reflectPoint(plane, p.position),
    forward: normalize(reflectDir(plane, p.forward)),
    up: normalize(reflectDir(plane, p.up)),
    gazeOrigin: reflectPoint(plane, p.gazeOrigin),
    gazeDir: normalize(reflectDir(plane, p.gazeDir)),
  };
}

/** Forward ray-plane intersection (t >= 0), or null. */
export function rayPlane(plane: BoardPlaneSpec, origin: Vec3, dir: Vec3): Vec3 | null {
  const denom = dot(dir, plane.normal);
  if (Math.abs(denom) < 1e-9) return null;
  const t = -dot(sub(origin, plane.origin), plane.normal) / denom;
  if (t < 0) return null;
  return [origin[0] + dir[0] * t, origin[1] + dir[1] * t, origin[2] + dir[2] * t];
}

export class Roster {
  roles = new Map<string, Role>();
  poses = new Map<string, Pose>();
  poseSeq = new Map<string, number>();

  presenter(): string | null {
    for (const [user, role] of this.roles) if (role === "PRESENTER") return user;
    return null;
  }

  setRole(user: string, role: Role): void {
    // A second presenter claim is ignored: the first one wins.
    if (role === "PRESENTER" && this.presenter() !== null && this.presenter() !== user) return;
    this.roles.set(user, role);
  }

  ensure(user: string): void {
    if (!this.roles.has(user)) this.roles.set(user, "AUDIENCE"); // open join
  }

  updatePose(pose: Pose, seq: number): void {
    this.ensure(pose.user);
    const prev = this.poses.get(pose.user);
    const prevSeq = this.poseSeq.get(pose.user) ?? -1;
    if (prev && (pose.t < prev.t || (pose.t === prev.t && seq <= prevSeq))) return;
    this.poses.set(pose.user, pose);
    this.poseSeq.set(pose.user, seq);
  }

  /** Users the viewer may see: the presenter-centered visibility star. */
  visibleUsers(viewer: string, viewerRole: Role): string[] {
    const out: string[] = [];
    if (viewerRole === "PRESENTER") {
      for (const [user, role] of this.roles) {
        if (user !== viewer && role === "AUDIENCE") out.push(user);
      }
    } else {
      const p = this.presenter();
      if (p !== null && p !== viewer) out.push(p);
    }
    return out.sort();
  }

  /** Mirrored poses of the visible users that have reported a pose. */
  renderPoses(viewer: string, viewerRole: Role, plane: BoardPlaneSpec): Map<string, Pose> {
    const out = new Map<string, Pose>();
    for (const user of this.visibleUsers(viewer, viewerRole)) {
      const pose = this.poses.get(user);
      if (pose) out.set(user, mirrorPose(pose, plane));
    }
    return out;
  }
}
