/**
 * Transport-agnostic protocol peer: registration, pose emission, input
 * publishing, and dispatch of incoming packets into board + roster state.
 * The browser shell (main.ts) plugs a WebSocket into it; tests drive it
 * headless over the `ws` package or canned byte buffers.
 */

import { Board, BoardError, snapshot as boardSnapshot, type BoardPlaneSpec } from "./board.js";
import { Op, decodeCommand, encodeCommand, type RenderCommand } from "./commands.js";
import { Roster, normalize, rayPlane, type Pose, type Role } from "./session.js";
import {
  DecodeError,
  DeliveryClass,
  PayloadTag,
  decodeFlake,
  encodeFlake,
  type Flake,
  type Vec3,
  type Vec4,
} from "./wire.js";

export const RENDER_LABEL = "render";
export const INPUT_LABEL = "input";
export const REGISTER_LABEL = "sys.register";
export const ACK_LABEL = "sys.ack";
export const ERROR_LABEL = "sys.error";

export const DEFAULT_PLANE: BoardPlaneSpec = {
  origin: [0, 0, 0],
  normal: [0, 0, 1],
  extents: [2.0, 1.25],
};

export interface ClientOptions {
  name: string;
  role: Role;
  scope?: string;
  plane?: BoardPlaneSpec;
  send: (packet: Uint8Array) => void;
  onAck?: (ok: boolean, detail: string) => void;
  onError?: (detail: string) => void;
}

export interface AvatarView {
  user: string;
  pose: Pose;
  boardPoint: Vec3 | null; // where their gaze ray crosses the board
}

export class MirrorboardClient {
  readonly name: string;
  readonly role: Role;
  readonly scope: string;
  readonly plane: BoardPlaneSpec;
  readonly board = new Board();
  readonly roster = new Roster();
  registered = false;
  nameTaken = false;
  lastError = "";
  framesSeen = 0;
  skippedCommands = 0;
  private seq = 0;
  private opts: ClientOptions;

  constructor(opts: ClientOptions) {
    this.opts = opts;
    this.name = opts.name;
    this.role = opts.role;
    this.scope = opts.scope ?? "demo";
    this.plane = opts.plane ?? DEFAULT_PLANE;
    this.roster.setRole(this.name, this.role);
  }

  // -- outbound ---------------------------------------------------------

  private publish(label: string, delivery: DeliveryClass, payload: Flake["payload"]): void {
    this.seq += 1;
    this.opts.send(
      encodeFlake({
        scope: this.scope,
        label,
        origin: this.name,
        delivery,
        seq: this.seq,
        payload,
      }),
    );
  }

  register(): void {
    const record = {
      name: this.name,
      roles: ["EMITTER", "SINK"],
      subscriptions: ["render", "pose.*", "session.roster.*"],
    };
    this.publish(REGISTER_LABEL, DeliveryClass.EVENT, {
      tag: PayloadTag.TEXT,
      data: JSON.stringify(record),
    });
  }

  /**
   * Emit the 30 Hz pose. The mouse is the gaze proxy: the eye sits a fixed
   * 1.5 m in front of the board on the user's side, and the gaze ray aims
   * at the mouse's point on the board plane.
   */
  emitPose(boardPoint: Vec3, nowMs: number): void {
    const n = this.plane.normal;
    const o = this.plane.origin;
    // Eye 1.5 m in front of the board on this user's side, at head height.
    const eye: Vec3 = [o[0] + n[0] * 1.5, o[1] + n[1] * 1.5 + 1.6, o[2] + n[2] * 1.5];
    const to: Vec3 = [boardPoint[0] - eye[0], boardPoint[1] - eye[1], boardPoint[2] - eye[2]];
    let fwd: Vec3;
    try {
      fwd = normalize(to);
    } catch {
      fwd = [0, 0, -1];
    }
    const d = fwd[1];
    const up = normalize([0 - d * fwd[0], 1 - d * fwd[1], 0 - d * fwd[2]]);
    const w = (v: Vec3, extra: number): Vec4 => [v[0], v[1], v[2], extra];
    this.publish(`pose.${this.name}`, DeliveryClass.STATE, {
      tag: PayloadTag.VEC4,
      data: [w(eye, nowMs), w(fwd, 0), w(up, 0), w(fwd, 0)],
    });
  }

  announceRole(): void {
    this.publish(`session.roster.${this.name}`, DeliveryClass.STATE, {
      tag: PayloadTag.TEXT,
      data: JSON.stringify({ user: this.name, role: this.role }),
    });
  }

  sendInput(cmd: RenderCommand): void {
    this.publish(INPUT_LABEL, DeliveryClass.EVENT, {
      tag: PayloadTag.BYTES,
      data: encodeCommand(cmd),
    });
  }

  // -- inbound ------------------------------------------------------------

  handleMessage(packet: Uint8Array): void {
    let f: Flake;
    try {
      f = decodeFlake(packet);
    } catch (err) {
      if (err instanceof DecodeError) {
        this.lastError = `undecodable packet: ${err.message}`;
        this.opts.onError?.(this.lastError);
        return;
      }
      throw err;
    }
    if (f.label === ACK_LABEL && f.payload.tag === PayloadTag.TEXT) {
      const rec = JSON.parse(f.payload.data) as { ok: boolean; error?: string };
      this.registered = rec.ok;
      if (!rec.ok && rec.error === "DuplicateName") this.nameTaken = true;
      this.opts.onAck?.(rec.ok, f.payload.data);
      return;
    }
    if (f.label === ERROR_LABEL && f.payload.tag === PayloadTag.TEXT) {
      this.lastError = f.payload.data;
      this.opts.onError?.(f.payload.data);
      return;
    }
    if (f.label === RENDER_LABEL && f.payload.tag === PayloadTag.BYTES) {
      const cmd = decodeCommand(f.payload.data);
      if (cmd.op === Op.END_FRAME) this.framesSeen += 1;
      try {
        this.board.apply(cmd);
      } catch (err) {
        // A late joiner misses the EVENTs that created earlier sketches;
        // commands touching them cannot apply. Skip those and keep the
        // stream alive so everything created from now on renders.
        if (!(err instanceof BoardError)) throw err;
        this.skippedCommands += 1;
        this.lastError = `skipped ${Op[cmd.op]}: ${err.message}`;
      }
      return;
    }
    if (f.label.startsWith("pose.")) {
      this.applyPoseFlake(f);
      return;
    }
    if (f.label.startsWith("session.roster.") && f.payload.tag === PayloadTag.TEXT) {
      const rec = JSON.parse(f.payload.data) as { user: string; role: Role };
      this.roster.setRole(rec.user, rec.role);
    }
  }

  private applyPoseFlake(f: Flake): void {
    const user = f.label.slice("pose.".length);
    if (!user || user === this.name) return;
    let position: Vec3, fwd: Vec3, up: Vec3, gaze: Vec3, t: number;
    if (f.payload.tag === PayloadTag.VEC4 && f.payload.data.length === 4) {
      const [p, fw, u, g] = f.payload.data as [Vec4, Vec4, Vec4, Vec4];
      position = [p[0], p[1], p[2]];
      fwd = [fw[0], fw[1], fw[2]];
      up = [u[0], u[1], u[2]];
      gaze = [g[0], g[1], g[2]];
      t = Math.round(p[3]);
    } else if (f.payload.tag === PayloadTag.VEC3 && f.payload.data.length === 4) {
      [position, fwd, up, gaze] = f.payload.data as [Vec3, Vec3, Vec3, Vec3];
      t = f.seq; // receiver-assigned freshness
    } else {
      this.lastError = `malformed pose payload on ${f.label}`;
      return;
    }
    try {
      this.roster.updatePose(
        {
          user,
          t,
          position,
          forward: normalize(fwd),
          up: normalize(up),
          gazeOrigin: position,
          gazeDir: normalize(gaze),
        },
        f.seq,
      );
    } catch {
      this.lastError = `degenerate pose on ${f.label}`;
    }
  }

  // -- views ----------------------------------------------------------------

  /** Mirrored avatars this client is allowed to render, with the board
   * point each one's gaze ray crosses (for the gaze marker). */
  visibleAvatarList(): AvatarView[] {
    const out: AvatarView[] = [];
    for (const [user, pose] of this.roster.renderPoses(this.name, this.role, this.plane)) {
      out.push({ user, pose, boardPoint: rayPlane(this.plane, pose.gazeOrigin, pose.gazeDir) });
    }
    return out;
  }

  snapshot(): string {
    return boardSnapshot(this.board.committed);
  }
}
