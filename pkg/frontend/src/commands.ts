/**
 * Render-command codec: the BYTES payload of `render` and `input` flakes.
 * Layout per op in docs/formats.md: op u8, sketch_id u32 BE, op body.
 */

import type { Vec3 } from "./wire.js";
import { MalformedPayload } from "./wire.js";

export enum Op {
  BEGIN_FRAME = 0x01,
  CREATE_SKETCH = 0x02,
  STROKE = 0x03,
  TEXT = 0x04,
  SET_TRANSFORM = 0x05,
  LINK = 0x06,
  SET_VALUE = 0x07,
  CURSOR = 0x08,
  PAN = 0x09,
  DELETE_SKETCH = 0x0a,
  END_FRAME = 0x0b,
}

export type Rgba = [number, number, number, number];

export type RenderCommand =
  | { op: Op.BEGIN_FRAME; frameNo: number }
  | { op: Op.END_FRAME; frameNo: number }
  | { op: Op.CREATE_SKETCH; sketchId: number; kind: string }
  | { op: Op.DELETE_SKETCH; sketchId: number }
  | { op: Op.STROKE; sketchId: number; color: Rgba; width: number; points: Vec3[] }
  | { op: Op.TEXT; sketchId: number; text: string; anchor: Vec3; height: number }
  | { op: Op.SET_TRANSFORM; sketchId: number; matrix: number[] }
  | { op: Op.LINK; fromId: number; toId: number }
  | { op: Op.SET_VALUE; sketchId: number; value: number }
  | { op: Op.CURSOR; vec: Vec3 }
  | { op: Op.PAN; vec: Vec3 };

export class MalformedCommand extends MalformedPayload {}

class Writer {
  private parts: number[] = [];

  u8(v: number): void {
    this.parts.push(v & 0xff);
  }

  u16(v: number): void {
    this.parts.push((v >>> 8) & 0xff, v & 0xff);
  }

  u32(v: number): void {
    this.parts.push((v >>> 24) & 0xff, (v >>> 16) & 0xff, (v >>> 8) & 0xff, v & 0xff);
  }

  f32(v: number): void {
    const b = new Uint8Array(4);
    new DataView(b.buffer).setFloat32(0, v, false);
    this.parts.push(b[0]!, b[1]!, b[2]!, b[3]!);
  }

  str(s: string): void {
    const raw = new TextEncoder().encode(s);
    if (raw.length > 0xffff) throw new MalformedCommand("string too long");
    this.u16(raw.length);
    for (const byte of raw) this.parts.push(byte);
  }

  bytes(): Uint8Array {
    return Uint8Array.from(this.parts);
  }
}

export function encodeCommand(c: RenderCommand): Uint8Array {
  const w = new Writer();
  w.u8(c.op);
  const sketchId =
    "sketchId" in c ? c.sketchId : c.op === Op.LINK ? c.fromId : 0;
  w.u32(sketchId);
  switch (c.op) {
    case Op.BEGIN_FRAME:
    case Op.END_FRAME:
      w.u32(c.frameNo);
      break;
    case Op.CREATE_SKETCH:
      w.str(c.kind);
      break;
    case Op.STROKE:
      if (c.points.length < 2) throw new MalformedCommand("stroke needs at least two points");
      for (const v of c.color) w.f32(v);
      w.f32(c.width);
      w.u32(c.points.length);
      for (const p of c.points) for (const v of p) w.f32(v);
      break;
    case Op.TEXT:
      w.str(c.text);
      for (const v of c.anchor) w.f32(v);
      w.f32(c.height);
      break;
    case Op.SET_TRANSFORM:
      if (c.matrix.length !== 16 || !c.matrix.every(Number.isFinite)) {
        throw new MalformedCommand("transform must be 16 finite floats");
      }
      for (const v of c.matrix) w.f32(v);
      break;
    case Op.LINK:
      w.u32(c.fromId);
      w.u32(c.toId);
      break;
    case Op.SET_VALUE:
      w.f32(c.value);
      break;
    case Op.CURSOR:
    case Op.PAN:
      for (const v of c.vec) w.f32(v);
      break;
    case Op.DELETE_SKETCH:
      break;
  }
  return w.bytes();
}

class Reader {
  private off = 0;
  private view: DataView;

  constructor(private buf: Uint8Array) {
    this.view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  }

  get remaining(): number {
    return this.buf.length - this.off;
  }

  private need(n: number): void {
    if (this.remaining < n) throw new MalformedCommand("truncated command");
  }

  u8(): number {
    this.need(1);
    return this.buf[this.off++]!;
  }

  u16(): number {
    this.need(2);
    const v = this.view.getUint16(this.off, false);
    this.off += 2;
    return v;
  }

  u32(): number {
    this.need(4);
    const v = this.view.getUint32(this.off, false);
    this.off += 4;
    return v;
  }

  f32(): number {
    this.need(4);
    const v = this.view.getFloat32(this.off, false);
    this.off += 4;
    return v;
  }

  str(): string {
    const n = this.u16();
    this.need(n);
    const raw = this.buf.slice(this.off, this.off + n);
    this.off += n;
    try {
      return new TextDecoder("utf-8", { fatal: true }).decode(raw);
    } catch {
      throw new MalformedCommand("string is not valid UTF-8");
    }
  }

  vec3(): Vec3 {
    return [this.f32(), this.f32(), this.f32()];
  }
}

export function decodeCommand(data: Uint8Array): RenderCommand {
  const r = new Reader(data);
  const opByte = r.u8();
  const sketchId = r.u32();
  if (!(opByte in Op)) throw new MalformedCommand(`unknown op 0x${opByte.toString(16)}`);
  const op = opByte as Op;
  let cmd: RenderCommand;
  switch (op) {
    case Op.BEGIN_FRAME:
    case Op.END_FRAME:
      cmd = { op, frameNo: r.u32() };
      break;
    case Op.CREATE_SKETCH:
      cmd = { op, sketchId, kind: r.str() };
      break;
    case Op.STROKE: {
      const color: Rgba = [r.f32(), r.f32(), r.f32(), r.f32()];
      const width = r.f32();
      const count = r.u32();
      const points: Vec3[] = [];
      for (let i = 0; i < count; i++) points.push(r.vec3());
      if (points.length < 2) throw new MalformedCommand("stroke needs at least two points");
      cmd = { op, sketchId, color, width, points };
      break;
    }
    case Op.TEXT: {
      const text = r.str();
      const anchor = r.vec3();
      const height = r.f32();
      cmd = { op, sketchId, text, anchor, height };
      break;
    }
    case Op.SET_TRANSFORM: {
      const matrix: number[] = [];
      for (let i = 0; i < 16; i++) matrix.push(r.f32());
      if (!matrix.every(Number.isFinite)) throw new MalformedCommand("non-finite transform");
      cmd = { op, sketchId, matrix };
      break;
    }
    case Op.LINK:
      cmd = { op, fromId: r.u32(), toId: r.u32() };
      break;
    case Op.SET_VALUE:
      cmd = { op, sketchId, value: r.f32() };
      break;
    case Op.CURSOR:
    case Op.PAN:
      cmd = { op, vec: r.vec3() };
      break;
    default:
      cmd = { op: Op.DELETE_SKETCH, sketchId };
  }
  if (r.remaining !== 0) throw new MalformedCommand(`trailing bytes after ${Op[op]}`);
  return cmd;
}
