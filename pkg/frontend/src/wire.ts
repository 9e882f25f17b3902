/**
 * Binary flake codec. Mirrors docs/wire.md byte for byte:
 *
 *   magic 0x4D 0x42 | version 0x01 | body_len u32 BE | body | crc32(body)
 *
 * Body: scope, label, origin (u16-length-prefixed UTF-8), class byte,
 * seq u32, payload tag byte, count u32, data. Floats are binary32 BE.
 */

export const MAGIC0 = 0x4d;
export const MAGIC1 = 0x42;
export const VERSION = 0x01;
export const FRAME_OVERHEAD = 11;

export enum PayloadTag {
  VEC3 = 0x01,
  VEC4 = 0x02,
  BYTES = 0x03,
  FLOATS = 0x04,
  INTS = 0x05,
  TEXT = 0x06,
}

export enum DeliveryClass {
  STATE = 0x00,
  EVENT = 0x01,
}

export type Vec3 = [number, number, number];
export type Vec4 = [number, number, number, number];

export type Payload =
  | { tag: PayloadTag.VEC3; data: Vec3[] }
  | { tag: PayloadTag.VEC4; data: Vec4[] }
  | { tag: PayloadTag.BYTES; data: Uint8Array }
  | { tag: PayloadTag.FLOATS; data: number[] }
  | { tag: PayloadTag.INTS; data: number[] }
  | { tag: PayloadTag.TEXT; data: string };

export interface Flake {
  scope: string;
  label: string;
  origin: string;
  delivery: DeliveryClass;
  seq: number;
  payload: Payload;
}

export class WireError extends Error {}
export class OversizeString extends WireError {}
export class DecodeError extends WireError {}
export class BadMagic extends DecodeError {}
export class UnsupportedVersion extends DecodeError {}
export class LengthMismatch extends DecodeError {}
export class CrcMismatch extends DecodeError {}
export class MalformedPayload extends DecodeError {}

const utf8encode = (s: string): Uint8Array => new TextEncoder().encode(s);
const utf8decode = (b: Uint8Array): string =>
  new TextDecoder("utf-8", { fatal: true }).decode(b);

// CRC-32, IEEE polynomial (same as zlib.crc32).
const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(data: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < data.length; i++) {
    c = CRC_TABLE[(c ^ data[i]!) & 0xff]! ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

/** Quantize to the nearest binary32 value (what the wire carries). */
export function f32(x: number): number {
  return Math.fround(x);
}

export function payloadCount(p: Payload): number {
  switch (p.tag) {
    case PayloadTag.BYTES:
      return p.data.length;
    case PayloadTag.TEXT:
      return utf8encode(p.data).length;
    default:
      return p.data.length;
  }
}

class ByteWriter {
  private chunks: Uint8Array[] = [];

  u8(v: number): void {
    this.chunks.push(Uint8Array.of(v & 0xff));
  }

  u16(v: number): void {
    const b = new Uint8Array(2);
    new DataView(b.buffer).setUint16(0, v, false);
    this.chunks.push(b);
  }

  u32(v: number): void {
    const b = new Uint8Array(4);
    new DataView(b.buffer).setUint32(0, v >>> 0, false);
    this.chunks.push(b);
  }

  i32(v: number): void {
    const b = new Uint8Array(4);
    new DataView(b.buffer).setInt32(0, v | 0, false);
    this.chunks.push(b);
  }

  f32(v: number): void {
    const b = new Uint8Array(4);
    new DataView(b.buffer).setFloat32(0, v, false);
    this.chunks.push(b);
  }

  raw(b: Uint8Array): void {
    this.chunks.push(b);
  }

  str(s: string, what: string): void {
    const raw = utf8encode(s);
    if (raw.length > 0xffff) throw new OversizeString(`${what} exceeds 65535 bytes`);
    this.u16(raw.length);
    this.raw(raw);
  }

  bytes(): Uint8Array {
    const total = this.chunks.reduce((n, c) => n + c.length, 0);
    const out = new Uint8Array(total);
    let off = 0;
    for (const c of this.chunks) {
      out.set(c, off);
      off += c.length;
    }
    return out;
  }
}

function encodePayload(w: ByteWriter, p: Payload): void {
  w.u8(p.tag);
  w.u32(payloadCount(p));
  switch (p.tag) {
    case PayloadTag.VEC3:
      for (const v of p.data) for (const c of v) w.f32(c);
      break;
    case PayloadTag.VEC4:
      for (const v of p.data) for (const c of v) w.f32(c);
      break;
    case PayloadTag.FLOATS:
      for (const c of p.data) w.f32(c);
      break;
    case PayloadTag.INTS:
      for (const c of p.data) w.i32(c);
      break;
    case PayloadTag.BYTES:
      w.raw(p.data);
      break;
    case PayloadTag.TEXT:
      w.raw(utf8encode(p.data));
      break;
  }
}

export function encodeFlake(f: Flake): Uint8Array {
  if (!f.scope || !f.label || !f.origin) {
    throw new WireError("scope, label, origin must be nonempty");
  }
  const body = new ByteWriter();
  body.str(f.scope, "scope");
  body.str(f.label, "label");
  body.str(f.origin, "origin");
  body.u8(f.delivery);
  body.u32(f.seq);
  encodePayload(body, f.payload);
  const bodyBytes = body.bytes();
  const w = new ByteWriter();
  w.u8(MAGIC0);
  w.u8(MAGIC1);
  w.u8(VERSION);
  w.u32(bodyBytes.length);
  w.raw(bodyBytes);
  w.u32(crc32(bodyBytes));
  return w.bytes();
}

class ByteReader {
  private off = 0;

  constructor(
    private buf: Uint8Array,
    private view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength),
  ) {}

  get remaining(): number {
    return this.buf.length - this.off;
  }

  u8(what: string): number {
    if (this.remaining < 1) throw new MalformedPayload(`truncated ${what}`);
    return this.buf[this.off++]!;
  }

  u16(what: string): number {
    if (this.remaining < 2) throw new MalformedPayload(`truncated ${what}`);
    const v = this.view.getUint16(this.off, false);
    this.off += 2;
    return v;
  }

  u32(what: string): number {
    if (this.remaining < 4) throw new MalformedPayload(`truncated ${what}`);
    const v = this.view.getUint32(this.off, false);
    this.off += 4;
    return v;
  }

  i32(what: string): number {
    if (this.remaining < 4) throw new MalformedPayload(`truncated ${what}`);
    const v = this.view.getInt32(this.off, false);
    this.off += 4;
    return v;
  }

  f32(what: string): number {
    if (this.remaining < 4) throw new MalformedPayload(`truncated ${what}`);
    const v = this.view.getFloat32(this.off, false);
    this.off += 4;
    return v;
  }

  raw(n: number, what: string): Uint8Array {
    if (this.remaining < n) throw new MalformedPayload(`truncated ${what}`);
    const out = this.buf.slice(this.off, this.off + n);
    this.off += n;
    return out;
  }

  str(what: string): string {
    const n = this.u16(`${what} length`);
    const raw = this.raw(n, what);
    let s: string;
    try {
      s = utf8decode(raw);
    } catch {
      throw new MalformedPayload(`${what} is not valid UTF-8`);
    }
    if (!s) throw new MalformedPayload(`empty ${what}`);
    return s;
  }
}

const ELEM_SIZE: Record<PayloadTag, number> = {
  [PayloadTag.VEC3]: 12,
  [PayloadTag.VEC4]: 16,
  [PayloadTag.BYTES]: 1,
  [PayloadTag.FLOATS]: 4,
  [PayloadTag.INTS]: 4,
  [PayloadTag.TEXT]: 1,
};

function decodePayload(r: ByteReader): Payload {
  const tagByte = r.u8("payload tag");
  const count = r.u32("payload count");
  if (!(tagByte in ELEM_SIZE)) {
    throw new MalformedPayload(`unknown payload tag 0x${tagByte.toString(16)}`);
  }
  const tag = tagByte as PayloadTag;
  const expected = ELEM_SIZE[tag] * count;
  if (r.remaining !== expected) {
    throw new MalformedPayload(
      `payload data length ${r.remaining} != ${expected} for tag ${PayloadTag[tag]} count ${count}`,
    );
  }
  switch (tag) {
    case PayloadTag.VEC3: {
      const data: Vec3[] = [];
      for (let i = 0; i < count; i++)
        data.push([r.f32("vec3"), r.f32("vec3"), r.f32("vec3")]);
      return { tag, data };
    }
    case PayloadTag.VEC4: {
      const data: Vec4[] = [];
      for (let i = 0; i < count; i++)
        data.push([r.f32("vec4"), r.f32("vec4"), r.f32("vec4"), r.f32("vec4")]);
      return { tag, data };
    }
    case PayloadTag.FLOATS: {
      const data: number[] = [];
      for (let i = 0; i < count; i++) data.push(r.f32("float"));
      return { tag, data };
    }
    case PayloadTag.INTS: {
      const data: number[] = [];
      for (let i = 0; i < count; i++) data.push(r.i32("int"));
      return { tag, data };
    }
    case PayloadTag.BYTES:
      return { tag, data: r.raw(count, "bytes") };
    default: {
      const raw = r.raw(count, "text");
      try {
        return { tag: PayloadTag.TEXT, data: utf8decode(raw) };
      } catch {
        throw new MalformedPayload("TEXT payload is not valid UTF-8");
      }
    }
  }
}

export function decodeFlake(packet: Uint8Array): Flake {
  if (packet.length >= 1 && packet[0] !== MAGIC0) throw new BadMagic("bad magic");
  if (packet.length >= 2 && packet[1] !== MAGIC1) throw new BadMagic("bad magic");
  if (packet.length < 3) throw new LengthMismatch("packet shorter than fixed header");
  if (packet[2] !== VERSION)
    throw new UnsupportedVersion(`unsupported version 0x${packet[2]!.toString(16)}`);
  if (packet.length < FRAME_OVERHEAD)
    throw new LengthMismatch("packet shorter than framing overhead");
  const view = new DataView(packet.buffer, packet.byteOffset, packet.byteLength);
  const bodyLen = view.getUint32(3, false);
  if (packet.length !== FRAME_OVERHEAD + bodyLen) {
    throw new LengthMismatch(
      `packet length ${packet.length} != ${FRAME_OVERHEAD + bodyLen} implied by header`,
    );
  }
  const body = packet.slice(7, 7 + bodyLen);
  const crc = view.getUint32(7 + bodyLen, false);
  if (crc32(body) !== crc) throw new CrcMismatch("crc32 mismatch over body");
  const r = new ByteReader(body);
  const scope = r.str("scope");
  const label = r.str("label");
  const origin = r.str("origin");
  const clsByte = r.u8("class");
  if (clsByte !== DeliveryClass.STATE && clsByte !== DeliveryClass.EVENT) {
    throw new MalformedPayload(`unknown delivery class 0x${clsByte.toString(16)}`);
  }
  const seq = r.u32("seq");
  const payload = decodePayload(r);
  return { scope, label, origin, delivery: clsByte, seq, payload };
}

/**
 * Split a byte stream into complete packets plus the unconsumed suffix.
 * Throws BadMagic on stream desync (caller must drop the connection).
 */
export function splitStream(buffer: Uint8Array): { packets: Uint8Array[]; rest: Uint8Array } {
  const packets: Uint8Array[] = [];
  let off = 0;
  const view = new DataView(buffer.buffer, buffer.byteOffset, buffer.byteLength);
  for (;;) {
    const avail = buffer.length - off;
    if (avail === 0) break;
    if (buffer[off] !== MAGIC0 || (avail >= 2 && buffer[off + 1] !== MAGIC1)) {
      throw new BadMagic(`stream desync at offset ${off}`);
    }
    if (avail < 7) break;
    const total = FRAME_OVERHEAD + view.getUint32(off + 3, false);
    if (avail < total) break;
    packets.push(buffer.slice(off, off + total));
    off += total;
  }
  return { packets, rest: buffer.slice(off) };
}

export function flake(
  scope: string,
  label: string,
  origin: string,
  delivery: DeliveryClass,
  seq: number,
  payload: Payload,
): Flake {
  return { scope, label, origin, delivery, seq, payload };
}
