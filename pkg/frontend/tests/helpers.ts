import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { DeliveryClass, PayloadTag, f32, type Flake, type Payload } from "../src/wire.js";

const here = dirname(fileURLToPath(import.meta.url));

export interface FlakeVector {
  name: string;
  scope: string;
  label: string;
  origin: string;
  class: "STATE" | "EVENT";
  seq: number;
  payload: { tag: string; count: number; data: unknown };
  hex: string;
}

export interface VectorFile {
  schema: string;
  flakes: FlakeVector[];
  commands: { name: string; op: string; hex: string }[];
  board_scenario: { commands: string[]; snapshot: string };
  g6: [number, string][];
}

export function loadVectors(): VectorFile {
  const path = join(here, "..", "..", "tests", "vectors", "wire_vectors.json");
  return JSON.parse(readFileSync(path, "utf-8")) as VectorFile;
}

export const fromHex = (hex: string): Uint8Array =>
  Uint8Array.from(hex.match(/.{2}/g)?.map((b) => parseInt(b, 16)) ?? []);

export const toHex = (b: Uint8Array): string =>
  [...b].map((x) => x.toString(16).padStart(2, "0")).join("");

/** Deterministic PRNG (mulberry32) for seeded fuzzing. */
export function rng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function vectorPayload(rec: FlakeVector["payload"]): Payload {
  switch (rec.tag) {
    case "VEC3":
      return { tag: PayloadTag.VEC3, data: rec.data as [number, number, number][] };
    case "VEC4":
      return { tag: PayloadTag.VEC4, data: rec.data as [number, number, number, number][] };
    case "FLOATS":
      return { tag: PayloadTag.FLOATS, data: rec.data as number[] };
    case "INTS":
      return { tag: PayloadTag.INTS, data: rec.data as number[] };
    case "BYTES":
      return { tag: PayloadTag.BYTES, data: fromHex(rec.data as string) };
    default:
      return { tag: PayloadTag.TEXT, data: rec.data as string };
  }
}

export function randomFlake(rand: () => number): Flake {
  const tags = [
    PayloadTag.VEC3,
    PayloadTag.VEC4,
    PayloadTag.BYTES,
    PayloadTag.FLOATS,
    PayloadTag.INTS,
    PayloadTag.TEXT,
  ];
  const tag = tags[Math.floor(rand() * tags.length)]!;
  const n = Math.floor(rand() * 5);
  const rf = () => f32(rand() * 2e6 - 1e6);
  const name = () => {
    const alphabet = "abcdefgh.";
    let s = "";
    const len = 1 + Math.floor(rand() * 8);
    for (let i = 0; i < len; i++) s += alphabet[Math.floor(rand() * alphabet.length)];
    return s;
  };
  let payload: Payload;
  if (tag === PayloadTag.VEC3) {
    payload = { tag, data: Array.from({ length: n }, () => [rf(), rf(), rf()]) };
  } else if (tag === PayloadTag.VEC4) {
    payload = { tag, data: Array.from({ length: n }, () => [rf(), rf(), rf(), rf()]) };
  } else if (tag === PayloadTag.FLOATS) {
    payload = { tag, data: Array.from({ length: n }, rf) };
  } else if (tag === PayloadTag.INTS) {
    payload = { tag, data: Array.from({ length: n }, () => Math.floor(rand() * 2 ** 32) - 2 ** 31) };
  } else if (tag === PayloadTag.BYTES) {
    payload = { tag, data: Uint8Array.from({ length: n * 4 }, () => Math.floor(rand() * 256)) };
  } else {
    const glyphs = "abc λΩ♞xyz";
    let s = "";
    for (let i = 0; i < n; i++) s += glyphs[Math.floor(rand() * glyphs.length)];
    payload = { tag: PayloadTag.TEXT, data: s };
  }
  return {
    scope: name(),
    label: name(),
    origin: name(),
    delivery: rand() < 0.5 ? DeliveryClass.STATE : DeliveryClass.EVENT,
    seq: Math.floor(rand() * 2 ** 32),
    payload,
  };
}
