/**
 * Client-side board state machine. Commands apply to a working copy;
 * readers (the renderer) only ever see the state committed at END_FRAME,
 * so a half-applied frame is never drawn.
 */

import { Op, type RenderCommand, type Rgba } from "./commands.js";
import type { Vec3 } from "./wire.js";

export type ViewMode = "MR" | "PROJECTED";

export interface Stroke {
  color: Rgba;
  width: number;
  points: Vec3[];
}

export interface TextItem {
  text: string;
  anchor: Vec3;
  height: number;
}

export interface Sketch {
  kind: string;
  strokes: Stroke[];
  texts: TextItem[];
  transform: number[];
  value: number | null;
}

export interface BoardContent {
  sketches: Map<number, Sketch>;
  links: Array<[number, number]>;
  panOffset: Vec3;
  cursor: Vec3 | null;
  frameNo: number;
}

export interface BoardPlaneSpec {
  origin: Vec3;
  normal: Vec3;
  extents: [number, number];
}

export class BoardError extends Error {}

export const IDENTITY_16 = [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1];

function emptyContent(): BoardContent {
  return { sketches: new Map(), links: [], panOffset: [0, 0, 0], cursor: null, frameNo: 0 };
}

function cloneContent(c: BoardContent): BoardContent {
  return {
    sketches: new Map(
      [...c.sketches].map(([id, s]) => [
        id,
        {
          kind: s.kind,
          strokes: s.strokes.map((st) => ({ ...st, points: st.points.map((p) => [...p] as Vec3) })),
          texts: s.texts.map((t) => ({ ...t, anchor: [...t.anchor] as Vec3 })),
          transform: [...s.transform],
          value: s.value,
        },
      ]),
    ),
    links: c.links.map(([a, b]) => [a, b]),
    panOffset: [...c.panOffset] as Vec3,
    cursor: c.cursor ? ([...c.cursor] as Vec3) : null,
    frameNo: c.frameNo,
  };
}

export function transformPoint(m: number[], p: Vec3): Vec3 {
  const [x, y, z] = p;
  return [
    m[0]! * x + m[4]! * y + m[8]! * z + m[12]!,
    m[1]! * x + m[5]! * y + m[9]! * z + m[13]!,
    m[2]! * x + m[6]! * y + m[10]! * z + m[14]!,
  ];
}

export class Board {
  current: BoardContent = emptyContent();
  committed: BoardContent = emptyContent();
  inFrame = false;

  apply(c: RenderCommand): void {
    const cur = this.current;
    if (!this.inFrame) {
      if (c.op !== Op.BEGIN_FRAME) throw new BoardError(`${Op[c.op]} outside frame`);
      this.inFrame = true;
      cur.frameNo = c.frameNo;
      return;
    }
    switch (c.op) {
      case Op.BEGIN_FRAME:
        throw new BoardError("nested BEGIN_FRAME");
      case Op.END_FRAME:
        this.inFrame = false;
        this.committed = cloneContent(cur);
        return;
      case Op.CREATE_SKETCH:
        if (cur.sketches.has(c.sketchId)) throw new BoardError(`duplicate sketch ${c.sketchId}`);
        cur.sketches.set(c.sketchId, {
          kind: c.kind,
          strokes: [],
          texts: [],
          transform: [...IDENTITY_16],
          value: null,
        });
        return;
      case Op.DELETE_SKETCH:
        if (!cur.sketches.delete(c.sketchId)) throw new BoardError(`unknown sketch ${c.sketchId}`);
        cur.links = cur.links.filter(([a, b]) => a !== c.sketchId && b !== c.sketchId);
        return;
      case Op.STROKE: {
        const sk = cur.sketches.get(c.sketchId);
        if (!sk) throw new BoardError(`unknown sketch ${c.sketchId}`);
        sk.strokes.push({ color: c.color, width: c.width, points: c.points });
        return;
      }
      case Op.TEXT: {
        const sk = cur.sketches.get(c.sketchId);
        if (!sk) throw new BoardError(`unknown sketch ${c.sketchId}`);
        sk.texts.push({ text: c.text, anchor: c.anchor, height: c.height });
        return;
      }
      case Op.SET_TRANSFORM: {
        const sk = cur.sketches.get(c.sketchId);
        if (!sk) throw new BoardError(`unknown sketch ${c.sketchId}`);
        sk.transform = c.matrix;
        return;
      }
      case Op.LINK: {
        if (!cur.sketches.has(c.fromId) || !cur.sketches.has(c.toId)) {
          throw new BoardError(`dangling link ${c.fromId}->${c.toId}`);
        }
        if (!cur.links.some(([a, b]) => a === c.fromId && b === c.toId)) {
          cur.links.push([c.fromId, c.toId]);
        }
        return;
      }
      case Op.SET_VALUE: {
        const sk = cur.sketches.get(c.sketchId);
        if (!sk) throw new BoardError(`unknown sketch ${c.sketchId}`);
        sk.value = c.value;
        return;
      }
      case Op.CURSOR:
        cur.cursor = c.vec;
        return;
      case Op.PAN:
        cur.panOffset = [
          cur.panOffset[0] + c.vec[0],
          cur.panOffset[1] + c.vec[1],
          cur.panOffset[2] + c.vec[2],
        ];
        return;
    }
  }
}

export interface DrawItem {
  sketchId: number;
  kind: "stroke" | "text";
  points: Vec3[];
  stroke?: Stroke;
  text?: TextItem;
}

export function contentItems(c: BoardContent): DrawItem[] {
  const items: DrawItem[] = [];
  const pan = c.panOffset;
  const ids = [...c.sketches.keys()].sort((a, b) => a - b);
  for (const id of ids) {
    const sk = c.sketches.get(id)!;
    for (const st of sk.strokes) {
      const world = st.points.map((p) => {
        const t = transformPoint(sk.transform, p);
        return [t[0] + pan[0], t[1] + pan[1], t[2] + pan[2]] as Vec3;
      });
      items.push({ sketchId: id, kind: "stroke", points: world, stroke: st });
    }
    for (const tx of sk.texts) {
      const t = transformPoint(sk.transform, tx.anchor);
      items.push({
        sketchId: id,
        kind: "text",
        points: [[t[0] + pan[0], t[1] + pan[1], t[2] + pan[2]]],
        text: tx,
      });
    }
  }
  return items;
}

/**
 * MR mode is the infinite screen (everything, panned); PROJECTED keeps only
 * items with at least one point inside the board extents rectangle.
 */
export function visibleContent(c: BoardContent, plane: BoardPlaneSpec, mode: ViewMode): DrawItem[] {
  const items = contentItems(c);
  if (mode === "MR") return items;
  const [hw, hh] = plane.extents;
  const [ox, oy] = plane.origin;
  return items.filter((it) =>
    it.points.some((p) => Math.abs(p[0] - ox) <= hw && Math.abs(p[1] - oy) <= hh),
  );
}

/**
 * Python's '%.6g': 6 significant digits, exponential form when the decimal
 * exponent is < -4 or >= 6, two-digit exponents, trailing zeros stripped,
 * -0 normalized to 0.
 */
export function fmtG6(x: number): string {
  if (x === 0) return "0";
  if (!Number.isFinite(x)) return String(x);
  const [mantRaw, expRaw] = x.toExponential(5).split("e") as [string, string];
  const exp = parseInt(expRaw, 10);
  const neg = mantRaw.startsWith("-");
  const digits = (neg ? mantRaw.slice(1) : mantRaw).replace(".", ""); // 6 digits
  let body: string;
  if (exp < -4 || exp >= 6) {
    const stripped = digits.replace(/0+$/, "") || "0";
    const mant = stripped.length > 1 ? `${stripped[0]}.${stripped.slice(1)}` : stripped;
    const esign = exp < 0 ? "-" : "+";
    body = `${mant}e${esign}${String(Math.abs(exp)).padStart(2, "0")}`;
  } else if (exp >= 0) {
    const intPart = digits.slice(0, exp + 1);
    const frac = digits.slice(exp + 1).replace(/0+$/, "");
    body = frac ? `${intPart}.${frac}` : intPart;
  } else {
    const frac = ("0".repeat(-exp - 1) + digits).replace(/0+$/, "");
    body = frac ? `0.${frac}` : "0";
  }
  if (body === "0") return "0";
  return neg ? `-${body}` : body;
}

const fmtVec = (v: number[]): string => v.map(fmtG6).join(",");

/** Python repr() for the plain strings the protocol carries. */
function pyRepr(s: string): string {
  if (!s.includes("'")) return `'${s.replace(/\\/g, "\\\\")}'`;
  return `"${s.replace(/\\/g, "\\\\").replace(/"/g, '\\"')}"`;
}

/** Canonical text snapshot, byte-identical to the Python serializer. */
export function snapshot(c: BoardContent): string {
  const lines: string[] = ["board v1"];
  lines.push(`frame ${c.frameNo}`);
  lines.push(`pan ${fmtVec(c.panOffset)}`);
  lines.push(`cursor ${c.cursor ? fmtVec(c.cursor) : "none"}`);
  const ids = [...c.sketches.keys()].sort((a, b) => a - b);
  for (const id of ids) {
    const sk = c.sketches.get(id)!;
    const val = sk.value !== null ? fmtG6(sk.value) : "none";
    lines.push(`sketch ${id} kind=${sk.kind} value=${val}`);
    lines.push(`  transform ${fmtVec(sk.transform)}`);
    for (const st of sk.strokes) {
      const pts = st.points.map((p) => fmtVec(p)).join(" ");
      lines.push(`  stroke color=${fmtVec(st.color)} width=${fmtG6(st.width)} points=${pts}`);
    }
    for (const tx of sk.texts) {
      lines.push(`  text ${pyRepr(tx.text)} anchor=${fmtVec(tx.anchor)} height=${fmtG6(tx.height)}`);
    }
  }
  const links = [...c.links].sort((a, b) => a[0] - b[0] || a[1] - b[1]);
  for (const [a, b] of links) lines.push(`link ${a}->${b}`);
  return lines.join("\n") + "\n";
}
