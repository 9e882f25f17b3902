/**
 * 2D canvas view: orthographic projection of the board plane (x right,
 * y up) with the content layer, the shared cursor, and the mirrored
 * remote avatars drawn behind the board (negative z renders smaller).
 */

import { visibleContent, type BoardContent, type BoardPlaneSpec, type ViewMode } from "./board.js";
import { fmtG6 } from "./board.js";
import type { AvatarView } from "./client.js";
import type { Vec3 } from "./wire.js";

export interface Viewport {
  scale: number; // pixels per meter
  cx: number; // canvas x of world origin
  cy: number; // canvas y of world origin
}

export function fitViewport(canvas: { width: number; height: number }, plane: BoardPlaneSpec): Viewport {
  const [hw, hh] = plane.extents;
  const scale = Math.min(canvas.width / (2 * hw * 1.25), canvas.height / (2 * hh * 1.6));
  return { scale, cx: canvas.width / 2, cy: canvas.height / 2 };
}

const toScreen = (vp: Viewport, p: Vec3): [number, number] => [
  vp.cx + p[0] * vp.scale,
  vp.cy - p[1] * vp.scale,
];

function rgba([r, g, b, a]: [number, number, number, number]): string {
  return `rgba(${Math.round(r * 255)},${Math.round(g * 255)},${Math.round(b * 255)},${a})`;
}

export function drawScene(
  ctx: CanvasRenderingContext2D,
  vp: Viewport,
  content: BoardContent,
  plane: BoardPlaneSpec,
  mode: ViewMode,
  avatars: AvatarView[],
): void {
  const { canvas } = ctx;
  ctx.clearRect(0, 0, canvas.width, canvas.height);

  // Board extents rectangle: the projected-mode viewport.
  const [hw, hh] = plane.extents;
  const [x0, y0] = toScreen(vp, [plane.origin[0] - hw, plane.origin[1] + hh, 0]);
  ctx.strokeStyle = mode === "PROJECTED" ? "#7a5c2e" : "#3a4a5a";
  ctx.setLineDash([6, 4]);
  ctx.strokeRect(x0, y0, 2 * hw * vp.scale, 2 * hh * vp.scale);
  ctx.setLineDash([]);

  // Avatars render first: they live behind the transparent board.
  for (const av of avatars) {
    const [ax, ay] = toScreen(vp, av.pose.position);
    const depth = Math.min(1.5, Math.max(0.3, -av.pose.position[2] / 2 + 0.75));
    const r = 14 / depth;
    ctx.fillStyle = "#caa9ff";
    ctx.beginPath();
    ctx.arc(ax, ay, r, 0, 2 * Math.PI);
    ctx.fill();
    ctx.fillStyle = "#e8e0f8";
    ctx.font = "12px sans-serif";
    ctx.textAlign = "center";
    ctx.fillText(av.user, ax, ay - r - 4);
    if (av.boardPoint) {
      const [gx, gy] = toScreen(vp, av.boardPoint);
      ctx.strokeStyle = "rgba(202,169,255,0.5)";
      ctx.beginPath();
      ctx.moveTo(ax, ay);
      ctx.lineTo(gx, gy);
      ctx.stroke();
      ctx.beginPath();
      ctx.arc(gx, gy, 4, 0, 2 * Math.PI);
      ctx.stroke();
    }
  }

  // Content layer.
  for (const item of visibleContent(content, plane, mode)) {
    if (item.kind === "stroke" && item.stroke) {
      ctx.strokeStyle = rgba(item.stroke.color);
      ctx.lineWidth = Math.max(1, item.stroke.width * vp.scale);
      ctx.beginPath();
      item.points.forEach((p, i) => {
        const [sx, sy] = toScreen(vp, p);
        if (i === 0) ctx.moveTo(sx, sy);
        else ctx.lineTo(sx, sy);
      });
      ctx.stroke();
    } else if (item.kind === "text" && item.text) {
      const [sx, sy] = toScreen(vp, item.points[0]!);
      ctx.fillStyle = "#e6e6e6";
      ctx.font = `${Math.max(10, item.text.height * vp.scale)}px sans-serif`;
      ctx.textAlign = "center";
      ctx.fillText(item.text.text, sx, sy);
    }
  }

  // Per-sketch value badges (e.g. the pendulum's live angle readout).
  for (const [id, sk] of content.sketches) {
    if (sk.value === null) continue;
    const at: Vec3 = [
      sk.transform[12]! + content.panOffset[0],
      sk.transform[13]! + content.panOffset[1] - 0.35,
      0,
    ];
    const [sx, sy] = toScreen(vp, at);
    ctx.fillStyle = "#9fd49f";
    ctx.font = "11px monospace";
    ctx.textAlign = "center";
    ctx.fillText(fmtG6(sk.value), sx, sy);
    void id;
  }

  // Shared cursor (absolute viewport coordinates; not shifted by pan).
  if (content.cursor) {
    const [sx, sy] = toScreen(vp, content.cursor);
    ctx.strokeStyle = "#ff8080";
    ctx.beginPath();
    ctx.moveTo(sx - 6, sy);
    ctx.lineTo(sx + 6, sy);
    ctx.moveTo(sx, sy - 6);
    ctx.lineTo(sx, sy + 6);
    ctx.stroke();
  }
}
