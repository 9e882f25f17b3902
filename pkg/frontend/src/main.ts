/**
 * Browser shell: role picker, WebSocket hookup, mouse handling, and the
 * render loop. The mouse is both the drawing tool (presenter) and the
 * gaze proxy feeding `pose.<name>` state at 30 Hz.
 */

import { DEFAULT_PLANE, MirrorboardClient } from "./client.js";
import { Op } from "./commands.js";
import { drawScene, fitViewport } from "./render.js";
import type { Role } from "./session.js";
import type { ViewMode } from "./board.js";
import type { Vec3 } from "./wire.js";

const qs = new URLSearchParams(location.search);
const WS_URL = qs.get("ws") ?? "ws://127.0.0.1:9091/ws";

const form = document.getElementById("join") as HTMLFormElement;
const nameInput = document.getElementById("name") as HTMLInputElement;
const roleSelect = document.getElementById("role") as HTMLSelectElement;
const modeSelect = document.getElementById("mode") as HTMLSelectElement;
const status = document.getElementById("status") as HTMLSpanElement;
const canvas = document.getElementById("board") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;

let client: MirrorboardClient | null = null;
let mode: ViewMode = "MR";
let mouseBoard: Vec3 = [0, 0, 0];
let drawing: Vec3[] | null = null;

function setStatus(text: string, bad = false): void {
  status.textContent = text;
  status.className = bad ? "bad" : "";
}

function boardPointFromEvent(ev: MouseEvent): Vec3 {
  const vp = fitViewport(canvas, DEFAULT_PLANE);
  const rect = canvas.getBoundingClientRect();
  const x = ((ev.clientX - rect.left) * (canvas.width / rect.width) - vp.cx) / vp.scale;
  const y = (vp.cy - (ev.clientY - rect.top) * (canvas.height / rect.height)) / vp.scale;
  return [x, y, 0];
}

form.addEventListener("submit", (ev) => {
  ev.preventDefault();
  const name = nameInput.value.trim() || "web";
  const role = roleSelect.value as Role;
  mode = modeSelect.value as ViewMode;
  connect(name, role);
});

function connect(name: string, role: Role): void {
  setStatus(`connecting to ${WS_URL} ...`);
  const sock = new WebSocket(WS_URL);
  sock.binaryType = "arraybuffer";

  const c = new MirrorboardClient({
    name,
    role,
    send: (packet) => sock.send(packet),
    onAck: (ok, detail) => {
      if (ok) {
        setStatus(`connected as ${name} (${role}, ${mode})`);
        c.announceRole();
      } else {
        setStatus(c.nameTaken ? `name "${name}" is taken` : `rejected: ${detail}`, true);
        sock.close();
      }
    },
    onError: (detail) => setStatus(`relay error: ${detail}`, true),
  });

  sock.onopen = () => c.register();
  sock.onmessage = (ev) => c.handleMessage(new Uint8Array(ev.data as ArrayBuffer));
  sock.onclose = () => setStatus("disconnected", true);
  sock.onerror = () => setStatus(`cannot reach ${WS_URL}`, true);
  client = c;

  // 30 Hz pose/gaze emission, 1 Hz role re-announcement.
  const started = performance.now();
  const live = () => c.registered && sock.readyState === WebSocket.OPEN;
  const poseTimer = setInterval(() => {
    if (live()) c.emitPose(mouseBoard, Math.round(performance.now() - started));
  }, 1000 / 30);
  const rosterTimer = setInterval(() => {
    if (live()) c.announceRole();
  }, 1000);
  sock.addEventListener("close", () => {
    clearInterval(poseTimer);
    clearInterval(rosterTimer);
  });
}

canvas.addEventListener("mousemove", (ev) => {
  mouseBoard = boardPointFromEvent(ev);
  if (!client?.registered) return;
  if (client.role === "PRESENTER") {
    if (drawing) {
      const last = drawing[drawing.length - 1]!;
      const dx = mouseBoard[0] - last[0];
      const dy = mouseBoard[1] - last[1];
      if (dx * dx + dy * dy > 0.0004) drawing.push(mouseBoard);
    } else {
      client.sendInput({ op: Op.CURSOR, vec: mouseBoard });
    }
  }
});

canvas.addEventListener("mousedown", () => {
  if (client?.registered && client.role === "PRESENTER") drawing = [mouseBoard];
});

window.addEventListener("mouseup", () => {
  if (client?.registered && drawing && drawing.length >= 2) {
    client.sendInput({
      op: Op.STROKE,
      sketchId: 0,
      color: [0.95, 0.95, 0.95, 1],
      width: 0.008,
      points: drawing,
    });
  }
  drawing = null;
});

window.addEventListener("keydown", (ev) => {
  // Arrow keys pan the shared board (presenter only, like the lesson).
  if (!client?.registered || client.role !== "PRESENTER") return;
  const step = 0.5;
  const deltas: Record<string, Vec3> = {
    ArrowLeft: [step, 0, 0],
    ArrowRight: [-step, 0, 0],
    ArrowUp: [0, -step, 0],
    ArrowDown: [0, step, 0],
  };
  const delta = deltas[ev.key];
  if (delta) client.sendInput({ op: Op.PAN, vec: delta });
});

function frame(): void {
  if (client) {
    const vp = fitViewport(canvas, DEFAULT_PLANE);
    drawScene(ctx, vp, client.board.committed, DEFAULT_PLANE, mode, client.visibleAvatarList());
    if (drawing && drawing.length >= 2) {
      ctx.strokeStyle = "rgba(240,240,240,0.6)";
      ctx.lineWidth = 2;
      ctx.beginPath();
      drawing.forEach((p, i) => {
        const sx = vp.cx + p[0] * vp.scale;
        const sy = vp.cy - p[1] * vp.scale;
        if (i === 0) ctx.moveTo(sx, sy);
        else ctx.lineTo(sx, sy);
      });
      ctx.stroke();
    }
  }
  requestAnimationFrame(frame);
}

requestAnimationFrame(frame);
setStatus(`ready; relay at ${WS_URL}`);
