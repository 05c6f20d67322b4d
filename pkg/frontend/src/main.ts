// DOM wiring: connects the controller to a real WebSocket, the canvas view,
// and the control panel (pinch button / space bar, scale and insertion
// settings, validation modal).

import { ConsoleController } from "./controller";
import type { ArmDescription } from "./kinematics";
import type { MoveSummary } from "./protocol";
import { SceneView, type Scene } from "./view";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing #${id}`);
  return el as T;
};

const canvas = $<HTMLCanvasElement>("scene");
const view = new SceneView(canvas);

let arm: ArmDescription | null = null;
let scene: Scene = {};
let showTrails = true;

const banner = $("banner");
const statusEl = $("status");
const modal = $("modal");
const modalText = $("modal-text");

const controller = new ConsoleController(
  {
    onStatus(status, text) {
      statusEl.textContent = status;
      statusEl.className = `status ${status}`;
      banner.textContent = text ?? "";
      banner.style.display = text ? "block" : "none";
      for (const el of document.querySelectorAll<HTMLButtonElement>(".needs-conn")) {
        el.disabled = status !== "connected";
      }
      if (status !== "connected") modal.style.display = "none";
    },
    onMoveSummary(summary: MoveSummary) {
      const d = summary.tip_end_mm.map((v, i) => v - summary.tip_start_mm[i]);
      const dist = Math.hypot(d[0], d[1], d[2]);
      modalText.textContent =
        `Move #${summary.move_id}: ${summary.n_samples} samples, ` +
        `tip moved ${dist.toFixed(1)} mm ` +
        `(${summary.tip_start_mm.map((v) => v.toFixed(0)).join(", ")}) -> ` +
        `(${summary.tip_end_mm.map((v) => v.toFixed(0)).join(", ")})`;
      modal.style.display = "flex";
    },
    onNotice(text) {
      banner.textContent = text;
      banner.style.display = "block";
      setTimeout(() => {
        if (banner.textContent === text) banner.style.display = "none";
      }, 4000);
    },
  },
  {},
);

function connect() {
  const url = ($<HTMLInputElement>("server-url")).value;
  const ws = new WebSocket(url);
  const adapter = {
    send: (text: string) => ws.send(text),
    close: () => ws.close(),
    onmessage: null as ((text: string) => void) | null,
    onclose: null as (() => void) | null,
    onerror: null as (() => void) | null,
  };
  ws.onmessage = (ev) => adapter.onmessage?.(String(ev.data));
  ws.onclose = () => adapter.onclose?.();
  ws.onerror = () => adapter.onerror?.();
  ws.onopen = () => controller.attach(adapter);

  const httpBase = url.replace(/^ws/, "http").replace(/\/ws$/, "");
  void fetch(`${httpBase}/calibration`)
    .then((r) => r.json())
    .then((c) => controller.mapper.setCalibration(c))
    .catch(() => controller.mapper.setCalibration(null));
}

$("connect").addEventListener("click", connect);

// pinch control: hold the button or the space bar
const pinchBtn = $<HTMLButtonElement>("pinch");
pinchBtn.addEventListener("pointerdown", () => controller.pinchDown());
pinchBtn.addEventListener("pointerup", () => controller.pinchUp());
pinchBtn.addEventListener("pointerleave", () => controller.pinchUp());
document.addEventListener("keydown", (ev) => {
  if (ev.code === "Space" && !ev.repeat) controller.pinchDown();
});
document.addEventListener("keyup", (ev) => {
  if (ev.code === "Space") controller.pinchUp();
});

// drags over the canvas stream samples while the pinch is held
let lastPointer: [number, number] | null = null;
canvas.addEventListener("pointerdown", (ev) => {
  lastPointer = [ev.clientX, ev.clientY];
});
canvas.addEventListener("pointermove", (ev) => {
  if (lastPointer === null) return;
  const dx = ev.clientX - lastPointer[0];
  const dy = ev.clientY - lastPointer[1];
  lastPointer = [ev.clientX, ev.clientY];
  if (controller.pinchHeld) {
    controller.pointerMove(dx, dy);
  } else if (ev.buttons & 1) {
    view.angles.yaw += dx * 0.01; // orbit when not engaged
    view.angles.pitch = Math.max(0.1, Math.min(1.5, view.angles.pitch + dy * 0.01));
  }
});
canvas.addEventListener("pointerup", () => {
  lastPointer = null;
});
canvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  if (controller.pinchHeld) controller.wheel(-ev.deltaY / 120);
  else view.angles.zoom = Math.max(0.1, Math.min(2.0, view.angles.zoom * (1 - ev.deltaY / 1200)));
});

// validation modal
$("accept").addEventListener("click", () => {
  if (controller.answerValidation(true)) modal.style.display = "none";
});
$("reject").addEventListener("click", () => {
  if (controller.answerValidation(false)) modal.style.display = "none";
});

// settings
$("apply-scale").addEventListener("click", () => {
  controller.setScale(Number($<HTMLInputElement>("scale").value));
});
$("apply-increment").addEventListener("click", () => {
  controller.setInsertIncrement(Number($<HTMLInputElement>("increment").value));
  controller.setInsertVelocity(Number($<HTMLInputElement>("velocity").value));
});
$("approach").addEventListener("click", () => {
  if (scene.trocar_mm) controller.requestApproach(scene.trocar_mm);
});
$("insert-in").addEventListener("click", () => controller.insertStep("in"));
$("insert-out").addEventListener("click", () => controller.insertStep("out"));
$("trails").addEventListener("change", (ev) => {
  showTrails = (ev.target as HTMLInputElement).checked;
});

// scene + arm description files (shared formats with the server)
$<HTMLInputElement>("scene-file").addEventListener("change", async (ev) => {
  const file = (ev.target as HTMLInputElement).files?.[0];
  if (!file) return;
  const data = JSON.parse(await file.text());
  scene = (data.scene ?? data) as Scene;
});
$<HTMLInputElement>("arm-file").addEventListener("change", async (ev) => {
  const file = (ev.target as HTMLInputElement).files?.[0];
  if (!file) return;
  arm = JSON.parse(await file.text()) as ArmDescription;
});

// default arm matches the server defaults so the view works out of the box
arm = { link_offsets_mm: [360, 420, 400, 126], tool_offset_mm: 300 };

function frame() {
  view.render({
    arm,
    scene,
    broadcast: controller.lastBroadcast,
    handTrail: controller.handTrail,
    tipTrail: controller.tipTrail,
    stale: controller.isStale(),
    showTrails,
  });
  requestAnimationFrame(frame);
}
requestAnimationFrame(frame);
