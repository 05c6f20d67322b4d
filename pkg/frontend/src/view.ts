// Canvas scene: orthographic projection of the arm, targets, trocar and the
// hand/tip trails, with mouse-orbitable view angles. Projection math is kept
// separate from canvas calls so it is testable headless.

import { forwardKinematics, type ArmDescription, type Vec3 } from "./kinematics";
import type { StateBroadcast } from "./protocol";

export interface Scene {
  targets_mm?: Vec3[];
  trocar_mm?: Vec3;
  plane_z_mm?: number;
}

export interface ViewAngles {
  yaw: number; // around world z
  pitch: number; // tilt toward the viewer
  zoom: number; // px per mm
}

export function projectPoint(p: Vec3, v: ViewAngles, cx: number, cy: number): [number, number] {
  const cy_ = Math.cos(v.yaw);
  const sy_ = Math.sin(v.yaw);
  const cp = Math.cos(v.pitch);
  const sp = Math.sin(v.pitch);
  const x1 = cy_ * p[0] - sy_ * p[1];
  const y1 = sy_ * p[0] + cy_ * p[1];
  const y2 = cp * y1 - sp * p[2];
  return [cx + x1 * v.zoom, cy + y2 * v.zoom];
}

export interface SceneViewState {
  arm: ArmDescription | null;
  scene: Scene;
  broadcast: StateBroadcast | null;
  handTrail: Vec3[];
  tipTrail: Vec3[];
  stale: boolean;
  showTrails: boolean;
}

export class SceneView {
  angles: ViewAngles = { yaw: -0.6, pitch: 1.05, zoom: 0.42 };
  origin: Vec3 = [300, 0, 500]; // world point drawn at the canvas center

  constructor(private canvas: HTMLCanvasElement) {}

  private project(p: Vec3): [number, number] {
    const shifted: Vec3 = [p[0] - this.origin[0], p[1] - this.origin[1], p[2] - this.origin[2]];
    return projectPoint(shifted, this.angles, this.canvas.width / 2, this.canvas.height / 2);
  }

  render(state: SceneViewState) {
    const ctx = this.canvas.getContext("2d");
    if (ctx === null) return;
    const { width, height } = this.canvas;
    ctx.fillStyle = "#10141a";
    ctx.fillRect(0, 0, width, height);
    this.drawGrid(ctx, state.scene.plane_z_mm ?? 0);

    if (state.scene.targets_mm)
      for (const [i, t] of state.scene.targets_mm.entries()) this.drawMarker(ctx, t, `${i + 1}`, "#ffd54a");
    if (state.scene.trocar_mm) this.drawMarker(ctx, state.scene.trocar_mm, "T", "#ff7043");

    if (state.showTrails) {
      this.drawTrail(ctx, state.handTrail, "#e53935");
      this.drawTrail(ctx, state.tipTrail, "#42a5f5");
    }

    if (state.broadcast !== null && state.arm !== null) {
      const pose = forwardKinematics(state.arm, state.broadcast.joints_rad);
      ctx.strokeStyle = state.stale ? "#666" : "#cfd8dc";
      ctx.lineWidth = 5;
      ctx.lineCap = "round";
      ctx.beginPath();
      const pts = pose.joints_mm.map((p) => this.project(p));
      ctx.moveTo(pts[0][0], pts[0][1]);
      for (const [x, y] of pts.slice(1)) ctx.lineTo(x, y);
      ctx.stroke();
      // camera shaft
      const flange = this.project(pose.flange_mm);
      const tip = this.project(pose.tip_mm);
      ctx.strokeStyle = state.stale ? "#555" : "#80cbc4";
      ctx.lineWidth = 2.5;
      ctx.beginPath();
      ctx.moveTo(flange[0], flange[1]);
      ctx.lineTo(tip[0], tip[1]);
      ctx.stroke();
      ctx.fillStyle = "#42a5f5";
      ctx.beginPath();
      ctx.arc(tip[0], tip[1], 5, 0, 2 * Math.PI);
      ctx.fill();
    } else {
      ctx.fillStyle = "#546e7a";
      ctx.font = "14px system-ui";
      ctx.fillText("waiting for robot state…", 16, 26);
    }

    if (state.stale) {
      ctx.fillStyle = "#ef5350";
      ctx.font = "bold 13px system-ui";
      ctx.fillText("STALE — no broadcast for 500 ms", 16, height - 14);
    }
  }

  private drawGrid(ctx: CanvasRenderingContext2D, zMm: number) {
    ctx.strokeStyle = "#1d2630";
    ctx.lineWidth = 1;
    const span = 400;
    const step = 100;
    for (let x = -span; x <= span; x += step) {
      const a = this.project([this.origin[0] + x, this.origin[1] - span, zMm]);
      const b = this.project([this.origin[0] + x, this.origin[1] + span, zMm]);
      ctx.beginPath();
      ctx.moveTo(a[0], a[1]);
      ctx.lineTo(b[0], b[1]);
      ctx.stroke();
    }
    for (let y = -span; y <= span; y += step) {
      const a = this.project([this.origin[0] - span, this.origin[1] + y, zMm]);
      const b = this.project([this.origin[0] + span, this.origin[1] + y, zMm]);
      ctx.beginPath();
      ctx.moveTo(a[0], a[1]);
      ctx.lineTo(b[0], b[1]);
      ctx.stroke();
    }
  }

  private drawMarker(ctx: CanvasRenderingContext2D, p: Vec3, label: string, color: string) {
    const [x, y] = this.project(p);
    ctx.fillStyle = color;
    ctx.beginPath();
    ctx.arc(x, y, 6, 0, 2 * Math.PI);
    ctx.fill();
    ctx.fillStyle = "#10141a";
    ctx.font = "bold 9px system-ui";
    ctx.textAlign = "center";
    ctx.textBaseline = "middle";
    ctx.fillText(label, x, y);
    ctx.textAlign = "start";
    ctx.textBaseline = "alphabetic";
  }

  private drawTrail(ctx: CanvasRenderingContext2D, trail: Vec3[], color: string) {
    if (trail.length < 2) return;
    ctx.strokeStyle = color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    const first = this.project(trail[0]);
    ctx.moveTo(first[0], first[1]);
    for (const p of trail.slice(1)) {
      const [x, y] = this.project(p);
      ctx.lineTo(x, y);
    }
    ctx.stroke();
  }
}
