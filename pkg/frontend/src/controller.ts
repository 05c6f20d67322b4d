// Console state machine, kept free of DOM and WebSocket specifics so the
// gating rules are directly testable: wrist samples flow only while the
// pinch control is held, sequence numbers rise monotonically, every move
// summary gets exactly one validate, and a dropped connection mid-drag
// fail-safes with a synthetic pinch end.

import type { Vec3 } from "./kinematics";
import { PointerMapper } from "./mapping";
import {
  encodeOutbound,
  parseInbound,
  type MoveSummary,
  type Outbound,
  type StateBroadcast,
} from "./protocol";

export interface SocketLike {
  send(text: string): void;
  close(): void;
  onmessage: ((text: string) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
}

export type ConnectionStatus = "disconnected" | "connecting" | "connected";

export interface ControllerEvents {
  onStatus?(status: ConnectionStatus, banner: string | null): void;
  onBroadcast?(state: StateBroadcast): void;
  onMoveSummary?(summary: MoveSummary): void;
  onNotice?(text: string): void;
}

export interface ControllerOptions {
  clientId?: string;
  sampleRateHz?: number;
  handshakeTimeoutMs?: number;
  staleAfterMs?: number;
  now?: () => number;
  setTimer?: (fn: () => void, ms: number) => unknown;
  clearTimer?: (handle: unknown) => void;
}

export class ConsoleController {
  status: ConnectionStatus = "disconnected";
  pinchHeld = false;
  pendingSummary: MoveSummary | null = null;
  lastBroadcast: StateBroadcast | null = null;
  lastBroadcastAt = 0;
  readonly mapper = new PointerMapper();
  readonly outboundLog: Outbound[] = [];
  handTrail: Vec3[] = [];
  tipTrail: Vec3[] = [];
  trailLimit = 2000;

  private socket: SocketLike | null = null;
  private seq = 0;
  private anchorTipMm: Vec3 | null = null;
  private dragDxPx = 0;
  private dragDyPx = 0;
  private dragWheel = 0;
  private lastSampleAt = -Infinity;
  private validatedMoves = new Set<number>();
  private readonly clientId: string;
  private readonly samplePeriodMs: number;
  private readonly handshakeTimeoutMs: number;
  readonly staleAfterMs: number;
  private readonly now: () => number;
  private readonly setTimer: (fn: () => void, ms: number) => unknown;
  private readonly clearTimer: (handle: unknown) => void;
  private handshakeTimer: unknown = null;
  private readonly events: ControllerEvents;

  constructor(events: ControllerEvents = {}, opts: ControllerOptions = {}) {
    this.events = events;
    this.clientId = opts.clientId ?? `console-${Math.floor(Math.random() * 1e6)}`;
    this.samplePeriodMs = 1000 / (opts.sampleRateHz ?? 60);
    this.handshakeTimeoutMs = opts.handshakeTimeoutMs ?? 5000;
    this.staleAfterMs = opts.staleAfterMs ?? 500;
    this.now = opts.now ?? (() => Date.now());
    this.setTimer = opts.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimer = opts.clearTimer ?? ((h) => clearTimeout(h as number));
  }

  get controlsUnlocked(): boolean {
    return this.status === "connected";
  }

  attach(socket: SocketLike) {
    this.socket = socket;
    this.status = "connecting";
    this.emitStatus(null);
    socket.onmessage = (text) => this.handleMessage(text);
    socket.onclose = () => this.handleDisconnect();
    socket.onerror = () => this.handleDisconnect();
    this.sendRaw({ type: "hello", client_id: this.clientId, role: "operator" });
    this.handshakeTimer = this.setTimer(() => {
      if (this.status === "connecting") {
        this.status = "disconnected";
        this.emitStatus("handshake timed out after 5 s");
        this.socket?.close();
      }
    }, this.handshakeTimeoutMs);
  }

  private handleMessage(text: string) {
    const msg = parseInbound(text);
    if (msg === null) return;
    switch (msg.type) {
      case "hello_ack":
        if (this.handshakeTimer !== null) this.clearTimer(this.handshakeTimer);
        this.status = "connected";
        this.emitStatus(null);
        break;
      case "state":
        this.lastBroadcast = msg;
        this.lastBroadcastAt = this.now();
        this.pushTrail(this.tipTrail, msg.tip_mm);
        this.events.onBroadcast?.(msg);
        break;
      case "move_summary":
        this.pendingSummary = msg;
        this.events.onMoveSummary?.(msg);
        break;
      case "error":
        if (msg.code === "busy" && this.pinchHeld) {
          // our pinch_start was rejected: no window opened server-side, so
          // drop the drag locally without a stray pinch_end
          this.pinchHeld = false;
          this.anchorTipMm = null;
          this.events.onNotice?.("server busy: drag canceled");
        } else {
          this.events.onNotice?.(`server error: ${msg.code}`);
        }
        break;
    }
  }

  private handleDisconnect() {
    if (this.pinchHeld) {
      // fail safe: never leave the server inside a pinch window; clear the
      // flag first so a throwing send cannot re-enter this branch
      this.pinchHeld = false;
      this.anchorTipMm = null;
      this.sendRaw({
        type: "pinch_end",
        t_client_ms: Math.round(this.now()),
        last_seq: this.seq,
      });
    }
    const wasConnected = this.status !== "disconnected";
    this.status = "disconnected";
    this.socket = null;
    if (wasConnected) this.emitStatus("connection lost; controls locked");
  }

  // pinch lifecycle ---------------------------------------------------------

  pinchDown(): boolean {
    if (!this.controlsUnlocked || this.pinchHeld) return false;
    if (this.lastBroadcast === null) {
      this.events.onNotice?.("no robot state yet; cannot start a move");
      return false;
    }
    this.pinchHeld = true;
    this.anchorTipMm = [...this.lastBroadcast.tip_mm] as Vec3;
    this.dragDxPx = 0;
    this.dragDyPx = 0;
    this.dragWheel = 0;
    this.lastSampleAt = -Infinity;
    this.handTrail = [];
    this.sendRaw({ type: "pinch_start", t_client_ms: Math.round(this.now()) });
    this.emitSample(); // anchor sample: zero displacement by construction
    return true;
  }

  pointerMove(dxPx: number, dyPx: number): void {
    if (!this.pinchHeld) return; // suppressed when not engaged
    this.dragDxPx += dxPx;
    this.dragDyPx += dyPx;
    this.maybeEmitSample();
  }

  wheel(notches: number): void {
    if (!this.pinchHeld) return;
    this.dragWheel += notches;
    this.maybeEmitSample();
  }

  pinchUp(): void {
    if (!this.pinchHeld) return;
    this.emitSample(); // final position, uncoalesced
    this.pinchHeld = false;
    this.anchorTipMm = null;
    this.sendRaw({
      type: "pinch_end",
      t_client_ms: Math.round(this.now()),
      last_seq: this.seq,
    });
  }

  private maybeEmitSample() {
    const t = this.now();
    if (t - this.lastSampleAt < this.samplePeriodMs) return; // coalesce to <= rate
    this.emitSample();
  }

  private emitSample() {
    if (!this.pinchHeld || this.anchorTipMm === null) return;
    const d = this.mapper.dragDisplacementMm(this.dragDxPx, this.dragDyPx, this.dragWheel);
    const robotMm: Vec3 = [
      this.anchorTipMm[0] + d[0],
      this.anchorTipMm[1] + d[1],
      this.anchorTipMm[2] + d[2],
    ];
    const s = this.mapper.toOperatorMeters(robotMm);
    this.seq += 1;
    this.lastSampleAt = this.now();
    this.pushTrail(this.handTrail, robotMm);
    this.sendRaw({
      type: "wrist",
      seq: this.seq,
      t_client_ms: Math.round(this.now()),
      x_m: s[0],
      y_m: s[1],
      z_m: s[2],
    });
  }

  // validation --------------------------------------------------------------

  answerValidation(accepted: boolean): boolean {
    const summary = this.pendingSummary;
    if (summary === null) return false;
    if (this.validatedMoves.has(summary.move_id)) return false; // double submit
    this.validatedMoves.add(summary.move_id);
    this.pendingSummary = null;
    this.sendRaw({ type: "validate", move_id: summary.move_id, accepted });
    return true;
  }

  // settings ----------------------------------------------------------------

  setScale(scale: number) {
    this.sendRaw({ type: "config_set", scale });
  }

  setInsertIncrement(mm: number) {
    this.sendRaw({ type: "config_set", insert_increment_mm: mm });
  }

  setInsertVelocity(mmPerS: number) {
    this.sendRaw({ type: "config_set", insert_velocity_mm_s: mmPerS });
  }

  requestApproach(trocarMm: Vec3) {
    this.sendRaw({ type: "approach", trocar_mm: trocarMm });
  }

  insertStep(direction: "in" | "out") {
    this.sendRaw({ type: "insert", direction });
  }

  isStale(): boolean {
    return (
      this.lastBroadcast !== null && this.now() - this.lastBroadcastAt > this.staleAfterMs
    );
  }

  // plumbing ----------------------------------------------------------------

  private pushTrail(trail: Vec3[], p: Vec3 | [number, number, number]) {
    trail.push([p[0], p[1], p[2]]);
    if (trail.length > this.trailLimit) trail.shift();
  }

  private sendRaw(msg: Outbound) {
    if (this.socket === null) return;
    this.outboundLog.push(msg);
    try {
      this.socket.send(encodeOutbound(msg));
    } catch {
      this.handleDisconnect();
    }
  }

  private emitStatus(banner: string | null) {
    this.events.onStatus?.(this.status, banner);
  }
}
