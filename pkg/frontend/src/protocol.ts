// Wire messages exchanged with the teleoperation server. One JSON object per
// WebSocket text frame; numeric vectors are plain arrays.

export interface Hello {
  type: "hello";
  client_id: string;
  role: string;
}

export interface HelloAck {
  type: "hello_ack";
  session_id: string;
  server_version: string;
}

export interface PinchStart {
  type: "pinch_start";
  t_client_ms: number;
}

export interface WristSample {
  type: "wrist";
  seq: number;
  t_client_ms: number;
  x_m: number;
  y_m: number;
  z_m: number;
}

export interface PinchEnd {
  type: "pinch_end";
  t_client_ms: number;
  last_seq: number;
}

export interface MoveSummary {
  type: "move_summary";
  move_id: number;
  n_samples: number;
  tip_start_mm: [number, number, number];
  tip_end_mm: [number, number, number];
}

export interface Validate {
  type: "validate";
  move_id: number;
  accepted: boolean;
}

export interface StateBroadcast {
  type: "state";
  tick: number;
  joints_rad: number[];
  tip_mm: [number, number, number];
  mode: "free_space" | "approach" | "inserted";
  engaged_client?: string | null;
}

export interface ConfigSet {
  type: "config_set";
  scale?: number;
  insert_increment_mm?: number;
  insert_velocity_mm_s?: number;
}

export interface ApproachTrocar {
  type: "approach";
  trocar_mm: [number, number, number];
}

export interface InsertStep {
  type: "insert";
  direction: "in" | "out";
}

export interface ErrorMsg {
  type: "error";
  code: string;
  detail?: string;
}

export type Outbound =
  | Hello
  | PinchStart
  | WristSample
  | PinchEnd
  | Validate
  | ConfigSet
  | ApproachTrocar
  | InsertStep;

export type Inbound = HelloAck | MoveSummary | StateBroadcast | ErrorMsg;

export function parseInbound(text: string): Inbound | null {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof raw !== "object" || raw === null) return null;
  const msg = raw as { type?: unknown };
  switch (msg.type) {
    case "hello_ack":
    case "move_summary":
    case "state":
    case "error":
      return raw as Inbound;
    default:
      return null; // unknown server messages are ignored, not fatal
  }
}

export function encodeOutbound(msg: Outbound): string {
  return JSON.stringify(msg);
}
