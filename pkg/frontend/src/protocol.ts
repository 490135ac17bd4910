/**
 * The JSON messages the cockpit exchanges with the serve endpoint.
 *
 * Downstream the server sends one `global_state` per broadcast and a `pong`
 * for every `ping`. Upstream the cockpit sends `control` and `ping`. The
 * server closes the connection on any message that violates this schema, so
 * the encoders here are deliberately the only way the rest of the cockpit
 * can produce outbound traffic.
 *
 * Parsing is strict but non-fatal: a frame that does not match comes back
 * as null and the caller drops it. The server is trusted, yet a cockpit
 * that dies on one odd frame mid-drive is worse than one that skips it.
 */

export interface VehicleView {
  id: string;
  kind: string; // "shadow" | "virtual" | "user"
  x: number;
  y: number;
  yaw: number; // radians, world frame
  v: number; // m/s
}

export interface GlobalStateMsg {
  type: "global_state";
  seq: number;
  vehicles: VehicleView[];
}

export interface PongMsg {
  type: "pong";
  ts: number; // echoed from our ping, our clock
  server_ts_ms: number;
}

export type ServerMsg = GlobalStateMsg | PongMsg;

export interface ControlMsg {
  type: "control";
  target: string;
  steer_deg: number;
  accel: number; // m/s^2, negative is engine braking
  brake: number; // percent 0..100
  turn_left: boolean;
  turn_right: boolean;
  engage: boolean;
}

function finiteNumber(value: unknown): value is number {
  // JSON.parse("1e999") yields Infinity, so typeof alone is not enough.
  return typeof value === "number" && Number.isFinite(value);
}

function parseVehicle(value: unknown): VehicleView | null {
  if (typeof value !== "object" || value === null) return null;
  const doc = value as Record<string, unknown>;
  if (typeof doc.id !== "string" || doc.id === "") return null;
  if (typeof doc.kind !== "string") return null;
  if (!finiteNumber(doc.x) || !finiteNumber(doc.y)) return null;
  if (!finiteNumber(doc.yaw) || !finiteNumber(doc.v)) return null;
  return {
    id: doc.id,
    kind: doc.kind,
    x: doc.x,
    y: doc.y,
    yaw: doc.yaw,
    v: doc.v,
  };
}

/** Parse one inbound frame; null means "not for us, drop it". */
export function parseServerMessage(text: string): ServerMsg | null {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null) return null;
  const msg = doc as Record<string, unknown>;

  if (msg.type === "global_state") {
    if (!finiteNumber(msg.seq) || !Array.isArray(msg.vehicles)) return null;
    const vehicles: VehicleView[] = [];
    for (const entry of msg.vehicles) {
      const vehicle = parseVehicle(entry);
      if (vehicle === null) return null;
      vehicles.push(vehicle);
    }
    return { type: "global_state", seq: msg.seq, vehicles };
  }

  if (msg.type === "pong") {
    if (!finiteNumber(msg.ts) || !finiteNumber(msg.server_ts_ms)) return null;
    return { type: "pong", ts: msg.ts, server_ts_ms: msg.server_ts_ms };
  }

  return null;
}

export function encodeControl(msg: ControlMsg): string {
  if (msg.target === "") throw new Error("control needs a target id");
  for (const value of [msg.steer_deg, msg.accel, msg.brake]) {
    if (!Number.isFinite(value)) {
      throw new Error("control numbers must be finite");
    }
  }
  return JSON.stringify({
    type: "control",
    target: msg.target,
    steer_deg: msg.steer_deg,
    accel: msg.accel,
    brake: msg.brake,
    turn_left: msg.turn_left,
    turn_right: msg.turn_right,
    engage: msg.engage,
  });
}

export function encodePing(ts: number): string {
  return JSON.stringify({ type: "ping", ts });
}
