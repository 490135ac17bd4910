/**
 * Client-side picture of the world.
 *
 * The model holds exactly what the newest accepted broadcast said, nothing
 * interpolated and nothing extrapolated; the server already did the
 * predict-to-now work and two clients staring at the same seq must see the
 * same numbers. Broadcasts can arrive reordered after a reconnect, so any
 * seq at or below the last accepted one is ignored.
 */

import type { GlobalStateMsg, PongMsg, VehicleView } from "./protocol.js";

export interface TrailPoint {
  x: number;
  y: number;
}

const TRAIL_MAX = 240; // points per vehicle, ~24 s at 10 Hz

export class WorldModel {
  seq = -1;
  lastBroadcastAtMs: number | null = null;
  /** One-way estimate from the ping/pong exchange, null until the first pong. */
  latencyMs: number | null = null;
  dropped = 0; // stale or duplicate broadcasts

  private byId = new Map<string, VehicleView>();
  private order: string[] = [];
  private trails = new Map<string, TrailPoint[]>();

  /** Returns true when the broadcast was newer than anything seen so far. */
  applyGlobalState(msg: GlobalStateMsg, nowMs: number): boolean {
    if (msg.seq <= this.seq) {
      this.dropped += 1;
      return false;
    }
    this.seq = msg.seq;
    this.lastBroadcastAtMs = nowMs;
    this.byId.clear();
    this.order = [];
    for (const vehicle of msg.vehicles) {
      this.byId.set(vehicle.id, vehicle);
      this.order.push(vehicle.id);
      let trail = this.trails.get(vehicle.id);
      if (trail === undefined) {
        trail = [];
        this.trails.set(vehicle.id, trail);
      }
      trail.push({ x: vehicle.x, y: vehicle.y });
      if (trail.length > TRAIL_MAX) trail.shift();
    }
    for (const id of [...this.trails.keys()]) {
      if (!this.byId.has(id)) this.trails.delete(id);
    }
    return true;
  }

  applyPong(msg: PongMsg, nowMs: number): void {
    this.latencyMs = Math.max(0, (nowMs - msg.ts) / 2);
  }

  vehicle(id: string): VehicleView | null {
    return this.byId.get(id) ?? null;
  }

  /** Vehicles in broadcast order, the exact objects the parser produced. */
  vehicles(): VehicleView[] {
    return this.order.map((id) => this.byId.get(id)!);
  }

  ids(): string[] {
    return [...this.order];
  }

  trail(id: string): readonly TrailPoint[] {
    return this.trails.get(id) ?? [];
  }

  /** Milliseconds since the last accepted broadcast, null before the first. */
  ageMs(nowMs: number): number | null {
    if (this.lastBroadcastAtMs === null) return null;
    return Math.max(0, nowMs - this.lastBroadcastAtMs);
  }
}
