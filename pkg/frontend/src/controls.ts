/**
 * Driver inputs -> rate-limited control messages.
 *
 * Inputs are normalized (-1..1 for steer and accel, 0..1 for brake) so the
 * same code serves keyboard, sliders, or a gamepad later. Outputs are the
 * physical values the wire schema wants. Three rules shape the stream:
 *
 *  - nothing is sent while disengaged, except the one disengage message
 *    itself, which commands a full brake so the vehicle stops rather than
 *    coasting on its last order;
 *  - while engaged, sends are spaced at least 1/SEND_HZ apart (engage and
 *    disengage bypass the limiter: a safety edge must never wait);
 *  - releasing steer or accel does not snap to zero, the value ramps down
 *    over RELEASE_S the way a relaxed hand lets a wheel return. Brake is
 *    momentary and drops immediately.
 */

import type { ControlMsg } from "./protocol.js";

export const STEER_LIMIT_DEG = 30;
export const ACCEL_LIMIT = 5; // m/s^2, either sign
export const BRAKE_LIMIT = 100; // percent
export const SEND_HZ = 10;
export const RELEASE_S = 0.5;

function clamp(value: number, lo: number, hi: number): number {
  return Math.min(Math.max(value, lo), hi);
}

interface Axis {
  input: number; // normalized, held value
  releaseFrom: number; // physical value at the moment of release
  releaseAtMs: number | null;
}

export type ControlSink = (msg: ControlMsg) => void;

export class Cockpit {
  target: string | null = null;
  engaged = false;

  private steer: Axis = { input: 0, releaseFrom: 0, releaseAtMs: null };
  private accel: Axis = { input: 0, releaseFrom: 0, releaseAtMs: null };
  private brakeInput = 0;
  private turnLeft = false;
  private turnRight = false;
  private lastSentAtMs = -Infinity;

  constructor(
    private readonly send: ControlSink,
    private readonly now: () => number = () => Date.now(),
  ) {}

  setSteerInput(value: number): void {
    this.setAxis(this.steer, clamp(value, -1, 1), STEER_LIMIT_DEG);
  }

  setAccelInput(value: number): void {
    this.setAxis(this.accel, clamp(value, -1, 1), ACCEL_LIMIT);
  }

  setBrakeInput(value: number): void {
    this.brakeInput = clamp(value, 0, 1);
  }

  setSignals(left: boolean, right: boolean): void {
    this.turnLeft = left;
    this.turnRight = right;
  }

  private setAxis(axis: Axis, input: number, limit: number): void {
    if (input === 0) {
      if (axis.input !== 0) {
        axis.releaseFrom = axis.input * limit;
        axis.releaseAtMs = this.now();
      }
    } else {
      axis.releaseAtMs = null;
    }
    axis.input = input;
  }

  private axisValue(axis: Axis, limit: number, nowMs: number): number {
    if (axis.input !== 0) return axis.input * limit;
    if (axis.releaseAtMs === null) return 0;
    const fraction = 1 - (nowMs - axis.releaseAtMs) / (RELEASE_S * 1000);
    if (fraction <= 0) {
      axis.releaseAtMs = null;
      return 0;
    }
    return axis.releaseFrom * fraction;
  }

  /** The physical command as of now; what tick() would put on the wire. */
  current(): { steer_deg: number; accel: number; brake: number } {
    const nowMs = this.now();
    return {
      steer_deg: this.axisValue(this.steer, STEER_LIMIT_DEG, nowMs),
      accel: this.axisValue(this.accel, ACCEL_LIMIT, nowMs),
      brake: this.brakeInput * BRAKE_LIMIT,
    };
  }

  private compose(): ControlMsg | null {
    if (this.target === null) return null;
    const values = this.current();
    return {
      type: "control",
      target: this.target,
      steer_deg: values.steer_deg,
      accel: values.accel,
      brake: values.brake,
      turn_left: this.turnLeft,
      turn_right: this.turnRight,
      engage: this.engaged,
    };
  }

  /** Take control. Sends immediately; returns what went out, if anything. */
  engage(): ControlMsg | null {
    if (this.engaged || this.target === null) return null;
    this.engaged = true;
    return this.emit();
  }

  /**
   * Hand control back. The final message forces brake to 100 and accel to 0
   * regardless of the current inputs, then all inputs reset.
   */
  disengage(): ControlMsg | null {
    if (!this.engaged || this.target === null) return null;
    this.engaged = false;
    const msg: ControlMsg = {
      type: "control",
      target: this.target,
      steer_deg: 0,
      accel: 0,
      brake: BRAKE_LIMIT,
      turn_left: false,
      turn_right: false,
      engage: false,
    };
    this.reset();
    this.send(msg);
    this.lastSentAtMs = this.now();
    return msg;
  }

  /** Periodic driver; call at least at SEND_HZ. Honors the rate limit. */
  tick(): ControlMsg | null {
    if (!this.engaged) return null;
    if (this.now() - this.lastSentAtMs < 1000 / SEND_HZ) return null;
    return this.emit();
  }

  private emit(): ControlMsg | null {
    const msg = this.compose();
    if (msg === null) return null;
    this.send(msg);
    this.lastSentAtMs = this.now();
    return msg;
  }

  private reset(): void {
    this.steer = { input: 0, releaseFrom: 0, releaseAtMs: null };
    this.accel = { input: 0, releaseFrom: 0, releaseAtMs: null };
    this.brakeInput = 0;
    this.turnLeft = false;
    this.turnRight = false;
  }
}
