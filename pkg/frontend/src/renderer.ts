/**
 * Top-down canvas painting. World frame is meters, x right, y up; the
 * canvas y axis points down, so worldToScreen flips it. Everything here is
 * draw-only; the numbers come straight from the view model.
 */

import type { VehicleView } from "./protocol.js";
import type { TrailPoint, WorldModel } from "./viewmodel.js";

export interface Viewport {
  width: number; // canvas px
  height: number;
  pxPerM: number;
  cx: number; // world point at the canvas center
  cy: number;
}

export function worldToScreen(
  vp: Viewport,
  x: number,
  y: number,
): { sx: number; sy: number } {
  return {
    sx: vp.width / 2 + (x - vp.cx) * vp.pxPerM,
    sy: vp.height / 2 - (y - vp.cy) * vp.pxPerM,
  };
}

/**
 * Center on the vehicles and pick a scale that keeps them all on screen
 * with some margin. An empty world gets a fixed 30 m span around origin.
 */
export function fitViewport(
  width: number,
  height: number,
  vehicles: readonly VehicleView[],
  minSpanM = 30,
): Viewport {
  let cx = 0;
  let cy = 0;
  let span = minSpanM;
  if (vehicles.length > 0) {
    let loX = Infinity;
    let hiX = -Infinity;
    let loY = Infinity;
    let hiY = -Infinity;
    for (const v of vehicles) {
      loX = Math.min(loX, v.x);
      hiX = Math.max(hiX, v.x);
      loY = Math.min(loY, v.y);
      hiY = Math.max(hiY, v.y);
    }
    cx = (loX + hiX) / 2;
    cy = (loY + hiY) / 2;
    span = Math.max(minSpanM, (hiX - loX) * 1.3, (hiY - loY) * 1.3);
  }
  const pxPerM = Math.min(width, height) / span;
  return { width, height, pxPerM, cx, cy };
}

const KIND_COLORS: Record<string, string> = {
  shadow: "#3fd2e0",
  virtual: "#e0a43f",
  user: "#9a9fae",
};

const GRID_M = 5;

function drawGrid(ctx: CanvasRenderingContext2D, vp: Viewport): void {
  const halfW = vp.width / 2 / vp.pxPerM;
  const halfH = vp.height / 2 / vp.pxPerM;
  ctx.lineWidth = 1;
  const x0 = Math.floor((vp.cx - halfW) / GRID_M) * GRID_M;
  const y0 = Math.floor((vp.cy - halfH) / GRID_M) * GRID_M;
  for (let x = x0; x <= vp.cx + halfW; x += GRID_M) {
    const { sx } = worldToScreen(vp, x, 0);
    ctx.strokeStyle = x === 0 ? "#3a4154" : "#22283a";
    ctx.beginPath();
    ctx.moveTo(sx, 0);
    ctx.lineTo(sx, vp.height);
    ctx.stroke();
  }
  for (let y = y0; y <= vp.cy + halfH; y += GRID_M) {
    const { sy } = worldToScreen(vp, 0, y);
    ctx.strokeStyle = y === 0 ? "#3a4154" : "#22283a";
    ctx.beginPath();
    ctx.moveTo(0, sy);
    ctx.lineTo(vp.width, sy);
    ctx.stroke();
  }
}

function drawTrail(
  ctx: CanvasRenderingContext2D,
  vp: Viewport,
  trail: readonly TrailPoint[],
  color: string,
): void {
  if (trail.length < 2) return;
  ctx.strokeStyle = color;
  ctx.globalAlpha = 0.35;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  const first = worldToScreen(vp, trail[0].x, trail[0].y);
  ctx.moveTo(first.sx, first.sy);
  for (let i = 1; i < trail.length; i += 1) {
    const p = worldToScreen(vp, trail[i].x, trail[i].y);
    ctx.lineTo(p.sx, p.sy);
  }
  ctx.stroke();
  ctx.globalAlpha = 1;
}

function drawVehicle(
  ctx: CanvasRenderingContext2D,
  vp: Viewport,
  vehicle: VehicleView,
  selected: boolean,
): void {
  const color = KIND_COLORS[vehicle.kind] ?? "#c5c9d4";
  const { sx, sy } = worldToScreen(vp, vehicle.x, vehicle.y);
  const len = Math.max(2.2 * vp.pxPerM, 10);
  const wid = len * 0.55;

  ctx.save();
  ctx.translate(sx, sy);
  ctx.rotate(-vehicle.yaw); // screen y is flipped, so rotation flips too
  ctx.fillStyle = color;
  ctx.beginPath();
  ctx.moveTo(len * 0.6, 0); // nose
  ctx.lineTo(-len * 0.4, wid / 2);
  ctx.lineTo(-len * 0.4, -wid / 2);
  ctx.closePath();
  ctx.fill();
  if (selected) {
    ctx.strokeStyle = "#f2f4f8";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.arc(0, 0, len * 0.85, 0, Math.PI * 2);
    ctx.stroke();
  }
  ctx.restore();

  ctx.fillStyle = "#aeb4c2";
  ctx.font = "11px system-ui, sans-serif";
  ctx.fillText(
    `${vehicle.id} ${vehicle.v.toFixed(1)} m/s`,
    sx + len * 0.7,
    sy - len * 0.7,
  );
}

export function drawWorld(
  ctx: CanvasRenderingContext2D,
  vp: Viewport,
  model: WorldModel,
  selectedId: string | null,
): void {
  ctx.fillStyle = "#12151f";
  ctx.fillRect(0, 0, vp.width, vp.height);
  drawGrid(ctx, vp);
  for (const vehicle of model.vehicles()) {
    const color = KIND_COLORS[vehicle.kind] ?? "#c5c9d4";
    drawTrail(ctx, vp, model.trail(vehicle.id), color);
  }
  for (const vehicle of model.vehicles()) {
    drawVehicle(ctx, vp, vehicle, vehicle.id === selectedId);
  }
}
