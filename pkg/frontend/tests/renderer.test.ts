import { describe, expect, it } from "vitest";

import { fitViewport, worldToScreen } from "../src/renderer.js";
import type { VehicleView } from "../src/protocol.js";

function at(x: number, y: number): VehicleView {
  return { id: `${x},${y}`, kind: "shadow", x, y, yaw: 0, v: 0 };
}

describe("worldToScreen", () => {
  const vp = { width: 800, height: 600, pxPerM: 10, cx: 0, cy: 0 };

  it("maps the viewport center to the canvas center", () => {
    expect(worldToScreen(vp, 0, 0)).toEqual({ sx: 400, sy: 300 });
  });

  it("keeps x rightward and flips y so world-up is screen-up", () => {
    expect(worldToScreen(vp, 3, 0).sx).toBe(430);
    expect(worldToScreen(vp, 0, 3).sy).toBe(270);
  });

  it("respects an off-origin center", () => {
    const shifted = { ...vp, cx: 10, cy: -5 };
    expect(worldToScreen(shifted, 10, -5)).toEqual({ sx: 400, sy: 300 });
  });
});

describe("fitViewport", () => {
  it("falls back to a fixed span around origin when empty", () => {
    const vp = fitViewport(600, 600, []);
    expect(vp.cx).toBe(0);
    expect(vp.cy).toBe(0);
    expect(vp.pxPerM).toBe(20); // 600 px over 30 m
  });

  it("centers the bounding box and keeps every vehicle on screen", () => {
    const vehicles = [at(-10, 0), at(50, 20)];
    const vp = fitViewport(800, 600, vehicles);
    expect(vp.cx).toBe(20);
    expect(vp.cy).toBe(10);
    for (const v of vehicles) {
      const { sx, sy } = worldToScreen(vp, v.x, v.y);
      expect(sx).toBeGreaterThanOrEqual(0);
      expect(sx).toBeLessThanOrEqual(800);
      expect(sy).toBeGreaterThanOrEqual(0);
      expect(sy).toBeLessThanOrEqual(600);
    }
  });

  it("never zooms tighter than the minimum span", () => {
    const vp = fitViewport(600, 600, [at(0.1, 0), at(0.2, 0.1)]);
    expect(vp.pxPerM).toBe(20);
  });
});
