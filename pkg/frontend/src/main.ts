/**
 * Page wiring. Everything interesting lives in the other modules; this file
 * finds DOM nodes, forwards events, and runs the paint loop.
 *
 * Keyboard: arrows steer and accelerate, space brakes, q/e toggle the turn
 * signals, g toggles engage. Sliders mirror the same inputs for mouse use.
 */

import { Cockpit } from "./controls.js";
import { CockpitLink } from "./net.js";
import type { LinkStatus } from "./net.js";
import { drawWorld, fitViewport } from "./renderer.js";
import { WorldModel } from "./viewmodel.js";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el as T;
}

const canvas = byId<HTMLCanvasElement>("world");
const ctx = canvas.getContext("2d")!;
const statusEl = byId<HTMLSpanElement>("status");
const hudEl = byId<HTMLDivElement>("hud");
const targetSel = byId<HTMLSelectElement>("target");
const engageBtn = byId<HTMLButtonElement>("engage");
const steerSlider = byId<HTMLInputElement>("steer");
const accelSlider = byId<HTMLInputElement>("accel");
const brakeSlider = byId<HTMLInputElement>("brake");

const params = new URLSearchParams(location.search);
const wsUrl =
  params.get("ws") ?? `ws://${location.hostname || "127.0.0.1"}:8765`;

const model = new WorldModel();
const link = new CockpitLink(wsUrl, {
  onState: (msg) => model.applyGlobalState(msg, Date.now()),
  onPong: (msg) => model.applyPong(msg, Date.now()),
  onStatus: (status) => onStatus(status),
});
const cockpit = new Cockpit((msg) => link.sendControl(msg));

function onStatus(status: LinkStatus): void {
  statusEl.textContent = status;
  statusEl.className = `status ${status}`;
  engageBtn.disabled = status !== "online";
  if (status !== "online" && cockpit.engaged) {
    // the send inside will fail, but the local state must drop to
    // disengaged so the pilot re-engages deliberately after a loss
    cockpit.disengage();
  }
}

// ------------------------------------------------------------- target pick

let knownIds = "";

function refreshTargets(): void {
  const ids = model.ids();
  const key = ids.join(",");
  if (key === knownIds) return;
  knownIds = key;
  const previous = targetSel.value;
  targetSel.innerHTML = "";
  for (const id of ids) {
    const opt = document.createElement("option");
    opt.value = id;
    opt.textContent = id;
    targetSel.appendChild(opt);
  }
  if (ids.includes(previous)) {
    targetSel.value = previous;
  } else if (ids.includes("shadow-0")) {
    targetSel.value = "shadow-0";
  }
  cockpit.target = targetSel.value || null;
}

targetSel.addEventListener("change", () => {
  if (cockpit.engaged) cockpit.disengage();
  cockpit.target = targetSel.value || null;
});

// ---------------------------------------------------------------- controls

engageBtn.addEventListener("click", () => {
  if (cockpit.engaged) {
    cockpit.disengage();
  } else {
    cockpit.engage();
  }
});

const held = new Set<string>();

function applyHeldKeys(): void {
  const steer = (held.has("ArrowLeft") ? 1 : 0) - (held.has("ArrowRight") ? 1 : 0);
  const accel = (held.has("ArrowUp") ? 1 : 0) - (held.has("ArrowDown") ? 1 : 0);
  cockpit.setSteerInput(steer);
  cockpit.setAccelInput(accel * 0.4); // arrows ask for a civil 2 m/s^2
  cockpit.setBrakeInput(held.has(" ") ? 1 : 0);
}

window.addEventListener("keydown", (ev) => {
  if (ev.repeat) return;
  if (ev.key === "g") {
    engageBtn.click();
    return;
  }
  if (ev.key === "q" || ev.key === "e") {
    const left = ev.key === "q";
    cockpit.setSignals(left, !left);
    return;
  }
  if (["ArrowLeft", "ArrowRight", "ArrowUp", "ArrowDown", " "].includes(ev.key)) {
    ev.preventDefault();
    held.add(ev.key);
    applyHeldKeys();
  }
});

window.addEventListener("keyup", (ev) => {
  if (held.delete(ev.key)) applyHeldKeys();
});

steerSlider.addEventListener("input", () => {
  cockpit.setSteerInput(Number(steerSlider.value));
});
accelSlider.addEventListener("input", () => {
  cockpit.setAccelInput(Number(accelSlider.value));
});
brakeSlider.addEventListener("input", () => {
  cockpit.setBrakeInput(Number(brakeSlider.value));
});

setInterval(() => cockpit.tick(), 20);

// ------------------------------------------------------------- paint loop

function resize(): void {
  canvas.width = canvas.clientWidth;
  canvas.height = canvas.clientHeight;
}
window.addEventListener("resize", resize);
resize();

function hudText(): string {
  const now = Date.now();
  const age = model.ageMs(now);
  const cmd = cockpit.current();
  const lines = [
    `seq ${model.seq < 0 ? "-" : model.seq}`,
    `latency ${model.latencyMs === null ? "-" : model.latencyMs.toFixed(1) + " ms"}`,
    `age ${age === null ? "-" : age.toFixed(0) + " ms"}`,
    `cmd steer ${cmd.steer_deg.toFixed(1)} deg  accel ${cmd.accel.toFixed(2)}  brake ${cmd.brake.toFixed(0)}%`,
    cockpit.engaged ? "ENGAGED" : "passive",
  ];
  return lines.join("\n");
}

function frame(): void {
  refreshTargets();
  const vp = fitViewport(canvas.width, canvas.height, model.vehicles());
  drawWorld(ctx, vp, model, cockpit.target);
  hudEl.textContent = hudText();
  engageBtn.textContent = cockpit.engaged ? "disengage (g)" : "engage (g)";
  engageBtn.classList.toggle("hot", cockpit.engaged);
  requestAnimationFrame(frame);
}

onStatus("offline");
link.connect();
requestAnimationFrame(frame);
