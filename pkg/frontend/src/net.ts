/**
 * WebSocket link with reconnect and liveness probing.
 *
 * The socket itself is injected through a factory so tests (and the node
 * e2e, which uses the `ws` package) can run without a browser. Handlers are
 * wired property-style because both the DOM socket and `ws` support that
 * shape.
 *
 * Reconnects back off exponentially from backoffMinMs to backoffMaxMs and
 * reset on a successful open. While the link is open a ping goes out every
 * pingIntervalMs carrying our clock; the pong comes back through onPong and
 * the view model turns it into a latency estimate.
 */

import { encodeControl, encodePing, parseServerMessage } from "./protocol.js";
import type { ControlMsg, GlobalStateMsg, PongMsg } from "./protocol.js";

export type LinkStatus = "connecting" | "online" | "offline";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev: any) => void) | null;
  onmessage: ((ev: any) => void) | null;
  onclose: ((ev: any) => void) | null;
  onerror: ((ev: any) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface LinkEvents {
  onState?: (msg: GlobalStateMsg) => void;
  onPong?: (msg: PongMsg) => void;
  onStatus?: (status: LinkStatus) => void;
  /** Raw text of every inbound frame, before parsing. Debugging hook. */
  onRaw?: (text: string) => void;
}

export interface LinkOptions {
  factory?: SocketFactory;
  pingIntervalMs?: number;
  backoffMinMs?: number;
  backoffMaxMs?: number;
  now?: () => number;
}

function defaultFactory(url: string): SocketLike {
  const ctor = (globalThis as any).WebSocket;
  if (ctor === undefined) {
    throw new Error("no WebSocket in this environment, inject a factory");
  }
  return new ctor(url) as SocketLike;
}

export class CockpitLink {
  status: LinkStatus = "offline";
  counters = { broadcasts: 0, ignored: 0, reconnects: 0, pongs: 0 };

  private sock: SocketLike | null = null;
  private closed = false;
  private backoffMs: number;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private pingTimer: ReturnType<typeof setInterval> | null = null;

  private readonly factory: SocketFactory;
  private readonly pingIntervalMs: number;
  private readonly backoffMinMs: number;
  private readonly backoffMaxMs: number;
  private readonly now: () => number;

  constructor(
    readonly url: string,
    private readonly events: LinkEvents = {},
    opts: LinkOptions = {},
  ) {
    this.factory = opts.factory ?? defaultFactory;
    this.pingIntervalMs = opts.pingIntervalMs ?? 2000;
    this.backoffMinMs = opts.backoffMinMs ?? 500;
    this.backoffMaxMs = opts.backoffMaxMs ?? 8000;
    this.now = opts.now ?? (() => Date.now());
    this.backoffMs = this.backoffMinMs;
  }

  connect(): void {
    if (this.closed || this.sock !== null) return;
    this.setStatus("connecting");
    let sock: SocketLike;
    try {
      sock = this.factory(this.url);
    } catch {
      this.scheduleReconnect();
      return;
    }
    this.sock = sock;
    sock.onopen = () => this.handleOpen();
    sock.onmessage = (ev: any) => this.handleMessage(ev);
    sock.onclose = () => this.handleClose();
    // the close event follows on both the DOM socket and ws; reconnect
    // logic lives there so an error never schedules twice
    sock.onerror = () => {};
  }

  /** Stop for good: no further reconnects. */
  close(): void {
    this.closed = true;
    this.clearTimers();
    const sock = this.sock;
    this.sock = null;
    if (sock !== null) {
      sock.onclose = null;
      try {
        sock.close();
      } catch {
        // already dead, which is what we wanted
      }
    }
    this.setStatus("offline");
  }

  send(text: string): boolean {
    if (this.sock === null || this.status !== "online") return false;
    try {
      this.sock.send(text);
      return true;
    } catch {
      return false;
    }
  }

  sendControl(msg: ControlMsg): boolean {
    return this.send(encodeControl(msg));
  }

  private handleOpen(): void {
    this.backoffMs = this.backoffMinMs;
    this.setStatus("online");
    if (this.pingTimer !== null) clearInterval(this.pingTimer);
    this.pingTimer = setInterval(() => {
      this.send(encodePing(this.now()));
    }, this.pingIntervalMs);
  }

  private handleMessage(ev: any): void {
    const text = typeof ev.data === "string" ? ev.data : String(ev.data);
    this.events.onRaw?.(text);
    const msg = parseServerMessage(text);
    if (msg === null) {
      this.counters.ignored += 1;
      return;
    }
    if (msg.type === "global_state") {
      this.counters.broadcasts += 1;
      this.events.onState?.(msg);
    } else {
      this.counters.pongs += 1;
      this.events.onPong?.(msg);
    }
  }

  private handleClose(): void {
    this.sock = null;
    if (this.pingTimer !== null) {
      clearInterval(this.pingTimer);
      this.pingTimer = null;
    }
    this.setStatus("offline");
    this.scheduleReconnect();
  }

  private scheduleReconnect(): void {
    if (this.closed || this.reconnectTimer !== null) return;
    const wait = this.backoffMs;
    this.backoffMs = Math.min(this.backoffMs * 2, this.backoffMaxMs);
    this.counters.reconnects += 1;
    this.reconnectTimer = setTimeout(() => {
      this.reconnectTimer = null;
      this.connect();
    }, wait);
  }

  private clearTimers(): void {
    if (this.reconnectTimer !== null) {
      clearTimeout(this.reconnectTimer);
      this.reconnectTimer = null;
    }
    if (this.pingTimer !== null) {
      clearInterval(this.pingTimer);
      this.pingTimer = null;
    }
  }

  private setStatus(status: LinkStatus): void {
    if (status === this.status) return;
    this.status = status;
    this.events.onStatus?.(status);
  }
}
