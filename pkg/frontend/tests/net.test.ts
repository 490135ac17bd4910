import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { CockpitLink } from "../src/net.js";
import type { LinkStatus, SocketLike } from "../src/net.js";
import type { GlobalStateMsg, PongMsg } from "../src/protocol.js";

class FakeSocket implements SocketLike {
  onopen: ((ev: any) => void) | null = null;
  onmessage: ((ev: any) => void) | null = null;
  onclose: ((ev: any) => void) | null = null;
  onerror: ((ev: any) => void) | null = null;
  sent: string[] = [];
  closedByClient = false;

  send(data: string): void {
    this.sent.push(data);
  }
  close(): void {
    this.closedByClient = true;
  }
  // test-side controls
  open(): void {
    this.onopen?.({});
  }
  message(text: string): void {
    this.onmessage?.({ data: text });
  }
  drop(): void {
    this.onclose?.({});
  }
}

let sockets: FakeSocket[];
let states: GlobalStateMsg[];
let pongs: PongMsg[];
let statuses: LinkStatus[];

function makeLink(opts: { pingIntervalMs?: number } = {}): CockpitLink {
  return new CockpitLink(
    "ws://example.test:1",
    {
      onState: (m) => states.push(m),
      onPong: (m) => pongs.push(m),
      onStatus: (s) => statuses.push(s),
    },
    {
      factory: () => {
        const sock = new FakeSocket();
        sockets.push(sock);
        return sock;
      },
      backoffMinMs: 500,
      backoffMaxMs: 4000,
      ...opts,
    },
  );
}

beforeEach(() => {
  vi.useFakeTimers();
  sockets = [];
  states = [];
  pongs = [];
  statuses = [];
});

afterEach(() => {
  vi.useRealTimers();
});

const STATE = '{"type":"global_state","seq":1,"vehicles":[]}';

describe("CockpitLink", () => {
  it("routes broadcasts and pongs, ignores everything else", () => {
    const link = makeLink();
    link.connect();
    sockets[0].open();
    expect(statuses).toEqual(["connecting", "online"]);

    sockets[0].message(STATE);
    sockets[0].message('{"type":"pong","ts":1,"server_ts_ms":2}');
    sockets[0].message('{"type":"mystery"}');
    sockets[0].message("not json");

    expect(states).toHaveLength(1);
    expect(pongs).toHaveLength(1);
    expect(link.counters).toMatchObject({ broadcasts: 1, pongs: 1, ignored: 2 });
    link.close();
  });

  it("send refuses while not open", () => {
    const link = makeLink();
    expect(link.send("x")).toBe(false);
    link.connect();
    expect(link.send("x")).toBe(false); // still connecting
    sockets[0].open();
    expect(link.send("x")).toBe(true);
    expect(sockets[0].sent).toContain("x");
    link.close();
  });

  it("reconnects with doubling backoff and resets after success", () => {
    const link = makeLink();
    link.connect();
    sockets[0].open();
    sockets[0].drop(); // first loss: retry after 500 ms
    expect(link.status).toBe("offline");
    expect(sockets).toHaveLength(1);
    vi.advanceTimersByTime(499);
    expect(sockets).toHaveLength(1);
    vi.advanceTimersByTime(1);
    expect(sockets).toHaveLength(2);

    sockets[1].drop(); // never opened: next wait doubles to 1000 ms
    vi.advanceTimersByTime(999);
    expect(sockets).toHaveLength(2);
    vi.advanceTimersByTime(1);
    expect(sockets).toHaveLength(3);

    sockets[2].open(); // success resets the backoff to 500 ms
    sockets[2].drop();
    vi.advanceTimersByTime(500);
    expect(sockets).toHaveLength(4);
    expect(link.counters.reconnects).toBe(3);
    link.close();
  });

  it("backoff saturates at the cap", () => {
    const link = makeLink();
    link.connect();
    for (let i = 0; i < 6; i += 1) {
      sockets[sockets.length - 1].drop();
      vi.advanceTimersByTime(4000); // the cap always suffices
    }
    expect(sockets.length).toBe(7);
    link.close();
  });

  it("close() stops reconnection for good", () => {
    const link = makeLink();
    link.connect();
    sockets[0].open();
    link.close();
    expect(sockets[0].closedByClient).toBe(true);
    vi.advanceTimersByTime(60_000);
    expect(sockets).toHaveLength(1);
    expect(link.status).toBe("offline");
  });

  it("pings on the interval while open, stops when the link drops", () => {
    const link = makeLink({ pingIntervalMs: 1000 });
    link.connect();
    sockets[0].open();
    vi.advanceTimersByTime(3000);
    const pings = sockets[0].sent.filter((t) => t.includes('"ping"'));
    expect(pings).toHaveLength(3);
    sockets[0].drop();
    vi.advanceTimersByTime(300); // less than the reconnect wait
    expect(sockets[0].sent.filter((t) => t.includes('"ping"'))).toHaveLength(3);
    link.close();
  });

  it("sendControl serializes through the schema encoder", () => {
    const link = makeLink();
    link.connect();
    sockets[0].open();
    const ok = link.sendControl({
      type: "control",
      target: "shadow-0",
      steer_deg: 1,
      accel: 2,
      brake: 0,
      turn_left: false,
      turn_right: false,
      engage: true,
    });
    expect(ok).toBe(true);
    const doc = JSON.parse(sockets[0].sent[0]);
    expect(doc.type).toBe("control");
    expect(doc.engage).toBe(true);
    link.close();
  });
});
