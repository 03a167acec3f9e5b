/**
 * Test harness: a from-scratch pcap builder (so the contract tests can
 * feed the real ingest route without any Python-side helper) and a
 * launcher that runs the actual gateway as a child process.
 */

import { spawn, type ChildProcess } from "node:child_process";

// -- minimal classic pcap / Ethernet / IPv4 / TCP builders ---------------------

function macBytes(mac: string): Uint8Array {
  return new Uint8Array(mac.split(":").map((b) => parseInt(b, 16)));
}

function ipBytes(ip: string): Uint8Array {
  return new Uint8Array(ip.split(".").map(Number));
}

export function buildTcpFrame(
  srcMac: string,
  dstMac: string,
  srcIp: string,
  dstIp: string,
  srcPort: number,
  dstPort: number,
  payloadLen: number,
): Uint8Array {
  const tcp = new Uint8Array(20 + payloadLen);
  const tcpView = new DataView(tcp.buffer);
  tcpView.setUint16(0, srcPort);
  tcpView.setUint16(2, dstPort);
  tcp[12] = 5 << 4; // data offset
  tcp[13] = 0x10; // ACK

  const ip = new Uint8Array(20 + tcp.length);
  const ipView = new DataView(ip.buffer);
  ip[0] = 0x45;
  ipView.setUint16(2, ip.length);
  ip[8] = 64; // TTL
  ip[9] = 6; // TCP
  ip.set(ipBytes(srcIp), 12);
  ip.set(ipBytes(dstIp), 16);
  ip.set(tcp, 20);

  const frame = new Uint8Array(14 + ip.length);
  frame.set(macBytes(dstMac), 0);
  frame.set(macBytes(srcMac), 6);
  new DataView(frame.buffer).setUint16(12, 0x0800);
  frame.set(ip, 14);
  return frame;
}

export function buildPcap(packets: { tsMs: number; frame: Uint8Array }[]): Uint8Array {
  const total = 24 + packets.reduce((acc, p) => acc + 16 + p.frame.length, 0);
  const out = new Uint8Array(total);
  const view = new DataView(out.buffer);
  view.setUint32(0, 0xa1b2c3d4, true);
  view.setUint16(4, 2, true);
  view.setUint16(6, 4, true);
  view.setUint32(16, 262144, true);
  view.setUint32(20, 1, true); // Ethernet
  let pos = 24;
  for (const { tsMs, frame } of packets) {
    view.setUint32(pos, Math.floor(tsMs / 1000), true);
    view.setUint32(pos + 4, (tsMs % 1000) * 1000, true);
    view.setUint32(pos + 8, frame.length, true);
    view.setUint32(pos + 12, frame.length, true);
    out.set(frame, pos + 16);
    pos += 16 + frame.length;
  }
  return out;
}

// fixture-A: six companies, 40/20/14/10/9/7 KB from one laptop
export const LAPTOP_MAC = "aa:bb:cc:00:00:01";
export const FIXTURE_A_VOLUMES: [string, string, number][] = [
  ["A", "US", 40_000],
  ["B", "DE", 20_000],
  ["C", "US", 14_000],
  ["D", "FR", 10_000],
  ["E", "IE", 9_000],
  ["F", "NL", 7_000],
];

export const FIXTURE_A_TEXT = FIXTURE_A_VOLUMES.map(
  ([name, jur], i) => `203.0.${i}.0/24\t${name}\t-\t${jur}\tNONE`,
).join("\n") + "\n";

export function fixtureAPcap(startMs: number): Uint8Array {
  const packets: { tsMs: number; frame: Uint8Array }[] = [];
  FIXTURE_A_VOLUMES.forEach(([_name, _jur, total], i) => {
    const parts = 4;
    const per = Math.floor(total / parts);
    const rem = total - per * parts;
    for (let j = 0; j < parts; j++) {
      const size = per + (j === 0 ? rem : 0);
      packets.push({
        tsMs: startMs + i * 1000 + j,
        frame: buildTcpFrame(
          LAPTOP_MAC,
          "02:00:00:00:00:01",
          "192.168.1.7",
          `203.0.${i}.9`,
          40_000 + i,
          443,
          size - 54,
        ),
      });
    }
  });
  return buildPcap(packets);
}

// -- gateway process ------------------------------------------------------------

export const ADMIN_TOKEN = "dashboard-test-token";

export interface Gateway {
  base: string;
  proc: ChildProcess;
  stop(): void;
}

export async function startGateway(): Promise<Gateway> {
  const port = 20000 + Math.floor(Math.random() * 20000);
  const proc = spawn(
    "python3",
    ["-m", "hearthgate.cli", "serve", "--port", String(port), "--db", ":memory:"],
    {
      env: {
        ...process.env,
        HEARTHGATE_SALT: "dashboard-test-salt",
        HEARTHGATE_ADMIN_TOKEN: ADMIN_TOKEN,
      },
      stdio: ["ignore", "pipe", "pipe"],
    },
  );
  let stderr = "";
  proc.stderr?.on("data", (chunk) => (stderr += chunk));
  const base = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 20_000;
  for (;;) {
    try {
      const response = await fetch(`${base}/v1/health`);
      if (response.ok) break;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      proc.kill();
      throw new Error(`gateway did not start on ${base}\n${stderr}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 100));
  }
  return { base, proc, stop: () => proc.kill() };
}

export async function seedFixtureA(base: string, startMs: number): Promise<void> {
  let response = await fetch(`${base}/v1/fixtures`, {
    method: "POST",
    body: FIXTURE_A_TEXT,
  });
  if (!response.ok) throw new Error(`fixtures: ${await response.text()}`);
  response = await fetch(`${base}/v1/devices/map`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify({ devices: { [LAPTOP_MAC]: "laptop" } }),
  });
  if (!response.ok) throw new Error(`device map: ${await response.text()}`);
  response = await fetch(`${base}/v1/ingest/pcap`, {
    method: "POST",
    headers: { "content-type": "application/octet-stream" },
    body: fixtureAPcap(startMs),
  });
  if (!response.ok) throw new Error(`ingest: ${await response.text()}`);
  const summary = await response.json();
  if (summary.flows !== 6) throw new Error(`expected 6 flows, got ${summary.flows}`);
}

export async function setStage(base: string, stage: number): Promise<void> {
  const response = await fetch(`${base}/v1/stage`, {
    method: "POST",
    headers: {
      "content-type": "application/json",
      "x-admin-token": ADMIN_TOKEN,
    },
    body: JSON.stringify({ stage, override: true }),
  });
  if (!response.ok) throw new Error(`set stage: ${await response.text()}`);
}
