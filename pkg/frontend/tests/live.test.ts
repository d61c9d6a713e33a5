// End-to-end loop against a real serve session: the viewer must paint at
// least 20 complete frames per second and show a latency overlay near the
// pipeline's 300 ms budget. Spawns the simulator CLI; needs python3.

import { spawn, ChildProcess } from "node:child_process";
import { createServer } from "node:net";

import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { parsePacket, parseServerMessage } from "../src/protocol.js";
import { CompleteFrame, Viewer } from "../src/viewer.js";

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const server = createServer();
    server.listen(0, "127.0.0.1", () => {
      const address = server.address();
      if (typeof address === "object" && address) {
        const port = address.port;
        server.close(() => resolve(port));
      } else {
        reject(new Error("no port"));
      }
    });
  });
}

function waitForOutput(proc: ChildProcess, needle: string, timeoutMs: number): Promise<void> {
  return new Promise((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error(`timed out waiting for "${needle}"`)), timeoutMs);
    let seen = "";
    proc.stdout!.on("data", (chunk: Buffer) => {
      seen += chunk.toString();
      if (seen.includes(needle)) {
        clearTimeout(timer);
        resolve();
      }
    });
    proc.on("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`server exited early (${code}): ${seen}`));
    });
  });
}

describe("live loop against serve", () => {
  let proc: ChildProcess;
  let port: number;

  beforeAll(async () => {
    port = await freePort();
    proc = spawn("python3", [
      "-m",
      "payloadsim.cli",
      "serve",
      "--scenario",
      "nominal.json",
      "--port",
      String(port),
    ]);
    await waitForOutput(proc, "serving", 20_000);
  }, 30_000);

  afterAll(() => {
    proc.kill("SIGKILL");
  });

  it(
    "paints >= 20 fps with a ~300 ms latency overlay",
    async () => {
      const painted: { frame: CompleteFrame; wallMs: number }[] = [];
      const socket = new WebSocket(`ws://127.0.0.1:${port}`);
      socket.binaryType = "arraybuffer";

      const viewer = new Viewer({
        now: () => performance.now(),
        send: (text) => socket.send(text),
        onFrame: (frame) => painted.push({ frame, wallMs: performance.now() }),
      });

      await new Promise<void>((resolve, reject) => {
        const guard = setTimeout(() => reject(new Error("run did not end")), 40_000);
        socket.on("open", () => viewer.onOpen());
        socket.on("error", (err) => {
          clearTimeout(guard);
          reject(err);
        });
        socket.on("message", (data, isBinary) => {
          if (isBinary) {
            let copy: ArrayBuffer;
            if (data instanceof ArrayBuffer) {
              copy = data;
            } else {
              const buf = data as Buffer;
              copy = buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength) as ArrayBuffer;
            }
            viewer.onBinary(parsePacket(copy));
            return;
          }
          const message = parseServerMessage(data.toString());
          if (!message) return;
          viewer.onControl(message);
          if (message.type === "end") {
            clearTimeout(guard);
            resolve();
          }
        });
      });
      socket.close();

      // nominal streams 240 frames over a 10 s capture window
      expect(painted.length).toBeGreaterThanOrEqual(200);
      const wallSpanS = (painted[painted.length - 1]!.wallMs - painted[0]!.wallMs) / 1000;
      const fps = (painted.length - 1) / wallSpanS;
      expect(fps).toBeGreaterThanOrEqual(20);

      const latencies = painted
        .map((p) => p.frame.latencyMs)
        .filter((v): v is number => v !== null);
      expect(latencies.length).toBeGreaterThan(0);
      const mean = latencies.reduce((a, b) => a + b, 0) / latencies.length;
      expect(mean).toBeGreaterThanOrEqual(250);
      expect(mean).toBeLessThanOrEqual(350);
    },
    60_000,
  );
});
