// Browser entry point: wires the viewer state machine to a WebSocket, a
// canvas and the source/click controls. Connect with ?server=host:port
// (defaults to the page host on port 8787).

import { parsePacket, parseServerMessage, StreamSource } from "./protocol.js";
import { paintTestCard } from "./testcard.js";
import { CompleteFrame, Viewer } from "./viewer.js";

const params = new URLSearchParams(window.location.search);
const server = params.get("server") ?? `${window.location.hostname || "127.0.0.1"}:8787`;

const canvas = document.getElementById("screen") as HTMLCanvasElement;
const context = canvas.getContext("2d")!;
const latencyEl = document.getElementById("latency")!;
const statusEl = document.getElementById("status")!;
const stallEl = document.getElementById("stall")!;
const sourceButtons = Array.from(
  document.querySelectorAll<HTMLButtonElement>("button[data-source]"),
);

// bounded frame queue decouples network from painting; drop-oldest
const frameQueue: CompleteFrame[] = [];
const FRAME_QUEUE_MAX = 8;

const viewer = new Viewer({
  now: () => performance.now(),
  send: (text) => socket.send(text),
  onFrame: (frame) => {
    frameQueue.push(frame);
    while (frameQueue.length > FRAME_QUEUE_MAX) frameQueue.shift();
  },
});

const socket = new WebSocket(`ws://${server}`);
socket.binaryType = "arraybuffer";

socket.onopen = () => {
  viewer.onOpen();
  statusEl.textContent = `connected to ${server}`;
};

socket.onclose = () => {
  viewer.onClose();
  statusEl.textContent = "disconnected";
};

socket.onmessage = (event) => {
  if (event.data instanceof ArrayBuffer) {
    viewer.onBinary(parsePacket(event.data));
    return;
  }
  const message = parseServerMessage(String(event.data));
  if (message) {
    viewer.onControl(message);
    if (message.type === "hello") {
      canvas.width = message.width;
      canvas.height = message.height;
      statusEl.textContent = `scenario ${message.scenario} @ ${message.fps} fps`;
    }
  }
  refreshControls();
};

function renderLoop(): void {
  const frame = frameQueue.pop();
  if (frame) {
    frameQueue.length = 0; // paint newest, drop the backlog
    if (frame.card) {
      const raster = paintTestCard(frame.card);
      context.putImageData(new ImageData(raster, frame.card.width, frame.card.height), 0, 0);
    }
    latencyEl.textContent =
      frame.latencyMs !== null ? `${frame.latencyMs.toFixed(0)} ms` : "--";
  }
  stallEl.hidden = !viewer.stalled;
  if (viewer.banner) statusEl.textContent = viewer.banner;
  requestAnimationFrame(renderLoop);
}
requestAnimationFrame(renderLoop);

canvas.addEventListener("click", (event) => {
  const rect = canvas.getBoundingClientRect();
  viewer.sendClick(
    event.clientX - rect.left,
    event.clientY - rect.top,
    rect.width,
    rect.height,
  );
});

for (const button of sourceButtons) {
  button.addEventListener("click", () => {
    viewer.switchSource(button.dataset.source as keyof typeof StreamSource);
    refreshControls();
  });
}

function refreshControls(): void {
  for (const button of sourceButtons) {
    button.classList.toggle("active", button.dataset.source === viewer.activeSource);
  }
}
