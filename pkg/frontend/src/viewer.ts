// Controller viewer state machine, kept free of DOM and sockets so the
// whole behavior is testable: reassembly feed, click gating, optimistic
// source switching with revert, stall detection and the latency estimate.

import { parseTestCard, ServerMessage, StreamSource, TestCard, VideoPacket } from "./protocol.js";
import { AssembledFrame, FrameAssembler } from "./reassembly.js";

export const STALL_AFTER_MS = 1000;

export interface CompleteFrame {
  frame: AssembledFrame;
  card: TestCard | null;
  latencyMs: number | null;
}

export interface ViewerHooks {
  /** Monotonic wall clock in ms. */
  now(): number;
  /** Sends one upstream JSON control message. */
  send(text: string): void;
  /** Called for every complete frame, in arrival order. */
  onFrame(frame: CompleteFrame): void;
}

export class Viewer {
  connected = false;
  activeSource: keyof typeof StreamSource = "PI_DESKTOP";
  lastFrameId: number | null = null;
  latencyMs: number | null = null;
  framesPainted = 0;
  banner: string | null = null;
  scale = 1.0;

  private assembler = new FrameAssembler();
  private pendingSwitch: keyof typeof StreamSource | null = null;
  private previousSource: keyof typeof StreamSource = "PI_DESKTOP";
  private lastFrameWall: number | null = null;
  private beaconSimMs: number | null = null;
  private beaconWallMs = 0;

  constructor(private hooks: ViewerHooks) {}

  // -- connection lifecycle --------------------------------------------------

  onOpen(): void {
    this.connected = true;
    this.banner = null;
  }

  onClose(): void {
    this.connected = false;
  }

  // -- downstream ------------------------------------------------------------

  onBinary(packet: VideoPacket): CompleteFrame | null {
    const frame = this.assembler.add(packet);
    if (!frame) return null; // incomplete frames are skipped, never painted
    const card = parseTestCard(frame.payload);
    const latencyMs = card ? this.estimateLatency(card.captureMs) : null;
    this.lastFrameId = frame.frameId;
    this.latencyMs = latencyMs;
    this.lastFrameWall = this.hooks.now();
    this.framesPainted += 1;
    const complete = { frame, card, latencyMs };
    this.hooks.onFrame(complete);
    return complete;
  }

  onControl(message: ServerMessage): void {
    switch (message.type) {
      case "hello":
        this.scale = message.scale;
        break;
      case "clock":
        this.beaconSimMs = message.sim_ms;
        this.beaconWallMs = this.hooks.now();
        break;
      case "switched":
        this.activeSource = message.source;
        this.pendingSwitch = null;
        break;
      case "rejected":
        if (this.pendingSwitch !== null) {
          this.activeSource = this.previousSource; // optimistic update reverted
          this.pendingSwitch = null;
        }
        this.banner = message.reason;
        break;
      case "end":
        this.banner = `stream ended: ${message.frames["delivered"] ?? 0} frames delivered`;
        break;
      case "clicked":
        break; // server echo; nothing to update locally
    }
  }

  /** Wall-clock extrapolation of sim time from the last clock beacon. */
  private estimateLatency(captureMs: number): number | null {
    if (this.beaconSimMs === null) return null;
    const simNow = this.beaconSimMs + (this.hooks.now() - this.beaconWallMs) * this.scale;
    return simNow - captureMs;
  }

  // -- stall indicator ---------------------------------------------------------

  get stalled(): boolean {
    if (this.lastFrameWall === null) return false; // nothing expected yet
    return this.hooks.now() - this.lastFrameWall > STALL_AFTER_MS;
  }

  // -- upstream -----------------------------------------------------------------

  /**
   * Forward a viewport click as normalized coordinates, clamped to [0,1].
   * Silently ignored unless connected and watching the desktop source.
   */
  sendClick(x: number, y: number, viewportW: number, viewportH: number): { u: number; v: number } | null {
    if (!this.connected || this.activeSource !== "PI_DESKTOP") return null;
    const clamp = (value: number) => Math.min(1, Math.max(0, value));
    const u = clamp(x / viewportW);
    const v = clamp(y / viewportH);
    this.hooks.send(JSON.stringify({ type: "click", u, v }));
    return { u, v };
  }

  /** Optimistic source switch; reverts if the server rejects it. */
  switchSource(target: keyof typeof StreamSource): boolean {
    if (!this.connected) {
      this.banner = "not connected";
      return false;
    }
    if (target === this.activeSource) return true; // no-op
    this.previousSource = this.activeSource;
    this.pendingSwitch = target;
    this.activeSource = target;
    this.hooks.send(JSON.stringify({ type: "switch", source: target }));
    return true;
  }
}
