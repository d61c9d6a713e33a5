// Frame reassembly with the same contract as the payload-side packetizer:
// packets arrive in any order, duplicates are ignored, and a frame is
// complete exactly when all `count` distinct indices are present. Incomplete
// frames are never exposed, so nothing is ever painted partially.

import { FrameType, VideoPacket } from "./protocol.js";

export interface AssembledFrame {
  frameId: number;
  frameType: FrameType;
  payload: Uint8Array;
}

/** Rebuild one frame from a same-frame packet multiset, or null if short. */
export function reassemble(packets: VideoPacket[]): AssembledFrame | null {
  const first = packets[0];
  if (!first) return null;
  for (const packet of packets) {
    if (packet.frameId !== first.frameId) {
      throw new Error(`mixed frames in reassembly: ${packet.frameId} vs ${first.frameId}`);
    }
  }
  const byIndex = new Map<number, VideoPacket>();
  for (const packet of packets) {
    if (packet.index >= packet.count) {
      throw new Error(`packet index ${packet.index} outside count ${packet.count}`);
    }
    if (!byIndex.has(packet.index)) byIndex.set(packet.index, packet);
  }
  if (byIndex.size < first.count) return null;
  let total = 0;
  for (const packet of byIndex.values()) total += packet.payload.byteLength;
  const payload = new Uint8Array(total);
  let offset = 0;
  for (let i = 0; i < first.count; i++) {
    const chunk = byIndex.get(i);
    if (!chunk) return null;
    payload.set(chunk.payload, offset);
    offset += chunk.payload.byteLength;
  }
  return { frameId: first.frameId, frameType: first.frameType, payload };
}

/** Streaming assembler: buckets packets per frame id with bounded memory. */
export class FrameAssembler {
  private pending = new Map<number, VideoPacket[]>();

  constructor(private maxPending = 64) {}

  /** Feed one packet; returns the frame if this packet completed it. */
  add(packet: VideoPacket): AssembledFrame | null {
    let bucket = this.pending.get(packet.frameId);
    if (!bucket) {
      bucket = [];
      this.pending.set(packet.frameId, bucket);
      this.evict();
    }
    bucket.push(packet);
    const frame = reassemble(bucket);
    if (frame) this.pending.delete(packet.frameId);
    return frame;
  }

  get pendingCount(): number {
    return this.pending.size;
  }

  private evict(): void {
    // drop-oldest keeps memory bounded when frames never complete (loss)
    while (this.pending.size > this.maxPending) {
      const oldest = Math.min(...this.pending.keys());
      this.pending.delete(oldest);
    }
  }
}
