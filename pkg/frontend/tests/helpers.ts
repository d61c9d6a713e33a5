import { readFileSync } from "node:fs";

import { parsePacket, VideoPacket } from "../src/protocol.js";

export interface ReassemblyVector {
  name: string;
  packets_hex: string[];
  expect: {
    complete: boolean;
    frame_id?: number;
    frame_type?: number;
    payload_hex?: string;
  };
}

export interface ConformanceFixture {
  vectors: ReassemblyVector[];
  clicks: { u: number; v: number; x: number; y: number }[];
  viewport_centers: { w: number; h: number; click_x: number; click_y: number; x: number; y: number }[];
}

export function loadFixture(): ConformanceFixture {
  const url = new URL("./fixtures/conformance.json", import.meta.url);
  return JSON.parse(readFileSync(url, "utf-8"));
}

export function hexToArrayBuffer(hex: string): ArrayBuffer {
  const bytes = new Uint8Array(hex.length / 2);
  for (let i = 0; i < bytes.length; i++) {
    bytes[i] = parseInt(hex.slice(i * 2, i * 2 + 2), 16);
  }
  return bytes.buffer;
}

export function packetsFromHex(hexes: string[]): VideoPacket[] {
  return hexes.map((hex) => parsePacket(hexToArrayBuffer(hex)));
}

export function toHex(bytes: Uint8Array): string {
  return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}
