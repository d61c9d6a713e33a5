// Wire parsing for the controller link.
//
// Downstream binary video packets (big-endian):
//   frame_id:u64 | index:u16 | count:u16 | frame_type:u8 (0=KEY,1=DELTA) | payload_len:u16 | payload
//
// Frame payloads start with a synthetic test-card header:
//   "TCRD" | source:u8 | frame_id:u64 | capture_ms:f64 | width:u16 | height:u16 | cursor_x:u16 | cursor_y:u16

export const PACKET_HEADER_BYTES = 15;
export const CARD_HEADER_BYTES = 29;

export enum FrameType {
  KEY = 0,
  DELTA = 1,
}

export enum StreamSource {
  PI_DESKTOP = 0,
  RGB_MAIN = 1,
  STEREO_DOWN = 2,
}

export interface VideoPacket {
  frameId: number;
  index: number;
  count: number;
  frameType: FrameType;
  payload: Uint8Array;
}

export interface TestCard {
  source: StreamSource;
  frameId: number;
  captureMs: number;
  width: number;
  height: number;
  cursorX: number;
  cursorY: number;
}

export function parsePacket(buffer: ArrayBuffer): VideoPacket {
  if (buffer.byteLength < PACKET_HEADER_BYTES) {
    throw new Error(`packet too short: ${buffer.byteLength} bytes`);
  }
  const view = new DataView(buffer);
  const frameId = Number(view.getBigUint64(0));
  const index = view.getUint16(8);
  const count = view.getUint16(10);
  const frameType = view.getUint8(12) as FrameType;
  const payloadLen = view.getUint16(13);
  if (buffer.byteLength < PACKET_HEADER_BYTES + payloadLen) {
    throw new Error(`packet truncated: ${buffer.byteLength} of ${PACKET_HEADER_BYTES + payloadLen}`);
  }
  const payload = new Uint8Array(buffer, PACKET_HEADER_BYTES, payloadLen);
  return { frameId, index, count, frameType, payload };
}

export function parseTestCard(payload: Uint8Array): TestCard | null {
  if (payload.byteLength < CARD_HEADER_BYTES) return null;
  const view = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
  const magic = String.fromCharCode(view.getUint8(0), view.getUint8(1), view.getUint8(2), view.getUint8(3));
  if (magic !== "TCRD") return null;
  return {
    source: view.getUint8(4) as StreamSource,
    frameId: Number(view.getBigUint64(5)),
    captureMs: view.getFloat64(13),
    width: view.getUint16(21),
    height: view.getUint16(23),
    cursorX: view.getUint16(25),
    cursorY: view.getUint16(27),
  };
}

// Upstream control messages
export interface ClickMessage {
  type: "click";
  u: number;
  v: number;
}

export interface SwitchMessage {
  type: "switch";
  source: keyof typeof StreamSource;
}

// Downstream JSON control frames
export type ServerMessage =
  | { type: "hello"; scenario: string; width: number; height: number; fps: number; scale: number }
  | { type: "clock"; sim_ms: number }
  | { type: "clicked"; x: number; y: number }
  | { type: "switched"; source: keyof typeof StreamSource }
  | { type: "rejected"; reason: string }
  | { type: "end"; frames: Record<string, number>; mean_latency_ms: number; faults: string[] };

export function parseServerMessage(text: string): ServerMessage | null {
  try {
    const doc = JSON.parse(text);
    return typeof doc === "object" && doc !== null && "type" in doc ? (doc as ServerMessage) : null;
  } catch {
    return null;
  }
}
