"""SkyPort payload application: desktop capture model, encoder, packetizer.

The streamer produces 640x480 frames at 24 FPS under a 1.2 Mbps budget with
a keyframe period of 2 and no bidirectionally predicted frames: even frame
ids are KEY, odd are DELTA, and in deterministic mode every KEY+DELTA pair
totals exactly the two-frame bit budget (8333 + 4167 bytes). Frames too
large for one packet are chopped; the receiver reassembles from any packet
order and ignores duplicates.

Packet wire header (big-endian, bit-exact):

    frame_id:u64 | index:u16 | count:u16 | frame_type:u8 (0=KEY, 1=DELTA) | payload_len:u16 | payload

Frame payloads are synthetic test cards: a small parseable header (source,
frame id, capture timestamp, cursor position) followed by deterministic
filler, so a viewer can paint a raster and measure latency without a codec.
"""

from __future__ import annotations

import enum
import math
import random
import struct
from dataclasses import dataclass, field

from .channel import Link
from .clock import Scheduler
from .drone import Capability, PayloadSession

FRAME_WIDTH = 640
FRAME_HEIGHT = 480
DEFAULT_MAX_PACKET_BYTES = 8192

_PACKET_HEAD = struct.Struct("!QHHBH")  # frame_id, index, count, frame_type, payload_len
PACKET_HEADER_BYTES = _PACKET_HEAD.size

TEST_CARD_MAGIC = b"TCRD"
_CARD_HEAD = struct.Struct("!4sBQdHHHH")  # magic, source, frame_id, capture_ms, w, h, cursor x, y
_FILLER = bytes((i * 31 + 7) & 0xFF for i in range(256))


class SkyportError(Exception):
    """Base class for streamer-side failures."""


class OutOfBounds(SkyportError):
    """Normalized click coordinate outside [0, 1]."""


class MixedFrames(SkyportError):
    """Reassembly input mixes packets from different frames."""


class FrameType(enum.IntEnum):
    KEY = 0
    DELTA = 1


class StreamSource(enum.IntEnum):
    """What the controller is watching; the Pi desktop is the click target."""

    PI_DESKTOP = 0
    RGB_MAIN = 1
    STEREO_DOWN = 2


@dataclass
class Frame:
    """One captured, encoded video image."""

    frame_id: int
    frame_type: FrameType
    payload: bytes
    capture_ts: float
    width: int = FRAME_WIDTH
    height: int = FRAME_HEIGHT


@dataclass
class VideoPacket:
    """One chunk of a frame. capture_ts rides along in memory for reassembly
    bookkeeping; the wire header carries exactly the documented fields."""

    frame_id: int
    index: int
    count: int
    frame_type: FrameType
    payload: bytes
    send_ts: float = 0.0
    capture_ts: float = 0.0


class Incomplete:
    """Sentinel result: not every chunk of the frame has arrived."""

    def __repr__(self) -> str:
        return "<Incomplete>"


INCOMPLETE = Incomplete()


@dataclass(frozen=True)
class EncoderModel:
    """Fixed-budget software encoder stand-in.

    In deterministic mode frame sizes are exact: each KEY+DELTA pair sums to
    the two-frame byte budget (bitrate / 8 / fps * 2), split by the
    key-to-delta ratio. Otherwise sizes jitter +-10% under the caller's rng.
    """

    bitrate_bps: float = 1.2e6
    fps: float = 24.0
    key_to_delta_size_ratio: float = 2.0
    encode_delay_ms: float = 280.0
    deterministic: bool = True

    @property
    def period_ms(self) -> float:
        return 1000.0 / self.fps

    @property
    def pair_budget_bytes(self) -> int:
        return round(self.bitrate_bps / 8.0 / self.fps * 2.0)

    @property
    def delta_bytes(self) -> int:
        return round(self.pair_budget_bytes / (self.key_to_delta_size_ratio + 1.0))

    @property
    def key_bytes(self) -> int:
        return self.pair_budget_bytes - self.delta_bytes

    def frame_type(self, frame_id: int) -> FrameType:
        return FrameType.KEY if frame_id % 2 == 0 else FrameType.DELTA

    def frame_bytes(self, frame_id: int, rng: random.Random | None = None) -> int:
        base = self.key_bytes if self.frame_type(frame_id) is FrameType.KEY else self.delta_bytes
        if self.deterministic or rng is None:
            return base
        return max(_CARD_HEAD.size, round(base * rng.uniform(0.9, 1.1)))


def build_test_card(
    source: StreamSource,
    frame_id: int,
    capture_ms: float,
    total_bytes: int,
    cursor: tuple[int, int] = (FRAME_WIDTH // 2, FRAME_HEIGHT // 2),
) -> bytes:
    """Synthetic frame payload of exactly total_bytes (header floor applies)."""
    total_bytes = max(total_bytes, _CARD_HEAD.size)
    head = _CARD_HEAD.pack(
        TEST_CARD_MAGIC, int(source), frame_id, capture_ms, FRAME_WIDTH, FRAME_HEIGHT, cursor[0], cursor[1]
    )
    fill = total_bytes - len(head)
    start = frame_id % 256
    return head + (_FILLER[start:] + _FILLER * (fill // 256 + 1))[:fill]


def parse_test_card(payload: bytes) -> dict:
    magic, source, frame_id, capture_ms, width, height, cx, cy = _CARD_HEAD.unpack_from(payload)
    if magic != TEST_CARD_MAGIC:
        raise ValueError(f"bad test card magic: {magic!r}")
    return {
        "source": StreamSource(source),
        "frame_id": frame_id,
        "capture_ms": capture_ms,
        "width": width,
        "height": height,
        "cursor": (cx, cy),
    }


def next_frame(
    encoder: EncoderModel,
    frame_id: int,
    now_ms: float,
    source: StreamSource = StreamSource.PI_DESKTOP,
    cursor: tuple[int, int] = (FRAME_WIDTH // 2, FRAME_HEIGHT // 2),
    rng: random.Random | None = None,
) -> tuple[Frame, float]:
    """Capture/encode one frame at now_ms. Returns (frame, ready_ms): the
    frame becomes available for sending encode_delay_ms after capture."""
    size = encoder.frame_bytes(frame_id, rng)
    frame = Frame(
        frame_id=frame_id,
        frame_type=encoder.frame_type(frame_id),
        payload=build_test_card(source, frame_id, now_ms, size, cursor),
        capture_ts=now_ms,
    )
    return frame, now_ms + encoder.encode_delay_ms


def chop(frame: Frame, max_packet_bytes: int) -> list[VideoPacket]:
    """Split a frame into <=max_packet_bytes chunks; an empty frame still
    produces one (empty) packet so the receiver sees every frame id."""
    if max_packet_bytes < 1:
        raise ValueError(f"max_packet_bytes must be >= 1, got {max_packet_bytes}")
    count = max(1, math.ceil(len(frame.payload) / max_packet_bytes))
    return [
        VideoPacket(
            frame_id=frame.frame_id,
            index=i,
            count=count,
            frame_type=frame.frame_type,
            payload=frame.payload[i * max_packet_bytes:(i + 1) * max_packet_bytes],
            capture_ts=frame.capture_ts,
        )
        for i in range(count)
    ]


def reassemble(packets: list[VideoPacket] | tuple[VideoPacket, ...]) -> Frame | Incomplete:
    """Rebuild the original frame from an unordered multiset of its packets.

    Duplicates are ignored; anything short of all `count` distinct indices
    yields INCOMPLETE. Mixing frame ids raises MixedFrames.
    """
    if not packets:
        return INCOMPLETE
    frame_id = packets[0].frame_id
    if any(p.frame_id != frame_id for p in packets):
        raise MixedFrames(f"packets from multiple frames: {sorted({p.frame_id for p in packets})}")
    count = packets[0].count
    by_index: dict[int, VideoPacket] = {}
    for packet in packets:
        if not 0 <= packet.index < packet.count:
            raise ValueError(f"packet index {packet.index} outside count {packet.count}")
        by_index.setdefault(packet.index, packet)
    if len(by_index) < count:
        return INCOMPLETE
    payload = b"".join(by_index[i].payload for i in range(count))
    first = packets[0]
    return Frame(
        frame_id=frame_id,
        frame_type=first.frame_type,
        payload=payload,
        capture_ts=first.capture_ts,
    )


def pack_packet(packet: VideoPacket) -> bytes:
    """Wire encoding. The u16 length field caps one packet payload at 65535."""
    if len(packet.payload) > 0xFFFF:
        raise ValueError(f"packet payload of {len(packet.payload)} bytes exceeds wire u16 limit")
    return _PACKET_HEAD.pack(
        packet.frame_id, packet.index, packet.count, int(packet.frame_type), len(packet.payload)
    ) + packet.payload


def unpack_packet(data: bytes) -> VideoPacket:
    frame_id, index, count, frame_type, payload_len = _PACKET_HEAD.unpack_from(data)
    payload = bytes(data[PACKET_HEADER_BYTES:PACKET_HEADER_BYTES + payload_len])
    if len(payload) != payload_len:
        raise ValueError(f"packet truncated: {len(payload)} of {payload_len} payload bytes")
    return VideoPacket(frame_id, index, count, FrameType(frame_type), payload)


def round_half_away(value: float) -> int:
    return int(math.floor(value + 0.5)) if value >= 0 else -int(math.floor(-value + 0.5))


def map_click(u: float, v: float) -> tuple[int, int]:
    """Normalized controller coordinates to desktop pixels (0..639, 0..479)."""
    if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
        raise OutOfBounds(f"click ({u}, {v}) outside the unit square")
    return round_half_away(u * (FRAME_WIDTH - 1)), round_half_away(v * (FRAME_HEIGHT - 1))


@dataclass
class ClickEvent:
    x: int
    y: int
    t_ms: float


class DesktopModel:
    """Click sink and cursor state for the streamed desktop."""

    def __init__(self):
        self.cursor = (FRAME_WIDTH // 2, FRAME_HEIGHT // 2)
        self.clicks: list[ClickEvent] = []

    def click(self, u: float, v: float, now_ms: float) -> ClickEvent:
        x, y = map_click(u, v)
        event = ClickEvent(x, y, now_ms)
        self.cursor = (x, y)
        self.clicks.append(event)
        return event


@dataclass
class TransmitRecord:
    packet: VideoPacket
    send_ms: float
    delivery_ms: float | None  # None when the loss process ate it


def send_stream(
    session: PayloadSession,
    frames: list[Frame],
    link: Link,
    max_packet_bytes: int = DEFAULT_MAX_PACKET_BYTES,
    now_ms: float = 0.0,
) -> list[TransmitRecord]:
    """Chop each frame and push its packets over the link in order.

    The port's capability matrix is consulted through the session, never a
    local copy; an E-port session is refused here.
    """
    session.assert_capability(Capability.STREAM_TO_CONTROLLER)
    log: list[TransmitRecord] = []
    for frame in frames:
        for packet in chop(frame, max_packet_bytes):
            packet.send_ts = now_ms
            delivery = link.transmit_size(PACKET_HEADER_BYTES + len(packet.payload), now_ms)
            log.append(TransmitRecord(packet, now_ms, delivery))
    return log


@dataclass
class FrameArrival:
    frame_id: int
    capture_ts: float
    complete_ms: float
    frame_bytes: int


class StreamReceiver:
    """Controller-side reassembly bookkeeping with per-frame latency records."""

    def __init__(self):
        self.pending: dict[int, list[VideoPacket]] = {}
        self.arrivals: list[FrameArrival] = []
        self.packets_seen = 0

    def collect(self, packet: VideoPacket, arrival_ms: float) -> Frame | None:
        """Feed one packet; returns the frame when this packet completes it."""
        self.packets_seen += 1
        bucket = self.pending.setdefault(packet.frame_id, [])
        bucket.append(packet)
        result = reassemble(bucket)
        if isinstance(result, Frame):
            del self.pending[packet.frame_id]
            self.arrivals.append(
                FrameArrival(result.frame_id, result.capture_ts, arrival_ms, len(result.payload))
            )
            return result
        return None

    @property
    def frames_completed(self) -> int:
        return len(self.arrivals)


class DesktopStreamer:
    """The SkyPort application: paced desktop capture into the packet pipeline.

    One streamer owns its encoder state, click queue and source tag. Frames
    are captured every encoder period, become ready after the encode delay,
    then go out packet-by-packet over the session's network link into the
    receiver sink (the operator's controller).
    """

    def __init__(
        self,
        scheduler: Scheduler,
        session: PayloadSession,
        receiver: StreamReceiver,
        encoder: EncoderModel = EncoderModel(),
        max_packet_bytes: int = DEFAULT_MAX_PACKET_BYTES,
        seed: int = 0,
    ):
        session.assert_capability(Capability.STREAM_TO_CONTROLLER)
        if session.network is None:
            raise SkyportError("skyport session has no network link")
        self.scheduler = scheduler
        self.session = session
        self.receiver = receiver
        self.encoder = encoder
        self.max_packet_bytes = max_packet_bytes
        self.rng = random.Random(seed)
        self.desktop = DesktopModel()
        self.active_source = StreamSource.PI_DESKTOP
        self.next_frame_id = 0
        self.frames_sent = 0
        self.bytes_sent = 0
        self.packet_log: list[TransmitRecord] = []
        self.packet_sink: list = []  # extra per-packet callbacks (serve fan-out)
        self.active = False
        self._frames_limit: int | None = None

    def start(self, duration_s: float | None = None) -> None:
        """Begin capturing; the first frame is captured immediately.

        With a duration, exactly round(duration * fps) frames are captured;
        a count limit avoids float-accumulation off-by-ones at the boundary.
        """
        self.active = True
        if duration_s is not None:
            self._frames_limit = self.next_frame_id + round(duration_s * self.encoder.fps)
        self._capture()

    def stop(self) -> None:
        self.active = False

    def switch_source(self, source: StreamSource) -> StreamSource:
        """Change what the streamed desktop window shows; tags later frames."""
        self.active_source = source
        return self.active_source

    def handle_click(self, u: float, v: float) -> ClickEvent:
        return self.desktop.click(u, v, self.scheduler.clock.now_ms)

    def _capture(self) -> None:
        if not self.active:
            return
        now = self.scheduler.clock.now_ms
        if self._frames_limit is not None and self.next_frame_id >= self._frames_limit:
            self.active = False
            return
        frame, ready_ms = next_frame(
            self.encoder,
            self.next_frame_id,
            now,
            source=self.active_source,
            cursor=self.desktop.cursor,
            rng=self.rng,
        )
        self.next_frame_id += 1
        self.scheduler.at(ready_ms, lambda f=frame: self._send_frame(f))
        self.scheduler.after(self.encoder.period_ms, self._capture)

    def _send_frame(self, frame: Frame) -> None:
        link = self.session.network
        now = self.scheduler.clock.now_ms
        self.frames_sent += 1
        self.bytes_sent += len(frame.payload)
        for packet in chop(frame, self.max_packet_bytes):
            packet.send_ts = now
            delivery = link.transmit_size(PACKET_HEADER_BYTES + len(packet.payload), now)
            self.packet_log.append(TransmitRecord(packet, now, delivery))
            if delivery is not None:
                self.scheduler.at(delivery, lambda p=packet, t=delivery: self._deliver(p, t))

    def _deliver(self, packet: VideoPacket, arrival_ms: float) -> None:
        self.receiver.collect(packet, arrival_ms)
        for sink in self.packet_sink:
            sink(packet, arrival_ms)
