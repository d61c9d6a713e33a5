"""Transport models: framed serial channel, seeded lossy links, USB bulk pipes.

Serial wire format (big-endian, bit-exact):

    0xAA | length:u16 | msg_type:u8 | seq:u16 | payload | crc:u16

where crc is CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF) over
msg_type, seq, payload. A frame with any corrupted bit is rejected whole.

Bulk pipes model the high-bandwidth virtual devices: each pipe exposes a
management/input/output endpoint triple and only moves data while ACTIVE.
Every transport is driven by the shared simulated clock through a Link,
which applies bandwidth, latency and a seeded Bernoulli loss process.
"""

from __future__ import annotations

import enum
import random
import struct
from collections import deque
from dataclasses import dataclass, field

from .clock import Scheduler

SOF = 0xAA
MAX_PAYLOAD = 0xFFFF
FRAME_OVERHEAD = 8  # sof + length + msg_type + seq + crc

_HEADER = struct.Struct("!BHBH")  # sof, length, msg_type, seq
_CRC16 = struct.Struct("!H")


class ChannelError(Exception):
    """Base class for transport-layer errors."""


class PayloadTooLarge(ChannelError):
    """Serial payload exceeds the 16-bit length field."""


class FrameError(ChannelError):
    """Received bytes do not form a well-formed serial frame."""


class InvalidDescriptor(ChannelError):
    """Gadget descriptor violates its invariants."""


class PipeNotActive(ChannelError):
    """Data write attempted on a bulk pipe that is not ACTIVE."""


def _build_crc_table(poly: int = 0x1021) -> tuple[int, ...]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ poly) if crc & 0x8000 else (crc << 1)
        table.append(crc & 0xFFFF)
    return tuple(table)


_CRC_TABLE = _build_crc_table()


def crc16(data: bytes, init: int = 0xFFFF) -> int:
    """CRC-16/CCITT-FALSE over data (table-driven, no reflection, no xorout)."""
    crc = init
    for byte in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[((crc >> 8) ^ byte) & 0xFF]
    return crc


@dataclass(frozen=True)
class SerialFrame:
    """One framed serial message. length and crc derive from the fields."""

    msg_type: int
    seq: int
    payload: bytes = b""

    def __post_init__(self):
        if not 0 <= self.msg_type <= 0xFF:
            raise ValueError(f"msg_type out of range: {self.msg_type}")
        if not 0 <= self.seq <= 0xFFFF:
            raise ValueError(f"seq out of range: {self.seq}")

    @property
    def length(self) -> int:
        return len(self.payload)

    @property
    def crc(self) -> int:
        return crc16(bytes([self.msg_type]) + _CRC16.pack(self.seq) + self.payload)


def encode_serial(msg_type: int, seq: int, payload: bytes = b"") -> bytes:
    """Frame a payload for the wire. Raises PayloadTooLarge above 65535 bytes."""
    if len(payload) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    frame = SerialFrame(msg_type, seq, bytes(payload))
    return _HEADER.pack(SOF, frame.length, msg_type, seq) + frame.payload + _CRC16.pack(frame.crc)


def decode_serial(data: bytes) -> SerialFrame:
    """Parse one frame. Rejects (FrameError) on bad SOF, length, or CRC."""
    if len(data) < FRAME_OVERHEAD:
        raise FrameError(f"frame too short: {len(data)} bytes")
    sof, length, msg_type, seq = _HEADER.unpack_from(data)
    if sof != SOF:
        raise FrameError(f"bad start byte: 0x{sof:02x}")
    if len(data) != FRAME_OVERHEAD + length:
        raise FrameError(f"length field {length} does not match {len(data) - FRAME_OVERHEAD} payload bytes")
    payload = data[6:6 + length]
    (crc,) = _CRC16.unpack_from(data, 6 + length)
    frame = SerialFrame(msg_type, seq, payload)
    if crc != frame.crc:
        raise FrameError(f"crc mismatch: got 0x{crc:04x}, computed 0x{frame.crc:04x}")
    return frame


@dataclass(frozen=True)
class LinkProfile:
    """Bandwidth/latency/loss parameters for one channel direction."""

    bandwidth_bps: float
    latency_ms: float = 0.0
    loss_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.bandwidth_bps <= 0:
            raise ValueError("bandwidth_bps must be positive")
        if self.latency_ms < 0:
            raise ValueError("latency_ms must be nonnegative")
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ValueError("loss_rate must be within [0, 1]")


# Default used where a test or scenario does not care about link behavior.
LOSSLESS_FAST = LinkProfile(bandwidth_bps=1e9, latency_ms=0.0, loss_rate=0.0, seed=0)


class Link:
    """One direction of a transport, with a busy-until cursor.

    Serialization of back-to-back messages is sequential: a message starts
    serializing at max(now, busy_until). On an idle link the delivery time is
    exactly now + latency + bytes*8/bandwidth. Loss is Bernoulli per message
    under the profile seed; a dropped message still occupies the wire.
    """

    def __init__(self, profile: LinkProfile):
        self.profile = profile
        self._rng = random.Random(profile.seed)
        self.busy_until_ms = 0.0
        self.sent = 0
        self.dropped = 0
        # (submit_ms, size_bytes, delivery_ms or None) per transmit call
        self.log: list[tuple[float, int, float | None]] = []

    def serialization_ms(self, size_bytes: int) -> float:
        return size_bytes * 8.0 / self.profile.bandwidth_bps * 1000.0

    def transmit_size(self, size_bytes: int, now_ms: float) -> float | None:
        """Delivery time for size_bytes submitted at now_ms, or None if dropped."""
        start = max(now_ms, self.busy_until_ms)
        self.busy_until_ms = start + self.serialization_ms(size_bytes)
        self.sent += 1
        if self._rng.random() < self.profile.loss_rate:
            self.dropped += 1
            self.log.append((now_ms, size_bytes, None))
            return None
        delivery = self.busy_until_ms + self.profile.latency_ms
        self.log.append((now_ms, size_bytes, delivery))
        return delivery

    def transmit(self, data: bytes, now_ms: float) -> float | None:
        return self.transmit_size(len(data), now_ms)


def transmit(link: Link, data: bytes, now_ms: float) -> float | None:
    """Module-level convenience over Link.transmit."""
    return link.transmit(data, now_ms)


@dataclass(frozen=True)
class GadgetDescriptor:
    """Vendor/product identity plus the number of bulk pipes the gadget exposes."""

    vendor_id: int
    product_id: int
    bulk_pipe_count: int

    def validate(self) -> None:
        if not 0 < self.vendor_id <= 0xFFFF:
            raise InvalidDescriptor(f"vendor_id must be nonzero 16-bit, got {self.vendor_id}")
        if not 0 < self.product_id <= 0xFFFF:
            raise InvalidDescriptor(f"product_id must be nonzero 16-bit, got {self.product_id}")
        if self.bulk_pipe_count < 1:
            raise InvalidDescriptor(f"bulk_pipe_count must be >= 1, got {self.bulk_pipe_count}")


class PipeState(enum.Enum):
    UNPROVISIONED = "unprovisioned"
    READY = "ready"
    ACTIVE = "active"
    FAULTED = "faulted"


class EndpointRole(enum.Enum):
    MANAGEMENT = "management"
    INPUT = "input"
    OUTPUT = "output"


@dataclass
class Endpoint:
    """One endpoint of a bulk pipe: a FIFO of (delivery_ms, message) pairs."""

    role: EndpointRole
    delivered: deque[tuple[float, bytes]] = field(default_factory=deque)

    def read_all(self) -> list[tuple[float, bytes]]:
        out = list(self.delivered)
        self.delivered.clear()
        return out


class BulkPipe:
    """High-bandwidth virtual device with a management/input/output triple.

    Messages written while ACTIVE are delivered whole to the far endpoint at
    the link's delivery time; writes in any other state are rejected and
    nothing reaches the far end. A FAULTED pipe also discards anything still
    in flight and stays dark until reset().
    """

    def __init__(self, pipe_id: int, scheduler: Scheduler, profile: LinkProfile = LOSSLESS_FAST):
        self.pipe_id = pipe_id
        self.scheduler = scheduler
        self.link = Link(profile)
        self.state = PipeState.READY
        self.endpoints = {role: Endpoint(role) for role in EndpointRole}
        self.faulted_at_ms: float | None = None

    def activate(self) -> None:
        if self.state is not PipeState.READY:
            raise PipeNotActive(f"pipe {self.pipe_id} cannot activate from {self.state.value}")
        self.state = PipeState.ACTIVE

    def fault(self, now_ms: float | None = None) -> None:
        """Block all further delivery. Data already delivered stays readable,
        so a consumer's counters freeze exactly at the fault instant."""
        self.state = PipeState.FAULTED
        self.faulted_at_ms = now_ms if now_ms is not None else self.scheduler.clock.now_ms

    def reset(self) -> None:
        """Explicit recovery: back to READY with empty queues."""
        self.state = PipeState.READY
        self.faulted_at_ms = None
        for endpoint in self.endpoints.values():
            endpoint.delivered.clear()

    def write(self, role: EndpointRole, data: bytes) -> float | None:
        """Submit one message toward `role`. Returns delivery time or None (lost)."""
        if role is EndpointRole.MANAGEMENT:
            if self.state in (PipeState.UNPROVISIONED, PipeState.FAULTED):
                raise PipeNotActive(f"pipe {self.pipe_id} management endpoint unavailable in {self.state.value}")
        elif self.state is not PipeState.ACTIVE:
            raise PipeNotActive(f"pipe {self.pipe_id} is {self.state.value}, data endpoints need ACTIVE")
        now = self.scheduler.clock.now_ms
        delivery = self.link.transmit(data, now)
        if delivery is None:
            return None
        endpoint = self.endpoints[role]

        def deliver(payload: bytes = bytes(data), t: float = delivery) -> None:
            # In-flight data on a pipe that faulted (or was reset) is never observable.
            observable = self.state is PipeState.ACTIVE or (
                role is EndpointRole.MANAGEMENT and self.state is PipeState.READY
            )
            if observable:
                endpoint.delivered.append((t, payload))

        self.scheduler.at(delivery, deliver)
        return delivery


def provision_bulk_pipes(
    descriptor: GadgetDescriptor,
    scheduler: Scheduler,
    profiles: list[LinkProfile] | None = None,
) -> list[BulkPipe]:
    """Create descriptor.bulk_pipe_count pipes, each READY with three endpoints.

    profiles, when given, supplies one LinkProfile per pipe.
    """
    descriptor.validate()
    if profiles is not None and len(profiles) != descriptor.bulk_pipe_count:
        raise InvalidDescriptor(
            f"{len(profiles)} link profiles for {descriptor.bulk_pipe_count} pipes"
        )
    pipes = []
    for pipe_id in range(descriptor.bulk_pipe_count):
        profile = profiles[pipe_id] if profiles else LOSSLESS_FAST
        pipes.append(BulkPipe(pipe_id, scheduler, profile))
    return pipes


class SerialChannel:
    """Framed serial transport over a Link, one writer per direction.

    send() frames the payload with this channel's monotonically increasing
    sequence number and schedules delivery of the decoded frame; corrupted
    or dropped frames never surface at the receiver.
    """

    def __init__(self, name: str, scheduler: Scheduler, profile: LinkProfile = LOSSLESS_FAST):
        self.name = name
        self.scheduler = scheduler
        self.link = Link(profile)
        self.next_seq = 0
        self.delivered: deque[tuple[float, SerialFrame]] = deque()

    def send(self, msg_type: int, payload: bytes = b"") -> float | None:
        """Frame and transmit. Returns delivery time or None when lost."""
        seq = self.next_seq
        self.next_seq = (self.next_seq + 1) & 0xFFFF
        wire = encode_serial(msg_type, seq, payload)
        delivery = self.link.transmit(wire, self.scheduler.clock.now_ms)
        if delivery is None:
            return None
        frame = decode_serial(wire)
        self.scheduler.at(delivery, lambda: self.delivered.append((delivery, frame)))
        return delivery

    def read_all(self) -> list[tuple[float, SerialFrame]]:
        out = list(self.delivered)
        self.delivered.clear()
        return out
