"""Mock drone with two payload ports and the per-port capability matrix.

The drone owns all state behind session handles. Every request handler
consults the capability matrix before acting, so applications never carry
their own copy of the table. Negotiating the SkyPort while an E-port bulk
pipe is ACTIVE faults that pipe, reproducing the observed startup-order
breakage; stereo feeds refuse to flow over a network transport.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field

from .channel import (
    BulkPipe,
    EndpointRole,
    GadgetDescriptor,
    InvalidDescriptor,
    Link,
    LinkProfile,
    LOSSLESS_FAST,
    PipeState,
    SerialChannel,
)
from .clock import Scheduler


class PortKind(enum.Enum):
    EPORT = "eport"
    SKYPORT = "skyport"


class Capability(enum.Enum):
    POWER_TELEMETRY = "power_telemetry"
    FLIGHT_PAYLOAD_CONTROL = "flight_payload_control"
    SENSOR_ACCESS = "sensor_access"
    CAMERA_FEEDS = "camera_feeds"
    STREAM_TO_CONTROLLER = "stream_to_controller"


# Per-port capabilities. The E-port grants control, sensors and camera feeds
# but cannot stream to the controller; the SkyPort is the mirror image.
CAPABILITY_MATRIX: dict[tuple[PortKind, Capability], bool] = {
    (PortKind.EPORT, Capability.POWER_TELEMETRY): True,
    (PortKind.EPORT, Capability.FLIGHT_PAYLOAD_CONTROL): True,
    (PortKind.EPORT, Capability.SENSOR_ACCESS): True,
    (PortKind.EPORT, Capability.CAMERA_FEEDS): True,
    (PortKind.EPORT, Capability.STREAM_TO_CONTROLLER): False,
    (PortKind.SKYPORT, Capability.POWER_TELEMETRY): True,
    (PortKind.SKYPORT, Capability.FLIGHT_PAYLOAD_CONTROL): False,
    (PortKind.SKYPORT, Capability.SENSOR_ACCESS): True,
    (PortKind.SKYPORT, Capability.CAMERA_FEEDS): False,
    (PortKind.SKYPORT, Capability.STREAM_TO_CONTROLLER): True,
}


def check_capability(port: PortKind, cap: Capability) -> bool:
    """Matrix lookup; the single source of truth for what a port may do."""
    return CAPABILITY_MATRIX[(port, cap)]


class HighBandwidth(enum.Enum):
    BULK = "bulk"
    NETWORK = "network"


class Topic(enum.Enum):
    POSE = "pose"
    GPS = "gps"
    ALTITUDE_AGL = "altitude_agl"
    OBSTACLE_DISTANCE = "obstacle_distance"
    GIMBAL_ATTITUDE = "gimbal_attitude"


TOPIC_ARITY = {
    Topic.POSE: 6,              # x, y, z, roll, pitch, yaw
    Topic.GPS: 3,               # local-frame stand-in, no error model
    Topic.ALTITUDE_AGL: 1,
    Topic.OBSTACLE_DISTANCE: 1,
    Topic.GIMBAL_ATTITUDE: 3,   # pitch, roll, yaw
}

MAX_SUBSCRIBE_HZ = 200.0

GIMBAL_PITCH_MIN = -math.pi / 2
GIMBAL_PITCH_MAX = math.pi / 6

CONTROL_STEP_HZ = 50.0

# Serial message types (drone -> payload)
MSG_TELEMETRY = 0x10

_TELEMETRY_HEAD = struct.Struct("!BdB")  # topic, timestamp_ms, value count


class DroneError(Exception):
    """Base class for drone-side request failures."""


class PortBusy(DroneError):
    """A payload application is already bound to the port."""


class IdentityMismatch(DroneError):
    """Gadget identifiers differ from what the drone was configured to expect."""


class CapabilityViolation(DroneError):
    """The port's capability matrix forbids the requested operation."""


class RateTooHigh(DroneError):
    """Subscription frequency outside (0, 200] Hz."""


class StereoRequiresBulk(DroneError):
    """Stereo feeds only flow over the bulk pipes, never a network transport."""


class OutOfRange(DroneError):
    """Commanded value outside its mechanical envelope."""


@dataclass
class TelemetrySample:
    topic: Topic
    timestamp_ms: float
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != TOPIC_ARITY[self.topic]:
            raise ValueError(
                f"{self.topic.value} expects {TOPIC_ARITY[self.topic]} values, got {len(self.values)}"
            )

    def encode(self) -> bytes:
        return _TELEMETRY_HEAD.pack(
            list(Topic).index(self.topic), self.timestamp_ms, len(self.values)
        ) + struct.pack(f"!{len(self.values)}d", *self.values)

    @classmethod
    def decode(cls, data: bytes) -> "TelemetrySample":
        topic_idx, timestamp_ms, count = _TELEMETRY_HEAD.unpack_from(data)
        values = struct.unpack_from(f"!{count}d", data, _TELEMETRY_HEAD.size)
        return cls(list(Topic)[topic_idx], timestamp_ms, values)


@dataclass
class DroneState:
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw: float = 0.0
    gimbal_attitude: tuple[float, float, float] = (0.0, 0.0, 0.0)  # pitch, roll, yaw
    uptime_s: float = 0.0

    def copy(self) -> "DroneState":
        return DroneState(self.position, self.velocity, self.yaw, self.gimbal_attitude, self.uptime_s)


class VideoSource(enum.Enum):
    RGB_MAIN = "rgb_main"
    STEREO_DOWN = "stereo_down"


# Which bulk pipe carries which feed: RGB on pipe 0, stereo on pipe 1.
FEED_PIPE_INDEX = {VideoSource.RGB_MAIN: 0, VideoSource.STEREO_DOWN: 1}

FEED_MAGIC = b"DFRM"
_FEED_HEAD = struct.Struct("!4sBQdI")  # magic, source, frame_id, capture_ms, payload_len
_PATTERN = bytes(range(256))


def encode_feed_frame(source: VideoSource, frame_id: int, capture_ms: float, payload_bytes: int) -> bytes:
    """One camera feed frame: header plus a deterministic test pattern."""
    start = frame_id % 256
    filler = (_PATTERN[start:] + _PATTERN * (payload_bytes // 256 + 1))[:payload_bytes]
    return _FEED_HEAD.pack(FEED_MAGIC, list(VideoSource).index(source), frame_id, capture_ms, payload_bytes) + filler


def decode_feed_frame(data: bytes) -> tuple[VideoSource, int, float, bytes]:
    magic, source_idx, frame_id, capture_ms, payload_len = _FEED_HEAD.unpack_from(data)
    if magic != FEED_MAGIC:
        raise ValueError(f"bad feed frame magic: {magic!r}")
    payload = data[_FEED_HEAD.size:_FEED_HEAD.size + payload_len]
    return list(VideoSource)[source_idx], frame_id, capture_ms, payload


class Subscription:
    """Periodic telemetry stream; samples land after serial delivery."""

    def __init__(self, drone: "MockDrone", session: "PayloadSession", topic: Topic, frequency_hz: float):
        self.drone = drone
        self.session = session
        self.topic = topic
        self.frequency_hz = frequency_hz
        self.period_ms = 1000.0 / frequency_hz
        self.samples: list[TelemetrySample] = []
        self.active = True
        self._schedule_next()

    def _schedule_next(self) -> None:
        self.drone.scheduler.after(self.period_ms, self._tick)

    def _tick(self) -> None:
        if not self.active or self.session.closed:
            return
        now_ms = self.drone.scheduler.clock.now_ms
        sample = TelemetrySample(self.topic, now_ms, self.drone.sample_topic(self.topic))
        serial = self.session.serial_down
        if serial is None:
            self.samples.append(sample)
        else:
            delivery = serial.send(MSG_TELEMETRY, sample.encode())
            if delivery is not None:
                self.drone.scheduler.at(delivery, lambda s=sample: self.samples.append(s))
        self._schedule_next()

    def cancel(self) -> None:
        self.active = False

    def drain(self) -> list[TelemetrySample]:
        out = self.samples
        self.samples = []
        return out


class VideoFeed:
    """Frame stream for one camera source over the session's transport."""

    def __init__(
        self,
        drone: "MockDrone",
        session: "PayloadSession",
        source: VideoSource,
        fps: float,
        frame_bytes: int,
    ):
        self.drone = drone
        self.session = session
        self.source = source
        self.fps = fps
        self.frame_bytes = frame_bytes
        self.period_ms = 1000.0 / fps
        self.next_frame_id = 0
        self.frames_sent = 0
        self.active = True
        self._tick()  # the camera starts immediately on request

    @property
    def pipe(self) -> BulkPipe | None:
        if self.session.high_bw is not HighBandwidth.BULK:
            return None
        return self.session.bulk_pipes[FEED_PIPE_INDEX[self.source]]

    def _tick(self) -> None:
        if not self.active or self.session.closed:
            return
        now_ms = self.drone.scheduler.clock.now_ms
        frame = encode_feed_frame(self.source, self.next_frame_id, now_ms, self.frame_bytes)
        pipe = self.pipe
        if pipe is not None:
            if pipe.state is PipeState.ACTIVE:
                pipe.write(EndpointRole.INPUT, frame)
                self.frames_sent += 1
        else:
            delivery = self.session.network.transmit(frame, now_ms)
            if delivery is not None:
                self.drone.scheduler.at(
                    delivery, lambda f=frame, t=delivery: self.session.network_delivered.append((t, f))
                )
            self.frames_sent += 1
        self.next_frame_id += 1
        self.drone.scheduler.after(self.period_ms, self._tick)

    def stop(self) -> tuple[int, int]:
        """Close the stream. Returns (total frames emitted, highest frame id)."""
        self.active = False
        return self.frames_sent, self.next_frame_id - 1


@dataclass
class PayloadSession:
    """Handle binding one payload application to one port."""

    port: PortKind
    descriptor: GadgetDescriptor
    high_bw: HighBandwidth
    drone: "MockDrone"
    bulk_pipes: list[BulkPipe] = field(default_factory=list)
    serial_down: SerialChannel | None = None
    network: Link | None = None
    network_delivered: list[tuple[float, bytes]] = field(default_factory=list)
    subscriptions: list[Subscription] = field(default_factory=list)
    feeds: list[VideoFeed] = field(default_factory=list)
    closed: bool = False

    def assert_capability(self, cap: Capability) -> None:
        if not check_capability(self.port, cap):
            raise CapabilityViolation(f"{self.port.value} lacks {cap.value}")


class MockDrone:
    """Event-loop simulation of the aircraft side of both payload ports."""

    def __init__(
        self,
        scheduler: Scheduler,
        expected_descriptors: dict[PortKind, GadgetDescriptor] | None = None,
        initial_state: DroneState | None = None,
        telemetry_overrides: dict[Topic, dict] | None = None,
        network_profile: LinkProfile = LOSSLESS_FAST,
    ):
        self.scheduler = scheduler
        self.expected_descriptors = expected_descriptors or {}
        self.state = initial_state.copy() if initial_state else DroneState()
        self.telemetry_overrides = telemetry_overrides or {}
        self.network_profile = network_profile
        self.boot_ms = scheduler.clock.now_ms
        self.sessions: dict[PortKind, PayloadSession] = {}
        self.events: list[tuple[float, str]] = []

    # -- lifecycle ---------------------------------------------------------

    def _log(self, message: str) -> None:
        self.events.append((self.scheduler.clock.now_ms, message))

    @property
    def uptime_s(self) -> float:
        return (self.scheduler.clock.now_ms - self.boot_ms) / 1000.0

    def negotiate(
        self,
        port: PortKind,
        descriptor: GadgetDescriptor,
        high_bw: HighBandwidth,
        bulk_pipes: list[BulkPipe] | None = None,
        serial_down: SerialChannel | None = None,
    ) -> PayloadSession:
        """Bind an application to a port.

        Side effect of the observed startup-order breakage: negotiating the
        SkyPort faults any ACTIVE bulk pipe held by the E-port session.
        """
        if port in self.sessions and not self.sessions[port].closed:
            raise PortBusy(f"{port.value} already bound")
        descriptor.validate()
        expected = self.expected_descriptors.get(port)
        if expected is not None and (
            descriptor.vendor_id != expected.vendor_id or descriptor.product_id != expected.product_id
        ):
            raise IdentityMismatch(
                f"{port.value} expected {expected.vendor_id:04x}:{expected.product_id:04x}, "
                f"got {descriptor.vendor_id:04x}:{descriptor.product_id:04x}"
            )
        for other in self.sessions.values():
            if other.closed:
                continue
            if (other.descriptor.vendor_id, other.descriptor.product_id) == (
                descriptor.vendor_id,
                descriptor.product_id,
            ):
                raise InvalidDescriptor(
                    f"gadget identity {descriptor.vendor_id:04x}:{descriptor.product_id:04x} already in use"
                )

        if port is PortKind.SKYPORT:
            self._break_active_eport_bulk()

        session = PayloadSession(
            port=port,
            descriptor=descriptor,
            high_bw=high_bw,
            drone=self,
            bulk_pipes=bulk_pipes or [],
            serial_down=serial_down,
        )
        if high_bw is HighBandwidth.NETWORK:
            session.network = Link(self.network_profile)
        self.sessions[port] = session
        self._log(f"negotiated {port.value} over {high_bw.value}")
        return session

    def _break_active_eport_bulk(self) -> None:
        eport = self.sessions.get(PortKind.EPORT)
        if eport is None or eport.closed:
            return
        for pipe in eport.bulk_pipes:
            if pipe.state is PipeState.ACTIVE:
                pipe.fault(self.scheduler.clock.now_ms)
                self._log(f"skyport negotiation faulted eport bulk pipe {pipe.pipe_id}")

    def release(self, session: PayloadSession) -> None:
        """Unbind; part of the restart-only recovery path."""
        for sub in session.subscriptions:
            sub.cancel()
        for feed in session.feeds:
            feed.stop()
        session.closed = True
        self._log(f"released {session.port.value}")

    # -- telemetry ---------------------------------------------------------

    def sample_topic(self, topic: Topic) -> tuple[float, ...]:
        """Deterministic generator snapshot for one topic at the current instant."""
        override = self.telemetry_overrides.get(topic, {})
        if "constant" in override:
            value = float(override["constant"])
            return (value,) * TOPIC_ARITY[topic]
        t_s = self.uptime_s
        if topic is Topic.ALTITUDE_AGL:
            rate = float(override.get("ramp_rate", 0.5))
            initial = float(override.get("initial", 0.0))
            return (initial + rate * t_s,)
        if topic is Topic.OBSTACLE_DISTANCE:
            return (10.0,)
        if topic is Topic.POSE:
            x, y, z = self.state.position
            return (x, y, z, 0.0, 0.0, self.state.yaw)
        if topic is Topic.GPS:
            return self.state.position
        if topic is Topic.GIMBAL_ATTITUDE:
            return self.state.gimbal_attitude
        raise ValueError(f"unhandled topic {topic}")

    def subscribe(self, session: PayloadSession, topic: Topic, frequency_hz: float) -> Subscription:
        session.assert_capability(Capability.SENSOR_ACCESS)
        if not 0.0 < frequency_hz <= MAX_SUBSCRIBE_HZ:
            raise RateTooHigh(f"frequency must be in (0, {MAX_SUBSCRIBE_HZ:g}] Hz, got {frequency_hz:g}")
        subscription = Subscription(self, session, topic, frequency_hz)
        session.subscriptions.append(subscription)
        self._log(f"subscribed {topic.value} at {frequency_hz:g} Hz on {session.port.value}")
        return subscription

    # -- video feeds -------------------------------------------------------

    def request_video(
        self,
        session: PayloadSession,
        source: VideoSource,
        fps: float = 24.0,
        frame_bytes: int = 6250,
    ) -> VideoFeed:
        session.assert_capability(Capability.CAMERA_FEEDS)
        if source is VideoSource.STEREO_DOWN:
            if session.high_bw is not HighBandwidth.BULK:
                raise StereoRequiresBulk("stereo feeds are only retrievable over the bulk pipes")
            if len(session.bulk_pipes) <= FEED_PIPE_INDEX[source]:
                raise StereoRequiresBulk(
                    f"stereo needs bulk pipe {FEED_PIPE_INDEX[source]}; "
                    f"session has {len(session.bulk_pipes)} pipe(s)"
                )
        if session.high_bw is HighBandwidth.BULK and not session.bulk_pipes:
            raise ValueError("bulk session negotiated without any pipes")
        feed = VideoFeed(self, session, source, fps, frame_bytes)
        session.feeds.append(feed)
        self._log(f"video feed {source.value} opened on {session.port.value}")
        return feed

    # -- flight and gimbal control ------------------------------------------

    def command_velocity(
        self,
        session: PayloadSession,
        vx: float,
        vy: float,
        vz: float,
        yaw_rate: float = 0.0,
        duration_s: float = 0.0,
    ) -> DroneState:
        """Explicit Euler at 50 Hz over duration_s; returns the final state."""
        session.assert_capability(Capability.FLIGHT_PAYLOAD_CONTROL)
        dt = 1.0 / CONTROL_STEP_HZ
        steps = round(duration_s * CONTROL_STEP_HZ)
        self.state.velocity = (vx, vy, vz)
        x, y, z = self.state.position
        yaw = self.state.yaw
        for _ in range(steps):
            x += vx * dt
            y += vy * dt
            z += vz * dt
            yaw += yaw_rate * dt
        self.state.position = (x, y, z)
        self.state.yaw = yaw
        self.state.velocity = (0.0, 0.0, 0.0)
        self.state.uptime_s = self.uptime_s
        self._log(f"velocity command ({vx:g},{vy:g},{vz:g}) for {duration_s:g} s acknowledged")
        return self.state.copy()

    def command_gimbal(self, session: PayloadSession, pitch: float, roll: float, yaw: float) -> tuple[float, float, float]:
        session.assert_capability(Capability.FLIGHT_PAYLOAD_CONTROL)
        if not GIMBAL_PITCH_MIN <= pitch <= GIMBAL_PITCH_MAX:
            raise OutOfRange(
                f"gimbal pitch {pitch:g} outside [{GIMBAL_PITCH_MIN:g}, {GIMBAL_PITCH_MAX:g}] rad"
            )
        self.state.gimbal_attitude = (pitch, roll, yaw)
        self._log(f"gimbal set to ({pitch:g},{roll:g},{yaw:g})")
        return self.state.gimbal_attitude
