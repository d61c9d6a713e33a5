"""E-port payload application: telemetry, camera feeds, flight control access.

Binds serial plus the bulk pipe pair, subscribes its topic plan, and pulls
RGB (pipe 0) and stereo (pipe 1) frame streams. All control calls route
through the drone's capability matrix; the application holds no copy of the
table. A faulted pipe surfaces as PipeFaulted on the next poll with the
feed counters frozen at the fault instant; recovery is restart-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .channel import (
    GadgetDescriptor,
    LinkProfile,
    LOSSLESS_FAST,
    EndpointRole,
    PipeState,
    SerialChannel,
    provision_bulk_pipes,
)
from .clock import Scheduler
from .drone import (
    DroneError,
    FEED_PIPE_INDEX,
    MockDrone,
    HighBandwidth,
    PortKind,
    Subscription,
    Topic,
    VideoSource,
    decode_feed_frame,
)

STATS_INTERVAL_MS = 1000.0


class EportError(Exception):
    """Base class for E-port application failures."""


class NegotiationFailed(EportError):
    """The drone refused to bind this application to the E-port."""


class BulkProvisionFailed(EportError):
    """The gadget's pipe set cannot carry the requested video plan."""


class PipeFaulted(EportError):
    """A bulk pipe faulted; feeds are dead until the application restarts."""


@dataclass
class EportConfig:
    serial_device: str
    descriptor: GadgetDescriptor
    topic_plan: list[tuple[Topic, float]] = field(default_factory=list)
    video_plan: list[VideoSource] = field(default_factory=list)
    serial_profile: LinkProfile = LOSSLESS_FAST
    bulk_profiles: list[LinkProfile] | None = None
    feed_fps: float = 24.0
    feed_frame_bytes: int = 6250


@dataclass
class FeedCounters:
    frames_received: int = 0
    frames_dropped: int = 0
    duplicates: int = 0
    last_frame_id: int | None = None
    last_timestamp: float | None = None


@dataclass
class FeedHealth:
    """Per-feed counter snapshot. Once a stream is closed,
    frames_received + frames_dropped == highest frame id + 1."""

    feeds: dict[VideoSource, FeedCounters]

    def __getitem__(self, source: VideoSource) -> FeedCounters:
        return self.feeds[source]


class _FeedTracker:
    """Gap/duplicate accounting over an in-order frame id stream."""

    def __init__(self, source: VideoSource):
        self.source = source
        self.counters = FeedCounters()

    def observe(self, frame_id: int, timestamp_ms: float) -> None:
        c = self.counters
        if c.last_frame_id is not None and frame_id <= c.last_frame_id:
            c.duplicates += 1  # neither received nor dropped
            return
        expected = 0 if c.last_frame_id is None else c.last_frame_id + 1
        c.frames_dropped += frame_id - expected
        c.frames_received += 1
        c.last_frame_id = frame_id
        c.last_timestamp = timestamp_ms

    def close(self, highest_sent_id: int) -> None:
        c = self.counters
        tail_from = 0 if c.last_frame_id is None else c.last_frame_id + 1
        if highest_sent_id >= tail_from:
            c.frames_dropped += highest_sent_id - tail_from + 1


class EportApp:
    """Runs one E-port session: serial + bulk pipes + plans from config."""

    def __init__(self, config: EportConfig, drone: MockDrone, scheduler: Scheduler):
        self.config = config
        self.drone = drone
        self.scheduler = scheduler
        self.pipes = []
        self.session = None
        self.serial: SerialChannel | None = None
        self.subscriptions: dict[Topic, Subscription] = {}
        self.trackers: dict[VideoSource, _FeedTracker] = {}
        self.events: list[str] = []
        self.running = False

    # -- lifecycle -----------------------------------------------------------

    def _log(self, message: str) -> None:
        self.events.append(f"t={self.scheduler.clock.now_ms:.3f} {message}")

    def start(self) -> "EportApp":
        """Provision, negotiate, activate, subscribe. Ordering risk (starting
        before the SkyPort app) is the orchestrator's call, not checked here."""
        cfg = self.config
        for source in cfg.video_plan:
            if cfg.descriptor.bulk_pipe_count <= FEED_PIPE_INDEX[source]:
                raise BulkProvisionFailed(
                    f"{source.value} needs bulk pipe {FEED_PIPE_INDEX[source]} but the "
                    f"descriptor exposes {cfg.descriptor.bulk_pipe_count} pipe(s)"
                )
        try:
            self.pipes = provision_bulk_pipes(cfg.descriptor, self.scheduler, cfg.bulk_profiles)
        except Exception as exc:
            raise BulkProvisionFailed(str(exc)) from exc
        self.serial = SerialChannel(cfg.serial_device, self.scheduler, cfg.serial_profile)
        try:
            self.session = self.drone.negotiate(
                PortKind.EPORT,
                cfg.descriptor,
                HighBandwidth.BULK,
                bulk_pipes=self.pipes,
                serial_down=self.serial,
            )
        except DroneError as exc:
            raise NegotiationFailed(str(exc)) from exc
        for pipe in self.pipes:
            pipe.activate()
        self._log(f"negotiated eport, {len(self.pipes)} bulk pipes active, serial={cfg.serial_device}")
        for topic, hz in cfg.topic_plan:
            self.subscriptions[topic] = self.drone.subscribe(self.session, topic, hz)
            self._log(f"subscribed {topic.value} at {hz:g} Hz")
        for source in cfg.video_plan:
            self.trackers[source] = _FeedTracker(source)
            self.drone.request_video(
                self.session, source, fps=cfg.feed_fps, frame_bytes=cfg.feed_frame_bytes
            )
            self._log(f"feed {source.value} requested on pipe {FEED_PIPE_INDEX[source]}")
        self.running = True
        self.scheduler.after(STATS_INTERVAL_MS, self._stats_tick)
        return self

    def restart(self) -> "EportApp":
        """The only recovery path from a faulted pipe: full rebind."""
        if self.session is not None and not self.session.closed:
            self.drone.release(self.session)
        for pipe in self.pipes:
            pipe.reset()
        self._log("restarting")
        self.running = False
        self.subscriptions.clear()
        self.trackers.clear()
        return self.start()

    # -- feed polling ----------------------------------------------------------

    def _drain(self) -> None:
        """Pull everything delivered so far off both pipes into the trackers."""
        for source, tracker in self.trackers.items():
            pipe = self.pipes[FEED_PIPE_INDEX[source]]
            for _, blob in pipe.endpoints[EndpointRole.INPUT].read_all():
                frame_source, frame_id, capture_ms, _ = decode_feed_frame(blob)
                if frame_source is not source:
                    raise EportError(f"{frame_source.value} frame on pipe {pipe.pipe_id}")
                tracker.observe(frame_id, capture_ms)

    def _stats_tick(self) -> None:
        if not self.running:
            return
        if all(p.state is PipeState.ACTIVE for p in self.pipes):
            self._drain()
            for source, tracker in self.trackers.items():
                c = tracker.counters
                self._log(
                    f"feed {source.value} received={c.frames_received} dropped={c.frames_dropped}"
                )
        self.scheduler.after(STATS_INTERVAL_MS, self._stats_tick)

    def snapshot(self) -> FeedHealth:
        return FeedHealth({s: replace(t.counters) for s, t in self.trackers.items()})

    def poll_feeds(self, until_ms: float) -> FeedHealth:
        """Advance the simulation to until_ms and account every delivered frame.

        Raises PipeFaulted when any pipe died in the window; counters then
        hold exactly what was delivered before the fault.
        """
        if not self.running:
            raise EportError("application not started")
        self.scheduler.run_until(until_ms)
        self._drain()
        faulted = [p for p in self.pipes if p.state is PipeState.FAULTED]
        if faulted:
            ids = ",".join(str(p.pipe_id) for p in faulted)
            self._log(f"pipe(s) {ids} faulted")
            raise PipeFaulted(f"bulk pipe(s) {ids} faulted; restart required")
        return self.snapshot()

    def close(self) -> FeedHealth:
        """Stop feeds, account trailing losses, release the port."""
        self._drain()
        if self.session is not None:
            for feed in self.session.feeds:
                _, highest = feed.stop()
                if feed.source in self.trackers and highest >= 0:
                    self.trackers[feed.source].close(highest)
            self.drone.release(self.session)
        self.running = False
        self._log("closed")
        return self.snapshot()

    def event_log(self) -> str:
        """Newline-delimited application event log."""
        return "\n".join(self.events) + ("\n" if self.events else "")


def start_eport(config: EportConfig, drone: MockDrone, scheduler: Scheduler) -> EportApp:
    """Build and start an E-port application in one call."""
    return EportApp(config, drone, scheduler).start()
