"""Startup/health state machine and end-to-end metric collection.

Encodes the operational constraints the platform only reveals empirically:
streaming needs a minimum payload uptime (180 s by default), the SkyPort
application must come up before any E-port bulk pipe goes active, and the
two applications must not share serial or high-bandwidth interfaces. FAULT
is absorbing within a run; only an explicit restart re-enters BOOT.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

DEFAULT_MIN_UPTIME_S = 180.0


class SystemState(enum.Enum):
    BOOT = "boot"
    SKYPORT_STARTING = "skyport_starting"
    SKYPORT_READY = "skyport_ready"
    EPORT_STARTING = "eport_starting"
    EPORT_READY = "eport_ready"
    STREAM_GATED = "stream_gated"
    STREAMING = "streaming"
    FAULT = "fault"


class FaultReason(enum.Enum):
    BULK_CHANNEL_BROKEN = "BulkChannelBroken"
    SHARED_SERIAL_CRASH = "SharedSerialCrash"
    GATE_VIOLATION = "GateViolation"
    ORDERING_VIOLATION = "OrderingViolation"


class Gate(enum.Enum):
    GATED = "gated"
    ALLOWED = "allowed"


def gate_streaming(uptime_s: float, min_uptime_s: float = DEFAULT_MIN_UPTIME_S) -> Gate:
    """Streaming is allowed only once the payload uptime reaches the floor."""
    return Gate.ALLOWED if uptime_s >= min_uptime_s else Gate.GATED


class EventKind(enum.Enum):
    SKYPORT_START = "skyport_start"       # negotiation begins
    SKYPORT_READY = "skyport_ready"
    EPORT_START = "eport_start"
    EPORT_BULK_ACTIVE = "eport_bulk_active"
    EPORT_READY = "eport_ready"
    STREAM_REQUEST = "stream_request"     # gate evaluated against uptime_s
    STREAM_STARTED = "stream_started"
    RESTART = "restart"


@dataclass(frozen=True)
class StartupEvent:
    kind: EventKind
    t_ms: float = 0.0
    uptime_s: float = 0.0  # meaningful for STREAM_REQUEST


# The blessed chain. Anything else is judged by the hazard rules first,
# then falls through to a generic ordering violation.
_CHAIN: dict[tuple[SystemState, EventKind], SystemState] = {
    (SystemState.BOOT, EventKind.SKYPORT_START): SystemState.SKYPORT_STARTING,
    (SystemState.SKYPORT_STARTING, EventKind.SKYPORT_READY): SystemState.SKYPORT_READY,
    (SystemState.SKYPORT_READY, EventKind.EPORT_START): SystemState.EPORT_STARTING,
    (SystemState.EPORT_STARTING, EventKind.EPORT_BULK_ACTIVE): SystemState.EPORT_STARTING,
    (SystemState.EPORT_STARTING, EventKind.EPORT_READY): SystemState.EPORT_READY,
    (SystemState.EPORT_READY, EventKind.STREAM_REQUEST): SystemState.STREAM_GATED,
    (SystemState.STREAM_GATED, EventKind.STREAM_REQUEST): SystemState.STREAM_GATED,
    (SystemState.STREAM_GATED, EventKind.STREAM_STARTED): SystemState.STREAMING,
}


class StartupMachine:
    """Replays start/negotiate events and lands deviations in FAULT.

    Starting the E-port application early is tracked, not faulted: the
    hazard materializes when an E-port bulk pipe goes active before the
    SkyPort is ready (mirroring the drone-side pipe fault), or when forcing
    a stream without passing the uptime gate.
    """

    def __init__(self, min_uptime_s: float = DEFAULT_MIN_UPTIME_S):
        self.min_uptime_s = min_uptime_s
        self.trace: list[SystemState] = []
        self._reset()

    def _reset(self) -> None:
        self.state = SystemState.BOOT
        self.fault_reason: FaultReason | None = None
        self.skyport_ready = False
        self.eport_bulk_active = False
        self.gate_passed = False

    def _fault(self, reason: FaultReason) -> SystemState:
        self.state = SystemState.FAULT
        self.fault_reason = reason
        return self.state

    def force_fault(self, reason: FaultReason) -> SystemState:
        """External hazard (e.g. shared-adapter crash) observed by the runner."""
        return self._fault(reason)

    def feed(self, event: StartupEvent) -> SystemState:
        kind = event.kind
        if kind is EventKind.RESTART:
            self._reset()  # the only re-entry to BOOT, fault or not
            return self.state
        if self.state is SystemState.FAULT:
            return self.state  # absorbing within a run

        # Hazard rules take precedence over chain bookkeeping.
        if kind is EventKind.EPORT_BULK_ACTIVE and not self.skyport_ready:
            return self._fault(FaultReason.BULK_CHANNEL_BROKEN)
        if kind is EventKind.SKYPORT_START and self.eport_bulk_active:
            return self._fault(FaultReason.BULK_CHANNEL_BROKEN)
        if kind is EventKind.STREAM_STARTED and not self.gate_passed:
            return self._fault(FaultReason.GATE_VIOLATION)

        if kind is EventKind.SKYPORT_READY:
            self.skyport_ready = True
        if kind is EventKind.EPORT_BULK_ACTIVE:
            self.eport_bulk_active = True

        if kind is EventKind.STREAM_REQUEST:
            if self.state not in (SystemState.EPORT_READY, SystemState.STREAM_GATED):
                return self._fault(FaultReason.ORDERING_VIOLATION)
            if gate_streaming(event.uptime_s, self.min_uptime_s) is Gate.ALLOWED:
                self.gate_passed = True
                self.state = SystemState.STREAM_GATED
            # gated requests wait in place; waiting is not a fault
            return self.state

        # Early E-port starts are a tracked risk, not an instant fault.
        if kind is EventKind.EPORT_START and self.state in (
            SystemState.BOOT,
            SystemState.SKYPORT_STARTING,
        ):
            return self.state

        next_state = _CHAIN.get((self.state, kind))
        if next_state is None:
            return self._fault(FaultReason.ORDERING_VIOLATION)
        self.state = next_state
        return self.state

    def replay(self, events: list[StartupEvent]) -> list[SystemState]:
        """Feed a time-ordered event list; returns the state after each event."""
        self.trace = [self.feed(event) for event in events]
        return self.trace


def enforce_order(
    events: list[StartupEvent], min_uptime_s: float = DEFAULT_MIN_UPTIME_S
) -> tuple[SystemState, FaultReason | None, list[SystemState]]:
    """One-shot replay. Returns (final state, fault reason, full trace)."""
    machine = StartupMachine(min_uptime_s)
    trace = machine.replay(events)
    final = trace[-1] if trace else machine.state
    return final, machine.fault_reason, trace


@dataclass(frozen=True)
class InterfaceSet:
    """The concrete adapters one application occupies."""

    serial: str
    high_bandwidth: str


class DecoupleResult(enum.Enum):
    OK = "ok"
    SHARED_INTERFACE_WARNING = "shared_interface_warning"


def decouple_check(eport: InterfaceSet, skyport: InterfaceSet) -> tuple[DecoupleResult, list[str]]:
    """Warn when the two applications share a serial adapter or high-bandwidth
    device; on the real platform the second start crashes both."""
    shared = []
    if eport.serial == skyport.serial:
        shared.append(f"serial adapter {eport.serial!r}")
    if eport.high_bandwidth == skyport.high_bandwidth:
        shared.append(f"high-bandwidth device {eport.high_bandwidth!r}")
    if shared:
        return DecoupleResult.SHARED_INTERFACE_WARNING, shared
    return DecoupleResult.OK, []


class EmptyRun(Exception):
    """Metrics requested for a run that never sent a frame."""


@dataclass
class RunRecord:
    """What one completed simulation leaves behind for metric collection."""

    duration_s: float
    frames_sent: int = 0
    # (capture_ms, complete_ms, frame_bytes) per frame that fully arrived
    deliveries: list[tuple[float, float, int]] = field(default_factory=list)
    faults: list[str] = field(default_factory=list)


@dataclass
class MetricsReport:
    latency_ms: dict[str, float]
    frames: dict[str, int]
    bitrate_bps: float
    faults: list[str]

    def to_json(self) -> str:
        """Deterministic serialization: replaying a scenario with equal seeds
        must reproduce this byte for byte."""
        payload = {
            "latency_ms": self.latency_ms,
            "frames": self.frames,
            "bitrate_bps": self.bitrate_bps,
            "faults": self.faults,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _percentile(sorted_values: list[float], q: float) -> float:
    """Nearest-rank percentile on a pre-sorted list."""
    if not sorted_values:
        raise ValueError("no values")
    rank = max(1, math.ceil(q * len(sorted_values)))
    return sorted_values[rank - 1]


def collect_metrics(run: RunRecord) -> MetricsReport:
    """Latency percentiles, delivery counts, achieved bitrate from run logs."""
    if run.frames_sent == 0:
        raise EmptyRun("no frames were sent in this run")
    latencies = sorted(complete - capture for capture, complete, _ in run.deliveries)
    delivered = len(run.deliveries)
    payload_bytes = sum(size for _, _, size in run.deliveries)
    if latencies:
        latency = {
            "mean": sum(latencies) / len(latencies),
            "p50": _percentile(latencies, 0.50),
            "p95": _percentile(latencies, 0.95),
        }
    else:
        latency = {"mean": 0.0, "p50": 0.0, "p95": 0.0}
    return MetricsReport(
        latency_ms=latency,
        frames={
            "sent": run.frames_sent,
            "delivered": delivered,
            "dropped": run.frames_sent - delivered,
        },
        bitrate_bps=payload_bytes * 8.0 / run.duration_s if run.duration_s > 0 else 0.0,
        faults=list(run.faults),
    )
