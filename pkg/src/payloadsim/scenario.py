"""Scenario loading, validation and the deterministic simulation runner.

A scenario JSON names the link profiles per channel, encoder settings, the
start-event schedule, topic/video plans and all seeds. `run` and `serve`
share SimulationRun; serve only adds transport and wall-clock pacing on top.

Exit codes: 0 clean run, 2 run ended in FAULT, 1 invalid input.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

from .channel import GadgetDescriptor, LinkProfile
from .clock import Scheduler
from .drone import DroneState, MockDrone, PortKind, HighBandwidth, Topic, VideoSource
from .eport import EportApp, EportConfig, EportError
from .orchestrator import (
    DecoupleResult,
    EventKind,
    FaultReason,
    InterfaceSet,
    MetricsReport,
    RunRecord,
    StartupEvent,
    StartupMachine,
    SystemState,
    collect_metrics,
    decouple_check,
)
from .skyport import DesktopStreamer, EncoderModel, StreamReceiver

DRONE_PROFILES = {"M350": 2, "M30": 1}  # bulk pipes exposed by the gadget
REQUIRED_LINKS = ("eport_serial", "skyport_network")
DRAIN_MARGIN_MS = 2000.0  # lets in-flight frames land after the last capture


class InvalidScenario(Exception):
    """Scenario file failed parsing or validation; message carries the field."""


@dataclass
class Scenario:
    name: str
    seed: int
    duration_s: float
    links: dict[str, LinkProfile]
    encoder: EncoderModel
    drone_profile: str = "M350"
    initial_uptime_s: float = 0.0
    min_uptime_s: float = 180.0
    max_packet_bytes: int = 8192
    skyport_start_s: float = 0.0
    eport_start_s: float = 0.5
    stream_start_s: float = 1.0
    topic_plan: list[tuple[Topic, float]] = field(default_factory=list)
    video_plan: list[VideoSource] = field(default_factory=list)
    telemetry_overrides: dict[Topic, dict] = field(default_factory=dict)
    eport_interfaces: InterfaceSet = InterfaceSet("onboard-uart", "usb-bulk")
    skyport_interfaces: InterfaceSet = InterfaceSet("usb-serial-0", "eth0")
    eport_gadget: GadgetDescriptor = GadgetDescriptor(0x2CA3, 0x0051, 2)
    skyport_gadget: GadgetDescriptor = GadgetDescriptor(0x2CA3, 0x0052, 1)
    initial_state: DroneState = field(default_factory=DroneState)


def _require(raw: dict, key: str, kind, where: str):
    if key not in raw:
        raise InvalidScenario(f"{where}.{key}: missing required field")
    value = raw[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise InvalidScenario(f"{where}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _link_profile(raw: dict, where: str) -> LinkProfile:
    bandwidth = _require(raw, "bandwidth_bps", float, where)
    seed = _require(raw, "seed", int, where)  # seeds are mandatory everywhere
    try:
        return LinkProfile(
            bandwidth_bps=bandwidth,
            latency_ms=float(raw.get("latency_ms", 0.0)),
            loss_rate=float(raw.get("loss_rate", 0.0)),
            seed=seed,
        )
    except ValueError as exc:
        raise InvalidScenario(f"{where}: {exc}") from exc


def _enum_by_value(enum_cls, value: str, where: str):
    try:
        return enum_cls(value)
    except ValueError:
        valid = ", ".join(e.value for e in enum_cls)
        raise InvalidScenario(f"{where}: unknown value {value!r} (expected one of: {valid})") from None


def _gadget(raw: dict, pipe_count: int, where: str) -> GadgetDescriptor:
    return GadgetDescriptor(
        vendor_id=_require(raw, "vendor_id", int, where),
        product_id=_require(raw, "product_id", int, where),
        bulk_pipe_count=pipe_count,
    )


def scenario_from_dict(raw: dict) -> Scenario:
    """Validate and build a Scenario; raises InvalidScenario with the field path."""
    if not isinstance(raw, dict):
        raise InvalidScenario("top level: expected a JSON object")
    name = _require(raw, "name", str, "scenario")
    seed = _require(raw, "seed", int, "scenario")
    duration_s = _require(raw, "duration_s", float, "scenario")
    if duration_s <= 0:
        raise InvalidScenario("scenario.duration_s: must be positive")

    profile = raw.get("drone_profile", "M350")
    if profile not in DRONE_PROFILES:
        raise InvalidScenario(f"scenario.drone_profile: unknown profile {profile!r}")
    pipe_count = DRONE_PROFILES[profile]

    links_raw = _require(raw, "links", dict, "scenario")
    links = {key: _link_profile(value, f"links.{key}") for key, value in links_raw.items()}
    for required in REQUIRED_LINKS:
        if required not in links:
            raise InvalidScenario(f"links.{required}: missing required channel")

    video_plan = [
        _enum_by_value(VideoSource, v, f"video_plan[{i}]")
        for i, v in enumerate(raw.get("video_plan", []))
    ]
    if VideoSource.RGB_MAIN in video_plan and "eport_bulk_rgb" not in links:
        raise InvalidScenario("links.eport_bulk_rgb: required by video_plan entry rgb_main")
    if VideoSource.STEREO_DOWN in video_plan and "eport_bulk_stereo" not in links:
        raise InvalidScenario("links.eport_bulk_stereo: required by video_plan entry stereo_down")

    topic_plan = []
    for i, entry in enumerate(raw.get("topic_plan", [])):
        if not (isinstance(entry, list) and len(entry) == 2):
            raise InvalidScenario(f"topic_plan[{i}]: expected [topic, frequency_hz]")
        topic_plan.append((_enum_by_value(Topic, entry[0], f"topic_plan[{i}]"), float(entry[1])))

    overrides = {
        _enum_by_value(Topic, key, f"telemetry_overrides.{key}"): value
        for key, value in raw.get("telemetry_overrides", {}).items()
    }

    enc_raw = raw.get("encoder", {})
    encoder = EncoderModel(
        bitrate_bps=float(enc_raw.get("bitrate_bps", 1.2e6)),
        fps=float(enc_raw.get("fps", 24.0)),
        key_to_delta_size_ratio=float(enc_raw.get("key_to_delta_size_ratio", 2.0)),
        encode_delay_ms=float(enc_raw.get("encode_delay_ms", 280.0)),
        deterministic=bool(enc_raw.get("deterministic", True)),
    )

    ifaces_raw = raw.get("interfaces", {})
    eport_if = ifaces_raw.get("eport", {"serial": "onboard-uart", "high_bandwidth": "usb-bulk"})
    skyport_if = ifaces_raw.get("skyport", {"serial": "usb-serial-0", "high_bandwidth": "eth0"})

    gadgets_raw = raw.get(
        "expected_gadgets",
        {
            "eport": {"vendor_id": 0x2CA3, "product_id": 0x0051},
            "skyport": {"vendor_id": 0x2CA3, "product_id": 0x0052},
        },
    )

    state_raw = raw.get("initial_state", {})
    position = tuple(float(v) for v in state_raw.get("position", (0.0, 0.0, 0.0)))
    if len(position) != 3:
        raise InvalidScenario("initial_state.position: expected 3 values")

    return Scenario(
        name=name,
        seed=seed,
        duration_s=duration_s,
        links=links,
        encoder=encoder,
        drone_profile=profile,
        initial_uptime_s=float(raw.get("initial_uptime_s", 0.0)),
        min_uptime_s=float(raw.get("min_uptime_s", 180.0)),
        max_packet_bytes=int(raw.get("max_packet_bytes", 8192)),
        skyport_start_s=float(raw.get("skyport_start_s", 0.0)),
        eport_start_s=float(raw.get("eport_start_s", 0.5)),
        stream_start_s=float(raw.get("stream_start_s", 1.0)),
        topic_plan=topic_plan,
        video_plan=video_plan,
        telemetry_overrides=overrides,
        eport_interfaces=InterfaceSet(eport_if["serial"], eport_if["high_bandwidth"]),
        skyport_interfaces=InterfaceSet(skyport_if["serial"], skyport_if["high_bandwidth"]),
        eport_gadget=_gadget(gadgets_raw["eport"], pipe_count, "expected_gadgets.eport"),
        skyport_gadget=_gadget(gadgets_raw["skyport"], 1, "expected_gadgets.skyport"),
        initial_state=DroneState(position=position),
    )


def load_scenario(path: str | Path, seed_override: int | None = None, duration_override: float | None = None) -> Scenario:
    """Load from a file path or a bundled scenario name (e.g. 'nominal.json')."""
    candidate = Path(path)
    if candidate.exists():
        text = candidate.read_text()
    else:
        bundled = resources.files("payloadsim").joinpath("scenarios", str(path))
        if not bundled.is_file():
            raise InvalidScenario(f"scenario file not found: {path}")
        text = bundled.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidScenario(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    scenario = scenario_from_dict(raw)
    if seed_override is not None:
        scenario.seed = seed_override
    if duration_override is not None:
        if duration_override <= 0:
            raise InvalidScenario("duration override must be positive")
        scenario.duration_s = duration_override
    return scenario


@dataclass
class RunResult:
    report: MetricsReport
    exit_code: int
    final_state: SystemState
    fault_reason: FaultReason | None
    events: list[str]


class SimulationRun:
    """One deterministic execution of a scenario on the simulated clock."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.scheduler = Scheduler()
        self.machine = StartupMachine(scenario.min_uptime_s)
        self.receiver = StreamReceiver()
        self.drone = MockDrone(
            self.scheduler,
            expected_descriptors={
                PortKind.EPORT: scenario.eport_gadget,
                PortKind.SKYPORT: scenario.skyport_gadget,
            },
            initial_state=scenario.initial_state,
            telemetry_overrides=scenario.telemetry_overrides,
            network_profile=scenario.links["skyport_network"],
        )
        self.eport_app: EportApp | None = None
        self.streamer: DesktopStreamer | None = None
        self.aborted = False
        self.fault_strings: list[str] = []
        self.events: list[str] = []
        self.stream_started_ms: float | None = None
        self._end_ms = 0.0

    # -- bookkeeping ---------------------------------------------------------

    def _log(self, message: str) -> None:
        self.events.append(f"t={self.scheduler.clock.now_ms:.3f} {message}")

    def _uptime_s(self) -> float:
        return self.scenario.initial_uptime_s + self.scheduler.clock.now_s

    def _feed(self, kind: EventKind, uptime_s: float = 0.0) -> SystemState:
        state = self.machine.feed(StartupEvent(kind, self.scheduler.clock.now_ms, uptime_s))
        self._log(f"{kind.value} -> {state.value}")
        if state is SystemState.FAULT and not self.aborted:
            self._abort(self.machine.fault_reason.value)
        return state

    def _abort(self, reason: str) -> None:
        self.aborted = True
        self.fault_strings.append(reason)
        self._log(f"run aborted: {reason}")
        if self.streamer is not None:
            self.streamer.stop()
        if self.eport_app is not None and self.eport_app.running:
            self.eport_app.close()

    # -- scheduled stages ------------------------------------------------------

    def _start_skyport(self) -> None:
        if self.aborted:
            return
        if self._feed(EventKind.SKYPORT_START) is SystemState.FAULT:
            return
        session = self.drone.negotiate(
            PortKind.SKYPORT, self.scenario.skyport_gadget, HighBandwidth.NETWORK
        )
        self._feed(EventKind.SKYPORT_READY)
        self.streamer = DesktopStreamer(
            self.scheduler,
            session,
            self.receiver,
            encoder=self.scenario.encoder,
            max_packet_bytes=self.scenario.max_packet_bytes,
            seed=self.scenario.seed,
        )
        self._log("skyport application ready")

    def _start_eport(self) -> None:
        if self.aborted:
            return
        result, shared = decouple_check(self.scenario.eport_interfaces, self.scenario.skyport_interfaces)
        if result is DecoupleResult.SHARED_INTERFACE_WARNING and any("serial" in s for s in shared):
            # second application start crashes both shared converters
            self.machine.feed(StartupEvent(EventKind.EPORT_START, self.scheduler.clock.now_ms))
            self.machine.force_fault(FaultReason.SHARED_SERIAL_CRASH)
            self._abort(FaultReason.SHARED_SERIAL_CRASH.value)
            return
        if self._feed(EventKind.EPORT_START) is SystemState.FAULT:
            return
        bulk_profiles = None
        if self.scenario.eport_gadget.bulk_pipe_count == 2:
            bulk_profiles = [
                self.scenario.links.get("eport_bulk_rgb", self.scenario.links["eport_serial"]),
                self.scenario.links.get("eport_bulk_stereo", self.scenario.links["eport_serial"]),
            ]
        elif "eport_bulk_rgb" in self.scenario.links:
            bulk_profiles = [self.scenario.links["eport_bulk_rgb"]]
        config = EportConfig(
            serial_device=self.scenario.eport_interfaces.serial,
            descriptor=self.scenario.eport_gadget,
            topic_plan=self.scenario.topic_plan,
            video_plan=self.scenario.video_plan,
            serial_profile=self.scenario.links["eport_serial"],
            bulk_profiles=bulk_profiles,
        )
        try:
            self.eport_app = EportApp(config, self.drone, self.scheduler).start()
        except EportError as exc:
            self._log(f"eport start failed: {exc}")
            self.fault_strings.append(f"{type(exc).__name__}: {exc}")
            self.aborted = True
            return
        self._feed(EventKind.EPORT_BULK_ACTIVE)
        if self.aborted:
            return
        self._feed(EventKind.EPORT_READY)

    def _request_stream(self) -> None:
        if self.aborted or self.streamer is None:
            return
        uptime = self._uptime_s()
        state = self._feed(EventKind.STREAM_REQUEST, uptime_s=uptime)
        if state is SystemState.FAULT:
            return
        if state is not SystemState.STREAM_GATED:
            # gated: retry the moment the uptime floor is reached
            wait_s = self.scenario.min_uptime_s - uptime
            self._log(f"stream gated at uptime {uptime:.1f} s; retrying in {wait_s:.1f} s")
            retry_ms = self.scheduler.clock.now_ms + wait_s * 1000.0
            self._end_ms = max(self._end_ms, retry_ms + self.scenario.duration_s * 1000.0 + DRAIN_MARGIN_MS)
            self.scheduler.after(wait_s * 1000.0, self._request_stream)
            return
        if self._feed(EventKind.STREAM_STARTED) is SystemState.FAULT:
            return
        self.stream_started_ms = self.scheduler.clock.now_ms
        self._end_ms = self.stream_started_ms + self.scenario.duration_s * 1000.0 + DRAIN_MARGIN_MS
        self.streamer.start(self.scenario.duration_s)
        self._log(f"streaming for {self.scenario.duration_s:g} s")

    # -- execution --------------------------------------------------------------

    def execute(self, pacer: Callable[[float], None] | None = None) -> RunResult:
        """Run to completion or first absorbing FAULT.

        pacer, when given, is called with each event's sim time before it
        fires (serve mode sleeps there; plain runs pass None).
        """
        s = self.scenario
        self._end_ms = (s.stream_start_s + s.duration_s) * 1000.0 + DRAIN_MARGIN_MS
        self.scheduler.at(s.skyport_start_s * 1000.0, self._start_skyport)
        self.scheduler.at(s.eport_start_s * 1000.0, self._start_eport)
        self.scheduler.at(s.stream_start_s * 1000.0, self._request_stream)

        while not self.aborted:
            next_time = self.scheduler.peek_time()
            if next_time is None or next_time > self._end_ms:
                break
            if pacer is not None:
                pacer(next_time)
            self.scheduler.step()

        if self.eport_app is not None and self.eport_app.running:
            self.eport_app.close()

        return self._finalize()

    def _finalize(self) -> RunResult:
        frames_sent = self.streamer.frames_sent if self.streamer else 0
        deliveries = [
            (a.capture_ts, a.complete_ms, a.frame_bytes) for a in self.receiver.arrivals
        ]
        for _, message in self.drone.events:
            if "faulted" in message:
                self._log(f"drone: {message}")
        record = RunRecord(
            duration_s=self.scenario.duration_s,
            frames_sent=frames_sent,
            deliveries=deliveries,
            faults=self.fault_strings,
        )
        if frames_sent > 0:
            report = collect_metrics(record)
        else:
            report = MetricsReport(
                latency_ms={"mean": 0.0, "p50": 0.0, "p95": 0.0},
                frames={"sent": 0, "delivered": 0, "dropped": 0},
                bitrate_bps=0.0,
                faults=list(self.fault_strings),
            )
        exit_code = 2 if report.faults else 0
        return RunResult(
            report=report,
            exit_code=exit_code,
            final_state=self.machine.state,
            fault_reason=self.machine.fault_reason,
            events=self.events,
        )


def run_scenario(
    scenario: Scenario, report_path: str | Path | None = None
) -> RunResult:
    """Execute a scenario and optionally write the deterministic report file."""
    result = SimulationRun(scenario).execute()
    if report_path is not None:
        Path(report_path).write_text(result.report.to_json())
    return result
