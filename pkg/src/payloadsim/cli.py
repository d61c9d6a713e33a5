"""Command-line front end: run scenarios, serve live sessions, check quirks."""

from __future__ import annotations

import argparse
import sys

from .channel import GadgetDescriptor, provision_bulk_pipes, PipeState
from .clock import Scheduler
from .drone import (
    HighBandwidth,
    MockDrone,
    PortKind,
    StereoRequiresBulk,
    VideoSource,
)
from .orchestrator import (
    EventKind,
    FaultReason,
    Gate,
    StartupEvent,
    SystemState,
    enforce_order,
    gate_streaming,
)
from .scenario import InvalidScenario, load_scenario, run_scenario


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario, seed_override=args.seed, duration_override=args.until)
    except InvalidScenario as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return 1
    result = run_scenario(scenario, report_path=args.report)
    for line in result.events:
        print(line)
    report = result.report
    print(
        f"run {scenario.name}: state={result.final_state.value} "
        f"frames={report.frames['sent']}/{report.frames['delivered']} "
        f"mean_latency={report.latency_ms['mean']:.1f} ms "
        f"bitrate={report.bitrate_bps / 1e6:.3f} Mbps"
    )
    if report.faults:
        print(f"faults: {', '.join(report.faults)}")
    print(f"report written to {args.report}")
    return result.exit_code


def _cmd_serve(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except InvalidScenario as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return 1
    from .server import PortInUse, serve_scenario

    print(f"serving {scenario.name} on ws://127.0.0.1:{args.port} (scale {args.scale:g}x)", flush=True)
    try:
        serve_scenario(scenario, args.port, scale=args.scale)
    except PortInUse as exc:
        print(f"cannot serve: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("serve interrupted")
    return 0


def _check(label: str, passed: bool, detail: str) -> bool:
    print(f"{label}: {'PASS' if passed else 'FAIL'} ({detail})")
    return passed


def _quirk_uptime_gate() -> bool:
    below = gate_streaming(179.0) is Gate.GATED
    at = gate_streaming(180.0) is Gate.ALLOWED
    return _check("Q1 uptime gate", below and at, "179 s gated, 180 s allowed")


def _quirk_start_order() -> bool:
    eport_id = GadgetDescriptor(0x2CA3, 0x0051, 2)
    skyport_id = GadgetDescriptor(0x2CA3, 0x0052, 1)

    # E-port bulk goes active first; SkyPort negotiation then breaks it.
    scheduler = Scheduler()
    drone = MockDrone(scheduler)
    pipes = provision_bulk_pipes(eport_id, scheduler)
    drone.negotiate(PortKind.EPORT, eport_id, HighBandwidth.BULK, bulk_pipes=pipes)
    for pipe in pipes:
        pipe.activate()
    drone.negotiate(PortKind.SKYPORT, skyport_id, HighBandwidth.NETWORK)
    broken = all(p.state is PipeState.FAULTED for p in pipes)

    final, reason, _ = enforce_order(
        [
            StartupEvent(EventKind.EPORT_START, 0.0),
            StartupEvent(EventKind.EPORT_BULK_ACTIVE, 50.0),
            StartupEvent(EventKind.SKYPORT_START, 100.0),
        ]
    )
    machine_broken = final is SystemState.FAULT and reason is FaultReason.BULK_CHANNEL_BROKEN

    # Reversed (correct) order runs clean.
    scheduler2 = Scheduler()
    drone2 = MockDrone(scheduler2)
    drone2.negotiate(PortKind.SKYPORT, skyport_id, HighBandwidth.NETWORK)
    pipes2 = provision_bulk_pipes(eport_id, scheduler2)
    drone2.negotiate(PortKind.EPORT, eport_id, HighBandwidth.BULK, bulk_pipes=pipes2)
    for pipe in pipes2:
        pipe.activate()
    scheduler2.run_until(1000.0)
    clean = all(p.state is PipeState.ACTIVE for p in pipes2)

    final2, reason2, _ = enforce_order(
        [
            StartupEvent(EventKind.SKYPORT_START, 0.0),
            StartupEvent(EventKind.SKYPORT_READY, 50.0),
            StartupEvent(EventKind.EPORT_START, 100.0),
            StartupEvent(EventKind.EPORT_BULK_ACTIVE, 150.0),
            StartupEvent(EventKind.EPORT_READY, 200.0),
        ]
    )
    machine_clean = final2 is SystemState.EPORT_READY and reason2 is None

    return _check(
        "Q2 start order",
        broken and machine_broken and clean and machine_clean,
        "eport-first breaks bulk channel, skyport-first runs clean",
    )


def _quirk_stereo_transport() -> bool:
    eport_id = GadgetDescriptor(0x2CA3, 0x0051, 2)

    # Stereo over a network transport is refused in every schedule.
    refused = 0
    attempts = 20
    for i in range(attempts):
        scheduler = Scheduler()
        drone = MockDrone(scheduler)
        session = drone.negotiate(PortKind.EPORT, eport_id, HighBandwidth.NETWORK)
        scheduler.run_until(float(i) * 37.0)
        try:
            drone.request_video(session, VideoSource.STEREO_DOWN)
        except StereoRequiresBulk:
            refused += 1
    total_refusal = refused == attempts

    # Over the bulk pipes the same request delivers frames.
    scheduler = Scheduler()
    drone = MockDrone(scheduler)
    pipes = provision_bulk_pipes(eport_id, scheduler)
    session = drone.negotiate(PortKind.EPORT, eport_id, HighBandwidth.BULK, bulk_pipes=pipes)
    for pipe in pipes:
        pipe.activate()
    drone.request_video(session, VideoSource.STEREO_DOWN)
    scheduler.run_until(1000.0)
    from .channel import EndpointRole

    delivered = len(pipes[1].endpoints[EndpointRole.INPUT].read_all())
    return _check(
        "Q3 stereo transport",
        total_refusal and delivered > 0,
        f"{refused}/{attempts} network refusals, {delivered} frames over bulk",
    )


def _cmd_quirks(_: argparse.Namespace) -> int:
    results = [_quirk_uptime_gate(), _quirk_start_order(), _quirk_stereo_transport()]
    print("quirk suite:", "PASS" if all(results) else "FAIL")
    return 0 if all(results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="payloadsim",
        description="Deterministic dual-port drone payload simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a scenario and write its report")
    run_p.add_argument("--scenario", required=True, help="scenario file or bundled name (nominal.json)")
    run_p.add_argument("--report", required=True, help="output path for the JSON metrics report")
    run_p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run_p.add_argument("--until", type=float, default=None, help="override streaming duration (sim seconds)")
    run_p.set_defaults(func=_cmd_run)

    serve_p = sub.add_parser("serve", help="run a scenario in real time behind a WebSocket")
    serve_p.add_argument("--scenario", required=True)
    serve_p.add_argument("--port", type=int, required=True)
    serve_p.add_argument("--scale", type=float, default=1.0, help="sim seconds per wall second")
    serve_p.set_defaults(func=_cmd_serve)

    quirks_p = sub.add_parser("quirks", help="run the built-in quirk checks (uptime gate, start order, stereo transport)")
    quirks_p.set_defaults(func=_cmd_quirks)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
