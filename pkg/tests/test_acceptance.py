"""Acceptance suite: one test per release criterion, at stated tolerances.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per criterion.
"""

import random
import subprocess
import sys
import time

import pytest

from payloadsim.channel import GadgetDescriptor
from payloadsim.clock import Scheduler
from payloadsim.drone import (
    CAPABILITY_MATRIX,
    Capability,
    HighBandwidth,
    MockDrone,
    PortKind,
    check_capability,
)
from payloadsim.scenario import SimulationRun, load_scenario, run_scenario
from payloadsim.skyport import (
    DesktopStreamer,
    Frame,
    FrameType,
    StreamReceiver,
    chop,
    reassemble,
)

BUNDLED = [
    "nominal.json",
    "eport-first.json",
    "m30-stereo.json",
    "shared-serial.json",
    "lossy.json",
    "gated.json",
]


def announce(name: str) -> None:
    print(f"ACCEPTANCE {name}: PASS")


class TestAcceptance:
    def test_capability_matrix_conformance(self):
        # all 10 (port, capability) pairs, exhaustively, in under a second
        started = time.monotonic()
        expected = {
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
        assert set(CAPABILITY_MATRIX) == set(expected)
        for (port, cap), value in expected.items():
            assert check_capability(port, cap) is value, (port, cap)
        assert time.monotonic() - started < 1.0
        announce("capability matrix conformance (10/10 pairs)")

    def test_chop_reassemble_identity_10k(self):
        # >= 10,000 sampled (size, max_packet_bytes) pairs, zero failures, < 30 s
        started = time.monotonic()
        rng = random.Random(0xD0E5)
        cases = [(0, 1), (0, 65536), (200000, 1), (200000, 65536), (1, 1)]
        while len(cases) < 10_000:
            cases.append((rng.randrange(0, 200_001), rng.randrange(1, 65_537)))
        for i, (size, max_bytes) in enumerate(cases):
            payload = random.Random(i).randbytes(size)
            frame = Frame(
                frame_id=i,
                frame_type=FrameType.KEY if i % 2 == 0 else FrameType.DELTA,
                payload=payload,
                capture_ts=float(i),
            )
            packets = chop(frame, max_bytes)
            rng.shuffle(packets)
            assert reassemble(packets) == frame
        elapsed = time.monotonic() - started
        assert elapsed < 30.0, f"took {elapsed:.1f} s"
        announce(f"chop/reassemble identity ({len(cases)} pairs in {elapsed:.1f} s)")

    def test_bit_budget(self):
        # deterministic 10 s run: 240 frames, mean exactly 6250 B, 1.2 Mbps +-1%
        run = SimulationRun(load_scenario("nominal.json"))
        result = run.execute()
        assert run.streamer.frames_sent == 240
        assert run.streamer.bytes_sent / run.streamer.frames_sent == 6250.0
        assert abs(result.report.bitrate_bps - 1.2e6) <= 0.01 * 1.2e6
        announce(
            f"bit budget (240 frames, mean 6250 B, {result.report.bitrate_bps / 1e6:.3f} Mbps)"
        )

    def test_latency_reproduction(self):
        # encode 280 ms + link 20 ms: mean glass-to-glass 300 +- 5 ms over 10 s
        result = run_scenario(load_scenario("nominal.json"))
        mean = result.report.latency_ms["mean"]
        assert abs(mean - 300.0) <= 5.0
        announce(f"latency reproduction (mean {mean:.2f} ms within 300 +- 5)")

    def test_quirk_suite_via_cli(self):
        # Q1 gate boundary, Q2 ordering fault/clean, Q3 stereo transports --
        # through the real CLI entry point, deterministically (two equal runs)
        outputs = []
        for _ in range(2):
            proc = subprocess.run(
                [sys.executable, "-m", "payloadsim.cli", "quirks"],
                capture_output=True,
                text=True,
                timeout=60,
            )
            assert proc.returncode == 0, proc.stdout + proc.stderr
            outputs.append(proc.stdout)
        assert outputs[0] == outputs[1]
        for line in (
            "Q1 uptime gate: PASS",
            "Q2 start order: PASS",
            "Q3 stereo transport: PASS",
            "quirk suite: PASS",
        ):
            assert line in outputs[0]
        announce("quirk suite (Q1 gate, Q2 ordering, Q3 stereo; deterministic)")

    def test_gop_alternation_over_1000_frames(self):
        # strict KEY/DELTA alternation starting at KEY; no third frame type
        scheduler = Scheduler()
        drone = MockDrone(scheduler)
        session = drone.negotiate(
            PortKind.SKYPORT, GadgetDescriptor(0x2CA3, 0x0052, 1), HighBandwidth.NETWORK
        )
        receiver = StreamReceiver()
        streamer = DesktopStreamer(scheduler, session, receiver)
        streamer.start(1000 / streamer.encoder.fps)
        scheduler.run_until(50_000.0)
        assert streamer.frames_sent == 1000
        types = {}
        for record in streamer.packet_log:
            types[record.packet.frame_id] = record.packet.frame_type
        ordered = [types[i] for i in range(1000)]
        assert ordered[0] is FrameType.KEY
        assert all(a is not b for a, b in zip(ordered, ordered[1:]))
        assert len(FrameType) == 2  # no third frame type exists anywhere
        announce("GOP alternation (1000 frames, strict KEY/DELTA from KEY)")

    def test_replay_determinism_all_bundled(self, tmp_path):
        # equal seeds -> byte-identical MetricsReport files, every scenario
        for name in BUNDLED:
            a = tmp_path / f"a-{name}"
            b = tmp_path / f"b-{name}"
            run_scenario(load_scenario(name), report_path=a)
            run_scenario(load_scenario(name), report_path=b)
            assert a.read_bytes() == b.read_bytes(), name
        announce(f"replay determinism ({len(BUNDLED)} scenarios byte-identical)")

    def test_velocity_integration(self):
        # (1,0,0) m/s for 2 s from origin -> within 1e-9 m of (2,0,0)
        scheduler = Scheduler()
        drone = MockDrone(scheduler)
        eport_id = GadgetDescriptor(0x2CA3, 0x0051, 2)
        session = drone.negotiate(PortKind.EPORT, eport_id, HighBandwidth.NETWORK)
        final = drone.command_velocity(session, 1.0, 0.0, 0.0, duration_s=2.0)

        x, y, z = 0.0, 0.0, 0.0
        for _ in range(100):  # independent Euler oracle at 50 Hz
            x += 1.0 * 0.02
        assert final.position == pytest.approx((x, y, z), abs=1e-12)
        assert final.position == pytest.approx((2.0, 0.0, 0.0), abs=1e-9)
        announce("velocity integration (Euler oracle, |err| < 1e-9)")
