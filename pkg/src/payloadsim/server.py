"""Live session: the scenario runner behind a WebSocket, paced to wall time.

Downstream traffic is binary VideoPacket messages in the documented wire
layout, plus a few JSON control frames (hello, 1 Hz sim-clock beacons for
latency overlays, switch acks, end-of-run). Upstream control is JSON:

    {"type": "click", "u": 0.5, "v": 0.5}
    {"type": "switch", "source": "RGB_MAIN"}

The simulation core stays single-owner: client handler threads only enqueue
control messages; the sim thread applies them between events and does all
broadcasting.
"""

from __future__ import annotations

import json
import queue
import threading
import time

from websockets.sync.server import serve as ws_serve

from .scenario import RunResult, Scenario, SimulationRun
from .skyport import OutOfBounds, StreamSource, pack_packet

CLOCK_BEACON_MS = 1000.0


class PortInUse(Exception):
    """The requested TCP port is already bound."""


class _Hub:
    """Connection registry; all sends happen on the simulation thread."""

    def __init__(self):
        self._clients: set = set()
        self._lock = threading.Lock()

    def add(self, conn) -> None:
        with self._lock:
            self._clients.add(conn)

    def remove(self, conn) -> None:
        with self._lock:
            self._clients.discard(conn)

    def _send(self, conn, payload) -> None:
        try:
            conn.send(payload)
        except Exception:
            self.remove(conn)

    def broadcast(self, payload: bytes) -> None:
        with self._lock:
            targets = list(self._clients)
        for conn in targets:
            self._send(conn, payload)

    def broadcast_json(self, doc: dict) -> None:
        self.broadcast_text(json.dumps(doc))

    def broadcast_text(self, text: str) -> None:
        with self._lock:
            targets = list(self._clients)
        for conn in targets:
            self._send(conn, text)

    def send_json(self, conn, doc: dict) -> None:
        self._send(conn, json.dumps(doc))


def serve_scenario(
    scenario: Scenario,
    port: int,
    scale: float = 1.0,
    host: str = "127.0.0.1",
    ready_event: threading.Event | None = None,
    stop_event: threading.Event | None = None,
) -> tuple[RunResult, SimulationRun]:
    """Run the scenario at `scale` sim-seconds per wall-second, serving clients.

    Returns after the run completes and stop_event is set (the CLI never sets
    it, so the session lingers for viewers until interrupted).
    """
    stop = stop_event if stop_event is not None else threading.Event()
    run = SimulationRun(scenario)
    hub = _Hub()
    controls: queue.Queue = queue.Queue()

    def handler(conn) -> None:
        hub.add(conn)
        hub.send_json(
            conn,
            {
                "type": "hello",
                "scenario": scenario.name,
                "width": 640,
                "height": 480,
                "fps": scenario.encoder.fps,
                "scale": scale,
            },
        )
        try:
            for message in conn:
                if isinstance(message, bytes):
                    continue  # upstream is JSON-only
                try:
                    doc = json.loads(message)
                except json.JSONDecodeError:
                    hub.send_json(conn, {"type": "rejected", "reason": "not json"})
                    continue
                controls.put((conn, doc))
        finally:
            hub.remove(conn)

    try:
        server = ws_serve(handler, host, port)
    except OSError as exc:
        raise PortInUse(f"port {port} on {host}: {exc}") from exc

    server_thread = threading.Thread(target=server.serve_forever, daemon=True)
    server_thread.start()
    if ready_event is not None:
        ready_event.set()

    def apply_controls() -> None:
        while True:
            try:
                conn, doc = controls.get_nowait()
            except queue.Empty:
                return
            kind = doc.get("type")
            if kind == "click":
                if run.streamer is None:
                    hub.send_json(conn, {"type": "rejected", "reason": "no stream yet"})
                    continue
                try:
                    event = run.streamer.handle_click(float(doc["u"]), float(doc["v"]))
                except (OutOfBounds, KeyError, TypeError, ValueError) as exc:
                    hub.send_json(conn, {"type": "rejected", "reason": str(exc)})
                    continue
                hub.send_json(conn, {"type": "clicked", "x": event.x, "y": event.y})
            elif kind == "switch":
                name = doc.get("source")
                if run.streamer is None or name not in StreamSource.__members__:
                    hub.send_json(conn, {"type": "rejected", "reason": f"cannot switch to {name!r}"})
                    continue
                source = run.streamer.switch_source(StreamSource[name])
                hub.send_json(conn, {"type": "switched", "source": source.name})
            else:
                hub.send_json(conn, {"type": "rejected", "reason": f"unknown type {kind!r}"})

    sink_attached = False
    last_beacon_ms = 0.0
    wall_start = time.monotonic()

    def on_packet(packet, _arrival_ms: float) -> None:
        hub.broadcast(pack_packet(packet))

    def pacer(event_ms: float) -> None:
        nonlocal sink_attached, last_beacon_ms
        if not sink_attached and run.streamer is not None:
            run.streamer.packet_sink.append(on_packet)
            sink_attached = True
        if event_ms - last_beacon_ms >= CLOCK_BEACON_MS:
            last_beacon_ms = event_ms
            hub.broadcast_json({"type": "clock", "sim_ms": event_ms})
        target_wall = wall_start + event_ms / 1000.0 / scale
        while not stop.is_set():
            apply_controls()
            remaining = target_wall - time.monotonic()
            if remaining <= 0:
                break
            stop.wait(min(remaining, 0.05))
        apply_controls()
        if stop.is_set():
            run.aborted = True  # external stop, not a simulated fault

    result = run.execute(pacer=pacer)
    hub.broadcast_json(
        {
            "type": "end",
            "frames": result.report.frames,
            "mean_latency_ms": result.report.latency_ms["mean"],
            "faults": result.report.faults,
        }
    )
    while not stop.is_set():
        apply_controls()
        stop.wait(0.05)
    server.shutdown()
    server_thread.join(timeout=5.0)
    return result, run
