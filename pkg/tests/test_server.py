"""Live serve-mode tests over a real WebSocket client."""

import json
import socket
import threading

import pytest
from websockets.sync.client import connect

from payloadsim.scenario import load_scenario
from payloadsim.server import PortInUse, serve_scenario
from payloadsim.skyport import Frame, StreamSource, parse_test_card, reassemble, unpack_packet


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class ServeSession:
    """serve_scenario in a thread with orderly startup and teardown."""

    def __init__(self, scenario_name: str, scale: float):
        self.scenario = load_scenario(scenario_name)
        self.port = free_port()
        self.scale = scale
        self.ready = threading.Event()
        self.stop = threading.Event()
        self.outcome = {}
        self.thread = threading.Thread(target=self._run, daemon=True)

    def _run(self):
        result, run = serve_scenario(
            self.scenario,
            self.port,
            scale=self.scale,
            ready_event=self.ready,
            stop_event=self.stop,
        )
        self.outcome["result"] = result
        self.outcome["run"] = run

    def __enter__(self):
        self.thread.start()
        assert self.ready.wait(5.0), "server did not come up"
        return self

    def __exit__(self, *exc):
        self.stop.set()
        self.thread.join(timeout=10.0)
        assert not self.thread.is_alive(), "server thread leaked"


def drain_session(conn, stop_after_end: bool = True):
    """Collect (json_messages, packets) until the end-of-run control frame."""
    docs, packets = [], []
    while True:
        message = conn.recv(timeout=30.0)
        if isinstance(message, bytes):
            packets.append(unpack_packet(message))
            continue
        doc = json.loads(message)
        docs.append(doc)
        if stop_after_end and doc.get("type") == "end":
            return docs, packets


class TestServe:
    def test_client_receives_and_reassembles_the_stream(self):
        with ServeSession("nominal.json", scale=25.0) as session:
            with connect(f"ws://127.0.0.1:{session.port}") as conn:
                docs, packets = drain_session(conn)

        assert docs[0]["type"] == "hello"
        assert (docs[0]["width"], docs[0]["height"]) == (640, 480)
        assert any(d["type"] == "clock" for d in docs)
        end = [d for d in docs if d["type"] == "end"][0]
        assert end["frames"]["delivered"] == 240

        by_frame = {}
        for packet in packets:
            by_frame.setdefault(packet.frame_id, []).append(packet)
        frames = [reassemble(group) for group in by_frame.values()]
        complete = [f for f in frames if isinstance(f, Frame)]
        assert len(complete) >= 200  # connect latency may miss the first frames
        card = parse_test_card(complete[0].payload)
        assert card["source"] is StreamSource.PI_DESKTOP

        result = session.outcome["result"]
        assert result.exit_code == 0

    def test_click_and_switch_round_trip(self):
        with ServeSession("nominal.json", scale=8.0) as session:
            with connect(f"ws://127.0.0.1:{session.port}") as conn:
                # wait until the stream is live so the streamer exists
                while True:
                    message = conn.recv(timeout=30.0)
                    if isinstance(message, bytes):
                        break
                conn.send(json.dumps({"type": "click", "u": 0.5, "v": 0.5}))
                conn.send(json.dumps({"type": "switch", "source": "RGB_MAIN"}))
                docs, packets = drain_session(conn)

        clicked = [d for d in docs if d["type"] == "clicked"]
        switched = [d for d in docs if d["type"] == "switched"]
        assert clicked and (clicked[0]["x"], clicked[0]["y"]) == (320, 240)
        assert switched and switched[0]["source"] == "RGB_MAIN"

        run = session.outcome["run"]
        assert [(c.x, c.y) for c in run.streamer.desktop.clicks] == [(320, 240)]

        by_frame = {}
        for packet in packets:
            by_frame.setdefault(packet.frame_id, []).append(packet)
        sources = {}
        for frame_id, group in by_frame.items():
            frame = reassemble(group)
            if isinstance(frame, Frame):
                sources[frame_id] = parse_test_card(frame.payload)["source"]
        assert StreamSource.RGB_MAIN in sources.values()
        # tagging is monotone: once switched, later frames carry the new source
        switched_ids = [fid for fid, s in sources.items() if s is StreamSource.RGB_MAIN]
        desktop_ids = [fid for fid, s in sources.items() if s is StreamSource.PI_DESKTOP]
        assert min(switched_ids) > max(desktop_ids)

    def test_bad_control_messages_are_rejected(self):
        with ServeSession("nominal.json", scale=25.0) as session:
            with connect(f"ws://127.0.0.1:{session.port}") as conn:
                conn.send("not json at all")
                conn.send(json.dumps({"type": "switch", "source": "THERMAL_CAM"}))
                conn.send(json.dumps({"type": "warp", "factor": 9}))
                docs, _ = drain_session(conn)
        reasons = [d for d in docs if d["type"] == "rejected"]
        assert len(reasons) >= 3

    def test_port_in_use(self):
        blocker = socket.socket()
        blocker.bind(("127.0.0.1", 0))
        blocker.listen(1)
        port = blocker.getsockname()[1]
        try:
            with pytest.raises(PortInUse):
                serve_scenario(load_scenario("nominal.json"), port)
        finally:
            blocker.close()
