#!/usr/bin/env python3
"""Generate the shared conformance vectors for the controller UI.

Writes frontend/tests/fixtures/conformance.json: wire-encoded packet
multisets with expected reassembly results, plus click-mapping vectors.
Both the Python suite and the browser client test against the same file.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

from payloadsim.skyport import (
    Frame,
    FrameType,
    StreamSource,
    build_test_card,
    chop,
    map_click,
    pack_packet,
)

OUT = Path(__file__).resolve().parents[1] / "frontend" / "tests" / "fixtures" / "conformance.json"


def frame(frame_id: int, payload: bytes, capture_ts: float = 0.0) -> Frame:
    return Frame(
        frame_id=frame_id,
        frame_type=FrameType.KEY if frame_id % 2 == 0 else FrameType.DELTA,
        payload=payload,
        capture_ts=capture_ts,
    )


def vector(name: str, f: Frame, max_bytes: int, rng: random.Random,
           shuffle: bool = True, duplicates: int = 0, withhold: int | None = None) -> dict:
    packets = chop(f, max_bytes)
    complete = withhold is None
    if withhold is not None:
        packets = [p for p in packets if p.index != withhold]
    for _ in range(duplicates):
        packets.append(rng.choice(packets))
    if shuffle:
        rng.shuffle(packets)
    entry = {
        "name": name,
        "packets_hex": [pack_packet(p).hex() for p in packets],
        "expect": {"complete": complete},
    }
    if complete:
        entry["expect"].update(
            {
                "frame_id": f.frame_id,
                "frame_type": int(f.frame_type),
                "payload_hex": f.payload.hex(),
            }
        )
    return entry


def main() -> None:
    rng = random.Random(0xC0DE)
    vectors = [
        vector("single-packet", frame(0, rng.randbytes(100)), 8192, rng, shuffle=False),
        vector("empty-frame", frame(1, b""), 8192, rng, shuffle=False),
        vector("three-packets-in-order", frame(2, rng.randbytes(2000)), 800, rng, shuffle=False),
        vector("shuffled", frame(3, rng.randbytes(3000)), 512, rng),
        vector("shuffled-with-duplicates", frame(4, rng.randbytes(2500)), 600, rng, duplicates=4),
        vector("missing-first-packet", frame(5, rng.randbytes(1500)), 400, rng, withhold=0),
        vector("missing-last-packet", frame(6, rng.randbytes(1500)), 400, rng, withhold=3),
        vector("one-byte-packets", frame(7, rng.randbytes(64)), 1, rng),
        vector("delta-frame", frame(9, rng.randbytes(777)), 256, rng),
        vector(
            "test-card-frame",
            frame(10, build_test_card(StreamSource.RGB_MAIN, 10, 1234.5, 900, cursor=(320, 240))),
            256,
            rng,
        ),
        vector("exact-multiple", frame(12, rng.randbytes(1024)), 256, rng),
    ]
    clicks = [
        {"u": u, "v": v, "x": map_click(u, v)[0], "y": map_click(u, v)[1]}
        for u, v in [
            (0.0, 0.0),
            (1.0, 1.0),
            (0.5, 0.5),
            (0.25, 0.75),
            (0.999, 0.001),
            (1 / 3, 2 / 3),
        ]
    ]
    viewports = []
    for w, h in [(640, 480), (1280, 960), (1920, 1080), (800, 600), (641, 481)]:
        u, v = (w / 2) / w, (h / 2) / h
        x, y = map_click(u, v)
        viewports.append({"w": w, "h": h, "click_x": w / 2, "click_y": h / 2, "x": x, "y": y})

    doc = {"vectors": vectors, "clicks": clicks, "viewport_centers": viewports}
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(doc, indent=2) + "\n")
    print(f"wrote {OUT} ({len(vectors)} vectors, {len(clicks)} clicks)")


if __name__ == "__main__":
    main()
