"""E-port application tests: startup, feed polling, fault propagation."""

import random

import pytest

from payloadsim.channel import EndpointRole, GadgetDescriptor, LinkProfile, PipeState
from payloadsim.clock import Scheduler
from payloadsim.drone import (
    HighBandwidth,
    MockDrone,
    PortKind,
    Topic,
    VideoSource,
    encode_feed_frame,
)
from payloadsim.eport import (
    BulkProvisionFailed,
    EportApp,
    EportConfig,
    EportError,
    NegotiationFailed,
    PipeFaulted,
    start_eport,
)

EPORT_ID = GadgetDescriptor(0x2CA3, 0x0051, 2)
SKYPORT_ID = GadgetDescriptor(0x2CA3, 0x0052, 1)


def make_env():
    scheduler = Scheduler()
    drone = MockDrone(scheduler)
    return drone, scheduler


def full_config(**overrides) -> EportConfig:
    base = dict(
        serial_device="onboard-uart",
        descriptor=EPORT_ID,
        topic_plan=[(Topic.ALTITUDE_AGL, 10.0)],
        video_plan=[VideoSource.RGB_MAIN, VideoSource.STEREO_DOWN],
    )
    base.update(overrides)
    return EportConfig(**base)


class TestStartup:
    def test_start_after_skyport_gives_two_active_pipes(self):
        drone, scheduler = make_env()
        drone.negotiate(PortKind.SKYPORT, SKYPORT_ID, HighBandwidth.NETWORK)
        app = start_eport(full_config(), drone, scheduler)
        assert len(app.pipes) == 2
        assert all(p.state is PipeState.ACTIVE for p in app.pipes)
        assert Topic.ALTITUDE_AGL in app.subscriptions

    def test_single_pipe_descriptor_cannot_carry_stereo(self):
        drone, scheduler = make_env()
        config = full_config(descriptor=GadgetDescriptor(0x2CA3, 0x0051, 1))
        with pytest.raises(BulkProvisionFailed):
            start_eport(config, drone, scheduler)

    def test_empty_plans_give_healthy_idle_session(self):
        drone, scheduler = make_env()
        app = start_eport(full_config(topic_plan=[], video_plan=[]), drone, scheduler)
        scheduler.run_until(2000.0)
        health = app.poll_feeds(3000.0)
        assert health.feeds == {}
        assert app.running

    def test_busy_port_surfaces_as_negotiation_failed(self):
        drone, scheduler = make_env()
        start_eport(full_config(), drone, scheduler)
        other = full_config(descriptor=GadgetDescriptor(0x2CA3, 0x0099, 2))
        with pytest.raises(NegotiationFailed):
            start_eport(other, drone, scheduler)


class TestFeedPolling:
    def test_one_second_of_rgb_at_24_fps(self):
        drone, scheduler = make_env()
        app = start_eport(full_config(video_plan=[VideoSource.RGB_MAIN]), drone, scheduler)
        health = app.poll_feeds(1000.0)
        assert health[VideoSource.RGB_MAIN].frames_received == 24
        assert health[VideoSource.RGB_MAIN].frames_dropped == 0

    def test_feeds_stay_separated_by_pipe(self):
        drone, scheduler = make_env()
        app = start_eport(full_config(), drone, scheduler)
        health = app.poll_feeds(1000.0)
        assert health[VideoSource.RGB_MAIN].frames_received == 24
        assert health[VideoSource.STEREO_DOWN].frames_received == 24

    def test_wrong_source_on_a_pipe_is_an_error(self):
        drone, scheduler = make_env()
        app = start_eport(full_config(video_plan=[VideoSource.RGB_MAIN]), drone, scheduler)
        rogue = encode_feed_frame(VideoSource.STEREO_DOWN, 0, 0.0, 10)
        app.pipes[0].endpoints[EndpointRole.INPUT].delivered.append((0.0, rogue))
        with pytest.raises(EportError):
            app.poll_feeds(100.0)

    def test_duplicate_frames_count_as_neither_received_nor_dropped(self):
        drone, scheduler = make_env()
        app = start_eport(full_config(video_plan=[VideoSource.RGB_MAIN]), drone, scheduler)
        before = app.poll_feeds(1000.0)[VideoSource.RGB_MAIN]
        dup = encode_feed_frame(VideoSource.RGB_MAIN, 3, 125.0, app.config.feed_frame_bytes)
        app.pipes[0].endpoints[EndpointRole.INPUT].delivered.append((1000.5, dup))
        after = app.poll_feeds(1001.0)[VideoSource.RGB_MAIN]
        # one genuine frame (id 24, captured just before t=1000) lands in the
        # window; the replayed id-3 frame is ignored entirely
        assert after.frames_received == before.frames_received + 1
        assert after.frames_dropped == 0
        assert after.duplicates == 1

    def test_seeded_loss_is_replayable_exactly(self):
        # 1000 frames at 50% loss: dropped count equals the Bernoulli replay
        seed = 2024
        rng = random.Random(seed)
        expected_dropped = sum(1 for _ in range(1000) if rng.random() < 0.5)

        drone, scheduler = make_env()
        lossy = LinkProfile(bandwidth_bps=1e9, latency_ms=0.0, loss_rate=0.5, seed=seed)
        config = full_config(
            topic_plan=[],
            video_plan=[VideoSource.RGB_MAIN],
            bulk_profiles=[lossy, LinkProfile(1e9)],
            feed_fps=100.0,
            feed_frame_bytes=64,
        )
        app = start_eport(config, drone, scheduler)
        app.poll_feeds(9_999.0)  # exactly 1000 captures at 100 fps (t=0..9990)
        health = app.close()
        counters = health[VideoSource.RGB_MAIN]
        assert counters.frames_received + counters.frames_dropped == 1000
        assert counters.frames_dropped == expected_dropped

    def test_closed_stream_accounting_invariant(self):
        drone, scheduler = make_env()
        lossy = LinkProfile(bandwidth_bps=1e9, loss_rate=0.25, seed=7)
        config = full_config(
            video_plan=[VideoSource.RGB_MAIN],
            bulk_profiles=[lossy, LinkProfile(1e9)],
        )
        app = start_eport(config, drone, scheduler)
        app.poll_feeds(5000.0)
        health = app.close()
        counters = health[VideoSource.RGB_MAIN]
        feed = app.session.feeds[0]
        assert counters.frames_received + counters.frames_dropped == feed.next_frame_id

    def test_monotone_frame_ids(self):
        drone, scheduler = make_env()
        app = start_eport(full_config(video_plan=[VideoSource.RGB_MAIN]), drone, scheduler)
        seen: list[int] = []
        for until in range(250, 3000, 250):
            health = app.poll_feeds(float(until))
            last = health[VideoSource.RGB_MAIN].last_frame_id
            if last is not None:
                seen.append(last)
        assert seen == sorted(seen)


class TestFaultPropagation:
    def test_skyport_negotiation_mid_run_faults_the_poll(self):
        drone, scheduler = make_env()
        app = start_eport(full_config(video_plan=[VideoSource.RGB_MAIN]), drone, scheduler)
        scheduler.run_until(480.0)
        drone.negotiate(PortKind.SKYPORT, SKYPORT_ID, HighBandwidth.NETWORK)
        with pytest.raises(PipeFaulted):
            app.poll_feeds(1000.0)
        # counters frozen at the fault instant: frames 0..11 (t <= 458.3 ms)
        frozen = app.snapshot()
        assert frozen[VideoSource.RGB_MAIN].frames_received == 12
        with pytest.raises(PipeFaulted):
            app.poll_feeds(5000.0)
        assert app.snapshot()[VideoSource.RGB_MAIN].frames_received == 12

    def test_restart_is_the_recovery_path(self):
        drone, scheduler = make_env()
        app = start_eport(full_config(video_plan=[VideoSource.RGB_MAIN]), drone, scheduler)
        scheduler.run_until(480.0)
        drone.negotiate(PortKind.SKYPORT, SKYPORT_ID, HighBandwidth.NETWORK)
        with pytest.raises(PipeFaulted):
            app.poll_feeds(1000.0)
        app.restart()
        assert all(p.state is PipeState.ACTIVE for p in app.pipes)
        start_ms = scheduler.clock.now_ms
        health = app.poll_feeds(start_ms + 1000.0)
        assert health[VideoSource.RGB_MAIN].frames_received == 24


class TestEventLog:
    def test_log_records_negotiation_subscription_and_stats(self):
        drone, scheduler = make_env()
        app = start_eport(full_config(), drone, scheduler)
        app.poll_feeds(2500.0)
        log = app.event_log()
        assert "negotiated eport, 2 bulk pipes active" in log
        assert "subscribed altitude_agl at 10 Hz" in log
        assert log.count("feed rgb_main received=") >= 2  # per-second stats
        assert log.endswith("\n")
