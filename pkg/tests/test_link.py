import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecgtelemetry.link import (FRAME_SIZE, NOMINAL_PARAMS, ChannelModel, ConnectionParams, Frame, LinkReport,
                               PacketFormat, SequenceGapError, ThroughputWarning, depacketize, frames_for_samples,
                               packetize, read_session_file, simulate_session, supervision_deadline, throughput,
                               write_session_file)
from ecgtelemetry.traces import SampleTrace


def code_trace(values):
    return SampleTrace(1000.0, np.asarray(values, np.int64), "adc-code")


def random_frames(n_frames, seed=0, fmt=PacketFormat()):
    rng = np.random.default_rng(seed)
    return packetize(code_trace(rng.integers(0, 1 << fmt.sample_bits, n_frames * fmt.samples_per_frame)), fmt)


class TestFraming:
    def test_two_full_frames(self):
        frames = packetize(code_trace(range(24)))
        assert [f.seq for f in frames] == [0, 1]
        assert all(len(f.to_bytes()) == FRAME_SIZE for f in frames)
        assert all(f.pad == 0 and not f.is_retransmission for f in frames)

    def test_single_frame_twenty_bytes(self):
        frames = packetize(code_trace(range(12)))
        assert len(frames) == 1 and len(frames[0].to_bytes()) == 20

    def test_seq_wraps(self):
        assert [f.seq for f in packetize(code_trace(range(24)), start_seq=255)] == [255, 0]

    def test_bit_layout(self):
        # 0xABC, 0x123 packed MSB first occupy the first three payload bytes
        f = packetize(code_trace([0xABC, 0x123] + [0] * 10))[0]
        assert f.to_bytes()[:4] == bytes([0x00, 0xAB, 0xC1, 0x23])
        assert f.to_bytes()[19] == 0

    def test_partial_frame_pad(self):
        frames = packetize(code_trace(range(30)))
        assert len(frames) == 3 and frames[-1].pad == 6
        assert frames[-1].flags == 6 << 3
        assert depacketize(frames).samples.tolist() == list(range(30))

    def test_code_too_wide(self):
        with pytest.raises(ValueError):
            packetize(code_trace([4096]))
        with pytest.raises(ValueError):
            packetize(code_trace([-1]))

    def test_empty(self):
        assert packetize(code_trace([])) == []
        assert len(depacketize([])) == 0

    def test_gap_reports_missing(self):
        frames = packetize(code_trace(range(36)))
        with pytest.raises(SequenceGapError) as err:
            depacketize([frames[0], frames[2]])
        assert err.value.missing == [1]

    def test_round_trip_ten_thousand(self):
        rng = np.random.default_rng(0)
        x = rng.integers(0, 4096, 10_000)
        assert np.array_equal(depacketize(packetize(code_trace(x))).samples, x)

    @given(st.lists(st.integers(0, 4095), max_size=500), st.integers(0, 255))
    def test_round_trip_property(self, values, start):
        frames = packetize(code_trace(values), start_seq=start)
        assert depacketize(frames).samples.tolist() == values
        assert all(len(f.to_bytes()) == FRAME_SIZE for f in frames)
        assert all((b.seq - a.seq) % 256 == 1 for a, b in zip(frames, frames[1:]))

    @given(st.integers(1, 16).flatmap(lambda bits: st.tuples(
        st.just(bits), st.integers(1, min(31, 144 // bits)), st.integers(0, 200))))
    def test_formats(self, args):
        bits, spf, n = args
        fmt = PacketFormat(bits, spf)
        x = np.random.default_rng(n).integers(0, 1 << bits, n)
        frames = packetize(code_trace(x), fmt)
        assert len(frames) == frames_for_samples(n, fmt)
        assert np.array_equal(depacketize(frames, fmt).samples, x)

    @pytest.mark.parametrize("bits,spf", [(12, 13), (16, 10), (0, 1)])
    def test_format_must_fit(self, bits, spf):
        with pytest.raises(ValueError):
            PacketFormat(bits, spf)

    def test_frame_validation(self):
        with pytest.raises(ValueError):
            Frame(256, bytes(19))
        with pytest.raises(ValueError):
            Frame(0, bytes(18))
        with pytest.raises(ValueError):
            Frame.from_bytes(bytes(21))

    def test_retransmission_flag_round_trip(self):
        f = packetize(code_trace(range(12)))[0]
        r = f.marked_retransmission()
        assert r.is_retransmission and r.flags == 1 and r.original() == f

    def test_frames_for_samples(self):
        assert frames_for_samples(10_000) == 834


class TestTiming:
    @pytest.mark.parametrize("mult,secs", [(3200, 32.0), (0, 0.0), (100, 1.0)])
    def test_deadline(self, mult, secs):
        p = ConnectionParams(supervision_timeout_multiplier=mult)
        assert supervision_deadline(p) == pytest.approx(secs)

    def test_failed_events_before_disconnect(self):
        assert round(supervision_deadline(NOMINAL_PARAMS) / NOMINAL_PARAMS.active_interval) == 320

    def test_params_validation(self):
        with pytest.raises(ValueError):
            ConnectionParams(min_interval=0.2, active_interval=0.1)
        with pytest.raises(ValueError):
            ConnectionParams(slave_latency=70_000)

    def test_throughput_nominal_warns(self):
        with pytest.warns(ThroughputWarning):
            assert throughput(PacketFormat(), 5, 0.1) == pytest.approx(600.0)

    def test_throughput_nine_packets(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert throughput(PacketFormat(), 9, 0.1) == pytest.approx(1080.0)

    def test_throughput_zero_target(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            throughput(PacketFormat(), 1, 0.1, target=0)


class TestSimulation:
    def test_lossless(self):
        frames = random_frames(500)
        got, rep = simulate_session(frames, NOMINAL_PARAMS, ChannelModel(), 5)
        assert rep.retransmissions == 0 and rep.frames_lost_first_try == 0
        assert [f.to_bytes() for f in got] == [f.to_bytes() for f in frames]
        assert rep.delivered_in_order and rep.disconnects == 0
        assert rep.events_elapsed == 100
        assert rep.latency_histogram == {0: 500}

    @pytest.mark.parametrize("loss", [0.1, 0.3])
    def test_lossy_delivers_everything(self, loss):
        frames = random_frames(10_000, seed=1)
        got, rep = simulate_session(frames, NOMINAL_PARAMS, ChannelModel(loss, seed=4), 5)
        assert [f.to_bytes() for f in got] == [f.to_bytes() for f in frames]
        assert rep.delivered_in_order and rep.disconnects == 0
        # every transmission is an independent Bernoulli trial
        expected = len(frames) * loss / (1 - loss)
        assert rep.retransmissions == pytest.approx(expected, rel=0.1)
        assert rep.frames_lost_first_try == pytest.approx(len(frames) * loss, rel=0.1)

    def test_event_loss_recovered(self):
        frames = random_frames(2000, seed=2)
        got, rep = simulate_session(frames, NOMINAL_PARAMS, ChannelModel(0.05, 0.2, seed=1), 5)
        assert len(got) == 2000 and rep.delivered_in_order
        assert rep.failed_events > 0

    def test_deterministic(self):
        frames = random_frames(1000)
        a = simulate_session(frames, NOMINAL_PARAMS, ChannelModel(0.2, seed=3), 5, seed=1)[1]
        b = simulate_session(frames, NOMINAL_PARAMS, ChannelModel(0.2, seed=3), 5, seed=1)[1]
        c = simulate_session(frames, NOMINAL_PARAMS, ChannelModel(0.2, seed=3), 5, seed=2)[1]
        assert a == b and a != c

    @settings(max_examples=15)
    @given(loss=st.floats(0.0, 0.6), ppe=st.integers(1, 9), seed=st.integers(0, 10_000),
           n=st.integers(1, 600))
    def test_lossless_delivery_property(self, loss, ppe, seed, n):
        frames = random_frames(n, seed)
        got, rep = simulate_session(frames, NOMINAL_PARAMS, ChannelModel(loss, seed=seed), ppe)
        assert [f.to_bytes() for f in got] == [f.to_bytes() for f in frames]
        assert all((b.seq - a.seq) % 256 == 1 for a, b in zip(got, got[1:]))

    def test_disconnect_at_first_event_past_deadline(self):
        frames = random_frames(100)
        got, rep = simulate_session(frames, NOMINAL_PARAMS, ChannelModel(outages=((0.0, 1e9),)), 5)
        assert rep.disconnects == 1
        assert rep.failed_events == 320
        assert rep.disconnect_time == pytest.approx(32.1)
        assert got == []

    def test_nominal_preset_nine_intervals(self):
        params = NOMINAL_PARAMS.at_max_interval()
        got, rep = simulate_session(random_frames(10), params, ChannelModel(outages=((0.0, 1e9),)), 5)
        assert rep.failed_events == 8
        assert rep.disconnect_time == pytest.approx(9 * params.max_interval)

    def test_outage_shorter_than_deadline_recovers(self):
        frames = random_frames(3000)
        got, rep = simulate_session(frames, NOMINAL_PARAMS, ChannelModel(outages=((2.0, 20.0),)), 5,
                                    frame_period=0.012)
        assert rep.disconnects == 0 and len(got) == 3000
        assert rep.failed_events == 200

    def test_backpressure_limits_window(self):
        frames = random_frames(1000)
        _, rep = simulate_session(frames, NOMINAL_PARAMS, ChannelModel(outages=((0.5, 10.0),)), 5, frame_period=0.001)
        # a full sequence epoch never outstanding: nothing may be mis-ordered after wrap
        assert rep.delivered_in_order and rep.delivered_frames == 1000

    def test_slave_latency_idle(self):
        params = ConnectionParams(slave_latency=4)
        frames = random_frames(20)
        got, rep = simulate_session(frames, params, ChannelModel(), 5, frame_period=0.5)
        assert len(got) == 20 and rep.disconnects == 0

    def test_max_events_caps_run(self):
        _, rep = simulate_session(random_frames(100), NOMINAL_PARAMS, ChannelModel(), 1, max_events=10)
        assert rep.events_elapsed == 10 and rep.delivered_frames == 10

    def test_packets_per_event_validated(self):
        with pytest.raises(ValueError):
            simulate_session(random_frames(1), NOMINAL_PARAMS, ChannelModel(), 0)

    def test_channel_validation(self):
        with pytest.raises(ValueError):
            ChannelModel(1.0)


class TestSessionFile:
    def test_round_trip(self, tmp_path):
        frames = random_frames(50)
        path = write_session_file(tmp_path / "s.bin", frames)
        raw = path.read_bytes()
        assert raw[:5] == b"ECGF\x01" and len(raw) == 5 + 50 * 20
        assert read_session_file(path) == frames

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.bin"
        p.write_bytes(b"NOPE\x01")
        with pytest.raises(ValueError):
            read_session_file(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "x.bin"
        p.write_bytes(b"ECGF\x01" + bytes(25))
        with pytest.raises(ValueError):
            read_session_file(p)


class TestReport:
    def test_text_and_csv(self, tmp_path):
        _, rep = simulate_session(random_frames(30), NOMINAL_PARAMS, ChannelModel(0.3, seed=1), 5)
        text = rep.to_text()
        assert "frames_sent: 30" in text and "delivered_in_order: True" in text
        rows = rep.write_histogram_csv(tmp_path / "h.csv").read_text().splitlines()
        assert rows[0] == "delay_intervals,frames"
        assert sum(int(r.split(",")[1]) for r in rows[1:]) == 30
