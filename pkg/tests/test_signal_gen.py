import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import find_peaks

from ecgtelemetry.signal_gen import (EcgParams, InterferenceSpec, MotionBurst, common_mode_signal,
                                     inject_interference, r_peak_times, synthesize_ecg)
from ecgtelemetry.traces import SampleTrace, read_csv, write_csv


def count_r_waves(trace):
    x = trace.samples
    peaks, _ = find_peaks(x, height=0.5 * x.max(), distance=int(0.15 * trace.fs))
    return peaks


def amplitude_at(x, fs, f):
    """Single-bin DFT amplitude of a tone that fits an integer number of cycles."""
    n = len(x)
    k = int(round(f * n / fs))
    spec = np.fft.rfft(x)
    return 2 * np.abs(spec[k]) / n, int(np.argmax(np.abs(spec[1:]))) + 1, k


class TestEcgParams:
    @pytest.mark.parametrize("kw", [
        {"heart_rate": 0}, {"heart_rate": -5}, {"peak_to_peak": 0}, {"peak_to_peak": 3.5},
        {"rr_jitter": 0.3}, {"rr_jitter": -0.1},
    ])
    def test_rejects_out_of_range(self, kw):
        with pytest.raises(ValueError):
            EcgParams(**kw)

    def test_rejects_non_positive_width(self):
        morph = ((0.1, 0.02, 0.1), (0.22, 0.0, -0.1), (0.25, 0.01, 1.0), (0.28, 0.01, -0.2), (0.55, 0.04, 0.3))
        with pytest.raises(ValueError):
            EcgParams(p_qrs_t_morphology=morph)


class TestSynthesizeEcg:
    def test_sixty_bpm_ten_seconds(self):
        tr = synthesize_ecg(EcgParams(heart_rate=60), 10.0, 1000.0)
        assert len(tr) == 10000
        assert tr.unit == "millivolt"
        assert abs(len(count_r_waves(tr)) - 10) <= 1

    def test_peak_to_peak_default(self):
        tr = synthesize_ecg(EcgParams(peak_to_peak=1.0), 10.0)
        ptp = tr.samples.max() - tr.samples.min()
        assert 0.9 <= ptp <= 1.1

    def test_zero_duration_is_empty(self):
        assert len(synthesize_ecg(EcgParams(), 0.0)) == 0

    def test_sample_count_is_floor(self):
        assert len(synthesize_ecg(EcgParams(), 1.2345, 1000)) == 1234

    @pytest.mark.parametrize("fs", [0, -100])
    def test_non_positive_fs(self, fs):
        with pytest.raises(ValueError):
            synthesize_ecg(EcgParams(), 1.0, fs)

    def test_r_peaks_match_ground_truth_times(self):
        p = EcgParams(heart_rate=75)
        tr = synthesize_ecg(p, 20.0)
        found = count_r_waves(tr) / tr.fs
        truth = r_peak_times(p, 20.0)
        assert len(found) == len(truth)
        assert np.max(np.abs(found - truth)) <= 1.5e-3

    def test_missed_beat_is_omitted(self):
        p = EcgParams(heart_rate=60, missed_beats=(4,))
        tr = synthesize_ecg(p, 10.0)
        assert len(count_r_waves(tr)) == 9
        assert len(r_peak_times(p, 10.0)) == 9

    def test_deterministic(self):
        p = EcgParams(heart_rate=70, rr_jitter=0.1)
        a = synthesize_ecg(p, 15.0, seed=3)
        b = synthesize_ecg(p, 15.0, seed=3)
        c = synthesize_ecg(p, 15.0, seed=4)
        assert np.array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, c.samples)

    @settings(max_examples=25)
    @given(hr=st.floats(30, 220), duration=st.floats(5, 300))
    def test_beat_count_property(self, hr, duration):
        tr = synthesize_ecg(EcgParams(heart_rate=hr), duration, 250.0)
        assert abs(len(count_r_waves(tr)) - round(hr * duration / 60)) <= 1


class TestInjectInterference:
    clean = synthesize_ecg(EcgParams(), 10.0)

    def test_powerline_single_bin(self):
        out, truth = inject_interference(self.clean, InterferenceSpec(powerline=(50.0, 1.5)))
        amp, peak_bin, k = amplitude_at(truth.components["powerline"], 1000.0, 50.0)
        assert peak_bin == k
        assert amp == pytest.approx(1500.0, rel=0.01)  # mV
        amp_total, peak_total, _ = amplitude_at(out.samples - self.clean.samples, 1000.0, 50.0)
        assert peak_total == k and amp_total == pytest.approx(1500.0, rel=0.01)

    def test_baseline_wander_amplitude(self):
        _, truth = inject_interference(self.clean, InterferenceSpec(baseline_wander=(300.0, 0.2)))
        w = truth.components["baseline_wander"]
        assert np.max(np.abs(w)) == pytest.approx(300.0, rel=0.01)
        amp, peak_bin, k = amplitude_at(w, 1000.0, 0.2)
        assert peak_bin == k

    def test_empty_spec_is_identity(self):
        out, truth = inject_interference(self.clean, InterferenceSpec())
        assert np.array_equal(out.samples, self.clean.samples)
        assert truth.components == {}

    def test_overlapping_lead_off_rejected(self):
        with pytest.raises(ValueError):
            inject_interference(self.clean, InterferenceSpec(lead_off_events=((1.0, 2.0), (2.5, 1.0))))

    def test_adjacent_lead_off_allowed(self):
        out, truth = inject_interference(self.clean, InterferenceSpec(lead_off_events=((1.0, 1.0), (2.0, 1.0))))
        assert np.all(truth.components["lead_off"][1000:3000] == 300.0)

    def test_requires_millivolts(self):
        with pytest.raises(ValueError):
            inject_interference(self.clean.to_unit("volt"), InterferenceSpec(white_noise_rms=1.0))

    def test_motion_burst_confined_to_window(self):
        spec = InterferenceSpec(motion_bursts=(MotionBurst(2.0, 1.5, 2.0),))
        _, truth = inject_interference(self.clean, spec, seed=5)
        m = truth.components["motion"]
        assert np.all(m[:2000] == 0) and np.all(m[3500:] == 0)
        assert np.sqrt(np.mean(m[2000:3500] ** 2)) == pytest.approx(2.0, rel=1e-9)

    def test_additivity_and_determinism(self):
        spec = InterferenceSpec(powerline=(60.0, 0.2), baseline_wander=(5.0, 0.3),
                                motion_bursts=(MotionBurst(1.0, 2.0, 1.0),),
                                lead_off_events=((6.0, 0.5),), white_noise_rms=20.0)
        a, ta = inject_interference(self.clean, spec, seed=11)
        b, _ = inject_interference(self.clean, spec, seed=11)
        assert np.array_equal(a.samples, b.samples)
        assert np.array_equal(a.samples, self.clean.samples + ta.total(len(a)))
        assert np.allclose(a.samples - self.clean.samples, ta.total(len(a)), rtol=0, atol=1e-12)
        assert set(ta.components) == {"powerline", "baseline_wander", "motion", "lead_off", "white_noise"}

    @settings(max_examples=30)
    @given(f=st.floats(0.5, 120.0), a=st.floats(0.0, 2.0))
    def test_tone_spectral_placement(self, f, a):
        n, fs = 8000, 1000.0
        clean = SampleTrace(fs, np.zeros(n), "millivolt")
        _, truth = inject_interference(clean, InterferenceSpec(powerline=(f, max(a, 1e-3))))
        spec = np.abs(np.fft.rfft(truth.components["powerline"]))
        expected = f * n / fs
        assert abs(int(np.argmax(spec)) - expected) <= 1.0


class TestCommonModeSignal:
    def test_powerline_only(self):
        cm = common_mode_signal(InterferenceSpec(powerline=(50.0, 1.5)), 1.0, 1000.0)
        t = np.arange(1000) / 1000.0
        assert cm.unit == "volt"
        assert np.allclose(cm.samples, 1.5 * np.sin(2 * np.pi * 50 * t))

    def test_empty_spec_zero(self):
        cm = common_mode_signal(InterferenceSpec(), 2.0)
        assert len(cm) == 2000 and not np.any(cm.samples)

    def test_white_noise_rms(self):
        cm = common_mode_signal(InterferenceSpec(white_noise_rms=100.0), 10.0, seed=2)
        rms_uv = np.sqrt(np.mean(cm.samples ** 2)) * 1e6
        assert rms_uv == pytest.approx(100.0, rel=0.05)

    def test_deterministic(self):
        spec = InterferenceSpec(powerline=(50.0, 1.0), white_noise_rms=10.0)
        assert np.array_equal(common_mode_signal(spec, 3, seed=9).samples, common_mode_signal(spec, 3, seed=9).samples)


class TestTraceCsv:
    def test_round_trip(self, tmp_path):
        tr = synthesize_ecg(EcgParams(), 2.0)
        path = write_csv(tr, tmp_path / "t.csv")
        back = read_csv(path)
        assert back.fs == tr.fs and back.unit == tr.unit
        assert np.array_equal(back.samples, tr.samples)

    def test_header_columns(self, tmp_path):
        path = write_csv(SampleTrace(100.0, [1.0, 2.0]), tmp_path / "t.csv")
        lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
        assert lines[0] == "t_seconds,value"

    def test_samples_read_only(self):
        tr = SampleTrace(100.0, [1.0, 2.0])
        with pytest.raises(ValueError):
            tr.samples[0] = 5

    @pytest.mark.parametrize("kw", [{"fs": 0}, {"unit": "furlong"}])
    def test_invalid_trace(self, kw):
        args = {"fs": 100.0, "samples": [0.0], "unit": "millivolt", **kw}
        with pytest.raises(ValueError):
            SampleTrace(**args)
