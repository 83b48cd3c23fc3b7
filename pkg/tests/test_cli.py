import csv
import json

import numpy as np
import pytest

from ecgtelemetry.cli import main, parse_range
from ecgtelemetry.config import ConfigError, load_config
from ecgtelemetry.host import load_samples
from ecgtelemetry.pipeline import run_pipeline
from ecgtelemetry.traces import read_csv


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def report_fields(path):
    return dict(line.split(": ", 1) for line in path.read_text().splitlines() if ": " in line)


class TestSynth:
    def test_defaults(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path)]) == 0
        assert len(read_csv(tmp_path / "clean.csv")) == 30_000
        assert len(read_csv(tmp_path / "corrupted.csv")) == 30_000
        assert (tmp_path / "synth.png").stat().st_size > 0

    def test_zero_duration(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path), "--set", "signal.duration=0", "--no-figures"]) == 0
        assert len(read_csv(tmp_path / "clean.csv")) == 0
        assert len(read_csv(tmp_path / "corrupted.csv")) == 0

    def test_powerline_peak(self, tmp_path):
        main(["synth", "--out", str(tmp_path), "--no-figures", "--set", "interference.powerline_v=1.5",
              "--set", "signal.duration=10"])
        x = read_csv(tmp_path / "corrupted.csv").samples
        spec = np.abs(np.fft.rfft(x))
        assert np.argmax(spec[1:]) + 1 == 50 * 10

    def test_env_out_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ECGTELEMETRY_OUT", str(tmp_path / "env"))
        assert main(["synth", "--no-figures", "--set", "signal.duration=1"]) == 0
        assert (tmp_path / "env" / "clean.csv").exists()


class TestRun:
    def test_defaults(self, tmp_path, capsys):
        assert main(["run", "--out", str(tmp_path)]) == 0
        f = report_fields(tmp_path / "report.txt")
        assert f["permanent_loss"] == "0" and f["disconnects"] == "0"
        assert abs(float(f["mean_hr_bpm"]) - 60) <= 1
        assert float(f["projected_lifetime_h"]) > 480
        for name in ("session.bin", "meta.ndjson", "screening.ndjson", "r_peaks.csv", "run.png"):
            assert (tmp_path / name).exists()
        assert "mean_hr_bpm" in capsys.readouterr().out

    def test_lossy_matches_lossless(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        base = ["--no-figures", "--set", "signal.duration=20"]
        assert main(["run", "--out", str(a), *base]) == 0
        assert main(["run", "--out", str(b), *base, "--set", "channel.frame_loss=0.2"]) == 0
        assert (a / "session.bin").read_bytes() == (b / "session.bin").read_bytes()
        assert int(report_fields(b / "report.txt")["packets_retransmitted"]) > 0

    def test_zero_duration(self, tmp_path):
        assert main(["run", "--out", str(tmp_path), "--no-figures", "--set", "signal.duration=0"]) == 0
        assert report_fields(tmp_path / "report.txt")["frames"] == "0"

    def test_disconnect_exit_code(self, tmp_path):
        code = main(["run", "--out", str(tmp_path), "--no-figures", "--set", "signal.duration=40",
                     "--set", "channel.outages=[[1.0, 100.0]]"])
        assert code == 3

    def test_config_error_exit_code(self, tmp_path, capsys):
        assert main(["run", "--out", str(tmp_path), "--set", "signal.heart_rate=-3"]) == 2
        assert "configuration error" in capsys.readouterr().err

    def test_deterministic(self, tmp_path):
        for d in ("x", "y"):
            main(["run", "--out", str(tmp_path / d), "--no-figures", "--seed", "5", "--set", "signal.duration=8",
                  "--set", "channel.frame_loss=0.1"])
        for name in ("session.bin", "report.txt", "screening.ndjson", "afe_out.csv"):
            assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()

    def test_annotations_from_config(self, tmp_path):
        cfg_path = tmp_path / "c.toml"
        cfg_path.write_text('[signal]\nduration = 5\n[session]\nannotations = [[2.0, "anxious"]]\n')
        main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o"), "--no-figures"])
        meta = [json.loads(s) for s in (tmp_path / "o" / "meta.ndjson").read_text().splitlines()]
        assert {"record": "annotation", "t": 2.0, "text": "anxious"} in meta


class TestPower:
    def test_nominal_profile(self, tmp_path, capsys):
        assert main(["power", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "I_avg_digital = 244 uA" in out
        wave = rows(tmp_path / "current_waveform.csv")
        assert len(wave) == 100_000 and set(wave[0]) == {"t_us", "mA"}
        assert max(float(r["mA"]) for r in wave) == 7.66
        assert (tmp_path / "current_waveform.png").exists()

    def test_empty_profile_floor(self, tmp_path, capsys):
        main(["power", "--out", str(tmp_path), "--no-figures", "--set", 'power.phases="empty"'])
        out = capsys.readouterr().out
        assert "I_digital_with_sleep_uA = 50.0000" in out

    def test_lifetime_at_three_hundred(self, tmp_path, capsys):
        main(["power", "--out", str(tmp_path), "--no-figures", "--i-avg", "300"])
        assert "lifetime_h = 500.0" in capsys.readouterr().out


class TestSweep:
    def test_interval_monotone(self, tmp_path):
        assert main(["sweep", "--out", str(tmp_path), "--param", "t_interval", "--range", "0.05:0.5:0.05"]) == 0
        r = rows(tmp_path / "sweep_t_interval.csv")
        i = [float(x["i_avg_ua"]) for x in r]
        assert len(r) == 10 and all(b < a for a, b in zip(i, i[1:]))
        assert [x["below_target"] for x in r] == ["0"] + ["1"] * 9
        assert (tmp_path / "sweep_t_interval.png").exists()

    def test_single_point(self, tmp_path):
        main(["sweep", "--out", str(tmp_path), "--no-figures", "--param", "battery_capacity", "--range", "150"])
        r = rows(tmp_path / "sweep_battery_capacity.csv")
        assert len(r) == 1 and float(r[0]["lifetime_h"]) > 480

    def test_packets_per_event_throughput(self, tmp_path):
        main(["sweep", "--out", str(tmp_path), "--no-figures", "--param", "packets_per_event", "--range", "5,9"])
        r = rows(tmp_path / "sweep_packets_per_event.csv")
        assert [float(x["throughput_sps"]) for x in r] == [600.0, 1080.0]
        assert [x["below_target"] for x in r] == ["1", "0"]

    def test_bad_range(self, tmp_path):
        assert main(["sweep", "--out", str(tmp_path), "--param", "t_interval", "--range", "1:2"]) == 2
        assert main(["sweep", "--out", str(tmp_path), "--param", "t_interval", "--range", "0.0"]) == 2

    def test_parse_range(self):
        assert parse_range("0.1:0.3:0.1") == [0.1, 0.2, 0.3]
        assert parse_range("1,2.5") == [1.0, 2.5]
        with pytest.raises(ConfigError):
            parse_range("a,b")


class TestScreenAndLinkSim:
    def test_screen_trace(self, tmp_path):
        main(["synth", "--out", str(tmp_path), "--no-figures", "--set", "signal.heart_rate=120",
              "--set", "signal.duration=20"])
        assert main(["screen", str(tmp_path / "corrupted.csv"), "--out", str(tmp_path / "s")]) == 0
        recs = [json.loads(s) for s in (tmp_path / "s" / "screening.ndjson").read_text().splitlines()]
        assert recs[-1]["record"] == "summary" and recs[-1]["beats"] == 40
        assert any(r.get("kind") == "tachycardia" for r in recs)
        assert (tmp_path / "s" / "screen.png").exists()

    def test_screen_short_trace(self, tmp_path):
        main(["synth", "--out", str(tmp_path), "--no-figures", "--set", "signal.duration=1"])
        assert main(["screen", str(tmp_path / "clean.csv"), "--out", str(tmp_path)]) == 2

    def test_screen_missing_file(self, tmp_path):
        assert main(["screen", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 2

    def test_link_sim_random(self, tmp_path, capsys):
        assert main(["link-sim", "--out", str(tmp_path), "--no-figures", "--set", "signal.duration=6",
                     "--set", "channel.frame_loss=0.3"]) == 0
        assert (tmp_path / "sent.bin").read_bytes() == (tmp_path / "session.bin").read_bytes()
        assert "delivered_in_order: True" in capsys.readouterr().out

    def test_link_sim_replay(self, tmp_path):
        main(["run", "--out", str(tmp_path / "r"), "--no-figures", "--set", "signal.duration=3"])
        assert main(["link-sim", "--frames", str(tmp_path / "r" / "session.bin"), "--out", str(tmp_path / "l"),
                     "--no-figures", "--set", "channel.frame_loss=0.5"]) == 0
        assert (tmp_path / "l" / "session.bin").read_bytes() == (tmp_path / "r" / "session.bin").read_bytes()

    def test_link_sim_disconnect(self, tmp_path):
        assert main(["link-sim", "--out", str(tmp_path), "--no-figures", "--set", "channel.outages=[[0, 100]]",
                     "--set", "signal.duration=60"]) == 3


class TestPipeline:
    def test_received_matches_codes(self, tmp_path):
        cfg = load_config(overrides=["signal.duration=6", "channel.frame_loss=0.3"])
        res = run_pipeline(cfg, tmp_path)
        back = load_samples(tmp_path)
        assert np.array_equal(back.samples, res.codes.samples)
        assert res.screening is not None and abs(res.screening.mean_hr - 60) <= 1
        assert not res.disconnected
