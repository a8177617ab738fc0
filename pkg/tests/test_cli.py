import json
from pathlib import Path

import numpy as np
import pytest

from spintrap.cli import main
from spintrap.spectrum import find_peaks
from spintrap.trace import read_trace_csv

SEQ_DIR = Path(__file__).resolve().parents[1] / "src" / "spintrap" / "sequences" / "v1"

SMALL = ["--n-static", "16", "--n-noise", "4"]


def _data_section(path):
    lines = Path(path).read_text().splitlines()
    return "\n".join(l for l in lines if not l.startswith("# created="))


def _write_config(tmp_path, data):
    p = tmp_path / "config.json"
    p.write_text(json.dumps(data))
    return str(p)


class TestSpectrumCommand:
    def test_default_three_peaks(self, tmp_path):
        out = tmp_path / "spec.csv"
        assert main(["spectrum", "--out", str(out)]) == 0
        trace = read_trace_csv(str(out))
        peaks = find_peaks(trace, 0.02)
        assert len(peaks) == 3
        assert peaks[2][0] - peaks[1][0] == pytest.approx(4.2e-3, abs=2e-5)

    def test_zero_nuclear_polarization_symmetric(self, tmp_path):
        out = tmp_path / "spec.csv"
        assert main(["spectrum", "--out", str(out), "--nuclear-polarization", "0"]) == 0
        peaks = find_peaks(read_trace_csv(str(out)), 0.05)
        doublet = [p for p in peaks if p[0] > 8.574]
        assert doublet[0][1] == pytest.approx(doublet[1][1], rel=1e-9)

    def test_reversed_bounds_exit_2(self, tmp_path, capsys):
        rc = main(["spectrum", "--out", str(tmp_path / "x.csv"),
                   "--b-start", "8.60", "--b-stop", "8.56"])
        assert rc == 2
        assert "b_start" in capsys.readouterr().err

    def test_unknown_config_key_exit_2(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, {"spectrum": {"b_strat_tesla": 8.5}})
        rc = main(["spectrum", "--out", str(tmp_path / "x.csv"), "--config", cfg])
        assert rc == 2
        assert "b_strat_tesla" in capsys.readouterr().err

    def test_embeds_config_hash(self, tmp_path):
        out = tmp_path / "spec.csv"
        main(["spectrum", "--out", str(out)])
        assert "config_hash" in read_trace_csv(str(out)).meta


class TestTransientCommand:
    def test_preset_extremum_and_tail(self, tmp_path):
        out = tmp_path / "t.csv"
        assert main(["transient", "--out", str(out), "--t-max", "0.015",
                     "--n-points", "3001"]) == 0
        trace = read_trace_csv(str(out))
        t, y = trace.x_array(), trace.y_array()
        i = int(np.argmin(y))
        assert t[i] == pytest.approx(335e-6, abs=5e-6)
        sel = t > 2e-3
        slope = np.polyfit(t[sel], np.log(-y[sel]), 1)[0]
        assert -1.0 / slope == pytest.approx(2.5e-3, rel=0.02)

    def test_zero_flip_fraction_zero_trace(self, tmp_path):
        out = tmp_path / "t.csv"
        assert main(["transient", "--out", str(out), "--flip-fraction", "0"]) == 0
        assert np.all(read_trace_csv(str(out)).y_array() == 0.0)

    def test_off_resonance_pulse_negligible(self, tmp_path):
        on = tmp_path / "on.csv"
        off = tmp_path / "off.csv"
        main(["transient", "--out", str(on)])
        # 1 mT off resonance: detuning ~ 1.8e8 rad/s >> w1 ~ 6.5e6 rad/s
        main(["transient", "--out", str(off), "--field-offset-tesla", "1e-3"])
        peak_on = np.abs(read_trace_csv(str(on)).y_array()).max()
        peak_off = np.abs(read_trace_csv(str(off)).y_array()).max()
        assert peak_off < 0.01 * peak_on

    def test_bad_flip_fraction_exit_2(self, tmp_path):
        assert main(["transient", "--out", str(tmp_path / "t.csv"),
                     "--flip-fraction", "1.5"]) == 2


class TestRunCommand:
    def test_all_shipped_sequences_run(self, tmp_path):
        config = str(SEQ_DIR / "pulsed_defaults.json")
        for name in ("nutation", "hahn_echo", "three_pulse_ed_echo", "readout_vee"):
            out = tmp_path / f"{name}.csv"
            rc = main(["run", str(SEQ_DIR / f"{name}.seq"), "--config", config,
                       "--out", str(out)] + SMALL)
            assert rc == 0, name
            assert out.exists()

    def test_inversion_recovery_sequence(self, tmp_path):
        out = tmp_path / "ir.csv"
        rc = main(["run", str(SEQ_DIR / "inversion_recovery.seq"),
                   "--config", str(SEQ_DIR / "inversion_recovery.json"),
                   "--out", str(out), "--n-static", "8", "--n-noise", "2"])
        assert rc == 0
        trace = read_trace_csv(str(out))
        assert trace.meta["axis_kind"] == "tau"
        assert len(trace) == 30

    def test_parse_error_exit_3_with_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.seq"
        bad.write_text("pulse pi/2 +x\ndelay -5us\nacquire echo\n")
        rc = main(["run", str(bad), "--out", str(tmp_path / "x.csv")])
        assert rc == 3
        assert "line 2" in capsys.readouterr().err

    def test_missing_seqfile_exit_3(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.seq"), "--out", str(tmp_path / "x.csv")]) == 3

    def test_hahn_echo_matches_analytic_envelope(self, tmp_path):
        out = tmp_path / "hahn.csv"
        main(["run", str(SEQ_DIR / "hahn_echo.seq"),
              "--config", str(SEQ_DIR / "pulsed_defaults.json"),
              "--out", str(out), "--n-static", "32", "--n-noise", "16"])
        trace = read_trace_csv(str(out))
        tau, y = trace.x_array(), trace.y_array()
        envelope = np.exp(-2 * tau / 160e-6 - 8 * tau**3 / (200e-6) ** 3)
        # amplitude prefactor (polarization, manifold weight, pulse errors)
        scale = y[0] / envelope[0]
        assert np.allclose(y, scale * envelope, atol=0.08 * scale)

    def test_three_pulse_echo_feature(self, tmp_path):
        out = tmp_path / "tp.csv"
        main(["run", str(SEQ_DIR / "three_pulse_ed_echo.seq"),
              "--config", str(SEQ_DIR / "pulsed_defaults.json"),
              "--out", str(out)] + SMALL)
        trace = read_trace_csv(str(out))
        x, y = trace.x_array(), trace.y_array()
        assert trace.units == "C"
        # charge magnitude dips (current increases) exactly at the echo
        assert x[int(np.argmax(y))] == pytest.approx(80e-6, abs=0.5e-6)
        plateau = np.median(y)
        assert abs(y[int(np.argmax(y))]) < 0.85 * abs(plateau)

    def test_readout_vee_contrast(self, tmp_path):
        out = tmp_path / "vee.csv"
        main(["run", str(SEQ_DIR / "readout_vee.seq"),
              "--config", str(SEQ_DIR / "pulsed_defaults.json"),
              "--out", str(out)] + SMALL)
        y = read_trace_csv(str(out)).y_array()
        # adjacent pulses act as pi (max |charge|), dephased ones as pi/2
        assert abs(y[0]) > 1.4 * abs(y[-1])

    def test_reproducible_across_workers(self, tmp_path):
        config = str(SEQ_DIR / "pulsed_defaults.json")
        outs = []
        for tag, workers in (("a", "1"), ("b", "4"), ("c", "1")):
            out = tmp_path / f"{tag}.csv"
            main(["run", str(SEQ_DIR / "hahn_echo.seq"), "--config", config,
                  "--out", str(out), "--seed", "99", "--workers", workers] + SMALL)
            outs.append(_data_section(out))
        assert outs[0] == outs[1] == outs[2]

    def test_seed_changes_data(self, tmp_path):
        config = str(SEQ_DIR / "pulsed_defaults.json")
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        main(["run", str(SEQ_DIR / "hahn_echo.seq"), "--config", config,
              "--out", str(a), "--seed", "1"] + SMALL)
        main(["run", str(SEQ_DIR / "hahn_echo.seq"), "--config", config,
              "--out", str(b), "--seed", "2"] + SMALL)
        assert _data_section(a) != _data_section(b)


class TestNutationCommand:
    def test_first_minimum_near_pi_time(self, tmp_path):
        out = tmp_path / "nut.csv"
        # sit on the high-field hyperfine line with a narrow packet
        cfg = _write_config(
            tmp_path,
            {
                "environment": {"static_field_tesla": 8.582263329462},
                "species": {"linewidth_tesla": 1e-6},
            },
        )
        assert main(["nutation", "--out", str(out), "--config", cfg,
                     "--t-max", "1.2e-6", "--n-points", "121"]) == 0
        trace = read_trace_csv(str(out))
        x, y = trace.x_array(), trace.y_array()
        assert x[int(np.argmin(y))] == pytest.approx(480e-9, abs=1e-8)


class TestFitCommand:
    def _hahn_csv(self, tmp_path, seed="7"):
        out = tmp_path / "hahn.csv"
        main(["run", str(SEQ_DIR / "hahn_echo.seq"),
              "--config", str(SEQ_DIR / "pulsed_defaults.json"),
              "--out", str(out), "--seed", seed, "--n-static", "32", "--n-noise", "16"])
        return out

    def test_closed_loop_fit(self, tmp_path):
        csv = self._hahn_csv(tmp_path)
        report_path = tmp_path / "fit.json"
        rc = main(["fit", str(csv), "--model", "echo_cubic",
                   "--compare-with", "exp_decay", "--out", str(report_path)])
        assert rc == 0
        report = json.loads(report_path.read_text())
        assert report["params"]["t2_seconds"] == pytest.approx(160e-6, rel=0.10)
        assert report["params"]["t_s_seconds"] == pytest.approx(200e-6, rel=0.15)
        assert report["comparison"]["preferred"] == "echo_cubic"
        assert report["config_hash"]

    def test_exponential_fit_shorter_constant(self, tmp_path):
        csv = self._hahn_csv(tmp_path)
        report_path = tmp_path / "fit.json"
        main(["fit", str(csv), "--model", "exp_decay", "--out", str(report_path)])
        report = json.loads(report_path.read_text())
        assert report["params"]["t2_seconds"] < 160e-6  # combined constant is shorter

    def test_empty_csv_exit_4(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        assert main(["fit", str(empty), "--model", "exp_decay"]) == 4

    def test_malformed_row_exit_4(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("x,y\n1.0,2.0\noops\n")
        assert main(["fit", str(bad), "--model", "exp_decay"]) == 4
        assert "row 3" in capsys.readouterr().err

    def test_mixed_hash_refused_unless_forced(self, tmp_path):
        a = self._hahn_csv(tmp_path, seed="7")
        b = tmp_path / "b.csv"
        main(["run", str(SEQ_DIR / "hahn_echo.seq"),
              "--config", str(SEQ_DIR / "pulsed_defaults.json"),
              "--out", str(b), "--seed", "7", "--n-static", "8", "--n-noise", "2"])
        # concatenation with distinct config hashes (different ensembles)
        merged = tmp_path / "merged.csv"
        shifted = []
        for line in b.read_text().splitlines():
            if line.startswith("#") or line == "x,y":
                shifted.append(line)
            else:
                x, y = line.split(",")
                shifted.append(f"{float(x) + 1.0!r},{y}")  # keep x increasing
        merged.write_text(a.read_text() + "\n".join(shifted) + "\n")
        assert main(["fit", str(merged), "--model", "exp_decay"]) == 4
        assert main(["fit", str(merged), "--model", "exp_decay", "--force"]) == 0
