import csv
import io
import json
import math
import subprocess
import sys

import pytest

from phasecap.capacity import capacity_fixed_gain
from phasecap.cli import SweepSpec, UsageError, main
from phasecap.phase_quantizer import entropy_w
from phasecap.special_math import q_function


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def csv_rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def hb(p):
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


class TestSweepSpec:
    def test_linear(self):
        s = SweepSpec.parse("snr_db", "-10:20:7")
        assert list(s.values()) == pytest.approx([-10, -5, 0, 5, 10, 15, 20])

    def test_log(self):
        assert SweepSpec.parse("gain_sq", "0.1:10:3:log").values() == pytest.approx([0.1, 1, 10])

    @pytest.mark.parametrize("text", ["1:0:5", "0:1:1", "0:1", "a:b:c", "0:1:3:cubic", "0:1:3:log"])
    def test_invalid(self, text):
        with pytest.raises(UsageError):
            SweepSpec.parse("snr_db", text)

    def test_unknown_variable(self):
        with pytest.raises(UsageError):
            SweepSpec("power", 0, 1, 3)


class TestCapacityCommand:
    def test_saturation(self, capsys):
        code, out, _ = run(capsys, "capacity", "--model", "fixed", "--bits", "3", "--snr-db", "60")
        assert code == 0
        rows = csv_rows(out)
        assert float(rows[-1]["capacity_bits"]) == pytest.approx(3.0, abs=1e-6)

    def test_one_bit(self, capsys):
        code, out, _ = run(capsys, "capacity", "--model", "fixed", "--bits", "1", "--snr-db", "0")
        assert code == 0
        val = float(csv_rows(out)[0]["capacity_bits"])
        assert val == pytest.approx(1 - hb(q_function(math.sqrt(2))), abs=1e-12)
        assert val == pytest.approx(0.6026, abs=1e-4)

    def test_rician_kappa_saturation(self, capsys):
        code, out, _ = run(capsys, "capacity", "--model", "rician", "--bits", "3", "--kappa", "2",
                           "--snr-db", "60")
        assert code == 0
        val = float(csv_rows(out)[0]["capacity_bits"])
        assert val == pytest.approx(3 - entropy_w(3, 2.0, math.pi / 8), abs=1e-5)

    def test_sweep_and_single_header(self, capsys):
        code, out, _ = run(capsys, "capacity", "--sweep", "-10:20:4")
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "snr_db,capacity_bits"
        assert len(lines) == 5
        caps = [float(r["capacity_bits"]) for r in csv_rows(out)]
        assert caps == sorted(caps)

    def test_multiple_snrs_in_order(self, capsys):
        _, out, _ = run(capsys, "capacity", "--snr-db", "10", "-5", "0")
        assert [float(r["snr_db"]) for r in csv_rows(out)] == [10.0, -5.0, 0.0]

    def test_workers_same_output(self, capsys):
        _, a, _ = run(capsys, "capacity", "--sweep", "0:10:3", "--model", "csir")
        _, b, _ = run(capsys, "capacity", "--sweep", "0:10:3", "--model", "csir", "--workers", "2")
        assert a == b

    def test_noise_power_and_gain(self, capsys):
        _, out, _ = run(capsys, "capacity", "--snr-db", "3", "--noise-power", "2",
                        "--g-los-mag", "0.5", "--g-los-deg", "40")
        P = 10 ** 0.3 * 2
        assert float(csv_rows(out)[0]["capacity_bits"]) == pytest.approx(
            capacity_fixed_gain(P, 2.0, 0.5, 3), abs=1e-14)

    def test_json(self, capsys):
        code, out, _ = run(capsys, "capacity", "--snr-db", "0", "5", "--format", "json")
        assert code == 0
        body = json.loads(out)
        assert set(body) == {"params", "rows", "diagnostics"}
        assert body["rows"][1]["snr_db"] == 5.0
        assert body["params"]["bits"] == 3
        assert "version" in body["params"] and "tolerances" in body["params"]

    @pytest.mark.parametrize("argv", [
        ["capacity"],
        ["capacity", "--snr-db", "0", "--sweep", "0:1:2"],
        ["capacity", "--model", "rician", "--snr-db", "0"],
        ["capacity", "--model", "fixed", "--kappa", "2", "--snr-db", "0"],
        ["capacity", "--bits", "0", "--snr-db", "0"],
        ["capacity", "--snr-db", "0", "--noise-power", "-1"],
        ["capacity", "--sweep", "5:1:3"],
        ["capacity", "--snr-db", "0", "--workers", "0"],
    ])
    def test_usage_errors(self, capsys, argv):
        code, _, err = run(capsys, *argv)
        assert code == 2
        assert "error" in err

    def test_argparse_errors_exit_2(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["capacity", "--model", "bogus"])
        assert info.value.code == 2

    def test_solver_failure_exit_3(self, capsys, monkeypatch):
        from phasecap import cli
        from phasecap.exceptions import SolverError

        def boom(*args, **kwargs):
            raise SolverError("no bracket", trace=[(1.0, -0.5)])

        monkeypatch.setattr(cli, "ergodic_capacity_csit", boom)
        code, _, err = run(capsys, "capacity", "--model", "csit", "--snr-db", "0")
        assert code == 3
        assert "no bracket" in err and "trace" in err

    def test_convergence_failure_exit_3(self, capsys, monkeypatch):
        from phasecap import cli
        from phasecap.exceptions import ConvergenceError

        def boom(*args, **kwargs):
            raise ConvergenceError("budget", estimate=0.1, error_bound=1.0)

        monkeypatch.setattr(cli, "ergodic_capacity_csir", boom)
        assert run(capsys, "capacity", "--model", "csir", "--snr-db", "0")[0] == 3


class TestOutputFiles:
    def test_out_and_sidecar(self, capsys, tmp_path):
        out = tmp_path / "cap.csv"
        code, stdout, _ = run(capsys, "capacity", "--snr-db", "0", "--out", str(out))
        assert code == 0 and stdout == ""
        assert out.read_text().startswith("snr_db,capacity_bits\n")
        meta = json.loads((tmp_path / "cap.csv.meta.json").read_text())
        assert meta["command"] == "capacity"
        assert meta["params"]["bits"] == 3
        assert meta["params"]["model"] == "fixed"
        assert meta["params"]["g_los_mag"] == 1.0
        assert "version" in meta["params"] and "tolerances" in meta["params"]

    def test_output_dir_env(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("PHASECAP_OUTPUT_DIR", str(tmp_path / "results"))
        assert run(capsys, "capacity", "--snr-db", "0", "--out", "a/cap.csv")[0] == 0
        assert (tmp_path / "results" / "a" / "cap.csv").exists()

    def test_config_file(self, capsys, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# figure settings\nbits = 1\nsnr-db = 0 10\nmodel = fixed\n")
        code, out, _ = run(capsys, "capacity", "--config", str(cfg))
        assert code == 0
        rows = csv_rows(out)
        assert len(rows) == 2
        assert float(rows[0]["capacity_bits"]) == pytest.approx(0.6026, abs=1e-4)
        # flags override the file
        _, out, _ = run(capsys, "capacity", "--config", str(cfg), "--bits", "3")
        assert float(csv_rows(out)[1]["capacity_bits"]) > 1.5

    @pytest.mark.parametrize("text", ["nonsense = 1\n", "bits\n", "model = bogus\n"])
    def test_bad_config(self, capsys, tmp_path, text):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(text)
        assert run(capsys, "capacity", "--snr-db", "0", "--config", str(cfg))[0] == 2

    def test_missing_config(self, capsys, tmp_path):
        assert run(capsys, "capacity", "--config", str(tmp_path / "none.cfg"))[0] == 2

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "phasecap", "capacity", "--snr-db", "0", "--bits", "1"],
                             capture_output=True, text=True, check=True)
        assert res.stdout.startswith("snr_db,capacity_bits\n")


class TestRatesCommand:
    def test_ordering_at_10db(self, capsys):
        code, out, _ = run(capsys, "rates", "--bits", "3", "--schemes", "psk:8:optimal,psk:4",
                           "--snr-db", "10")
        assert code == 0
        rates = {r["scheme"]: float(r["rate_bits"]) for r in csv_rows(out)}
        assert rates["psk:8:optimal"] >= rates["psk:4"]

    def test_optimal_equals_capacity(self, capsys):
        _, rates, _ = run(capsys, "rates", "--schemes", "psk:8:optimal", "--sweep", "-10:30:5")
        _, caps, _ = run(capsys, "capacity", "--sweep", "-10:30:5")
        for r, c in zip(csv_rows(rates), csv_rows(caps)):
            assert abs(float(r["rate_bits"]) - float(c["capacity_bits"])) <= 1e-9

    def test_sixteen_psk_below(self, capsys):
        _, out, _ = run(capsys, "rates", "--schemes", "psk:8:optimal,psk:16,circle", "--sweep", "-10:30:9")
        rows = csv_rows(out)
        for snr in {r["snr_db"] for r in rows}:
            at = {r["scheme"]: float(r["rate_bits"]) for r in rows if r["snr_db"] == snr}
            assert at["psk:16"] <= at["psk:8:optimal"] + 1e-12
            assert at["circle"] <= at["psk:8:optimal"] + 1e-12

    def test_gaussian_needs_seed(self, capsys):
        assert run(capsys, "rates", "--schemes", "gaussian", "--snr-db", "0")[0] == 2

    def test_gaussian_reports_stderr(self, capsys):
        code, out, _ = run(capsys, "rates", "--schemes", "gaussian", "--snr-db", "5",
                           "--seed", "3", "--samples", "50000")
        assert code == 0
        row = csv_rows(out)[0]
        assert float(row["stderr"]) > 0

    @pytest.mark.parametrize("schemes", ["", "qam:16", "psk:x", "psk:8:north", "psk:0"])
    def test_bad_schemes(self, capsys, schemes):
        assert run(capsys, "rates", "--schemes", schemes, "--snr-db", "0")[0] == 2


class TestPowerPolicyCommand:
    def test_rows_and_diagnostics(self, capsys):
        code, out, err = run(capsys, "power-policy", "--snr-db", "0", "--gain-sq-range", "0:5:51",
                             "--format", "json")
        assert code == 0
        body = json.loads(out)
        d = body["diagnostics"]
        assert abs(d["relative_residual"]) <= 1e-4
        assert "eta=" in err and "cutoff_gain_sq=" in err
        for r in body["rows"]:
            if r["gain_sq"] <= d["cutoff_gain_sq"]:
                assert r["allocated_power"] == 0.0
            else:
                assert r["allocated_power"] > 0.0

    def test_peak_ordering(self, capsys):
        peaks, cutoffs = {}, {}
        for snr in ("-10", "10"):
            _, out, _ = run(capsys, "power-policy", "--snr-db", snr, "--gain-sq-range", "0:20:81",
                            "--format", "json")
            body = json.loads(out)
            peaks[snr] = max(r["allocated_power"] for r in body["rows"])
            cutoffs[snr] = body["diagnostics"]["cutoff_gain_sq"]
        assert peaks["-10"] < peaks["10"]
        assert cutoffs["-10"] > cutoffs["10"]

    def test_csv_single_header(self, capsys):
        _, out, _ = run(capsys, "power-policy", "--snr-db", "0", "--gain-sq-range", "0:2:5")
        lines = out.strip().splitlines()
        assert lines[0] == "gain_sq,allocated_power" and len(lines) == 6


class TestKtcCommand:
    def test_certificate(self, capsys):
        code, out, err = run(capsys, "ktc", "--snr-db", "5", "--alpha-grid", "0:12.65:40", "--format", "json")
        assert code == 0
        d = json.loads(out)["diagnostics"]
        assert d["min_slack"] >= -1e-6
        assert max(abs(s) for s in d["slack_at_masspoints"]) <= 1e-6
        assert "min slack" in err and err.count("mass point") == 8

    def test_zero_angle_positive(self, capsys):
        P = 10 ** 0.5
        code, out, _ = run(capsys, "ktc", "--snr-db", "5", f"--alpha-grid={P}:{2 * P}:2",
                           f"--beta-grid=0:{math.pi / 8}:2", "--format", "json")
        assert code == 0
        rows = json.loads(out)["rows"]
        at_zero = [r["slack"] for r in rows if r["alpha"] == pytest.approx(P) and r["beta"] == 0.0][0]
        at_mid = [r["slack"] for r in rows if r["alpha"] == pytest.approx(P) and r["beta"] > 0][0]
        assert at_zero > 0
        assert at_mid == pytest.approx(0.0, abs=1e-9)


class TestSimulateCommand:
    def test_needs_seed(self, capsys):
        assert run(capsys, "simulate", "--snr-db", "5")[0] == 2

    def test_zero_amplitude(self, capsys):
        code, out, _ = run(capsys, "simulate", "--input", "point:0:0", "--samples", "200000",
                           "--seed", "1", "--format", "json")
        assert code == 0
        d = json.loads(out)["diagnostics"]
        assert abs(d["mutual_information"]) <= 3 * d["stderr"] + 1e-12
        assert d["total"] == 200000

    def test_byte_identical(self, capsys, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            assert run(capsys, "simulate", "--snr-db", "5", "--samples", "100000", "--seed", "42",
                       "--out", str(p))[0] == 0
        assert a.read_bytes() == b.read_bytes()
        assert a.read_text().startswith("stratum,input,output,count\n")

    def test_psk_5db_matches_capacity(self, capsys):
        code, out, _ = run(capsys, "simulate", "--snr-db", "5", "--samples", "10000000", "--seed", "7",
                           "--format", "json")
        assert code == 0
        mi = json.loads(out)["diagnostics"]["mutual_information"]
        assert abs(mi - capacity_fixed_gain(10 ** 0.5, 1.0, 1.0, 3)) <= 5e-3

    def test_csir_model(self, capsys):
        code, out, _ = run(capsys, "simulate", "--model", "csir", "--input", "psk:8", "--snr-db", "10",
                           "--samples", "100000", "--seed", "7", "--format", "json")
        assert code == 0
        assert len(json.loads(out)["rows"]) == 32 * 16 * 8 * 8

    def test_bad_input(self, capsys):
        assert run(capsys, "simulate", "--input", "point:1", "--seed", "1")[0] == 2
