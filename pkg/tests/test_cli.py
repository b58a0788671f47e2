import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

from outlierseq.cli import CONFIG_KEYS, main, parse_and_validate, read_sequences
from outlierseq.distributions import Gaussian, sample
from outlierseq.montecarlo import ErrorCurve
from outlierseq.rng import CounterStream

REPRO = Path(__file__).resolve().parents[1] / "src" / "outlierseq" / "configs" / "repro_s5.toml"
SMALL = ["--set", "trials=150", "--set", "n_grid=[20, 40]"]


def _run(capsys, argv):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_repro_config_parses():
    inv = parse_and_validate(["simulate", "--config", str(REPRO)])
    s = inv.settings
    assert [st["name"] for st in s.studies] == ["var0.2", "var1.2", "var1.8", "var2.0"]
    assert [st["mu"].variance for st in s.studies] == [0.2, 1.2, 1.8, 2.0]
    assert (s.m, s.trials, s.gamma, s.schedule.describe()) == (5, 10_000, 1.0, "sqrt_n")
    assert inv.output_dir == Path("repro_s5")


def test_mu_equal_pi_rejected(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('pi = { kind = "gaussian", mean = 0.0, variance = 1.0 }\n'
                   'mu = { kind = "gaussian", mean = 0.0, variance = 1.0 }\n')
    code, out, err = _run(capsys, ["analyze", "--config", str(cfg)])
    assert code == 2
    assert err == "error: mu: must differ from pi\n"


@pytest.mark.parametrize("override,field", [
    ("trials=0", "trials"), ("m=1", "m"), ("gamma=0", "gamma"), ("gamma=-1.5", "gamma"),
    ("pi.variance=0", "pi.variance"), ("n_grid=[10, 5]", "n_grid"), ("bogus=1", "bogus"),
    ("schedule=fixed_cells:1", "schedule"), ("placement=7", "placement"),
])
def test_bad_overrides_exit_2(capsys, override, field):
    code, _, err = _run(capsys, ["analyze", "--set", override])
    assert code == 2
    assert err.startswith(f"error: {field}: ") and err.count("\n") == 1


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("m = 5\nsequences = 4\n")
    code, _, err = _run(capsys, ["analyze", "--config", str(cfg)])
    assert (code, err) == (2, "error: sequences: unknown key\n")


def test_analyze_values(capsys):
    code, out, _ = _run(capsys, ["analyze"])
    assert code == 0
    rep = json.loads(out)
    assert rep["kl_divergence"] == pytest.approx(0.1534264, abs=1e-7)
    assert rep["ml_exponent"] == pytest.approx(0.0588915, abs=1e-7)
    assert rep["mmd_squared"] == pytest.approx(0.0245639, abs=1e-7)
    assert rep["kl_test_lower_bound"] is None


def test_simulate_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", *SMALL, "-o", str(a)]) == 0
    os.environ["OUTLIERSEQ_THREADS"] = "4"
    try:
        assert main(["simulate", *SMALL, "-o", str(b)]) == 0
    finally:
        del os.environ["OUTLIERSEQ_THREADS"]
    assert a.read_bytes() == b.read_bytes()
    curve = ErrorCurve.from_csv(a.read_text())
    assert [(r.detector, r.n) for r in curve.rows] == [("kl", 20), ("kl", 40), ("mmd", 20), ("mmd", 40)]
    assert curve.to_csv() == a.read_text()


def test_simulate_study_directory(tmp_path):
    out = tmp_path / "runs"
    assert main(["simulate", "--config", str(REPRO), "--set", "trials=20",
                 "--study", "var0.2", "--output-dir", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["var0.2.csv"]


def test_simulate_json_round_trip(capsys):
    code, out, _ = _run(capsys, ["simulate", *SMALL, "--format", "json"])
    assert code == 0
    rows = json.loads(out)["rows"]
    assert len(rows) == 4 and all(r["log_pe"] == "-inf" or math.isfinite(r["log_pe"]) for r in rows)


def test_fit_exponent_from_simulate(tmp_path, capsys):
    curve = tmp_path / "curve.csv"
    assert main(["simulate", "--set", "trials=400", "--set", "n_grid=[10, 20, 30]",
                 "--set", "detectors=['mmd']", "-o", str(curve)]) == 0
    code, out, err = _run(capsys, ["fit-exponent", str(curve)])
    assert code == 0, err
    fit = json.loads(out)["fits"][0]
    assert fit["detector"] == "mmd" and fit["rows_used"] == 3
    assert fit["alpha"] > 0
    assert fit["theoretical_floor"] == pytest.approx(0.0245639**2 / 9, rel=1e-5)


def test_fit_exponent_insufficient_is_runtime_error(tmp_path, capsys):
    curve = tmp_path / "curve.csv"
    curve.write_text("detector,n,trials,errors,pe_hat,log_pe,ci_low,ci_high\n"
                     "kl,10,100,0,0.0,-inf,0.0,0.037\n")
    code, _, err = _run(capsys, ["fit-exponent", str(curve)])
    assert code == 1 and "InsufficientData" in err


def _five_sequences():
    rng = CounterStream.from_seed(11, "cli-detect")
    seqs = [sample(Gaussian(0, 1), 50, rng) for _ in range(4)]
    seqs.insert(3, sample(Gaussian(0, 9), 50, rng))
    return seqs


@pytest.mark.parametrize("detector", ["kl", "mmd", "ml"])
def test_detect_five_sequences(tmp_path, capsys, detector):
    path = tmp_path / "seqs.csv"
    path.write_text("\n".join(",".join(repr(float(v)) for v in s) for s in _five_sequences()) + "\n")
    code, out, _ = _run(capsys, ["detect", "--detector", detector, str(path)])
    assert code == 0
    res = json.loads(out)
    assert len(res["scores"]) == 5 and res["m"] == 5 and res["index_base"] == 0
    assert res["chosen_index"] == 3


def test_detect_by_column(tmp_path, capsys):
    cols = np.array(_five_sequences()).T
    path = tmp_path / "cols.csv"
    path.write_text("\n".join(",".join(repr(float(v)) for v in row) for row in cols) + "\n")
    code, out, _ = _run(capsys, ["detect", "--by-column", str(path)])
    assert code == 0 and json.loads(out)["chosen_index"] == 3


def test_estimate_commands(tmp_path, capsys):
    data = tmp_path / "x.txt"
    data.write_text("# two samples\n0.1 0.5 -0.3 1.2\n\n-1.0 0.0 2.0 0.4\n")
    code, out, _ = _run(capsys, ["estimate-mmd", str(data)])
    assert code == 0 and len(json.loads(out)["estimates"]) == 2
    code, out, _ = _run(capsys, ["estimate-kl", "--set", "schedule=fixed_cells:2", str(data)])
    res = json.loads(out)
    assert code == 0 and res["certified"] and len(res["estimates"]) == 2


def test_zero_mass_cell_exit_1(tmp_path, capsys):
    data = tmp_path / "x.txt"
    data.write_text("0.1 0.2 0.3 0.4 0.5 0.6\n0.5 0.5 0.5 0.5 0.5 0.5\n")
    code, out, err = _run(capsys, ["estimate-kl", "--set", "schedule=fixed_cells:3", str(data)])
    assert code == 1 and out == ""
    assert "ZeroMassCell" in err and "element 1" in err
    code, out, _ = _run(capsys, ["estimate-kl", "--set", "schedule=fixed_cells:3",
                                 "--clamp-cell-mass", "1e-12", str(data)])
    assert code == 0 and json.loads(out)["certified"] is False


def test_help_lists_every_config_key(capsys):
    with pytest.raises(SystemExit) as info:
        main(["simulate", "--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    for key, (default, _) in CONFIG_KEYS.items():
        assert f"  {key} " in out
        assert json.dumps(default) in out


def test_output_written_atomically(tmp_path, monkeypatch):
    target = tmp_path / "report.json"
    target.write_text("old")
    calls = []
    real_replace = os.replace

    def spy(src, dst):
        calls.append((Path(src).parent, Path(dst)))
        assert Path(dst).read_text() == "old"
        real_replace(src, dst)

    monkeypatch.setattr(os, "replace", spy)
    assert main(["analyze", "-o", str(target)]) == 0
    assert calls == [(tmp_path, target)]
    assert json.loads(target.read_text())["gamma"] == 1.0
    assert [p.name for p in tmp_path.iterdir()] == ["report.json"]


def test_csv_format_only_for_simulate(capsys):
    code, _, err = _run(capsys, ["analyze", "--format", "csv"])
    assert code == 2 and err.startswith("error: format: ")


def test_read_sequences_errors():
    from outlierseq.cli import UsageError

    assert read_sequences("1,2\n3,4\n", by_column=True) == [[1.0, 3.0], [2.0, 4.0]]
    for bad in ("", "1 x\n", "1 nan\n"):
        with pytest.raises(UsageError):
            read_sequences(bad)
