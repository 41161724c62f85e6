import csv
import json
from pathlib import Path

import pytest

from adiabatic_pes.cli import main
from adiabatic_pes.config import ConfigError, config_from_dict, load_config, validate_config

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

TINY = """
name = "tiny"

[system]
kind = "lih"
n_points = 16
dx = 0.8

[schedule]
total_time = 1.2
start = 0.25
end = 0.5
dt = 0.012

[pipeline]
kind = "exact"
reference_stride = 25

[outputs]
directory = "unused"
csv = ["pes", "vks", "density_error", "trajectory"]
"""

TINY_NOISY = """
name = "tiny_noisy"

[system]
kind = "lih"
n_points = 16
dx = 0.8

[schedule]
total_time = 2.4
start = 0.25
end = 0.5
dt = 0.012

[pipeline]
kind = "noisy_smoothed"
reference_stride = 50

[noise]
seed = 3

[smoothing]
lowess_window = 40
knot_stride = 20

[inversion]
regularization = 1e-5
tol = 1e-5

[outputs]
directory = "unused"
csv = ["pes", "smoothing_report"]
"""


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path, capsys):
    assert main(["validate", "--config", str(path)]) == 0
    assert "error" not in capsys.readouterr().out


def test_unknown_key_is_rejected(tmp_path):
    with pytest.raises(ConfigError, match=r"dtt.*\[schedule\]"):
        load_config(_write(tmp_path, TINY.replace("dt = 0.012", "dtt = 0.012")))
    with pytest.raises(ConfigError, match="colour"):
        config_from_dict({"colour": {}})


def test_type_errors_are_reported(tmp_path):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, TINY.replace("n_points = 16", 'n_points = "many"')))


def test_validate_catches_infeasible_settings(tmp_path, capsys):
    bad = TINY.replace("dt = 0.012", "dt = 0.5")
    assert main(["validate", "--config", str(_write(tmp_path, bad))]) == 2
    assert "does not divide total_time" in capsys.readouterr().out
    cfg = load_config(_write(tmp_path, TINY_NOISY.replace("lowess_window = 40", "lowess_window = 4000")))
    errs = validate_config(cfg).errors
    assert any("lowess_window=4000 exceeds series length 201" in e for e in errs)
    cfg = load_config(_write(tmp_path, TINY_NOISY.replace("knot_stride = 20", "knot_stride = 100")))
    assert any("knots cannot support" in e for e in validate_config(cfg).errors)


def test_run_writes_artifacts_and_manifest(tmp_path, capsys):
    cfg = _write(tmp_path, TINY)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert "line integral" in capsys.readouterr().out
    names = {p.name for p in out.iterdir()}
    assert {"pes.csv", "vks.csv", "density_error.csv", "manifest.json"} <= names
    assert any(n.startswith("trajectory") and n.endswith(".bin") for n in names)
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and man["schema_version"] == 1
    assert man["config"]["system"]["n_points"] == 16
    rows = list(csv.DictReader((out / "pes.csv").open()))
    assert rows[0]["t"] == "0.0" and float(rows[-1]["t"]) == pytest.approx(1.2)
    assert abs(float(rows[0]["energy_error"])) < 1e-10
    assert abs(man["summary"]["endpoint_energy_error"]) < 1e-2


def test_runs_are_bit_reproducible_and_replayable(tmp_path):
    cfg = _write(tmp_path, TINY)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["run", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(b)]) == 0
    assert main(["run", "--config", str(a / "manifest.json"), "--out", str(c)]) == 0
    for name in ("pes.csv", "vks.csv", "density_error.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes()


def test_noisy_run_and_seed_override(tmp_path):
    cfg = _write(tmp_path, TINY_NOISY)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "s3")]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "s4"), "--seed-override", "4"]) == 0
    man = json.loads((tmp_path / "s4" / "manifest.json").read_text())
    assert man["config"]["noise"]["seed"] == 4
    assert (tmp_path / "s3" / "smoothing_report.csv").exists()
    assert (tmp_path / "s3" / "pes.csv").read_bytes() != (tmp_path / "s4" / "pes.csv").read_bytes()


def test_numerical_failure_exits_3(tmp_path, monkeypatch):
    import adiabatic_pes.pipeline as pipeline

    def boom(cfg):
        raise FloatingPointError("non-finite potential at t=0.6")

    monkeypatch.setattr(pipeline, "run_pipeline", boom)
    assert main(["run", "--config", str(_write(tmp_path, TINY)), "--out", str(tmp_path / "f")]) == 3
    man = json.loads((tmp_path / "f" / "manifest.json").read_text())
    assert man["status"] == "failed" and "non-finite" in man["error"]


def test_config_error_exit_code(tmp_path):
    bad = _write(tmp_path, TINY.replace('kind = "lih"', 'kind = "h2"'))
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == 2


def test_batch(tmp_path, capsys):
    c1 = _write(tmp_path, TINY, "one.toml")
    c2 = _write(tmp_path, TINY.replace("end = 0.5", "end = 0.75"), "two.toml")
    assert main(["batch", "--config", str(c1), str(c2), "--out", str(tmp_path / "runs")]) == 0
    assert (tmp_path / "runs" / "one" / "pes.csv").exists()
    assert (tmp_path / "runs" / "two" / "pes.csv").exists()


def test_mp_bench(tmp_path, capsys):
    cfg = _write(tmp_path, """
name = "mp"
[pipeline]
kind = "mp_benchmark"
[benchmark]
dts = [0.2, 0.1]
orders = [1, 2]
n_points = 128
""")
    assert main(["mp-bench", "--config", str(cfg), "--out", str(tmp_path / "mp")]) == 0
    out = capsys.readouterr().out
    assert "slopes" in out
    rows = list(csv.DictReader((tmp_path / "mp" / "mp_benchmark.csv").open()))
    assert len(rows) == 4
