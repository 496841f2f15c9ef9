import json
import subprocess
import sys

import pytest

from dpsaddle.cli import main, parse_config_text, resolve
from dpsaddle.solvers import ConfigError


def body(path):
    """File contents without the timestamp line."""
    return "\n".join(l for l in path.read_text().splitlines() if not l.startswith("#@"))


def test_calibrate_worked_example(tmp_path, capsys):
    code = main(["calibrate", "--out", str(tmp_path), "--set", "epsilon=1", "--set", "delta=1e-5",
                 "--set", "n=1000", "--set", "d=10"])
    assert code == 0
    printed = capsys.readouterr().out
    assert "T=1000 m=32 sigma_w=0.10730" in printed
    for name in ("summary.csv", "meta.txt"):
        assert (tmp_path / name).exists()


def test_solve_scalar_square_exact(tmp_path):
    cfg = tmp_path / "run.cfg"
    # a tiny leading constant puts lambda at its admissibility floor, which gives the most rounds
    cfg.write_text("problem = scalar_square_vi\nn = 4096\nepsilon = 1  # unused by the exact subroutine\n"
                   "subroutine = exact\nlambda_constant = 1e-9\n")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    lines = [l for l in (tmp_path / "o" / "summary.csv").read_text().splitlines() if not l.startswith("#")]
    row = dict(zip(lines[0].split(","), lines[1].split(",")))
    assert int(row["rounds"]) == 6
    assert float(row["distance_to_truth"]) <= float(row["distance_bound"]) + 1e-6
    # the VI gap of z^2 on [0, 1] at z is max_u 2u (z - u) = z^2 / 2; the rescaled distance is 2z
    z = float(row["distance_to_truth"]) / 2
    assert float(row["gap"]) == pytest.approx(z * z / 2, abs=1e-10)


def test_missing_epsilon_names_key(tmp_path, capsys):
    code = main(["solve", "--out", str(tmp_path), "--set", "problem=bilinear_ssp", "--set", "n=100"])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config"
    assert any("epsilon" in v for v in err["violations"])


def test_every_violation_listed():
    with pytest.raises(ConfigError) as exc:
        resolve("solve", {"n": "0", "epsilon": "-1", "delta": "2", "problem": "bogus"})
    assert len(exc.value.violations) == 4


def test_unknown_key_and_bad_value():
    with pytest.raises(ConfigError) as exc:
        resolve("calibrate", {"epsilon": "abc", "n": "10", "colour": "red"})
    text = " ".join(exc.value.violations)
    assert "colour" in text and "epsilon" in text


def test_lambda_floor_violation_is_config_error(tmp_path, capsys):
    code = main(["solve", "--out", str(tmp_path), "--set", "problem=bilinear_ssp", "--set", "n=256",
                 "--set", "epsilon=1", "--set", "lambda=1e-9"])
    assert code == 2
    assert "floor" in capsys.readouterr().err


def test_io_error_exit_code(tmp_path, capsys):
    assert main(["calibrate", "--config", str(tmp_path / "missing.cfg")]) == 3
    assert json.loads(capsys.readouterr().err)["error"] == "io"


def test_parse_config_text():
    assert parse_config_text("a = 1\n# comment\n\nb=x # trailing\n") == {"a": "1", "b": "x"}
    with pytest.raises(ConfigError):
        parse_config_text("no equals sign")


def test_set_overrides_config(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("epsilon = 1\nn = 1000\nd = 10\n")
    main(["calibrate", "--config", str(cfg), "--set", "n=2000", "--out", str(tmp_path / "o")])
    assert "# n=2000" in (tmp_path / "o" / "summary.csv").read_text()


def test_solve_byte_identical_and_echoes_config(tmp_path):
    args = ["solve", "--seed", "7", "--set", "problem=bilinear_ssp", "--set", "problem.d_w=2", "--set", "n=512",
            "--set", "epsilon=1", "--set", "lambda_constant=1", "--set", "bound_factor=3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("run.csv", "summary.csv", "plotdata.txt", "meta.txt"):
        a, b = body(tmp_path / "a" / name), body(tmp_path / "b" / name)
        assert a == b
        for key in ("seed=7", "n=512", "problem.d_w=2", "epsilon=1.0", "bound_factor=3.0", "delta=1e-05"):
            assert f"# {key}" in a
        assert (tmp_path / "a" / name).read_text().startswith("#@ generated=")


def test_sweep_small(tmp_path):
    args = ["sweep", "--out", str(tmp_path), "--set", "ns=64,128,256,512", "--set", "seeds=2",
            "--set", "dims=2", "--set", "problem.offset=0.5"]
    assert main(args) == 0
    summary = body(tmp_path / "summary.csv")
    assert "fit" in summary
    assert len(body(tmp_path / "run.csv").splitlines()) > 8


def test_diagnose_gaps(tmp_path, capsys):
    assert main(["diagnose", "--out", str(tmp_path), "--set", "problem=linear_vi", "--set", "suite=gaps"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dpsaddle", "calibrate", "--out", str(tmp_path),
                           "--set", "epsilon=1", "--set", "n=1000", "--set", "d=10"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "T=1000" in proc.stdout
