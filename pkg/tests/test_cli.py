import csv
import hashlib
import json
import math
import os
import shutil
import subprocess

import pytest

from horizon_lab import cli
from horizon_lab.market_sim import merton_value_oracle


def _write_cfg(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _merton_block():
    return {"variant": "merton", "r": 0.02, "lam": 0.3, "sigma": 0.2}


def _canon_ko_block():
    return {"variant": "kim_omberg", "kappa": 0.0, "theta": 0.05,
            "beta": 1.0, "mu0": 0.5, "p": 0.5}


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_parse_minimal_q1_defaults():
    cfg = cli.parse_config(json.dumps(
        {"experiment": "q1-curve", "model": _merton_block()}
    ))
    assert cfg.experiment == "q1-curve"
    assert cfg.seed == 0
    assert cfg.paths == 100_000
    assert cfg.options["grid"] == {"k_min": 0.05, "k_max": 1.0, "count": 50}
    assert cfg.options["utility"].kind == "power"
    assert cfg.options["utility"].p == -1.0
    assert cfg.options["x"] == 1.0


def test_parse_rejects_unknown_keys_and_lists_all_errors():
    bad = {
        "experiment": "q1-curve",
        "model": {"variant": "merton", "r": 0.02, "lam": 0.3, "sigma": 0.2,
                  "drift": 1.0},
        "paths": -5,
        "turbo": True,
    }
    with pytest.raises(cli.ConfigError) as exc:
        cli.parse_config(json.dumps(bad))
    msg = str(exc.value)
    assert msg.startswith("invalid configuration:")
    assert "'drift'" in msg
    assert "'turbo'" in msg
    assert "'paths'" in msg
    assert msg.count("  - ") == 3


def test_parse_utility_errors():
    with pytest.raises(cli.ConfigError) as exc:
        cli.parse_config(json.dumps({
            "experiment": "counterexample",
            "utility": {"kind": "log", "p": 0.5},
        }))
    assert "log utility takes no 'p'" in str(exc.value)
    with pytest.raises(cli.ConfigError):
        cli.parse_config(json.dumps({
            "experiment": "counterexample",
            "utility": {"kind": "power", "p": 1.5},
        }))
    with pytest.raises(cli.ConfigError):
        cli.parse_config(json.dumps({
            "experiment": "counterexample",
            "utility": {"kind": "exotic"},
        }))


def test_parse_structural_errors():
    with pytest.raises(cli.ConfigError):
        cli.parse_config("not json {")
    with pytest.raises(cli.ConfigError):
        cli.parse_config("[1, 2]")
    with pytest.raises(cli.ConfigError):
        cli.parse_config(json.dumps({"experiment": "mystery"}))
    with pytest.raises(cli.ConfigError):
        cli.parse_config(json.dumps({"experiment": "q1-curve"}))  # no model


def test_parse_ko_utility_must_match_model():
    cfg = {
        "experiment": "q1-curve",
        "model": _canon_ko_block(),
        "utility": {"kind": "power", "p": -1.0},
        "grid": {"k_max": 0.5},
    }
    with pytest.raises(cli.ConfigError) as exc:
        cli.parse_config(json.dumps(cfg))
    assert "must match the model's power p" in str(exc.value)
    del cfg["utility"]
    parsed = cli.parse_config(json.dumps(cfg))
    assert parsed.options["utility"].p == 0.5


def test_validate_command(tmp_path, capsys):
    path = _write_cfg(tmp_path, "ok.json", {
        "experiment": "q1-curve", "model": _merton_block(), "seed": 3,
        "paths": 2000,
    })
    assert cli.main(["validate", "--config", path]) == 0
    out = capsys.readouterr().out
    assert "config ok" in out and "seed=3" in out and "paths=2000" in out

    bad = _write_cfg(tmp_path, "bad.json", {"experiment": "q1-curve"})
    assert cli.main(["validate", "--config", bad]) == 2
    err = capsys.readouterr().err
    assert "invalid configuration" in err

    assert cli.main(["validate", "--config", str(tmp_path / "missing.json")]) == 2


def test_run_ko_explosion(tmp_path):
    out = tmp_path / "ko"
    cfg = cli.parse_config(json.dumps({
        "experiment": "ko-explosion",
        "model": _canon_ko_block(),
        "grid": {"count": 12},
        "output_dir": str(out),
    }))
    manifest = cli.run_experiment(cfg)
    header, rows = _read_csv(out / "ko-explosion.csv")
    assert header == ["K", "value_e", "primal_value"]
    assert len(rows) == 12
    assert float(rows[0][0]) == 0.0
    assert float(rows[0][1]) == 1.0
    assert float(rows[0][2]) == 2.0
    # grid stops a margin short of the pole; values blow up toward the end
    assert float(rows[-1][0]) < math.pi / 4.0
    assert float(rows[-1][1]) > 1e3
    assert "ko-explosion.csv" in manifest.artifacts


def test_run_ko_explosion_stable_params(tmp_path):
    # positive discriminant: no pole, grid runs to k_max untouched
    out = tmp_path / "ko2"
    cfg = cli.parse_config(json.dumps({
        "experiment": "ko-explosion",
        "model": {"variant": "kim_omberg", "kappa": 1.0, "theta": 0.05,
                  "beta": 0.1, "mu0": 0.5, "p": 0.5},
        "grid": {"count": 5, "k_max": 1.0},
        "output_dir": str(out),
    }))
    cli.run_experiment(cfg)
    _, rows = _read_csv(out / "ko-explosion.csv")
    assert float(rows[-1][0]) == 1.0
    assert all(math.isfinite(float(r[1])) for r in rows)


def test_run_counterexample(tmp_path):
    out = tmp_path / "ce"
    cfg = cli.parse_config(json.dumps({
        "experiment": "counterexample",
        "utility": {"kind": "power", "p": -1.0},
        "n_max": 6,
        "output_dir": str(out),
    }))
    cli.run_experiment(cfg)
    header, rows = _read_csv(out / "counterexample.csv")
    assert header == ["n", "t_n", "premature_lo", "premature_hi",
                      "terminal_lo", "terminal_hi"]
    assert len(rows) == 6
    lows = [float(r[2]) for r in rows]
    his = [float(r[3]) for r in rows]
    assert all(lo <= hi for lo, hi in zip(lows, his))
    assert lows[-1] < lows[0]  # exit value diverges downward
    assert float(rows[0][4]) <= float(rows[0][5])


def test_run_q1_curve_and_float_round_trip(tmp_path):
    out = tmp_path / "q1"
    cfg = cli.parse_config(json.dumps({
        "experiment": "q1-curve",
        "model": _merton_block(),
        "utility": {"kind": "power", "p": -1.0},
        "grid": {"k_min": 0.25, "k_max": 1.0, "count": 4},
        "paths": 4000,
        "seed": 5,
        "output_dir": str(out),
    }))
    cli.run_experiment(cfg)
    header, rows = _read_csv(out / "q1-curve.csv")
    assert header == ["K", "u_closed", "u_mc", "u_mc_stderr", "y"]
    assert len(rows) == 4
    for row in rows:
        k = float(row[0])
        # 17 significant digits round-trip to the exact closed-form double
        assert float(row[1]) == merton_value_oracle(0.02, 0.3, -1.0, 1.0, k)
        assert abs(float(row[2]) - float(row[1])) <= 4.0 * float(row[3])


def test_run_q1_rejects_grid_past_explosion(tmp_path):
    cfg = cli.parse_config(json.dumps({
        "experiment": "q1-curve",
        "model": _canon_ko_block(),
        "grid": {"k_max": 1.0},
        "paths": 2000,
        "output_dir": str(tmp_path / "never"),
    }))
    with pytest.raises(cli.ConfigError) as exc:
        cli.run_experiment(cfg)
    assert "explosion" in str(exc.value)


def test_run_q1_stable_ko_params(tmp_path):
    out = tmp_path / "q1s"
    cfg = cli.parse_config(json.dumps({
        "experiment": "q1-curve",
        "model": {"variant": "kim_omberg", "kappa": 1.0, "theta": 0.05,
                  "beta": 0.1, "mu0": 0.2, "p": 0.5},
        "grid": {"k_min": 0.5, "k_max": 1.0, "count": 2},
        "paths": 2000,
        "output_dir": str(out),
    }))
    cli.run_experiment(cfg)
    _, rows = _read_csv(out / "q1-curve.csv")
    assert len(rows) == 2


def test_run_q2_curve(tmp_path):
    out = tmp_path / "q2"
    cfg = cli.parse_config(json.dumps({
        "experiment": "q2-curve",
        "model": _canon_ko_block(),
        "T": 0.3,
        "grid": {"count": 3},
        "n_steps": 32,
        "paths": 3000,
        "seed": 2,
        "output_dir": str(out),
    }))
    cli.run_experiment(cfg)
    header, rows = _read_csv(out / "q2-curve.csv")
    assert header == ["K", "estimate", "stderr", "primal_value"]
    assert len(rows) == 3
    assert float(rows[-1][0]) == 0.3
    # last point is the full-horizon optimizer; closed form nearby
    est, se, closed = (float(rows[-1][j]) for j in (1, 2, 3))
    assert abs(est - closed) <= 3.0 * se + 2e-3


def test_run_duality_check(tmp_path):
    out = tmp_path / "du"
    cfg = cli.parse_config(json.dumps({
        "experiment": "duality-check",
        "model": _merton_block(),
        "utility": {"kind": "power", "p": -1.0},
        "grid": {"count": 5, "span": 2.0},
        "paths": 4000,
        "seed": 5,
        "output_dir": str(out),
    }))
    cli.run_experiment(cfg)
    header, rows = _read_csv(out / "duality-check.csv")
    assert header == ["y", "dual_value", "dual_stderr", "gap", "gap_stderr"]
    assert len(rows) == 5
    gaps = [float(r[3]) for r in rows]
    # same-sample duality: zero gap at the calibrated y (middle of the
    # geometric fan), positive gap away from it
    assert abs(gaps[2]) <= 1e-9
    assert gaps[0] > 0.0 and gaps[-1] > 0.0
    ys = [float(r[0]) for r in rows]
    assert ys == sorted(ys)


def test_run_check_conditions_novikov(tmp_path):
    out = tmp_path / "cc"
    cfg = cli.parse_config(json.dumps({
        "experiment": "check-conditions",
        "model": _merton_block(),
        "condition": {"name": "novikov_lemma4", "delta": 0.5,
                      "grid": {"count": 3}},
        "paths": 2000,
        "seed": 1,
        "output_dir": str(out),
    }))
    manifest = cli.run_experiment(cfg)
    assert set(manifest.artifacts) == {"check-conditions.csv",
                                       "condition_verdict.json"}
    header, rows = _read_csv(out / "check-conditions.csv")
    assert header == ["t", "estimate", "stderr"]
    assert len(rows) == 3
    verdict = json.loads((out / "condition_verdict.json").read_text())
    assert verdict["condition"] == "novikov_lemma4"
    assert verdict["verdict"] == "holds_numerically"
    assert verdict["seed"] == 1


def test_run_check_conditions_cond_main(tmp_path):
    out = tmp_path / "cm"
    cfg = cli.parse_config(json.dumps({
        "experiment": "check-conditions",
        "model": _merton_block(),
        "condition": {"name": "cond_main_thm5", "gamma": -2.0,
                      "epsilon": 0.2, "T": 1.0, "grid": {"count": 3}},
        "paths": 2000,
        "seed": 1,
        "output_dir": str(out),
    }))
    cli.run_experiment(cfg)
    verdict = json.loads((out / "condition_verdict.json").read_text())
    assert verdict["condition"] == "cond_main_thm5"
    assert "sup_estimate" in verdict["params"]
    _, rows = _read_csv(out / "check-conditions.csv")
    assert float(rows[0][0]) == 0.8 and float(rows[-1][0]) == 1.0


def test_manifest_hashes_match_files(tmp_path):
    out = tmp_path / "m"
    cfg = cli.parse_config(json.dumps({
        "experiment": "ko-explosion",
        "model": _canon_ko_block(),
        "grid": {"count": 6},
        "output_dir": str(out),
    }))
    manifest = cli.run_experiment(cfg)
    for name, digest in manifest.artifacts.items():
        assert _sha256(out / name) == digest
    stored = json.loads((out / "run_manifest.json").read_text())
    assert stored["artifacts"] == manifest.artifacts
    assert stored["experiment"] == "ko-explosion"
    assert stored["backend"] in ("compiled", "python")
    assert stored["config"]["grid"]["count"] == 6
    assert stored["duration_seconds"] >= 0.0


def test_reruns_and_thread_counts_are_byte_identical(tmp_path):
    base = {
        "experiment": "q2-curve",
        "model": _canon_ko_block(),
        "T": 0.3,
        "grid": {"count": 3},
        "n_steps": 32,
        "paths": 3000,
        "seed": 2,
    }
    digests = []
    for sub, threads in (("a", 1), ("b", 1), ("c", 2), ("d", 4)):
        cfg = cli.parse_config(json.dumps(
            dict(base, output_dir=str(tmp_path / sub))
        ))
        m = cli.run_experiment(cfg, threads=threads)
        digests.append(m.artifacts["q2-curve.csv"])
    assert len(set(digests)) == 1


def test_fresh_paths_changes_mc_not_closed(tmp_path):
    base = {
        "experiment": "q1-curve",
        "model": _merton_block(),
        "grid": {"k_min": 0.5, "k_max": 1.0, "count": 2},
        "paths": 3000,
        "seed": 8,
    }
    cfg_a = cli.parse_config(json.dumps(dict(base, output_dir=str(tmp_path / "a"))))
    cfg_b = cli.parse_config(json.dumps(dict(base, output_dir=str(tmp_path / "b"))))
    cli.run_experiment(cfg_a, fresh_paths=False)
    cli.run_experiment(cfg_b, fresh_paths=True)
    _, rows_a = _read_csv(tmp_path / "a" / "q1-curve.csv")
    _, rows_b = _read_csv(tmp_path / "b" / "q1-curve.csv")
    for ra, rb in zip(rows_a, rows_b):
        assert ra[1] == rb[1]  # closed form identical
        assert ra[4] == rb[4]  # calibration identical
        assert ra[2] != rb[2]  # evaluation sample differs


def test_failed_run_leaves_no_outputs(tmp_path):
    out = tmp_path / "fail"
    cfg = cli.parse_config(json.dumps({
        "experiment": "duality-check",
        "model": _merton_block(),
        "x": 1e20,  # budget cannot bracket this wealth
        "paths": 2000,
        "output_dir": str(out),
    }))
    with pytest.raises(Exception):
        cli.run_experiment(cfg)
    assert os.listdir(out) == []


def test_main_run_exit_codes(tmp_path, capsys):
    ok = _write_cfg(tmp_path, "ok.json", {
        "experiment": "ko-explosion",
        "model": _canon_ko_block(),
        "grid": {"count": 4},
        "output_dir": str(tmp_path / "out"),
    })
    assert cli.main(["run", "--config", ok]) == 0
    out = capsys.readouterr().out
    assert "ko-explosion.csv" in out and "manifest:" in out

    bad = _write_cfg(tmp_path, "bad.json", {
        "experiment": "q1-curve",
        "model": _canon_ko_block(),
        "grid": {"k_max": 1.0},
        "paths": 2000,
        "output_dir": str(tmp_path / "out2"),
    })
    assert cli.main(["run", "--config", bad]) == 2

    fail = _write_cfg(tmp_path, "fail.json", {
        "experiment": "duality-check",
        "model": _merton_block(),
        "x": 1e20,
        "paths": 2000,
        "output_dir": str(tmp_path / "out3"),
    })
    assert cli.main(["run", "--config", fail]) == 1
    err = capsys.readouterr().err
    assert "experiment failed" in err


def test_main_threads_flag(tmp_path):
    ok = _write_cfg(tmp_path, "t.json", {
        "experiment": "q2-curve",
        "model": _canon_ko_block(),
        "T": 0.3,
        "grid": {"count": 2},
        "n_steps": 16,
        "paths": 2000,
        "output_dir": str(tmp_path / "t1"),
    })
    assert cli.main(["run", "--config", ok, "--threads", "2"]) == 0
    stored = json.loads((tmp_path / "t1" / "run_manifest.json").read_text())
    assert stored["threads"] == 2


def test_console_script_entry_point(tmp_path):
    exe = shutil.which("horizon-lab")
    if exe is None:
        pytest.skip("console script not on PATH")
    path = _write_cfg(tmp_path, "v.json", {
        "experiment": "counterexample",
        "utility": {"kind": "power", "p": -1.0},
        "n_max": 3,
    })
    proc = subprocess.run([exe, "validate", "--config", path],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "config ok" in proc.stdout
