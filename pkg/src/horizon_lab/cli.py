"""Experiment runner: JSON config in, CSV curves and a JSON manifest out.

Every number in the CSVs is serialized with 17 significant digits so the
files round-trip exactly, and all randomness flows from the single config
seed through the counter-based generator, which makes outputs byte-stable
across repeated runs and across thread counts.
"""

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__, kernels
from . import conditions as conditions_mod
from . import counterexample as ce
from . import kim_omberg as ko
from . import market_sim as ms
from . import utility as ut

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunManifest",
    "parse_config",
    "run_experiment",
    "main",
]

EXPERIMENTS = (
    "ko-explosion",
    "counterexample",
    "q1-curve",
    "q2-curve",
    "duality-check",
    "check-conditions",
)

DEFAULT_PATHS = 100_000
DEFAULT_CURVE_POINTS = 50


class ConfigError(ValueError):
    """Configuration rejected; the message lists every violation found."""


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int
    paths: int
    output_dir: str
    options: dict  # validated, experiment-specific objects
    raw: dict  # parsed JSON as given, echoed into the manifest


@dataclass(frozen=True)
class RunManifest:
    config: dict
    artifacts: dict  # filename -> sha256 hex digest of the bytes
    duration_seconds: float
    version: str
    seed: int
    path: str


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return "%.17g" % float(v)


class _Validator:
    def __init__(self):
        self.errors = []

    def fail(self, msg):
        self.errors.append(msg)

    def block(self, cfg, key, required, where="config"):
        val = cfg.get(key)
        if val is None:
            if required:
                self.fail("%s: missing required block %r" % (where, key))
            return None
        if not isinstance(val, dict):
            self.fail("%s: %r must be an object" % (where, key))
            return None
        return val

    def keys(self, block, allowed, where):
        for k in block:
            if k not in allowed:
                self.fail("%s: unknown key %r" % (where, k))

    def number(self, block, key, where, default=None, required=False,
               integer=False, positive=False, nonnegative=False):
        if key not in block:
            if required:
                self.fail("%s: missing required field %r" % (where, key))
            return default
        v = block[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail("%s: %r must be a number" % (where, key))
            return default
        if integer and int(v) != v:
            self.fail("%s: %r must be an integer" % (where, key))
            return default
        if positive and not v > 0:
            self.fail("%s: %r must be > 0" % (where, key))
            return default
        if nonnegative and v < 0:
            self.fail("%s: %r must be >= 0" % (where, key))
            return default
        return int(v) if integer else float(v)

    def raise_if_failed(self):
        if self.errors:
            raise ConfigError(
                "invalid configuration:\n" + "\n".join("  - " + e for e in self.errors)
            )


def _parse_utility(v, block, where):
    if block is None:
        return None
    v.keys(block, {"kind", "p"}, where)
    kind = block.get("kind")
    if kind == "log":
        if "p" in block:
            v.fail("%s: log utility takes no 'p'" % where)
            return None
        return ut.UtilitySpec.log()
    if kind == "power":
        p = v.number(block, "p", where, required=True)
        if p is None:
            return None
        if not (p < 1.0) or p == 0.0:
            v.fail("%s: power utility needs p < 1 and p != 0" % where)
            return None
        return ut.UtilitySpec.power(p)
    v.fail("%s: 'kind' must be 'power' or 'log'" % where)
    return None


def _parse_ko_params(v, block, where):
    v.keys(block, {"variant", "kappa", "theta", "beta", "mu0", "p"}, where)
    kappa = v.number(block, "kappa", where, required=True, nonnegative=True)
    theta = v.number(block, "theta", where, required=True)
    beta = v.number(block, "beta", where, required=True, positive=True)
    mu0 = v.number(block, "mu0", where, required=True)
    p = v.number(block, "p", where, required=True)
    if None in (kappa, theta, beta, mu0, p):
        return None
    if not (0.0 < p < 1.0):
        v.fail("%s: p must lie in (0, 1)" % where)
        return None
    return ko.KimOmbergParams(kappa=kappa, theta=theta, beta=beta, mu0=mu0, p=p)


def _parse_model(v, block, where, allowed_variants):
    variant = block.get("variant")
    if variant not in allowed_variants:
        v.fail("%s: 'variant' must be one of %s" % (where, sorted(allowed_variants)))
        return None
    if variant == "merton":
        v.keys(block, {"variant", "r", "lam", "sigma"}, where)
        r = v.number(block, "r", where, required=True, nonnegative=True)
        lam = v.number(block, "lam", where, required=True)
        sigma = v.number(block, "sigma", where, required=True, positive=True)
        if None in (r, lam, sigma):
            return None
        return ms.MarketModel.merton(r=r, lam=lam, sigma=sigma)
    if variant == "kim_omberg":
        params = _parse_ko_params(v, block, where)
        return None if params is None else ms.MarketModel.kim_omberg(params)
    v.keys(
        block,
        {"variant", "kappa", "theta", "beta", "rho", "v0", "c0", "c1", "c2", "c3"},
        where,
    )
    vals = {}
    for key, kw in (
        ("kappa", dict(positive=True)),
        ("theta", dict(positive=True)),
        ("beta", dict(positive=True)),
        ("rho", dict()),
        ("v0", dict(positive=True)),
        ("c0", dict(nonnegative=True)),
        ("c1", dict(nonnegative=True)),
        ("c2", dict(nonnegative=True)),
        ("c3", dict(nonnegative=True)),
    ):
        vals[key] = v.number(block, key, where, required=True, **kw)
    if any(val is None for val in vals.values()):
        return None
    if not (-1.0 <= vals["rho"] <= 1.0):
        v.fail("%s: rho must lie in [-1, 1]" % where)
        return None
    if vals["c0"] > 0.0 and vals["c1"] <= 0.0:
        v.fail("%s: c0 > 0 requires c1 > 0" % where)
        return None
    return ms.MarketModel.feller_cv(**vals)


def _parse_grid(v, block, where, allowed, defaults):
    out = dict(defaults)
    if block is None:
        return out
    v.keys(block, allowed, where)
    for key in allowed:
        if key == "count":
            val = v.number(block, "count", where, default=None, integer=True,
                           positive=True)
        else:
            val = v.number(block, key, where, default=None)
        if val is not None:
            out[key] = val
    return out


def parse_config(text):
    """Parse and strictly validate a JSON experiment configuration."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("invalid configuration:\n  - not valid JSON: %s" % exc)
    if not isinstance(raw, dict):
        raise ConfigError("invalid configuration:\n  - top level must be an object")
    v = _Validator()

    experiment = raw.get("experiment")
    if experiment not in EXPERIMENTS:
        v.fail("'experiment' must be one of %s" % (EXPERIMENTS,))
        v.raise_if_failed()

    common = {"experiment", "seed", "paths", "output_dir"}
    per_exp = {
        "ko-explosion": {"model", "x", "grid"},
        "counterexample": {"utility", "n_max", "divergence_threshold"},
        "q1-curve": {"model", "utility", "x", "grid"},
        "q2-curve": {"model", "x", "T", "grid", "n_steps"},
        "duality-check": {"model", "utility", "x", "K", "grid"},
        "check-conditions": {"model", "condition"},
    }
    v.keys(raw, common | per_exp[experiment], "config")

    seed = v.number(raw, "seed", "config", default=0, integer=True, nonnegative=True)
    paths = v.number(raw, "paths", "config", default=DEFAULT_PATHS, integer=True)
    if paths is not None and paths < 1:
        v.fail("config: 'paths' must be a positive count")
    output_dir = raw.get("output_dir", ".")
    if not isinstance(output_dir, str) or not output_dir:
        v.fail("config: 'output_dir' must be a nonempty string")
        output_dir = "."

    options = {}
    if experiment == "ko-explosion":
        block = v.block(raw, "model", required=True)
        if block is not None:
            options["ko_params"] = _parse_ko_params(v, block, "model")
        options["x"] = v.number(raw, "x", "config", default=1.0, positive=True)
        options["grid"] = _parse_grid(
            v, v.block(raw, "grid", required=False), "grid",
            {"count", "k_max", "margin"},
            {"count": 1000, "k_max": 1.0, "margin": 5e-4},
        )
        if options["grid"]["count"] is not None:
            options["grid"]["count"] = int(options["grid"]["count"])
    elif experiment == "counterexample":
        block = v.block(raw, "utility", required=True)
        options["utility"] = _parse_utility(v, block, "utility") if block else None
        options["n_max"] = v.number(
            raw, "n_max", "config", default=20, integer=True, positive=True
        )
        thr = v.number(raw, "divergence_threshold", "config", default=None)
        if thr is not None and thr >= 0.0:
            v.fail("config: 'divergence_threshold' must be negative")
        options["divergence_threshold"] = thr
    elif experiment == "q1-curve":
        block = v.block(raw, "model", required=True)
        model = None
        if block is not None:
            model = _parse_model(v, block, "model", {"merton", "kim_omberg"})
        options["model"] = model
        ublock = v.block(raw, "utility", required=False)
        utility = _parse_utility(v, ublock, "utility")
        if model is not None and model.variant == "kim_omberg":
            derived = ut.UtilitySpec.power(model.ko_params.p)
            if utility is not None and utility != derived:
                v.fail("utility: must match the model's power p for kim_omberg")
            utility = derived
        elif utility is None:
            utility = ut.UtilitySpec.power(-1.0)
        options["utility"] = utility
        options["x"] = v.number(raw, "x", "config", default=1.0, positive=True)
        options["grid"] = _parse_grid(
            v, v.block(raw, "grid", required=False), "grid",
            {"k_min", "k_max", "count"},
            {"k_min": 0.05, "k_max": 1.0, "count": DEFAULT_CURVE_POINTS},
        )
        g = options["grid"]
        g["count"] = int(g["count"])
        if not (0.0 < g["k_min"] <= g["k_max"]):
            v.fail("grid: need 0 < k_min <= k_max")
    elif experiment == "q2-curve":
        block = v.block(raw, "model", required=True)
        model = None
        if block is not None:
            model = _parse_model(v, block, "model", {"kim_omberg"})
        options["model"] = model
        options["x"] = v.number(raw, "x", "config", default=1.0, positive=True)
        options["T"] = v.number(raw, "T", "config", default=0.3, positive=True)
        options["n_steps"] = v.number(
            raw, "n_steps", "config", default=None, integer=True, positive=True
        )
        options["grid"] = _parse_grid(
            v, v.block(raw, "grid", required=False), "grid",
            {"count"}, {"count": 25},
        )
        options["grid"]["count"] = int(options["grid"]["count"])
    elif experiment == "duality-check":
        block = v.block(raw, "model", required=True)
        model = None
        if block is not None:
            model = _parse_model(v, block, "model", {"merton", "kim_omberg"})
        options["model"] = model
        ublock = v.block(raw, "utility", required=False)
        utility = _parse_utility(v, ublock, "utility")
        if model is not None and model.variant == "kim_omberg":
            derived = ut.UtilitySpec.power(model.ko_params.p)
            if utility is not None and utility != derived:
                v.fail("utility: must match the model's power p for kim_omberg")
            utility = derived
        elif utility is None:
            utility = ut.UtilitySpec.power(-1.0)
        options["utility"] = utility
        options["x"] = v.number(raw, "x", "config", default=1.0, positive=True)
        options["K"] = v.number(raw, "K", "config", default=1.0, positive=True)
        options["grid"] = _parse_grid(
            v, v.block(raw, "grid", required=False), "grid",
            {"count", "span"}, {"count": 9, "span": 2.0},
        )
        options["grid"]["count"] = int(options["grid"]["count"])
        if not (options["grid"]["span"] > 1.0):
            v.fail("grid: 'span' must exceed 1")
    else:  # check-conditions
        block = v.block(raw, "model", required=True)
        if block is not None:
            options["model"] = _parse_model(
                v, block, "model", {"merton", "kim_omberg", "feller_cv"}
            )
        cblock = v.block(raw, "condition", required=True)
        if cblock is not None:
            name = cblock.get("name")
            if name == "novikov_lemma4":
                v.keys(cblock, {"name", "delta", "grid"}, "condition")
                options["condition"] = {
                    "name": name,
                    "delta": v.number(cblock, "delta", "condition",
                                      required=True, positive=True),
                    "grid": _parse_grid(
                        v, v.block(cblock, "grid", required=False),
                        "condition.grid", {"t_min", "t_max", "count"},
                        {"t_min": 0.25, "t_max": 1.0, "count": 4},
                    ),
                }
            elif name == "cond_main_thm5":
                v.keys(cblock, {"name", "gamma", "epsilon", "T", "grid"}, "condition")
                gamma = v.number(cblock, "gamma", "condition", required=True)
                if gamma is not None and not gamma < 0.0:
                    v.fail("condition: 'gamma' must be negative")
                T = v.number(cblock, "T", "condition", default=1.0, positive=True)
                eps = v.number(cblock, "epsilon", "condition",
                               default=0.2, positive=True)
                options["condition"] = {
                    "name": name, "gamma": gamma, "epsilon": eps, "T": T,
                    "grid": _parse_grid(
                        v, v.block(cblock, "grid", required=False),
                        "condition.grid", {"t_min", "t_max", "count"},
                        {"t_min": None, "t_max": None, "count": 5},
                    ),
                }
            else:
                v.fail("condition: 'name' must be 'novikov_lemma4' or "
                       "'cond_main_thm5'")

    v.raise_if_failed()
    return ExperimentConfig(
        experiment=experiment,
        seed=int(seed),
        paths=int(paths),
        output_dir=output_dir,
        options=options,
        raw=raw,
    )


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _write_json(path, obj):
    data = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    with open(path, "w") as fh:
        fh.write(data)
    return hashlib.sha256(data.encode()).hexdigest()


def _run_ko_explosion(cfg, threads):
    params = cfg.options["ko_params"]
    g = cfg.options["grid"]
    s_max = max(float(g["k_max"]), 1.0)
    sol = ko.solve_riccati(params, s_max=s_max)
    if sol.explosion_time is not None:
        k_end = sol.explosion_time - float(g["margin"])
    else:
        k_end = float(g["k_max"])
    if k_end <= 0.0:
        raise ConfigError("grid margin leaves no positive horizon")
    rows = []
    for K in np.linspace(0.0, k_end, int(g["count"])):
        e = ko.value_e(params, float(K))
        rows.append((float(K), e, ko.primal_value(params, cfg.options["x"], float(K))))
    return [("ko-explosion.csv", ("K", "value_e", "primal_value"), rows)]


def _run_counterexample(cfg, threads):
    inst = ce.build_instance(
        cfg.options["utility"],
        cfg.options["n_max"],
        divergence_threshold=cfg.options["divergence_threshold"],
    )
    term = ce.terminal_value(inst)
    rows = []
    for n in range(1, inst.n_max + 1):
        pv = ce.premature_value(inst, n)
        rows.append(
            (n, float(inst.t_grid[n - 1]), pv.lo, pv.hi, term.lo, term.hi)
        )
    header = ("n", "t_n", "premature_lo", "premature_hi",
              "terminal_lo", "terminal_hi")
    return [("counterexample.csv", header, rows)]


def _closed_form_value(model, U, x, K):
    if model.variant == "merton":
        p = U.p if U.kind == "power" else 0.0
        return ms.merton_value_oracle(model.r, model.lam, p, x, K)
    return ko.primal_value(model.ko_params, x, K)


def _run_q1(cfg, threads, fresh_paths=False):
    model = cfg.options["model"]
    U = cfg.options["utility"]
    x = cfg.options["x"]
    g = cfg.options["grid"]
    if model.variant == "kim_omberg":
        sol = ko.solve_riccati(model.ko_params, s_max=max(g["k_max"], 1.0))
        if sol.explosion_time is not None and sol.explosion_time <= g["k_max"]:
            raise ConfigError(
                "k_max=%g is at or beyond the value explosion at %g; "
                "shrink the grid" % (g["k_max"], sol.explosion_time)
            )
    rows = []
    for K in np.linspace(g["k_min"], g["k_max"], g["count"]):
        res = ms.complete_market_value(
            model, U, x, float(K), cfg.paths, cfg.seed,
            fresh_paths=fresh_paths, threads=threads,
        )
        rows.append(
            (float(K), _closed_form_value(model, U, x, float(K)),
             res["u"].mean, res["u"].stderr, res["y"])
        )
    header = ("K", "u_closed", "u_mc", "u_mc_stderr", "y")
    return [("q1-curve.csv", header, rows)]


def _run_q2(cfg, threads):
    model = cfg.options["model"]
    params = model.ko_params
    x, T = cfg.options["x"], cfg.options["T"]
    count = cfg.options["grid"]["count"]
    k_grid = np.linspace(T / count, T, count)
    curve = ms.premature_curve_ko(
        params, x, T, k_grid, cfg.paths, cfg.seed,
        n_steps=cfg.options["n_steps"], threads=threads,
    )
    rows = [
        (row["K"], row["estimate"], row["stderr"],
         ko.primal_value(params, x, row["K"]))
        for row in curve
    ]
    header = ("K", "estimate", "stderr", "primal_value")
    return [("q2-curve.csv", header, rows)]


def _run_duality(cfg, threads, fresh_paths=False):
    model = cfg.options["model"]
    U = cfg.options["utility"]
    x, K = cfg.options["x"], cfg.options["K"]
    g = cfg.options["grid"]
    res = ms.complete_market_value(
        model, U, x, K, cfg.paths, cfg.seed,
        fresh_paths=fresh_paths, threads=threads,
    )
    u_est = res["u"]
    rows = []
    for f in np.geomspace(1.0 / g["span"], g["span"], g["count"]):
        y = res["y"] * float(f)
        dual = ms.dual_value_complete(model, U, y, K, cfg.paths, cfg.seed,
                                      threads=threads)
        gap = dual.mean + x * y - u_est.mean
        gap_stderr = math.hypot(dual.stderr, u_est.stderr)
        rows.append((y, dual.mean, dual.stderr, gap, gap_stderr))
    header = ("y", "dual_value", "dual_stderr", "gap", "gap_stderr")
    return [("duality-check.csv", header, rows)]


def _run_conditions(cfg, threads):
    model = cfg.options["model"]
    spec = cfg.options["condition"]
    g = spec["grid"]
    if spec["name"] == "novikov_lemma4":
        times = np.linspace(g["t_min"], g["t_max"], int(g["count"]))
        rep = conditions_mod.novikov_curve(
            model, spec["delta"], times, cfg.paths, cfg.seed, threads=threads
        )
    else:
        T, eps = spec["T"], spec["epsilon"]
        t_min = g["t_min"] if g["t_min"] is not None else T - eps
        t_max = g["t_max"] if g["t_max"] is not None else T
        times = np.linspace(t_min, t_max, int(g["count"]))
        rep = conditions_mod.cond_main_estimate(
            model, spec["gamma"], eps, T, times, cfg.paths, cfg.seed,
            threads=threads,
        )
    rows = [
        (float(t), e.mean, e.stderr) for t, e in zip(rep.grid, rep.values)
    ]
    verdict = {
        "condition": rep.condition,
        "verdict": rep.verdict,
        "params": rep.params,
        "seed": cfg.seed,
    }
    return [
        ("check-conditions.csv", ("t", "estimate", "stderr"), rows),
        ("condition_verdict.json", None, verdict),
    ]


_DISPATCH = {
    "ko-explosion": _run_ko_explosion,
    "counterexample": _run_counterexample,
    "q1-curve": _run_q1,
    "q2-curve": _run_q2,
    "duality-check": _run_duality,
    "check-conditions": _run_conditions,
}


def run_experiment(config, fresh_paths=False, threads=None):
    """Run one experiment, write its artifacts, return the manifest."""
    threads = kernels.resolve_threads(threads)
    os.makedirs(config.output_dir, exist_ok=True)
    started = time.monotonic()
    fn = _DISPATCH[config.experiment]
    if config.experiment in ("q1-curve", "duality-check"):
        artifacts_spec = fn(config, threads, fresh_paths=fresh_paths)
    else:
        artifacts_spec = fn(config, threads)

    written, hashes = [], {}
    try:
        for name, header, payload in artifacts_spec:
            path = os.path.join(config.output_dir, name)
            if header is None:
                digest = _write_json(path, payload)
            else:
                digest = _write_csv(path, header, payload)
            written.append(path)
            hashes[name] = digest
        manifest = {
            "experiment": config.experiment,
            "seed": config.seed,
            "paths": config.paths,
            "threads": threads,
            "fresh_paths": bool(fresh_paths),
            "backend": kernels.BACKEND,
            "version": __version__,
            "config": config.raw,
            "artifacts": hashes,
            "duration_seconds": time.monotonic() - started,
        }
        manifest_path = os.path.join(config.output_dir, "run_manifest.json")
        _write_json(manifest_path, manifest)
        written.append(manifest_path)
    except BaseException:
        for path in written:
            try:
                os.unlink(path)
            except OSError:
                pass
        raise
    return RunManifest(
        config=config.raw,
        artifacts=hashes,
        duration_seconds=manifest["duration_seconds"],
        version=__version__,
        seed=config.seed,
        path=manifest_path,
    )


def _load_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError("invalid configuration:\n  - cannot read %s: %s"
                          % (path, exc))


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="horizon-lab",
        description="Horizon-stability experiments for optimal investment",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--fresh-paths", action="store_true",
                       help="recalibrate on one sample, evaluate on another")
    p_run.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: HORIZON_LAB_THREADS or 1)")
    p_val = sub.add_parser("validate", help="validate a config without running")
    p_val.add_argument("--config", required=True)
    args = parser.parse_args(argv)

    try:
        config = parse_config(_load_config_file(args.config))
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2

    if args.command == "validate":
        print("config ok: experiment=%s seed=%d paths=%d"
              % (config.experiment, config.seed, config.paths))
        return 0

    try:
        manifest = run_experiment(
            config, fresh_paths=args.fresh_paths, threads=args.threads
        )
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except Exception as exc:
        print("experiment failed: %s: %s" % (type(exc).__name__, exc),
              file=sys.stderr)
        return 1
    for name, digest in sorted(manifest.artifacts.items()):
        print("%s  %s" % (digest, name))
    print("manifest: %s (%.2fs)" % (manifest.path, manifest.duration_seconds))
    return 0


if __name__ == "__main__":
    sys.exit(main())
