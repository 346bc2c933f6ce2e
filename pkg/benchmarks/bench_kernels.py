"""Timing comparison of the compiled and pure-python kernel backends.

Runs each workload in a subprocess per backend (the backend is fixed at
import time, so the same process cannot host both) and prints a table with
wall times, speedup, and a digest of the outputs to confirm the backends
agree bit for bit.

    python3 benchmarks/bench_kernels.py [--scale 1.0] [--repeats 3] [--threads N]
"""

import argparse
import hashlib
import json
import os
import subprocess
import sys
import time


def _workloads(scale):
    n = max(1000, int(200_000 * scale))
    paths = max(500, int(20_000 * scale))
    return (
        ("uniform_pairs  n=%d" % n, "uniforms", n),
        ("norm_ppf       n=%d" % n, "ppf", n),
        ("portable_log   n=%d" % n, "log", n),
        ("ou sim         %d paths x 64 steps" % paths, "ou", paths),
        ("feller sim     %d paths x 64 steps" % paths, "feller", paths),
    )


def _run_child(scale, repeats, threads):
    import numpy as np

    from horizon_lab import kernels
    from horizon_lab import kim_omberg as ko
    from horizon_lab.market_sim import MarketModel, simulate_paths

    def _dig(*arrays):
        h = hashlib.sha256()
        for a in arrays:
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:12]

    grid = np.linspace(0.0, 1.0, 65)
    rev = ko.KimOmbergParams(kappa=1.0, theta=0.05, beta=0.3, mu0=0.2, p=0.5)
    kom = MarketModel.kim_omberg(rev)
    fel = MarketModel.feller_cv(kappa=2.0, theta=0.04, beta=0.2, rho=-0.5,
                                v0=0.04, c0=0.1, c1=0.04, c2=0.5, c3=0.0)

    def make(kind, n):
        if kind == "uniforms":
            return lambda: kernels.uniform_pairs(3, kernels.STREAM_SIM, n)
        if kind == "ppf":
            u1, _ = kernels.uniform_pairs(3, kernels.STREAM_SIM, n)
            return lambda: kernels.norm_ppf(u1)
        if kind == "log":
            u1, _ = kernels.uniform_pairs(3, kernels.STREAM_SIM, n)
            x = u1 * 1e6 + 1e-9
            return lambda: kernels.portable_log(x)
        if kind == "ou":
            return lambda: simulate_paths(kom, grid, n, 3, keep="ends",
                                          threads=threads)
        if kind == "feller":
            return lambda: simulate_paths(fel, grid, n, 3, keep="ends",
                                          threads=threads)
        raise ValueError(kind)

    results = []
    for name, kind, n in _workloads(scale):
        fn = make(kind, n)
        best, out = None, None
        for _ in range(repeats):
            t0 = time.perf_counter()
            out = fn()
            dt = time.perf_counter() - t0
            best = dt if best is None else min(best, dt)
        if isinstance(out, tuple):
            digest = _dig(*out)
        elif hasattr(out, "log_z"):
            digest = _dig(out.log_z, out.state)
        else:
            digest = _dig(out)
        results.append({"name": name, "secs": best, "digest": digest})
    json.dump({"backend": kernels.BACKEND, "results": results}, sys.stdout)


def _spawn(backend, args):
    env = dict(os.environ, HORIZON_LAB_BACKEND=backend)
    cmd = [sys.executable, os.path.abspath(__file__), "--_child",
           "--scale", str(args.scale), "--repeats", str(args.repeats),
           "--threads", str(args.threads)]
    proc = subprocess.run(cmd, env=env, capture_output=True, text=True)
    if proc.returncode != 0:
        return None, proc.stderr.strip().splitlines()[-1] if proc.stderr else "failed"
    return json.loads(proc.stdout), None


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0,
                    help="problem size multiplier")
    ap.add_argument("--repeats", type=int, default=3,
                    help="best-of-N timing")
    ap.add_argument("--threads", type=int, default=1,
                    help="thread count for the compiled backend")
    ap.add_argument("--_child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)

    if args._child:
        _run_child(args.scale, args.repeats, args.threads)
        return 0

    compiled, cerr = _spawn("compiled", args)
    python, perr = _spawn("python", args)
    if python is None:
        print("python backend failed: %s" % perr, file=sys.stderr)
        return 1

    width = max(len(w[0]) for w in _workloads(args.scale))
    print("%-*s  %10s  %10s  %s" % (width, "workload", "compiled",
                                    "python", "speedup   outputs"))
    if compiled is None:
        print("compiled backend unavailable (%s); python times only" % cerr)
    rows = zip(compiled["results"] if compiled else [{}] * len(python["results"]),
               python["results"])
    for comp, py in rows:
        if comp:
            same = "identical" if comp["digest"] == py["digest"] else "DIFFER"
            print("%-*s  %9.4fs  %9.4fs  %6.2fx   %s"
                  % (width, py["name"], comp["secs"], py["secs"],
                     py["secs"] / comp["secs"], same))
        else:
            print("%-*s  %10s  %9.4fs" % (width, py["name"], "-", py["secs"]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
