"""Benchmark the QP solver's compiled kernel against the pure-Python one.

The kernel backend is fixed at import time, so each backend runs in its
own subprocess (the pure-Python one forced via ``CROSSFLOW_PURE_PYTHON``).
Both solve the same seeded set of planner-shaped instances; the report
shows per-solve latency percentiles and cross-checks the solutions.

Usage: python benchmarks/bench_qp.py [--instances 400] [--n-max 60]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import tempfile
import time


def _generate(instances: int, n_max: int, seed: int):
    import numpy as np

    from crossflow.qp.types import QpProblem

    rng = np.random.default_rng(seed)
    problems = []
    for _ in range(instances):
        n = int(rng.integers(2, n_max + 1))
        h = rng.uniform(0.5, 4.0, size=n)
        g = -h * rng.uniform(0.0, 20.0, size=n)
        lo = np.zeros(n)
        hi = rng.uniform(5.0, 20.0, size=n)
        rows, rhs = [], []
        for _ in range(int(rng.integers(n, 3 * n + 1))):
            i, j = rng.integers(0, n, size=2)
            if i == j:
                continue
            row = np.zeros(n)
            row[j] = rng.uniform(0.5, 40.0)
            row[i] = -rng.uniform(0.0, 40.0)
            rows.append(row)
            rhs.append(rng.uniform(-5.0, 60.0))
        A = np.array(rows) if rows else np.zeros((0, n))
        b = np.array(rhs) if rhs else np.zeros(0)
        problems.append(QpProblem(h=h, g=g, A=A, b=b, lo=lo, hi=hi))
    return problems


def worker(out_path: str, instances: int, n_max: int, seed: int) -> None:
    import numpy as np

    from crossflow import qp

    problems = _generate(instances, n_max, seed)
    # warm-up pass so import/JIT-ish one-time costs stay out of the timings
    for p in problems[:5]:
        qp.solve(p)
    times, digests, statuses = [], [], []
    for p in problems:
        t0 = time.perf_counter()
        sol = qp.solve(p)
        times.append(time.perf_counter() - t0)
        statuses.append(sol.status.value)
        digests.append(float(np.round(np.sum(sol.x), 6)))
    lat = np.array(times) * 1e3
    report = {
        "backend": qp.BACKEND,
        "solves": len(problems),
        "optimal": statuses.count("optimal"),
        "mean_ms": float(np.mean(lat)),
        "p50_ms": float(np.percentile(lat, 50)),
        "p95_ms": float(np.percentile(lat, 95)),
        "max_ms": float(np.max(lat)),
        "statuses": statuses,
        "digests": digests,
    }
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--instances", type=int, default=400)
    parser.add_argument("--n-max", type=int, default=60)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--worker", metavar="OUT", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.worker:
        worker(args.worker, args.instances, args.n_max, args.seed)
        return 0

    reports = {}
    with tempfile.TemporaryDirectory() as tmp:
        for label, force_py in (("compiled", False), ("python", True)):
            out = os.path.join(tmp, label + ".json")
            env = dict(os.environ)
            env.pop("CROSSFLOW_PURE_PYTHON", None)
            if force_py:
                env["CROSSFLOW_PURE_PYTHON"] = "1"
            subprocess.run(
                [sys.executable, os.path.abspath(__file__),
                 "--worker", out, "--instances", str(args.instances),
                 "--n-max", str(args.n_max), "--seed", str(args.seed)],
                check=True, env=env)
            with open(out, encoding="utf-8") as fh:
                reports[label] = json.load(fh)

    a, b = reports["compiled"], reports["python"]
    if a["backend"] == b["backend"]:
        print(f"note: both subprocesses used the {a['backend']} backend "
              "(compiled extension unavailable?)")
    mismatches = sum(1 for sa, sb, da, db in
                     zip(a["statuses"], b["statuses"],
                         a["digests"], b["digests"])
                     if sa != sb or (sa == "optimal" and abs(da - db) > 1e-4))
    print(f"{a['solves']} planner-shaped instances "
          f"(n <= {args.n_max}), seed {args.seed}")
    print(f"solution mismatches between backends: {mismatches}")
    header = f"{'backend':>9} {'optimal':>8} {'mean':>9} {'p50':>9} " \
             f"{'p95':>9} {'max':>9}"
    print(header)
    for label in ("compiled", "python"):
        r = reports[label]
        print(f"{r['backend']:>9} {r['optimal']:>8} "
              f"{r['mean_ms']:>7.3f}ms {r['p50_ms']:>7.3f}ms "
              f"{r['p95_ms']:>7.3f}ms {r['max_ms']:>7.3f}ms")
    speedup = b["mean_ms"] / a["mean_ms"]
    print(f"mean speedup of {a['backend']} over {b['backend']}: "
          f"{speedup:.2f}x")
    return 1 if mismatches else 0


if __name__ == "__main__":
    sys.exit(main())
