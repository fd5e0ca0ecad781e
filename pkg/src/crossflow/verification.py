"""Property and oracle checks shared by ``crossflow verify`` and the tests.

Each check returns a :class:`CheckResult`; ``run_all`` executes the whole
suite. The random-instance generators used by the auction and QP checks
live here so the test suite exercises exactly the same distributions.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Callable, Iterator, Optional

import numpy as np

from . import auction, qp
from .conflict import ALL_GROUPS, conflicts, non_conflict_set
from .domain import Intention, ScenarioConfig
from .qp.oracle import grid_oracle
from .qp.types import QpProblem


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    elapsed_s: float


# --------------------------------------------------------------------------
# random instances

def random_auction_instance(rng: np.random.Generator, n_max: int = 6):
    """Priority values for one auction round (positive, well-spread)."""
    n = int(rng.integers(2, n_max + 1))
    zetas = rng.uniform(0.0, 3000.0, size=n)
    return zetas


def random_qp_instance(rng: np.random.Generator, n_max: int = 8) -> QpProblem:
    """Planner-shaped QP: positive diagonal Hessian, pairwise one-sided
    rows (gap / precedence style), speed-limit boxes; feasibility by
    construction is not guaranteed — callers filter on solver status."""
    n = int(rng.integers(1, n_max + 1))
    h = rng.uniform(0.5, 4.0, size=n)
    target = rng.uniform(0.0, 20.0, size=n)
    g = -h * target
    lo = np.zeros(n)
    hi = rng.uniform(5.0, 20.0, size=n)
    rows = []
    rhs = []
    m = int(rng.integers(0, 2 * n + 1))
    for _ in range(m):
        i, j = rng.integers(0, n, size=2)
        if i == j:
            continue
        row = np.zeros(n)
        # follower-leader style: c_j * u_j - c_i * u_i <= b
        row[j] = rng.uniform(0.5, 40.0)
        row[i] = -rng.uniform(0.0, 40.0)
        rows.append(row)
        rhs.append(rng.uniform(-5.0, 60.0))
    A = np.array(rows) if rows else np.zeros((0, n))
    b = np.array(rhs) if rhs else np.zeros(0)
    return QpProblem(h=h, g=g, A=A, b=b, lo=lo, hi=hi)


# --------------------------------------------------------------------------
# auction properties

def check_incentive_compatibility(instances: int = 1000, n_max: int = 6,
                                  grid_points: int = 41,
                                  seed: int = 0) -> CheckResult:
    """Truthful bidding is dominant: on a deviation grid around truth, no
    unilateral deviation improves utility; strict losses occur both ways."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    strict_up = strict_down = 0
    for k in range(instances):
        zetas = random_auction_instance(rng, n_max)
        n = len(zetas)
        alphas = auction.default_item_values(n)
        agent = int(rng.integers(0, n))
        others = np.delete(zetas, agent)

        def outcome(bid: float) -> float:
            bids = np.append(others, bid)
            order = np.argsort(-bids, kind="stable")
            ranked = bids[order]
            i_rank = int(np.where(order == n - 1)[0][0])
            return auction.utility(i_rank, ranked, zetas[agent], alphas)

        truthful = outcome(zetas[agent])
        for frac in np.linspace(0.0, 2.0, grid_points):
            dev = outcome(frac * zetas[agent])
            if dev > truthful + 1e-12:
                return CheckResult(
                    "incentive_compatibility", False,
                    f"instance {k}: deviation x{frac:.2f} gains "
                    f"{dev - truthful:.3e}", time.perf_counter() - t0)
            if dev < truthful - 1e-12:
                if frac < 1.0:
                    strict_down += 1
                elif frac > 1.0:
                    strict_up += 1
    ok = strict_up > 0 and strict_down > 0
    return CheckResult(
        "incentive_compatibility", ok,
        f"{instances} instances, no profitable deviation; strict losses "
        f"under={strict_down} over={strict_up}", time.perf_counter() - t0)


def check_welfare(instances: int = 500, n_max: int = 7,
                  seed: int = 1) -> CheckResult:
    """Bid-sorted allocation maximizes total welfare over all permutations."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    for k in range(instances):
        zetas = random_auction_instance(rng, n_max)
        n = len(zetas)
        alphas = auction.default_item_values(n)
        sorted_alloc = list(np.argsort(-zetas, kind="stable"))
        achieved = auction.welfare(sorted_alloc, zetas, alphas)
        best = max(auction.welfare(list(p), zetas, alphas)
                   for p in itertools.permutations(range(n)))
        if achieved < best - 1e-9:
            return CheckResult(
                "welfare_maximization", False,
                f"instance {k}: sorted {achieved:.6f} < optimum {best:.6f}",
                time.perf_counter() - t0)
    return CheckResult("welfare_maximization", True,
                       f"{instances} instances, sorted order optimal",
                       time.perf_counter() - t0)


def random_lane_layout(rng: np.random.Generator, zetas: np.ndarray):
    """Partition agents 0..n-1 into random lanes, front-to-back order."""
    n = len(zetas)
    order = rng.permutation(n)
    n_lanes = int(rng.integers(1, min(4, n) + 1))
    cuts = sorted(rng.choice(np.arange(1, n), size=n_lanes - 1,
                             replace=False)) if n_lanes > 1 else []
    lanes = []
    start = 0
    for cut in [*cuts, n]:
        lanes.append([int(a) for a in order[start:cut]])
        start = cut
    return lanes


def check_overflow_incentive(instances: int = 1000, n_max: int = 6,
                             grid_points: int = 41,
                             seed: int = 4) -> CheckResult:
    """Post-transfer bid vectors keep the downstream auction truthful.

    The overflow pass reshapes bids before allocation; the allocation
    auction itself must remain dominant-strategy truthful when its inputs
    are those adjusted vectors (the same deviation grid as the plain
    incentive check, run on post-transfer instances).
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    for k in range(instances):
        raw = random_auction_instance(rng, n_max)
        n = len(raw)
        alphas = auction.default_item_values(n)
        lanes = random_lane_layout(rng, raw)
        entries = [[auction.LaneEntry(a, float(raw[a])) for a in lane]
                   for lane in lanes]
        adjusted = auction.apply_overflow(entries, alphas)
        zetas = np.array([adjusted[a] for a in range(n)])
        agent = int(rng.integers(0, n))
        others = np.delete(zetas, agent)

        def outcome(bid: float) -> float:
            bids = np.append(others, bid)
            order = np.argsort(-bids, kind="stable")
            ranked = bids[order]
            i_rank = int(np.where(order == n - 1)[0][0])
            return auction.utility(i_rank, ranked, zetas[agent], alphas)

        truthful = outcome(zetas[agent])
        for frac in np.linspace(0.0, 2.0, grid_points):
            dev = outcome(frac * zetas[agent])
            if dev > truthful + 1e-12:
                return CheckResult(
                    "overflow_incentive", False,
                    f"instance {k}: deviation x{frac:.2f} gains "
                    f"{dev - truthful:.3e}", time.perf_counter() - t0)
    return CheckResult("overflow_incentive", True,
                       f"{instances} post-transfer instances, no profitable "
                       "deviation", time.perf_counter() - t0)


def check_overflow_conservation(instances: int = 500, seed: int = 2,
                                tol: float = 1e-12) -> CheckResult:
    """Overflow transfers conserve total bid mass to within ``tol``."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n_lanes = int(rng.integers(1, 5))
        vid = itertools.count()
        lanes = []
        for _ in range(n_lanes):
            depth = int(rng.integers(1, 6))
            lanes.append([auction.LaneEntry(next(vid),
                                            float(rng.uniform(0, 3000)))
                          for _ in range(depth)])
        before = sum(e.bid for lane in lanes for e in lane)
        after = sum(auction.apply_overflow(lanes).values())
        worst = max(worst, abs(after - before))
        if abs(after - before) > tol * max(1.0, before):
            break
    ok = worst <= tol * 3000 * 20
    return CheckResult("overflow_conservation", ok,
                       f"{instances} instances, worst drift {worst:.3e}",
                       time.perf_counter() - t0)


# --------------------------------------------------------------------------
# conflict table

def check_conflict_table() -> CheckResult:
    """Symmetry of the relation and universality of right turns."""
    t0 = time.perf_counter()
    for g1 in ALL_GROUPS:
        for g2 in ALL_GROUPS:
            if conflicts(g1, g2) != conflicts(g2, g1):
                return CheckResult("conflict_table", False,
                                   f"asymmetric pair {g1}/{g2}",
                                   time.perf_counter() - t0)
        if g1.intention is Intention.RIGHT:
            if any(conflicts(g1, g2) for g2 in ALL_GROUPS):
                return CheckResult("conflict_table", False,
                                   f"right-turn group {g1} conflicts",
                                   time.perf_counter() - t0)
        if g1 in non_conflict_set(g1):
            return CheckResult("conflict_table", False,
                               f"{g1} lists itself", time.perf_counter() - t0)
    return CheckResult("conflict_table", True,
                       "symmetric; right turns universal",
                       time.perf_counter() - t0)


# --------------------------------------------------------------------------
# QP properties

def check_qp_against_oracle(instances: int = 500, n_max: int = 8,
                            seed: int = 3, coord_tol: float = 5e-3,
                            kkt_tol: float = 1e-6) -> CheckResult:
    """Solver optimum survives the grid oracle; KKT residuals small."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    solved = 0
    for k in range(instances):
        p = random_qp_instance(rng, n_max)
        sol = qp.solve(p)
        if sol.status is not qp.QpStatus.OPTIMAL:
            continue
        solved += 1
        if sol.kkt_residual > kkt_tol:
            return CheckResult("qp_oracle", False,
                               f"instance {k}: KKT {sol.kkt_residual:.2e}",
                               time.perf_counter() - t0)
        better = grid_oracle(p, sol.x, step=coord_tol, feas_tol=10 * kkt_tol)
        if np.max(np.abs(better - sol.x), initial=0.0) > coord_tol:
            return CheckResult(
                "qp_oracle", False,
                f"instance {k}: oracle moved "
                f"{np.max(np.abs(better - sol.x)):.2e} "
                f"(objective {p.objective(sol.x):.6f} -> "
                f"{p.objective(better):.6f})",
                time.perf_counter() - t0)
    ok = solved >= instances // 2
    return CheckResult("qp_oracle", ok,
                       f"{solved}/{instances} optimal instances oracle-clean",
                       time.perf_counter() - t0)


# --------------------------------------------------------------------------
# simulation properties

def check_determinism(duration: float = 60.0, seed: int = 0) -> CheckResult:
    """Same (config, seed) twice gives identical vehicle and cycle logs."""
    from . import simulator
    t0 = time.perf_counter()
    cfg = ScenarioConfig(duration=duration, seed=seed)
    a = simulator.run(cfg, fail_fast=False)
    b = simulator.run(cfg, fail_fast=False)

    def scrub(rows):
        # solver latency is a wall-clock measurement, not simulation state
        return [(r.time, r.n_in_zone, r.n_rows, r.status, r.fallback)
                for r in rows]

    same = (a.vehicle_rows == b.vehicle_rows
            and scrub(a.cycle_rows) == scrub(b.cycle_rows))
    return CheckResult("determinism", same,
                       f"{len(a.vehicle_rows)} vehicle rows compared",
                       time.perf_counter() - t0)


def check_safety_smoke(duration: float = 60.0, seed: int = 0) -> CheckResult:
    """Short run of every controller at the default load: zero violations."""
    from . import simulator
    t0 = time.perf_counter()
    details = []
    ok = True
    for ctrl in ("gameopt", "fifo", "light"):
        cfg = ScenarioConfig(controller=ctrl, duration=duration, seed=seed)
        res = simulator.run(cfg, fail_fast=False)
        v = res.metrics.safety_violations
        ok &= (v == 0)
        details.append(f"{ctrl}: {v} violations, "
                       f"{res.metrics.completed} completed")
    return CheckResult("safety_smoke", ok, "; ".join(details),
                       time.perf_counter() - t0)


# --------------------------------------------------------------------------
# suite

FAST_SUITE: tuple[Callable[[], CheckResult], ...] = (
    check_conflict_table,
    lambda: check_incentive_compatibility(instances=200),
    lambda: check_welfare(instances=100),
    lambda: check_overflow_conservation(instances=200),
    lambda: check_overflow_incentive(instances=200),
    lambda: check_qp_against_oracle(instances=100),
    check_determinism,
    check_safety_smoke,
)

FULL_SUITE: tuple[Callable[[], CheckResult], ...] = (
    check_conflict_table,
    check_incentive_compatibility,
    check_welfare,
    check_overflow_conservation,
    check_overflow_incentive,
    check_qp_against_oracle,
    check_determinism,
    check_safety_smoke,
)


def run_all(full: bool = False,
            progress: Optional[Callable[[CheckResult], None]] = None,
            ) -> Iterator[CheckResult]:
    for fn in (FULL_SUITE if full else FAST_SUITE):
        result = fn()
        if progress is not None:
            progress(result)
        yield result
