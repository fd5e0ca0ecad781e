"""End-to-end acceptance gate.

One shared 600-second sweep (3 controllers x 5 inflow levels x 5 seeds)
feeds the safety, latency, trend, and fidelity gates; mechanism and solver
properties run at full instance counts; determinism is checked on the CLI
outputs byte-for-byte.
"""

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import pytest

import crossflow
from crossflow import cli, verification
from crossflow.auction import BidInput, build_sequence
from crossflow.domain import ScenarioConfig, config_from_dict, config_to_dict
from crossflow.simulator import run

INFLOWS = (2000.0, 4000.0, 6000.0, 8000.0, 10000.0)
CONTROLLERS = ("gameopt", "fifo", "light")
SEEDS = (0, 1, 2, 3, 4)
DURATION = 600.0
BUSY_ZONE = 50          # cycles at or above this population gate latency

# The shared sweep is expensive (~15 min sequential); completed cells are
# cached on disk, keyed by a hash of the package sources, so interrupted
# or repeated sessions resume instead of recomputing. Each cached cell
# keeps its own measured wall time, so the runtime-budget assertion still
# reflects real simulation cost.
CACHE_PATH = Path(__file__).parent / ".acceptance_cache.json"


def _source_hash() -> str:
    digest = hashlib.sha256()
    pkg_root = Path(crossflow.__file__).parent
    for path in sorted(pkg_root.rglob("*.py")):
        digest.update(path.read_bytes())
    return digest.hexdigest()[:16]


def _load_cache() -> dict:
    try:
        blob = json.loads(CACHE_PATH.read_text())
    except (OSError, json.JSONDecodeError):
        return {}
    if blob.get("source_hash") != _source_hash():
        return {}
    return blob.get("cells", {})


def _store_cell(cache: dict, key: str, payload: dict) -> None:
    cache[key] = payload
    CACHE_PATH.write_text(json.dumps(
        {"source_hash": _source_hash(), "cells": cache}))


def make_config(controller: str, total_inflow: float, seed: int,
                **overrides) -> ScenarioConfig:
    d = config_to_dict(ScenarioConfig(controller=controller, seed=seed,
                                      duration=DURATION,
                                      inflow_per_arm=(total_inflow / 4.0,) * 4))
    d.update(overrides)
    return config_from_dict(d)


@dataclass
class Cell:
    violations: int
    throughput: float
    time_to_goal: float
    fuel_per_vehicle: float
    completed: int
    fallback_cycles: int
    eq9_failures: int
    seq_failures: int
    optimal_cycles: int
    busy_latencies_ms: list = field(default_factory=list)


def run_cell(cfg: ScenarioConfig) -> Cell:
    res = run(cfg, fail_fast=False)
    m = res.metrics
    busy = [rec.latency_us / 1000.0 for rec in res.cycle_rows
            if rec.n_in_zone >= BUSY_ZONE]
    return Cell(m.safety_violations, m.throughput, m.mean_time_to_goal,
                m.fuel_per_vehicle, m.completed, m.fallback_cycles,
                res.state.eq9_failures, res.state.seq_failures,
                res.state.optimal_cycles, busy)


def run_cell_cached(cache: dict, key: str, cfg: ScenarioConfig
                    ) -> tuple[Cell, float]:
    hit = cache.get(key)
    if hit is not None:
        return Cell(**hit["cell"]), hit["elapsed_s"]
    t0 = time.perf_counter()
    cell = run_cell(cfg)
    elapsed = time.perf_counter() - t0
    _store_cell(cache, key, {"cell": asdict(cell), "elapsed_s": elapsed})
    return cell, elapsed


@dataclass
class SweepData:
    cells: dict            # (controller, inflow, seed) -> Cell
    elapsed_s: float

    def mean(self, controller: str, inflow: float, attr: str) -> float:
        vals = [getattr(self.cells[(controller, inflow, s)], attr)
                for s in SEEDS]
        return sum(vals) / len(vals)


@pytest.fixture(scope="session")
def sweep() -> SweepData:
    cache = _load_cache()
    cells = {}
    total = 0.0
    for ctrl in CONTROLLERS:
        for inflow in INFLOWS:
            for seed in SEEDS:
                cfg = make_config(ctrl, inflow, seed)
                key = f"sweep/{ctrl}/{inflow:g}/{seed}"
                cells[(ctrl, inflow, seed)], dt = run_cell_cached(
                    cache, key, cfg)
                total += dt
    return SweepData(cells, total)


@pytest.fixture(scope="session")
def robustness() -> dict:
    """Extra cells for the robustness gates: raised speed limit and a
    2:1:1:1 arm imbalance, both at 8,000 veh/hr total."""
    cache = _load_cache()
    out = {"fast": {}, "imbalanced": {}}
    for seed in SEEDS:
        base = make_config("gameopt", 8000.0, seed)
        fast = cli.apply_axis(base, "speed_limit", 25.0)
        out["fast"][seed], _ = run_cell_cached(
            cache, f"fast/{seed}", fast)
    for ctrl in ("gameopt", "fifo"):
        for seed in SEEDS:
            base = make_config(ctrl, 8000.0, seed)
            skew = cli.apply_axis(base, "imbalance_ratio", 2.0)
            out["imbalanced"][(ctrl, seed)], _ = run_cell_cached(
                cache, f"imbalanced/{ctrl}/{seed}", skew)
    return out


class TestSafetySweep:
    def test_zero_violations_everywhere(self, sweep):
        bad = {key: c.violations for key, c in sweep.cells.items()
               if c.violations}
        assert not bad, f"violating cells: {bad}"

    def test_sweep_fits_runtime_budget(self, sweep):
        assert sweep.elapsed_s <= 1800.0, f"sweep took {sweep.elapsed_s:.0f}s"

    def test_every_cell_served_traffic(self, sweep):
        assert all(c.completed > 0 for c in sweep.cells.values())


class TestMechanismProperties:
    def test_truthful_bidding_dominant_with_strict_losses(self):
        res = verification.check_incentive_compatibility(
            instances=1000, n_max=6, grid_points=41)
        assert res.passed, res.detail

    def test_sorted_allocation_maximizes_welfare(self):
        res = verification.check_welfare(instances=500, n_max=7)
        assert res.passed, res.detail

    def test_overflow_conserves_mass(self):
        res = verification.check_overflow_conservation(instances=1000,
                                                       tol=1e-12)
        assert res.passed, res.detail

    def test_auction_stays_truthful_after_overflow(self):
        res = verification.check_overflow_incentive(
            instances=1000, n_max=6, grid_points=41)
        assert res.passed, res.detail


class TestSolver:
    def test_matches_grid_oracle_with_small_kkt_residuals(self):
        res = verification.check_qp_against_oracle(
            instances=500, n_max=8, coord_tol=5e-3, kkt_tol=1e-6)
        assert res.passed, res.detail

    def test_busy_cycle_latency_budget(self, sweep):
        pool = [ms for c in sweep.cells.values() for ms in c.busy_latencies_ms]
        assert pool, "no cycles reached the busy-zone population"
        mean = sum(pool) / len(pool)
        assert mean <= 20.0, f"mean busy-cycle latency {mean:.2f} ms"
        assert max(pool) <= 100.0, f"worst busy-cycle latency {max(pool):.2f} ms"


class TestSequencingComplexity:
    def test_comparison_counts_scale_loglinearly(self):
        import numpy as np
        rng = np.random.default_rng(0)
        coeffs = []
        for n in (100, 1000, 10000):
            entries = [BidInput(i, float(rng.uniform(0.0, 3000.0)), 0.0)
                       for i in range(n)]
            counter = [0]
            build_sequence(entries, counter)
            coeffs.append(counter[0] / (n * math.log2(n)))
        assert max(coeffs) / min(coeffs) <= 2.0, coeffs


class TestTrends:
    def test_peak_load_beats_baselines(self, sweep):
        peak = INFLOWS[-1]
        thr = sweep.mean("gameopt", peak, "throughput") \
            / sweep.mean("fifo", peak, "throughput")
        ttg = sweep.mean("gameopt", peak, "time_to_goal") \
            / sweep.mean("fifo", peak, "time_to_goal")
        fuel = sweep.mean("gameopt", peak, "fuel_per_vehicle") \
            / sweep.mean("light", peak, "fuel_per_vehicle")
        assert thr >= 1.25, f"throughput ratio {thr:.3f}"
        assert ttg <= 0.50, f"time-to-goal ratio {ttg:.3f}"
        assert fuel <= 0.75, f"fuel ratio {fuel:.3f}"

    def test_higher_speed_limit_lowers_travel_time(self, sweep, robustness):
        base = sweep.mean("gameopt", 8000.0, "time_to_goal")
        fast = [robustness["fast"][s].time_to_goal for s in SEEDS]
        assert sum(fast) / len(fast) < base

    def test_arm_imbalance_robustness(self, sweep, robustness):
        def skew_mean(ctrl):
            vals = [robustness["imbalanced"][(ctrl, s)].time_to_goal
                    for s in SEEDS]
            return sum(vals) / len(vals)

        g_bal = sweep.mean("gameopt", 8000.0, "time_to_goal")
        g_rel = abs(skew_mean("gameopt") - g_bal) / g_bal
        assert g_rel <= 0.10, f"imbalance shifted travel time by {g_rel:.1%}"

        f_bal = sweep.mean("fifo", 8000.0, "time_to_goal")
        f_rel = (skew_mean("fifo") - f_bal) / f_bal
        assert f_rel >= 0.10, f"baseline only degraded by {f_rel:.1%}"


class TestDeterminism:
    @pytest.mark.parametrize("controller", CONTROLLERS)
    def test_rerun_outputs_byte_identical(self, controller, tmp_path, capsys):
        dirs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = cli.main(["run", "--controller", controller,
                             "--duration", "60", "--seed", "1",
                             "--dump-bids", "--out", str(out)])
            assert code == 0
            dirs.append(out)
        capsys.readouterr()
        a, b = dirs
        for fname in ("vehicles.csv", "bids.csv", "config.yaml"):
            assert (a / fname).read_bytes() == (b / fname).read_bytes(), fname

        def cycles_without_latency(path):
            with open(path, newline="", encoding="utf-8") as fh:
                rows = list(csv.reader(fh))
            drop = rows[0].index("latency_us")
            return [r[:drop] + r[drop + 1:] for r in rows]

        # latency is a wall-clock measurement; every simulated field of the
        # cycle log must still match exactly
        assert cycles_without_latency(a / "cycles.csv") == \
            cycles_without_latency(b / "cycles.csv")

        ma = json.loads((a / "metrics.json").read_text())
        mb = json.loads((b / "metrics.json").read_text())
        ma.pop("solver_latency"), mb.pop("solver_latency")
        assert ma == mb


class TestPlanFidelity:
    def test_exact_gap_and_ordering_hold_on_every_optimal_cycle(self, sweep):
        for (ctrl, inflow, seed), cell in sweep.cells.items():
            if ctrl != "gameopt":
                continue
            assert cell.optimal_cycles > 0
            assert cell.eq9_failures == 0, (inflow, seed)
            assert cell.seq_failures == 0, (inflow, seed)
