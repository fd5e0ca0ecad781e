"""Velocity-planning QP assembly and the per-cycle planner."""

import numpy as np
import pytest

from crossflow.auction import BidInput, build_sequence
from crossflow.domain import IntersectionSpec
from crossflow.planner import (
    InfeasibleSpacing, Planner, braking_fallback, build_qp,
    lateral_rows, longitudinal_rows, predict_position,
)
from crossflow.qp.types import QpStatus

from conftest import make_vehicle

DT = 0.1


def sequence_for(vehicles, bids=None):
    if bids is None:
        bids = {v.id: 100.0 - v.id for v in vehicles}
    return build_sequence([BidInput(v.id, bids[v.id], v.spawn_time)
                           for v in vehicles])


def lane_map(vehicles):
    lanes = {}
    for v in vehicles:
        lanes.setdefault((v.arm, v.lane), []).append(v)
    for lane in lanes.values():
        lane.sort(key=lambda v: v.s)
    return lanes


class TestPredictPosition:
    def test_constant_speed(self):
        assert predict_position(100.0, 10.0, 10.0, DT) == pytest.approx(99.0)

    def test_accelerating(self):
        assert predict_position(100.0, 10.0, 12.0, DT) == pytest.approx(98.9)

    def test_stationary(self):
        assert predict_position(42.0, 0.0, 0.0, DT) == 42.0


class TestLongitudinalRows:
    def test_wide_gap_row_value(self, spec):
        lead = make_vehicle(1, s=50.0, v=15.0)
        follow = make_vehicle(2, s=60.0, v=15.0)
        (row,) = longitudinal_rows([lead, follow], spec, DT)
        # -u_lead + u_follow <= -rhs with rhs = 20 * (50 - 60 + 7) = -60
        assert row.vehicle_ids == (1, 2)
        assert row.coeffs == (-1.0, 1.0)
        assert row.rhs == pytest.approx(60.0)

    def test_boundary_gap_forces_no_closing(self, spec):
        lead = make_vehicle(1, s=50.0, v=12.0)
        follow = make_vehicle(2, s=57.0, v=12.0)  # gap exactly l + msr
        (row,) = longitudinal_rows([lead, follow], spec, DT)
        assert row.rhs == pytest.approx(0.0)

    def test_single_vehicle_no_rows(self, spec):
        assert longitudinal_rows([make_vehicle(1)], spec, DT) == []

    def test_unsafe_gap_raises(self, spec):
        lead = make_vehicle(1, s=50.0, v=10.0)
        follow = make_vehicle(2, s=53.0, v=10.0)
        with pytest.raises(InfeasibleSpacing):
            longitudinal_rows([lead, follow], spec, DT)


class TestLateralRows:
    def test_hand_evaluated_coefficients(self, spec):
        # i (rank 1) from a conflicting lane against j (rank 2)
        i = make_vehicle(1, arm=0, intention=1, s=40.0, v=20.0)
        j = make_vehicle(2, arm=2, intention=1, s=50.0, v=20.0)
        seq = sequence_for([i, j])
        rows, holds = lateral_rows(seq, lane_map([i, j]), spec, DT)
        assert holds == []
        (row,) = rows
        # u_j * (40 - 1 + 5 + 25) <= u_i * (50 - 1)
        assert row.vehicle_ids == (2, 1)
        assert row.coeffs == pytest.approx((69.0, -49.0))
        assert row.rhs == 0.0

    def test_non_conflicting_pair_no_row(self, spec):
        # opposing straights may share the zone
        i = make_vehicle(1, arm=0, intention=1, s=40.0, v=20.0)
        j = make_vehicle(2, arm=1, intention=1, s=50.0, v=20.0)
        rows, _ = lateral_rows(sequence_for([i, j]), lane_map([i, j]),
                               spec, DT)
        assert rows == []

    def test_right_turns_never_constrained(self, spec):
        r = make_vehicle(1, arm=0, intention=0, s=40.0, v=20.0)
        others = [make_vehicle(2, arm=2, intention=1, s=50.0, v=20.0),
                  make_vehicle(3, arm=1, intention=2, s=60.0, v=20.0)]
        rows, _ = lateral_rows(sequence_for([r] + others),
                               lane_map([r] + others), spec, DT)
        assert all(1 not in row.vehicle_ids for row in rows)

    def test_vehicle_at_line_becomes_hold(self, spec):
        i = make_vehicle(1, arm=0, intention=1, s=40.0, v=20.0)
        j = make_vehicle(2, arm=2, intention=1, s=0.5, v=20.0)
        bids = {1: 100.0, 2: 50.0}   # j must yield but is at the line
        rows, holds = lateral_rows(sequence_for([i, j], bids),
                                   lane_map([i, j]), spec, DT)
        assert rows == []
        assert holds == [(2, 1)]


class TestBuildQp:
    def test_scalar_objective_terms(self, spec):
        v = make_vehicle(1, v=10.0)
        build = build_qp([v], sequence_for([v]), spec, lam=0.7, dt=DT)
        p = build.problem
        assert p.h[0] == 2.0
        # pull toward 0.7 * 20 + 0.3 * 10 = 17
        assert p.g[0] == pytest.approx(-34.0)
        assert p.lo[0] == pytest.approx(9.5)
        assert p.hi[0] == pytest.approx(10.3)

    def test_unconstrained_stationary_point_with_wide_box(self, spec):
        v = make_vehicle(1, v=10.0, a_max=100.0, a_min=-100.0)
        build = build_qp([v], sequence_for([v]), spec, lam=0.7, dt=DT)
        from crossflow import qp
        sol = qp.solve(build.problem)
        assert sol.x[0] == pytest.approx(17.0)

    def test_lambda_one_targets_speed_limit(self, spec):
        v = make_vehicle(1, v=10.0)
        build = build_qp([v], sequence_for([v]), spec, lam=1.0, dt=DT)
        assert build.problem.g[0] == pytest.approx(-40.0)

    def test_stationary_point_monotone_in_lambda(self, spec):
        v = make_vehicle(1, v=10.0)
        targets = []
        for lam in (0.0, 0.3, 0.7, 1.0):
            build = build_qp([v], sequence_for([v]), spec, lam=lam, dt=DT)
            targets.append(-build.problem.g[0] / build.problem.h[0])
        assert targets == sorted(targets)

    def test_extra_hi_tightens_bound(self, spec):
        v = make_vehicle(1, v=10.0)
        build = build_qp([v], sequence_for([v]), spec, lam=0.7, dt=DT,
                         extra_hi={1: 9.8})
        assert build.problem.hi[0] == pytest.approx(9.8)

    def test_extra_hi_never_crosses_lower_bound(self, spec):
        v = make_vehicle(1, v=10.0)
        build = build_qp([v], sequence_for([v]), spec, lam=0.7, dt=DT,
                         extra_hi={1: 0.0})
        assert build.problem.hi[0] == pytest.approx(build.problem.lo[0])

    def test_unsatisfiable_lateral_row_pins_follower_to_braking(self, spec):
        # conflicting pair at similar distance and full speed: no command
        # in the acceleration boxes satisfies the ordering row, so the
        # yielding vehicle must get maximum braking instead
        i = make_vehicle(1, arm=0, intention=1, s=40.0, v=20.0)
        j = make_vehicle(2, arm=2, intention=1, s=41.0, v=20.0)
        build = build_qp([i, j], sequence_for([i, j]), spec, lam=0.7, dt=DT)
        k = build.index[2]
        assert build.problem.hi[k] == pytest.approx(build.problem.lo[k])
        assert all(row.kind != "lateral" for row in build.rows)


class TestPlanCycle:
    def test_commands_satisfy_all_rows_and_bounds(self, spec):
        vehicles = [
            make_vehicle(1, arm=0, intention=1, s=40.0, v=18.0),
            make_vehicle(2, arm=0, intention=1, s=60.0, v=19.0),
            make_vehicle(3, arm=2, intention=1, s=80.0, v=20.0),
            make_vehicle(4, arm=1, intention=2, s=90.0, v=15.0),
        ]
        planner = Planner(spec, lam=0.7, dt=DT)
        seq = sequence_for(vehicles)
        cs = planner.plan_cycle(vehicles, seq, timestamp=0.0)
        assert cs.status is QpStatus.OPTIMAL and not cs.fallback
        assert set(cs.commands) == {1, 2, 3, 4}
        build = build_qp(vehicles, seq, spec, lam=0.7, dt=DT)
        u = np.array([cs.commands[vid] for vid in build.vehicle_ids])
        assert np.all(u >= build.problem.lo - 1e-9)
        assert np.all(u <= build.problem.hi + 1e-9)
        if build.problem.m:
            assert np.all(build.problem.A @ u <= build.problem.b + 1e-6)

    def test_corrupted_gap_triggers_braking_fallback(self, spec):
        lead = make_vehicle(1, s=50.0, v=10.0)
        follow = make_vehicle(2, s=52.0, v=10.0)  # overlapping: invalid
        planner = Planner(spec, lam=0.7, dt=DT)
        cs = planner.plan_cycle([lead, follow], sequence_for([lead, follow]),
                                timestamp=0.0)
        assert cs.fallback
        assert cs.commands == braking_fallback([lead, follow], DT)

    def test_empty_zone_empty_commands(self, spec):
        planner = Planner(spec, lam=0.7, dt=DT)
        cs = planner.plan_cycle([], sequence_for([]), timestamp=0.0)
        assert cs.commands == {} and cs.status is QpStatus.OPTIMAL

    def test_lateral_pairs_reported_for_retained_rows(self, spec):
        i = make_vehicle(1, arm=0, intention=1, s=40.0, v=20.0)
        j = make_vehicle(2, arm=2, intention=1, s=80.0, v=20.0)
        planner = Planner(spec, lam=0.7, dt=DT)
        cs = planner.plan_cycle([i, j], sequence_for([i, j]), timestamp=0.0)
        assert cs.lateral_pairs == ((1, 2),)

    def test_deterministic_commands(self, spec):
        vehicles = [make_vehicle(1, arm=0, intention=1, s=40.0, v=18.0),
                    make_vehicle(2, arm=2, intention=1, s=70.0, v=20.0)]
        seq = sequence_for(vehicles)
        a = Planner(spec, lam=0.7, dt=DT).plan_cycle(vehicles, seq, 0.0)
        b = Planner(spec, lam=0.7, dt=DT).plan_cycle(vehicles, seq, 0.0)
        assert a.commands == b.commands

    def test_braking_fallback_respects_acceleration_floor(self):
        slow = make_vehicle(1, v=0.3)
        cmds = braking_fallback([slow], DT)
        assert cmds[1] == 0.0
