"""Per-cycle velocity planning: build the QP for a priority sequence.

Decision variables are one command velocity per approaching vehicle.
The objective pulls each command toward a lambda-blend of the speed
limit and the current speed; constraints keep same-lane gaps safe,
enforce the priority sequence across conflicting lane groups, and bound
commands by the speed limit and each vehicle's acceleration envelope.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import qp
from .auction import PrioritySequence
from .conflict import LaneGroup, classify, conflicts
from .domain import IntersectionSpec, Phase, VehicleState

log = logging.getLogger(__name__)

#: extra headroom (s) added to crossing-occupancy holds
HOLD_MARGIN = 0.05


def predict_position(s: float, v: float, u: float, dt: float) -> float:
    """Trapezoidal one-step advance toward the stop line."""
    return s - dt * (v + u) / 2.0


@dataclass(frozen=True)
class ConstraintRow:
    """One inequality coeffs . u <= rhs over named vehicles."""

    vehicle_ids: tuple[int, ...]
    coeffs: tuple[float, ...]
    rhs: float
    kind: str                   # "longitudinal" | "lateral"


class InfeasibleSpacing(Exception):
    """Current same-lane gap already violates the safety distance."""

    def __init__(self, lead_id: int, follower_id: int, gap: float, needed: float):
        self.lead_id, self.follower_id = lead_id, follower_id
        self.gap, self.needed = gap, needed
        super().__init__(
            f"gap {gap:.3f} m between {lead_id} and {follower_id} < {needed:.3f} m")


def longitudinal_rows(lane: Sequence[VehicleState], spec: IntersectionSpec,
                      dt: float) -> list[ConstraintRow]:
    """Safe-gap rows for consecutive vehicles of one lane (front first).

    Row form: u_lead - u_follow >= (v_follow - v_lead)
              + (2/dt) * (s_lead - s_follow + l_lead + msr).
    Raises InfeasibleSpacing if the current gap is already unsafe.
    """
    rows = []
    for lead, follow in zip(lane, lane[1:]):
        needed = lead.length + spec.msr
        gap = follow.s - lead.s
        if gap < needed - 1e-9:
            raise InfeasibleSpacing(lead.id, follow.id, gap, needed)
        rhs = (follow.v - lead.v) + (2.0 / dt) * (lead.s - follow.s + needed)
        # rewritten as -u_lead + u_follow <= -rhs
        rows.append(ConstraintRow((lead.id, follow.id), (-1.0, 1.0), -rhs,
                                  "longitudinal"))
    return rows


def lateral_rows(q_star: PrioritySequence, lanes: dict, spec: IntersectionSpec,
                 dt: float, active: Optional[set[LaneGroup]] = None,
                 ) -> tuple[list[ConstraintRow], list[tuple[int, int]]]:
    """Sequence-compliance rows between vehicles of conflicting lanes.

    Row form, for i preceding j in the sequence:
        u_j * (s_i - dt/2 * v_i + l_i + msl) <= u_i * (s_j - dt/2 * v_j).

    For each ordered pair of conflicting lanes (A, B) the front vehicle f
    of B is paired with the boundary of A's rank prefix: the last vehicle
    of A's front-to-back prefix wholly ranked before f (f yields to it),
    and the first vehicle after that prefix (which yields to f). Deeper
    followers are chained through the longitudinal rows. A front-vs-front
    pairing alone is not enough: when the priority sequence interleaves
    two lanes, a follower of one lane may have to yield to the other
    lane's front, and pairing f against the prefix *boundary* (rather
    than whoever happens to lead A right now) keeps f's constraint
    continuous while A's queue discharges.

    When ``active`` (the cycle's admitted lane groups) is given, only
    pairs whose leader belongs to an admitted group are kept: a vehicle
    held back at the standoff is not competing for the zone, and forcing
    others to yield to it would freeze lanes that may flow in parallel
    with the admitted streams.

    Returns (rows, stop_line_holds) where holds name (j, i) pairs whose
    row coefficient degenerated because j is effectively at the stop
    line (handled by bound shaping instead of a row).
    """
    rank = q_star.rank_of()
    occupied = [(key, lane) for key, lane in lanes.items() if lane]
    pairs: set[tuple[int, int]] = set()        # (leader id, follower id)
    by_id = {v.id: v for lane in lanes.values() for v in lane}

    def admit(lead_id: int, foll_id: int) -> None:
        if active is None or classify(by_id[lead_id]) in active:
            pairs.add((lead_id, foll_id))

    for a in range(len(occupied)):
        for bidx in range(a + 1, len(occupied)):
            lane_a, lane_b = occupied[a][1], occupied[bidx][1]
            if not conflicts(classify(lane_a[0]), classify(lane_b[0])):
                continue
            for queue, other in ((lane_a, lane_b), (lane_b, lane_a)):
                f = other[0]
                k = 0
                while k < len(queue) and rank[queue[k].id] < rank[f.id]:
                    k += 1
                if k > 0:
                    admit(queue[k - 1].id, f.id)
                if k < len(queue):
                    admit(f.id, queue[k].id)

    rows: list[ConstraintRow] = []
    holds: list[tuple[int, int]] = []
    for i_id, j_id in sorted(pairs):
        i, j = by_id[i_id], by_id[j_id]
        p_i = i.s - (dt / 2.0) * i.v + i.length + spec.msl
        q_j = j.s - (dt / 2.0) * j.v
        if q_j <= 0.0:
            # j effectively at the stop line: no valid row; hold j back
            holds.append((j.id, i.id))
            continue
        rows.append(ConstraintRow((j.id, i.id), (p_i, -q_j), 0.0, "lateral"))
    return rows, holds


@dataclass
class QpBuild:
    problem: qp.QpProblem
    vehicle_ids: list[int]              # variable order
    rows: list[ConstraintRow]
    index: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self.index = {vid: k for k, vid in enumerate(self.vehicle_ids)}


def _lane_map(vehicles: Sequence[VehicleState]) -> dict:
    lanes: dict[tuple[int, int], list[VehicleState]] = {}
    for v in vehicles:
        lanes.setdefault((v.arm, v.lane), []).append(v)
    for lane in lanes.values():
        lane.sort(key=lambda v: v.s)
    return lanes


def build_qp(vehicles: Sequence[VehicleState], q_star: PrioritySequence,
             spec: IntersectionSpec, lam: float, dt: float,
             extra_hi: Optional[dict[int, float]] = None,
             active: Optional[set[LaneGroup]] = None) -> QpBuild:
    """Assemble the planning QP for all approaching vehicles.

    ``extra_hi`` maps vehicle id -> additional upper bound on its command
    (crossing-zone occupancy holds, red-light holds); ``active`` is the
    cycle's admitted-group set, forwarded to the lateral-row builder.
    """
    order = sorted(vehicles, key=lambda v: v.id)
    n = len(order)
    ids = [v.id for v in order]
    v_bar = spec.speed_limit

    h = np.full(n, 2.0)
    g = np.array([-2.0 * (lam * v_bar + (1.0 - lam) * v.v) for v in order])
    lo = np.array([max(0.0, v.v + v.a_min * dt) for v in order])
    hi = np.array([min(v_bar, v.v + v.a_max * dt) for v in order])

    lanes = _lane_map(order)
    rows: list[ConstraintRow] = []
    for lane in lanes.values():
        rows.extend(longitudinal_rows(lane, spec, dt))
    lat, stop_holds = lateral_rows(q_star, lanes, spec, dt, active)
    rows.extend(lat)

    index = {vid: k for k, vid in enumerate(ids)}
    if extra_hi:
        for vid, bound in extra_hi.items():
            if vid in index:
                k = index[vid]
                hi[k] = min(hi[k], max(bound, lo[k]))
    for vid, _blocker in stop_holds:
        k = index[vid]
        veh = order[k]
        # stop short of the line this step; brake hard if impossible
        bound = max(0.0, 2.0 * (veh.s - 0.05) / dt - veh.v)
        hi[k] = min(hi[k], max(bound, lo[k]))

    # A lateral row can be unsatisfiable inside the acceleration boxes
    # (a fresh conflicting pair at similar distance and full speed): no
    # command exists that already respects the arrival ordering. Enforce
    # the ordering at the fastest physical rate instead: drop the row and
    # put the yielding vehicle on maximum braking until it fits. The
    # satisfiability check must see the leader's *chained* maximum (its
    # own rows may cap it below hi), so effective upper bounds are
    # propagated through all rows to a fixpoint.
    rank = q_star.rank_of()
    rows.sort(key=lambda r: (0, 0) if r.kind == "longitudinal"
              else (1, rank[r.vehicle_ids[0]]))
    ub = hi.copy()
    dropped: set[int] = set()
    for _ in range(50):
        changed = False
        for ridx, row in enumerate(rows):
            if ridx in dropped:
                continue
            if row.kind == "longitudinal":
                kl, kf = index[row.vehicle_ids[0]], index[row.vehicle_ids[1]]
                cap = ub[kl] + row.rhs     # row: -u_lead + u_follow <= rhs
                if cap < ub[kf] - 1e-12:
                    ub[kf] = cap
                    changed = True
            else:
                kj, ki = index[row.vehicle_ids[0]], index[row.vehicle_ids[1]]
                p_i, neg_qj = row.coeffs
                cap = ub[ki] * (-neg_qj) / p_i
                if cap < lo[kj] - 1e-9:
                    dropped.add(ridx)
                    hi[kj] = lo[kj]
                    if ub[kj] > lo[kj]:
                        ub[kj] = lo[kj]
                    changed = True
                elif cap < ub[kj] - 1e-12:
                    ub[kj] = cap
                    changed = True
        if not changed:
            break
    rows = [row for ridx, row in enumerate(rows) if ridx not in dropped]

    A = np.zeros((len(rows), n))
    b = np.zeros(len(rows))
    for r, row in enumerate(rows):
        for vid, coef in zip(row.vehicle_ids, row.coeffs):
            A[r, index[vid]] = coef
        b[r] = row.rhs

    problem = qp.QpProblem(h=h, g=g, A=A, b=b, lo=lo, hi=hi)
    return QpBuild(problem=problem, vehicle_ids=ids, rows=rows)


@dataclass(frozen=True)
class CommandSet:
    """Command velocity per approaching vehicle for one cycle."""

    commands: dict[int, float]
    timestamp: float
    status: qp.QpStatus
    fallback: bool
    latency_s: float
    n_rows: int
    iterations: int = 0
    #: (leader id, follower id) per retained sequence-compliance row
    lateral_pairs: tuple[tuple[int, int], ...] = ()

    def __len__(self) -> int:
        return len(self.commands)


def braking_fallback(vehicles: Sequence[VehicleState],
                     dt: float) -> dict[int, float]:
    """Maximum braking for everyone: always inside the acceleration box."""
    return {v.id: max(0.0, v.v + v.a_min * dt) for v in vehicles}


class Planner:
    """Stateful wrapper holding the warm start between cycles."""

    def __init__(self, spec: IntersectionSpec, lam: float, dt: float,
                 tol: float = 1e-6):
        self.spec = spec
        self.lam = lam
        self.dt = dt
        self.tol = tol
        self._last_u: dict[int, float] = {}

    def plan_cycle(self, vehicles: Sequence[VehicleState],
                   q_star: PrioritySequence, timestamp: float,
                   extra_hi: Optional[dict[int, float]] = None,
                   active: Optional[set[LaneGroup]] = None) -> CommandSet:
        """Solve the cycle's QP; on any failure emit the braking fallback."""
        t0 = time.perf_counter()
        if not vehicles:
            return CommandSet({}, timestamp, qp.QpStatus.OPTIMAL, False,
                              time.perf_counter() - t0, 0)
        try:
            build = build_qp(vehicles, q_star, self.spec, self.lam, self.dt,
                             extra_hi, active)
        except InfeasibleSpacing as exc:
            log.warning("cycle %.1f: %s; braking fallback", timestamp, exc)
            self._last_u = {}
            cmds = braking_fallback(vehicles, self.dt)
            return CommandSet(cmds, timestamp, qp.QpStatus.INFEASIBLE, True,
                              time.perf_counter() - t0, 0)

        warm = None
        if self._last_u:
            x0 = np.array([
                self._last_u.get(vid, np.clip(-build.problem.g[k] / 2.0,
                                              build.problem.lo[k],
                                              build.problem.hi[k]))
                for k, vid in enumerate(build.vehicle_ids)])
            warm = qp.WarmStart(x=x0)

        sol = qp.solve(build.problem, tol=self.tol, warm=warm)
        latency = time.perf_counter() - t0

        if sol.status is qp.QpStatus.OPTIMAL:
            x = np.clip(sol.x, build.problem.lo, build.problem.hi)
            cmds = {vid: float(x[k])
                    for k, vid in enumerate(build.vehicle_ids)}
            self._last_u = cmds
            pairs = tuple((r.vehicle_ids[1], r.vehicle_ids[0])
                          for r in build.rows if r.kind == "lateral")
            return CommandSet(cmds, timestamp, sol.status, False, latency,
                              build.problem.m, sol.iterations, pairs)

        log.warning("cycle %.1f: QP %s; braking fallback", timestamp,
                    sol.status.value)
        self._last_u = {}
        cmds = braking_fallback(vehicles, self.dt)
        return CommandSet(cmds, timestamp, sol.status, True, latency,
                          build.problem.m, sol.iterations)
