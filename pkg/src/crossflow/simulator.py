"""Discrete-time intersection kernel: spawning, stepping, controllers, audits.

One simulation is a single-threaded deterministic loop; randomness enters
only through per-arm Poisson spawning from one seeded generator consumed
in fixed arm order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import auction, qp
from .auction import BidInput, LaneEntry, PrioritySequence
from .conflict import LaneGroup, classify, conflicts, non_conflict_set, ALL_GROUPS
from .domain import (Controller, Intention, MetricsReport, LatencyStats, Phase,
                     ScenarioConfig, STALL_SPEED, VehicleState)
from .planner import Planner, CommandSet, braking_fallback

log = logging.getLogger(__name__)

#: slack (m) kept between the braking envelope and the hard gap limit
ENVELOPE_BUFFER = 0.2
#: seconds added to crossing-occupancy holds
HOLD_MARGIN = 0.05
#: held vehicles stop this far (m) before the line, so a released front
#: accelerates over the standoff and enters the zone at useful speed
#: instead of creeping across (crossing speed is fixed at entry speed)
STANDOFF = 8.0
#: hold bounds below this pace (m/s) become a full stop: pacing slower
#: than this would cross the line at a crawl and clog the zone
CREEP_MIN = 3.0
#: distance inside which a vehicle's bid counts toward its lane's
#: admission claim [m]
CLAIM_HORIZON = 80.0

GAP_AUDIT_TOL = 0.01          # m
EQ_GAP_TOL = 1e-6             # m, linearization-fidelity audit
SEQ_EPS = 0.05                # s, sequence-compliance audit
SEQ_MIN_SPEED = 0.5           # m/s


class SafetyViolation(RuntimeError):
    pass


def fuel_step(v: float, a: float, dt: float) -> float:
    """Liters consumed over dt: idle floor vs. drag + acceleration power."""
    rate = max(1.67e-4, 1.2e-5 * v + 2.0e-7 * v ** 3 + 1.1e-4 * max(a, 0.0) * v)
    return rate * dt


# --------------------------------------------------------------------------
# traffic-light phase table

@dataclass(frozen=True)
class LightPhase:
    permitted: frozenset[LaneGroup]
    green: float
    clearance: float


@dataclass(frozen=True)
class TrafficLightPhaseTable:
    phases: tuple[LightPhase, ...]

    def __post_init__(self):
        for ph in self.phases:
            groups = sorted(ph.permitted)
            for a in range(len(groups)):
                for b in range(a + 1, len(groups)):
                    if conflicts(groups[a], groups[b]):
                        raise ValueError(
                            f"phase permits conflicting groups "
                            f"{groups[a]} and {groups[b]}")

    def cycle_length(self) -> float:
        return sum(p.green + p.clearance for p in self.phases)

    def active(self, t: float) -> tuple[Optional[LightPhase], bool]:
        """(phase, is_green) at simulation time t; clearance -> green False."""
        t = t % self.cycle_length()
        for ph in self.phases:
            if t < ph.green:
                return ph, True
            t -= ph.green
            if t < ph.clearance:
                return ph, False
            t -= ph.clearance
        return self.phases[-1], False


def default_phase_table(green: float, clearance: float) -> TrafficLightPhaseTable:
    """One phase per arm: its own groups, every right turn, plus any other
    straight group compatible with all of them (none for this layout)."""
    rights = {g for g in ALL_GROUPS if g.intention is Intention.RIGHT}
    phases = []
    for arm in range(4):
        members = {g for g in ALL_GROUPS if g.arm == arm} | rights
        for cand in ALL_GROUPS:
            if cand.intention is Intention.STRAIGHT and cand.arm != arm:
                if all(not conflicts(cand, m) for m in members):
                    members.add(cand)
        phases.append(LightPhase(frozenset(members), green, clearance))
    return TrafficLightPhaseTable(tuple(phases))


# --------------------------------------------------------------------------
# simulation state

@dataclass
class CycleRecord:
    time: float
    n_in_zone: int
    n_rows: int
    status: str
    latency_us: float
    fallback: bool


@dataclass
class SimState:
    cfg: ScenarioConfig
    clock: float = 0.0
    rng: np.random.Generator = None  # type: ignore[assignment]
    vehicles: dict[int, VehicleState] = field(default_factory=dict)
    spawn_queues: dict[tuple[int, int], list[VehicleState]] = field(default_factory=dict)
    next_id: int = 0
    spawned: int = 0
    generated: int = 0
    departed: int = 0
    safety_violations: list[str] = field(default_factory=list)
    eq9_failures: int = 0
    seq_failures: int = 0
    optimal_cycles: int = 0
    fallback_cycles: int = 0

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.cfg.seed)
        spec = self.cfg.intersection
        for arm in range(4):
            for lane in range(spec.lanes_per_arm):
                self.spawn_queues[(arm, lane)] = []

    def approaching(self) -> list[VehicleState]:
        return [v for v in self.vehicles.values() if v.phase is Phase.APPROACHING]

    def crossing(self) -> list[VehicleState]:
        return [v for v in self.vehicles.values() if v.phase is Phase.CROSSING]

    def lanes(self) -> dict[tuple[int, int], list[VehicleState]]:
        lanes: dict[tuple[int, int], list[VehicleState]] = {}
        for v in self.vehicles.values():
            if v.phase is Phase.APPROACHING:
                lanes.setdefault((v.arm, v.lane), []).append(v)
        for lane in lanes.values():
            lane.sort(key=lambda v: v.s)
        return lanes


# --------------------------------------------------------------------------
# spawning

def _entry_gap_needed(rear: VehicleState, v_entry: float, a_brake: float,
                      msr: float) -> float:
    """Gap keeping a fresh follower at v_entry brake-safe behind ``rear``."""
    return (rear.length + msr + ENVELOPE_BUFFER
            + max(0.0, v_entry ** 2 - rear.v ** 2) / (2.0 * a_brake))


def spawn_step(state: SimState) -> list[VehicleState]:
    """Poisson generation plus queue release, in fixed arm order 0..3."""
    cfg = state.cfg
    spec = cfg.intersection
    dt = cfg.dt
    for arm in range(4):
        rate_per_s = cfg.inflow_per_arm[arm] / 3600.0
        count = int(state.rng.poisson(rate_per_s * dt))
        for _ in range(count):
            intention = int(state.rng.choice(3, p=list(cfg.intention_split)))
            lane = spec.lane_for_intention(intention)
            veh = VehicleState(
                id=state.next_id, arm=arm, lane=lane,
                intention=Intention(intention),
                s=spec.control_zone_length, v=spec.speed_limit,
                length=cfg.vehicle.length, a_max=cfg.vehicle.a_max,
                a_min=cfg.vehicle.a_min)
            state.next_id += 1
            state.generated += 1
            state.spawn_queues[(arm, lane)].append(veh)

    lanes = state.lanes()
    entered = []
    for arm in range(4):
        for lane_idx in range(spec.lanes_per_arm):
            queue = state.spawn_queues[(arm, lane_idx)]
            # vehicles denied entry idle upstream of the control zone;
            # their fuel meter runs from generation, not from entry
            for veh in queue:
                veh.fuel += fuel_step(0.0, 0.0, dt)
            while queue:
                occupants = lanes.get((arm, lane_idx), [])
                if occupants:
                    rear = occupants[-1]
                    gap = spec.control_zone_length - rear.s
                    needed = _entry_gap_needed(rear, spec.speed_limit,
                                               abs(queue[0].a_min), spec.msr)
                    if gap < needed:
                        break
                veh = queue.pop(0)
                veh.spawn_time = state.clock
                state.vehicles[veh.id] = veh
                state.spawned += 1
                lanes.setdefault((arm, lane_idx), []).append(veh)
                entered.append(veh)
    return entered


# --------------------------------------------------------------------------
# hold computation (upper-bound shaping fed into the planner)

def earliest_arrival(s: float, v: float, a_max: float, v_bar: float) -> float:
    """Soonest the stop line can be reached under full acceleration."""
    d_acc = (v_bar * v_bar - v * v) / (2.0 * a_max)
    if d_acc >= s:
        return (math.sqrt(v * v + 2.0 * a_max * s) - v) / a_max
    return (v_bar - v) / a_max + (s - d_acc) / v_bar


def crossing_holds(state: SimState) -> dict[int, float]:
    """Bounds keeping lane fronts out of the conflict zone until every
    conflicting crossing vehicle has left it.

    Per blocker, the laxest safe regime applies: no hold at all if even
    full acceleration cannot reach the line before the blocker exits
    (letting queued fronts launch early and enter at speed), otherwise
    the larger of a timed-arrival pace (s / remaining, sustainable since
    remaining counts down 1:1 with time) and the stop-at-standoff
    envelope.
    """
    holds: dict[int, float] = {}
    crossers = state.crossing()
    if not crossers:
        return holds
    v_bar = state.cfg.intersection.speed_limit
    dt = state.cfg.dt
    for lane in state.lanes().values():
        front = lane[0]
        g = classify(front)
        for c in crossers:
            if not conflicts(g, classify(c)):
                continue
            remaining = c.exit_time - state.clock
            if remaining <= 0:
                continue
            if earliest_arrival(front.s, front.v, front.a_max,
                                v_bar) >= remaining + HOLD_MARGIN:
                continue
            timed = front.s / (remaining + HOLD_MARGIN)
            bound = max(timed, standoff_bound(front.s, front.v,
                                              abs(front.a_min), dt))
            if bound < CREEP_MIN:
                # crawling to the line would mean entering the zone at a
                # crawl and occupying it far too long; wait in place and
                # rely on the early-release branch above instead
                bound = 0.0
            holds[front.id] = min(holds.get(front.id, math.inf), bound)
    return holds


@dataclass(frozen=True)
class Admission:
    """Per-cycle arbitration of which lane groups may approach the line.

    ``rank_claims`` are the groups whose priority entitles them to the
    zone: a lane claims through its best-ranked member, and a group is
    blocked by *any* conflicting group with a better claim whether or
    not that group can use the zone yet (head-of-line semantics, so an
    arrival-ordered sequence serializes behind its oldest waiters while
    a sequence that ranks flowing compatible lanes together sustains
    parallel streams). ``claims`` additionally keeps groups with a
    vehicle physically past the point of stopping at the standoff:
    their overrun must finish — still blocking rivals — even after the
    priority claim has moved on, while the group's stoppable tail is
    tapered off by holds.
    """

    rank_claims: frozenset[LaneGroup]
    claims: frozenset[LaneGroup]


def committed_groups(state: SimState) -> set[LaneGroup]:
    """Groups with a vehicle that can no longer stop at the standoff."""
    out: set[LaneGroup] = set()
    for v in state.approaching():
        if v.v * v.v > 2.0 * abs(v.a_min) * max(0.0, v.s - STANDOFF) + 1e-9:
            out.add(classify(v))
    return out


def admit(state: SimState, q_star: PrioritySequence) -> Admission:
    committed = committed_groups(state)
    rank = q_star.rank_of()
    claim_rank: dict[LaneGroup, int] = {}
    for lane in state.lanes().values():
        # a lane claims through its best-ranked vehicle inside the
        # arbitration horizon: fresh arrivals far upstream do not bid
        # for immediate zone access (if nobody is inside the horizon
        # yet, the whole lane stands in)
        g = classify(lane[0])
        near = [v for v in lane if v.s <= CLAIM_HORIZON] or lane
        best = min(rank[v.id] for v in near)
        claim_rank[g] = min(best, claim_rank.get(g, best))
    ordered = sorted(claim_rank, key=lambda g: claim_rank[g])
    rank_claims: set[LaneGroup] = set()
    for i, g in enumerate(ordered):
        if any(conflicts(g, g2) for g2 in committed):
            continue
        if not any(conflicts(g, g2) for g2 in ordered[:i]):
            rank_claims.add(g)
    return Admission(frozenset(rank_claims),
                     frozenset(rank_claims | committed))


def admission_holds(state: SimState, rank_claims: frozenset[LaneGroup],
                    ) -> dict[int, float]:
    """Standoff holds for every still-stoppable vehicle of groups
    without a priority claim, so a stream whose claim has moved on
    tapers off while its committed overrun finishes."""
    holds: dict[int, float] = {}
    dt = state.cfg.dt
    for lane in state.lanes().values():
        if classify(lane[0]) in rank_claims:
            continue
        for v in lane:
            brake = abs(v.a_min)
            if v.v * v.v <= 2.0 * brake * max(0.0, v.s - STANDOFF) + 1e-9:
                holds[v.id] = standoff_bound(v.s, v.v, brake, dt)
    return holds


def envelope_holds(state: SimState) -> dict[int, float]:
    """Brake-safe following bounds for every vehicle behind another.

    The one-step gap rows keep the *next* gap legal but cannot guarantee a
    follower can keep stopping behind a lead that brakes to a stand-still;
    this envelope preserves exactly that capability under synchronized
    worst-case braking with the trapezoidal position update.
    """
    holds: dict[int, float] = {}
    spec = state.cfg.intersection
    dt = state.cfg.dt
    for lane in state.lanes().values():
        for lead, follow in zip(lane, lane[1:]):
            a = abs(follow.a_min)
            gap_free = (follow.s - lead.s) - lead.length - spec.msr - ENVELOPE_BUFFER
            w = max(0.0, lead.v - abs(lead.a_min) * dt)
            rhs = (w * w + 2.0 * a * gap_free
                   - a * dt * (2.0 * follow.v + follow.a_max * dt)
                   + a * dt * (lead.v + w))
            bound = math.sqrt(rhs) if rhs > 0.0 else 0.0
            holds[follow.id] = min(holds.get(follow.id, math.inf), bound)
    return holds


def standoff_bound(s: float, v: float, a_brake: float, dt: float) -> float:
    """Largest command after which the vehicle can still stop at the
    standoff point under maximum braking.

    One-step consistent with the trapezoidal update: the returned u
    satisfies u^2 <= 2 a (s' - STANDOFF) at the *next* position
    s' = s - dt (v + u) / 2, so tracking the bound never drifts past
    the braking envelope the way sqrt(2 a (s - STANDOFF)) would.
    """
    c = 2.0 * a_brake * (s - dt * v / 2.0 - STANDOFF)
    if c <= 0.0:
        return 0.0
    disc = (a_brake * dt) ** 2 + 4.0 * c
    return max(0.0, (-a_brake * dt + math.sqrt(disc)) / 2.0)


def merge_holds(*hold_maps: dict[int, float]) -> dict[int, float]:
    merged: dict[int, float] = {}
    for holds in hold_maps:
        for vid, bound in holds.items():
            merged[vid] = min(merged.get(vid, math.inf), bound)
    return merged


# --------------------------------------------------------------------------
# controllers

@dataclass
class BidRecord:
    time: float
    vehicle_id: int
    zeta: float
    reward: float
    bid: float
    rank: int


class BaseController:
    name = "base"

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.planner = Planner(cfg.intersection, cfg.objective_lambda, cfg.dt)
        self.bid_log: list[BidRecord] = []
        self.collect_bids = False

    def sequence(self, state: SimState) -> PrioritySequence:
        raise NotImplementedError

    def extra_holds(self, state: SimState) -> dict[int, float]:
        return {}

    def admitted(self, state: SimState,
                 q_star: PrioritySequence) -> Optional[Admission]:
        return admit(state, q_star)

    def plan(self, state: SimState) -> CommandSet:
        vehicles = state.approaching()
        q_star = self.sequence(state)
        admission = self.admitted(state, q_star)
        holds = merge_holds(crossing_holds(state), envelope_holds(state),
                            self.extra_holds(state))
        active = None
        if admission is not None:
            holds = merge_holds(
                holds, admission_holds(state, admission.rank_claims))
            active = set(admission.claims)
        cmds = self.planner.plan_cycle(vehicles, q_star, state.clock, holds,
                                       active)
        if self.collect_bids:
            for entry in q_star.entries:
                veh = state.vehicles[entry.vehicle_id]
                self.bid_log.append(BidRecord(
                    state.clock, veh.id, veh.zeta,
                    1.0 + self.cfg.beta_wait * veh.wait_time,
                    entry.bid, entry.rank))
        return cmds


class GameOptController(BaseController):
    """Auction pipeline: priority value, waiting reward, overflow, sort."""

    name = "gameopt"

    def sequence(self, state: SimState) -> PrioritySequence:
        c = self.cfg.auction_constant()
        beta = self.cfg.beta_wait
        vehicles = state.approaching()
        for v in vehicles:
            v.zeta = auction.priority_value(
                v.s, auction.time_to_reach(v.s, v.v), c)
            v.bid = auction.waiting_reward(v.zeta, v.wait_time, beta)
        lanes = state.lanes()
        lane_entries = [[LaneEntry(v.id, v.bid) for v in lane]
                        for lane in lanes.values()]
        n = len(vehicles)
        if n:
            adjusted = auction.apply_overflow(
                lane_entries, auction.default_item_values(n))
            for v in vehicles:
                v.bid = adjusted[v.id]
        return auction.build_sequence(
            [BidInput(v.id, v.bid, v.spawn_time) for v in vehicles])


class FifoController(BaseController):
    """Earlier control-zone entry wins; same planner downstream."""

    name = "fifo"

    def sequence(self, state: SimState) -> PrioritySequence:
        vehicles = state.approaching()
        for v in vehicles:
            # positive, strictly decreasing in spawn time
            v.zeta = v.bid = 1.0 / (1.0 + v.spawn_time)
        return auction.build_sequence(
            [BidInput(v.id, v.bid, v.spawn_time) for v in vehicles])


class TrafficLightController(FifoController):
    """Fixed-time phases implemented as stop-line holds over the FIFO plan."""

    name = "light"

    def __init__(self, cfg: ScenarioConfig,
                 table: Optional[TrafficLightPhaseTable] = None):
        super().__init__(cfg)
        self.table = table or default_phase_table(cfg.green_time,
                                                  cfg.clearance_time)

    def admitted(self, state: SimState,
                 q_star: PrioritySequence) -> Optional[Admission]:
        return None     # the phase table already gates conflicting groups

    def extra_holds(self, state: SimState) -> dict[int, float]:
        phase, is_green = self.table.active(state.clock)
        permitted = phase.permitted if is_green else frozenset()
        holds: dict[int, float] = {}
        dt = state.cfg.dt
        for lane in state.lanes().values():
            front = lane[0]
            if classify(front) in permitted:
                continue
            holds[front.id] = standoff_bound(front.s, front.v,
                                             abs(front.a_min), dt)
        return holds


def make_controller(cfg: ScenarioConfig) -> BaseController:
    if cfg.controller is Controller.GAMEOPT:
        return GameOptController(cfg)
    if cfg.controller is Controller.FIFO:
        return FifoController(cfg)
    return TrafficLightController(cfg)


# --------------------------------------------------------------------------
# stepping and audits

def step(state: SimState, commands: CommandSet) -> None:
    """Advance one control period using the cycle's command velocities."""
    cfg = state.cfg
    spec = cfg.intersection
    dt = cfg.dt
    t_new = round(state.clock + dt, 9)

    # departures first so a successor may enter the zone this same step
    for v in state.crossing():
        if v.exit_time <= t_new:
            v.phase = Phase.DEPARTED
            v.depart_time = v.exit_time
            state.departed += 1
        else:
            v.fuel += fuel_step(v.crossing_speed, 0.0, dt)

    for v in state.approaching():
        u = commands.commands.get(v.id)
        if u is None:
            raise SafetyViolation(f"no command for approaching vehicle {v.id}")
        lo = max(0.0, v.v + v.a_min * dt)
        hi = min(spec.speed_limit, v.v + v.a_max * dt)
        if not (lo - 1e-9 <= u <= hi + 1e-9):
            raise SafetyViolation(
                f"command {u:.6f} for vehicle {v.id} outside [{lo:.6f}, {hi:.6f}]")
        a = (u - v.v) / dt
        v.fuel += fuel_step(v.v, a, dt)
        v.s = v.s - dt * (v.v + u) / 2.0
        v.v = u
        if v.v < STALL_SPEED:
            v.wait_time += dt
        if v.s <= 0.0:
            v.phase = Phase.CROSSING
            v.cross_time = t_new
            v.crossing_speed = max(v.v, 1.0)
            path = spec.path_length(v.intention) + v.s  # s <= 0: overshoot
            v.exit_time = t_new + max(path, 0.0) / v.crossing_speed

    state.clock = t_new
    _audit(state)


def _audit(state: SimState) -> None:
    spec = state.cfg.intersection
    for lane in state.lanes().values():
        for lead, follow in zip(lane, lane[1:]):
            gap = follow.s - lead.s
            if gap < lead.length + spec.msr - GAP_AUDIT_TOL:
                state.safety_violations.append(
                    f"t={state.clock:.1f}: gap {gap:.3f} m between "
                    f"{lead.id} and {follow.id}")
    crossers = state.crossing()
    for a in range(len(crossers)):
        for b in range(a + 1, len(crossers)):
            if conflicts(classify(crossers[a]), classify(crossers[b])):
                state.safety_violations.append(
                    f"t={state.clock:.1f}: conflicting groups "
                    f"{classify(crossers[a])}/{classify(crossers[b])} "
                    f"co-occupy the conflict zone "
                    f"({crossers[a].id}, {crossers[b].id})")
    total = state.spawned + len(
        [v for q in state.spawn_queues.values() for v in q])
    if total != state.generated:
        state.safety_violations.append(
            f"t={state.clock:.1f}: flow conservation broken")


def _fidelity_audit(state: SimState, commands: CommandSet,
                    vehicles: list[VehicleState]) -> None:
    """Linearization fidelity on optimal cycles: exact next-step gaps and
    sequence-compliance timing between lateral-row pairs."""
    spec = state.cfg.intersection
    dt = state.cfg.dt
    cmds = commands.commands
    lanes: dict[tuple[int, int], list[VehicleState]] = {}
    for v in vehicles:
        lanes.setdefault((v.arm, v.lane), []).append(v)
    pred = {}
    for v in vehicles:
        pred[v.id] = v.s - dt * (v.v + cmds[v.id]) / 2.0
    for lane in lanes.values():
        lane.sort(key=lambda v: v.s)
        for lead, follow in zip(lane, lane[1:]):
            if pred[follow.id] - pred[lead.id] < lead.length + spec.msr - EQ_GAP_TOL:
                state.eq9_failures += 1
    by_id = {v.id: v for v in vehicles}
    for i_id, j_id in commands.lateral_pairs:
        i, j = by_id[i_id], by_id[j_id]
        u_i, u_j = cmds[i_id], cmds[j_id]
        if u_i <= SEQ_MIN_SPEED or u_j <= SEQ_MIN_SPEED:
            continue
        if pred[j_id] <= 0 or pred[i_id] <= 0:
            continue
        t_i = pred[i_id] / u_i + (i.length + spec.msl) / u_i
        t_j = pred[j_id] / u_j
        if t_i > t_j + SEQ_EPS:
            state.seq_failures += 1


# --------------------------------------------------------------------------
# run loop

@dataclass
class RunResult:
    metrics: MetricsReport
    vehicle_rows: list[dict]
    cycle_rows: list[CycleRecord]
    bid_rows: list[BidRecord]
    state: SimState
    qp_dump: Optional[str] = None


def run(cfg: ScenarioConfig, collect_bids: bool = False,
        fail_fast: bool = True,
        qp_dump_cycle: Optional[int] = None) -> RunResult:
    """Execute a full scenario; deterministic per (config, seed)."""
    from .domain import validate_config
    validate_config(cfg)
    state = SimState(cfg=cfg)
    controller = make_controller(cfg)
    controller.collect_bids = collect_bids
    cycles = int(round(cfg.duration / cfg.dt))
    cycle_rows: list[CycleRecord] = []
    latencies: list[float] = []
    qp_dump = None

    for k in range(cycles):
        spawn_step(state)
        commands = controller.plan(state)
        approaching = state.approaching()
        if commands.status is qp.QpStatus.OPTIMAL and not commands.fallback:
            state.optimal_cycles += 1
            _fidelity_audit(state, commands, approaching)
        else:
            state.fallback_cycles += 1
        if qp_dump_cycle is not None and k == qp_dump_cycle:
            qp_dump = _dump_qp_text(state, controller)
        step(state, commands)
        latencies.append(commands.latency_s)
        cycle_rows.append(CycleRecord(
            time=state.clock, n_in_zone=len(approaching),
            n_rows=commands.n_rows, status=commands.status.value,
            latency_us=commands.latency_s * 1e6, fallback=commands.fallback))
        if fail_fast and state.safety_violations:
            raise SafetyViolation("; ".join(state.safety_violations[:5]))

    metrics = _finalize_metrics(state, latencies)
    vehicle_rows = [
        {"id": v.id, "arm": v.arm, "lane": v.lane,
         "intention": int(v.intention), "spawn_time": v.spawn_time,
         "cross_time": v.cross_time, "depart_time": v.depart_time,
         "fuel": v.fuel}
        for v in sorted(state.vehicles.values(), key=lambda v: v.id)]
    return RunResult(metrics, vehicle_rows, cycle_rows,
                     controller.bid_log, state, qp_dump)


def _finalize_metrics(state: SimState, latencies: list[float]) -> MetricsReport:
    cfg = state.cfg
    done = [v for v in state.vehicles.values() if v.phase is Phase.DEPARTED]
    ttg = [v.depart_time - v.spawn_time for v in done]
    lat = np.array(latencies) * 1e3 if latencies else np.zeros(1)
    # network-level fuel: everything burned by the generated demand,
    # including vehicles still idling upstream of the control zone
    total_fuel = (sum(v.fuel for v in state.vehicles.values())
                  + sum(v.fuel for q in state.spawn_queues.values()
                        for v in q))
    return MetricsReport(
        throughput=len(done) / (cfg.duration / 60.0),
        mean_time_to_goal=float(np.mean(ttg)) if ttg else 0.0,
        total_fuel=total_fuel,
        # fuel efficiency of the control policy: fuel per served crossing
        fuel_per_vehicle=total_fuel / len(done) if done else 0.0,
        solver_latency=LatencyStats(float(np.mean(lat)), float(np.std(lat)),
                                    float(np.max(lat))),
        safety_violations=len(state.safety_violations),
        spawned=state.spawned,
        completed=len(done),
        fallback_cycles=state.fallback_cycles,
    )


def _dump_qp_text(state: SimState, controller: BaseController) -> str:
    """Self-describing text dump of the cycle's QP for external validation."""
    from .planner import build_qp
    vehicles = state.approaching()
    if not vehicles:
        return "# empty control zone\n"
    q_star = controller.sequence(state)
    admission = controller.admitted(state, q_star)
    holds = merge_holds(crossing_holds(state), envelope_holds(state),
                        controller.extra_holds(state))
    active = None
    if admission is not None:
        holds = merge_holds(holds, admission_holds(state, admission.rank_claims))
        active = set(admission.claims)
    build = build_qp(vehicles, q_star, state.cfg.intersection,
                     state.cfg.objective_lambda, state.cfg.dt, holds,
                     active=active)
    p = build.problem
    lines = [f"# QP dump at t={state.clock:.3f}", f"n {p.n}", f"m {p.m}",
             "vars " + " ".join(str(v) for v in build.vehicle_ids)]
    for name, arr in (("h", p.h), ("g", p.g), ("b", p.b),
                      ("lo", p.lo), ("hi", p.hi)):
        lines.append(name + " " + " ".join(repr(x) for x in arr))
    for row in p.A:
        lines.append("A " + " ".join(repr(x) for x in row))
    return "\n".join(lines) + "\n"
