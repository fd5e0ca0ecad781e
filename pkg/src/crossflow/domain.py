"""Core value types: vehicles, intersection geometry, scenario config, metrics."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, asdict
from typing import Optional

import yaml


class Intention(enum.IntEnum):
    RIGHT = 0
    STRAIGHT = 1
    LEFT = 2


class Phase(enum.Enum):
    APPROACHING = "approaching"
    CROSSING = "crossing"
    DEPARTED = "departed"


class Controller(str, enum.Enum):
    GAMEOPT = "gameopt"
    FIFO = "fifo"
    LIGHT = "light"


#: speed below which a vehicle counts as stalled and accrues wait_time
STALL_SPEED = 0.5


@dataclass
class VehicleState:
    """Per-vehicle state: kinematics, auction bookkeeping, and phase timers."""

    id: int
    arm: int
    lane: int
    intention: Intention
    s: float                    # distance to conflict-zone entry line [m]
    v: float                    # current speed [m/s]
    length: float = 5.0
    a_max: float = 3.0
    a_min: float = -5.0
    bid: float = 0.0            # effective bid after reward/overflow
    zeta: float = 0.0           # private priority value
    wait_time: float = 0.0
    spawn_time: float = 0.0
    phase: Phase = Phase.APPROACHING
    exit_time: Optional[float] = None   # set on entering the conflict zone
    cross_time: Optional[float] = None
    depart_time: Optional[float] = None
    crossing_speed: Optional[float] = None
    fuel: float = 0.0           # liters consumed so far

    def check_invariants(self, speed_limit: float) -> list[str]:
        """Return human-readable descriptions of any violated invariants."""
        bad = []
        if not (-1e-9 <= self.v <= speed_limit + 1e-9):
            bad.append(f"vehicle {self.id}: v={self.v} outside [0, {speed_limit}]")
        if self.bid < -1e-12:
            bad.append(f"vehicle {self.id}: negative bid {self.bid}")
        if self.length <= 0 or self.a_max <= 0 or self.a_min >= 0:
            bad.append(f"vehicle {self.id}: bad physical parameters")
        if self.phase is Phase.CROSSING and self.exit_time is None:
            bad.append(f"vehicle {self.id}: crossing without exit_time")
        return bad


@dataclass(frozen=True)
class VehicleTemplate:
    """Physical parameters stamped onto every spawned vehicle."""

    length: float = 5.0
    a_max: float = 3.0
    a_min: float = -5.0


@dataclass(frozen=True)
class IntersectionSpec:
    """Static geometry and safety margins of the four-arm intersection."""

    control_zone_length: float = 150.0
    speed_limit: float = 20.0
    lanes_per_arm: int = 3
    #: lane index -> intention served by that lane
    lane_intentions: tuple[int, ...] = (0, 1, 2)
    msr: float = 2.0            # rear-end safety margin [m]
    msl: float = 25.0           # lateral margin = conflict-zone width [m]
    #: conflict-zone path length per intention (right, straight, left) [m]
    turn_path_lengths: tuple[float, float, float] = (12.0, 25.0, 32.0)

    def path_length(self, intention: Intention | int) -> float:
        return self.turn_path_lengths[int(intention)]

    def lane_for_intention(self, intention: Intention | int) -> int:
        return self.lane_intentions.index(int(intention))


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation run: arrivals, controller choice, and tuning knobs."""

    inflow_per_arm: tuple[float, float, float, float] = (2500.0,) * 4
    intention_split: tuple[float, float, float] = (0.25, 0.5, 0.25)
    duration: float = 600.0
    dt: float = 0.1
    objective_lambda: float = 0.7   # trade-off between speed-limit and comfort terms
    c_const: Optional[float] = None  # None -> 2*L_c/v_bar + 15
    beta_wait: float = 0.05
    seed: int = 0
    controller: Controller = Controller.GAMEOPT
    green_time: float = 15.0
    clearance_time: float = 3.0
    vehicle: VehicleTemplate = field(default_factory=VehicleTemplate)
    intersection: IntersectionSpec = field(default_factory=IntersectionSpec)

    def __post_init__(self):
        object.__setattr__(self, "controller", Controller(self.controller))

    def auction_constant(self) -> float:
        if self.c_const is not None:
            return self.c_const
        spec = self.intersection
        return 2.0 * spec.control_zone_length / spec.speed_limit + 15.0


@dataclass(frozen=True)
class LatencyStats:
    mean_ms: float = 0.0
    stddev_ms: float = 0.0
    max_ms: float = 0.0


@dataclass(frozen=True)
class MetricsReport:
    """Aggregate outcome of a run."""

    throughput: float               # completed vehicles per minute
    mean_time_to_goal: float        # seconds, over completed vehicles
    total_fuel: float               # liters over all spawned vehicles
    fuel_per_vehicle: float         # liters, mean over completed vehicles
    solver_latency: LatencyStats
    safety_violations: int
    spawned: int = 0
    completed: int = 0
    fallback_cycles: int = 0


@dataclass(frozen=True)
class InvalidConfig:
    field: str
    reason: str

    def __str__(self) -> str:
        return f"{self.field}: {self.reason}"


class ConfigError(ValueError):
    """Raised by validate_config; carries the full violation list."""

    def __init__(self, violations: list[InvalidConfig]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


def config_violations(cfg: ScenarioConfig) -> list[InvalidConfig]:
    """Collect every violated invariant of ``cfg`` (empty list = valid)."""
    bad: list[InvalidConfig] = []

    if len(cfg.inflow_per_arm) != 4:
        bad.append(InvalidConfig("inflow_per_arm", "must have 4 entries"))
    elif any(r < 0 for r in cfg.inflow_per_arm):
        bad.append(InvalidConfig("inflow_per_arm", "rates must be >= 0"))

    if len(cfg.intention_split) != 3:
        bad.append(InvalidConfig("intention_split", "must have 3 entries"))
    else:
        if any(p < 0 for p in cfg.intention_split):
            bad.append(InvalidConfig("intention_split", "probabilities must be >= 0"))
        if abs(sum(cfg.intention_split) - 1.0) > 1e-9:
            bad.append(InvalidConfig("intention_split", "sum != 1"))

    if cfg.duration <= 0:
        bad.append(InvalidConfig("duration", "must be > 0"))
    if cfg.dt <= 0:
        bad.append(InvalidConfig("dt", "must be > 0"))
    if not (0.0 <= cfg.objective_lambda <= 1.0):
        bad.append(InvalidConfig("objective_lambda", "out of [0,1]"))
    if cfg.c_const is not None and cfg.c_const <= 0:
        bad.append(InvalidConfig("c_const", "must be > 0"))
    if cfg.beta_wait < 0:
        bad.append(InvalidConfig("beta_wait", "must be >= 0"))
    if cfg.green_time <= 0:
        bad.append(InvalidConfig("green_time", "must be > 0"))
    if cfg.clearance_time < 0:
        bad.append(InvalidConfig("clearance_time", "must be >= 0"))

    veh = cfg.vehicle
    if veh.length <= 0:
        bad.append(InvalidConfig("vehicle.length", "must be > 0"))
    if veh.a_max <= 0:
        bad.append(InvalidConfig("vehicle.a_max", "must be > 0"))
    if veh.a_min >= 0:
        bad.append(InvalidConfig("vehicle.a_min", "must be < 0"))

    spec = cfg.intersection
    if spec.control_zone_length <= 0:
        bad.append(InvalidConfig("intersection.control_zone_length", "must be > 0"))
    if spec.speed_limit <= 0:
        bad.append(InvalidConfig("intersection.speed_limit", "must be > 0"))
    if spec.msr <= 0:
        bad.append(InvalidConfig("intersection.msr", "must be > 0"))
    if spec.msl <= 0:
        bad.append(InvalidConfig("intersection.msl", "must be > 0"))
    if spec.lanes_per_arm < 1:
        bad.append(InvalidConfig("intersection.lanes_per_arm", "must be >= 1"))
    if len(spec.lane_intentions) != spec.lanes_per_arm:
        bad.append(InvalidConfig("intersection.lane_intentions",
                                 "length must equal lanes_per_arm"))
    elif not set(spec.lane_intentions) <= {0, 1, 2}:
        bad.append(InvalidConfig("intersection.lane_intentions",
                                 "entries must be in {0,1,2}"))
    if spec.path_length(Intention.STRAIGHT) < spec.msl:
        bad.append(InvalidConfig("intersection.turn_path_lengths",
                                 "straight path must span the zone width"))
    return bad


def validate_config(cfg: ScenarioConfig) -> ScenarioConfig:
    """Return ``cfg`` unchanged, or raise ConfigError listing every violation."""
    violations = config_violations(cfg)
    if violations:
        raise ConfigError(violations)
    return cfg


# --- config file round-trip -------------------------------------------------

def config_to_dict(cfg: ScenarioConfig) -> dict:
    d = asdict(cfg)
    d["controller"] = cfg.controller.value
    d["inflow_per_arm"] = list(cfg.inflow_per_arm)
    d["intention_split"] = list(cfg.intention_split)
    d["intersection"]["lane_intentions"] = list(cfg.intersection.lane_intentions)
    d["intersection"]["turn_path_lengths"] = list(cfg.intersection.turn_path_lengths)
    return d


def config_from_dict(d: dict) -> ScenarioConfig:
    d = dict(d)
    veh = VehicleTemplate(**d.pop("vehicle", {}))
    ispec = dict(d.pop("intersection", {}))
    if "lane_intentions" in ispec:
        ispec["lane_intentions"] = tuple(ispec["lane_intentions"])
    if "turn_path_lengths" in ispec:
        ispec["turn_path_lengths"] = tuple(ispec["turn_path_lengths"])
    spec = IntersectionSpec(**ispec)
    if "controller" in d:
        d["controller"] = Controller(d["controller"])
    if "inflow_per_arm" in d:
        d["inflow_per_arm"] = tuple(float(x) for x in d["inflow_per_arm"])
    if "intention_split" in d:
        d["intention_split"] = tuple(float(x) for x in d["intention_split"])
    return ScenarioConfig(vehicle=veh, intersection=spec, **d)


def save_config(cfg: ScenarioConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)


def load_config(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(yaml.safe_load(fh))
