"""Trajectory lane-groups and the pairwise conflict relation.

Vehicles are classified by (arm, intention) into groups labeled "x-y".
Which groups may share the conflict zone is stored as a static table;
right-turn groups (y=0) never conflict with anything.
"""

from __future__ import annotations

from dataclasses import dataclass

from .domain import Intention, VehicleState

ARMS = (0, 1, 2, 3)


@dataclass(frozen=True, order=True)
class LaneGroup:
    arm: int
    intention: Intention

    def __post_init__(self):
        if self.arm not in ARMS:
            raise ValueError(f"arm {self.arm} not in 0..3")
        object.__setattr__(self, "intention", Intention(self.intention))

    def __str__(self) -> str:
        return f"{self.arm}-{int(self.intention)}"

    @classmethod
    def parse(cls, label: str) -> "LaneGroup":
        arm, intention = label.split("-")
        return cls(int(arm), Intention(int(intention)))


ALL_GROUPS: tuple[LaneGroup, ...] = tuple(
    LaneGroup(arm, Intention(y)) for arm in ARMS for y in (0, 1, 2)
)

RIGHT_TURN_GROUPS: frozenset[LaneGroup] = frozenset(
    g for g in ALL_GROUPS if g.intention is Intention.RIGHT
)

# Normative non-conflict rows for the eight straight/left groups.
# Arm layout: 0 and 1 are the opposing north-south pair, 2 and 3 the
# opposing east-west pair (right-hand traffic).
_TABLE_ROWS: dict[str, tuple[str, str, str]] = {
    "0-1": ("0-2", "1-1", "2-2"),
    "0-2": ("0-1", "1-2", "3-1"),
    "1-1": ("0-1", "1-2", "3-2"),
    "1-2": ("0-2", "1-1", "2-1"),
    "2-1": ("1-2", "2-2", "3-1"),
    "2-2": ("0-1", "2-1", "3-2"),
    "3-1": ("0-2", "2-1", "3-2"),
    "3-2": ("1-1", "2-2", "3-1"),
}

NON_CONFLICT_TABLE: dict[LaneGroup, frozenset[LaneGroup]] = {
    LaneGroup.parse(k): frozenset(LaneGroup.parse(v) for v in row)
    for k, row in _TABLE_ROWS.items()
}


def classify(vehicle: VehicleState) -> LaneGroup:
    """Group of a vehicle: its origin arm and turn intention."""
    return LaneGroup(vehicle.arm, Intention(vehicle.intention))


def non_conflict_set(g: LaneGroup) -> frozenset[LaneGroup]:
    """Groups allowed in the conflict zone at the same time as ``g``.

    Right-turn groups are compatible with everything; for the rest the
    static table row is extended with all four right-turn groups.
    """
    if g.intention is Intention.RIGHT:
        return frozenset(o for o in ALL_GROUPS if o != g)
    return NON_CONFLICT_TABLE[g] | RIGHT_TURN_GROUPS


def conflicts(g1: LaneGroup, g2: LaneGroup) -> bool:
    """True iff the two groups may not share the conflict zone.

    Same-group pairs are non-conflicting by convention: followers in one
    lane are ordered by the longitudinal constraints instead.
    """
    if g1 == g2:
        return False
    return g2 not in non_conflict_set(g1)


def format_table() -> str:
    """Render the non-conflict table (right-turn rows included) for audit."""
    lines = ["group | non-conflicting groups"]
    for g in ALL_GROUPS:
        others = sorted(non_conflict_set(g))
        lines.append(f"{str(g):5} | {', '.join(str(o) for o in others)}")
    return "\n".join(lines)
