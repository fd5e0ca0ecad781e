"""Sponsored-search auction: priority values, bid shaping, and the sequence.

The pipeline each control cycle is
    priority_value -> waiting_reward -> apply_overflow -> build_sequence.
Utility and welfare are exposed separately so the incentive-compatibility
and welfare-maximization properties can be brute-force checked.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

#: speed floor used when estimating arrival time of a (nearly) stopped vehicle
V_FLOOR = 0.1

#: fraction of the overflow bound actually transferred
OVERFLOW_KAPPA = 0.5


class DegenerateBound(ValueError):
    """Overflow bound is non-positive: no incentive-safe transfer exists."""


@dataclass(frozen=True)
class RankedBid:
    vehicle_id: int
    bid: float
    rank: int           # 1 = highest bid


@dataclass(frozen=True)
class PrioritySequence:
    """Total priority order over control-zone vehicles (rank 1 first)."""

    entries: tuple[RankedBid, ...]

    def order(self) -> list[int]:
        return [e.vehicle_id for e in self.entries]

    def rank_of(self) -> dict[int, int]:
        return {e.vehicle_id: e.rank for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)


def default_item_values(n: int) -> np.ndarray:
    """Turn values alpha_j = 1/j: strictly decreasing and positive."""
    if n < 1:
        raise ValueError("need at least one item")
    return 1.0 / np.arange(1, n + 1)


def validate_item_values(alphas: Sequence[float]) -> np.ndarray:
    a = np.asarray(alphas, dtype=float)
    if a.ndim != 1 or len(a) < 1:
        raise ValueError("item values must be a non-empty vector")
    if a[-1] <= 0 or np.any(np.diff(a) >= 0):
        raise ValueError("item values must be strictly decreasing and positive")
    return a


def time_to_reach(s: float, v: float) -> float:
    """Estimated seconds until the stop line at current speed (floored)."""
    return s / max(v, V_FLOOR)


def priority_value(s: float, tau: float, c: float) -> float:
    """Priority zeta = s * (c - tau); clamped to 0 when tau >= c."""
    if tau >= c:
        if s > 0:
            log.debug("priority clamp: tau=%.2f >= c=%.2f (s=%.1f)", tau, c, s)
        return 0.0
    return s * (c - tau)


def waiting_reward(zeta: float, wait_time: float, beta: float) -> float:
    """Multiplicative queue reward: zeta * (1 + beta * wait_time)."""
    return (1.0 + beta * wait_time) * zeta


def overflow_bound(i_rank: int, j_rank: int,
                   zetas: Sequence[float], alphas: Sequence[float]) -> float:
    """Largest incentive-safe transfer from rank ``i_rank`` to ``j_rank``.

    Ranks are 0-based positions in the current bid-sorted order, with
    ``i_rank < j_rank`` (the transferring agent ranks higher). ``zetas``
    are the priority values in rank order.
    """
    if not 0 <= i_rank <= j_rank < len(zetas):
        raise IndexError("ranks out of range")
    m = j_rank - i_rank
    if m == 0:
        return 0.0
    a = np.asarray(alphas, dtype=float)
    z = np.asarray(zetas, dtype=float)
    i = i_rank
    q_max = z[i] * (1.0 - a[i + m] / a[i])
    q_max -= np.sum(z[i + 1:i + m + 1] * (a[i:i + m] - a[i + 1:i + m + 1])) / a[i]
    if q_max <= 0:
        raise DegenerateBound(
            f"no transfer possible from rank {i_rank} to {j_rank}: bound {q_max:.3g}")
    return float(q_max)


@dataclass(frozen=True)
class LaneEntry:
    """One vehicle as seen by the overflow pass: lane position + bid."""

    vehicle_id: int
    bid: float


def apply_overflow(lanes: Iterable[Sequence[LaneEntry]],
                   alphas: Sequence[float] | None = None,
                   kappa: float = OVERFLOW_KAPPA) -> dict[int, float]:
    """One front-to-back overflow pass over every lane.

    ``lanes`` holds each lane's vehicles ordered front (closest to the
    intersection) to back. Where a rear vehicle outbids the vehicle
    directly ahead, ``kappa`` times the incentive-safe bound moves from
    the rear bid to the front bid. Total bid mass is conserved.
    Returns vehicle id -> adjusted bid.
    """
    lanes = [list(lane) for lane in lanes]
    bids = {e.vehicle_id: e.bid for lane in lanes for e in lane}

    # ranks in the current global ordering, fixed for this pass
    ordered = sorted(bids, key=lambda vid: (-bids[vid], vid))
    rank = {vid: r for r, vid in enumerate(ordered)}
    zetas_by_rank = np.array([bids[vid] for vid in ordered])
    if alphas is None:
        alphas = default_item_values(max(len(ordered), 1))

    for lane in lanes:
        for front, rear in zip(lane, lane[1:]):
            if bids[rear.vehicle_id] <= bids[front.vehicle_id]:
                continue
            i_rank, j_rank = rank[rear.vehicle_id], rank[front.vehicle_id]
            if i_rank > j_rank:   # ranks can invert after earlier transfers
                continue
            try:
                q = kappa * overflow_bound(i_rank, j_rank, zetas_by_rank, alphas)
            except DegenerateBound:
                continue
            bids[rear.vehicle_id] -= q
            bids[front.vehicle_id] += q
    return bids


@dataclass
class BidInput:
    """Snapshot of one vehicle for sequence building."""

    vehicle_id: int
    bid: float
    spawn_time: float


class _CountingKey:
    """Sort key that counts comparisons (sequencing-complexity checks)."""

    __slots__ = ("key", "counter")

    def __init__(self, key, counter):
        self.key = key
        self.counter = counter

    def __lt__(self, other):
        self.counter[0] += 1
        return self.key < other.key


def build_sequence(vehicles: Sequence[BidInput],
                   comparison_counter: list[int] | None = None) -> PrioritySequence:
    """Sort by effective bid descending; ties by spawn time then id."""
    counter = comparison_counter if comparison_counter is not None else [0]

    def key(v: BidInput):
        return _CountingKey((-v.bid, v.spawn_time, v.vehicle_id), counter)

    ordered = sorted(vehicles, key=key)
    entries = tuple(RankedBid(v.vehicle_id, v.bid, r + 1)
                    for r, v in enumerate(ordered))
    return PrioritySequence(entries)


def utility(i_rank: int, bids: Sequence[float], zeta_i: float,
            alphas: Sequence[float]) -> float:
    """Quasi-linear utility of the agent at 0-based rank ``i_rank``.

    ``bids`` must be sorted descending; conventions b_{n} = 0 and
    alpha_{n} = 0 close the payment tail.
    """
    b = np.asarray(bids, dtype=float)
    a = np.asarray(alphas, dtype=float)[:len(b)]
    n = len(b)
    b_ext = np.append(b, 0.0)
    a_ext = np.append(a, 0.0)
    payment = np.sum(b_ext[i_rank + 1:n + 1] * (a_ext[i_rank:n] - a_ext[i_rank + 1:n + 1]))
    return float(zeta_i * a[i_rank] - payment)


def welfare(allocation: Sequence[int], zetas: Sequence[float],
            alphas: Sequence[float]) -> float:
    """Social welfare of an allocation: sum of zeta_agent * alpha_rank.

    ``allocation[r]`` is the agent index receiving rank r (0-based).
    """
    z = np.asarray(zetas, dtype=float)
    a = np.asarray(alphas, dtype=float)
    alloc = np.asarray(allocation, dtype=int)
    if sorted(alloc.tolist()) != list(range(len(z))):
        raise ValueError("allocation must be a bijection agents -> ranks")
    return float(np.sum(z[alloc] * a[:len(alloc)]))


#: signature of a pluggable bid function: (s, v, wait_time, cfg-like) -> bid
BidFunction = Callable[[float, float, float, float, float], float]


def effective_priority(s: float, v: float, wait_time: float,
                       c: float, beta: float) -> float:
    """Default bid pipeline before overflow: clamped priority times reward."""
    zeta = priority_value(s, time_to_reach(s, v), c)
    return waiting_reward(zeta, wait_time, beta)
