"""Shared fixtures and builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from crossflow.domain import Intention, IntersectionSpec, VehicleState


@pytest.fixture
def spec() -> IntersectionSpec:
    return IntersectionSpec()


def make_vehicle(vid: int, *, arm: int = 0, intention: int = 1,
                 s: float = 100.0, v: float = 10.0, lane: int | None = None,
                 spawn_time: float = 0.0, **kw) -> VehicleState:
    """Vehicle with sensible defaults; lane derived from intention."""
    if lane is None:
        lane = IntersectionSpec().lane_for_intention(intention)
    return VehicleState(id=vid, arm=arm, lane=lane,
                        intention=Intention(intention), s=s, v=v,
                        spawn_time=spawn_time, **kw)


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)
