"""crossflow: cooperative intersection control via auctions and QP planning."""

__version__ = "0.1.0"

from .domain import (  # noqa: F401
    Controller,
    Intention,
    IntersectionSpec,
    MetricsReport,
    Phase,
    ScenarioConfig,
    VehicleState,
    VehicleTemplate,
    load_config,
    save_config,
    validate_config,
)
