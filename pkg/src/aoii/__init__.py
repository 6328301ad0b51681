"""Average penalty, age of incorrect information and misdetection analysis for
energy-harvesting devices reporting over slotted ALOHA."""

from .model import (
    AOII,
    PenaltySpec,
    Scenario,
    Strategy,
    StrategyClass,
    ValidationError,
    mean_change_probability,
    paper_scenario,
    strategy_free_parameters,
    validate,
)
from .analysis import AnalysisReport, analyze

__version__ = "0.1.0"
