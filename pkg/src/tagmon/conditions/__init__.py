"""Temporal conditions over tag series and the streaming evaluator."""

from .engine import ConditionEngine
from .model import AnomalyEvent, ArityError, Condition, ConditionError, Kind, difference

__all__ = ["AnomalyEvent", "ArityError", "Condition", "ConditionEngine", "ConditionError",
           "Kind", "difference"]
