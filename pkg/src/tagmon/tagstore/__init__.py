"""Raw-tag extraction, computed-tag propagation and series storage."""

from .expr import EvalError, Expression, ExprError, compile_expr, f32
from .rules import ANY, AddrSel, EndpointSel, RawTagRule, RuleError, RuleIndex
from .store import (ComputedTagSpec, DagError, ErrorEvent, TagObservation, TagSeries, TagStore,
                    UnknownTag, topo_order)

__all__ = [
    "ANY", "AddrSel", "ComputedTagSpec", "DagError", "EndpointSel", "ErrorEvent", "EvalError",
    "Expression", "ExprError", "RawTagRule", "RuleError", "RuleIndex", "TagObservation",
    "TagSeries", "TagStore", "UnknownTag", "compile_expr", "f32", "topo_order",
]
