"""Condition definitions, anomaly events and the tolerance arithmetic they share."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import FrozenSet, Optional, Tuple

from ..tagstore.expr import Expression, ExprError

REF_FLOOR = 1e-6
DEFAULT_MATCH_WINDOW = 0.5


class Kind(str, enum.Enum):
    THRESHOLD_VALUE = "THRESHOLD_VALUE"
    THRESHOLD_TIME = "THRESHOLD_TIME"
    MATCH = "MATCH"
    PRE = "PRE"
    POST = "POST"


class ConditionError(ValueError):
    """A condition definition is inconsistent."""


class ArityError(ValueError):
    """Vector values of different lengths were compared."""


@dataclass
class Condition:
    """One monitored property.

    ``v_th`` is an absolute tolerance, or a fraction of the reference value
    when ``percent`` is set (``0.01`` for one percent). Expressions see the
    values of ``tags_a + tags_b`` as ``x0, x1, ...``; two-series conditions
    also get the aliases ``a`` and ``b``. ``trigger`` sees the triggering
    value as ``x0``/``a``.
    """

    cond_id: str
    kind: Kind
    tags_a: Tuple[str, ...]
    tags_b: Tuple[str, ...] = ()
    v_th: float = 0.0
    percent: bool = False
    nominal: Optional[float] = None
    t_lo: float = 0.0
    t_hi: float = 0.0
    window: float = 0.0
    match_window: float = DEFAULT_MATCH_WINDOW
    func: Optional[str] = None
    trigger: Optional[str] = None
    group: str = ""
    description: str = ""
    func_expr: Optional[Expression] = field(default=None, repr=False, compare=False)
    trigger_expr: Optional[Expression] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.kind = Kind(self.kind)
        self.tags_a = tuple(self.tags_a)
        self.tags_b = tuple(self.tags_b or ())
        if not self.group:
            self.group = self.cond_id
        self.validate()
        n = len(self.tags_a) + len(self.tags_b)
        names = [f"x{i}" for i in range(n)] + (["a", "b"] if n == 2 else [])
        try:
            if self.func is not None:
                self.func_expr = Expression(self.func, names)
            if self.trigger is not None:
                self.trigger_expr = Expression(self.trigger, ["x0", "a"])
        except ExprError as exc:
            raise ConditionError(f"condition {self.cond_id}: {exc}") from None

    def validate(self) -> None:
        cid = self.cond_id
        kind = self.kind
        if not self.tags_a:
            raise ConditionError(f"condition {cid}: tags_a is empty")
        for name in ("v_th", "t_lo", "t_hi", "window", "match_window"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or v != v or v < 0:
                raise ConditionError(f"condition {cid}: {name} must be a non-negative number")
        if kind in (Kind.THRESHOLD_VALUE, Kind.THRESHOLD_TIME):
            if self.tags_b:
                raise ConditionError(f"condition {cid}: {kind.value} takes no tags_b")
            if len(self.tags_a) != 1:
                raise ConditionError(f"condition {cid}: {kind.value} takes exactly one tag")
        else:
            if not self.tags_b:
                raise ConditionError(f"condition {cid}: {kind.value} requires tags_b")
        if kind in (Kind.PRE, Kind.POST) and (len(self.tags_a) != 1 or len(self.tags_b) != 1):
            raise ConditionError(f"condition {cid}: {kind.value} takes one tag per side")
        if kind in (Kind.PRE, Kind.POST) and self.tags_a == self.tags_b:
            raise ConditionError(f"condition {cid}: both sides name the same tag")
        if kind is Kind.MATCH:
            tags = self.tags_a + self.tags_b
            if len(set(tags)) != len(tags):
                raise ConditionError(f"condition {cid}: MATCH series must be distinct")
            if len(tags) > 2 and self.func is None:
                raise ConditionError(f"condition {cid}: MATCH over {len(tags)} series needs func")
        if kind is Kind.THRESHOLD_TIME:
            if self.t_lo > self.t_hi:
                raise ConditionError(f"condition {cid}: t_lo > t_hi")
            if self.t_hi <= 0:
                raise ConditionError(f"condition {cid}: t_hi must be positive")
        if kind in (Kind.PRE, Kind.POST) and self.window <= 0:
            raise ConditionError(f"condition {cid}: window must be positive")
        if kind is Kind.MATCH and self.match_window <= 0:
            raise ConditionError(f"condition {cid}: match_window must be positive")
        if self.percent and kind is not Kind.THRESHOLD_TIME:
            if self.nominal is None:
                raise ConditionError(f"condition {cid}: percent tolerance needs a nominal value")
            if self.nominal <= 0:
                raise ConditionError(f"condition {cid}: nominal must be positive")
        if self.trigger is not None and kind not in (Kind.PRE, Kind.POST):
            raise ConditionError(f"condition {cid}: trigger only applies to PRE/POST")
        if self.func is not None and kind in (Kind.THRESHOLD_VALUE, Kind.THRESHOLD_TIME):
            raise ConditionError(f"condition {cid}: func does not apply to {kind.value}")

    @property
    def tags(self) -> Tuple[str, ...]:
        return self.tags_a + self.tags_b

    def tolerance(self, ref: float) -> float:
        if not self.percent:
            return self.v_th
        r = abs(ref)
        if r < REF_FLOOR:
            r = self.nominal
        return self.v_th * r

    def exceeds(self, result, ref) -> bool:
        """True iff some component of ``result`` is outside its tolerance."""
        if isinstance(result, (tuple, list)):
            if self.percent and isinstance(ref, (tuple, list)):
                if len(ref) != len(result):
                    raise ArityError(f"result has {len(result)} components, reference {len(ref)}")
                return any(abs(r) > self.tolerance(x) for r, x in zip(result, ref))
            if self.percent:
                tol = self.tolerance(ref)
                return any(abs(r) > tol for r in result)
            return any(abs(r) > self.v_th for r in result)
        if isinstance(ref, (tuple, list)) and self.percent:
            raise ArityError("scalar result against a vector reference")
        return abs(result) > self.tolerance(ref)

    def to_dict(self) -> dict:
        d = {"id": self.cond_id, "group": self.group, "kind": self.kind.value,
             "tags_a": list(self.tags_a), "tags_b": list(self.tags_b)}
        if self.kind is Kind.THRESHOLD_TIME:
            d.update(t_lo=self.t_lo, t_hi=self.t_hi)
        else:
            d.update(v_th=self.v_th, percent=self.percent)
        if self.kind in (Kind.PRE, Kind.POST):
            d["window"] = self.window
        if self.kind is Kind.MATCH:
            d["match_window"] = self.match_window
        return d


def difference(a, b):
    """Componentwise a - b for scalars or equal-length vectors."""
    ta = isinstance(a, tuple)
    tb = isinstance(b, tuple)
    if not ta and not tb:
        return a - b
    if ta and tb and len(a) == len(b):
        return tuple(x - y for x, y in zip(a, b))
    raise ArityError(f"cannot compare {a!r} with {b!r}")


@dataclass(frozen=True)
class AnomalyEvent:
    cond_id: str
    group: str
    kind: Kind
    subtype: str
    t: float
    observations: Tuple[Tuple[str, float, object], ...]
    provenance: FrozenSet[int]
    detail: str = ""

    @property
    def key(self):
        """Identity used for set comparisons: condition, subtype, time, violating samples."""
        return (self.cond_id, self.subtype, self.t, tuple((o[0], o[1]) for o in self.observations))

    def to_dict(self) -> dict:
        return {
            "cond": self.cond_id,
            "group": self.group,
            "kind": self.kind.value,
            "subtype": self.subtype,
            "t": self.t,
            "observations": [{"tag": tag, "t": t, "value": list(v) if isinstance(v, tuple) else v}
                             for tag, t, v in self.observations],
            "provenance": sorted(self.provenance),
            "detail": self.detail,
        }
