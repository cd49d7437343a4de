"""Tag series storage and the raw-rule / computed-tag propagation stages."""

from __future__ import annotations

import graphlib
import heapq
from bisect import bisect_left, bisect_right
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from ..protocols import ParsedRecord
from .expr import EvalError, Expression, ExprError
from .rules import RawTagRule, RuleIndex

DEFAULT_MAX_OBS = 10_000
DEFAULT_MAX_AGE = 600.0
MAX_ERRORS = 1000


class UnknownTag(KeyError):
    pass


class DagError(ValueError):
    """Computed-tag definitions are inconsistent (unknown deps or a cycle)."""


@dataclass(frozen=True, slots=True)
class TagObservation:
    t: float
    value: object
    provenance: FrozenSet[int]

    def to_dict(self):
        v = self.value
        return {"t": self.t, "value": list(v) if isinstance(v, tuple) else v,
                "provenance": sorted(self.provenance)}


class TagSeries:
    """Append-only observations bounded by count and age."""

    __slots__ = ("tag_id", "times", "obs", "max_obs", "max_age")

    def __init__(self, tag_id: str, max_obs: int = DEFAULT_MAX_OBS, max_age: float = DEFAULT_MAX_AGE):
        self.tag_id = tag_id
        self.times: deque = deque()
        self.obs: deque = deque()
        self.max_obs = max_obs
        self.max_age = max_age

    def append(self, ob: TagObservation) -> None:
        times = self.times
        if times and ob.t < times[-1]:
            raise ValueError(f"{self.tag_id}: timestamp {ob.t} before {times[-1]}")
        times.append(ob.t)
        self.obs.append(ob)
        horizon = ob.t - self.max_age
        while len(times) > self.max_obs or times[0] < horizon:
            times.popleft()
            self.obs.popleft()

    def __len__(self):
        return len(self.obs)

    def __iter__(self):
        return iter(self.obs)

    @property
    def last(self) -> Optional[TagObservation]:
        return self.obs[-1] if self.obs else None

    def since(self, start: float) -> List[TagObservation]:
        """Observations with t >= start, oldest first (scans from the end)."""
        out = []
        times = self.times
        i = len(times) - 1
        while i >= 0 and times[i] >= start:
            i -= 1
        obs = self.obs
        for j in range(i + 1, len(obs)):
            out.append(obs[j])
        return out

    def range(self, start: float, end: float) -> List[TagObservation]:
        times = list(self.times)
        lo = bisect_left(times, start)
        hi = bisect_right(times, end)
        obs = self.obs
        return [obs[i] for i in range(lo, hi)]


@dataclass
class ComputedTagSpec:
    tag_id: str
    deps: Tuple[str, ...]
    func: Expression
    history_window: float = 0.0
    aliases: Tuple[str, ...] = ()

    @classmethod
    def build(cls, tag_id: str, deps: Sequence[str], func: str,
              history_window: float = 0.0, aliases: Sequence[str] = ()) -> "ComputedTagSpec":
        deps = tuple(deps)
        if not deps:
            raise DagError(f"computed tag {tag_id!r} has no deps")
        if len(set(deps)) != len(deps):
            raise DagError(f"computed tag {tag_id!r} lists a dep twice")
        aliases = tuple(aliases)
        if aliases and len(aliases) != len(deps):
            raise DagError(f"computed tag {tag_id!r}: one alias per dep required")
        names = [f"x{i}" for i in range(len(deps))] + list(aliases)
        expr = Expression(func, names)
        if expr.needs_history and history_window <= 0:
            raise DagError(f"computed tag {tag_id!r} aggregates history but history_window is 0")
        if history_window < 0:
            raise DagError(f"computed tag {tag_id!r}: negative history_window")
        return cls(tag_id, deps, expr, float(history_window), aliases)

    def variables(self, i: int) -> Tuple[str, ...]:
        return (f"x{i}", self.aliases[i]) if self.aliases else (f"x{i}",)


@dataclass
class ErrorEvent:
    kind: str
    tag_id: str
    t: float
    detail: str

    def to_dict(self):
        return {"kind": self.kind, "tag": self.tag_id, "t": self.t, "detail": self.detail}


def topo_order(specs: Iterable[ComputedTagSpec], raw_tags: Iterable[str]) -> List[str]:
    """Topological order of computed tags; rejects unknown deps and cycles."""
    specs = list(specs)
    known = set(raw_tags)
    computed = {}
    for s in specs:
        if s.tag_id in known or s.tag_id in computed:
            raise DagError(f"tag {s.tag_id!r} defined more than once")
        computed[s.tag_id] = s
    for s in specs:
        for d in s.deps:
            if d not in known and d not in computed:
                raise DagError(f"computed tag {s.tag_id!r} depends on unknown tag {d!r}")
    sorter = graphlib.TopologicalSorter()
    for s in specs:
        sorter.add(s.tag_id, *[d for d in s.deps if d in computed])
    try:
        order = list(sorter.static_order())
    except graphlib.CycleError as exc:
        cycle = exc.args[1]
        raise DagError("dependency cycle: " + " -> ".join(reversed(cycle))) from None
    return order


class TagStore:
    """Holds every tag series and runs raw-rule extraction plus propagation."""

    def __init__(self, rules: Sequence[RawTagRule], computed: Sequence[ComputedTagSpec] = (),
                 max_obs: int = DEFAULT_MAX_OBS, max_age: float = DEFAULT_MAX_AGE):
        self.rules = rules if isinstance(rules, RuleIndex) else RuleIndex(rules)
        raw_tags = [r.tag_id for r in self.rules]
        self.order = topo_order(computed, raw_tags)
        self.computed: Dict[str, ComputedTagSpec] = {s.tag_id: s for s in computed}
        self.rank = {t: i for i, t in enumerate(self.order)}
        self.children: Dict[str, List[str]] = {}
        for s in computed:
            for d in s.deps:
                self.children.setdefault(d, []).append(s.tag_id)
        for kids in self.children.values():
            kids.sort(key=self.rank.__getitem__)
        self.parents: Dict[str, Tuple[str, ...]] = {s.tag_id: s.deps for s in computed}
        self.rule_of: Dict[str, RawTagRule] = {r.tag_id: r for r in self.rules}
        self.series: Dict[str, TagSeries] = {}
        for t in raw_tags + self.order:
            self.series[t] = TagSeries(t, max_obs, max_age)
        self.errors: deque = deque(maxlen=MAX_ERRORS)
        self.error_counts: Dict[str, int] = {"rule": 0, "eval": 0, "order": 0}
        self.raw_raised = 0
        self.computed_raised = 0
        self.rules_matched = 0

    @property
    def tag_ids(self) -> List[str]:
        return list(self.series)

    def _error(self, kind, tag_id, t, detail):
        self.error_counts[kind] += 1
        self.errors.append(ErrorEvent(kind, tag_id, t, detail))

    def apply_raw_rules(self, rec: ParsedRecord) -> List[Tuple[str, TagObservation]]:
        """Raise every raw tag whose rule matches ``rec`` (declaration order)."""
        raised = []
        cands = self.rules.candidates(rec)
        if not cands:
            return raised
        prov = None
        values = rec.values
        for rule in cands:
            self.rules_matched += 1
            try:
                v = rule.extract(values)
            except TypeError as exc:
                self._error("rule", rule.tag_id, rec.timestamp, str(exc))
                continue
            if v is None:
                continue
            if prov is None:
                prov = frozenset((rec.raw_ref,))
            ob = TagObservation(rec.timestamp, v, prov)
            try:
                self.series[rule.tag_id].append(ob)
            except ValueError as exc:
                self._error("order", rule.tag_id, rec.timestamp, str(exc))
                continue
            raised.append((rule.tag_id, ob))
        self.raw_raised += len(raised)
        return raised

    def propagate_computed(self, raised: Sequence[Tuple[str, TagObservation]]) -> List[Tuple[str, TagObservation]]:
        """Evaluate each affected computed tag once, in topological order."""
        out = []
        if not raised:
            return out
        children = self.children
        rank = self.rank
        heap = []
        queued = set()
        for tag, ob in raised:
            for k in children.get(tag, ()):
                if k not in queued:
                    queued.add(k)
                    heapq.heappush(heap, (rank[k], k))
        if not heap:
            return out
        t = raised[0][1].t
        while heap:
            _, k = heapq.heappop(heap)
            ob = self._evaluate(self.computed[k], t)
            if ob is None:
                continue
            self.series[k].append(ob)
            out.append((k, ob))
            for c in children.get(k, ()):
                if c not in queued:
                    queued.add(c)
                    heapq.heappush(heap, (rank[c], c))
        self.computed_raised += len(out)
        return out

    def _evaluate(self, spec: ComputedTagSpec, t: float) -> Optional[TagObservation]:
        env = {}
        used = []
        series = self.series
        for i, d in enumerate(spec.deps):
            last = series[d].last
            if last is None:
                return None  # deferred until every dep has a value
            used.append(last)
            for name in spec.variables(i):
                env[name] = last.value
        hist = None
        prov = set()
        if spec.func.needs_history:
            hist = {}
            start = t - spec.history_window
            for i, d in enumerate(spec.deps):
                window = series[d].since(start)
                for name in spec.variables(i):
                    if name in spec.func.history:
                        hist[name] = [o.value for o in window]
                        for o in window:
                            prov |= o.provenance
        try:
            value = spec.func.evaluate(env, hist)
        except EvalError as exc:
            self._error("eval", spec.tag_id, t, str(exc))
            return None
        if isinstance(value, bool):
            value = int(value)
        elif isinstance(value, list):
            value = tuple(value)
        if len(used) == 1 and not prov:
            provenance = used[0].provenance
        else:
            for o in used:
                prov |= o.provenance
            provenance = frozenset(prov)
        return TagObservation(t, value, provenance)

    def ingest(self, rec: ParsedRecord) -> List[Tuple[str, TagObservation]]:
        raised = self.apply_raw_rules(rec)
        if raised and self.children:
            raised.extend(self.propagate_computed(raised))
        return raised

    def query_series(self, tag_id: str, start: float = float("-inf"),
                     end: float = float("inf")) -> List[TagObservation]:
        s = self.series.get(tag_id)
        if s is None:
            raise UnknownTag(tag_id)
        if start > end:
            return []
        return s.range(start, end)

    def raw_ancestors(self, tag_id: str) -> FrozenSet[str]:
        """Raw tags that ``tag_id`` transitively depends on (itself if raw)."""
        if tag_id not in self.series:
            raise UnknownTag(tag_id)
        out = set()
        stack = [tag_id]
        seen = set()
        while stack:
            t = stack.pop()
            if t in seen:
                continue
            seen.add(t)
            deps = self.parents.get(t)
            if deps is None:
                out.add(t)
            else:
                stack.extend(deps)
        return frozenset(out)
