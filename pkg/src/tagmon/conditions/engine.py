"""Streaming evaluation of conditions over tag observations.

The engine is driven by two calls: :meth:`ConditionEngine.advance` moves
the stream clock (firing expired timers) and :meth:`ConditionEngine.observe`
evaluates the conditions that reference a tag. Callers must present
observations in non-decreasing timestamp order and advance the clock to
an observation's timestamp before observing it; :meth:`observe` does
that itself when needed.

Timer semantics:

* MATCH resolves an observation once the clock is strictly past
  ``t + match_window``, so every counterpart inside the window has arrived.
* POST obligations expire when the clock reaches ``t + window``.
* THRESHOLD_TIME reports silence once the clock is strictly past
  ``t_last + t_hi``.

Anything still pending when the stream ends is undecided and reports nothing.
"""

from __future__ import annotations

import heapq
from bisect import bisect_left, bisect_right
from collections import Counter, defaultdict, deque
from time import perf_counter
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from ..tagstore.expr import EvalError
from ..tagstore.store import TagObservation, TagSeries
from .model import REF_FLOOR, AnomalyEvent, ArityError, Condition, Kind, difference

_MATCH, _POST, _SILENCE = 0, 1, 2


class _Obligation:
    __slots__ = ("ob", "deadline", "open")

    def __init__(self, ob, deadline):
        self.ob = ob
        self.deadline = deadline
        self.open = True


class ConditionEngine:
    def __init__(self, conditions: Sequence[Condition],
                 series: Optional[Mapping[str, TagSeries]] = None,
                 suppress_window: float = 0.0, timing: bool = False):
        self.conditions = list(conditions)
        ids = [c.cond_id for c in self.conditions]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate condition id")
        self.own_series = series is None
        self.series: Dict[str, TagSeries] = {} if series is None else series
        self._handlers = {
            Kind.MATCH: self._match, Kind.POST: self._post, Kind.PRE: self._pre,
            Kind.THRESHOLD_VALUE: self._threshold_value, Kind.THRESHOLD_TIME: self._threshold_time,
        }
        self.by_tag: Dict[str, List[tuple]] = defaultdict(list)
        for c in self.conditions:
            for i, tag in enumerate(c.tags):
                if self.own_series:
                    self.series.setdefault(tag, TagSeries(tag))
                elif tag not in self.series:
                    raise KeyError(f"condition {c.cond_id} references unknown tag {tag!r}")
                self.by_tag[tag].append((self._handlers[c.kind], c, i))
        self.clock = float("-inf")
        self._timers: list = []
        self._seq = 0
        self._last: Dict[str, TagObservation] = {}  # THRESHOLD_* previous observation
        self._silence_token: Dict[str, int] = {}
        self._pending: Dict[str, deque] = defaultdict(deque)  # POST obligations
        self.suppress_window = suppress_window
        self._last_emit: Dict[str, float] = {}
        self.suppressed = 0
        self.config_errors: Counter = Counter()
        self.counts: Counter = Counter()
        self.timing = timing
        self.time_by_kind: Counter = Counter()
        self.evals_by_kind: Counter = Counter()

    # -- clock and timers -------------------------------------------------

    def _push_timer(self, deadline, strict, kind, payload):
        self._seq += 1
        heapq.heappush(self._timers, (deadline, strict, self._seq, kind, payload))

    def advance(self, clock: float) -> List[AnomalyEvent]:
        out: List[AnomalyEvent] = []
        if clock <= self.clock:
            return out
        self.clock = clock
        timers = self._timers
        while timers:
            deadline, strict = timers[0][0], timers[0][1]
            if deadline > clock or (strict and deadline == clock):
                break
            _, _, _, kind, payload = heapq.heappop(timers)
            if kind == _MATCH:
                self._resolve_match(*payload, out)
            elif kind == _POST:
                cond, obl = payload
                if obl.open:
                    obl.open = False
                    pend = self._pending[cond.cond_id]
                    while pend and not pend[0].open:
                        pend.popleft()
                    self._emit(out, cond, "missing_followup", obl.deadline,
                               ((cond.tags_a[0], obl.ob),),
                               f"no {cond.tags_b[0]} within {cond.window}s")
            else:
                cond, token, ob = payload
                if self._silence_token.get(cond.cond_id) == token:
                    del self._silence_token[cond.cond_id]
                    self._emit(out, cond, "silence", deadline, ((cond.tags_a[0], ob),),
                               f"no observation for more than {cond.t_hi}s")
        return out

    # -- observations -----------------------------------------------------

    def observe(self, tag: str, ob: TagObservation) -> List[AnomalyEvent]:
        out = self.advance(ob.t) if ob.t > self.clock else []
        if self.own_series:
            s = self.series.get(tag)
            if s is not None:
                s.append(ob)
        refs = self.by_tag.get(tag)
        if not refs:
            return out
        if self.timing:
            for handler, cond, pos in refs:
                t0 = perf_counter()
                handler(cond, pos, ob, out)
                self.time_by_kind[cond.kind] += perf_counter() - t0
                self.evals_by_kind[cond.kind] += 1
            return out
        for handler, cond, pos in refs:
            handler(cond, pos, ob, out)
        return out

    def _emit(self, out, cond: Condition, subtype, t, obs, detail=""):
        if self.suppress_window > 0:
            last = self._last_emit.get(cond.cond_id)
            if last is not None and t - last < self.suppress_window:
                self.suppressed += 1
                return
            self._last_emit[cond.cond_id] = t
        prov = frozenset().union(*(o.provenance for _, o in obs))
        self.counts[cond.cond_id] += 1
        out.append(AnomalyEvent(cond.cond_id, cond.group, cond.kind, subtype, t,
                                tuple((tag, o.t, o.value) for tag, o in obs), prov, detail))

    def _match(self, cond, pos, ob, out):
        self._push_timer(ob.t + cond.match_window, True, _MATCH, (cond, pos, ob))

    def _threshold_value(self, cond, pos, ob, out):
        prev = self._last.get(cond.cond_id)
        self._last[cond.cond_id] = ob
        if prev is None:
            return
        v, pv = ob.value, prev.value
        tv, tp = type(v), type(pv)
        if (tv is float or tv is int) and (tp is float or tp is int):
            # Scalar fast path of Condition.exceeds(v - pv, pv).
            if cond.percent:
                r = abs(pv)
                tol = cond.v_th * (r if r >= REF_FLOOR else cond.nominal)
            else:
                tol = cond.v_th
            bad = abs(v - pv) > tol
        else:
            try:
                bad = cond.exceeds(difference(v, pv), pv)
            except ArityError:
                self.config_errors[cond.cond_id] += 1
                return
        if bad:
            tag = cond.tags_a[0]
            self._emit(out, cond, "value", ob.t, ((tag, prev), (tag, ob)),
                       f"step {prev.value!r} -> {ob.value!r}")

    def _threshold_time(self, cond, pos, ob, out):
        prev = self._last.get(cond.cond_id)
        self._last[cond.cond_id] = ob
        self._seq += 1
        token = self._seq
        self._silence_token[cond.cond_id] = token
        self._push_timer(ob.t + cond.t_hi, True, _SILENCE, (cond, token, ob))
        if prev is None:
            return
        gap = ob.t - prev.t
        if gap < cond.t_lo or gap > cond.t_hi:
            tag = cond.tags_a[0]
            self._emit(out, cond, "gap", ob.t, ((tag, prev), (tag, ob)),
                       f"inter-arrival {gap:.6f}s outside [{cond.t_lo}, {cond.t_hi}]")

    def _pair_ok(self, cond: Condition, a_ob, b_ob) -> bool:
        """Whether a right-side observation satisfies the pairing test for ``a_ob``."""
        b = b_ob.value
        if cond.func_expr is None:
            result = difference(a_ob.value, b)
        else:
            result = cond.func_expr.evaluate({"x0": a_ob.value, "x1": b, "a": a_ob.value, "b": b})
        return not cond.exceeds(result, b)

    def _triggered(self, cond, ob) -> bool:
        if cond.trigger_expr is None:
            return True
        try:
            return bool(cond.trigger_expr.evaluate({"x0": ob.value, "a": ob.value}))
        except EvalError:
            self.config_errors[cond.cond_id] += 1
            return False

    def _pre(self, cond: Condition, pos, ob, out):
        if pos != 0 or not self._triggered(cond, ob):
            return
        series = self.series[cond.tags_b[0]]
        start = ob.t - cond.window
        times = series.times
        obs = series.obs
        i = len(times) - 1
        while i >= 0 and times[i] >= ob.t:
            i -= 1
        while i >= 0 and times[i] >= start:
            try:
                if self._pair_ok(cond, ob, obs[i]):
                    return
            except (ArityError, EvalError):
                self.config_errors[cond.cond_id] += 1
            i -= 1
        self._emit(out, cond, "missing_precursor", ob.t, ((cond.tags_a[0], ob),),
                   f"no {cond.tags_b[0]} within {cond.window}s before")

    def _post(self, cond: Condition, pos, ob, out):
        if pos == 1:
            for obl in self._pending[cond.cond_id]:
                if not obl.open:
                    continue
                try:
                    ok = self._pair_ok(cond, obl.ob, ob)
                except (ArityError, EvalError):
                    self.config_errors[cond.cond_id] += 1
                    ok = False
                if ok:
                    obl.open = False
                    break
            pend = self._pending[cond.cond_id]
            while pend and not pend[0].open:
                pend.popleft()
            return
        if self._triggered(cond, ob):
            obl = _Obligation(ob, ob.t + cond.window)
            self._pending[cond.cond_id].append(obl)
            self._push_timer(obl.deadline, False, _POST, (cond, obl))

    def _resolve_match(self, cond: Condition, pos: int, ob, out):
        tags = cond.tags
        w = cond.match_window
        vals = []
        used = []
        for i, tag in enumerate(tags):
            if i == pos:
                vals.append(ob.value)
                used.append((tag, ob))
                continue
            mate = _nearest(self.series[tag], ob.t, w)
            if mate is None:
                self._emit(out, cond, "unmatched", ob.t + w, ((tags[pos], ob),),
                           f"no {tag} within {w}s")
                return
            vals.append(mate.value)
            used.append((tag, mate))
        try:
            if cond.func_expr is None:
                a, b = vals
                ta, tb = type(a), type(b)
                if (ta is float or ta is int) and (tb is float or tb is int):
                    if cond.percent:
                        r = abs(b)
                        tol = cond.v_th * (r if r >= REF_FLOOR else cond.nominal)
                    else:
                        tol = cond.v_th
                    bad = abs(a - b) > tol
                    result = None
                else:
                    result = difference(a, b)
            else:
                env = {f"x{i}": v for i, v in enumerate(vals)}
                if len(vals) == 2:
                    env["a"], env["b"] = vals
                result = cond.func_expr.evaluate(env)
            if result is not None:
                bad = cond.exceeds(result, vals[len(cond.tags_a)])
        except (ArityError, EvalError):
            self.config_errors[cond.cond_id] += 1
            return
        if bad:
            # The triggering observation goes first, then its counterparts in series order.
            ordered = [used[pos]] + [u for i, u in enumerate(used) if i != pos]
            self._emit(out, cond, "mismatch", ob.t + w, tuple(ordered),
                       f"values {vals!r} differ beyond tolerance")

    def stats(self) -> dict:
        return {
            "events_by_condition": dict(sorted(self.counts.items())),
            "suppressed": self.suppressed,
            "config_errors": dict(self.config_errors),
            "pending_timers": len(self._timers),
        }


def _nearest(series: TagSeries, t: float, w: float) -> Optional[TagObservation]:
    """Observation closest to ``t`` within ``[t - w, t + w]``; ties go to the earlier one."""
    times = series.times
    lo = bisect_left(times, t - w)
    hi = bisect_right(times, t + w)
    if lo >= hi:
        return None
    # Closest candidates straddle t; only the neighbours of the insertion point matter.
    k = bisect_left(times, t, lo, hi)
    best = None
    best_d = None
    for j in (k - 1, k):
        if lo <= j < hi:
            d = abs(times[j] - t)
            if best_d is None or d < best_d:
                best, best_d = j, d
    # Equal timestamps: step back to the first of the run so "earlier" wins ties.
    while best > lo and times[best - 1] == times[best]:
        best -= 1
    return series.obs[best]
