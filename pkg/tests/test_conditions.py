from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condgen import KINDS, compare
from tagmon.conditions import Condition, ConditionEngine, ConditionError, Kind
from tagmon.tagstore import TagObservation


def feed(conds, stream, final=None):
    """stream: (tag, t, value) in order; returns every event, timers flushed to ``final``."""
    eng = ConditionEngine(conds)
    out = []
    for i, (tag, t, v) in enumerate(stream, 1):
        out.extend(eng.observe(tag, TagObservation(t, v, frozenset((i,)))))
    if final is not None:
        out.extend(eng.advance(final))
    return out, eng


def pct(cid, kind, a, b=(), v=0.01, **kw):
    return Condition(cid, kind, a, b, v_th=v, percent=True, nominal=1.0, **kw)


class TestThresholdValue:
    def test_scaled_step_violates(self):
        events, _ = feed([pct("1", Kind.THRESHOLD_VALUE, ["m"])], [("m", 0.0, 1.0), ("m", 0.1, 0.9)])
        assert [(e.subtype, e.t) for e in events] == [("value", 0.1)]
        assert [o[1] for o in events[0].observations] == [0.0, 0.1]

    def test_constant_series_is_quiet(self):
        events, _ = feed([pct("1", Kind.THRESHOLD_VALUE, ["m"])],
                         [("m", 0.0, 1.0), ("m", 0.1, 1.0), ("m", 0.2, 1.0)])
        assert events == []

    def test_step_equal_to_tolerance_is_compliant(self):
        c = Condition("1", Kind.THRESHOLD_VALUE, ["m"], v_th=0.5)
        events, _ = feed([c], [("m", 0, 1.0), ("m", 1, 1.5), ("m", 2, 2.0), ("m", 3, 2.5001)])
        assert [e.t for e in events] == [3]

    def test_vector_any_component(self):
        c = Condition("1", Kind.THRESHOLD_VALUE, ["p"], v_th=0.5)
        events, _ = feed([c], [("p", 0, (1.0, 0.0)), ("p", 1, (1.0, 0.75))])
        assert len(events) == 1

    def test_first_observation_never_violates(self):
        events, _ = feed([Condition("1", Kind.THRESHOLD_VALUE, ["m"], v_th=0.0)], [("m", 0, 9.0)])
        assert events == []

    def test_percent_of_zero_reference_uses_nominal(self):
        c = Condition("1", Kind.THRESHOLD_VALUE, ["m"], v_th=0.5, percent=True, nominal=2.0)
        events, _ = feed([c], [("m", 0, 0.0), ("m", 1, 1.0), ("m", 2, 0.0), ("m", 3, 1.5)])
        # 0 -> 1: reference 0 falls back to nominal, tolerance 1.0, compliant.
        # 1 -> 0: tolerance 0.5, violated.  0 -> 1.5: tolerance 1.0 again, violated.
        assert [e.t for e in events] == [2, 3]


class TestThresholdTime:
    def cond(self, lo, hi):
        return Condition("2", Kind.THRESHOLD_TIME, ["pmu"], t_lo=lo, t_hi=hi)

    def test_long_gap(self):
        events, _ = feed([self.cond(0.05, 0.15)], [("pmu", 0.0, 1), ("pmu", 0.1, 1), ("pmu", 0.6, 1)])
        assert ("gap", 0.6) in [(e.subtype, e.t) for e in events]

    def test_regular_polling_is_quiet(self):
        stream = [("poll", float(i), 1) for i in range(10)]
        c = Condition("12", Kind.THRESHOLD_TIME, ["poll"], t_lo=0.98, t_hi=1.02)
        assert feed([c], stream, final=9.5)[0] == []

    def test_replay_too_soon(self):
        c = Condition("13", Kind.THRESHOLD_TIME, ["r"], t_lo=0.95, t_hi=1.05)
        events, _ = feed([c], [("r", 0.0, 1), ("r", 1.0, 1), ("r", 1.01, 1)])
        assert [(e.subtype, e.t) for e in events] == [("gap", 1.01)]

    def test_boundaries_are_compliant(self):
        events, _ = feed([self.cond(0.25, 0.5)], [("pmu", 0.0, 1), ("pmu", 0.25, 1), ("pmu", 0.75, 1)],
                         final=1.25)
        assert events == []

    def test_silence_fires_when_clock_passes_deadline(self):
        stream = [("pmu", 0.0, 1), ("other", 0.25, 0), ("other", 0.5, 0), ("other", 0.625, 0)]
        events, _ = feed([self.cond(0.0, 0.5)], stream)
        assert [(e.subtype, e.t) for e in events] == [("silence", 0.5)]

    def test_silence_is_undecided_at_end_of_stream(self):
        events, _ = feed([self.cond(0.0, 0.5)], [("pmu", 0.0, 1)], final=0.5)
        assert events == []

    def test_inter_arrivals_strictly_inside_produce_nothing(self):
        rng = random.Random(4)
        t, stream = 0.0, []
        for _ in range(300):
            t += rng.uniform(0.06, 0.14)
            stream.append(("pmu", t, 1.0))
        assert feed([self.cond(0.05, 0.15)], stream, final=t + 0.1)[0] == []


class TestMatch:
    def test_scaled_copy_violates(self):
        c = pct("3", Kind.MATCH, ["pmu"], ["pdc"])
        events, _ = feed([c], [("pmu", 0.0, 1.0), ("pdc", 0.01, 1.1)], final=1.0)
        assert {e.subtype for e in events} == {"mismatch"}
        # One event per triggering observation, each resolved at t + window.
        assert sorted(e.t for e in events) == [0.5, 0.51]

    def test_identical_series_are_quiet(self):
        c = pct("3", Kind.MATCH, ["x"], ["y"])
        stream = []
        for i in range(20):
            stream += [("x", i * 0.1, 1.0 + i), ("y", i * 0.1 + 0.01, 1.0 + i)]
        assert feed([c], stream, final=5.0)[0] == []

    def test_three_series_function(self):
        c = Condition("f", Kind.MATCH, ["p"], ["q", "r"], v_th=0.01, percent=True, nominal=1.0,
                      func="x0 - x1 - x2")
        good = []
        for i in range(10):
            t = float(i)
            good += [("p", t, 10.0), ("q", t + 0.01, 6.0), ("r", t + 0.02, 4.0)]
        assert feed([c], good, final=20.0)[0] == []
        bad = [(tag, t, v * 1.05 if tag == "r" and t > 5 else v) for tag, t, v in good]
        events, _ = feed([c], bad, final=20.0)
        assert events and {e.subtype for e in events} == {"mismatch"}

    def test_unmatched_after_grace(self):
        c = Condition("m", Kind.MATCH, ["x"], ["y"], v_th=0.1, match_window=0.5)
        events, _ = feed([c], [("x", 0.0, 1.0), ("y", 2.0, 1.0)], final=3.0)
        assert sorted((e.subtype, e.t) for e in events) == [("unmatched", 0.5), ("unmatched", 2.5)]

    def test_nearest_counterpart_ties_go_earlier(self):
        c = Condition("m", Kind.MATCH, ["x"], ["y"], v_th=0.1, match_window=0.5)
        stream = [("y", 0.75, 5.0), ("x", 1.0, 1.0), ("y", 1.25, 1.0)]
        events, _ = feed([c], stream, final=3.0)
        # x at 1.0 has y at 0.75 and 1.25 equally close; the earlier (5.0) is used.
        trig = [e for e in events if e.observations[0][0] == "x"]
        assert trig[0].observations[1][1] == 0.75


class TestPre:
    def cond(self):
        return pct("15", Kind.PRE, ["write"], ["cmd"], window=0.3)

    def test_forged_write_without_command(self):
        events, _ = feed([self.cond()], [("write", 5.0, 1.0)])
        assert [(e.subtype, e.t) for e in events] == [("missing_precursor", 5.0)]

    def test_legitimate_write_after_command(self):
        assert feed([self.cond()], [("cmd", 5.0, 1.0), ("write", 5.1, 1.0)])[0] == []

    def test_left_endpoint_included_right_excluded(self):
        c = Condition("p", Kind.PRE, ["a"], ["b"], window=0.25)
        assert feed([c], [("b", 1.0, 0.0), ("a", 1.25, 0.0)])[0] == []
        events, _ = feed([c], [("a", 1.25, 0.0), ("b", 1.25, 0.0), ("a", 1.25, 0.0)])
        # b at the same instant is outside [t - T, t), for both triggers.
        assert len(events) == 2

    def test_trigger_predicate_filters(self):
        c = Condition("p", Kind.PRE, ["a"], ["b"], window=0.25, trigger="x0 > 0")
        assert feed([c], [("a", 1.0, 0.0)])[0] == []
        assert len(feed([c], [("a", 1.0, 1.0)])[0]) == 1


class TestPost:
    def cond(self, **kw):
        return pct("8", Kind.POST, ["op"], ["write"], window=0.3, **kw)

    def test_dropped_command(self):
        events, _ = feed([self.cond()], [("op", 1.0, 1.0), ("other", 1.5, 0)])
        assert [(e.subtype, e.t) for e in events] == [("missing_followup", 1.3)]

    def test_relayed_command(self):
        assert feed([self.cond()], [("op", 1.0, 1.0), ("write", 1.1, 1.0)], final=5.0)[0] == []

    def test_two_triggers_one_response(self):
        stream = [("op", 1.0, 1.0), ("op", 1.05, 1.0), ("write", 1.1, 1.0)]
        events, _ = feed([self.cond()], stream, final=5.0)
        # Earliest deadline is discharged; the second trigger expires.
        assert [(e.t, e.observations[0][1]) for e in events] == [(1.35, 1.05)]

    def test_response_at_deadline_is_late(self):
        c = Condition("p", Kind.POST, ["a"], ["b"], window=0.25)
        events, _ = feed([c], [("a", 1.0, 0.0), ("b", 1.25, 0.0)])
        assert [e.t for e in events] == [1.25]

    def test_pending_at_end_is_undecided(self):
        assert feed([self.cond()], [("op", 1.0, 1.0)], final=1.2)[0] == []


class TestEngine:
    def test_empty_condition_set(self):
        assert feed([], [("x", 0.0, 1.0), ("x", 9.0, 5.0)], final=100.0)[0] == []

    def test_only_referencing_conditions_evaluated(self):
        c1 = Condition("a", Kind.THRESHOLD_VALUE, ["x"], v_th=0.1)
        c2 = Condition("b", Kind.THRESHOLD_VALUE, ["y"], v_th=0.1)
        _, eng = feed([c1, c2], [("x", 0.0, 1.0), ("x", 1.0, 2.0)])
        assert eng.counts == {"a": 1}

    def test_suppression_window(self):
        c = Condition("a", Kind.THRESHOLD_VALUE, ["x"], v_th=0.1)
        eng = ConditionEngine([c], suppress_window=1.0)
        out = []
        for i, v in enumerate([0, 1, 0, 1, 0]):
            out += eng.observe("x", TagObservation(i * 0.5, float(v), frozenset()))
        assert [e.t for e in out] == [0.5, 1.5]
        assert eng.suppressed == 2

    def test_arity_mismatch_is_a_config_error(self):
        c = Condition("a", Kind.MATCH, ["x"], ["y"], v_th=0.1)
        out, eng = feed([c], [("x", 0.0, (1.0, 2.0)), ("y", 0.0, 1.0)], final=2.0)
        assert out == [] and eng.config_errors["a"] == 2

    def test_provenance_is_union_of_observations(self):
        c = Condition("m", Kind.MATCH, ["x"], ["y"], v_th=0.1)
        events, _ = feed([c], [("x", 0.0, 1.0), ("y", 0.1, 2.0)], final=2.0)
        assert all(e.provenance == frozenset({1, 2}) for e in events)

    def test_unknown_tag_with_external_series(self):
        with pytest.raises(KeyError):
            ConditionEngine([Condition("a", Kind.THRESHOLD_VALUE, ["x"])], series={})

    def test_duplicate_ids_rejected(self):
        c = Condition("a", Kind.THRESHOLD_VALUE, ["x"])
        with pytest.raises(ValueError):
            ConditionEngine([c, c])


@pytest.mark.parametrize("kw", [
    dict(kind=Kind.THRESHOLD_VALUE, tags_a=[]),
    dict(kind=Kind.THRESHOLD_VALUE, tags_a=["x"], tags_b=["y"]),
    dict(kind=Kind.THRESHOLD_TIME, tags_a=["x"], t_lo=2.0, t_hi=1.0),
    dict(kind=Kind.THRESHOLD_TIME, tags_a=["x"], t_hi=0.0),
    dict(kind=Kind.MATCH, tags_a=["x"]),
    dict(kind=Kind.MATCH, tags_a=["x"], tags_b=["x"]),
    dict(kind=Kind.MATCH, tags_a=["x"], tags_b=["y", "z"]),
    dict(kind=Kind.PRE, tags_a=["x"], tags_b=["y"], window=0.0),
    dict(kind=Kind.POST, tags_a=["x", "z"], tags_b=["y"], window=1.0),
    dict(kind=Kind.POST, tags_a=["x"], tags_b=["y"], window=1.0, percent=True),
    dict(kind=Kind.THRESHOLD_VALUE, tags_a=["x"], trigger="x0 > 1"),
    dict(kind=Kind.THRESHOLD_VALUE, tags_a=["x"], v_th=-1.0),
    dict(kind=Kind.PRE, tags_a=["x"], tags_b=["y"], window=1.0, func="q + 1"),
])
def test_invalid_conditions(kw):
    with pytest.raises(ConditionError):
        Condition("c", **kw)


@pytest.mark.parametrize("kind", KINDS)
@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_streaming_equals_offline(kind, seed):
    got, want, _ = compare(random.Random(seed), kind, max_obs=60)
    assert got == want
