"""The monitoring pipeline: capture, parsing, tags, conditions, localization."""

from __future__ import annotations

import threading
import time
from collections import Counter, deque
from dataclasses import dataclass, field
from time import perf_counter
from typing import Dict, Iterable, List, Optional

from ..capture import CaptureSource, CaptureSpec, RawFrame
from ..capture.dispatch import Dispatcher
from ..conditions import AnomalyEvent, ConditionEngine, Kind
from ..localization import CommGraph, RuleFallback
from ..protocols import ParsedRecord
from ..tagstore import TagStore
from .bus import Bus
from .config import EngineConfig


@dataclass
class StageTimes:
    """Accumulated wall time per pipeline stage (seconds) and work counts."""

    frames: int = 0
    bytes: int = 0
    total: float = 0.0
    raw: float = 0.0
    computed: float = 0.0
    conditions: float = 0.0
    raw_obs: int = 0
    computed_obs: int = 0
    cond_obs: int = 0
    anomalous_frames: int = 0
    latency_total: float = 0.0
    latencies: List[float] = field(default_factory=list)


class Engine:
    """Single-threaded pipeline; readers take :attr:`lock` for consistent views."""

    def __init__(self, cfg: EngineConfig, bus: Optional[Bus] = None, timing: bool = False):
        self.cfg = cfg
        self.dispatcher = Dispatcher(cfg.port_table, cfg.modbus_ports, cfg.max_segments,
                                     cfg.max_wait, cfg.dedup_window)
        self.store = TagStore(cfg.rules, cfg.computed, cfg.max_obs, cfg.max_age)
        self.conditions = ConditionEngine(cfg.conditions, self.store.series, cfg.suppress_window,
                                          timing=timing)
        self.graph = CommGraph(cfg.directory, cfg.half_life, cfg.ref_memory)
        self.fallback = RuleFallback(self.store, self.graph)
        # A missing follow-up is also charged to the path the response should have taken.
        self._followup_edges = {}
        for c in cfg.conditions:
            if c.kind is Kind.POST:
                self._followup_edges[c.cond_id] = self.fallback.static_edges(c.tags_b)[0]
        self.events: List[AnomalyEvent] = []
        self.records: deque = deque(maxlen=cfg.record_log)
        self.bus = bus
        self.lock = threading.RLock()
        self.timing = timing
        self.times = StageTimes()
        self.clock: Optional[float] = None
        self.first_ts: Optional[float] = None
        self.normalization_checks = 0
        self.started = time.time()
        self.finished = False
        self.fatal: Optional[str] = None

    # -- processing --------------------------------------------------------

    def process_frame(self, frame: RawFrame) -> List[AnomalyEvent]:
        with self.lock:
            if self.timing:
                return self._process_timed(frame)
            ts = frame.capture_timestamp
            if self.first_ts is None:
                self.first_ts = ts
            self.clock = ts
            cond = self.conditions
            out = cond.advance(ts)
            recs = self.dispatcher.dispatch(frame)
            if recs:
                store = self.store
                graph = self.graph
                log = self.records
                for rec in recs:
                    graph.observe(rec)
                    log.append(rec)
                    raised = store.ingest(rec)
                    for tag, ob in raised:
                        out.extend(cond.observe(tag, ob))
                    if self.bus is not None and self.bus.active():
                        self._publish(rec, raised)
            if out:
                self._account(out)
            return out

    def _process_timed(self, frame: RawFrame) -> List[AnomalyEvent]:
        t0 = perf_counter()
        tm = self.times
        ts = frame.capture_timestamp
        if self.first_ts is None:
            self.first_ts = ts
        self.clock = ts
        cond = self.conditions
        tc = perf_counter()
        out = cond.advance(ts)
        tm.conditions += perf_counter() - tc
        recs = self.dispatcher.dispatch(frame)
        store = self.store
        for rec in recs:
            self.graph.observe(rec)
            self.records.append(rec)
            ta = perf_counter()
            raw = store.apply_raw_rules(rec)
            tb = perf_counter()
            comp = store.propagate_computed(raw) if raw else []
            tc = perf_counter()
            tm.raw += tb - ta
            tm.computed += tc - tb
            tm.raw_obs += len(raw)
            tm.computed_obs += len(comp)
            for tag, ob in raw:
                out.extend(cond.observe(tag, ob))
            for tag, ob in comp:
                out.extend(cond.observe(tag, ob))
            tm.conditions += perf_counter() - tc
            tm.cond_obs += len(raw) + len(comp)
            if self.bus is not None and self.bus.active():
                self._publish(rec, raw + comp)
        if out:
            self._account(out)
        t1 = perf_counter()
        tm.frames += 1
        tm.bytes += len(frame.link_payload)
        tm.total += t1 - t0
        if out:
            tm.anomalous_frames += 1
            tm.latency_total += t1 - t0
            tm.latencies.append(t1 - t0)
        return out

    def _account(self, events: List[AnomalyEvent]) -> None:
        for ev in events:
            expected = self._followup_edges.get(ev.cond_id, ()) if ev.subtype == "missing_followup" else ()
            self.graph.add_event(ev, self.fallback, expected)
            self.events.append(ev)
            if self.bus is not None and self.bus.active():
                self.bus.publish("anomalies", ev.to_dict())

    def _publish(self, rec: ParsedRecord, raised) -> None:
        bus = self.bus
        topic = f"records/{rec.protocol.value}"
        if bus.wants(topic):
            bus.publish(topic, rec.to_dict())
        for tag, ob in raised:
            t = f"tags/{tag}"
            if bus.wants(t):
                bus.publish(t, {"tag": tag, **ob.to_dict()})

    def drop(self, reason: str) -> None:
        with self.lock:
            self.dispatcher.drop(reason)

    def run_source(self, source: Iterable[RawFrame], realtime: bool = False,
                   stop: Optional[threading.Event] = None) -> None:
        """Consume frames until the source ends or ``stop`` is set."""
        wall0 = cap0 = None
        for frame in source:
            if stop is not None and stop.is_set():
                break
            if realtime:
                if wall0 is None:
                    wall0, cap0 = time.monotonic(), frame.capture_timestamp
                delay = (frame.capture_timestamp - cap0) - (time.monotonic() - wall0)
                if delay > 0:
                    time.sleep(delay)
            self.process_frame(frame)
        with self.lock:
            self.finished = True

    def open(self, spec: Optional[CaptureSpec] = None) -> CaptureSource:
        spec = spec or self.cfg.capture
        if spec is None:
            raise ValueError("no capture source configured")
        return CaptureSource(spec, _DropSink(self))

    def run_file(self, path: str, realtime: bool = False) -> "Engine":
        self.run_source(self.open(CaptureSpec(pcap=path)), realtime)
        return self

    # -- queries -----------------------------------------------------------

    def snapshot(self) -> dict:
        with self.lock:
            return self.graph.snapshot(self.clock)

    def summary(self) -> dict:
        with self.lock:
            d = self.dispatcher.counters()
            by_cond = Counter(ev.cond_id for ev in self.events)
            by_group = Counter(ev.group for ev in self.events)
            return {
                "frames": d["frames"],
                "records": d["records"],
                "parsed": d["parsed"],
                "unknown": d["unknown"],
                "dropped": d["dropped"],
                "malformed": d["malformed_records"],
                "tag_observations": sum(len(s) for s in self.store.series.values()),
                "tag_errors": dict(self.store.error_counts),
                "anomalies": len(self.events),
                "anomalies_by_condition": dict(sorted(by_cond.items())),
                "anomalies_by_group": dict(sorted(by_group.items(), key=lambda kv: _group_key(kv[0]))),
                "suppressed": self.conditions.suppressed,
                "condition_errors": dict(self.conditions.config_errors),
                "capture_start": self.first_ts,
                "capture_end": self.clock,
            }

    def stats(self) -> dict:
        with self.lock:
            s = self.summary()
            s["dispatcher"] = self.dispatcher.counters()
            s["conditions"] = self.conditions.stats()
            s["graph"] = {"nodes": len(self.graph.nodes), "edges": len(self.graph.edges),
                          "unattributed": self.graph.unattributed}
            if self.timing:
                s["timing"] = timing_report(self)
            return s


class _DropSink:
    """Charges capture-level drops to the engine's dispatcher under its lock."""

    def __init__(self, engine: Engine):
        self.engine = engine

    def drop(self, reason: str) -> None:
        self.engine.drop(reason)


def _group_key(g: str):
    return (0, int(g), "") if g.isdigit() else (1, 0, g)


def timing_report(engine: Engine) -> dict:
    """Per-stage means in microseconds, shaped like the timing table."""
    tm = engine.times
    cond = engine.conditions
    n = tm.frames
    us = 1e6
    n_raw_rules = len(engine.store.rules)
    n_computed = len(engine.store.computed)

    def div(a, b):
        return a / b if b else 0.0

    per_kind = {}
    for kind, total in cond.time_by_kind.items():
        per_kind[kind.value] = div(total, cond.evals_by_kind[kind]) * us
    lat = sorted(tm.latencies)
    return {
        "packets": n,
        "mean_packet_bytes": div(tm.bytes, n),
        "total_per_packet_us": div(tm.total, n) * us,
        "raw_per_tag_us": div(tm.raw, n * n_raw_rules) * us,
        "raw_per_matched_tag_us": div(tm.raw, tm.raw_obs) * us,
        "computed_per_tag_us": div(tm.computed, n * n_computed) * us,
        "computed_per_matched_tag_us": div(tm.computed, tm.computed_obs) * us,
        "conditions_per_tag_us": div(tm.conditions, tm.cond_obs) * us,
        "per_condition_us": per_kind,
        "anomalous_packets": tm.anomalous_frames,
        "latency_mean_ms": div(tm.latency_total, tm.anomalous_frames) * 1e3,
        "latency_max_ms": (lat[-1] * 1e3) if lat else 0.0,
        "packets_per_s": div(n, tm.total),
        "mbps": div(tm.bytes * 8, tm.total) / 1e6,
    }
