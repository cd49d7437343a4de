"""Per-packet timing of the pipeline, laid out like the reference timing table."""

from __future__ import annotations

from time import perf_counter
from typing import List, Tuple

from ..capture.frames import FrameDecodeError, decode_frame
from ..capture.pcap import read_pcap
from .config import EngineConfig
from .engine import Engine, timing_report

# Reference figures printed beside measurements (microseconds unless noted).
REFERENCE_BASELINE = {
    "total_per_packet_us": 60.0,
    "raw_per_tag_us": 1.5,
    "raw_per_matched_tag_us": 58.0,
    "computed_per_tag_us": 0.87,
    "computed_per_matched_tag_us": 21.0,
    "conditions_per_tag_us": 12.3,
    "MATCH": 0.46,
    "PRE": 0.42,
    "POST": 0.62,
    "THRESHOLD": 1.0,
    "latency_mean_ms": 2.5,
    "packets_per_s": 16600.0,
    "mean_packet_bytes": 143.0,
    "mbps": 19.0,
}

ROWS: List[Tuple[str, str, str]] = [
    ("Average total processing time", "total_per_packet_us", "us"),
    ("Raw tags, per tag", "raw_per_tag_us", "us"),
    ("Raw tags, per matched tag", "raw_per_matched_tag_us", "us"),
    ("Computed tags, per tag", "computed_per_tag_us", "us"),
    ("Computed tags, per matched tag", "computed_per_matched_tag_us", "us"),
    ("Conditions total, per tag", "conditions_per_tag_us", "us"),
    ("Match conditions, per tag per condition", "MATCH", "us"),
    ("Pre-conditions, per tag per condition", "PRE", "us"),
    ("Post-conditions, per tag per condition", "POST", "us"),
    ("Threshold conditions, per tag per condition", "THRESHOLD", "us"),
    ("Detection latency per anomalous packet", "latency_mean_ms", "ms"),
    ("Packets per second", "packets_per_s", ""),
    ("Mean packet size", "mean_packet_bytes", "B"),
    ("Throughput", "mbps", "Mbps"),
]


def _plain_pass(raw, cfg: EngineConfig) -> dict:
    """Whole-frame timing with no per-stage clocks inside the pipeline."""
    engine = Engine(cfg)
    total = latency = 0.0
    anomalous = nbytes = 0
    for seq, (ts, data) in enumerate(raw, 1):
        t0 = perf_counter()
        try:
            out = engine.process_frame(decode_frame(ts, data, seq))
        except FrameDecodeError:
            engine.drop("decode_error")
            out = None
        dt = perf_counter() - t0
        total += dt
        nbytes += len(data)
        if out:
            anomalous += 1
            latency += dt
    return {"total": total, "bytes": nbytes, "anomalous": anomalous, "latency": latency,
            "events": len(engine.events)}


def bench(pcap_path: str, cfg: EngineConfig) -> dict:
    """Replay ``pcap_path`` twice; file reading is excluded from all figures.

    The headline rows (total per packet, latency, rates) come from a pass
    with the stage clocks switched off, since those clocks cost a few
    microseconds per packet themselves. A second, instrumented pass gives
    the per-stage breakdown.
    """
    raw = list(read_pcap(pcap_path))
    plain = _plain_pass(raw, cfg)
    engine = Engine(cfg, timing=True)
    decode = 0.0
    for seq, (ts, data) in enumerate(raw, 1):
        t0 = perf_counter()
        try:
            frame = decode_frame(ts, data, seq)
        except FrameDecodeError:
            engine.drop("decode_error")
            decode += perf_counter() - t0
            continue
        decode += perf_counter() - t0
        engine.process_frame(frame)
    rep = timing_report(engine)
    n = len(raw)
    rep["packets"] = n
    rep["decode_per_packet_us"] = decode / n * 1e6 if n else 0.0
    rep["instrumented_per_packet_us"] = (engine.times.total + decode) / n * 1e6 if n else 0.0
    total = plain["total"]
    rep["total_per_packet_us"] = total / n * 1e6 if n else 0.0
    rep["packets_per_s"] = n / total if total > 0 else 0.0
    rep["mbps"] = plain["bytes"] * 8 / total / 1e6 if total > 0 else 0.0
    rep["anomalous_packets"] = plain["anomalous"]
    rep["latency_mean_ms"] = plain["latency"] / plain["anomalous"] * 1e3 if plain["anomalous"] else 0.0
    per = rep.pop("per_condition_us")
    for kind in ("MATCH", "PRE", "POST"):
        rep[kind] = per.get(kind, 0.0)
    thr_n = sum(engine.conditions.evals_by_kind[k] for k in engine.conditions.evals_by_kind
                if k.value.startswith("THRESHOLD"))
    thr_t = sum(engine.conditions.time_by_kind[k] for k in engine.conditions.time_by_kind
                if k.value.startswith("THRESHOLD"))
    rep["THRESHOLD"] = thr_t / thr_n * 1e6 if thr_n else 0.0
    rep["anomalies"] = plain["events"]
    return rep


def format_report(rep: dict) -> str:
    lines = [f"{'Processing item':45s} {'measured':>12s} {'reference':>12s}"]
    for label, key, unit in ROWS:
        ref = REFERENCE_BASELINE.get(key)
        val = rep.get(key, 0.0)
        r = f"{ref:.2f}" if ref is not None else "-"
        lines.append(f"{label:45s} {val:12.2f} {r:>12s} {unit}")
    lines.append(f"packets: {rep['packets']}, anomalous packets: {rep['anomalous_packets']}, "
                 f"anomalies: {rep.get('anomalies', 0)}")
    return "\n".join(lines)
