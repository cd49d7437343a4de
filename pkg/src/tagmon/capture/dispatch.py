"""Protocol identification and routing of payloads to parsers."""

from __future__ import annotations

from collections import Counter, deque
from typing import Dict, List, Mapping, Optional, Tuple

from ..protocols import FRAMERS, FlowMeta, MalformedRecord, ParsedRecord, ProtocolId, StreamFramer, make_parsers
from ..protocols.fmsg import DEFAULT_PORT as FMSG_PORT
from ..protocols.goose import GOOSE_ETHERTYPE
from .frames import RawFrame, Transport
from .reassembly import GAP, MAX_SEGMENTS, MAX_WAIT, TcpReassembler

DEDUP_WINDOW = 0.001


def default_port_table(fmsg_port: int = FMSG_PORT) -> Dict[Tuple[str, int], ProtocolId]:
    table = {
        ("TCP", 502): ProtocolId.MODBUS_TCP,
        ("TCP", 20000): ProtocolId.DNP3,
        ("UDP", 20000): ProtocolId.DNP3,
        ("TCP", fmsg_port): ProtocolId.FMSG,
    }
    for port in (4712, 4713):
        table[("TCP", port)] = ProtocolId.C37118
        table[("UDP", port)] = ProtocolId.C37118
    return table


def detect_protocol(frame: RawFrame, port_table: Mapping[Tuple[str, int], ProtocolId]) -> ProtocolId:
    """Classify by ethertype for layer-2 frames, otherwise by destination then source port."""
    transport = frame.transport
    if transport is Transport.ETHERNET_ONLY:
        return ProtocolId.GOOSE if frame.ethertype == GOOSE_ETHERTYPE else ProtocolId.UNKNOWN
    key = "TCP" if transport is Transport.TCP else "UDP"
    proto = port_table.get((key, frame.dst_port))
    if proto is None:
        proto = port_table.get((key, frame.src_port), ProtocolId.UNKNOWN)
    return proto


class _Flow:
    __slots__ = ("reasm", "framer", "proto")

    def __init__(self, proto, max_segments, max_wait):
        self.proto = proto
        self.reasm = TcpReassembler(max_segments, max_wait)
        self.framer = StreamFramer(FRAMERS[proto])


class Dispatcher:
    """Turns decoded frames into parsed records, in capture order per flow.

    Every frame lands in exactly one of ``parsed`` (handed to a parser path),
    ``dropped`` (by reason) or ``unknown``. Record-level failures are counted
    in ``malformed`` and do not change the frame accounting.
    """

    def __init__(self, port_table: Optional[Mapping] = None, modbus_ports=(502,),
                 max_segments: int = MAX_SEGMENTS, max_wait: float = MAX_WAIT,
                 dedup_window: float = DEDUP_WINDOW):
        self.port_table = dict(port_table) if port_table is not None else default_port_table()
        self.parsers = make_parsers(modbus_ports)
        self.flows: Dict[tuple, _Flow] = {}
        self.max_segments = max_segments
        self.max_wait = max_wait
        self.dedup_window = dedup_window
        self._recent: Dict[bytes, float] = {}
        self._recent_order: deque = deque()
        self.frames = 0
        self.parsed = 0
        self.unknown = 0
        self.dropped: Counter = Counter()
        self.malformed: Counter = Counter()
        self.records: Counter = Counter()
        self._pending_flows = 0

    @property
    def losses(self) -> int:
        return sum(f.reasm.losses for f in self.flows.values())

    def drop(self, reason: str) -> None:
        """Account for a frame rejected before decoding (pcap or header errors)."""
        self.frames += 1
        self.dropped[reason] += 1

    def _is_duplicate(self, frame: RawFrame) -> bool:
        ts = frame.capture_timestamp
        recent = self._recent
        order = self._recent_order
        horizon = ts - self.dedup_window
        while order and order[0][0] < horizon:
            old_ts, key = order.popleft()
            if recent.get(key) == old_ts:
                del recent[key]
        key = frame.link_payload
        prev = recent.get(key)
        recent[key] = ts
        order.append((ts, key))
        return prev is not None and ts - prev <= self.dedup_window

    def dispatch(self, frame: RawFrame) -> List[ParsedRecord]:
        self.frames += 1
        if self.dedup_window > 0 and self._is_duplicate(frame):
            self.dropped["span_duplicate"] += 1
            return []
        proto = detect_protocol(frame, self.port_table)
        if proto is ProtocolId.UNKNOWN:
            self.unknown += 1
            return []
        out: List[ParsedRecord] = []
        ts = frame.capture_timestamp
        if frame.transport is Transport.TCP:
            if self._pending_flows:
                self._expire(ts, out)
            key = frame.flow
            flow = self.flows.get(key)
            if flow is None:
                flow = self.flows[key] = _Flow(proto, self.max_segments, self.max_wait)
            if not frame.payload:
                flow.reasm.push(frame.tcp_seq, b"", ts, frame.tcp_flags)
                self.dropped["no_payload"] += 1
                return out
            self.parsed += 1
            had_pending = bool(flow.reasm.pending)
            chunks = flow.reasm.push(frame.tcp_seq, frame.payload, ts, frame.tcp_flags)
            self._pending_flows += bool(flow.reasm.pending) - had_pending
            if chunks:
                self._feed(flow, key, chunks, frame.seq, out)
            return out
        self.parsed += 1
        if frame.transport is Transport.UDP:
            meta = FlowMeta(ts, frame.src_ip, frame.dst_ip, frame.src_port, frame.dst_port, frame.seq)
        else:
            meta = FlowMeta(ts, frame.src_mac, frame.dst_mac, None, None, frame.seq)
        self._parse(proto, frame.payload, meta, out)
        return out

    def _feed(self, flow: _Flow, key, chunks, raw_ref, out):
        src_ip, sport, dst_ip, dport = key
        framer = flow.framer
        for data, ts in chunks:
            if data is GAP:
                framer.reset()
                continue
            bad = framer.malformed
            for msg in framer.feed(data):
                self._parse(flow.proto, msg, FlowMeta(ts, src_ip, dst_ip, sport, dport, raw_ref), out)
            if framer.malformed != bad:
                self.malformed[flow.proto._value_] += framer.malformed - bad

    def _parse(self, proto, payload, meta, out):
        try:
            rec = self.parsers[proto].parse(payload, meta)
        except MalformedRecord:
            self.malformed[proto._value_] += 1
            return
        # _value_ is the plain attribute behind .value (a descriptor, slow per record)
        self.records[proto._value_] += 1
        out.append(rec)

    def _expire(self, now, out):
        n = 0
        for key, flow in self.flows.items():
            if flow.reasm.pending:
                chunks = flow.reasm.expire(now)
                if chunks:
                    self._feed(flow, key, chunks, 0, out)
                n += bool(flow.reasm.pending)
        self._pending_flows = n

    def counters(self) -> dict:
        return {
            "frames": self.frames,
            "parsed": self.parsed,
            "unknown": self.unknown,
            "dropped": dict(self.dropped),
            "malformed_records": dict(self.malformed),
            "records": dict(self.records),
            "tcp_losses": self.losses,
            "tcp_duplicates": sum(f.reasm.duplicates for f in self.flows.values()),
            "dnp3_unsupported": self.parsers[ProtocolId.DNP3].unsupported,
        }
