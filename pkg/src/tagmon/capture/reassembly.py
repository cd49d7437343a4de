"""Minimal per-direction TCP stream reassembly.

No window or SACK tracking: segments are ordered by sequence number,
duplicates are discarded and holes are given up on after a bounded wait.
"""

from __future__ import annotations

from typing import List, Optional, Tuple

from .frames import TCP_SYN

GAP = None  # marker delivered in place of lost bytes
MAX_SEGMENTS = 64
MAX_WAIT = 1.0


def _rel(a: int, b: int) -> int:
    """Signed distance a - b in 32-bit sequence space."""
    d = (a - b) & 0xFFFFFFFF
    return d - 0x100000000 if d & 0x80000000 else d


class TcpReassembler:
    __slots__ = ("next_seq", "pending", "oldest", "duplicates", "losses",
                 "max_segments", "max_wait")

    def __init__(self, max_segments: int = MAX_SEGMENTS, max_wait: float = MAX_WAIT):
        self.next_seq: Optional[int] = None
        self.pending = {}  # seq -> (data, arrival ts)
        self.oldest = 0.0
        self.duplicates = 0
        self.losses = 0
        self.max_segments = max_segments
        self.max_wait = max_wait

    def push(self, seq: int, data: bytes, ts: float, flags: int = 0) -> List[Tuple[Optional[bytes], float]]:
        if flags & TCP_SYN:
            self.next_seq = (seq + 1) & 0xFFFFFFFF
            seq = self.next_seq
        if not data:
            return []
        if self.next_seq is None:
            self.next_seq = seq
        out: List[Tuple[Optional[bytes], float]] = []
        d = _rel(seq, self.next_seq)
        if d < 0:
            if d + len(data) <= 0:
                self.duplicates += 1
                return out
            data = data[-d:]
            seq = self.next_seq
            d = 0
        if d == 0:
            out.append((data, ts))
            self.next_seq = (seq + len(data)) & 0xFFFFFFFF
            if self.pending:
                self._drain(ts, out)
            return out
        if seq in self.pending:
            self.duplicates += 1
            return out
        if not self.pending:
            self.oldest = ts
        self.pending[seq] = (data, ts)
        if len(self.pending) > self.max_segments or ts - self.oldest > self.max_wait:
            self._skip_gap(ts, out)
        return out

    def expire(self, now: float) -> List[Tuple[Optional[bytes], float]]:
        """Give up on a hole that has been open longer than the wait limit."""
        out: List[Tuple[Optional[bytes], float]] = []
        if self.pending and now - self.oldest > self.max_wait:
            self._skip_gap(now, out)
        return out

    def _skip_gap(self, ts, out):
        first = min(self.pending, key=lambda s: _rel(s, self.next_seq))
        self.losses += 1
        out.append((GAP, ts))
        self.next_seq = first
        self._drain(ts, out)

    def _drain(self, ts, out):
        pending = self.pending
        while pending:
            nxt = self.next_seq
            best = None
            for s in pending:
                d = _rel(s, nxt)
                if d <= 0 and (best is None or d < best[0]):
                    best = (d, s)
            if best is None:
                break
            d, s = best
            data, _arr = pending.pop(s)
            if d + len(data) <= 0:
                self.duplicates += 1
                continue
            data = data[-d:] if d else data
            out.append((data, ts))
            self.next_seq = (nxt + len(data)) & 0xFFFFFFFF
        if pending:
            self.oldest = min(a for _, a in pending.values())
