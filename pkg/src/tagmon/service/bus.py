"""In-process publish/subscribe with bounded per-subscriber buffers.

Publishing never blocks: a subscriber whose buffer is full is disconnected
and receives a final overflow notice instead of the message.
"""

from __future__ import annotations

import itertools
import json
import threading
from collections import deque
from typing import Deque, Iterable, List, Optional, Tuple

OVERFLOW_TOPIC = "$control/overflow"


def topic_matches(pattern: str, topic: str) -> bool:
    """MQTT-style matching: ``+`` is one level, a trailing ``#`` any remainder."""
    if pattern == topic or pattern == "#":
        return True
    pp = pattern.split("/")
    tp = topic.split("/")
    for i, p in enumerate(pp):
        if p == "#":
            return True
        if i >= len(tp):
            return False
        if p != "+" and p != tp[i]:
            return False
    return len(pp) == len(tp)


class Subscription:
    def __init__(self, bus: "Bus", patterns: Tuple[str, ...], maxlen: int):
        self.bus = bus
        self.patterns = patterns
        self.maxlen = maxlen
        self.queue: Deque[Tuple[str, str]] = deque()
        self.closed = False
        self.reason: Optional[str] = None
        self.delivered = 0
        self._cv = threading.Condition()

    def wants(self, topic: str) -> bool:
        return any(topic_matches(p, topic) for p in self.patterns)

    def _offer(self, topic: str, line: str) -> bool:
        with self._cv:
            if self.closed:
                return False
            if len(self.queue) >= self.maxlen:
                self.queue.append((OVERFLOW_TOPIC, json.dumps(
                    {"topic": OVERFLOW_TOPIC, "payload": {"reason": "overflow", "buffer": self.maxlen,
                                                          "delivered": self.delivered}})))
                self.closed = True
                self.reason = "overflow"
                self._cv.notify_all()
                return False
            self.queue.append((topic, line))
            self._cv.notify()
            return True

    def get(self, timeout: Optional[float] = None) -> Optional[Tuple[str, str]]:
        """Next (topic, line), or None on timeout or after the final message of a closed feed."""
        with self._cv:
            if not self.queue and not self.closed:
                self._cv.wait(timeout)
            if self.queue:
                self.delivered += 1
                return self.queue.popleft()
            return None

    def drain(self) -> List[Tuple[str, str]]:
        with self._cv:
            out = list(self.queue)
            self.delivered += len(out)
            self.queue.clear()
            return out

    def close(self, reason: str = "unsubscribed") -> None:
        with self._cv:
            self.closed = True
            self.reason = self.reason or reason
            self._cv.notify_all()
        self.bus._remove(self)


class Bus:
    def __init__(self, buffer: int = 10000):
        self.buffer = buffer
        self._subs: List[Subscription] = []
        self._lock = threading.Lock()
        self._seq = itertools.count(1)
        self.published = 0
        self.overflows = 0

    def subscribe(self, patterns: Iterable[str], buffer: Optional[int] = None) -> Subscription:
        pats = tuple(patterns) or ("#",)
        sub = Subscription(self, pats, buffer or self.buffer)
        with self._lock:
            self._subs = self._subs + [sub]
        return sub

    def _remove(self, sub: Subscription) -> None:
        with self._lock:
            self._subs = [s for s in self._subs if s is not sub]

    def active(self) -> bool:
        return bool(self._subs)

    def wants(self, topic: str) -> bool:
        return any(s.wants(topic) for s in self._subs)

    def publish(self, topic: str, payload) -> int:
        """Deliver to every matching subscriber; returns how many accepted it."""
        subs = self._subs
        if not subs:
            return 0
        targets = [s for s in subs if s.wants(topic)]
        if not targets:
            return 0
        line = json.dumps({"topic": topic, "seq": next(self._seq), "payload": payload},
                          separators=(",", ":"))
        self.published += 1
        n = 0
        for s in targets:
            if s._offer(topic, line):
                n += 1
            elif s.reason == "overflow":
                self.overflows += 1
                self._remove(s)
        return n
