"""Raw-tag filter rules: which records raise which tag, with which values."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from ..protocols import Addr, ParsedRecord, ProtocolId

ANY = "*"


class RuleError(ValueError):
    """A raw-tag rule is inconsistent."""


@dataclass(frozen=True)
class EndpointSel:
    """Matches a record endpoint.

    ``addresses`` is ``None`` for the wildcard, otherwise the set of
    IP/MAC strings of the named devices. ``names`` keeps the configured
    device names for reporting and graph attribution.
    """

    names: Tuple[str, ...] = ()
    addresses: Optional[FrozenSet[str]] = None

    @property
    def wildcard(self) -> bool:
        return self.addresses is None

    def matches(self, endpoint: str) -> bool:
        return self.addresses is None or endpoint in self.addresses

    @classmethod
    def build(cls, spec, directory: Dict[str, Sequence[str]]) -> "EndpointSel":
        """``spec`` is ``"*"``, a device name, an address, or a list of those."""
        if spec == ANY:
            return cls((ANY,), None)
        items = [spec] if isinstance(spec, str) else list(spec)
        if not items:
            raise RuleError("empty endpoint list")
        addrs = set()
        for item in items:
            if item == ANY:
                raise RuleError("'*' cannot be combined with other endpoints")
            if item in directory:
                addrs.update(a.lower() for a in directory[item])
            elif looks_like_address(item):
                addrs.add(item.lower())
            else:
                raise RuleError(f"unknown device {item!r}")
        return cls(tuple(items), frozenset(addrs))


def looks_like_address(text: str) -> bool:
    parts = text.split(".")
    if len(parts) == 4 and all(p.isdigit() and int(p) < 256 for p in parts):
        return True
    parts = text.split(":")
    return len(parts) == 6 and all(len(p) == 2 for p in parts) and _is_hex("".join(parts))


def _is_hex(s: str) -> bool:
    try:
        int(s, 16)
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class AddrSel:
    """An attribute address, optionally picking one component of a tuple value."""

    addr: Addr
    component: Optional[int] = None

    @classmethod
    def parse(cls, text: str) -> "AddrSel":
        base, sep, comp = text.partition("#")
        component = None
        if sep:
            if not comp.isdigit():
                raise RuleError(f"bad component selector in {text!r}")
            component = int(comp)
        try:
            return cls(Addr.parse(base), component)
        except ValueError as exc:
            raise RuleError(str(exc)) from None

    def __str__(self):
        return str(self.addr) if self.component is None else f"{self.addr}#{self.component}"


@dataclass(frozen=True)
class RawTagRule:
    rule_id: str
    tag_id: str
    source: EndpointSel
    dest: EndpointSel
    protocol: ProtocolId
    msg_types: Optional[FrozenSet[str]]  # None matches every message type
    addresses: Tuple[AddrSel, ...]
    scale: float = 1.0

    def __post_init__(self):
        if not self.addresses:
            raise RuleError(f"rule {self.rule_id}: addresses must be non-empty")
        single = self.addresses[0] if len(self.addresses) == 1 else None
        object.__setattr__(self, "_single", single)

    def matches_header(self, rec: ParsedRecord) -> bool:
        return (rec.protocol is self.protocol
                and (self.msg_types is None or rec.msg_type in self.msg_types)
                and self.source.matches(rec.source)
                and self.dest.matches(rec.destination))

    def extract(self, values: dict):
        """Values in address order, or ``None`` if no address is present.

        Missing positions of a partially present vector are NaN. Raises
        :class:`TypeError` for values that are not scalars.
        """
        single = self._single
        if single is not None:
            v = values.get(single.addr, _MISSING)
            if v is _MISSING:
                return None
            comp = single.component
            if comp is not None and type(v) is tuple and comp < len(v):
                v = v[comp]
            t = type(v)
            if t is float or t is int:
                return v * self.scale if self.scale != 1.0 else v
        out = []
        hit = False
        for sel in self.addresses:
            v = values.get(sel.addr, _MISSING)
            if v is _MISSING:
                out.append(float("nan"))
                continue
            hit = True
            if sel.component is not None:
                if not isinstance(v, tuple) or sel.component >= len(v):
                    raise TypeError(f"{sel}: no component {sel.component} in {v!r}")
                v = v[sel.component]
            if isinstance(v, bool):
                v = int(v)
            elif not isinstance(v, (int, float)):
                raise TypeError(f"{sel}: value {v!r} is not a scalar")
            if self.scale != 1.0:
                v = v * self.scale
            out.append(v)
        if not hit:
            return None
        return out[0] if len(out) == 1 else tuple(out)


_MISSING = object()


class RuleIndex:
    """Declaration-ordered rules with a memo of which rules a header can match."""

    def __init__(self, rules: Sequence[RawTagRule]):
        self.rules: List[RawTagRule] = list(rules)
        seen = set()
        for r in self.rules:
            if r.tag_id in seen:
                raise RuleError(f"tag {r.tag_id!r} is produced by more than one rule")
            seen.add(r.tag_id)
        self._memo: Dict[tuple, Tuple[RawTagRule, ...]] = {}

    def candidates(self, rec: ParsedRecord) -> Tuple[RawTagRule, ...]:
        key = (rec.source, rec.destination, rec.protocol, rec.msg_type)
        hit = self._memo.get(key)
        if hit is None:
            if len(self._memo) > 65536:
                self._memo.clear()
            hit = tuple(r for r in self.rules if r.matches_header(rec))
            self._memo[key] = hit
        return hit

    def __iter__(self):
        return iter(self.rules)

    def __len__(self):
        return len(self.rules)
