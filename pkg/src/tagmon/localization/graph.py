"""Communication graph with provenance-based anomaly counters and scores."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from ..conditions.model import AnomalyEvent
from ..protocols import ParsedRecord

Edge = Tuple[str, str, str]  # (src node, dst node, protocol)
REF_MEMORY = 500_000


class CommGraph:
    """Nodes are devices (named via ``directory``) or bare addresses.

    Every parsed record adds its endpoints and edge and remembers which
    edge its capture sequence number travelled on, so an anomaly's
    provenance can be mapped back onto the graph.
    """

    def __init__(self, directory: Optional[Mapping[str, Sequence[str]]] = None,
                 half_life: Optional[float] = None, ref_memory: int = REF_MEMORY):
        self.name_of: Dict[str, str] = {}
        for name, addrs in (directory or {}).items():
            for a in addrs:
                self.name_of[a.lower()] = name
        self.nodes: Dict[str, float] = {}
        self.edges: Dict[Edge, float] = {}
        self.labels: Dict[str, str] = {}
        self._edge_of_ref: "OrderedDict[int, Edge]" = OrderedDict()
        self._edge_cache: Dict[tuple, Edge] = {}
        self.ref_memory = ref_memory
        self.half_life = half_life
        self._decay_t: Optional[float] = None
        self.anomalies = 0
        self.unattributed = 0
        self.updates = 0

    def node_id(self, address: str) -> str:
        return self.name_of.get(address.lower(), address) if address else "?"

    def _add_node(self, n: str) -> None:
        if n not in self.nodes:
            self.nodes[n] = 0.0
            self.labels[n] = n if n in self.name_of.values() else "unknown"

    def add_edge(self, src: str, dst: str, protocol: str) -> Edge:
        s, d = self.node_id(src), self.node_id(dst)
        self._add_node(s)
        self._add_node(d)
        e = (s, d, protocol)
        if e not in self.edges:
            self.edges[e] = 0.0
        return e

    def observe(self, rec: ParsedRecord) -> Edge:
        key = (rec.source, rec.destination, rec.protocol)
        e = self._edge_cache.get(key)
        if e is None:
            if len(self._edge_cache) > 65536:
                self._edge_cache.clear()
            e = self._edge_cache[key] = self.add_edge(rec.source, rec.destination,
                                                      rec.protocol.value)
        refs = self._edge_of_ref
        ref = rec.raw_ref
        if ref not in refs:
            refs[ref] = e
            if len(refs) > self.ref_memory:
                refs.popitem(last=False)
        return e

    def edge_for_ref(self, ref: int) -> Optional[Edge]:
        return self._edge_of_ref.get(ref)

    def _decay(self, t: float) -> None:
        if not self.half_life:
            return
        if self._decay_t is not None and t > self._decay_t:
            f = math.pow(0.5, (t - self._decay_t) / self.half_life)
            for k in self.nodes:
                self.nodes[k] *= f
            for k in self.edges:
                self.edges[k] *= f
        if self._decay_t is None or t > self._decay_t:
            self._decay_t = t

    def add_event(self, ev: AnomalyEvent,
                  fallback: Optional[Callable[[AnomalyEvent], Tuple[Set[Edge], Set[str]]]] = None,
                  expected: Iterable[Edge] = ()) -> None:
        """Charge the event to every distinct edge its provenance travelled on.

        Provenance the graph no longer remembers is resolved through
        ``fallback`` (static rule edges); wildcard rules contribute their
        destination node only and are counted in ``unattributed``.
        ``expected`` adds edges a missing message should have used.
        """
        self._decay(ev.t)
        edges: Set[Edge] = set(expected)
        missing = False
        for ref in ev.provenance:
            e = self._edge_of_ref.get(ref)
            if e is None:
                missing = True
            else:
                edges.add(e)
        dest_only: Set[str] = set()
        if missing and fallback is not None:
            extra_edges, dest_only = fallback(ev)
            edges |= extra_edges
        for e in sorted(edges):
            if e not in self.edges:
                self._add_node(e[0])
                self._add_node(e[1])
            self.edges[e] = self.edges.get(e, 0.0) + 1.0
            self.nodes[e[0]] += 1.0
            self.nodes[e[1]] += 1.0
        for n in sorted(dest_only):
            self._add_node(n)
            self.nodes[n] += 1.0
            self.unattributed += 1
        self.anomalies += 1
        self.updates += 1

    def score_anomalies(self, events: Iterable[AnomalyEvent], fallback=None) -> "CommGraph":
        for ev in events:
            self.add_event(ev, fallback)
        return self

    def node_scores(self) -> Dict[str, float]:
        return _normalize(self.nodes)

    def edge_scores(self) -> Dict[Edge, float]:
        return _normalize(self.edges)

    def snapshot(self, t: Optional[float] = None) -> dict:
        ns = self.node_scores()
        es = self.edge_scores()
        return {
            "t": t,
            "anomalies": self.anomalies,
            "nodes": [{"id": n, "label": self.labels[n], "count": self.nodes[n], "score": ns[n]}
                      for n in sorted(self.nodes)],
            "edges": [{"src": e[0], "dst": e[1], "protocol": e[2], "count": self.edges[e],
                       "score": es[e]} for e in sorted(self.edges)],
        }


def _normalize(counts: Mapping) -> Dict:
    total = math.fsum(counts.values())
    if total <= 0:
        return {k: 0.0 for k in counts}
    return {k: v / total for k, v in counts.items()}


def build_graph(records: Iterable[ParsedRecord], directory=None) -> CommGraph:
    g = CommGraph(directory)
    for rec in records:
        g.observe(rec)
    return g


def export_graph_snapshot(graph: CommGraph, t: Optional[float] = None) -> dict:
    return graph.snapshot(t)


def max_edge(snapshot: dict) -> Optional[dict]:
    """Highest-scoring edge of a snapshot (first in sort order on ties)."""
    best = None
    for e in snapshot["edges"]:
        if best is None or e["score"] > best["score"]:
            best = e
    return best


class RuleFallback:
    """Static attribution through the raw rules of an event's tags."""

    def __init__(self, store, graph: CommGraph):
        self.store = store
        self.graph = graph

    def __call__(self, ev: AnomalyEvent):
        return self.static_edges({tag for tag, _, _ in ev.observations})

    def static_edges(self, tags: Iterable[str]) -> Tuple[Set[Edge], Set[str]]:
        """Edges named by the raw rules behind ``tags``, plus destinations of any-source rules."""
        edges: Set[Edge] = set()
        dest_only: Set[str] = set()
        for tag in tags:
            for raw in self.store.raw_ancestors(tag):
                rule = self.store.rule_of[raw]
                proto = rule.protocol.value
                if rule.dest.wildcard:
                    continue
                dsts = rule.dest.names
                if rule.source.wildcard:
                    dest_only.update(dsts)
                    continue
                for s in rule.source.names:
                    for d in dsts:
                        edges.add((s, d, proto))
        return edges, dest_only
