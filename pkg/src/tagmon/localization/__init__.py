"""Anomaly localization on the observed communication graph."""

from .graph import CommGraph, RuleFallback, build_graph, export_graph_snapshot, max_edge

__all__ = ["CommGraph", "RuleFallback", "build_graph", "export_graph_snapshot", "max_edge"]
