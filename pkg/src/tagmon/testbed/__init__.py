"""Synthetic substation traffic with labelled attack scenarios."""

from .scenarios import EXPECTED, SCENARIOS, Manifest, ScenarioSpec, attack_window, manifest_for
from .sim import EPOCH, SimConfig, SimResult, Simulator, TopologyError, inject_scenario, simulate
from .topology import DEVICES, DeviceSpec, default_config, directory

__all__ = [
    "EXPECTED", "SCENARIOS", "Manifest", "ScenarioSpec", "attack_window", "manifest_for",
    "EPOCH", "SimConfig", "SimResult", "Simulator", "TopologyError", "inject_scenario", "simulate",
    "DEVICES", "DeviceSpec", "default_config", "directory",
]
