"""Attack scenarios and their ground-truth expectations."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

# Expected violated condition groups per scenario. Scenarios 9, 13, 14 and
# 15 have a documented condition; the remaining rows follow the ordering of
# the condition table and are marked as inferred.
EXPECTED: Dict[int, Tuple[Tuple[str, ...], bool]] = {
    1: (("1",), False),
    2: (("2",), False),
    3: (("3",), False),
    4: (("4",), False),
    5: (("5",), False),
    6: (("5",), False),
    7: (("6", "16"), False),
    8: (("7",), False),
    9: (("8", "17"), True),
    10: (("9",), False),
    11: (("10",), False),
    12: (("11",), False),
    13: (("12",), True),
    14: (("13",), True),
    15: (("15",), True),
}
# Rows whose documented mapping covers only part of the expectation.
PARTLY_STATED = {9: ("8",)}


@dataclass(frozen=True)
class ScenarioSpec:
    scenario_id: int
    name: str
    category: str                    # FDI, FCI or DoS
    targets: Tuple[str, ...]
    affected_tags: Tuple[str, ...]
    scale: float = 1.0
    drop_probability: float = 0.0
    delay: Tuple[float, float] = (0.0, 0.0)   # uniform bounds, seconds
    replay_probability: float = 0.0
    replay_offset: Tuple[float, float] = (0.0, 0.0)
    forge_period: float = 0.0
    mode: str = ""                   # free-form manipulation label


SCENARIOS: Dict[int, ScenarioSpec] = {s.scenario_id: s for s in (
    ScenarioSpec(1, "PMU measurement falsified at the source", "FDI", ("PMU1",),
                 ("1.PMU1",), scale=1.1, mode="scale"),
    ScenarioSpec(2, "PMU frames dropped", "DoS", ("PMU1",), ("1.PMU1",),
                 drop_probability=0.5, mode="drop"),
    ScenarioSpec(3, "PDC serves falsified PMU registers", "FDI", ("PDC",), ("2", "2.PMU1"),
                 scale=1.1, mode="scale"),
    ScenarioSpec(4, "data concentrator forwards falsified PMU values", "FDI", ("SEL-3505",),
                 ("3", "3.PMU1"), scale=1.1, mode="scale"),
    ScenarioSpec(5, "relay ignores breaker commands", "FCI", ("Relay1",), ("7s.Relay1",),
                 mode="ignore"),
    ScenarioSpec(6, "relay executes breaker commands late", "FCI", ("Relay1",), ("7s.Relay1",),
                 delay=(2.0, 2.0), mode="delay"),
    ScenarioSpec(7, "SEL-2240 reports falsified currents", "FDI", ("SEL-2240",),
                 ("15", "15c.Relay1", "15c.Relay2", "15m"), scale=1.1, mode="scale"),
    ScenarioSpec(8, "SEL-2240 reports frozen breaker status", "FDI", ("SEL-2240",),
                 ("15", "15s.Relay1", "15s.Relay2"), mode="freeze"),
    ScenarioSpec(9, "SEL-2240 discards HMI commands", "FCI", ("SEL-2240",),
                 ("4.Relay1", "4.Relay2", "20.Relay1", "20.Relay2"), mode="drop"),
    ScenarioSpec(10, "SEL-3530 reports falsified currents", "FDI", ("SEL-3530",),
                 ("17", "17c.Relay3", "17c.Relay4", "17c.Relay5"), scale=1.1, mode="scale"),
    ScenarioSpec(11, "SEL-3530 reports frozen breaker status", "FDI", ("SEL-3530",),
                 ("17", "17s.Relay3", "17s.Relay4", "17s.Relay5"), mode="freeze"),
    ScenarioSpec(12, "SEL-3530 discards HMI commands", "FCI", ("SEL-3530",),
                 ("8.Relay3", "8.Relay4", "8.Relay5"), mode="drop"),
    ScenarioSpec(13, "in-path delay of SEL-3530 polls", "DoS", ("SEL-3530",),
                 ("9.Relay3", "9.Relay4", "9.Relay5"), delay=(0.05, 0.4), mode="mitm-delay"),
    ScenarioSpec(14, "in-path replay of SEL-3530 reports", "DoS", ("SEL-3530",), ("17",),
                 replay_probability=0.5, replay_offset=(0.01, 0.3), mode="mitm-replay"),
    ScenarioSpec(15, "forged breaker commands from an intruder", "FCI", ("Relay3", "Relay4"),
                 ("19.Relay3", "19.Relay4"), forge_period=4.0, mode="forge"),
)}


def attack_window(duration: float) -> Tuple[float, float]:
    """Active interval used for every scenario: the middle third of the run."""
    return (duration / 3.0, 2.0 * duration / 3.0)


def scenario(sid: int) -> ScenarioSpec:
    try:
        return SCENARIOS[sid]
    except KeyError:
        raise ValueError(f"scenario must be 1-15, got {sid}") from None


@dataclass
class Manifest:
    """Ground truth for one generated capture.

    Times in ``intervals`` are relative to ``epoch``, the capture timestamp
    of simulation time zero.
    """

    seed: int
    duration: float
    epoch: float
    scenario: Optional[int] = None
    name: str = "normal"
    intervals: List[Tuple[float, float]] = field(default_factory=list)
    affected_tags: List[str] = field(default_factory=list)
    expected_conditions: List[str] = field(default_factory=list)
    stated_conditions: List[str] = field(default_factory=list)
    inferred: bool = False
    frames: int = 0
    notes: Dict[str, object] = field(default_factory=dict)

    def absolute_intervals(self) -> List[Tuple[float, float]]:
        return [(self.epoch + a, self.epoch + b) for a, b in self.intervals]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["intervals"] = [list(iv) for iv in self.intervals]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        d = dict(d)
        d["intervals"] = [tuple(iv) for iv in d.get("intervals", [])]
        return cls(**d)


def manifest_for(sid: Optional[int], seed: int, duration: float, epoch: float) -> Manifest:
    m = Manifest(seed=seed, duration=duration, epoch=epoch)
    if sid is None:
        return m
    spec = scenario(sid)
    groups, stated = EXPECTED[sid]
    m.scenario = sid
    m.name = spec.name
    m.intervals = [attack_window(duration)]
    m.affected_tags = list(spec.affected_tags)
    m.expected_conditions = list(groups)
    if stated:
        m.stated_conditions = list(PARTLY_STATED.get(sid, groups))
    m.inferred = set(m.stated_conditions) != set(groups)
    return m
