from __future__ import annotations

from pathlib import Path

import pytest

from tagmon.conditions import Kind
from tagmon.service import load_config, loads_config
from tagmon.service.config import ConfigError

INVALID = sorted((Path(__file__).parent / "fixtures" / "invalid").glob("*.yaml"))

MINIMAL = """\
devices:
  A: 10.0.0.1
  B: [10.0.0.2]
tags:
  raw:
  - {id: v, src: A, dst: '*', protocol: modbus_tcp, addresses: 'MODBUS_HOLDING:0'}
conditions:
- {id: c, kind: threshold_value, tags_a: v, v_th: 2%, nominal: 50}
"""


def marked_line(path: Path) -> int:
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if line.rstrip().endswith("#!"):
            return n
    raise AssertionError(f"{path.name} has no #! marker")


def test_enough_fixtures():
    assert len(INVALID) >= 20


@pytest.mark.parametrize("path", INVALID, ids=[p.stem for p in INVALID])
def test_invalid_config_names_the_line(path):
    expect = path.read_text().splitlines()[0].removeprefix("# expect: ")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    msg = str(info.value)
    assert msg.startswith(f"{path}:{marked_line(path)}: "), msg
    assert expect in msg


def test_minimal_config():
    cfg = loads_config(MINIMAL)
    assert cfg.directory == {"A": ["10.0.0.1"], "B": ["10.0.0.2"]}
    (cond,) = cfg.conditions
    assert cond.kind is Kind.THRESHOLD_VALUE and cond.percent and cond.v_th == pytest.approx(0.02)
    assert cfg.rules[0].dest.addresses is None
    assert cfg.api_port == 8080 and cfg.max_obs > 0


def test_missing_file():
    with pytest.raises(ConfigError, match=":0: cannot read"):
        load_config("/nonexistent/engine.yaml")


def test_empty_document():
    with pytest.raises(ConfigError, match="<config>:1: configuration is empty"):
        loads_config("")
