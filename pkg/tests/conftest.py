import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, os.path.dirname(__file__))

ROOT = Path(__file__).resolve().parent.parent
CONFIG = ROOT / "configs" / "testbed.yaml"


@pytest.fixture(scope="session")
def config_path():
    return CONFIG


@pytest.fixture(scope="session")
def engine_config():
    from tagmon.service import load_config

    return load_config(CONFIG)


@pytest.fixture(scope="session")
def short_normal():
    """60 s of normal testbed traffic."""
    from tagmon.testbed import simulate

    return simulate(60.0, seed=3)


@pytest.fixture(scope="session")
def short_normal_pcap(tmp_path_factory, short_normal):
    pcap, _ = short_normal.write(tmp_path_factory.mktemp("normal"))
    return pcap


@pytest.fixture(scope="session")
def scenario_capture(tmp_path_factory):
    """Factory: (scenario, duration, seed) -> (pcap path, SimResult), generated once each."""
    from tagmon.testbed import simulate

    cache = {}
    out_dir = tmp_path_factory.mktemp("scenarios")

    def make(sid, duration=60.0, seed=1):
        key = (sid, duration, seed)
        if key not in cache:
            res = simulate(duration, seed, sid)
            pcap, _ = res.write(out_dir, stem=f"s{sid}_{int(duration)}_{seed}")
            cache[key] = (pcap, res)
        return cache[key]
    return make
