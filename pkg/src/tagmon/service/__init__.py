"""Engine orchestration, configuration, query API and event feed."""

from .bus import Bus, Subscription, topic_matches
from .config import ConfigError, EngineConfig, build_config, load_config, loads_config
from .engine import Engine, timing_report

__all__ = ["Bus", "ConfigError", "Engine", "EngineConfig", "Subscription", "build_config",
           "load_config", "loads_config", "timing_report", "topic_matches"]
