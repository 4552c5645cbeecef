"""Configuration, caching, campaigns, reports and the command line."""
from .config import ConfigError, ScenarioConfig, parse_config, serialize_config
from .campaign import run_scenario
