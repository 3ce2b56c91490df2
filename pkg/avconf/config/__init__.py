"""Config file parsing and run configuration."""

from avconf.config.parser import ConfigParser, ParsedConfig, parse, parse_file, parse_value
from avconf.config.run_config import RESOLVED_NAME, RunConfig, from_parsed, load, loads

__all__ = [
    "ConfigParser",
    "ParsedConfig",
    "RESOLVED_NAME",
    "RunConfig",
    "from_parsed",
    "load",
    "loads",
    "parse",
    "parse_file",
    "parse_value",
]
