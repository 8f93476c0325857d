"""Networked instrument simulators, their client and the workflow orchestrator."""
from .client import InstrumentClient, RemoteError, Unreachable
from .instruments import CellState, InstrumentKind, InstrumentServer, serve
from .orchestrator import ConfigError, Orchestrator, RunConfig, load_config
from .protocol import WireMessage, format_message, parse_line

__all__ = [
    "CellState", "ConfigError", "InstrumentClient", "InstrumentKind", "InstrumentServer",
    "Orchestrator", "RemoteError", "RunConfig", "Unreachable", "WireMessage",
    "format_message", "load_config", "parse_line", "serve",
]
