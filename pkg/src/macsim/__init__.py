"""Discrete-event simulator for consensus over an abstract MAC layer.

Broadcasts are acknowledged within ``f_ack`` time units; schedulers decide
everything else.  See ``macsim.cli`` for the command-line entry point.
"""

from .core import CrashSpec, ExecutionTrace, SimConfig, Simulation, run_simulation
from .topology import Topology, parse_topology

__all__ = ["CrashSpec", "ExecutionTrace", "SimConfig", "Simulation", "Topology", "parse_topology", "run_simulation"]
__version__ = "0.1.0"
