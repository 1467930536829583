"""Small-world communication topologies for multi-agent debate."""

from .agents import AgentMessage, QARecord, SyntheticAgent, SyntheticAgentParams
from .engine import DebateConfig, run_debate, trace_stability
from .graph import Graph, Kind, TopologySpec, metrics
from .rewire import RewireMode, RewirePolicy

__version__ = "0.1.0"
