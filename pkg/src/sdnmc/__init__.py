"""Explicit-state model checking of SDN controller programs."""
from .controllers import PROGRAMS, HandlerOutput, Program, make_program
from .errors import (
    CqOverflow,
    DropPort,
    Inconclusive,
    ModelError,
    NotEnabled,
    ReplayDiverged,
    ScenarioError,
    TableFull,
    UnknownLocation,
)
from .explorer import Explorer, Holds, Options, ResourceLimit, RunStats, Violated, compare_modes, explore, replay
from .model import Packet, PacketSchema, Rule, SystemState, pack, state_fingerprint, unpack
from .por import PorContext, validate_order_sensitivity
from .prop import Property, parse_property
from .scenario import Scenario, build, format_scenario, load_scenario, parse_scenario
from .semantics import Action, Model
from .topology import DROP, Location, NodeId, Topology, chain, replicas

__version__ = "0.1.0"
