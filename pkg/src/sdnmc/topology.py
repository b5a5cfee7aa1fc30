"""Fixed network topology: a port-to-port map over hosts and switches."""
from __future__ import annotations

from typing import NamedTuple

from .errors import DropPort, UnknownLocation

HOST = "host"
SWITCH = "switch"

# Reserved port id. Rules and packet-outs may name it; no cable may.
DROP = 0xFFFF
MAX_PORT = 14  # ports are packed into a 16-bit mask together with DROP


class NodeId(NamedTuple):
    kind: str
    index: int


class Location(NamedTuple):
    node: NodeId
    port: int


class Topology:
    """Hosts, switches and the cables between their ports.

    Each cable is declared once and expands into both directions, so the
    resulting next-hop map is an involution.
    """

    def __init__(self, hosts, switches, cables):
        self.hosts = list(hosts)
        self.switches = list(switches)
        self.cables = [(Location(*a), Location(*b)) for a, b in cables]
        self._names = {}
        for i, name in enumerate(self.hosts):
            self._names[name] = NodeId(HOST, i)
        for i, name in enumerate(self.switches):
            self._names[name] = NodeId(SWITCH, i)
        self._lam: dict[Location, Location] = {}
        for a, b in self.cables:
            self._lam.setdefault(a, b)
            self._lam.setdefault(b, a)
        ports: dict[NodeId, set] = {}
        for loc in self._lam:
            ports.setdefault(loc.node, set()).add(loc.port)
        self._ports = {n: tuple(sorted(p)) for n, p in ports.items()}

    @property
    def n_hosts(self):
        return len(self.hosts)

    @property
    def n_switches(self):
        return len(self.switches)

    def node(self, name) -> NodeId:
        try:
            return self._names[name]
        except KeyError:
            raise UnknownLocation(f"no node named {name!r}") from None

    def has_node(self, name):
        return name in self._names

    def name(self, node: NodeId) -> str:
        names = self.hosts if node.kind == HOST else self.switches
        return names[node.index]

    def host(self, i) -> NodeId:
        return NodeId(HOST, i)

    def switch(self, i) -> NodeId:
        return NodeId(SWITCH, i)

    def all_nodes(self):
        return [NodeId(HOST, i) for i in range(self.n_hosts)] + [
            NodeId(SWITCH, i) for i in range(self.n_switches)
        ]

    def ports(self, node: NodeId) -> tuple:
        return self._ports.get(node, ())

    def locations(self):
        return sorted(self._lam)

    def next_hop(self, loc) -> Location:
        loc = Location(*loc)
        if loc.port == DROP:
            raise DropPort(f"{self.fmt(loc)}: the drop port has no next hop")
        try:
            return self._lam[loc]
        except KeyError:
            raise UnknownLocation(f"{self.fmt(loc)} is not a declared endpoint") from None

    def port_towards(self, node: NodeId, other: NodeId):
        """First port of ``node`` cabled to ``other``, or None."""
        for p in self.ports(node):
            if self._lam[Location(node, p)].node == other:
                return p
        return None

    def fmt(self, loc) -> str:
        node, port = loc
        try:
            name = self.name(node)
        except IndexError:
            name = f"{node.kind}{node.index}"
        return f"{name}:{port}"

    def validate(self) -> list[str]:
        """Every structural problem with the cable list; empty means ok."""
        errors = []
        seen: dict[Location, int] = {}
        for i, (a, b) in enumerate(self.cables):
            for end in (a, b):
                node, port = end
                count = self.n_hosts if node.kind == HOST else self.n_switches
                if node.kind not in (HOST, SWITCH) or not 0 <= node.index < count:
                    errors.append(f"cable {i}: unknown node {node}")
                if port == DROP:
                    errors.append(f"cable {i}: the drop port cannot be a cable endpoint")
                elif not 1 <= port <= MAX_PORT:
                    errors.append(f"cable {i}: port {port} outside 1..{MAX_PORT}")
                if end in seen:
                    errors.append(
                        f"cable {i}: endpoint reused {self.fmt(end)} (first used by cable {seen[end]})"
                    )
                else:
                    seen[end] = i
            if a == b:
                errors.append(f"cable {i}: connects {self.fmt(a)} to itself")
        # totality and injectivity over the declared endpoints
        images = {}
        for loc in self._lam:
            tgt = self._lam[loc]
            if tgt not in self._lam:
                errors.append(f"{self.fmt(loc)} maps to undeclared {self.fmt(tgt)}")
            if tgt in images:
                errors.append(f"{self.fmt(tgt)} is the image of two endpoints")
            images[tgt] = loc
        return errors

    def check_ports(self, node: NodeId, ports) -> list[str]:
        """Cross-check hook: ports a rule or packet-out names on ``node``."""
        declared = set(self.ports(node))
        return [
            f"port {p} is not declared on {self.name(node)}"
            for p in ports
            if p != DROP and p not in declared
        ]

    def __eq__(self, other):
        return (
            isinstance(other, Topology)
            and self.hosts == other.hosts
            and self.switches == other.switches
            and sorted(self.cables) == sorted(other.cables)
        )

    def __hash__(self):
        return hash((tuple(self.hosts), tuple(self.switches)))


def chain(n_switches, n_hosts, switch_prefix="s", host_prefix="h") -> Topology:
    """A line of switches with hosts spread from one end to the other.

    Switch ports: 1 towards the left neighbour, 2 towards the right one,
    3 and up for attached hosts.
    """
    switches = [f"{switch_prefix}{i}" for i in range(n_switches)]
    hosts = [f"{host_prefix}{i}" for i in range(n_hosts)]
    cables = []
    for i in range(n_switches - 1):
        cables.append(((NodeId(SWITCH, i), 2), (NodeId(SWITCH, i + 1), 1)))
    next_port = [3] * n_switches
    for h in range(n_hosts):
        sw = 0 if n_hosts == 1 else round(h * (n_switches - 1) / (n_hosts - 1))
        cables.append(((NodeId(HOST, h), 1), (NodeId(SWITCH, sw), next_port[sw])))
        next_port[sw] += 1
    return Topology(hosts, switches, cables)


def replicas(n, client="C", server="S", prefix="F") -> Topology:
    """``n`` parallel switches between a client and a server.

    Replica i uses port 1 towards the client and port 2 towards the server;
    the hosts use port i+1 for replica i.
    """
    switches = [f"{prefix}{i + 1}" for i in range(n)]
    c, s = NodeId(HOST, 0), NodeId(HOST, 1)
    cables = []
    for i in range(n):
        sw = NodeId(SWITCH, i)
        cables.append(((c, i + 1), (sw, 1)))
        cables.append(((sw, 2), (s, i + 1)))
    return Topology([client, server], switches, cables)
