"""Built-in controller programs.

A program is a pair of pure handlers over a finite controller state (a
tuple of small ints) plus metadata: the packet header layout, the packets
hosts inject, and whether handler order can matter.
"""
from __future__ import annotations

from collections import deque
from typing import NamedTuple

from .errors import ScenarioError
from .model import CsCodec, Packet, PacketSchema, Rule
from .topology import DROP, HOST, SWITCH, Location, NodeId, Topology


class HandlerOutput(NamedTuple):
    cs: tuple
    # ((switch index, (("add"|"del", Rule) | ("barrier", xid), ...)), ...)
    messages: tuple = ()
    # ((switch index, Packet, ports), ...)
    packet_outs: tuple = ()


class _Out:
    """Collects handler effects in emission order."""

    def __init__(self, cs):
        self.cs = cs
        self.msgs: dict[int, list] = {}
        self.outs = []

    def add(self, sw, rule):
        self.msgs.setdefault(sw, []).append(("add", rule))

    def delete(self, sw, rule):
        self.msgs.setdefault(sw, []).append(("del", rule))

    def barrier(self, sw, xid):
        self.msgs.setdefault(sw, []).append(("barrier", xid))

    def packet_out(self, sw, pkt, ports):
        self.outs.append((sw, pkt, tuple(sorted(set(ports)))))

    def done(self) -> HandlerOutput:
        return HandlerOutput(
            tuple(self.cs),
            tuple((sw, tuple(m)) for sw, m in sorted(self.msgs.items())),
            tuple(self.outs),
        )


def _bit_width(n):
    return max(1, (n - 1).bit_length())


class Program:
    name = "program"
    variants: tuple = ("default",)
    order_sensitive = False

    def __init__(self, topo: Topology, params: dict | None = None):
        self.topo = topo
        self.params = dict(params or {})
        self.variant = self.params.get("variant", self.variants[0])
        if self.variant not in self.variants:
            raise ScenarioError(
                f"program {self.name}: unknown variant {self.variant!r} (expected one of {', '.join(self.variants)})"
            )
        self.schema = self.make_schema()
        self.codec = CsCodec(self.cs_widths())

    # --- parameters -------------------------------------------------------
    def _host_param(self, key, default):
        name = self.params.get(key, default)
        if not self.topo.has_node(name):
            raise ScenarioError(f"program {self.name}: {key} = {name!r} is not a node")
        node = self.topo.node(name)
        if node.kind != HOST:
            raise ScenarioError(f"program {self.name}: {key} = {name!r} is not a host")
        return node.index

    def _switch_param(self, key, default):
        name = self.params.get(key, default)
        if not self.topo.has_node(name) or self.topo.node(name).kind != SWITCH:
            raise ScenarioError(f"program {self.name}: {key} = {name!r} is not a switch")
        return self.topo.node(name).index

    # --- interface --------------------------------------------------------
    def make_schema(self) -> PacketSchema:
        raise NotImplementedError

    def cs_widths(self):
        return ()

    def initial_cs(self) -> tuple:
        return tuple(0 for _ in self.cs_widths())

    def initial_rules(self) -> dict:
        return {}

    def representatives(self) -> list:
        """(host index, port, header) triples that hosts keep sending."""
        raise NotImplementedError

    def pkt_in(self, cs, sw: int, pkt: Packet) -> HandlerOutput:
        raise NotImplementedError

    def barrier_in(self, cs, sw: int, xid: int) -> HandlerOutput:
        return HandlerOutput(cs)

    def ctrl_names(self) -> tuple:
        return ()

    def ctrl_pred(self, name, cs, args) -> bool:
        raise ScenarioError(f"program {self.name} has no controller predicate {name!r}")

    def ctrl_view(self, cs, name):
        """The part of ``cs`` a controller predicate called ``name`` reads."""
        return cs

    def declare(self) -> dict:
        return {
            "name": self.name,
            "variant": self.variant,
            "order_sensitive": self.order_sensitive,
            "packet_schema": self.schema,
            "representatives": self.representatives(),
            "cs_width": self.codec.width,
        }

    def all_switches(self):
        return range(self.topo.n_switches)

    def _sends_from(self, host, header):
        return [(host, p, header) for p in self.topo.ports(NodeId(HOST, host))]


class StatelessFirewall(Program):
    """Blocks SSH with a high-priority drop rule; the buggy variant sends the
    drop rule behind another FlowMod instead of before a barrier."""

    name = "stateless_firewall"
    variants = ("buggy", "fixed")

    def make_schema(self):
        return PacketSchema([("SSH", 1)])

    def representatives(self):
        client = self._host_param("client", self.topo.hosts[0])
        return self._sends_from(client, (1,)) + self._sends_from(client, (0,))

    def rules(self):
        rule1 = Rule.make(10, [DROP], "rule1", SSH=1)
        rule2 = Rule.make(1, [2], "rule2", in_port=1)
        rule3 = Rule.make(1, [1], "rule3", in_port=2)
        return rule1, rule2, rule3

    def pkt_in(self, cs, sw, pkt):
        out = _Out(cs)
        if not pkt.header[0]:
            out.packet_out(sw, pkt, [2])
        rule1, rule2, rule3 = self.rules()
        for s in self.all_switches():
            if self.variant == "buggy":
                out.add(s, rule2)
                out.add(s, rule1)
                out.barrier(s, 1)
                out.add(s, rule3)
            else:
                out.add(s, rule1)
                out.barrier(s, 1)
                out.add(s, rule2)
                out.add(s, rule3)
        return out.done()


class StatefulFirewall(Program):
    """Whitelisted connections get forward and reverse rules on every
    replica; anything else gets a drop rule. Barrier replies record which
    replica is known to hold a connection's rules."""

    name = "stateful_firewall"

    def __init__(self, topo, params=None):
        self.topo = topo
        params = dict(params or {})
        self.allowed = self._flows(params.get("allowed", "C.0-S.0"))
        self.flows = self._flows(params.get("send", params.get("allowed", "C.0-S.0")))
        super().__init__(topo, params)
        # two different batches to the same switches can interleave differently
        self.order_sensitive = len(set(self.flows)) > 1

    def _flows(self, text):
        flows = []
        for item in text.split(","):
            item = item.strip()
            if not item:
                continue
            try:
                a, b = item.split("-")
                ha, pa = a.split(".")
                hb, pb = b.split(".")
                flows.append((self._host(ha), int(pa), self._host(hb), int(pb)))
            except ValueError:
                raise ScenarioError(f"program {self.name}: bad connection {item!r} (want H.port-H.port)") from None
        return flows

    def _host(self, name):
        if not self.topo.has_node(name) or self.topo.node(name).kind != HOST:
            raise ScenarioError(f"program {self.name}: {name!r} is not a host")
        return self.topo.node(name).index

    def make_schema(self):
        hw = _bit_width(self.topo.n_hosts)
        return PacketSchema(
            [("src", hw, True), ("src_tcp", 1), ("dest", hw, True), ("dest_tcp", 1)]
        )

    def cs_widths(self):
        return (max(1, len(self.allowed) * self.topo.n_switches),)

    def representatives(self):
        reps = []
        for f in self.flows:
            reps += self._sends_from(f[0], f)
        return reps

    def _view_bit(self, conn, sw):
        return 1 << (conn * self.topo.n_switches + sw)

    def pkt_in(self, cs, sw, pkt):
        out = _Out(cs)
        src, src_tcp, dest, dest_tcp = pkt.header
        conn = pkt.header
        if conn in self.allowed:
            b_id = self.allowed.index(conn) + 1
            out.packet_out(sw, pkt, [2])
            rule1 = Rule.make(2, [2], "rule1", src=src, src_tcp=src_tcp, dest=dest, dest_tcp=dest_tcp)
            rule2 = Rule.make(2, [1], "rule2", src=dest, src_tcp=dest_tcp, dest=src, dest_tcp=src_tcp)
            for s in self.all_switches():
                out.add(s, rule1)
                out.add(s, rule2)
                out.barrier(s, b_id)
        else:
            out.packet_out(sw, pkt, [DROP])
            drop_rule = Rule.make(1, [DROP], "drop_rule", src=src, src_tcp=src_tcp, dest=dest, dest_tcp=dest_tcp)
            for s in self.all_switches():
                out.add(s, drop_rule)
        return out.done()

    def barrier_in(self, cs, sw, xid):
        if not 1 <= xid <= len(self.allowed):
            return HandlerOutput(cs)
        return HandlerOutput((cs[0] | self._view_bit(xid - 1, sw),))

    def ctrl_names(self):
        return ("controller_view",)

    def ctrl_pred(self, name, cs, args):
        if name != "controller_view":
            return super().ctrl_pred(name, cs, args)
        pkt, sw = args
        if pkt.header not in self.allowed:
            return False
        return bool(cs[0] & self._view_bit(self.allowed.index(pkt.header), sw.index))


class MacLearning(Program):
    """Learns host positions per switch from packet sources, floods unknown
    destinations and installs a unicast rule once the destination is known."""

    name = "mac_learning"
    order_sensitive = True
    PORT_BITS = 4

    def make_schema(self):
        hw = _bit_width(self.topo.n_hosts)
        return PacketSchema(
            [("src", hw, True), ("dest", hw, True)], history=True, n_switches=self.topo.n_switches
        )

    def cs_widths(self):
        return (self.PORT_BITS,) * (self.topo.n_switches * self.topo.n_hosts)

    def representatives(self):
        reps = []
        for h in range(self.topo.n_hosts):
            for d in range(self.topo.n_hosts):
                if d != h:
                    reps += self._sends_from(h, (h, d))
        return reps

    def pkt_in(self, cs, sw, pkt):
        table = list(cs)
        src, dest = pkt.header
        row = sw * self.topo.n_hosts
        if not table[row + src]:
            table[row + src] = pkt.in_port
        out = _Out(table)
        port = table[row + dest]
        if port:
            out.packet_out(sw, pkt, [port])
            out.add(sw, Rule.make(1, [port], "", src=src, dest=dest, in_port=pkt.in_port))
        else:
            flood = [p for p in self.topo.ports(NodeId(SWITCH, sw)) if p != pkt.in_port]
            if flood:
                out.packet_out(sw, pkt, flood)
        return out.done()

    def ctrl_names(self):
        return ("mac_table",)

    def ctrl_pred(self, name, cs, args):
        if name != "mac_table":
            return super().ctrl_pred(name, cs, args)
        sw, host, port = args
        return cs[sw.index * self.topo.n_hosts + host.index] == port


class SshGuard(Program):
    """Drops SSH traffic to the server once, guarded by a flag. The
    wrong-nesting variant attaches an else branch to the flag test that
    forwards later SSH requests."""

    name = "ssh_guard"
    variants = ("wrongnest", "fixed")
    order_sensitive = True

    def make_schema(self):
        return PacketSchema([("SSH", 1), ("dest", _bit_width(self.topo.n_hosts), True)])

    def cs_widths(self):
        return (1,)

    def representatives(self):
        client = self._host_param("client", self.topo.hosts[0])
        server = self._host_param("server", self.topo.hosts[-1])
        return self._sends_from(client, (1, server)) + self._sends_from(client, (0, server))

    def pkt_in(self, cs, sw, pkt):
        server = self._host_param("server", self.topo.hosts[-1])
        ssh, dest = pkt.header
        out = _Out(cs)
        if ssh and dest == server:
            if not cs[0]:
                out.cs = (1,)
                drop_rule = Rule.make(1, [DROP], "drop_rule", SSH=ssh, dest=dest)
                for s in self.all_switches():
                    out.add(s, drop_rule)
                    out.barrier(s, 1)
            elif self.variant == "wrongnest":
                out.packet_out(sw, pkt, [2])
                rule = Rule.make(2, [2], "rule", SSH=ssh, dest=dest)
                for s in self.all_switches():
                    out.add(s, rule)
        else:
            out.packet_out(sw, pkt, [2])
            rule = Rule.make(2, [2], "rule", SSH=ssh, dest=dest)
            for s in self.all_switches():
                out.add(s, rule)
        return out.done()

    def ctrl_names(self):
        return ("flag",)

    def ctrl_pred(self, name, cs, args):
        if name != "flag":
            return super().ctrl_pred(name, cs, args)
        return bool(cs[0])


class ConsistentUpdate(Program):
    """Opens a path to the server through a gate switch that drops by
    default. The fixed variant installs the gate rule first, waits for the
    barrier reply and only then releases the held packets; the buggy one
    updates both switches and forwards immediately."""

    name = "consistent_update"
    variants = ("buggy", "fixed")
    B_ID = 1

    def __init__(self, topo, params=None):
        self.max_port = max([max(topo.ports(n), default=0) for n in topo.all_nodes()] + [1])
        super().__init__(topo, params)
        self.server = self._host_param("server", topo.hosts[-1])
        self.client = self._host_param("client", topo.hosts[0])
        self.gate = self._switch_param("gate", topo.switches[-1])

    def make_schema(self):
        return PacketSchema([("dest", _bit_width(self.topo.n_hosts), True)])

    def cs_widths(self):
        slots = self.topo.n_switches * (self.max_port + 1) * self.schema.n_headers()
        return (1, slots)

    def initial_rules(self):
        return {self.gate: [Rule.make(0, [DROP], "drop_all")]}

    def representatives(self):
        return self._sends_from(self.client, (self.server,))

    def rule_s(self):
        return Rule.make(2, [2], "rule_S", dest=self.server)

    def _slot(self, sw, port, header):
        return 1 << ((sw * (self.max_port + 1) + port) * self.schema.n_headers() + self.schema.encode_header(header))

    def pkt_in(self, cs, sw, pkt):
        received, held = cs
        out = _Out(cs)
        to_server = pkt.header[0] == self.server
        if self.variant == "buggy":
            if to_server:
                for s in self.all_switches():
                    out.add(s, self.rule_s())
            out.packet_out(sw, pkt, [2])
            return out.done()
        if to_server and not received:
            slot = self._slot(sw, pkt.in_port, pkt.header)
            if not held & slot:
                out.cs = (received, held | slot)
                out.add(self.gate, self.rule_s())
                out.barrier(self.gate, self.B_ID)
        else:
            out.packet_out(sw, pkt, [2])
        return out.done()

    def barrier_in(self, cs, sw, xid):
        if self.variant == "buggy" or xid != self.B_ID:
            return HandlerOutput(cs)
        received, held = cs
        out = _Out(cs)
        for s in self.all_switches():
            if s != self.gate:
                out.add(s, self.rule_s())
        n_h = self.schema.n_headers()
        remaining = held
        for s in self.all_switches():
            for port in range(self.max_port + 1):
                for code in range(n_h):
                    header = self.schema.decode_header(code)
                    slot = self._slot(s, port, header)
                    if remaining & slot and header[0] == self.server:
                        remaining &= ~slot
                        p = Packet(header, Location(NodeId(SWITCH, s), port))
                        out.packet_out(s, p, [2])
        out.cs = (1, remaining)
        return out.done()

    def ctrl_names(self):
        return ("received",)

    def ctrl_pred(self, name, cs, args):
        if name != "received":
            return super().ctrl_pred(name, cs, args)
        return bool(cs[0])


class Relay(Program):
    """Shortest-path forwarding: every request yields a packet-out towards
    the destination and a destination rule on every switch."""

    name = "relay"

    def make_schema(self):
        return PacketSchema([("dest", _bit_width(self.topo.n_hosts), True)])

    def representatives(self):
        src = self._host_param("client", self.topo.hosts[0])
        dst = self._host_param("server", self.topo.hosts[-1])
        return self._sends_from(src, (dst,))

    def next_port(self, sw, dest_host):
        """Port of switch ``sw`` on a shortest path to host ``dest_host``."""
        start = NodeId(SWITCH, sw)
        goal = NodeId(HOST, dest_host)
        first = {start: None}
        queue = deque([start])
        while queue:
            node = queue.popleft()
            if node == goal:
                return first[node]
            for p in self.topo.ports(node):
                nxt = self.topo.next_hop((node, p)).node
                if nxt not in first and (nxt.kind == SWITCH or nxt == goal):
                    first[nxt] = p if node == start else first[node]
                    queue.append(nxt)
        return None

    def pkt_in(self, cs, sw, pkt):
        out = _Out(cs)
        dest = pkt.header[0]
        port = self.next_port(sw, dest)
        if port is None:
            return out.done()
        out.packet_out(sw, pkt, [port])
        for s in self.all_switches():
            p = self.next_port(s, dest)
            if p is not None:
                out.add(s, Rule.make(1, [p], f"r{s + 1}", dest=dest))
        return out.done()


class Constant(Program):
    """Ignores every request; useful as a degenerate reference program."""

    name = "constant"

    def __init__(self, topo, params=None):
        super().__init__(topo, params)
        # a conservative declaration is always allowed; it only disables reduction
        self.order_sensitive = str(self.params.get("order_sensitive", "false")).lower() == "true"

    def make_schema(self):
        return PacketSchema([("dest", _bit_width(self.topo.n_hosts), True)])

    def representatives(self):
        reps = []
        for h in range(self.topo.n_hosts):
            reps += self._sends_from(h, (h,))
        return reps

    def pkt_in(self, cs, sw, pkt):
        return HandlerOutput(cs)


PROGRAMS = {
    cls.name: cls
    for cls in (StatelessFirewall, StatefulFirewall, MacLearning, SshGuard, ConsistentUpdate, Relay, Constant)
}


def make_program(name, topo, params=None) -> Program:
    try:
        cls = PROGRAMS[name]
    except KeyError:
        raise ScenarioError(f"unknown program {name!r} (known: {', '.join(sorted(PROGRAMS))})") from None
    return cls(topo, params)


def pkt_in(cp: Program, cs, sw, pkt) -> HandlerOutput:
    return cp.pkt_in(cs, sw, pkt)


def barrier_in(cp: Program, cs, sw, xid) -> HandlerOutput:
    return cp.barrier_in(cs, sw, xid)


def declare(cp: Program) -> dict:
    return cp.declare()
