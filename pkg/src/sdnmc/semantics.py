"""Guarded transition relation: enabled actions and their effects."""
from __future__ import annotations

import json
from typing import NamedTuple

from .controllers import Program
from .errors import CqOverflow, NotEnabled, ScenarioError
from .model import (
    ADD,
    DEL,
    OP_NAMES,
    Barrier,
    ControllerEnv,
    EMPTY_SWITCH,
    Interner,
    Packet,
    Packer,
    Rule,
    SwitchState,
    SystemState,
    bits,
    pack,
    unpack,
)
from .topology import DROP, HOST, SWITCH, Location, NodeId, Topology

KINDS = ("send", "recv", "match", "nomatch", "ctrl", "fwd", "add", "del", "brepl", "bsync")
_KIND_RANK = {k: i for i, k in enumerate(KINDS)}


class Action(NamedTuple):
    """One labelled transition.

    ``node`` is a host index for send/recv and a switch index otherwise.
    ``pkt`` is a packet id or -1. ``arg`` is the port (send), rule id
    (match, add, del), port tuple (fwd) or barrier xid (brepl, bsync).
    """

    kind: str
    node: int
    pkt: int = -1
    arg: object = None

    def sort_key(self):
        return (_KIND_RANK[self.kind], self.node, self.pkt, repr(self.arg))


class Model:
    """A topology bound to a controller program, with the interners that
    give packets and rules their ids."""

    def __init__(
        self,
        topo: Topology,
        program: Program,
        max_packets=65535,
        max_rules=1 << 20,
        max_cq=64,
        absorb=True,
        block_on_overflow=False,
        tie_break="smallest",
    ):
        self.topo = topo
        self.program = program
        self.schema = program.schema
        self.codec = program.codec
        self._packer = Packer(program.codec)
        self.packets = Interner(min(max_packets, 65535), "packet")
        self.rules = Interner(max_rules, "rule")
        self.max_cq = max_cq
        self.absorb = absorb
        self.block_on_overflow = block_on_overflow
        if tie_break not in ("smallest", "largest"):
            raise ValueError("tie_break must be 'smallest' or 'largest'")
        self._prefer_larger = tie_break == "largest"
        self.n_hosts = topo.n_hosts
        self.n_switches = topo.n_switches
        self._best = {}
        self._moves = {}
        self._rule_tests = {}
        self._handler = {}
        self.reps = []
        for h, port, header in program.representatives():
            errs = self.schema.check(header)
            if errs or port not in topo.ports(NodeId(HOST, h)):
                raise ScenarioError(
                    [f"representative at {topo.hosts[h]}:{port}: {e}" for e in errs]
                    or [f"representative at {topo.hosts[h]}:{port}: port not cabled"]
                )
            pid = self.intern_packet(Packet(tuple(header), Location(NodeId(HOST, h), port)))
            self.reps.append((h, port, pid))
        self.rep_set = frozenset(self.reps)
        self._initial_ft = {}
        for sw, rules in program.initial_rules().items():
            for r in rules:
                self._check_ports(sw, r.ports, f"rule {r.name or r}")
                self._initial_ft[sw] = self._initial_ft.get(sw, 0) | (1 << self.intern_rule(r))

    # --- interning --------------------------------------------------------
    def intern_packet(self, pkt: Packet) -> int:
        return self.packets.intern(pkt)

    def intern_rule(self, rule: Rule) -> int:
        return self.rules.intern(rule)

    def packet(self, pid) -> Packet:
        return self.packets.lookup(pid)

    def rule(self, rid) -> Rule:
        return self.rules.lookup(rid)

    # --- states -----------------------------------------------------------
    def initial_state(self) -> SystemState:
        switches = tuple(
            EMPTY_SWITCH._replace(ft=self._initial_ft.get(i, 0)) for i in range(self.n_switches)
        )
        ctrl = ControllerEnv(tuple(self.program.initial_cs()), frozenset(), frozenset())
        return SystemState((0,) * self.n_hosts, switches, ctrl)

    def pack(self, s: SystemState) -> bytes:
        return self._packer(s)

    def unpack(self, data: bytes) -> SystemState:
        return unpack(data, self.codec, self.n_hosts, self.n_switches)

    def logical(self, s: SystemState):
        """The state with ids replaced by the values they stand for, so that
        states from differently-seeded interners can be compared."""
        P = self.packet
        R = self.rule

        def pset(x):
            return frozenset(P(i) for i in bits(x))

        sws = []
        for sw in s.switches:
            cq = tuple(
                item if isinstance(item, Barrier) else frozenset((op, R(r)) for op, r in item)
                for item in sw.cq
            )
            sws.append(
                (
                    frozenset(R(r) for r in bits(sw.ft)),
                    pset(sw.pq),
                    frozenset((P(p), ports) for p, ports in sw.fq),
                    cq,
                )
            )
        return (
            tuple(pset(h) for h in s.hosts),
            tuple(sws),
            s.ctrl.cs,
            frozenset((i, P(p)) for i, p in s.ctrl.rq),
            s.ctrl.brq,
        )

    # --- matching ---------------------------------------------------------
    def _tests(self, rid):
        t = self._rule_tests.get(rid)
        if t is None:
            r = self.rule(rid)
            t = tuple((-1 if f == "in_port" else self.schema.index(f), v) for f, v in r.match)
            self._rule_tests[rid] = (r.priority, t)
            t = self._rule_tests[rid]
        return t

    def best_rule(self, ft: int, pid: int):
        key = (ft, pid)
        try:
            return self._best[key]
        except KeyError:
            pass
        pkt = self.packet(pid)
        best, best_prio = None, -1
        for rid in bits(ft):
            prio, tests = self._tests(rid)
            if prio < best_prio or (prio == best_prio and not self._prefer_larger):
                continue
            ok = True
            for idx, v in tests:
                if (pkt.loc.port if idx < 0 else pkt.header[idx]) != v:
                    ok = False
                    break
            if ok:
                best, best_prio = rid, prio
        self._best[key] = best
        return best

    def bestmatch(self, sw_state: SwitchState, pkt) -> int | None:
        """Highest-priority matching rule id; equal priorities go to the
        smallest rule id (or the largest, with ``tie_break="largest"``)."""
        pid = pkt if isinstance(pkt, int) else self.intern_packet(pkt)
        return self.best_rule(sw_state.ft, pid)

    # --- forwarding -------------------------------------------------------
    def moves(self, node: NodeId, pid: int, ports):
        """Copies of packet ``pid`` sent out of ``ports`` of ``node``:
        a tuple of (destination kind, destination index, new packet id)."""
        key = (node, pid, ports)
        got = self._moves.get(key)
        if got is not None:
            return got
        pkt = self.packet(pid)
        reached = pkt.reached
        if node.kind == SWITCH and self.schema.history:
            reached |= 1 << node.index
        out = []
        for port in ports:
            if port == DROP:
                continue
            dest = self.topo.next_hop(Location(node, port))
            npid = self.intern_packet(Packet(pkt.header, dest, reached))
            out.append((dest.node.kind, dest.node.index, npid))
        got = tuple(out)
        self._moves[key] = got
        return got

    # --- controller -------------------------------------------------------
    def _check_ports(self, sw, ports, what):
        if not 0 <= sw < self.n_switches:
            raise ScenarioError(f"{self.program.name}: {what} names switch index {sw}")
        errs = self.topo.check_ports(NodeId(SWITCH, sw), ports)
        if errs:
            raise ScenarioError([f"{self.program.name}: {what}: {e}" for e in errs])

    def _compile(self, out):
        msgs = []
        for sw, items in out.messages:
            conv = []
            for m in items:
                if m[0] == "barrier":
                    conv.append(Barrier(m[1]))
                else:
                    self._check_ports(sw, m[1].ports, f"rule {m[1].name or m[1]}")
                    conv.append((ADD if m[0] == "add" else DEL, self.intern_rule(m[1])))
            msgs.append((sw, tuple(conv)))
        pouts = []
        for sw, pkt, ports in out.packet_outs:
            self._check_ports(sw, ports, "packet-out")
            pouts.append((sw, self.intern_packet(pkt), tuple(ports)))
        return (tuple(out.cs), tuple(msgs), tuple(pouts))

    def handler_output(self, cs, kind, sw, arg):
        """Compiled pktIn (kind 'ctrl', arg = packet id) or barrierIn
        (kind 'bsync', arg = xid) output, memoised on its inputs."""
        key = (kind, cs, sw, arg)
        got = self._handler.get(key)
        if got is None:
            try:
                if kind == "ctrl":
                    out = self.program.pkt_in(cs, sw, self.packet(arg))
                else:
                    out = self.program.barrier_in(cs, sw, arg)
            except ScenarioError:
                raise
            except Exception as exc:  # a crashing handler makes the model ill-formed
                raise ScenarioError(f"{self.program.name} handler failed: {exc!r}") from exc
            got = self._compile(out)
            self._handler[key] = got
        return got

    def _eventual(self, cq, ft, rid):
        """Whether ``rid`` ends up installed once ``cq`` drains, or None when
        the queue holds both an add and a del of it in one unordered set."""
        state = bool(ft >> rid & 1)
        for item in cq:
            if isinstance(item, Barrier):
                continue
            a = (ADD, rid) in item
            d = (DEL, rid) in item
            if a and d:
                state = None
            elif a:
                state = True
            elif d:
                state = False
        return state

    def append_cq(self, cq: tuple, ft: int, msgs) -> tuple:
        """Append a handler's messages to a control queue.

        FlowMods that cannot change the eventual flow table are absorbed;
        if nothing but barriers survives, the batch is dropped entirely.
        Consecutive FlowMods, also across batches, share one unordered set
        until a barrier intervenes.
        """
        kept = []
        if self.absorb:
            pending = {}
            for m in msgs:
                if isinstance(m, Barrier):
                    kept.append(m)
                    continue
                op, rid = m
                if rid not in pending:
                    pending[rid] = self._eventual(cq, ft, rid)
                want = op == ADD
                if pending[rid] is want:
                    continue
                pending[rid] = want
                kept.append(m)
            if all(isinstance(m, Barrier) for m in kept):
                return cq
        else:
            kept = list(msgs)
        items = list(cq)
        for m in kept:
            if isinstance(m, Barrier):
                items.append(m)
            elif items and not isinstance(items[-1], Barrier):
                items[-1] = items[-1] | {m}
            else:
                items.append(frozenset((m,)))
        if len(items) > self.max_cq:
            raise CqOverflow(f"control queue longer than {self.max_cq} entries")
        return tuple(items)

    def _apply(self, s, switches, cs_out, rq, brq):
        cs, msgs, pouts = cs_out
        for sw, items in msgs:
            cur = switches[sw]
            switches[sw] = cur._replace(cq=self.append_cq(cur.cq, cur.ft, items))
        for sw, pid, ports in pouts:
            cur = switches[sw]
            entry = (pid, ports)
            if entry not in cur.fq:
                switches[sw] = cur._replace(fq=cur.fq | {entry})
        return SystemState(s.hosts, tuple(switches), ControllerEnv(cs, rq, brq))

    # --- transition relation ----------------------------------------------
    def enabled(self, s: SystemState) -> list:
        acts = [Action("send", h, pid, port) for h, port, pid in self.reps]
        for h, rcv in enumerate(s.hosts):
            for pid in bits(rcv):
                acts.append(Action("recv", h, pid))
        rq = s.ctrl.rq
        for i, sw in enumerate(s.switches):
            for pid in bits(sw.pq):
                r = self.best_rule(sw.ft, pid)
                if r is not None:
                    acts.append(Action("match", i, pid, r))
                elif (i, pid) not in rq:
                    acts.append(Action("nomatch", i, pid))
            for pid, ports in sorted(sw.fq):
                acts.append(Action("fwd", i, pid, ports))
            if sw.cq:
                head = sw.cq[0]
                if isinstance(head, Barrier):
                    acts.append(Action("brepl", i, -1, head.xid))
                else:
                    for op, rid in sorted(head):
                        acts.append(Action(OP_NAMES[op], i, -1, rid))
        for i, pid in sorted(rq):
            acts.append(Action("ctrl", i, pid))
        for i, xid in sorted(s.ctrl.brq):
            acts.append(Action("bsync", i, -1, xid))
        if self.block_on_overflow:
            acts = [a for a in acts if not self._overflows(s, a)]
        return acts

    def _overflows(self, s, a):
        if a.kind not in ("ctrl", "bsync"):
            return False
        try:
            self.fire(s, a)
        except CqOverflow:
            return True
        return False

    def is_enabled(self, s: SystemState, a: Action) -> bool:
        k = a.kind
        if k == "send":
            return (a.node, a.arg, a.pkt) in self.rep_set
        if k == "recv":
            return 0 <= a.node < self.n_hosts and bool(s.hosts[a.node] >> a.pkt & 1)
        if k in ("ctrl", "bsync"):
            key = (a.node, a.pkt if k == "ctrl" else a.arg)
            ok = key in (s.ctrl.rq if k == "ctrl" else s.ctrl.brq)
            return ok and not (self.block_on_overflow and self._overflows(s, a))
        if not 0 <= a.node < self.n_switches:
            return False
        sw = s.switches[a.node]
        if k in ("match", "nomatch"):
            if a.pkt < 0 or not sw.pq >> a.pkt & 1:
                return False
            r = self.best_rule(sw.ft, a.pkt)
            if k == "match":
                return r is not None and r == a.arg
            return r is None and (a.node, a.pkt) not in s.ctrl.rq
        if k == "fwd":
            return (a.pkt, a.arg) in sw.fq
        if not sw.cq:
            return False
        head = sw.cq[0]
        if k == "brepl":
            return isinstance(head, Barrier) and head.xid == a.arg
        if k in ("add", "del"):
            return not isinstance(head, Barrier) and ((ADD if k == "add" else DEL), a.arg) in head
        return False

    def fire(self, s: SystemState, a: Action) -> SystemState:
        """Successor of ``s`` under ``a``. When the action changes nothing
        (re-sending a packet that is already queued, say) the very same
        state object is returned."""
        if not self.is_enabled(s, a):
            raise NotEnabled(f"{self.fmt_action(a)} is not enabled")
        return self.step(s, a)

    def step(self, s: SystemState, a: Action) -> SystemState:
        """``fire`` without the guard check, for actions known to be enabled."""
        k = a.kind
        if k == "match":
            return self._deliver(s, self.moves(NodeId(SWITCH, a.node), a.pkt, self.rule(a.arg).ports))
        if k == "send":
            return self._deliver(s, self.moves(NodeId(HOST, a.node), a.pkt, (a.arg,)))
        if k == "recv":
            hosts = list(s.hosts)
            hosts[a.node] &= ~(1 << a.pkt)
            return SystemState(tuple(hosts), s.switches, s.ctrl)
        c = s.ctrl
        if k == "nomatch":
            return SystemState(s.hosts, s.switches, ControllerEnv(c.cs, c.rq | {(a.node, a.pkt)}, c.brq))
        if k == "ctrl":
            out = self.handler_output(c.cs, "ctrl", a.node, a.pkt)
            return self._apply(s, list(s.switches), out, c.rq - {(a.node, a.pkt)}, c.brq)
        if k == "bsync":
            out = self.handler_output(c.cs, "bsync", a.node, a.arg)
            return self._apply(s, list(s.switches), out, c.rq, c.brq - {(a.node, a.arg)})
        switches = list(s.switches)
        sw = switches[a.node]
        if k == "fwd":
            switches[a.node] = SwitchState(sw.ft, sw.pq, sw.fq - {(a.pkt, a.arg)}, sw.cq)
            new = self._deliver(s, self.moves(NodeId(SWITCH, a.node), a.pkt, a.arg), switches)
            return new if new is not s else SystemState(s.hosts, tuple(switches), c)
        if k in ("add", "del"):
            op = ADD if k == "add" else DEL
            head = sw.cq[0] - {(op, a.arg)}
            cq = ((head,) if head else ()) + sw.cq[1:]
            ft = sw.ft | (1 << a.arg) if op == ADD else sw.ft & ~(1 << a.arg)
            switches[a.node] = SwitchState(ft, sw.pq, sw.fq, cq)
            return SystemState(s.hosts, tuple(switches), c)
        if k == "brepl":
            switches[a.node] = SwitchState(sw.ft, sw.pq, sw.fq, sw.cq[1:])
            return SystemState(s.hosts, tuple(switches), ControllerEnv(c.cs, c.rq, c.brq | {(a.node, a.arg)}))
        raise NotEnabled(f"unknown action kind {k!r}")

    def _deliver(self, s, moves, switches=None):
        """Add each moved copy to its destination queue. Returns ``s`` itself
        when every copy was already queued and ``switches`` is None."""
        hosts = None
        for kind, idx, npid in moves:
            bit = 1 << npid
            if kind == HOST:
                cur = hosts if hosts is not None else s.hosts
                if not cur[idx] & bit:
                    if hosts is None:
                        hosts = list(s.hosts)
                    hosts[idx] |= bit
            else:
                sw = (switches if switches is not None else s.switches)[idx]
                if not sw.pq & bit:
                    if switches is None:
                        switches = list(s.switches)
                    switches[idx] = SwitchState(sw.ft, sw.pq | bit, sw.fq, sw.cq)
        if hosts is None and switches is None:
            return s
        return SystemState(
            s.hosts if hosts is None else tuple(hosts),
            s.switches if switches is None else tuple(switches),
            s.ctrl,
        )

    def successors(self, s):
        return [(a, self.fire(s, a)) for a in self.enabled(s)]

    # --- effect summaries, used by the reduction ---------------------------
    def set_effects(self, s: SystemState, a: Action):
        """(removed, inserted) elements of the set-valued queues rq, brq,
        fq and rcvq. Packet queues only ever gain elements and are left out."""
        k = a.kind
        rm, ins = set(), set()
        if k == "recv":
            rm.add(("rcv", a.node, a.pkt))
        elif k in ("match", "fwd", "send"):
            if k == "match":
                node, ports = NodeId(SWITCH, a.node), self.rule(a.arg).ports
            elif k == "fwd":
                node, ports = NodeId(SWITCH, a.node), a.arg
                rm.add(("fq", a.node, a.pkt, a.arg))
            else:
                node, ports = NodeId(HOST, a.node), (a.arg,)
            for kind, idx, npid in self.moves(node, a.pkt, ports):
                if kind == HOST:
                    ins.add(("rcv", idx, npid))
        elif k == "nomatch":
            ins.add(("rq", a.node, a.pkt))
        elif k in ("ctrl", "bsync"):
            if k == "ctrl":
                rm.add(("rq", a.node, a.pkt))
                out = self.handler_output(s.ctrl.cs, "ctrl", a.node, a.pkt)
            else:
                rm.add(("brq", a.node, a.arg))
                out = self.handler_output(s.ctrl.cs, "bsync", a.node, a.arg)
            for sw, pid, ports in out[2]:
                ins.add(("fq", sw, pid, ports))
        elif k == "brepl":
            ins.add(("brq", a.node, a.arg))
        return rm, ins

    # --- rendering ----------------------------------------------------------
    def fmt_packet(self, pid) -> str:
        pkt = self.packet(pid)
        parts = []
        for f, v in zip(self.schema.fields, pkt.header):
            parts.append(f"{f.name}={self.topo.hosts[v] if f.hosts and v < self.n_hosts else v}")
        text = "[" + " ".join(parts) + "]@" + self.topo.fmt(pkt.loc)
        if self.schema.history:
            text += "{" + ",".join(self.topo.switches[i] for i in bits(pkt.reached)) + "}"
        return text

    def fmt_ports(self, ports) -> str:
        return "{" + ",".join("drop" if p == DROP else str(p) for p in ports) + "}"

    def fmt_rule(self, rid) -> str:
        r = self.rule(rid)
        return r.name or f"r{rid}"

    def describe_rule(self, rid) -> str:
        r = self.rule(rid)
        pat = ",".join(f"{f}={v}" for f, v in r.match) or "*"
        return f"{self.fmt_rule(rid)}(prio={r.priority}, {pat} -> {self.fmt_ports(r.ports)})"

    def fmt_action(self, a: Action) -> str:
        k = a.kind
        if k in ("send", "recv"):
            node = self.topo.hosts[a.node] if 0 <= a.node < self.n_hosts else f"host{a.node}"
        else:
            node = self.topo.switches[a.node] if 0 <= a.node < self.n_switches else f"switch{a.node}"
        args = [node]
        if k == "send":
            args.append(str(a.arg))
        if a.pkt >= 0 and a.pkt < len(self.packets):
            args.append(self.fmt_packet(a.pkt))
        if k in ("match", "add", "del"):
            args.append(self.fmt_rule(a.arg))
        elif k == "fwd":
            args.append(self.fmt_ports(a.arg))
        elif k in ("brepl", "bsync"):
            args.append(str(a.arg))
        return f"{k}({', '.join(args)})"

    def action_to_json(self, a: Action) -> dict:
        d = {"kind": a.kind, "node": a.node}
        if a.pkt >= 0:
            p = self.packet(a.pkt)
            d["pkt"] = {
                "header": list(p.header),
                "loc": [p.loc.node.kind, p.loc.node.index, p.loc.port],
                "reached": p.reached,
            }
        if a.kind in ("match", "add", "del"):
            r = self.rule(a.arg)
            d["rule"] = {"priority": r.priority, "match": [list(m) for m in r.match], "ports": list(r.ports), "name": r.name}
        elif a.kind == "fwd":
            d["ports"] = list(a.arg)
        elif a.kind in ("send", "brepl", "bsync"):
            d["arg"] = a.arg
        return d

    def action_from_json(self, d: dict) -> Action:
        pid = -1
        if "pkt" in d:
            p = d["pkt"]
            kind, idx, port = p["loc"]
            pid = self.intern_packet(Packet(tuple(p["header"]), Location(NodeId(kind, idx), port), p["reached"]))
        arg = d.get("arg")
        if "rule" in d:
            r = d["rule"]
            arg = self.intern_rule(Rule(r["priority"], tuple(tuple(m) for m in r["match"]), tuple(r["ports"]), r.get("name", "")))
        elif "ports" in d:
            arg = tuple(d["ports"])
        return Action(d["kind"], d["node"], pid, arg)

    def actions_to_json(self, actions) -> str:
        return json.dumps([self.action_to_json(a) for a in actions])
