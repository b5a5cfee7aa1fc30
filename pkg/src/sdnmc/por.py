"""Contextual partial-order reduction.

An action is safe when it is independent of every co-enabled action and
invisible to the property. Per action kind:

* send, match, nomatch, add, del: never safe.
* brepl: safe.
* ctrl, bsync: safe when the program is order-insensitive and the
  controller predicates the property reads do not change.
* fwd, recv: safe when no packet-queue atom of the property changes value.

On top of that, a candidate is demoted when a co-enabled action inserts an
element of a set-valued queue that the candidate removes, or the other way
round: re-inserting an element that is already present is a no-op, so the
two orders would end in different states.
"""
from __future__ import annotations

from typing import NamedTuple

from .errors import Inconclusive
from .prop import Property
from .semantics import Action, Model
from .topology import HOST, SWITCH, NodeId

ALWAYS = "always_safe"
NEVER = "never_safe"
DYNAMIC = "dynamic"


class SafenessVerdict(NamedTuple):
    safe: bool
    reason: str
    dynamic: bool = False


class PorContext:
    """Reduction context for one (program, topology, property) triple."""

    def __init__(self, model: Model, prop: Property, order_sensitive=None):
        self.model = model
        self.prop = prop
        self.topo = model.topo
        self.order_sensitive = model.program.order_sensitive if order_sensitive is None else order_sensitive
        self.footprint = prop.footprint
        fp = self.footprint
        ctrl_row = NEVER if self.order_sensitive else (DYNAMIC if fp.ctrl_names else ALWAYS)
        self.static = {
            "send": NEVER,
            "match": NEVER,
            "nomatch": NEVER,
            "add": NEVER,
            "del": NEVER,
            "brepl": ALWAYS,
            "ctrl": ctrl_row,
            "bsync": ctrl_row,
            "fwd": DYNAMIC if fp.queues else ALWAYS,
            "recv": DYNAMIC if any(q == "rcvq" for _, q in fp.queues) else ALWAYS,
        }
        self._atoms_by_queue = {}
        self._var_atoms = {"pq": [], "rcvq": []}
        for atom in fp.atoms:
            if isinstance(atom.node, NodeId):
                self._atoms_by_queue.setdefault((atom.node, atom.queue), []).append(atom)
            else:
                self._var_atoms[atom.queue].append(atom)

    # --- Safe3: invisibility ------------------------------------------------
    def _touched_queues(self, s, a):
        m = self.model
        if a.kind == "recv":
            return {(NodeId(HOST, a.node), "rcvq")}
        out = set()
        for kind, idx, _ in m.moves(NodeId(SWITCH, a.node), a.pkt, a.arg):
            out.add((NodeId(kind, idx), "rcvq" if kind == HOST else "pq"))
        return out

    def _queues_invariant(self, s, t, a):
        touched = self._touched_queues(s, a)
        for node, q in touched:
            if (node, q) not in self.footprint.queues:
                continue
            if self._var_atoms[q]:
                return False  # an atom bound by a modality could read this queue
            for atom in self._atoms_by_queue.get((node, q), ()):
                if atom.ev(s, self.model, {}) != atom.ev(t, self.model, {}):
                    return False
        return True

    def _ctrl_invariant(self, s, t):
        prog = self.model.program
        for name in self.footprint.ctrl_names:
            if prog.ctrl_view(s.ctrl.cs, name) != prog.ctrl_view(t.ctrl.cs, name):
                return False
        return True

    def table_verdict(self, a: Action, s) -> SafenessVerdict:
        """Verdict of the per-kind predicates alone."""
        row = self.static[a.kind]
        if row == NEVER:
            why = "order-sensitive program" if a.kind in ("ctrl", "bsync") else f"{a.kind} is never safe"
            return SafenessVerdict(False, why)
        if row == ALWAYS:
            return SafenessVerdict(True, "invisible and independent by kind")
        t = self.model.fire(s, a)
        if a.kind in ("ctrl", "bsync"):
            ok = self._ctrl_invariant(s, t)
            return SafenessVerdict(ok, "controller predicates " + ("unchanged" if ok else "change"), True)
        ok = self._queues_invariant(s, t, a)
        return SafenessVerdict(ok, "queue atoms " + ("unchanged" if ok else "change"), True)

    def is_safe(self, a: Action, s, enabled=None, effects=None) -> SafenessVerdict:
        v = self.table_verdict(a, s)
        if not v.safe:
            return v
        if enabled is None:
            enabled = self.model.enabled(s)
        if effects is None:
            effects = {b: self.model.set_effects(s, b) for b in enabled}
        rm_a, ins_a = effects.get(a) or self.model.set_effects(s, a)
        if rm_a or ins_a:
            for b in enabled:
                if b == a:
                    continue
                rm_b, ins_b = effects[b]
                if (rm_a & ins_b) or (ins_a & rm_b):
                    return SafenessVerdict(False, f"re-insertion collision with {b.kind}", v.dynamic)
        return v

    def ample(self, s, enabled=None) -> list:
        """Safe enabled actions if any, otherwise every enabled action."""
        if enabled is None:
            enabled = self.model.enabled(s)
        cands = [a for a in enabled if self.static[a.kind] != NEVER]
        if not cands:
            return enabled
        effects = None
        safe = []
        for a in cands:
            v = self.table_verdict(a, s)
            if not v.safe:
                continue
            if effects is None:
                effects = {b: self.model.set_effects(s, b) for b in enabled}
            rm_a, ins_a = effects[a]
            clash = False
            if rm_a or ins_a:
                for b in enabled:
                    if b != a:
                        rm_b, ins_b = effects[b]
                        if (rm_a & ins_b) or (ins_a & rm_b):
                            clash = True
                            break
            if not clash:
                safe.append(a)
        return safe or enabled


def ample(s, ctx: PorContext, enabled=None):
    return ctx.ample(s, enabled)


def is_safe(a, s, ctx: PorContext):
    return ctx.is_safe(a, s)


# --- side-condition validators ------------------------------------------------
def check_c1_c3(ctx: PorContext, s, enabled, amp) -> list[str]:
    """Problems with one ample set: empty, or reduced with an unsafe member."""
    errs = []
    if not amp:
        errs.append("C1: empty ample set")
    if len(amp) != len(enabled):
        for a in amp:
            if not ctx.is_safe(a, s, enabled).safe:
                errs.append(f"C3: unsafe {ctx.model.fmt_action(a)} in a reduced ample set")
    return errs


def sccs(n, edges):
    """Strongly connected components of a graph on nodes 0..n-1 (iterative
    Tarjan). ``edges`` maps a node to its successor list."""
    index = [-1] * n
    low = [0] * n
    on = [False] * n
    stack, out = [], []
    counter = 0
    for root in range(n):
        if index[root] >= 0:
            continue
        work = [(root, 0)]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on[root] = True
        while work:
            v, i = work[-1]
            succ = edges.get(v, ())
            if i < len(succ):
                work[-1] = (v, i + 1)
                w = succ[i]
                if index[w] < 0:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on[w] = True
                    work.append((w, 0))
                elif on[w]:
                    low[v] = min(low[v], index[w])
                continue
            work.pop()
            if work:
                u = work[-1][0]
                low[u] = min(low[u], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on[w] = False
                    comp.append(w)
                    if w == v:
                        break
                out.append(comp)
    return out


def check_c4(n, edges, full) -> list[str]:
    """Every SCC with an edge must hold a fully expanded state."""
    errs = []
    for comp in sccs(n, edges):
        members = set(comp)
        has_edge = len(comp) > 1 or comp[0] in edges.get(comp[0], ())
        if has_edge and not any(full[v] for v in comp):
            errs.append(f"C4: cycle through {len(members)} states without a fully expanded state")
    return errs


# --- order-sensitivity ---------------------------------------------------------
class OrderReport(NamedTuple):
    sensitive: bool
    witness: tuple | None  # (state, alpha, beta) when sensitive
    states: int


def validate_order_sensitivity(model: Model, bound=200_000) -> OrderReport:
    """Search every reachable state for two ctrl/bsync actions whose two
    firing orders end in different states. Raises Inconclusive when the
    bound stops the search before it covers the reachable set."""
    s0 = model.initial_state()
    seen = {model.pack(s0)}
    stack = [s0]
    while stack:
        s = stack.pop()
        en = model.enabled(s)
        handlers = [a for a in en if a.kind in ("ctrl", "bsync")]
        for i, a in enumerate(handlers):
            sa = model.fire(s, a)
            for b in handlers[i + 1:]:
                s2 = model.fire(sa, b)
                s4 = model.fire(model.fire(s, b), a)
                if model.pack(s2) != model.pack(s4):
                    return OrderReport(True, (s, a, b), len(seen))
        for a in en:
            t = model.fire(s, a)
            key = model.pack(t)
            if key not in seen:
                if len(seen) >= bound:
                    raise Inconclusive(f"order-sensitivity search stopped at {bound} states")
                seen.add(key)
                stack.append(t)
    return OrderReport(False, None, len(seen))
