"""Invariant properties: state atoms, controller predicates and action
modalities, written as s-expressions.

Grammar (whitespace separated, ``;`` starts a comment)::

    formula := true | false
             | (not F) | (and F...) | (or F...) | (implies F F)
             | (exists_in NODE pq|rcvq PRED)
             | (ctrl_is NAME ARG...)
             | (forall VAR switch|host F) | (exists VAR switch|host F)
             | (on_action KIND (VAR...) BODY)       ; top-level conjuncts only
    BODY    := formula | (drops VAR) | (pkt_is VAR PRED) | (= VAR VALUE)
    PRED    := true | false | (not PRED) | (and PRED...) | (or PRED...)
             | (= FIELD VALUE) | (reached NODE)

A modality binds the arguments of every fired action of kind KIND, in the
order listed in ``BINDERS``, and requires BODY in the successor state.
"""
from __future__ import annotations

import weakref
from typing import NamedTuple

from .errors import ScenarioError
from .model import bits
from .topology import DROP, HOST, SWITCH, NodeId

BINDERS = {
    "send": ("h", "pt", "pkt"),
    "recv": ("h", "pkt"),
    "match": ("sw", "pkt", "r"),
    "nomatch": ("sw", "pkt"),
    "ctrl": ("sw", "pkt"),
    "fwd": ("sw", "pkt", "ports"),
    "add": ("sw", "r"),
    "del": ("sw", "r"),
    "brepl": ("sw", "xid"),
    "bsync": ("sw", "xid"),
}


# --- reader ------------------------------------------------------------------
class Sym(NamedTuple):
    name: str
    line: int
    col: int


class SList(list):
    line = 0
    col = 0


def read_sexprs(text: str, line0=1) -> list:
    """Parse every top-level s-expression in ``text``."""
    out, stack = [], []
    line, col, i, n = line0, 1, 0, len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            line, col, i = line + 1, 1, i + 1
            continue
        if c.isspace():
            i, col = i + 1, col + 1
            continue
        if c == ";":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if c == "(":
            lst = SList()
            lst.line, lst.col = line, col
            stack.append(lst)
            i, col = i + 1, col + 1
            continue
        if c == ")":
            if not stack:
                raise ScenarioError(f"line {line}, column {col}: unbalanced ')'")
            lst = stack.pop()
            (stack[-1] if stack else out).append(lst)
            i, col = i + 1, col + 1
            continue
        j = i
        while j < n and not text[j].isspace() and text[j] not in "();":
            j += 1
        tok = Sym(text[i:j], line, col)
        (stack[-1] if stack else out).append(tok)
        col += j - i
        i = j
    if stack:
        lst = stack[-1]
        raise ScenarioError(f"line {lst.line}, column {lst.col}: unclosed '('")
    return out


def to_text(x) -> str:
    if isinstance(x, Sym):
        return x.name
    return "(" + " ".join(to_text(y) for y in x) + ")"


def _where(x):
    return f"line {x.line}, column {x.col}"


# --- packet predicates ---------------------------------------------------------
class Var(NamedTuple):
    name: str


def _val(term, env):
    return env[term.name] if isinstance(term, Var) else term


class PConst(NamedTuple):
    value: bool

    def test(self, pkt, env):
        return self.value


class PField(NamedTuple):
    index: int  # -1 for in_port
    value: object

    def test(self, pkt, env):
        got = pkt.loc.port if self.index < 0 else pkt.header[self.index]
        want = _val(self.value, env)
        return got == (want.index if isinstance(want, NodeId) else want)


class PReached(NamedTuple):
    switch: object  # NodeId or Var

    def test(self, pkt, env):
        return bool(pkt.reached >> _val(self.switch, env).index & 1)


class PNot(NamedTuple):
    arg: object

    def test(self, pkt, env):
        return not self.arg.test(pkt, env)


class PAnd(NamedTuple):
    args: tuple

    def test(self, pkt, env):
        return all(a.test(pkt, env) for a in self.args)


class POr(NamedTuple):
    args: tuple

    def test(self, pkt, env):
        return any(a.test(pkt, env) for a in self.args)


# --- formulas -------------------------------------------------------------------
class Const(NamedTuple):
    value: bool

    def ev(self, s, m, env):
        return self.value


class Not(NamedTuple):
    arg: object

    def ev(self, s, m, env):
        return not self.arg.ev(s, m, env)


class And(NamedTuple):
    args: tuple

    def ev(self, s, m, env):
        return all(a.ev(s, m, env) for a in self.args)


class Or(NamedTuple):
    args: tuple

    def ev(self, s, m, env):
        return any(a.ev(s, m, env) for a in self.args)


class Implies(NamedTuple):
    a: object
    b: object

    def ev(self, s, m, env):
        return not self.a.ev(s, m, env) or self.b.ev(s, m, env)


class ExistsIn:
    """Some packet in ``node``'s ``queue`` satisfies ``pred``."""

    def __init__(self, node, queue, pred, text):
        self.node = node  # NodeId or Var
        self.queue = queue
        self.pred = pred
        self.text = text
        self.ground = not isinstance(node, Var) and not _has_var(pred)
        self._memo = weakref.WeakKeyDictionary()  # model -> {packet id: bool}

    def __repr__(self):
        return f"ExistsIn({self.text})"

    def queue_bits(self, s, env):
        node = _val(self.node, env)
        if self.queue == "rcvq":
            return s.hosts[node.index]
        return s.switches[node.index].pq

    def ev(self, s, m, env):
        q = self.queue_bits(s, env)
        if not self.ground:
            return any(self.pred.test(m.packet(p), env) for p in bits(q))
        memo = self._memo.get(m)
        if memo is None:
            memo = self._memo.setdefault(m, {})
        for p in bits(q):
            hit = memo.get(p)
            if hit is None:
                hit = memo[p] = self.pred.test(m.packet(p), env)
            if hit:
                return True
        return False


class CtrlIs(NamedTuple):
    name: str
    args: tuple
    text: str

    def ev(self, s, m, env):
        return bool(m.program.ctrl_pred(self.name, s.ctrl.cs, tuple(_val(a, env) for a in self.args)))


class Drops(NamedTuple):
    var: Var

    def ev(self, s, m, env):
        v = env[self.var.name]
        ports = v if isinstance(v, tuple) else v.ports
        return DROP in ports


class PktIs(NamedTuple):
    var: Var
    pred: object

    def ev(self, s, m, env):
        return self.pred.test(env[self.var.name], env)


class TermEq(NamedTuple):
    var: Var
    value: object

    def ev(self, s, m, env):
        return env[self.var.name] == _val(self.value, env)


def _has_var(p):
    if isinstance(p, (PField,)):
        return isinstance(p.value, Var)
    if isinstance(p, PReached):
        return isinstance(p.switch, Var)
    if isinstance(p, PNot):
        return _has_var(p.arg)
    if isinstance(p, (PAnd, POr)):
        return any(_has_var(a) for a in p.args)
    return False


class Modality:
    """``[kind(binders)] body``: an obligation on every fired ``kind`` edge."""

    def __init__(self, kind, binders, body, text):
        self.kind = kind
        self.binders = binders
        self.body = body
        self.text = text

    def __repr__(self):
        return f"Modality({self.text})"

    def bind(self, model, a):
        k = a.kind
        if k in ("send", "recv"):
            node = NodeId(HOST, a.node)
        else:
            node = NodeId(SWITCH, a.node)
        pkt = model.packet(a.pkt) if a.pkt >= 0 else None
        if k == "send":
            vals = (node, a.arg, pkt)
        elif k in ("recv", "nomatch", "ctrl"):
            vals = (node, pkt)
        elif k == "match":
            vals = (node, pkt, model.rule(a.arg))
        elif k == "fwd":
            vals = (node, pkt, a.arg)
        elif k in ("add", "del"):
            vals = (node, model.rule(a.arg))
        else:
            vals = (node, a.arg)
        return {b: v for b, v in zip(self.binders, vals) if b != "_"}

    def check(self, model, a, s_post) -> bool:
        if a.kind != self.kind:
            return True
        return bool(self.body.ev(s_post, model, self.bind(model, a)))

    def describe(self, model, a) -> str:
        env = self.bind(model, a)
        parts = []
        for k, v in env.items():
            if isinstance(v, NodeId):
                v = model.topo.name(v)
            elif k == "pkt":
                v = model.fmt_packet(a.pkt)
            elif k == "r":
                v = model.fmt_rule(a.arg)
            elif k == "ports":
                v = model.fmt_ports(v)
            parts.append(f"{k}={v}")
        return ", ".join(parts)


class Footprint(NamedTuple):
    ctrl_names: frozenset  # controller predicates mentioned anywhere
    queues: frozenset  # {(NodeId, "pq"|"rcvq")}
    atoms: tuple  # every ExistsIn atom, state-level and modality-level

    @property
    def mentions_ctrl_state(self):
        return bool(self.ctrl_names)


# --- compiler --------------------------------------------------------------------
class _Compiler:
    def __init__(self, topo, schema, ctrl_names):
        self.topo = topo
        self.schema = schema
        self.ctrl_names = set(ctrl_names)
        self.used_ctrl = set()
        self.queues = set()
        self.atoms = []
        self.errors = []

    def fail(self, x, msg):
        raise ScenarioError(f"{_where(x)}: {msg}")

    def node(self, x, env, kind=None):
        if not isinstance(x, Sym):
            self.fail(x, f"expected a node name, got {to_text(x)}")
        if x.name in env:
            v = env[x.name]
            if isinstance(v, tuple) and v and v[0] == "binder":
                if kind is not None and v[1] not in ("any", kind):
                    self.fail(x, f"{x.name} is not a {kind}")
                return Var(x.name)
            if kind is not None and v.kind != kind:
                self.fail(x, f"{x.name} is not a {kind}")
            return v
        if not self.topo.has_node(x.name):
            self.fail(x, f"unknown node {x.name!r}")
        n = self.topo.node(x.name)
        if kind is not None and n.kind != kind:
            self.fail(x, f"{x.name} is a {n.kind}, expected a {kind}")
        return n

    def value(self, x, env, host_field=False):
        if not isinstance(x, Sym):
            self.fail(x, f"expected a value, got {to_text(x)}")
        try:
            return int(x.name, 0)
        except ValueError:
            pass
        if x.name in env:
            v = env[x.name]
            if isinstance(v, tuple) and v and v[0] == "binder":
                return Var(x.name)
            return v.index if host_field else v
        if self.topo.has_node(x.name):
            n = self.topo.node(x.name)
            return n.index if host_field else n
        self.fail(x, f"unknown value {x.name!r}")

    def pred(self, x, env):
        if isinstance(x, Sym):
            if x.name in ("true", "false"):
                return PConst(x.name == "true")
            self.fail(x, f"expected a packet predicate, got {x.name!r}")
        if not x or not isinstance(x[0], Sym):
            self.fail(x, "empty packet predicate")
        head = x[0].name
        if head == "not" and len(x) == 2:
            return PNot(self.pred(x[1], env))
        if head in ("and", "or"):
            args = tuple(self.pred(y, env) for y in x[1:])
            return PAnd(args) if head == "and" else POr(args)
        if head == "=" and len(x) == 3:
            f = x[1]
            if not isinstance(f, Sym):
                self.fail(x, "field name expected")
            if f.name == "in_port":
                return PField(-1, self.value(x[2], env))
            if not self.schema.has(f.name):
                names = ", ".join(fl.name for fl in self.schema.fields)
                self.fail(f, f"unknown packet field {f.name!r} (fields: {names}, in_port)")
            idx = self.schema.index(f.name)
            return PField(idx, self.value(x[2], env, host_field=self.schema.fields[idx].hosts))
        if head == "reached" and len(x) == 2:
            if not self.schema.history:
                self.fail(x, "packets of this program carry no reached history")
            return PReached(self.node(x[1], env, SWITCH))
        self.fail(x, f"bad packet predicate {to_text(x)}")

    def formula(self, x, env, in_modality=False):
        if isinstance(x, Sym):
            if x.name in ("true", "false"):
                return Const(x.name == "true")
            self.fail(x, f"expected a formula, got {x.name!r}")
        if not x or not isinstance(x[0], Sym):
            self.fail(x, "empty formula")
        head = x[0].name
        if head == "not" and len(x) == 2:
            return Not(self.formula(x[1], env, in_modality))
        if head in ("and", "or"):
            args = tuple(self.formula(y, env, in_modality) for y in x[1:])
            return And(args) if head == "and" else Or(args)
        if head == "implies" and len(x) == 3:
            return Implies(self.formula(x[1], env, in_modality), self.formula(x[2], env, in_modality))
        if head in ("forall", "exists") and len(x) == 4:
            var, dom = x[1], x[2]
            if not isinstance(var, Sym) or not isinstance(dom, Sym) or dom.name not in (HOST, SWITCH):
                self.fail(x, f"({head} VAR switch|host FORMULA) expected")
            count = self.topo.n_hosts if dom.name == HOST else self.topo.n_switches
            parts = []
            for i in range(count):
                parts.append(self.formula(x[3], {**env, var.name: NodeId(dom.name, i)}, in_modality))
            return And(tuple(parts)) if head == "forall" else Or(tuple(parts))
        if head == "exists_in" and len(x) == 4:
            q = x[2]
            if not isinstance(q, Sym) or q.name not in ("pq", "rcvq"):
                self.fail(x, "queue must be pq or rcvq")
            node = self.node(x[1], env, SWITCH if q.name == "pq" else HOST)
            atom = ExistsIn(node, q.name, self.pred(x[3], env), to_text(x))
            if isinstance(node, Var):
                kind = SWITCH if q.name == "pq" else HOST
                count = self.topo.n_switches if kind == SWITCH else self.topo.n_hosts
                for i in range(count):
                    self.queues.add((NodeId(kind, i), q.name))
            else:
                self.queues.add((node, q.name))
            self.atoms.append(atom)
            return atom
        if head == "ctrl_is" and len(x) >= 2:
            name = x[1]
            if not isinstance(name, Sym) or name.name not in self.ctrl_names:
                known = ", ".join(sorted(self.ctrl_names)) or "none"
                self.fail(x, f"unknown controller predicate {to_text(name)} (known: {known})")
            args = tuple(self.value(a, env) for a in x[2:])
            self.used_ctrl.add(name.name)
            return CtrlIs(name.name, args, to_text(x))
        if in_modality:
            if head == "drops" and len(x) == 2:
                return Drops(self._binder(x[1], env))
            if head == "pkt_is" and len(x) == 3:
                return PktIs(self._binder(x[1], env), self.pred(x[2], env))
            if head == "=" and len(x) == 3:
                return TermEq(self._binder(x[1], env), self.value(x[2], env))
        if head == "on_action":
            self.fail(x, "on_action is only allowed as a top-level conjunct")
        self.fail(x, f"bad formula {to_text(x)}")

    def _binder(self, x, env):
        if isinstance(x, Sym) and isinstance(env.get(x.name), tuple) and env[x.name][0] == "binder":
            return Var(x.name)
        self.fail(x, f"{to_text(x)} is not an action binder")

    def modality(self, x):
        if len(x) != 4 or not isinstance(x[1], Sym) or isinstance(x[2], Sym):
            self.fail(x, "(on_action KIND (BINDERS...) BODY) expected")
        kind = x[1].name
        if kind not in BINDERS:
            self.fail(x[1], f"unknown action kind {kind!r} (kinds: {', '.join(BINDERS)})")
        names = []
        for b in x[2]:
            if not isinstance(b, Sym):
                self.fail(x, "binders must be names")
            names.append(b.name)
        roles = BINDERS[kind]
        if len(names) > len(roles):
            self.fail(x, f"{kind} binds at most {len(roles)} values ({' '.join(roles)})")
        env = {}
        for name, role in zip(names, roles):
            if name != "_":
                kind_of = {"sw": SWITCH, "h": HOST}.get(role, "value")
                env[name] = ("binder", kind_of)
        body = self.formula(x[3], env, in_modality=True)
        return Modality(kind, tuple(names), body, to_text(x))


class Property:
    """□(invariant ∧ modalities), compiled against one topology and program."""

    def __init__(self, text, invariant, conjuncts, modalities, footprint):
        self.text = text
        self.invariant = invariant
        self.conjuncts = conjuncts  # (text, formula) pairs for witnesses
        self.modalities = modalities
        self.footprint = footprint

    def eval_state(self, s, model) -> bool:
        return bool(self.invariant.ev(s, model, {}))

    def failed_conjunct(self, s, model):
        for text, f in self.conjuncts:
            if not f.ev(s, model, {}):
                return text
        return None

    def eval_modality(self, m: Modality, a, s_post, model) -> bool:
        return m.check(model, a, s_post)

    def failed_modality(self, a, s_post, model):
        for m in self.modalities:
            if not m.check(model, a, s_post):
                return m
        return None


def parse_property(text: str, topo, program, line0=1) -> Property:
    exprs = read_sexprs(text, line0)
    if not exprs:
        raise ScenarioError("property required")
    if len(exprs) > 1:
        raise ScenarioError(f"{_where(exprs[1])}: the property must be a single expression")
    root = exprs[0]
    comp = _Compiler(topo, program.schema, program.ctrl_names())
    tops = [root]
    if isinstance(root, SList) and root and isinstance(root[0], Sym) and root[0].name == "and":
        tops = list(root[1:])
    state_parts, conjuncts, mods = [], [], []
    for t in tops:
        if isinstance(t, SList) and t and isinstance(t[0], Sym) and t[0].name == "on_action":
            mods.append(comp.modality(t))
        else:
            f = comp.formula(t, {})
            state_parts.append(f)
            conjuncts.append((to_text(t), f))
    invariant = And(tuple(state_parts)) if len(state_parts) != 1 else state_parts[0]
    fp = Footprint(frozenset(comp.used_ctrl), frozenset(comp.queues), tuple(comp.atoms))
    return Property(to_text(root), invariant, tuple(conjuncts), tuple(mods), fp)


def footprint(prop: Property) -> Footprint:
    return prop.footprint


def eval_state(prop: Property, s, model) -> bool:
    return prop.eval_state(s, model)


def eval_modality(m: Modality, a, s_post, model) -> bool:
    return m.check(model, a, s_post)
