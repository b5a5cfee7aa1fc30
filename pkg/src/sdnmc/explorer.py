"""Exhaustive reachability with property checking and trace reconstruction."""
from __future__ import annotations

import random
import sys
import time
from array import array
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .errors import CqOverflow, Inconclusive, ReplayDiverged, TableFull
from .model import state_fingerprint
from .por import PorContext, check_c1_c3, check_c4
from .prop import Property
from .semantics import Action, Model

MAX_FUSION = 256


# --- verdicts -------------------------------------------------------------------
@dataclass(frozen=True)
class Holds:
    name = "Holds"


@dataclass(frozen=True)
class Violated:
    trace: tuple  # Actions from the initial state
    witness: str  # failed conjunct or modality, with bindings
    name = "Violated"


@dataclass(frozen=True)
class ResourceLimit:
    states: int
    reason: str
    name = "ResourceLimit"


@dataclass
class RunStats:
    visited: int = 0
    transitions: int = 0
    fused: int = 0
    reduced_states: int = 0  # states whose ample set was a strict subset
    peak_stack: int = 0
    packed_bytes: int = 0
    wall_time: float = 0.0
    python_bytes: int = 0

    @property
    def bytes_per_state(self) -> float:
        """Encoded store footprint per state: packed words, an 8-byte
        fingerprint and a 4-byte parent index."""
        if not self.visited:
            return 0.0
        return self.packed_bytes / self.visited + 12

    @property
    def python_bytes_per_state(self) -> float:
        return self.python_bytes / self.visited if self.visited else 0.0

    @property
    def throughput(self) -> float:
        return self.visited / self.wall_time if self.wall_time > 0 else 0.0

    def lines(self):
        return [
            f"visited={self.visited}",
            f"transitions={self.transitions}",
            f"fused={self.fused}",
            f"reduced_states={self.reduced_states}",
            f"peak_stack={self.peak_stack}",
            f"bytes_per_state={self.bytes_per_state:.1f}",
            f"python_bytes_per_state={self.python_bytes_per_state:.1f}",
            f"wall_time={self.wall_time:.3f}",
            f"throughput={self.throughput:.1f}",
        ]


@dataclass
class Options:
    por: bool = True
    merge_chains: bool = False
    validate: bool = False
    max_states: int | None = None
    time_limit: float | None = None
    threads: int = 1
    shuffle_seed: int | None = None  # permute successor order (determinism checks)
    keep_visited: bool = False
    exhaustive: bool = False  # keep searching after a violation (sequential only)


@dataclass
class Run:
    verdict: object
    stats: RunStats
    visited: dict | None = None  # packed state -> discovery index
    validation: list = field(default_factory=list)  # C1/C3/C4 problems
    parents: ParentTable | None = None  # (parent index, action chain) per state


class ParentTable:
    """Per-state (parent index, action chain), stored as two int arrays;
    chains are interned, so a state costs 12 bytes here."""

    def __init__(self):
        self._parent = array("q")
        self._chain = array("I")
        self._chain_ids = {}
        self._chains = []

    def append(self, item):
        parent, chain = item
        chain = tuple(chain)
        cid = self._chain_ids.get(chain)
        if cid is None:
            cid = self._chain_ids[chain] = len(self._chains)
            self._chains.append(chain)
        self._parent.append(parent)
        self._chain.append(cid)

    def __len__(self):
        return len(self._parent)

    def __getitem__(self, i):
        return self._parent[i], self._chains[self._chain[i]]

    def nbytes(self):
        return (
            self._parent.itemsize * len(self._parent)
            + self._chain.itemsize * len(self._chain)
            + sys.getsizeof(self._chain_ids)
            + sys.getsizeof(self._chains)
        )


class _Stop(Exception):
    def __init__(self, verdict):
        self.verdict = verdict


class Explorer:
    """Depth-first search over the (optionally reduced) state graph."""

    def __init__(self, model: Model, prop: Property, options: Options | None = None):
        self.model = model
        self.prop = prop
        self.opts = options or Options()
        self.ctx = PorContext(model, prop)
        self.rng = random.Random(self.opts.shuffle_seed) if self.opts.shuffle_seed is not None else None

    # --- one expansion step ------------------------------------------------------
    def expand(self, s):
        """(fully expanded?, list of (actions chain, target state, error))."""
        m = self.model
        en = m.enabled(s)
        amp = self.ctx.ample(s, en) if self.opts.por else en
        errs = check_c1_c3(self.ctx, s, en, amp) if self.opts.validate else []
        amp = list(amp)
        if self.rng is not None:
            self.rng.shuffle(amp)
        return len(amp) == len(en), amp, errs

    def edge(self, s, a):
        """Fire ``a`` and, when chains are merged, the safe actions it newly
        enables. Returns (chain, target) or raises _Stop on a violation."""
        m = self.model
        t = m.step(s, a)
        chain = [a]
        self._check_edge(chain, a, t)
        if not (self.opts.merge_chains and self.opts.por):
            return chain, t
        prev_en = set(m.enabled(s))
        for _ in range(MAX_FUSION):
            en = m.enabled(t)
            amp = self.ctx.ample(t, en)
            if len(amp) == len(en):
                break
            fresh = [b for b in amp if b not in prev_en]
            if not fresh:
                break
            self._check_state(chain, t)
            b = fresh[0]
            prev_en = set(en)
            t = m.step(t, b)
            chain.append(b)
            self._check_edge(chain, b, t)
        return chain, t

    def _check_edge(self, chain, a, t):
        if not self.prop.modalities:
            return
        mod = self.prop.failed_modality(a, t, self.model)
        if mod is not None:
            self._fail(chain, f"modality {mod.text} with {mod.describe(self.model, a)}")

    def _check_state(self, chain, s):
        if not self.prop.eval_state(s, self.model):
            text = self.prop.failed_conjunct(s, self.model)
            self._fail(chain, f"invariant {text}")

    def _fail(self, chain, witness):
        """Report a violation. An exhaustive search keeps the first one and
        carries on; otherwise the search stops here."""
        if not self.opts.exhaustive:
            self._pending = (tuple(chain), witness)
            raise _Stop(None)
        if self._first is None:
            self._first = (tuple(chain), witness)
            self._fresh = True

    # --- search ----------------------------------------------------------------
    def run(self) -> Run:
        if self.opts.threads > 1:
            if self.opts.exhaustive:
                raise ValueError("exhaustive search is sequential only")
            return _parallel_run(self)
        m = self.model
        self._first, self._fresh, first_at = None, False, None
        stats = RunStats()
        t0 = time.perf_counter()
        deadline = t0 + self.opts.time_limit if self.opts.time_limit else None
        index = {}
        parents = ParentTable()
        full_flags = []
        edges = {} if self.opts.validate else None
        validation = []

        def trace_to(i):
            chains = []
            while i >= 0:
                p, chain = parents[i]
                chains.append(chain)
                i = p
            return tuple(a for c in reversed(chains) for a in c)

        def finish(verdict):
            stats.wall_time = time.perf_counter() - t0
            stats.visited = len(index)
            stats.python_bytes = sum(sys.getsizeof(k) for k in index) + sys.getsizeof(index) + parents.nbytes()
            if edges is not None and isinstance(verdict, Holds):
                validation.extend(check_c4(len(index), edges, full_flags))
            if self.opts.keep_visited:
                return Run(verdict, stats, index, validation, parents)
            return Run(verdict, stats, None, validation)

        def violated(i, pending):
            chain, witness = pending
            return finish(Violated(trace_to(i) + chain, witness))

        def noted(i):
            nonlocal first_at
            if self._fresh:
                self._fresh, first_at = False, i

        s0 = m.initial_state()
        try:
            self._check_state([], s0)
        except _Stop:
            return violated(-1, self._pending)
        noted(-1)
        k0 = m.pack(s0)
        index[k0] = 0
        stats.packed_bytes += len(k0)
        parents.append((-1, ()))
        full, amp, errs = self.expand(s0)
        full_flags.append(full)
        validation.extend(errs)
        stats.reduced_states += not full
        stack = [(0, s0, amp, 0)]
        try:
            while stack:
                i, s, amp, pos = stack[-1]
                if pos >= len(amp):
                    stack.pop()
                    continue
                stack[-1] = (i, s, amp, pos + 1)
                a = amp[pos]
                try:
                    chain, t = self.edge(s, a)
                except _Stop:
                    return violated(i, self._pending)
                noted(i)
                stats.transitions += len(chain)
                stats.fused += len(chain) - 1
                if t is s:
                    if edges is not None:
                        edges.setdefault(i, []).append(i)
                    continue
                key = m.pack(t)
                j = index.get(key)
                if j is None:
                    j = len(parents)
                    if self.opts.max_states is not None and j >= self.opts.max_states:
                        return finish(ResourceLimit(j, f"state budget of {self.opts.max_states} exhausted"))
                    if deadline is not None and time.perf_counter() > deadline:
                        return finish(ResourceLimit(j, f"time limit of {self.opts.time_limit}s exceeded"))
                    index[key] = j
                    parents.append((i, tuple(chain)))
                    stats.packed_bytes += len(key)
                    try:
                        self._check_state([], t)
                    except _Stop:
                        return violated(j, self._pending)
                    noted(j)
                    full, tamp, errs = self.expand(t)
                    full_flags.append(full)
                    validation.extend(errs)
                    stats.reduced_states += not full
                    stack.append((j, t, tamp, 0))
                    if len(stack) > stats.peak_stack:
                        stats.peak_stack = len(stack)
                if edges is not None:
                    edges.setdefault(i, []).append(j)
        except (CqOverflow, TableFull) as exc:
            return finish(ResourceLimit(len(index), str(exc)))
        if self._first is not None:
            return violated(first_at, self._first)
        return finish(Holds())


def explore(model: Model, prop: Property, options: Options | None = None):
    """(verdict, stats) of one search."""
    run = Explorer(model, prop, options).run()
    return run.verdict, run.stats


# --- parallel mode -------------------------------------------------------------
def _parallel_run(ex: Explorer) -> Run:
    """Level-synchronous breadth-first search; successor computation runs on
    a thread pool and results are merged in frontier order, so the visited
    set and the verdict do not depend on thread timing."""
    m = ex.model
    opts = ex.opts
    stats = RunStats()
    t0 = time.perf_counter()
    deadline = t0 + opts.time_limit if opts.time_limit else None
    index, parents = {}, ParentTable()

    def trace_to(i):
        chains = []
        while i >= 0:
            p, chain = parents[i]
            chains.append(chain)
            i = p
        return tuple(a for c in reversed(chains) for a in c)

    def finish(verdict):
        stats.wall_time = time.perf_counter() - t0
        stats.visited = len(index)
        if opts.keep_visited:
            return Run(verdict, stats, index, [], parents)
        return Run(verdict, stats, None, [])

    def work(item):
        i, s = item
        sub = Explorer(m, ex.prop, Options(por=opts.por, merge_chains=opts.merge_chains))
        _, amp, _ = sub.expand(s)
        out = []
        for a in amp:
            try:
                chain, t = sub.edge(s, a)
            except _Stop:
                return out, sub._pending
            out.append((chain, t))
        return out, None

    s0 = m.initial_state()
    if not ex.prop.eval_state(s0, m):
        return finish(Violated((), f"invariant {ex.prop.failed_conjunct(s0, m)}"))
    k0 = m.pack(s0)
    index[k0] = 0
    parents.append((-1, ()))
    stats.packed_bytes += len(k0)
    frontier = [(0, s0)]
    try:
        with ThreadPoolExecutor(max_workers=opts.threads) as pool:
            while frontier:
                results = list(pool.map(work, frontier))
                nxt = []
                for (i, s), (succ, pending) in zip(frontier, results):
                    if pending is not None:
                        chain, witness = pending
                        return finish(Violated(trace_to(i) + chain, witness))
                    for chain, t in succ:
                        stats.transitions += len(chain)
                        if t is s:
                            continue
                        key = m.pack(t)
                        if key in index:
                            continue
                        j = len(parents)
                        if opts.max_states is not None and j >= opts.max_states:
                            return finish(ResourceLimit(j, f"state budget of {opts.max_states} exhausted"))
                        if deadline is not None and time.perf_counter() > deadline:
                            return finish(ResourceLimit(j, f"time limit of {opts.time_limit}s exceeded"))
                        index[key] = j
                        parents.append((i, tuple(chain)))
                        stats.packed_bytes += len(key)
                        if not ex.prop.eval_state(t, m):
                            return finish(Violated(trace_to(j), f"invariant {ex.prop.failed_conjunct(t, m)}"))
                        nxt.append((j, t))
                frontier = nxt
                stats.peak_stack = max(stats.peak_stack, len(frontier))
    except (CqOverflow, TableFull) as exc:
        return finish(ResourceLimit(len(index), str(exc)))
    return finish(Holds())


# --- replay and comparison ---------------------------------------------------------
def replay(model: Model, trace, prop: Property | None = None):
    """Fire ``trace`` from the initial state. Returns (final state, witness),
    where the witness names the first property violation met, if any."""
    s = model.initial_state()
    witness = None
    if prop is not None and not prop.eval_state(s, model):
        witness = f"invariant {prop.failed_conjunct(s, model)}"
    for n, a in enumerate(trace, 1):
        if not model.is_enabled(s, a):
            raise ReplayDiverged(f"step {n}: {model.fmt_action(a)} is not enabled")
        s = model.fire(s, a)
        if prop is not None and witness is None:
            mod = prop.failed_modality(a, s, model)
            if mod is not None:
                witness = f"modality {mod.text} with {mod.describe(model, a)}"
            elif not prop.eval_state(s, model):
                witness = f"invariant {prop.failed_conjunct(s, model)}"
    return s, witness


@dataclass
class ModeReport:
    full: object
    reduced: object
    full_visited: int
    reduced_visited: int
    subset: bool

    @property
    def same_verdict(self):
        return type(self.full) is type(self.reduced)

    @property
    def ratio(self):
        return self.full_visited / self.reduced_visited if self.reduced_visited else float("inf")


def compare_modes(model: Model, prop: Property, max_states=None, merge_chains=False) -> ModeReport:
    """Full and reduced search on one model (ids are shared, so packed
    states are directly comparable). Both searches run past violations, so
    the subset check covers whole reachable sets rather than search prefixes."""
    full = Explorer(model, prop, Options(por=False, max_states=max_states, keep_visited=True, exhaustive=True)).run()
    if isinstance(full.verdict, ResourceLimit):
        raise Inconclusive(f"full search hit its budget: {full.verdict.reason}")
    red = Explorer(
        model, prop, Options(por=True, merge_chains=merge_chains, max_states=max_states, keep_visited=True, exhaustive=True)
    ).run()
    subset = all(k in full.visited for k in red.visited)
    return ModeReport(full.verdict, red.verdict, full.stats.visited, red.stats.visited, subset)


def fingerprint_of(model: Model, s) -> int:
    return state_fingerprint(model.pack(s))


def format_trace(model: Model, verdict: Violated) -> list[str]:
    lines = [f"step {n}: {model.fmt_action(a)}" for n, a in enumerate(verdict.trace, 1)]
    lines.append("violation:")
    lines.append(f"  {verdict.witness}")
    return lines


def trace_document(model: Model, verdict: Violated) -> dict:
    return {
        "verdict": "Violated",
        "witness": verdict.witness,
        "steps": [
            {"step": n, "text": model.fmt_action(a), "action": model.action_to_json(a)}
            for n, a in enumerate(verdict.trace, 1)
        ],
    }


def actions_from_document(model: Model, doc: dict) -> list[Action]:
    return [model.action_from_json(st["action"]) for st in doc["steps"]]
