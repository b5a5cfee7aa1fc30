"""Shared fixtures-as-functions for the test modules."""
from __future__ import annotations

import random

from sdnmc.scenario import build, load_scenario, parse_scenario

TWO_SWITCH = """
[topology]
hosts = C S
switches = A B
link = C:1 A:1
link = A:2 B:1
link = B:2 S:1

[controller]
program = {program}
{params}

[property]
{prop}
"""


def shipped(name: str):
    """(topology, program, model, property) of a shipped scenario."""
    return build(load_scenario(name))


def two_switch(program: str, prop: str = "true", **params):
    text = TWO_SWITCH.format(
        program=program, params="\n".join(f"{k} = {v}" for k, v in params.items()), prop=prop
    )
    return build(parse_scenario(text, name=program))


def random_walk(model, steps: int, seed: int):
    """States and actions along one random run from the initial state."""
    rng = random.Random(seed)
    s = model.initial_state()
    states, actions = [s], []
    for _ in range(steps):
        en = model.enabled(s)
        a = rng.choice(en)
        s = model.fire(s, a)
        states.append(s)
        actions.append(a)
    return states, actions


def reachable(model, limit: int = 200_000):
    """Every reachable state of ``model`` (plain DFS, no reduction)."""
    s0 = model.initial_state()
    seen = {model.pack(s0): s0}
    stack = [s0]
    while stack:
        s = stack.pop()
        for a in model.enabled(s):
            t = model.fire(s, a)
            k = model.pack(t)
            if k not in seen:
                seen[k] = t
                stack.append(t)
                assert len(seen) <= limit
    return seen


def independence_fuzz(names, n_triples: int, seed: int = 1, per_scenario_states: int = 20_000):
    """Sample (state, safe action, co-enabled action) triples and check that
    the safe action commutes with, does not disable and is not disabled by
    the other one, and leaves every atomic proposition unchanged.

    Returns (triples checked, list of failure descriptions)."""
    from sdnmc.por import PorContext
    from sdnmc.prop import Var

    rng = random.Random(seed)
    pools = []
    for name in names:
        _, _, m, p = shipped(name)
        ctx = PorContext(m, p)
        states = list(reachable(m, limit=10**7).values()) if per_scenario_states is None else _bounded(m, per_scenario_states)
        atoms = [x for x in p.footprint.atoms if not isinstance(x.node, Var)]
        pools.append((name, m, p, ctx, states, atoms))
    checked, failures = 0, []
    while checked < n_triples:
        name, m, p, ctx, states, atoms = rng.choice(pools)
        s = rng.choice(states)
        en = m.enabled(s)
        safe = [a for a in en if ctx.is_safe(a, s, en).safe]
        if not safe or len(en) < 2:
            continue
        a = rng.choice(safe)
        b = rng.choice([x for x in en if x != a])
        checked += 1
        sa, sb = m.fire(s, a), m.fire(s, b)
        if not m.is_enabled(sa, b):
            failures.append(f"{name}: {m.fmt_action(a)} disables {m.fmt_action(b)}")
        elif not m.is_enabled(sb, a):
            failures.append(f"{name}: {m.fmt_action(b)} disables {m.fmt_action(a)}")
        elif m.pack(m.fire(sa, b)) != m.pack(m.fire(sb, a)):
            failures.append(f"{name}: {m.fmt_action(a)} and {m.fmt_action(b)} do not commute")
        elif any(x.ev(s, m, {}) != x.ev(sa, m, {}) for x in atoms) or p.eval_state(s, m) != p.eval_state(sa, m):
            failures.append(f"{name}: {m.fmt_action(a)} is visible")
        elif any(m.program.ctrl_view(s.ctrl.cs, n) != m.program.ctrl_view(sa.ctrl.cs, n) for n in p.footprint.ctrl_names):
            failures.append(f"{name}: {m.fmt_action(a)} changes a controller predicate")
    return checked, failures


def _bounded(model, limit):
    s0 = model.initial_state()
    seen = {model.pack(s0): s0}
    stack = [s0]
    while stack and len(seen) < limit:
        s = stack.pop()
        for a in model.enabled(s):
            t = model.fire(s, a)
            k = model.pack(t)
            if k not in seen:
                seen[k] = t
                stack.append(t)
    return list(seen.values())
