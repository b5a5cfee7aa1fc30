"""Scenario files: topology, controller program, property and budgets.

Format (``#`` starts a comment line)::

    [topology]
    hosts = C S
    switches = A B
    link = C:1 A:1          # one line per cable
    # or instead of hosts/switches/link:
    shape = chain 3 2       # or: replicas 2

    [controller]
    program = stateless_firewall
    variant = buggy
    client = C              # any further key is a program parameter

    [property]
    (not (exists_in S rcvq (= SSH 1)))

    [budgets]
    max_states = 100000
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .controllers import make_program
from .errors import ModelError, ScenarioError
from .prop import parse_property
from .semantics import Model
from .topology import HOST, SWITCH, NodeId, Topology, chain, replicas

SECTIONS = ("topology", "controller", "property", "budgets")
BUDGET_KEYS = {
    "max_states": int,
    "max_cq": int,
    "max_packets": int,
    "max_rules": int,
    "time_limit": float,
}
DEFAULT_BUDGETS = {"max_cq": 64, "max_packets": 65535, "max_rules": 1 << 20}


@dataclass
class Scenario:
    name: str = ""
    hosts: tuple = ()
    switches: tuple = ()
    links: tuple = ()  # ((node, port), (node, port)) by name
    shape: str = ""
    program: str = ""
    params: dict = field(default_factory=dict)
    property: str = ""
    property_line: int = 1
    budgets: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.hosts,
            self.switches,
            self.links,
            self.shape,
            self.program,
            self.params,
            " ".join(self.property.split()),
            self.budgets,
        ) == (
            other.hosts,
            other.switches,
            other.links,
            other.shape,
            other.program,
            other.params,
            " ".join(other.property.split()),
            other.budgets,
        )

    # --- construction ---------------------------------------------------------
    def topology(self) -> Topology:
        if self.shape:
            kind, *args = self.shape.split()
            try:
                nums = [int(x) for x in args]
                if kind == "chain" and len(nums) == 2:
                    return chain(*nums)
                if kind == "replicas" and len(nums) == 1:
                    return replicas(*nums)
            except ValueError:
                pass
            raise ScenarioError(f"[topology] shape: expected 'chain S H' or 'replicas N', got {self.shape!r}")
        names = {}
        for i, h in enumerate(self.hosts):
            names[h] = NodeId(HOST, i)
        for i, s in enumerate(self.switches):
            if s in names:
                raise ScenarioError(f"[topology] node name {s!r} declared twice")
            names[s] = NodeId(SWITCH, i)
        cables, errs = [], []
        for (a, pa), (b, pb) in self.links:
            for n in (a, b):
                if n not in names:
                    errs.append(f"[topology] link: unknown node {n!r}")
            if a in names and b in names:
                cables.append(((names[a], pa), (names[b], pb)))
        if errs:
            raise ScenarioError(errs)
        return Topology(self.hosts, self.switches, cables)

    def build(self):
        """(topology, program, model, property), cross-validated."""
        topo = self.topology()
        errs = topo.validate()
        if errs:
            raise ScenarioError([f"[topology] {e}" for e in errs])
        params = dict(self.params)
        program = make_program(self.program, topo, params)
        b = {**DEFAULT_BUDGETS, **self.budgets}
        model = Model(topo, program, max_packets=b["max_packets"], max_rules=b["max_rules"], max_cq=b["max_cq"])
        if not self.property.strip():
            raise ScenarioError("property required")
        prop = parse_property(self.property, topo, program, self.property_line)
        return topo, program, model, prop


def _parse_port(text, where):
    node, sep, port = text.rpartition(":")
    if not sep or not node:
        raise ScenarioError(f"{where}: expected NODE:PORT, got {text!r}")
    try:
        return node, int(port)
    except ValueError:
        raise ScenarioError(f"{where}: port in {text!r} is not a number") from None


def parse_scenario(text: str, name="") -> Scenario:
    sc = Scenario(name=name)
    errors = []
    section = None
    seen = set()
    prop_lines = []
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if section == "property":
            if line.startswith("[") and line.endswith("]") and line[1:-1].strip() in SECTIONS:
                pass
            elif line.startswith("#"):
                continue
            else:
                if not prop_lines:
                    sc.property_line = ln
                prop_lines.append(raw)
                continue
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                errors.append(f"line {ln}, column 1: unterminated section header")
                continue
            section = line[1:-1].strip()
            if section not in SECTIONS:
                errors.append(f"line {ln}, column 2: unknown section [{section}]")
                section = None
            elif section in seen:
                errors.append(f"line {ln}, column 2: section [{section}] repeated")
            seen.add(section or "")
            continue
        if "#" in line:
            line = line[: line.index("#")].rstrip()
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        where = f"line {ln}, column 1"
        if not eq or not key:
            errors.append(f"{where}: expected key = value")
            continue
        if section is None:
            errors.append(f"{where}: {key} outside any section")
        elif section == "topology":
            if key == "hosts":
                sc.hosts = tuple(value.split())
            elif key == "switches":
                sc.switches = tuple(value.split())
            elif key == "link":
                ends = value.split()
                if len(ends) != 2:
                    errors.append(f"{where}: link needs two NODE:PORT endpoints")
                    continue
                try:
                    sc.links += ((_parse_port(ends[0], where), _parse_port(ends[1], where)),)
                except ScenarioError as e:
                    errors.extend(e.errors)
            elif key == "shape":
                sc.shape = " ".join(value.split())
            else:
                errors.append(f"{where}: unknown [topology] key {key!r}")
        elif section == "controller":
            if key == "program":
                sc.program = value
            else:
                sc.params[key] = value
        elif section == "budgets":
            conv = BUDGET_KEYS.get(key)
            if conv is None:
                errors.append(f"{where}: unknown [budgets] key {key!r}")
                continue
            try:
                sc.budgets[key] = conv(value)
            except ValueError:
                errors.append(f"{where}: {key} must be a number")
    sc.property = "\n".join(prop_lines).strip("\n")
    if sc.property_line and prop_lines:
        # skip leading blank lines so reported positions stay exact
        lead = 0
        for raw in prop_lines:
            if raw.strip():
                break
            lead += 1
        sc.property_line += lead
        sc.property = "\n".join(prop_lines[lead:]).rstrip()
    if "topology" not in seen:
        errors.append("[topology] section required")
    elif not sc.shape and not (sc.hosts and sc.switches):
        errors.append("[topology] needs hosts and switches, or a shape")
    if not sc.program:
        errors.append("[controller] program required")
    if not sc.property.strip():
        errors.append("property required")
    if errors:
        raise ScenarioError(errors)
    return sc


def format_scenario(sc: Scenario) -> str:
    out = ["[topology]"]
    if sc.shape:
        out.append(f"shape = {sc.shape}")
    else:
        out.append("hosts = " + " ".join(sc.hosts))
        out.append("switches = " + " ".join(sc.switches))
        for (a, pa), (b, pb) in sc.links:
            out.append(f"link = {a}:{pa} {b}:{pb}")
    out += ["", "[controller]", f"program = {sc.program}"]
    for k, v in sc.params.items():
        out.append(f"{k} = {v}")
    out += ["", "[property]", sc.property.strip()]
    if sc.budgets:
        out += ["", "[budgets]"]
        for k, v in sc.budgets.items():
            out.append(f"{k} = {v}")
    return "\n".join(out) + "\n"


def load_scenario(path) -> Scenario:
    p = Path(path)
    if not p.exists():
        p2 = shipped_dir() / path
        if p2.exists():
            p = p2
        elif (shipped_dir() / f"{path}.scn").exists():
            p = shipped_dir() / f"{path}.scn"
        else:
            raise ScenarioError(f"no scenario file {path!r}")
    return parse_scenario(p.read_text(encoding="utf-8"), name=p.stem)


def shipped_dir() -> Path:
    return Path(__file__).parent / "scenarios"


def shipped_scenarios() -> list[str]:
    return sorted(p.stem for p in shipped_dir().glob("*.scn"))


def build(sc: Scenario):
    try:
        return sc.build()
    except ScenarioError:
        raise
    except ModelError as exc:
        raise ScenarioError(str(exc)) from exc


__all__ = [
    "Scenario",
    "parse_scenario",
    "format_scenario",
    "load_scenario",
    "shipped_scenarios",
    "build",
]
