from __future__ import annotations

import io
import json
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdnmc.cli import bench_rows, format_table, parse_suite, run
from sdnmc.errors import ScenarioError
from sdnmc.scenario import Scenario, build, format_scenario, load_scenario, parse_scenario, shipped_scenarios

TWO_SWITCH_FW = """[topology]
hosts = C S
switches = A B
link = C:1 A:1
link = A:2 B:1
link = B:2 S:1

[controller]
program = stateless_firewall
variant = fixed

[property]
{prop}
"""


def cli(*args) -> tuple[int, str]:
    out = io.StringIO()
    return run(list(args), out), out.getvalue()


def test_shipped_firewall_scenario_parses() -> None:
    sc = load_scenario("cp1_buggy_2sw")
    topo, prog, _, _ = build(sc)
    assert topo.n_switches == 2 and topo.n_hosts == 2
    assert prog.name == "stateless_firewall" and prog.variant == "buggy"
    assert sc.budgets["max_states"] == 200000


def test_missing_property_is_reported() -> None:
    with pytest.raises(ScenarioError, match="property required"):
        parse_scenario(TWO_SWITCH_FW.format(prop=""))


def test_unknown_node_in_property_is_reported() -> None:
    sc = parse_scenario(TWO_SWITCH_FW.format(prop="(exists_in s5 rcvq true)"))
    with pytest.raises(ScenarioError, match=r"line 13, column 12: unknown node 's5'"):
        build(sc)


def test_syntax_errors_name_the_line() -> None:
    with pytest.raises(ScenarioError) as e:
        parse_scenario("[topology]\nhosts C\n[widgets]\n")
    msgs = e.value.errors
    assert any(m.startswith("line 2, column 1: expected key = value") for m in msgs)
    assert any(m.startswith("line 3, column 2: unknown section [widgets]") for m in msgs)
    assert "[controller] program required" in msgs


@pytest.mark.parametrize("name", shipped_scenarios())
def test_format_parse_round_trip_on_shipped(name: str) -> None:
    sc = load_scenario(name)
    assert parse_scenario(format_scenario(sc)) == sc


ident = st.text("ABCDEFGHJKLMNPQRTUVWXYZ", min_size=1, max_size=3)


@st.composite
def scenarios(draw) -> Scenario:
    n_h = draw(st.integers(1, 3))
    n_s = draw(st.integers(1, 3))
    names = draw(st.lists(ident, min_size=n_h + n_s, max_size=n_h + n_s, unique=True))
    hosts, switches = tuple(names[:n_h]), tuple(names[n_h:])
    links = tuple(
        ((hosts[i], 1), (switches[i % n_s], 10 + i)) for i in range(n_h)
    )
    params = draw(st.dictionaries(st.sampled_from(["variant", "client", "server", "gate"]), ident, max_size=3))
    budgets = draw(st.dictionaries(st.sampled_from(["max_states", "max_cq"]), st.integers(1, 10**6), max_size=2))
    prop = draw(st.sampled_from(["true", "(not (exists_in X rcvq true))", "(and true\n  false)"]))
    return Scenario(hosts=hosts, switches=switches, links=links, program="constant", params=params, property=prop, budgets=budgets)


@given(scenarios())
@settings(max_examples=100, deadline=None)
def test_format_parse_round_trip_random(sc: Scenario) -> None:
    assert parse_scenario(format_scenario(sc)) == sc


def test_cli_verdict_exit_codes(tmp_path) -> None:
    code, out = cli("--scenario", "cp1_fixed_2sw")
    assert code == 0 and "verdict: Holds" in out
    trace = tmp_path / "t.txt"
    code, out = cli("--scenario", "cp1_buggy_2sw", "--emit-trace", str(trace))
    assert code == 1 and "verdict: Violated" in out
    assert trace.read_text().splitlines()[-2] == "violation:"
    doc = json.loads((tmp_path / "t.txt.json").read_text())
    assert doc["scenario"] == "cp1_buggy_2sw" and doc["steps"]
    code, out = cli("--scenario", "cp3_maclearn_2x2", "--full", "--max-states", "50")
    assert code == 2 and "ResourceLimit" in out


def test_cli_usage_errors() -> None:
    assert cli("--bogus")[0] == 3
    assert cli("--por", "maybe", "--scenario", "cp1_fixed_2sw")[0] == 3
    assert cli("--scenario", "no_such_scenario")[0] == 3
    assert cli()[0] == 3


def test_cli_bad_scenario_file(tmp_path, capsys) -> None:
    f = tmp_path / "bad.scn"
    f.write_text(TWO_SWITCH_FW.format(prop="(exists_in s5 rcvq true)"))
    assert cli("--scenario", str(f))[0] == 3
    assert "unknown node 's5'" in capsys.readouterr().err


def test_cli_stats_and_list() -> None:
    code, out = cli("--scenario", "cp1_fixed_2sw", "--stats")
    keys = [line.split("=")[0] for line in out.splitlines() if "=" in line]
    assert {"visited", "transitions", "bytes_per_state", "throughput"} <= set(keys)
    code, out = cli("--list")
    assert code == 0 and "cp1_buggy_2sw" in out.split()


def test_cli_validate_por() -> None:
    code, out = cli("--scenario", "cp1_fixed_2sw", "--validate-por")
    assert code == 0
    assert "validate: full visited=10809 reduced visited=438" in out
    assert out.rstrip().endswith("validate: ok")


def test_cli_replay(tmp_path, capsys) -> None:
    trace = tmp_path / "t"
    cli("--scenario", "cp4_wrongnest", "--emit-trace", str(trace))
    code, out = cli("--scenario", "cp4_wrongnest", "replay", str(trace) + ".json")
    assert code == 1 and "invariant" in out
    # the fixed program never emits the packet-out the buggy trace forwards
    code, _ = cli("--scenario", "cp4_fixed", "replay", str(trace) + ".json")
    assert code == 3 and "is not enabled" in capsys.readouterr().err


def test_bench_suite_rows() -> None:
    suite = parse_suite("template = cp3_maclearn_2x2\ngrid = 2x2 3x2 4x2\nmodes = por full\nmax_states = 300\n")
    rows = bench_rows(suite)
    assert [(r["cell"], r["mode"]) for r in rows] == [
        (c, m) for c in ("2x2", "3x2", "4x2") for m in ("por", "full")
    ]
    assert all(r["topped_up"] == (r["verdict"] == "ResourceLimit") for r in rows)
    table = format_table(rows)
    assert len(table) == 7 and "+" in table[-1]


def test_bench_empty_grid_gives_header_only() -> None:
    suite = parse_suite("grid =\n")
    assert format_table(bench_rows(suite)) == format_table([])
    assert len(format_table([])) == 1


def test_bench_suite_errors() -> None:
    with pytest.raises(ScenarioError, match="grid cells"):
        parse_suite("grid = 3by2\n")
    with pytest.raises(ScenarioError, match="unknown modes"):
        parse_suite("modes = turbo\n")


def test_console_script_runs() -> None:
    r = subprocess.run([sys.executable, "-m", "sdnmc.cli", "--scenario", "cp5_consistent_fixed"], capture_output=True, text=True)
    assert r.returncode == 0 and "verdict: Holds" in r.stdout
