from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import two_switch, shipped
from sdnmc.controllers import PROGRAMS, make_program
from sdnmc.errors import ScenarioError
from sdnmc.explorer import Explorer, Options
from sdnmc.model import Packet, Rule
from sdnmc.por import validate_order_sensitivity
from sdnmc.topology import DROP, HOST, SWITCH, Location, NodeId, chain

AT_A1 = Location(NodeId(SWITCH, 0), 1)


def msg_names(out, sw):
    for s, msgs in out.messages:
        if s == sw:
            return [m[0] if m[0] == "barrier" else f"{m[0]} {m[1].name}" for m in msgs]
    return []


def test_stateless_firewall_message_orders() -> None:
    topo, buggy, _, _ = two_switch("stateless_firewall", variant="buggy")
    fixed = make_program("stateless_firewall", topo, {"variant": "fixed"})
    pkt = Packet((0,), AT_A1)
    out_b = buggy.pkt_in((), 0, pkt)
    out_f = fixed.pkt_in((), 0, pkt)
    assert msg_names(out_b, 0) == ["add rule2", "add rule1", "barrier", "add rule3"]
    assert msg_names(out_f, 0) == ["add rule1", "barrier", "add rule2", "add rule3"]
    assert out_b.packet_outs == out_f.packet_outs == ((0, pkt, (2,)),)
    ssh = buggy.pkt_in((), 0, Packet((1,), AT_A1))
    assert ssh.packet_outs == ()


def test_firewall_variants_differ_only_in_message_order() -> None:
    topo, buggy, _, _ = two_switch("stateless_firewall", variant="buggy")
    fixed = make_program("stateless_firewall", topo, {"variant": "fixed"})
    for ssh in (0, 1):
        for sw in (0, 1):
            for port in (1, 2):
                pkt = Packet((ssh,), Location(NodeId(SWITCH, sw), port))
                b, f = buggy.pkt_in((), sw, pkt), fixed.pkt_in((), sw, pkt)
                assert b.cs == f.cs and b.packet_outs == f.packet_outs
                for s in (0, 1):
                    assert sorted(msg_names(b, s)) == sorted(msg_names(f, s))


def test_ssh_guard_variants_differ_only_when_flag_is_set() -> None:
    topo, wrong, _, _ = two_switch("ssh_guard", variant="wrongnest", server="S")
    fixed = make_program("ssh_guard", topo, {"variant": "fixed", "server": "S"})
    for flag in (0, 1):
        for ssh in (0, 1):
            for dest in (0, 1):
                pkt = Packet((ssh, dest), AT_A1)
                w, f = wrong.pkt_in((flag,), 0, pkt), fixed.pkt_in((flag,), 0, pkt)
                if flag and ssh and dest == 1:
                    assert f.packet_outs == () and f.messages == ()
                    assert w.packet_outs == ((0, pkt, (2,)),)
                else:
                    assert w == f


def test_ssh_guard_first_request_installs_drop_rule_and_sets_flag() -> None:
    _, prog, _, _ = two_switch("ssh_guard", variant="fixed", server="S")
    out = prog.pkt_in((0,), 0, Packet((1, 1), AT_A1))
    assert out.cs == (1,)
    assert msg_names(out, 0) == ["add drop_rule", "barrier"]
    assert all(m[1].drops for _, ms in out.messages for m in ms if m[0] == "add")


def test_mac_learning_learns_and_floods() -> None:
    topo = chain(2, 2)
    prog = make_program("mac_learning", topo)
    n_h = topo.n_hosts
    # h0 sits on s0 port 3; a packet from h0 to h1 arrives at s0 port 3
    pkt = Packet((0, 1), Location(NodeId(SWITCH, 0), 3))
    out = prog.pkt_in(prog.initial_cs(), 0, pkt)
    assert out.cs[0 * n_h + 0] == 3
    assert out.packet_outs == ((0, pkt, (2,)),)  # s0 has no left neighbour
    assert out.messages == ()
    assert prog.ctrl_pred("mac_table", out.cs, (NodeId(SWITCH, 0), NodeId(HOST, 0), 3))
    # the reply from h1 arrives at s0 port 2 and is now unicast to port 3
    back = Packet((1, 0), Location(NodeId(SWITCH, 0), 2))
    out2 = prog.pkt_in(out.cs, 0, back)
    assert out2.packet_outs == ((0, back, (3,)),)
    ((sw, msgs),) = out2.messages
    assert sw == 0 and msgs[0][1] == Rule.make(1, [3], src=1, dest=0, in_port=2)


def test_stateful_firewall_barrier_reply_sets_view_bit() -> None:
    _, prog, _, _ = shipped("cp2_stateful_2")
    conn = prog.allowed[0]
    pkt = Packet(conn, Location(NodeId(SWITCH, 1), 1))
    assert not prog.ctrl_pred("controller_view", prog.initial_cs(), (pkt, NodeId(SWITCH, 1)))
    cs = prog.barrier_in(prog.initial_cs(), 1, 1).cs
    assert prog.ctrl_pred("controller_view", cs, (pkt, NodeId(SWITCH, 1)))
    assert not prog.ctrl_pred("controller_view", cs, (pkt, NodeId(SWITCH, 0)))
    assert prog.barrier_in(cs, 0, 9).cs == cs


def test_stateful_firewall_drops_unknown_connections() -> None:
    _, prog, _, _ = shipped("cp2_stateful_1")
    other = (1, 0, 0, 0)
    out = prog.pkt_in(prog.initial_cs(), 0, Packet(other, Location(NodeId(SWITCH, 0), 2)))
    assert out.packet_outs[0][2] == (DROP,)
    assert all(m[1].drops for _, ms in out.messages for m in ms)


def test_consistent_update_gates_release_on_the_barrier() -> None:
    _, prog, _, _ = shipped("cp5_consistent_fixed")
    pkt = Packet((1,), AT_A1)
    out = prog.pkt_in(prog.initial_cs(), 0, pkt)
    assert out.packet_outs == ()
    assert msg_names(out, prog.gate) == ["add rule_S", "barrier"]
    released = prog.barrier_in(out.cs, prog.gate, prog.B_ID)
    assert released.cs[0] == 1 and released.cs[1] == 0
    assert released.packet_outs == ((0, pkt, (2,)),)
    assert prog.initial_rules() == {prog.gate: [Rule.make(0, [DROP], "drop_all")]}


def test_consistent_update_buggy_forwards_immediately() -> None:
    _, prog, _, _ = shipped("cp5_consistent_buggy")
    pkt = Packet((1,), AT_A1)
    out = prog.pkt_in(prog.initial_cs(), 0, pkt)
    assert out.packet_outs == ((0, pkt, (2,)),)
    assert {sw for sw, _ in out.messages} == {0, 1}


@pytest.mark.parametrize("name", ["cp1_buggy_2sw", "cp2_stateful_1", "cp3_maclearn_2x2", "cp4_fixed", "cp5_consistent_fixed", "relay_2sw"])
def test_declarations_are_consistent(name: str) -> None:
    topo, prog, model, _ = shipped(name)
    d = prog.declare()
    assert d["packet_schema"] is prog.schema
    for h, port, header in d["representatives"]:
        assert prog.schema.check(header) == []
        assert port in topo.ports(NodeId(HOST, h))
    assert d["cs_width"] == sum(prog.cs_widths())
    assert prog.codec.decode(prog.codec.encode(prog.initial_cs())) == prog.initial_cs()


def test_declared_order_sensitivity_is_conservative() -> None:
    # a program declared insensitive must have no witness of sensitivity
    for name in ["cp1_buggy_2sw", "cp1_fixed_2sw", "cp2_stateful_1", "cp5_consistent_buggy", "cp5_consistent_fixed", "relay_2sw"]:
        _, prog, model, _ = shipped(name)
        assert not prog.order_sensitive
        assert not validate_order_sensitivity(model).sensitive


def test_mac_learning_is_order_sensitive() -> None:
    _, prog, model, _ = shipped("cp3_maclearn_2x2")
    rep = validate_order_sensitivity(model)
    assert prog.order_sensitive and rep.sensitive
    s, a, b = rep.witness
    assert model.pack(model.fire(model.fire(s, a), b)) != model.pack(model.fire(model.fire(s, b), a))


@given(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1), st.integers(1, 2))
@settings(max_examples=50, deadline=None)
def test_handlers_are_pure(flag: int, ssh: int, dest: int, port: int) -> None:
    _, prog, _, _ = two_switch("ssh_guard", variant="wrongnest", server="S")
    pkt = Packet((ssh, dest), Location(NodeId(SWITCH, 0), port))
    assert prog.pkt_in((flag,), 0, pkt) == prog.pkt_in((flag,), 0, pkt)


def test_unknown_program_and_variant_are_rejected() -> None:
    topo = chain(1, 2)
    with pytest.raises(ScenarioError, match="unknown program"):
        make_program("nope", topo)
    with pytest.raises(ScenarioError, match="unknown variant"):
        make_program("stateless_firewall", topo, {"variant": "odd"})
    with pytest.raises(ScenarioError, match="is not a host"):
        make_program("stateless_firewall", topo, {"client": "s0"}).representatives()
    assert set(PROGRAMS) >= {"stateless_firewall", "stateful_firewall", "mac_learning", "ssh_guard", "consistent_update"}


def test_consistent_update_buggy_violates_and_fixed_holds() -> None:
    for name, want in (("cp5_consistent_buggy", "Violated"), ("cp5_consistent_fixed", "Holds")):
        _, _, m, p = shipped(name)
        assert Explorer(m, p, Options(por=False)).run().verdict.name == want
