import itertools
import os

import pytest

from oracles import (DE, FR, FS, LF_ON_RECEIVE, LF_RELATION, NORMAL, NP, RF_KINDS, RF_RELATION)
from spidernet.compiler import (LF_UP_WAIT, RF_NORMAL, CompileError, TimeoutProfile,
                                check_formulas, compile_network, dump, formula_counts, rf_decode,
                                rf_state, table1_bound, verify_state_sizing)
from spidernet.openstate import (TAG_DATA, TAG_HB_REPLY, TAG_HB_REQ, TAG_NONE, Duplicate,
                                 GotoTable, Output, OutputInPort, Packet, SetState, SetTag,
                                 fault, probe)
from spidernet.pathplan import EDGE_PORT, Demand, full_mesh_demands, grid_topology, plan_all

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")
MS = 1000


def compile_chain(chain, prof=None):
    plans = plan_all(chain, [Demand("s", "d")])
    return compile_network(chain, plans, prof or TimeoutProfile()), plans


@pytest.fixture(scope="module")
def grid5():
    t = grid_topology(5)
    plans = plan_all(t, full_mesh_demands(t))
    prof = TimeoutProfile()
    return t, plans, prof, compile_network(t, plans, prof)


class TestCounts:
    def test_chain_table2(self, chain):
        cfgs, _ = compile_chain(chain)
        c = cfgs["s"].count_entries()
        assert c["t2_fsm"] == 14
        assert c["t2"] == 14 + 2  # plus the two fixed catch-alls

    def test_table0_equals_ports(self, pair):
        cfgs = compile_network(pair, plan_all(pair, full_mesh_demands(pair)))
        for n, cfg in cfgs.items():
            assert cfg.count_entries()["t0"] == len(pair.ports[n])

    def test_no_rerouted_demands(self, grid5):
        t, _, _, cfgs = grid5
        core = cfgs[12].count_entries()
        assert core["t2_fsm"] == 0 and core["t2"] == 2

    def test_formulas_exact_on_every_node(self, grid5):
        _, _, _, cfgs = grid5
        for cfg in cfgs.values():
            assert check_formulas(cfg) == {}

    def test_formula_counts_independent(self, grid5):
        t, plans, _, cfgs = grid5
        for n, cfg in cfgs.items():
            rerouted = [p for p in plans if p.demand.src == n]
            local = [p for p in plans if n in p.primary[:-1]]
            ports = len(t.ports[n])
            assert formula_counts(cfg) == {
                "t0": ports,
                "t2_fsm": 7 * sum(len(p.primary) - 1 for p in rerouted),
                "t3_fsm": ports * (3 + 2 * len(local))}

    def test_table1_bound(self, grid5):
        _, _, _, cfgs = grid5
        for cfg in cfgs.values():
            assert cfg.count_entries()["t1"] <= table1_bound(cfg)

    def test_no_ambiguous_entries(self, chain):
        plans = plan_all(chain, full_mesh_demands(chain))
        compile_network(chain, plans, check=True)


class TestTimeouts:
    def test_defaults_from_delays(self, chain):
        plan = plan_all(chain, [Demand("s", "d")])[0]
        d1, d2, d3, d4 = TimeoutProfile().for_demand(chain, plan)
        # bounce from m back to s and the equal-length detour (clamped to 1 us)
        assert (d1, d2, d3, d4) == (500, 1000, 1, 2)

    def test_hard_must_exceed_idle(self, chain):
        plan = plan_all(chain, [Demand("s", "d")])[0]
        with pytest.raises(CompileError):
            TimeoutProfile(d1=5 * MS, d2=5 * MS).for_demand(chain, plan)

    def test_positive_heartbeat_timeouts(self):
        with pytest.raises(CompileError):
            TimeoutProfile(d6=0).validate()

    def test_per_port_override(self):
        prof = TimeoutProfile(per_port={("A", 1): {"d6": 3 * MS}})
        assert prof.for_port("A", 1) == (3 * MS, prof.d7)
        assert prof.for_port("A", 2) == (prof.d6, prof.d7)

    def test_state_encoding(self):
        assert rf_state(1, 0) == 1 and rf_state(4, 2) == 12
        assert rf_decode(0) == (0, None)
        assert rf_decode(12) == (4, 2)


def _interpret(actions, tag, in_port, table_id):
    """(set_states for table_id, [(tag, port)], continues) for an action list."""
    sets, outs, cont = [], [], False
    cur = tag
    for a in actions:
        if isinstance(a, SetState) and a.table_id == table_id:
            sets.append(a)
        elif isinstance(a, SetTag):
            cur = a.tag
        elif isinstance(a, Output):
            outs.append((cur, a.port))
        elif isinstance(a, OutputInPort):
            outs.append((cur, in_port))
        elif isinstance(a, GotoTable):
            cont = True
        elif isinstance(a, Duplicate):
            for branch in (a.first, a.second):
                s, o, c = _interpret(branch, cur, in_port, table_id)
                sets += s
                outs += o
                cont = cont or c
    return sets, outs, cont


class TestRemoteFailoverBisimulation:
    """Compiled table 2 versus the abstract relation, every (state, input)."""

    def _check_node(self, t, prof, cfg):
        tbl = cfg.pipeline.tables[2]
        names = {v: k for k, v in RF_KINDS.items()}
        for plan in cfg.rf_demands:
            d = plan.demand
            d1, d2, _, _ = prof.for_demand(t, plan)
            prim = t.port_to(cfg.switch, plan.primary[1])
            det = t.port_to(cfg.switch, plan.backup[1])
            for i in plan.failures:
                m = cfg.rf_index[i]
                value = {NORMAL: RF_NORMAL}
                value.update({s: rf_state(names[s], m) for s in (FS, DE, NP, FR)})
                timers = {"d1": d1, "d2": d2, "d5": prof.d5, None: None}
                for (state, inp), (nxt, outs, tm) in RF_RELATION.items():
                    tag = fault(i) if inp == "fault_i" else TAG_DATA
                    in_port = prim if inp == "fault_i" else EDGE_PORT
                    ctx = {"tag": tag, "in_port": in_port, "metadata": prim,
                           "eth_src": d.eth_src, "eth_dst": d.eth_dst, "state": value[state]}
                    e = tbl.match(ctx)
                    sets, emitted, cont = _interpret(e.actions, tag, in_port, 2)
                    got_next = sets[-1].state if sets else value[state]
                    assert got_next == value[nxt], (cfg.switch, d.label(), i, state, inp)
                    want = []
                    for o in outs:
                        if o == ("F", "detour"):
                            want.append((fault(i), det))
                        elif o == ("P", "primary"):
                            want.append((probe(i), prim))
                    assert emitted == want, (cfg.switch, d.label(), i, state, inp)
                    assert cont == (("continue",) in outs)
                    if tm is None:
                        assert not sets
                    else:
                        s = sets[-1]
                        assert (s.idle_timeout, s.hard_timeout) == (timers[tm[0]], timers[tm[1]])
                        rb = [value[x] if x is not None else None for x in tm[2:]]
                        if rb[0] is not None:
                            assert s.idle_rollback == rb[0]
                        assert s.hard_rollback == rb[1]
                # no transitions out of a foreign macro state
                for j, mj in cfg.rf_index.items():
                    if mj == m:
                        continue
                    for kind in (1, 2, 3, 4):
                        ctx = {"tag": fault(i), "in_port": prim, "metadata": prim,
                               "eth_src": d.eth_src, "eth_dst": d.eth_dst,
                               "state": rf_state(kind, mj)}
                        sets, emitted, _ = _interpret(tbl.match(ctx).actions, fault(i), prim, 2)
                        assert not sets and not emitted
                # unknown failure node is dropped
                ctx = {"tag": fault("nowhere"), "in_port": prim, "metadata": prim,
                       "eth_src": d.eth_src, "eth_dst": d.eth_dst, "state": RF_NORMAL}
                assert _interpret(tbl.match(ctx).actions, fault("nowhere"), prim, 2)[:2] == ([], [])

    def test_chain(self, chain):
        cfgs, _ = compile_chain(chain)
        self._check_node(chain, TimeoutProfile(), cfgs["s"])

    def test_grid5_all_reroute_nodes(self, grid5):
        t, _, prof, cfgs = grid5
        for n in t.edge_nodes:
            self._check_node(t, prof, cfgs[n])


class TestLocalFailoverBisimulation:
    """Compiled table 3 (and table 1 side effects) versus the abstract relation."""

    def _check_node(self, t, prof, cfg):
        tbl = cfg.pipeline.tables[3]
        u = cfg.switch
        for p in cfg.lf_ports:
            d6, d7 = prof.for_port(u, p)
            timers = {"d5": prof.d5, "d6": d6, "d7": d7}
            i = t.neighbor(u, p)
            for plan in cfg.local_demands:
                d = plan.demand
                in_port = 7777
                alt = t.port_to(u, plan.backup[1]) if u == d.src else in_port
                for state, (nxt, outs, tm) in LF_RELATION.items():
                    ctx = {"tag": TAG_DATA, "in_port": in_port, "metadata": p,
                           "eth_src": d.eth_src, "eth_dst": d.eth_dst, "state": state}
                    sets, emitted, _ = _interpret(tbl.match(ctx).actions, TAG_DATA, in_port, 3)
                    assert (sets[-1].state if sets else state) == nxt, (u, p, d.label(), state)
                    want = []
                    for tag, where in outs:
                        port = p if where == "port" else alt
                        want.append(({"HB_REQ": TAG_HB_REQ, "DATA0": TAG_DATA}.get(tag)
                                     or (fault(i) if tag == "F" else probe(i)), port))
                    assert emitted == want, (u, p, d.label(), state)
                    if tm is None:
                        assert not sets
                    else:
                        assert (sets[-1].idle_timeout, sets[-1].hard_timeout) == (None, timers[tm[0]])
                        assert sets[-1].hard_rollback == tm[1]

    def test_grid5(self, grid5):
        t, _, prof, cfgs = grid5
        for n in (0, 6, 12, 22):
            self._check_node(t, prof, cfgs[n])

    def test_every_table1_entry_marks_port_up(self, grid5):
        t, _, prof, cfgs = grid5
        state, (tm, rb) = LF_ON_RECEIVE
        for n, cfg in cfgs.items():
            for e in cfg.pipeline.tables[1].entries:
                # host-facing ingress has no neighbour whose liveness matters
                if e.role == "miss" or e.match.get("in_port") == EDGE_PORT:
                    continue
                first = e.actions[0]
                assert isinstance(first, SetState) and first.table_id == 3
                assert first.state == state == LF_UP_WAIT
                assert first.hard_rollback == rb
                port = e.match.get("in_port")
                d6 = prof.for_port(n, port)[0] if port is not None else prof.d6
                assert first.hard_timeout == d6


def _enumerate_contexts(t, cfg, plans):
    nodes = list(t.nodes) + ["ghost"]
    tags = ([TAG_NONE, TAG_DATA, TAG_HB_REQ, TAG_HB_REPLY] + [fault(n) for n in nodes]
            + [probe(n) for n in nodes])
    eths = [(p.demand.eth_src, p.demand.eth_dst) for p in plans] + [(("z", 0), ("y", 0))]
    ports = list(cfg.pipeline.ports)
    return itertools.product(tags, ports, eths)


class TestTotality:
    def test_every_table_matches_every_context(self, chain):
        plans = plan_all(chain, full_mesh_demands(chain))
        cfgs = compile_network(chain, plans)
        for n, cfg in cfgs.items():
            n_states = {2: range(0, 1 + 4 * max(1, len(cfg.rf_index))), 3: range(5)}
            for tag, port, (src, dst) in _enumerate_contexts(chain, cfg, plans):
                for tid, tbl in enumerate(cfg.pipeline.tables):
                    states = n_states.get(tid, [None])
                    for st in states:
                        ctx = {"tag": tag, "in_port": port, "metadata": port,
                               "eth_src": src, "eth_dst": dst}
                        if st is not None:
                            ctx["state"] = st
                        tbl.match(ctx)


class TestBehavior:
    def test_edge_ingress_goes_to_primary(self, chain):
        cfgs, plans = compile_chain(chain)
        d = plans[0].demand
        out = cfgs["s"].pipeline.process(Packet(d.eth_src, d.eth_dst, TAG_NONE), EDGE_PORT, 0)
        # first packet on an idle port becomes a heartbeat request on the primary
        assert [(e.port, e.pkt.tag) for e in out] == [(chain.port_to("s", "m"), TAG_HB_REQ)]
        out = cfgs["s"].pipeline.process(Packet(d.eth_src, d.eth_dst, TAG_NONE), EDGE_PORT, 1)
        assert [(e.port, e.pkt.tag) for e in out] == [(chain.port_to("s", "m"), TAG_DATA)]

    def test_hb_req_is_answered_and_forwarded(self, chain):
        cfgs, plans = compile_chain(chain)
        d = plans[0].demand
        pm = cfgs["m"].pipeline
        # make m's port towards d look alive so the data copy is plain tag 0
        pm.state_tables[3].write((chain.port_to("m", "d"),), LF_UP_WAIT, 0, hard_timeout=10 ** 9)
        in_port = chain.port_to("m", "s")
        out = pm.process(Packet(d.eth_src, d.eth_dst, TAG_HB_REQ), in_port, 0)
        assert [(e.port, e.pkt.tag) for e in out] == [(in_port, TAG_HB_REPLY),
                                                     (chain.port_to("m", "d"), TAG_DATA)]

    def test_hb_reply_dropped_and_marks_port(self, chain):
        cfgs, plans = compile_chain(chain)
        d = plans[0].demand
        ps = cfgs["s"].pipeline
        port = chain.port_to("s", "m")
        assert ps.process(Packet(d.eth_dst, d.eth_src, TAG_HB_REPLY), port, 0) == []
        assert ps.state_tables[3].peek((port,)) == LF_UP_WAIT

    def test_flowlet_hold_keeps_primary(self, chain):
        cfgs, plans = compile_chain(chain)
        d = plans[0].demand
        ps = cfgs["s"].pipeline
        prim = chain.port_to("s", "m")
        ps.state_tables[3].write((prim,), LF_UP_WAIT, 0, hard_timeout=10 ** 9)
        bounced = ps.process(Packet(d.eth_src, d.eth_dst, fault("d")), prim, 0)
        assert [(e.port, e.pkt.tag) for e in bounced] == [(chain.port_to("s", "x"), fault("d"))]
        out = ps.process(Packet(d.eth_src, d.eth_dst, TAG_NONE), EDGE_PORT, 10)
        assert [(e.port, e.pkt.tag) for e in out] == [(prim, TAG_DATA)]

    def test_last_detour_node_resets_tag(self, chain):
        cfgs, plans = compile_chain(chain)
        d = plans[0].demand
        out = cfgs["x"].pipeline.process(Packet(d.eth_src, d.eth_dst, fault("m")),
                                          chain.port_to("x", "s"), 0)
        assert [(e.port, e.pkt.tag) for e in out] == [(chain.port_to("x", "d"), TAG_DATA)]


class TestSizing:
    def test_fresh_config_empty(self, grid5):
        _, _, _, cfgs = grid5
        for cfg in cfgs.values():
            assert len(cfg.pipeline.state_tables[2]) == 0
            assert len(cfg.pipeline.state_tables[3]) == 0
            assert verify_state_sizing(cfg)["ok"]

    def test_state_values_bounded(self, chain):
        cfgs, _ = compile_chain(chain)
        rep = verify_state_sizing(cfgs["s"])
        assert rep["F_n"] == 2 and rep["rf_state_values"] == 9

    def test_violation_reported(self, chain):
        cfgs, _ = compile_chain(chain)
        st2 = cfgs["s"].pipeline.state_tables[2]
        st2.write((("s", 0), ("d", 0)), 9, 0)
        rep = verify_state_sizing(cfgs["s"])
        assert not rep["ok"] and rep["problems"]


class TestDump:
    def test_chain_golden(self, chain):
        cfgs, _ = compile_chain(chain)
        with open(os.path.join(GOLDEN, "chain_dump.txt")) as fh:
            assert dump(cfgs) == fh.read().splitlines()

    def test_one_line_per_entry(self, chain):
        cfgs, _ = compile_chain(chain)
        assert len(dump(cfgs)) == sum(c.total_entries() for c in cfgs.values())
