"""Compile topology + path plans into per-switch SPIDER pipelines.

Table 0 tags edge traffic and records the input port in metadata. Table 1
is stateless per-demand forwarding (ingress, transit, egress, heartbeat,
bounce, probe and detour handling). Table 2 holds the Remote Failover FSM
at each reroute node and table 3 the Local Failover FSM per output port.
"""

from dataclasses import dataclass, field

from . import openstate as os_
from .openstate import (Drop, Duplicate, FlowEntry, GotoTable, Output, OutputInPort,
                        PopTag, PushTag, SetMeta, SetState, SetTag, StateTable,
                        SwitchPipeline, TAG_DATA, TAG_HB_REPLY, TAG_HB_REQ, fault, probe)
from .pathplan import EDGE_PORT

# Remote Failover states, per failure-node index m: base + 4*m
RF_NORMAL = 0
RF_FAULT_SIGNALED = 1
RF_DETOUR_ENABLED = 2
RF_NEED_PROBE = 3
RF_FAULT_RESOLVED = 4
RF_NAMES = {1: "FAULT_SIGNALED", 2: "DETOUR_ENABLED", 3: "NEED_PROBE", 4: "FAULT_RESOLVED"}

# Local Failover states
LF_UP_NEED_HB = 0
LF_UP_HB_REQUESTED = 1
LF_UP_WAIT = 2
LF_DOWN_NEED_PROBE = 3
LF_DOWN_WAIT = 4
LF_NAMES = ["UP_NEED_HB", "UP_HB_REQUESTED", "UP_WAIT", "DOWN_NEED_PROBE", "DOWN_WAIT"]

MS = 1000


def rf_state(kind, m):
    return kind + 4 * m


def rf_decode(value):
    """(kind, failure index) for an RF state value; NORMAL is (0, None)."""
    if value == RF_NORMAL:
        return RF_NORMAL, None
    m, r = divmod(value - 1, 4)
    return r + 1, m


class CompileError(Exception):
    pass


@dataclass
class TimeoutProfile:
    """Timeouts in microseconds. d1/d3 of None are derived per demand."""

    d1: int = None
    d2: int = None
    d3: int = None
    d4: int = None
    d5: int = 20 * MS
    d6: int = 10 * MS
    d7: int = 2 * MS
    per_demand: dict = field(default_factory=dict)  # demand key -> {"d1": .., "d3": ..}
    per_port: dict = field(default_factory=dict)  # (node, port) -> {"d6": .., "d7": ..}

    def validate(self):
        for name in ("d5", "d6", "d7"):
            if getattr(self, name) is None or getattr(self, name) <= 0:
                raise CompileError(f"{name} must be > 0")
        for name in ("d1", "d3"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise CompileError(f"{name} must be >= 0")

    def for_demand(self, t, plan):
        """(d1, d2, d3, d4) for one demand, deriving unset values."""
        over = self.per_demand.get(plan.demand.key, {})
        d1 = over.get("d1", self.d1)
        d3 = over.get("d3", self.d3)
        if d1 is None:
            # worst bounce: detected by the node just before dst
            d1 = max(1, 2 * t.path_delay(plan.primary[:-1]))
        if d3 is None:
            d3 = max(1, t.path_delay(plan.backup) - t.path_delay(plan.primary))
        d2 = over.get("d2", self.d2 if self.d2 is not None else 2 * d1)
        d4 = over.get("d4", self.d4 if self.d4 is not None else 2 * d3)
        if d2 <= d1:
            raise CompileError(f"{plan.demand.label()}: d2 must exceed d1")
        if d4 <= d3:
            raise CompileError(f"{plan.demand.label()}: d4 must exceed d3")
        return d1, d2, d3, d4

    def for_port(self, node, port):
        over = self.per_port.get((node, port), {})
        return over.get("d6", self.d6), over.get("d7", self.d7)


@dataclass
class SwitchConfig:
    switch: object
    pipeline: SwitchPipeline
    rf_index: dict = field(default_factory=dict)  # failure node -> index m
    rf_demands: list = field(default_factory=list)  # plans rerouted here
    lf_ports: list = field(default_factory=list)
    local_demands: list = field(default_factory=list)

    def count_entries(self):
        return count_entries(self)

    def total_entries(self):
        return sum(len(t) for t in self.pipeline.tables)

    @property
    def n_ports(self):
        return len(self.pipeline.ports)


def _lf_up(prof, node=None, port=None):
    """Table-1 side effect: the input port is alive (keyed by metadata)."""
    d6 = prof.d6 if port is None else prof.for_port(node, port)[0]
    return SetState(3, LF_UP_WAIT, hard_timeout=d6, hard_rollback=LF_UP_NEED_HB)


def compile_network(t, plans, prof=None, check=False):
    """Build a SwitchConfig for every node of t."""
    prof = prof or TimeoutProfile()
    prof.validate()
    cfgs = {}
    for n in t.nodes:
        ports = {p: ("EDGE" if nb is None else "TRANSPORT") for p, nb in t.ports[n].items()}
        st2 = StateTable((os_.ETH_SRC, os_.ETH_DST), (os_.ETH_SRC, os_.ETH_DST), RF_NORMAL)
        st3 = StateTable((os_.METADATA,), (os_.METADATA,), LF_UP_NEED_HB)
        pipe = SwitchPipeline(n, ports, {2: st2, 3: st3})
        lf_ports = sorted(p for p, r in ports.items() if r == "TRANSPORT")
        cfgs[n] = SwitchConfig(n, pipe, lf_ports=lf_ports)

    for plan in plans:
        prim = plan.primary
        for u in prim[:-1]:
            cfgs[u].local_demands.append(plan)
        cfgs[plan.demand.src].rf_demands.append(plan)

    for n, cfg in cfgs.items():
        fails = sorted({i for p in cfg.rf_demands for i in p.failures})
        cfg.rf_index = {i: m for m, i in enumerate(fails)}
        _table0(t, cfg)
        _table1_generic(cfg, prof)
        _table2(t, cfg, prof)
        _table3(t, cfg, prof)
    for plan in plans:
        _table1_demand(t, cfgs, plan, prof)

    if check:
        for cfg in cfgs.values():
            for tbl in cfg.pipeline.tables:
                amb = tbl.ambiguities()
                if amb:
                    a, b = amb[0]
                    raise CompileError(f"{cfg.switch} t{tbl.table_id}: ambiguous entries "
                                       f"{a.describe()} / {b.describe()}")
    return cfgs


def _table0(t, cfg):
    pipe = cfg.pipeline
    for p, role in sorted(pipe.ports.items()):
        if role == "EDGE":
            acts = (PushTag(TAG_DATA), SetMeta(p), GotoTable(1))
        else:
            acts = (SetMeta(p), GotoTable(1))
        pipe.add(0, FlowEntry(10, {"in_port": p}, acts, "port"))


def _table1_generic(cfg, prof):
    pipe = cfg.pipeline
    pipe.add(1, FlowEntry(50, {"tag": TAG_HB_REPLY},
                          (_lf_up(prof), Drop()), "hb_reply"))
    pipe.add(1, FlowEntry(0, {}, (Drop(),), "miss"))


def _eth(d):
    return {"eth_src": d.eth_src, "eth_dst": d.eth_dst}


def _table1_demand(t, cfgs, plan, prof):
    d = plan.demand
    prim = plan.primary
    k = len(prim) - 1
    up = _lf_up(prof)
    _, _, d3, d4 = prof.for_demand(t, plan)
    eth = _eth(d)

    # source
    s = prim[0]
    out = t.port_to(s, prim[1])
    ps = cfgs[s].pipeline
    ps.add(1, FlowEntry(20, dict(eth, tag=TAG_DATA, in_port=EDGE_PORT),
                        (SetMeta(out), GotoTable(2)), "ingress"))
    up_s = _lf_up(prof, s, out)
    if k >= 2:
        ps.add(1, FlowEntry(20, dict(eth, tag=fault(), in_port=out),
                            (up_s, SetMeta(out), GotoTable(2)), "bounce_in"))
    idx = cfgs[s].rf_index
    for i in prim[1:]:
        fr = rf_state(RF_FAULT_RESOLVED, idx[i])
        ps.add(1, FlowEntry(30, dict(eth, tag=probe(i), in_port=out),
                            (up_s, SetState(2, fr, d3, d4, RF_NORMAL, RF_NORMAL), Drop()),
                            "probe_in"))

    # transit
    for j in range(1, k):
        u = prim[j]
        pu = cfgs[u].pipeline
        prev = t.port_to(u, prim[j - 1])
        nxt = t.port_to(u, prim[j + 1])
        up, up_n = _lf_up(prof, u, prev), _lf_up(prof, u, nxt)
        pu.add(1, FlowEntry(20, dict(eth, tag=TAG_DATA, in_port=prev),
                            (up, SetMeta(nxt), GotoTable(2)), "transit"))
        pu.add(1, FlowEntry(20, dict(eth, tag=TAG_HB_REQ, in_port=prev),
                            (up, Duplicate((SetTag(TAG_HB_REPLY), OutputInPort()),
                                           (SetTag(TAG_DATA), SetMeta(nxt), GotoTable(2)))),
                            "hb_req"))
        if j <= k - 2:
            pu.add(1, FlowEntry(20, dict(eth, tag=fault(), in_port=nxt),
                                (up_n, Output(prev)), "bounce"))
        pu.add(1, FlowEntry(20, dict(eth, tag=probe(), in_port=prev),
                            (up, Output(nxt)), "probe_fwd"))
        pu.add(1, FlowEntry(30, dict(eth, tag=probe(u), in_port=prev),
                            (up, OutputInPort()), "probe_self"))
        pu.add(1, FlowEntry(20, dict(eth, tag=probe(), in_port=nxt),
                            (up_n, Output(prev)), "probe_back"))

    # destination
    dst = prim[-1]
    pd = cfgs[dst].pipeline
    last_in = t.port_to(dst, prim[-2])
    up = _lf_up(prof)
    pd.add(1, FlowEntry(20, dict(eth, tag=TAG_DATA),
                        (up, PopTag(), Output(EDGE_PORT)), "egress"))
    pd.add(1, FlowEntry(20, dict(eth, tag=TAG_HB_REQ),
                        (up, Duplicate((SetTag(TAG_HB_REPLY), OutputInPort()),
                                       (PopTag(), Output(EDGE_PORT)))), "hb_req"))
    pd.add(1, FlowEntry(30, dict(eth, tag=probe(dst), in_port=last_in),
                        (_lf_up(prof, dst, last_in), OutputInPort()), "probe_self"))

    # detour (shared by every F_i under end-to-end protection)
    b = plan.backup
    for m in range(1, len(b) - 1):
        u = b[m]
        nxt = t.port_to(u, b[m + 1])
        prv = t.port_to(u, b[m - 1])
        up = _lf_up(prof, u, prv)
        acts = (up, Output(nxt)) if m < len(b) - 2 else (up, SetTag(TAG_DATA), Output(nxt))
        cfgs[u].pipeline.add(1, FlowEntry(20, dict(eth, tag=fault(), in_port=prv),
                                          acts, "detour"))


def _table2(t, cfg, prof):
    pipe = cfg.pipeline
    for plan in cfg.rf_demands:
        d1, d2, _, _ = prof.for_demand(t, plan)
        eth = _eth(plan.demand)
        prim_port = t.port_to(cfg.switch, plan.primary[1])
        det_port = t.port_to(cfg.switch, plan.backup[1])
        for i in plan.failures:
            m = cfg.rf_index[i]
            fs = rf_state(RF_FAULT_SIGNALED, m)
            de = rf_state(RF_DETOUR_ENABLED, m)
            np_ = rf_state(RF_NEED_PROBE, m)
            fr = rf_state(RF_FAULT_RESOLVED, m)
            fi = fault(i)
            detour = (SetTag(fi), Output(det_port))
            rows = [
                (RF_NORMAL, fi, (SetState(2, fs, d1, d2, np_, np_),) + detour),
                (fs, TAG_DATA, (GotoTable(3),)),
                (de, TAG_DATA, detour),
                (np_, TAG_DATA, (SetState(2, de, hard_timeout=prof.d5, hard_rollback=np_),
                                 Duplicate(detour, (SetTag(probe(i)), Output(prim_port))))),
                (fr, TAG_DATA, detour),
                (fs, fi, detour),
                (de, fi, detour),
            ]
            for state, tag, acts in rows:
                pipe.add(2, FlowEntry(20, dict(eth, state=state, tag=tag), acts, "rf"))
    pipe.add(2, FlowEntry(1, {"tag": fault()}, (Drop(),), "catchall"))
    pipe.add(2, FlowEntry(0, {}, (GotoTable(3),), "catchall"))


def _table3(t, cfg, prof):
    pipe = cfg.pipeline
    u = cfg.switch
    in_port_out = OutputInPort()
    for p in sorted(pipe.ports):
        d6, d7 = prof.for_port(u, p)
        pipe.add(3, FlowEntry(10, {"state": LF_UP_NEED_HB, "metadata": p},
                              (SetState(3, LF_UP_HB_REQUESTED, hard_timeout=d7,
                                        hard_rollback=LF_DOWN_NEED_PROBE),
                               SetTag(TAG_HB_REQ), Output(p)), "lf_up"))
        pipe.add(3, FlowEntry(10, {"state": LF_UP_HB_REQUESTED, "metadata": p},
                              (Output(p),), "lf_up"))
        pipe.add(3, FlowEntry(10, {"state": LF_UP_WAIT, "metadata": p},
                              (Output(p),), "lf_up"))
        i = t.neighbor(u, p)
        if i is None:
            i = u  # edge port: no neighbour, entries are never reached
        set_fi, set_pi = SetTag(fault(i)), SetTag(probe(i))
        to_wait = SetState(3, LF_DOWN_WAIT, hard_timeout=prof.d5, hard_rollback=LF_DOWN_NEED_PROBE)
        probe_branch = (set_pi, Output(p))
        for plan in cfg.local_demands:
            d = plan.demand
            alt = Output(t.port_to(u, plan.backup[1])) if u == d.src else in_port_out
            pipe.add(3, FlowEntry(20, {"eth_src": d.eth_src, "eth_dst": d.eth_dst,
                                       "state": LF_DOWN_NEED_PROBE, "metadata": p},
                                  (to_wait, Duplicate((set_fi, alt), probe_branch)), "lf_down"))
            pipe.add(3, FlowEntry(20, {"eth_src": d.eth_src, "eth_dst": d.eth_dst,
                                       "state": LF_DOWN_WAIT, "metadata": p},
                                  (set_fi, alt), "lf_down"))
    pipe.add(3, FlowEntry(0, {}, (Drop(),), "miss"))


def count_entries(cfg):
    tables = cfg.pipeline.tables
    counts = {f"t{tb.table_id}": len(tb) for tb in tables}
    counts["t2_fsm"] = sum(1 for e in tables[2].entries if e.role == "rf")
    counts["t3_fsm"] = sum(1 for e in tables[3].entries if e.role in ("lf_up", "lf_down"))
    counts["total"] = sum(len(tb) for tb in tables)
    return counts


def formula_counts(cfg):
    """Entry counts predicted by the closed forms for this switch."""
    p = cfg.n_ports
    return {"t0": p,
            "t2_fsm": 7 * sum(len(pl.failures) for pl in cfg.rf_demands),
            "t3_fsm": p * (3 + 2 * len(cfg.local_demands))}


def check_formulas(cfg):
    got = count_entries(cfg)
    want = formula_counts(cfg)
    return {k: (got[k], v) for k, v in want.items() if got[k] != v}


def table1_bound(cfg):
    """Upper bound for table 1: O(D x F) plus a per-switch constant.

    D counts demands with any table-1 entry here; each needs at most six
    fixed entries plus one probe-return entry per failure state.
    """
    tb = cfg.pipeline.tables[1]
    touched = len({(e.match["eth_src"], e.match["eth_dst"])
                   for e in tb.entries if "eth_src" in e.match})
    f_max = max((len(p.failures) for p in cfg.rf_demands), default=0)
    return touched * (f_max + 6) + 2


def verify_state_sizing(cfg):
    """Check state-table populations against the sizing limits."""
    st2 = cfg.pipeline.state_tables[2]
    st3 = cfg.pipeline.state_tables[3]
    f_n = len(cfg.rf_index)
    d_n = len(cfg.rf_demands)
    problems = []
    if len(st2) > d_n:
        problems.append(f"table2 keys {len(st2)} > D_n {d_n}")
    bad2 = [e.state for e in st2.entries.values() if not 0 <= e.state <= 4 * f_n]
    if bad2:
        problems.append(f"table2 states outside 0..{4 * f_n}: {bad2}")
    if len(st3) > cfg.n_ports:
        problems.append(f"table3 keys {len(st3)} > P {cfg.n_ports}")
    bad3 = [e.state for e in st3.entries.values() if not 0 <= e.state <= 4]
    if bad3:
        problems.append(f"table3 states outside 0..4: {bad3}")
    return {"switch": cfg.switch, "D_n": d_n, "F_n": f_n, "rf_state_values": 1 + 4 * f_n,
            "t2_keys": len(st2), "t3_keys": len(st3), "ok": not problems,
            "problems": problems}


def dump(cfgs):
    lines = []
    for n in sorted(cfgs):
        lines.extend(cfgs[n].pipeline.dump())
    return lines
