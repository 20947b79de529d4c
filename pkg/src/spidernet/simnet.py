"""Deterministic discrete-event network simulator.

Events are ordered by (time, class, insertion sequence). At one instant,
state timers fire first, then packet arrivals, then link/node changes,
then controller messages, then traffic generation. A packet offered to a
link after it went down is dropped; packets already on the wire arrive.
"""

from dataclasses import dataclass, field
import heapq
import random

from .openstate import (FAULT, HB_REPLY, HB_REQ, PROBE, Packet, TAG_NONE,
                        PipelineFault)
from .pathplan import EDGE_PORT, plan_all
from .compiler import TimeoutProfile, compile_network

TIMER, PKT_ARRIVAL, LINK, CTRL_MSG, GEN_TICK = range(5)
MAX_HOPS = 64
US = 1_000_000


class ScenarioError(ValueError):
    pass


# traffic profiles

@dataclass
class CBR:
    rate: float
    start: int = 0
    stop: int = None
    phase: int = 0

    def times(self, stop):
        stop = stop if self.stop is None else min(stop, self.stop)
        if self.rate <= 0:
            return
        k = 0
        while True:
            t = self.start + self.phase + round(k * US / self.rate)
            if t >= stop:
                return
            yield t
            k += 1


@dataclass
class Ramp:
    start_rate: float
    end_rate: float
    duration: int
    start: int = 0
    phase: int = 0

    def rate_at(self, t):
        x = min(max((t - self.start) / self.duration, 0.0), 1.0)
        return self.start_rate + (self.end_rate - self.start_rate) * x

    def times(self, stop):
        end = min(stop, self.start + self.duration)
        t = self.start + self.phase
        while t < end:
            r = self.rate_at(t)
            if r <= 0:
                return
            yield t
            t += max(1, round(US / r))


@dataclass
class Bursts:
    """Back-to-back bursts separated by idle gaps (flowlets)."""

    rate: float
    burst: tuple = (5, 15)
    gap: tuple = (5000, 20000)
    start: int = 0
    seed: int = 0

    def times(self, stop):
        rng = random.Random(self.seed)
        t = self.start
        step = round(US / self.rate)
        while t < stop:
            for _ in range(rng.randint(*self.burst)):
                if t >= stop:
                    return
                yield t
                t += step
            t += rng.randint(*self.gap)


# metrics

DATA_KINDS = ("data", "hb_req", "hb_reply", "probe")


def tag_class(tag):
    if tag.kind == HB_REPLY:
        return "hb_reply"
    if tag.kind == HB_REQ:
        return "hb_req"
    if tag.kind == PROBE:
        return "probe"
    return "data"


def carries_data(tag):
    return tag.kind not in (HB_REPLY, PROBE)


@dataclass
class DemandStats:
    label: str
    sent: int = 0
    delivered: int = 0
    duplicates: int = 0
    out_of_order: int = 0
    in_flight: int = 0
    max_seq: int = -1
    detoured: int = 0
    seen: set = field(default_factory=set, repr=False)
    first_after_fault: int = None

    @property
    def lost(self):
        return self.sent - self.delivered - self.in_flight


@dataclass
class Metrics:
    demands: dict = field(default_factory=dict)
    links: dict = field(default_factory=dict)  # (u, v) -> kind -> {bin: count}
    bin_us: int = US
    fault_time: int = None
    ctrl_msgs: int = 0
    misdelivered: int = 0
    ttl_drops: int = 0
    events: int = 0

    def totals(self):
        ds = self.demands.values()
        return {"sent": sum(d.sent for d in ds), "delivered": sum(d.delivered for d in ds),
                "lost": sum(d.lost for d in ds), "in_flight": sum(d.in_flight for d in ds),
                "out_of_order": sum(d.out_of_order for d in ds),
                "recovery_time_us": self.recovery_time()}

    def recovery_time(self):
        """Worst first-delivery-after-failure delay over demands that lost packets."""
        if self.fault_time is None:
            return None
        vals = [d.first_after_fault - self.fault_time for d in self.demands.values()
                if d.lost > 0 and d.first_after_fault is not None]
        return max(vals) if vals else None

    def series(self, u, v, kind):
        return dict(self.links.get((u, v), {}).get(kind, {}))

    def rate_table(self, u, v, n_bins):
        """Per-bin counts for one directed link: list of dicts, one per bin."""
        per = self.links.get((u, v), {})
        rows = []
        for b in range(n_bins):
            row = {k: per.get(k, {}).get(b, 0) for k in DATA_KINDS}
            row["total"] = sum(row.values())
            row["t"] = b
            rows.append(row)
        return rows


class Simulator:
    """Drives switches (SPIDER pipelines or baseline switches) over a topology."""

    def __init__(self, topology, switches, seed=0, log=True, controller=None, bin_us=US):
        self.t = topology
        self.sw = switches
        self.rng = random.Random(seed)
        self.queue = []
        self._seq = 0
        self.now = 0
        self.log = [] if log else None
        self.controller = controller
        self.link_up = {lk: True for lk in topology.links()}
        self.node_up = {n: True for n in topology.nodes}
        self.timer_at = {}
        self.metrics = Metrics(bin_us=bin_us)
        self.by_eth = {}
        self.gens = {}

    # plumbing

    def push(self, time, cls, kind, payload):
        heapq.heappush(self.queue, (time, cls, self._seq, kind, payload))
        self._seq += 1

    def emit_log(self, node, event, details=""):
        if self.log is not None:
            self.log.append(f"{self.now} {node} {event} {details}".rstrip())

    def _lk(self, a, b):
        return (a, b) if a < b else (b, a)

    # setup

    def add_demand(self, demand, profile, stop):
        key = demand.key
        self.metrics.demands[key] = DemandStats(demand.label())
        self.by_eth[key] = demand
        it = iter(profile.times(stop))
        self.gens[key] = [it, 0]
        first = next(it, None)
        if first is not None:
            self.push(first, GEN_TICK, "GEN", key)

    def add_fault(self, time, kind, target):
        if kind not in ("LINK_DOWN", "LINK_UP", "NODE_DOWN", "NODE_UP"):
            raise ScenarioError(f"unknown fault kind {kind}")
        if kind.startswith("LINK"):
            a, b = target
            if self._lk(a, b) not in self.link_up:
                raise ScenarioError(f"no link {a}-{b}")
        elif target not in self.node_up:
            raise ScenarioError(f"no node {target}")
        self.push(time, LINK, kind, target)

    # main loop

    def run(self, until):
        while self.queue and self.queue[0][0] <= until:
            time, cls, _, kind, payload = heapq.heappop(self.queue)
            self.now = time
            self.metrics.events += 1
            if cls == TIMER:
                self._on_timer(payload)
            elif cls == PKT_ARRIVAL:
                node, port, pkt = payload
                self._arrive(node, port, pkt)
            elif cls == LINK:
                self._on_fault(kind, payload)
            elif cls == CTRL_MSG:
                self.metrics.ctrl_msgs += 1
                self.emit_log("ctrl", "CTRL_MSG", str(payload[0]))
                self.controller.on_ctrl_msg(self, payload)
            elif cls == GEN_TICK:
                self._generate(payload)
        self.now = until
        self._finish()
        return self.metrics

    def _finish(self):
        pending = set()
        for time, cls, _, kind, payload in self.queue:
            if cls == PKT_ARRIVAL:
                pkt = payload[2]
                if carries_data(pkt.tag):
                    pending.add((pkt.demand, pkt.seq))
        for key, seq in pending:
            st = self.metrics.demands.get(key)
            if st is not None and seq not in st.seen:
                st.in_flight += 1

    def _generate(self, key):
        gen = self.gens[key]
        seq = gen[1]
        gen[1] += 1
        d = self.by_eth[key]
        st = self.metrics.demands[key]
        st.sent += 1
        pkt = Packet(d.eth_src, d.eth_dst, TAG_NONE, seq, None, self.now)
        self.emit_log(d.src, "GEN", f"{d.label()} seq={seq}")
        self._arrive(d.src, EDGE_PORT, pkt)
        nxt = next(gen[0], None)
        if nxt is not None:
            self.push(nxt, GEN_TICK, "GEN", key)

    def _arrive(self, node, port, pkt):
        if not self.node_up[node]:
            self.emit_log(node, "DROP", f"node_down {pkt.tag} seq={pkt.seq}")
            return
        if self.log is not None and port != EDGE_PORT:
            self.emit_log(node, "RX", f"port={port} {pkt.tag} seq={pkt.seq}")
        try:
            emissions = self.sw[node].process(pkt, port, self.now)
        except PipelineFault as exc:
            raise PipelineFault(f"t={self.now} node={node}: {exc}") from None
        for em in emissions:
            self._transmit(node, em.port, em.pkt)
        self._arm_timer(node)

    def _transmit(self, node, port, pkt):
        if port == EDGE_PORT:
            self._deliver(node, pkt)
            return
        nb = self.t.neighbor(node, port)
        if not self.link_up[self._lk(node, nb)] or not self.node_up[node]:
            self.emit_log(node, "DROP", f"link_down port={port} {pkt.tag} seq={pkt.seq}")
            return
        if pkt.hops >= MAX_HOPS:
            self.metrics.ttl_drops += 1
            self.emit_log(node, "DROP", f"ttl {pkt.tag} seq={pkt.seq}")
            return
        pkt.metadata = None
        pkt.hops += 1
        if pkt.tag.kind == FAULT:
            pkt.detoured = True
        self._count(node, nb, pkt.tag)
        self.push(self.now + self.t.delay(node, nb), PKT_ARRIVAL, "PKT",
                  (nb, self.t.port_to(nb, node), pkt))

    def _count(self, u, v, tag):
        per = self.metrics.links.setdefault((u, v), {})
        b = self.now // self.metrics.bin_us
        bins = per.setdefault(tag_class(tag), {})
        bins[b] = bins.get(b, 0) + 1

    def _deliver(self, node, pkt):
        st = self.metrics.demands.get(pkt.demand)
        d = self.by_eth.get(pkt.demand)
        if st is None or d is None or d.dst != node or not carries_data(pkt.tag):
            self.metrics.misdelivered += 1
            self.emit_log(node, "MISDELIVER", f"{pkt.tag} seq={pkt.seq}")
            return
        self.emit_log(node, "DELIVER", f"{d.label()} seq={pkt.seq}")
        if pkt.seq in st.seen:
            st.duplicates += 1
            return
        st.seen.add(pkt.seq)
        st.delivered += 1
        if pkt.detoured:
            st.detoured += 1
        if pkt.seq < st.max_seq:
            st.out_of_order += 1
        else:
            st.max_seq = pkt.seq
        ft = self.metrics.fault_time
        if ft is not None and st.first_after_fault is None and pkt.created_at >= ft:
            st.first_after_fault = self.now
        if self.on_delivery is not None:
            self.on_delivery(self.now, d, pkt)

    on_delivery = None

    # timers

    def _arm_timer(self, node):
        sw = self.sw[node]
        nd = sw.next_deadline()
        if nd is None:
            return
        cur = self.timer_at.get(node)
        nd = max(nd, self.now)
        if cur is None or nd < cur or cur < self.now:
            self.timer_at[node] = nd
            self.push(nd, TIMER, "TIMER", node)

    def _on_timer(self, node):
        if self.timer_at.get(node) != self.now:
            return
        del self.timer_at[node]
        for tid, key, old, new, cause, deadline in self.sw[node].expire(self.now):
            self.emit_log(node, "STATE", f"t{tid} key={_fmt_key(key)} {old}->{new} {cause}")
        self._arm_timer(node)

    # faults

    def _on_fault(self, kind, target):
        if self.metrics.fault_time is None and kind.endswith("DOWN"):
            self.metrics.fault_time = self.now
        if kind in ("LINK_DOWN", "LINK_UP"):
            a, b = target
            up = kind == "LINK_UP"
            self.link_up[self._lk(a, b)] = up
            self.emit_log(f"{a}-{b}", kind)
            if self.controller is not None:
                self.controller.on_link_event(self, (a, b), up)
        else:
            up = kind == "NODE_UP"
            self.node_up[target] = up
            self.emit_log(target, kind)
            for nb in sorted(self.t.adj[target]):
                self.link_up[self._lk(target, nb)] = up
                if self.controller is not None:
                    self.controller.on_link_event(self, (target, nb), up)


def _fmt_key(key):
    return ",".join(":".join(map(str, k)) if isinstance(k, tuple) else str(k) for k in key)


# scenarios

@dataclass
class Scenario:
    topology: object
    demands: list  # list of (Demand, profile)
    prof: TimeoutProfile = field(default_factory=TimeoutProfile)
    faults: list = field(default_factory=list)  # (time_us, kind, target)
    seed: int = 0
    duration: int = US
    traffic_stop: int = None
    mode: str = "SPIDER"
    rtt: int = 0
    per_flow_cost: int = 0
    log: bool = True
    bin_us: int = US

    def validate(self):
        if self.duration <= 0:
            raise ScenarioError("duration must be > 0")
        if self.mode not in ("SPIDER", "BASELINE"):
            raise ScenarioError(f"unknown mode {self.mode}")
        nodes = set(self.topology.nodes)
        for d, _ in self.demands:
            if d.src not in nodes or d.dst not in nodes:
                raise ScenarioError(f"demand {d.label()} references unknown node")
            if self.topology.roles[d.src] != "EDGE" or self.topology.roles[d.dst] != "EDGE":
                raise ScenarioError(f"demand {d.label()} must connect edge nodes")
        for time, kind, target in self.faults:
            if time < 0:
                raise ScenarioError("fault time must be >= 0")


def build(sc):
    """Compile the scenario into a ready-to-run Simulator."""
    sc.validate()
    plans = plan_all(sc.topology, [d for d, _ in sc.demands])
    controller = None
    if sc.mode == "SPIDER":
        cfgs = compile_network(sc.topology, plans, sc.prof)
        switches = {n: c.pipeline for n, c in cfgs.items()}
    else:
        from .baseline import build_baseline
        switches, controller = build_baseline(sc.topology, plans, sc.rtt, sc.per_flow_cost)
    sim = Simulator(sc.topology, switches, sc.seed, sc.log, controller, sc.bin_us)
    stop = sc.traffic_stop if sc.traffic_stop is not None else sc.duration
    for d, profile in sc.demands:
        sim.add_demand(d, profile, stop)
    for time, kind, target in sc.faults:
        sim.add_fault(time, kind, target)
    sim.plans = plans
    return sim


def run(sc):
    """Run a scenario; returns (Metrics, event log lines or None)."""
    sim = build(sc)
    metrics = sim.run(sc.duration)
    return metrics, sim.log
