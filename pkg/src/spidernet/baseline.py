"""Reactive controller baseline.

Switches forward on plain per-demand rules. A port going down is seen
instantly by the adjacent switches (fast-failover liveness) but there is no
local backup, so packets are dropped until the controller, reached after
rtt/2, has recomputed and installed a new path for every affected demand.
Each flow costs ``per_flow_cost`` of controller time; a flow's new path
becomes active, ingress last, rtt/2 after its computation finishes.
"""

from .pathplan import EDGE_PORT, shortest_path
from .openstate import Emission
from .simnet import CTRL_MSG


class BaselineSwitch:
    def __init__(self, name, topology):
        self.name = name
        self.t = topology
        self.fwd = {}  # demand key -> out port

    def process(self, pkt, in_port, now):
        d_key = pkt.demand
        port = self.fwd.get(d_key)
        if port is None:
            return []
        return [Emission(port, pkt.copy())]

    def next_deadline(self):
        return None

    def expire(self, now):
        return []

    def install(self, key, path):
        """Point this switch along ``path`` for demand ``key``."""
        i = path.index(self.name)
        if i == len(path) - 1:
            self.fwd[key] = EDGE_PORT
        else:
            self.fwd[key] = self.t.port_to(self.name, path[i + 1])


class BaselineController:
    def __init__(self, topology, switches, plans, rtt=0, per_flow_cost=0):
        if rtt < 0 or per_flow_cost < 0:
            raise ValueError("rtt and per_flow_cost must be >= 0")
        self.t = topology
        self.sw = switches
        self.rtt = rtt
        self.per_flow_cost = per_flow_cost
        self.paths = {p.demand.key: list(p.primary) for p in plans}
        self.demands = {p.demand.key: p.demand for p in plans}
        self.failed = set()
        self.reported = set()
        self.busy_until = 0
        for key, path in self.paths.items():
            self.apply(key, path)

    def apply(self, key, path):
        # ingress last
        for n in reversed(path):
            self.sw[n].install(key, path)

    def on_link_event(self, sim, link, up):
        lk = tuple(sorted(link))
        if up:
            self.failed.discard(lk)
            self.reported.discard(lk)
            return
        self.failed.add(lk)
        if lk not in self.reported:
            self.reported.add(lk)
            sim.push(sim.now + self.rtt // 2, CTRL_MSG, "CTRL", ("PORT_DOWN", lk))

    def on_ctrl_msg(self, sim, payload):
        if payload[0] == "PORT_DOWN":
            lk = payload[1]
            affected = [k for k, p in self.paths.items()
                        if any(tuple(sorted(e)) == lk for e in zip(p, p[1:]))]
            start = max(sim.now, self.busy_until)
            for j, key in enumerate(affected, start=1):
                d = self.demands[key]
                path = shortest_path(self.t, d.src, d.dst, banned_links=frozenset(self.failed))
                if path is None:
                    continue
                done = start + j * self.per_flow_cost
                sim.push(done + self.rtt - self.rtt // 2, CTRL_MSG, "CTRL", ("INSTALL", key, tuple(path)))
                self.paths[key] = path
            self.busy_until = start + len(affected) * self.per_flow_cost
        elif payload[0] == "INSTALL":
            _, key, path = payload
            self.apply(key, list(path))


def build_baseline(topology, plans, rtt=0, per_flow_cost=0):
    switches = {n: BaselineSwitch(n, topology) for n in topology.nodes}
    ctrl = BaselineController(topology, switches, plans, rtt, per_flow_cost)
    return switches, ctrl
