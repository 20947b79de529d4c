"""Topology, demands and path planning.

Primary paths are hop-count shortest paths; among equal-length candidates
the lexicographically smallest node sequence wins. Backups are end-to-end:
one path from the source that avoids every primary intermediate node and
every primary link, reused for each failure state F_i on the primary.
"""

from collections import deque
from dataclasses import dataclass, field

EDGE = "EDGE"
CORE = "CORE"
EDGE_PORT = 0
DEFAULT_DELAY_US = 250


class UnprotectableDemand(Exception):
    def __init__(self, demand, failures):
        self.demand = demand
        self.failures = list(failures)
        super().__init__(f"no backup for {demand.src}->{demand.dst}, F={self.failures}")


class TopologyError(ValueError):
    pass


class Topology:
    """Undirected graph with per-link delay (microseconds) and node roles."""

    def __init__(self, roles, links):
        self.roles = dict(roles)
        self.adj = {n: {} for n in self.roles}
        for a, b, delay in links:
            if a == b:
                raise TopologyError(f"self-loop at {a}")
            if a not in self.roles or b not in self.roles:
                raise TopologyError(f"link {a}-{b} references unknown node")
            if delay <= 0:
                raise TopologyError(f"link {a}-{b} needs a positive delay")
            self.adj[a][b] = delay
            self.adj[b][a] = delay
        if not self._connected():
            raise TopologyError("topology is not connected")
        self.ports = {}
        self.peer = {}
        for n in self.roles:
            ports = {}
            if self.roles[n] == EDGE:
                ports[EDGE_PORT] = None
            for k, nb in enumerate(sorted(self.adj[n]), start=1):
                ports[k] = nb
            self.ports[n] = ports
            self.peer[n] = {nb: p for p, nb in ports.items() if nb is not None}

    def _connected(self):
        if not self.roles:
            return True
        start = next(iter(self.roles))
        seen = {start}
        todo = [start]
        while todo:
            u = todo.pop()
            for v in self.adj[u]:
                if v not in seen:
                    seen.add(v)
                    todo.append(v)
        return len(seen) == len(self.roles)

    @property
    def nodes(self):
        return sorted(self.roles)

    @property
    def edge_nodes(self):
        return sorted(n for n, r in self.roles.items() if r == EDGE)

    @property
    def core_nodes(self):
        return sorted(n for n, r in self.roles.items() if r == CORE)

    def links(self):
        return sorted((a, b) for a in self.adj for b in self.adj[a] if a < b)

    def delay(self, a, b):
        return self.adj[a][b]

    def port_to(self, node, neighbor):
        return self.peer[node][neighbor]

    def neighbor(self, node, port):
        return self.ports[node][port]

    def path_delay(self, path):
        return sum(self.adj[a][b] for a, b in zip(path, path[1:]))


def grid_topology(n, delay_us=DEFAULT_DELAY_US):
    """n x n lattice; outer ring nodes are EDGE. Node id = row*n + col."""
    if n < 3:
        raise ValueError("grid needs n >= 3")
    roles = {}
    links = []
    for r in range(n):
        for c in range(n):
            u = r * n + c
            outer = r in (0, n - 1) or c in (0, n - 1)
            roles[u] = EDGE if outer else CORE
            if c + 1 < n:
                links.append((u, u + 1, delay_us))
            if r + 1 < n:
                links.append((u, u + n, delay_us))
    return Topology(roles, links)


@dataclass(frozen=True)
class Demand:
    src: object
    dst: object
    rate: float = 0.0
    host: int = 0

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError("demand endpoints must differ")

    @property
    def eth_src(self):
        return (self.src, self.host)

    @property
    def eth_dst(self):
        return (self.dst, self.host)

    @property
    def key(self):
        return (self.eth_src, self.eth_dst)

    def label(self):
        h = f"#{self.host}" if self.host else ""
        return f"{self.src}->{self.dst}{h}"


def full_mesh_demands(t, rate=0.0):
    edges = t.edge_nodes
    if len(edges) < 2:
        raise ValueError("need at least two edge nodes")
    return [Demand(s, d, rate) for s in edges for d in edges if s != d]


@dataclass
class PathPlan:
    demand: Demand
    primary: list
    backups: dict = field(default_factory=dict)
    reroute_node: dict = field(default_factory=dict)

    @property
    def failures(self):
        return list(self.primary[1:])

    @property
    def backup(self):
        """The shared end-to-end backup (all F_i use the same path)."""
        return self.backups[self.primary[-1]]


def bfs_dist(t, target, banned=frozenset(), banned_links=frozenset()):
    dist = {target: 0}
    q = deque([target])
    while q:
        u = q.popleft()
        for v in t.adj[u]:
            if v in dist or v in banned or _lk(u, v) in banned_links:
                continue
            dist[v] = dist[u] + 1
            q.append(v)
    return dist


def _lk(a, b):
    return (a, b) if a < b else (b, a)


def shortest_path(t, src, dst, banned=frozenset(), banned_links=frozenset(), dist=None):
    """Lexicographically smallest among hop-count shortest paths, or None."""
    if dist is None:
        dist = bfs_dist(t, dst, banned, banned_links)
    if src not in dist:
        return None
    path = [src]
    u = src
    while u != dst:
        u = min(v for v in t.adj[u]
                if dist.get(v) == dist[u] - 1 and _lk(u, v) not in banned_links)
        path.append(u)
    return path


def plan_paths(t, d, scheme="END_TO_END", _dist_cache=None):
    if scheme != "END_TO_END":
        raise ValueError(f"unsupported protection scheme {scheme}")
    dist = None
    if _dist_cache is not None:
        if d.dst not in _dist_cache:
            _dist_cache[d.dst] = bfs_dist(t, d.dst)
        dist = _dist_cache[d.dst]
    primary = shortest_path(t, d.src, d.dst, dist=dist)
    if primary is None:
        raise UnprotectableDemand(d, [])
    banned = frozenset(primary[1:-1])
    banned_links = frozenset(_lk(a, b) for a, b in zip(primary, primary[1:]))
    backup = shortest_path(t, d.src, d.dst, banned, banned_links)
    if backup is None:
        raise UnprotectableDemand(d, primary[1:])
    plan = PathPlan(d, primary)
    for i in primary[1:]:
        plan.backups[i] = backup
        plan.reroute_node[i] = d.src
    return plan


def plan_all(t, demands, scheme="END_TO_END"):
    cache = {}
    return [plan_paths(t, d, scheme, cache) for d in demands]


def check_plan(t, plan):
    """Raise AssertionError if the plan breaks a path invariant."""
    d = plan.demand
    paths = [plan.primary] + list(plan.backups.values())
    for p in paths:
        assert p[0] == d.src and p[-1] == d.dst
        assert len(set(p)) == len(p), "path not simple"
        for a, b in zip(p, p[1:]):
            assert b in t.adj[a], f"{a}-{b} is not a link"
    for i, b in plan.backups.items():
        assert plan.reroute_node[i] in plan.primary
        inner = set(b[1:-1])
        if i != d.dst:
            assert i not in b, f"backup for F_{i} touches {i}"
        else:
            # the destination itself cannot be avoided; its primary link is
            assert _lk(plan.primary[-2], i) not in {_lk(x, y) for x, y in zip(b, b[1:])}
        assert not inner & set(plan.primary[1:-1])


def grid_closed_forms(n):
    e = 4 * (n - 1)
    c = (n - 2) ** 2
    return {"D": e * (e - 1), "E": e, "C": c, "E2N": e * e * n * n}


def table2_grid_stats(n, prof=None):
    """Entry-count table row for an n x n grid: closed forms plus per-node entry counts."""
    from .compiler import compile_network, TimeoutProfile

    t = grid_topology(n)
    plans = plan_all(t, full_mesh_demands(t))
    cfgs = compile_network(t, plans, prof or TimeoutProfile())
    totals = [cfg.total_entries() for cfg in cfgs.values()]
    row = grid_closed_forms(n)
    row.update({"n": n, "min": min(totals), "avg": round(sum(totals) / len(totals)),
                "max": max(totals)})
    return row
