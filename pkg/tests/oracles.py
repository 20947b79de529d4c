"""Independent oracles. Nothing here imports the compiler or the simulator;
graph facts come from networkx and FSM behavior from hand-written relations.
"""

import math

import networkx as nx

# Remote failover macro state F_i, states per the abstract relation.
NORMAL, FS, DE, NP, FR = "NORMAL", "FAULT_SIGNALED", "DETOUR_ENABLED", "NEED_PROBE", "FAULT_RESOLVED"
RF_KINDS = {1: FS, 2: DE, 3: NP, 4: FR}

# Abstract RF relation for one (demand, F_i): (state, input) -> (next, outputs, timers)
# input: "data" (tag 0 from the source) or "fault_i" (bounced F_i).
# outputs: tuple of ("F", "detour") / ("P", "primary") / ("continue",)
# timers: None or (idle, hard, idle_rollback, hard_rollback) as symbolic names.
# FAULT_SIGNALED rolls to NEED_PROBE so a probe is issued as soon as the
# flowlet hold ends; the hard delta5 timer is armed once on entry to
# DETOUR_ENABLED and not re-armed per packet.
RF_RELATION = {
    (NORMAL, "fault_i"): (FS, (("F", "detour"),), ("d1", "d2", NP, NP)),
    (NORMAL, "data"): (NORMAL, (("continue",),), None),
    (FS, "data"): (FS, (("continue",),), None),
    (FS, "fault_i"): (FS, (("F", "detour"),), None),
    (DE, "data"): (DE, (("F", "detour"),), None),
    (DE, "fault_i"): (DE, (("F", "detour"),), None),
    (NP, "data"): (DE, (("F", "detour"), ("P", "primary")), (None, "d5", None, NP)),
    (FR, "data"): (FR, (("F", "detour"),), None),
    (NP, "fault_i"): (NP, (), None),
    (FR, "fault_i"): (FR, (), None),
}

# Local failover relation per (output port, demand): state -> (next, outputs, timers)
UP_NEED_HB, UP_HB_REQUESTED, UP_WAIT, DOWN_NEED_PROBE, DOWN_WAIT = range(5)
LF_RELATION = {
    UP_NEED_HB: (UP_HB_REQUESTED, (("HB_REQ", "port"),), ("d7", DOWN_NEED_PROBE)),
    UP_HB_REQUESTED: (UP_HB_REQUESTED, (("DATA0", "port"),), None),
    UP_WAIT: (UP_WAIT, (("DATA0", "port"),), None),
    DOWN_NEED_PROBE: (DOWN_WAIT, (("F", "alt"), ("P", "port")), ("d5", DOWN_NEED_PROBE)),
    DOWN_WAIT: (DOWN_WAIT, (("F", "alt"),), None),
}
# any packet received on a port: -> UP_WAIT with hard d6, rollback UP_NEED_HB
LF_ON_RECEIVE = (UP_WAIT, ("d6", UP_NEED_HB))


def grid_graph(n):
    g = nx.grid_2d_graph(n, n)
    return nx.relabel_nodes(g, {(r, c): r * n + c for r, c in g.nodes})


def grid_edge_nodes(n):
    return [r * n + c for r in range(n) for c in range(n) if r in (0, n - 1) or c in (0, n - 1)]


def closed_forms(n):
    e = 4 * (n - 1)
    c = (n - 2) ** 2
    return {"D": e * (e - 1), "E": e, "C": c, "E2N": e * e * n * n}


def hop_distance(edges, a, b):
    g = nx.Graph()
    g.add_edges_from(edges)
    return nx.shortest_path_length(g, a, b)


def loss_bounds(d6_us, d7_us, rate):
    return math.floor(d7_us * rate / 1e6), math.ceil((d6_us + d7_us) * rate / 1e6) + 1


# Values produced by the oracles above and frozen here.
FROZEN = {
    "grid3": {"D": 56, "E": 8, "C": 1, "E2N": 576},
    "grid5": {"D": 240, "E": 16, "C": 9, "E2N": 6400},
    "grid9": {"D": 992, "E": 32, "C": 49, "E2N": 82944},
    "grid15": {"D": 3080, "E": 56, "C": 169, "E2N": 705600},
    "grid5_corner_hops": 8,
    "chain_table2_fsm": 14,  # 7 entries x 1 demand x {F_m, F_d}
    "pair_point_bounds": (10, 12),  # d6 = 1 ms, d7 = 10 ms, 1000 pkt/s
}

# Published per-grid entry counts for n = 5..15 (D, E, C, min, avg, max, E2N).
PUBLISHED_ENTRY_COUNTS = {
    5: (240, 16, 9, 402, 727, 934, 6400),
    6: (380, 20, 16, 497, 1046, 1490, 14400),
    7: (552, 24, 25, 720, 1578, 2280, 28224),
    8: (756, 28, 36, 998, 2117, 3523, 50176),
    9: (992, 32, 49, 1273, 2744, 4318, 82944),
    10: (1260, 36, 64, 1121, 3421, 5708, 129600),
    11: (1560, 40, 81, 1359, 4061, 7213, 193600),
    12: (1892, 44, 100, 1127, 4915, 9106, 278784),
    13: (2256, 48, 121, 1989, 5977, 10486, 389376),
    14: (2652, 52, 144, 1404, 6892, 14536, 529984),
    15: (3080, 56, 169, 3576, 8171, 15522, 705600),
}

# Published loss endpoints of the comparison sweep at 35 demands.
PUBLISHED_COMPARE = {"spider": 30, "of_rtt0": 143}
