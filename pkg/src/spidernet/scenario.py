"""Scenario files: TOML with explicit units, validated before anything runs.

Times are strings such as "250 us", "2 ms" or "1.5 s"; rates are numbers or
strings such as "100 pkt/s". Every table accepts only its documented keys.

    seed = 7
    duration = "500 ms"
    traffic_stop = "450 ms"        # optional, defaults to duration
    mode = "SPIDER"                # or "BASELINE"
    rtt = "3 ms"                   # BASELINE only
    per_flow_cost = "2270 us"      # BASELINE only

    [topology]
    grid = 5                       # builtin n x n grid, outer ring EDGE
    delay = "250 us"
    # or: nodes = { S = "EDGE", A = "CORE" }
    #     links = [["S", "A", "250 us"], ...]

    [demands]
    full_mesh = true               # every ordered pair of edge nodes
    profile = { kind = "CBR", rate = "100 pkt/s" }
    random_phase = true

    [[demand]]                     # explicit demands, may be combined
    src = "S"
    dst = "D"
    host = 0
    profile = { kind = "RAMP", start_rate = 200, end_rate = 0, duration = "100 s" }

    [timeouts]
    d6 = "10 ms"

    [[fault]]
    at = "60 ms"
    kind = "NODE_DOWN"             # LINK_DOWN/LINK_UP take target = [a, b]
    target = 12
"""

import random
import re

try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python 3.10
    import tomli

from .compiler import CompileError, TimeoutProfile
from .pathplan import CORE, EDGE, Demand, Topology, TopologyError, full_mesh_demands, grid_topology
from .simnet import CBR, US, Bursts, Ramp, Scenario

MS = 1000

TOP_KEYS = {"seed", "duration", "traffic_stop", "mode", "rtt", "per_flow_cost", "bin",
            "topology", "demands", "demand", "timeouts", "fault"}
TOPO_KEYS = {"grid", "delay", "nodes", "links"}
DEMANDS_KEYS = {"full_mesh", "profile", "random_phase", "hosts"}
DEMAND_KEYS = {"src", "dst", "host", "profile"}
TIMEOUT_KEYS = {"d1", "d2", "d3", "d4", "d5", "d6", "d7"}
FAULT_KEYS = {"at", "kind", "target"}
PROFILE_KEYS = {
    "CBR": {"kind", "rate", "start", "stop", "phase"},
    "RAMP": {"kind", "start_rate", "end_rate", "duration", "start", "phase"},
    "BURSTS": {"kind", "rate", "burst", "gap", "start", "seed"},
}

_UNITS = {"us": 1, "ms": MS, "s": US}
_TIME_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(us|ms|s)\s*$")
_RATE_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+)\s*(?:pkt/s)?\s*$")


class ScenarioFileError(ValueError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line else msg)


class _Src:
    """Maps keys and table headers back to line numbers for diagnostics."""

    def __init__(self, text):
        self.lines = text.splitlines()

    def line_of(self, key, section=None, nth=0):
        """Line of `key` inside the nth occurrence of `section` (arrays of tables)."""
        in_section = section is None
        seen = 0
        for no, raw in enumerate(self.lines, start=1):
            s = raw.split("#", 1)[0].strip()
            if s.startswith("["):
                name = s.strip("[]").strip()
                if section is None:
                    if name == key:
                        if seen == nth:
                            return no
                        seen += 1
                else:
                    in_section = name == section and seen == nth
                    seen += name == section
                continue
            if in_section and re.match(rf"^{re.escape(str(key))}\s*=", s):
                return no
        return None


def parse_time(v, what, src=None, section=None, nth=0):
    if isinstance(v, str):
        m = _TIME_RE.match(v)
        if m:
            return round(float(m.group(1)) * _UNITS[m.group(2)])
    line = src.line_of(what, section, nth) if src else None
    raise ScenarioFileError(f"{what}: expected a time with unit (us, ms, s), got {v!r}", line)


def parse_rate(v, what, src=None, section=None, nth=0):
    if isinstance(v, bool):
        pass
    elif isinstance(v, (int, float)) and v >= 0:
        return float(v)
    elif isinstance(v, str):
        m = _RATE_RE.match(v)
        if m:
            return float(m.group(1))
    line = src.line_of(what, section, nth) if src else None
    raise ScenarioFileError(f"{what}: expected a rate in pkt/s, got {v!r}", line)


def _check_keys(table, allowed, where, src, section=None, nth=0):
    if not isinstance(table, dict):
        raise ScenarioFileError(f"{where} must be a table", src.line_of(section or where, nth=nth))
    for k in table:
        if k not in allowed:
            raise ScenarioFileError(f"unknown key {k!r} in {where}", src.line_of(k, section, nth))


def _profile(p, rng, random_phase, where, line):
    try:
        return _make_profile(p, rng, random_phase, where)
    except ScenarioFileError as exc:
        if exc.line is not None:
            raise
        raise ScenarioFileError(str(exc), line) from None


def _make_profile(p, rng, random_phase, where):
    src = None
    if not isinstance(p, dict) or "kind" not in p:
        raise ScenarioFileError(f"{where}: profile needs a kind", None)
    kind = str(p["kind"]).upper()
    if kind not in PROFILE_KEYS:
        raise ScenarioFileError(f"{where}: unknown profile kind {p['kind']!r}",
                                None)
    for k in p:
        if k not in PROFILE_KEYS[kind]:
            raise ScenarioFileError(f"{where}: unknown profile key {k!r}", None)
    t = lambda k, dflt=0: parse_time(p[k], k, src) if k in p else dflt
    if kind == "CBR":
        rate = parse_rate(p.get("rate", 0), "rate", src)
        phase = t("phase")
        if random_phase and "phase" not in p and rate > 0:
            phase = rng.randrange(max(1, round(US / rate)))
        stop = parse_time(p["stop"], "stop", src) if "stop" in p else None
        return CBR(rate, t("start"), stop, phase)
    if kind == "RAMP":
        if "duration" not in p:
            raise ScenarioFileError(f"{where}: RAMP needs a duration", None)
        return Ramp(parse_rate(p.get("start_rate", 0), "start_rate", src),
                    parse_rate(p.get("end_rate", 0), "end_rate", src),
                    parse_time(p["duration"], "duration", src), t("start"), t("phase"))
    rate = parse_rate(p.get("rate", 0), "rate", src)
    if rate <= 0:
        raise ScenarioFileError(f"{where}: BURSTS needs a positive rate", None)
    burst = tuple(p.get("burst", (5, 15)))
    gap = tuple(parse_time(g, "gap", src) for g in p["gap"]) if "gap" in p else (5 * MS, 20 * MS)
    return Bursts(rate, burst, gap, t("start"), int(p.get("seed", 0)))


def _node(t, name):
    if name in t.roles:
        return name
    if isinstance(name, str) and name.isdigit() and int(name) in t.roles:
        return int(name)
    return None


def _topology(doc, src):
    if "topology" not in doc:
        raise ScenarioFileError("missing [topology]")
    topo = doc["topology"]
    _check_keys(topo, TOPO_KEYS, "topology", src, "topology")
    delay = parse_time(topo.get("delay", "250 us"), "delay", src, "topology")
    if "grid" in topo:
        if "nodes" in topo or "links" in topo:
            raise ScenarioFileError("topology: grid excludes nodes/links", src.line_of("grid"))
        n = topo["grid"]
        if not isinstance(n, int) or isinstance(n, bool) or n < 3:
            raise ScenarioFileError("topology.grid must be an integer >= 3", src.line_of("grid"))
        return grid_topology(n, delay), n
    if "nodes" not in topo or "links" not in topo:
        raise ScenarioFileError("topology needs grid, or nodes and links", src.line_of("topology"))
    roles = {}
    for name, role in topo["nodes"].items():
        role = str(role).upper()
        if role not in (EDGE, CORE):
            raise ScenarioFileError(f"node {name}: role must be EDGE or CORE",
                                    src.line_of("nodes", "topology"))
        roles[name] = role
    links = []
    for lk in topo["links"]:
        if not isinstance(lk, list) or len(lk) not in (2, 3):
            raise ScenarioFileError(f"bad link {lk!r}", src.line_of("links", "topology"))
        d = parse_time(lk[2], "links", src, "topology") if len(lk) == 3 else delay
        links.append((lk[0], lk[1], d))
    try:
        return Topology(roles, links), None
    except TopologyError as exc:
        raise ScenarioFileError(str(exc), src.line_of("links", "topology")) from None


def load(path):
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode()
    except OSError as exc:
        raise ScenarioFileError(f"cannot read scenario: {exc}") from None
    return loads(text)


def loads(text):
    """Parse and validate a scenario; returns a ready simnet Scenario with
    extra attributes grid_n (int or None)."""
    src = _Src(text)
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ScenarioFileError(f"syntax: {exc}", int(m.group(1)) if m else None) from None
    _check_keys(doc, TOP_KEYS, "scenario", src)
    t, grid_n = _topology(doc, src)
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ScenarioFileError("seed must be an integer", src.line_of("seed"))
    rng = random.Random(seed)

    demands = []
    if "demands" in doc:
        ds = doc["demands"]
        _check_keys(ds, DEMANDS_KEYS, "demands", src, "demands")
        if ds.get("full_mesh", False):
            prof = ds.get("profile", {"kind": "CBR", "rate": 0})
            hosts = ds.get("hosts", 1)
            for d in full_mesh_demands(t):
                for h in range(hosts):
                    dd = Demand(d.src, d.dst, 0, h)
                    demands.append((dd, _profile(prof, rng, ds.get("random_phase", False),
                                                 "demands", src.line_of("profile", "demands"))))
    n_mesh = len(demands)
    for k, dm in enumerate(doc.get("demand", [])):
        _check_keys(dm, DEMAND_KEYS, f"demand[{k}]", src, "demand", k)
        for end in ("src", "dst"):
            if end not in dm:
                raise ScenarioFileError(f"demand[{k}] needs {end}", src.line_of("demand", nth=k))
        s, d = _node(t, dm["src"]), _node(t, dm["dst"])
        if s is None or d is None:
            raise ScenarioFileError(f"demand[{k}] references unknown node",
                                    src.line_of("src", "demand", k))
        prof = _profile(dm.get("profile", {"kind": "CBR", "rate": 0}), rng, False, f"demand[{k}]",
                        src.line_of("profile", "demand", k))
        rate = getattr(prof, "rate", getattr(prof, "start_rate", 0))
        demands.append((Demand(s, d, rate, int(dm.get("host", 0))), prof))
    seen = set()
    for i, (d, _) in enumerate(demands):
        if d.key in seen:
            k = i - n_mesh
            line = src.line_of("demand", nth=k) if k >= 0 else src.line_of("demands")
            raise ScenarioFileError(f"duplicate demand {d.label()} (same src, dst and host)", line)
        seen.add(d.key)

    prof = TimeoutProfile()
    if "timeouts" in doc:
        _check_keys(doc["timeouts"], TIMEOUT_KEYS, "timeouts", src, "timeouts")
        for k, v in doc["timeouts"].items():
            setattr(prof, k, parse_time(v, k, src, "timeouts"))
    try:
        prof.validate()
    except CompileError as exc:
        raise ScenarioFileError(str(exc), src.line_of("timeouts")) from None

    faults = []
    for k, f in enumerate(doc.get("fault", [])):
        _check_keys(f, FAULT_KEYS, f"fault[{k}]", src, "fault", k)
        if not {"at", "kind", "target"} <= set(f):
            raise ScenarioFileError(f"fault[{k}] needs at, kind and target",
                                    src.line_of("fault", nth=k))
        kind = str(f["kind"]).upper()
        if kind.startswith("LINK"):
            tg = f["target"]
            if not isinstance(tg, list) or len(tg) != 2:
                raise ScenarioFileError(f"fault[{k}]: link target must be [a, b]",
                                        src.line_of("target", "fault", k))
            a, b = _node(t, tg[0]), _node(t, tg[1])
            if a is None or b is None or b not in t.adj[a]:
                raise ScenarioFileError(f"fault[{k}]: no link {tg[0]}-{tg[1]}",
                                        src.line_of("target", "fault", k))
            target = (a, b)
        elif kind.startswith("NODE"):
            target = _node(t, f["target"])
            if target is None:
                raise ScenarioFileError(f"fault[{k}]: unknown node {f['target']!r}",
                                        src.line_of("target", "fault", k))
        else:
            raise ScenarioFileError(f"fault[{k}]: unknown kind {f['kind']!r}",
                                    src.line_of("kind", "fault", k))
        faults.append((parse_time(f["at"], "at", src, "fault", k), kind, target))

    mode = str(doc.get("mode", "SPIDER")).upper()
    if mode not in ("SPIDER", "BASELINE"):
        raise ScenarioFileError(f"mode must be SPIDER or BASELINE, got {mode!r}",
                                src.line_of("mode"))
    duration = parse_time(doc.get("duration", "1 s"), "duration", src)
    if duration <= 0:
        raise ScenarioFileError("duration must be > 0", src.line_of("duration"))
    stop = parse_time(doc["traffic_stop"], "traffic_stop", src) if "traffic_stop" in doc else None
    sc = Scenario(t, demands, prof=prof, faults=faults, seed=seed, duration=duration,
                  traffic_stop=stop, mode=mode,
                  rtt=parse_time(doc.get("rtt", "0 ms"), "rtt", src),
                  per_flow_cost=parse_time(doc.get("per_flow_cost", "0 us"), "per_flow_cost", src),
                  bin_us=parse_time(doc.get("bin", "1 s"), "bin", src))
    if mode == "SPIDER" and ("rtt" in doc or "per_flow_cost" in doc):
        raise ScenarioFileError("rtt/per_flow_cost only apply to BASELINE mode",
                                src.line_of("rtt") or src.line_of("per_flow_cost"))
    sc.grid_n = grid_n
    return sc
