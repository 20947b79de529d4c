"""OpenState match-action engine.

A switch is four flow tables. Tables 2 and 3 carry a state table: before
matching, the packet's state is looked up with the table's lookup-scope,
and any SET_STATE action writes a key derived from the target table's
update-scope. State entries may carry idle and hard timeouts, each with a
rollback state.

Time is an integer number of microseconds throughout.
"""

from dataclasses import dataclass, replace

# tag kinds
DATA = "DATA0"
FAULT = "F"
HB_REQ = "HB_REQ"
HB_REPLY = "HB_REPLY"
PROBE = "P"
NONE = "NONE"

# scope fields
ETH_SRC = "eth_src"
ETH_DST = "eth_dst"
METADATA = "metadata"
IN_PORT = "in_port"
SCOPE_FIELDS = (ETH_SRC, ETH_DST, METADATA, IN_PORT)

# timeout causes
IDLE = "IDLE"
HARD = "HARD"


class ConfigError(Exception):
    """Bad table or scope configuration."""


class PipelineFault(Exception):
    """A packet matched no entry in a table it visited."""


@dataclass(frozen=True, order=True)
class Tag:
    kind: str
    node: object = None

    def __str__(self):
        if self.kind in (FAULT, PROBE):
            return f"{self.kind}({'*' if self.node is None else self.node})"
        return self.kind


TAG_DATA = Tag(DATA)
TAG_HB_REQ = Tag(HB_REQ)
TAG_HB_REPLY = Tag(HB_REPLY)
TAG_NONE = Tag(NONE)


def fault(node=None):
    return Tag(FAULT, node)


def probe(node=None):
    return Tag(PROBE, node)


@dataclass
class Packet:
    eth_src: object
    eth_dst: object
    tag: Tag = TAG_NONE
    seq: int = 0
    metadata: object = None
    created_at: int = 0
    hops: int = 0
    detoured: bool = False  # simulation-only: has carried an F_i tag

    @property
    def demand(self):
        return (self.eth_src, self.eth_dst)

    def copy(self):
        return replace(self)


def _field(pkt, in_port, name):
    if name == IN_PORT:
        return in_port
    if name in (ETH_SRC, ETH_DST, METADATA):
        return getattr(pkt, name)
    raise ConfigError(f"unknown scope field {name!r}")


def make_scope(*fields):
    if not fields:
        raise ConfigError("scope must not be empty")
    if len(set(fields)) != len(fields):
        raise ConfigError("duplicate field in scope")
    for f in fields:
        if f not in SCOPE_FIELDS:
            raise ConfigError(f"unknown scope field {f!r}")
    return tuple(fields)


def extract_key(scope, pkt, in_port):
    key = tuple(_field(pkt, in_port, f) for f in scope)
    if METADATA in scope and pkt.metadata is None:
        raise ConfigError("scope uses METADATA but packet has none")
    return key


@dataclass
class StateEntry:
    state: int
    idle_timeout: int = None
    hard_timeout: int = None
    idle_rollback: int = 0
    hard_rollback: int = 0
    last_matched: int = 0
    installed_at: int = 0

    def next_expiry(self):
        """(deadline, cause) of the earliest pending timeout, idle first on ties."""
        best = None
        if self.idle_timeout is not None:
            best = (self.last_matched + self.idle_timeout, 0, IDLE)
        if self.hard_timeout is not None:
            cand = (self.installed_at + self.hard_timeout, 1, HARD)
            if best is None or cand < best:
                best = cand
        return None if best is None else (best[0], best[2])


class StateTable:
    """Exact-match state storage with lookup/update scopes and timeouts."""

    def __init__(self, lookup_scope, update_scope, default_state=0):
        self.lookup_scope = make_scope(*lookup_scope)
        self.update_scope = make_scope(*update_scope)
        self.default_state = default_state
        self.entries = {}

    def __len__(self):
        return len(self.entries)

    def lookup(self, pkt, in_port, now):
        key = extract_key(self.lookup_scope, pkt, in_port)
        self._expire_key(key, now)
        entry = self.entries.get(key)
        if entry is None:
            return self.default_state
        entry.last_matched = now
        return entry.state

    def peek(self, key, now=None):
        """State for a raw key without touching idle timers."""
        if now is not None:
            self._expire_key(key, now)
        entry = self.entries.get(key)
        return self.default_state if entry is None else entry.state

    def set_state(self, pkt, in_port, action, now):
        key = extract_key(self.update_scope, pkt, in_port)
        self.write(key, action.state, now, action.idle_timeout, action.hard_timeout,
                   action.idle_rollback, action.hard_rollback)

    def write(self, key, state, now, idle_timeout=None, hard_timeout=None,
              idle_rollback=0, hard_rollback=0):
        if state == self.default_state and idle_timeout is None and hard_timeout is None:
            self.entries.pop(key, None)
            return
        self.entries[key] = StateEntry(state, idle_timeout, hard_timeout,
                                       idle_rollback, hard_rollback, now, now)

    def _roll(self, key, entry, now_of_expiry, cause):
        old = entry.state
        new = entry.idle_rollback if cause == IDLE else entry.hard_rollback
        # the rolled-back state carries no timers of its own
        if new == self.default_state:
            del self.entries[key]
        else:
            self.entries[key] = StateEntry(new, last_matched=now_of_expiry,
                                           installed_at=now_of_expiry)
        return (key, old, new, cause)

    def _expire_key(self, key, now):
        entry = self.entries.get(key)
        if entry is None:
            return None
        nxt = entry.next_expiry()
        if nxt is not None and nxt[0] <= now:
            return self._roll(key, entry, nxt[0], nxt[1])
        return None

    def expire(self, now):
        """Roll back every entry whose deadline is <= now.

        Returns (key, old_state, new_state, cause, deadline) tuples ordered
        by deadline then key.
        """
        due = []
        for key, entry in self.entries.items():
            nxt = entry.next_expiry()
            if nxt is not None and nxt[0] <= now:
                due.append((nxt[0], key, nxt[1]))
        due.sort(key=lambda x: (x[0], repr(x[1])))
        out = []
        for deadline, key, cause in due:
            k, old, new, c = self._roll(key, self.entries[key], deadline, cause)
            out.append((k, old, new, c, deadline))
        return out

    def next_deadline(self):
        best = None
        for entry in self.entries.values():
            nxt = entry.next_expiry()
            if nxt is not None and (best is None or nxt[0] < best):
                best = nxt[0]
        return best


# actions

@dataclass(frozen=True)
class PushTag:
    tag: Tag


@dataclass(frozen=True)
class SetTag:
    tag: Tag


@dataclass(frozen=True)
class PopTag:
    pass


@dataclass(frozen=True)
class Output:
    port: object


@dataclass(frozen=True)
class OutputInPort:
    pass


@dataclass(frozen=True)
class Duplicate:
    first: tuple
    second: tuple


@dataclass(frozen=True)
class SetMeta:
    value: object


@dataclass(frozen=True)
class SetMetaInPort:
    pass


@dataclass(frozen=True)
class SetState:
    table_id: int
    state: int
    idle_timeout: int = None
    hard_timeout: int = None
    idle_rollback: int = 0
    hard_rollback: int = 0


@dataclass(frozen=True)
class GotoTable:
    table_id: int


@dataclass(frozen=True)
class Drop:
    pass


def fmt_action(a):
    if isinstance(a, (PushTag, SetTag)):
        return f"{type(a).__name__.upper()}({a.tag})"
    if isinstance(a, Output):
        return f"OUTPUT({a.port})"
    if isinstance(a, Duplicate):
        return ("DUP([" + ",".join(fmt_action(x) for x in a.first) + "],["
                + ",".join(fmt_action(x) for x in a.second) + "])")
    if isinstance(a, SetMeta):
        return f"SET_META({a.value})"
    if isinstance(a, SetState):
        parts = [f"t{a.table_id}", f"s={a.state}"]
        if a.idle_timeout is not None:
            parts.append(f"idle={a.idle_timeout}us->{a.idle_rollback}")
        if a.hard_timeout is not None:
            parts.append(f"hard={a.hard_timeout}us->{a.hard_rollback}")
        return "SET_STATE(" + ",".join(parts) + ")"
    if isinstance(a, GotoTable):
        return f"GOTO({a.table_id})"
    return {PopTag: "POP_TAG", OutputInPort: "OUTPUT_IN_PORT", Drop: "DROP",
            SetMetaInPort: "SET_META(in_port)"}[type(a)]


# flow tables

MATCH_FIELDS = ("state", "tag_kind", "tag_node", "in_port", "metadata", "eth_src", "eth_dst")


@dataclass
class FlowEntry:
    priority: int
    match: dict
    actions: tuple
    role: str = ""

    def key(self):
        """Wildcard mask and concrete values, in MATCH_FIELDS order."""
        flat = _flatten_match(self.match)
        mask = tuple(f in flat for f in MATCH_FIELDS)
        vals = tuple(flat[f] for f in MATCH_FIELDS if f in flat)
        return mask, vals

    def describe(self):
        m = ",".join(f"{k}={_fmt_val(v)}" for k, v in sorted(self.match.items()))
        acts = ",".join(fmt_action(a) for a in self.actions)
        return f"prio={self.priority} match[{m or '*'}] actions[{acts}]"


def _fmt_val(v):
    return str(v) if not isinstance(v, tuple) else ":".join(map(str, v))


def _flatten_match(match):
    flat = {}
    for k, v in match.items():
        if v is None:
            continue
        if k == "tag":
            flat["tag_kind"] = v.kind
            if v.node is not None:
                flat["tag_node"] = v.node
        elif k in ("state", "in_port", "metadata", "eth_src", "eth_dst"):
            flat[k] = v
        else:
            raise ConfigError(f"unknown match field {k!r}")
    return flat


def _ctx_values(ctx):
    tag = ctx["tag"]
    return {"state": ctx.get("state"), "tag_kind": tag.kind, "tag_node": tag.node,
            "in_port": ctx["in_port"], "metadata": ctx["metadata"],
            "eth_src": ctx["eth_src"], "eth_dst": ctx["eth_dst"]}


class FlowTable:
    """Priority-ordered match-action entries, indexed by wildcard mask."""

    def __init__(self, table_id):
        self.table_id = table_id
        self.entries = []
        self._index = None

    def __len__(self):
        return len(self.entries)

    def add(self, entry):
        self.entries.append(entry)
        self._index = None
        return entry

    @property
    def _groups(self):
        # built on first use so bulk compilation stays cheap
        if self._index is None:
            index = {}
            for e in self.entries:
                mask, vals = e.key()
                index.setdefault(mask, {}).setdefault(vals, []).append(e)
            for group in index.values():
                for hits in group.values():
                    hits.sort(key=lambda e: -e.priority)
            self._index = index
        return self._index

    def match(self, ctx):
        values = _ctx_values(ctx)
        best = None
        for mask, group in self._groups.items():
            proj = tuple(values[f] for f, on in zip(MATCH_FIELDS, mask) if on)
            hits = group.get(proj)
            if hits and (best is None or hits[0].priority > best.priority):
                best = hits[0]
        if best is None:
            raise PipelineFault(f"table {self.table_id}: no entry matches {ctx}")
        return best

    def ambiguities(self):
        """Pairs of equal-priority entries that can match the same packet."""
        found = []
        masks = list(self._groups)
        for a_i, ma in enumerate(masks):
            for mb in masks[a_i:]:
                common = [i for i in range(len(MATCH_FIELDS)) if ma[i] and mb[i]]
                pos_a = _positions(ma)
                pos_b = _positions(mb)
                index = {}
                for vals, entries in self._groups[ma].items():
                    proj = tuple(vals[pos_a[i]] for i in common)
                    for e in entries:
                        index.setdefault((proj, e.priority), []).append(e)
                for vals, entries in self._groups[mb].items():
                    proj = tuple(vals[pos_b[i]] for i in common)
                    for e in entries:
                        for other in index.get((proj, e.priority), ()):
                            if other is not e and (ma != mb or id(other) < id(e)):
                                found.append((other, e))
        return found


def _positions(mask):
    pos, j = {}, 0
    for i, on in enumerate(mask):
        if on:
            pos[i] = j
            j += 1
    return pos


@dataclass
class Emission:
    port: object
    pkt: Packet


class SwitchPipeline:
    """Four flow tables; state tables attached to tables 2 and 3."""

    N_TABLES = 4

    def __init__(self, name, ports, state_tables=None):
        self.name = name
        self.ports = dict(ports)  # port -> "EDGE" | "TRANSPORT"
        self.tables = [FlowTable(i) for i in range(self.N_TABLES)]
        self.state_tables = dict(state_tables or {})
        for tid in self.state_tables:
            if tid in (0, 1):
                raise ConfigError("tables 0 and 1 are stateless")
        self.trace = None  # optional list receiving (table, entry) hits

    def add(self, table_id, entry):
        self._check(table_id, entry.actions)
        return self.tables[table_id].add(entry)

    def _check(self, table_id, actions):
        for a in actions:
            kind = type(a)
            if kind is GotoTable and a.table_id <= table_id:
                raise ConfigError(f"GOTO {a.table_id} from table {table_id}")
            if kind is SetState and a.table_id not in self.state_tables:
                raise ConfigError(f"SET_STATE on stateless table {a.table_id}")
            if kind is Duplicate:
                self._check(table_id, a.first)
                self._check(table_id, a.second)

    def next_deadline(self):
        ds = [d for d in (st.next_deadline() for st in self.state_tables.values()) if d is not None]
        return min(ds) if ds else None

    def expire(self, now):
        out = []
        for tid in sorted(self.state_tables):
            for rec in self.state_tables[tid].expire(now):
                out.append((tid,) + rec)
        out.sort(key=lambda r: (r[5], r[0], repr(r[1])))
        return out

    def process(self, pkt, in_port, now):
        if in_port not in self.ports:
            raise ConfigError(f"{self.name}: unknown port {in_port}")
        out = []
        self._run_table(0, pkt.copy(), in_port, now, out)
        return out

    def _run_table(self, tid, pkt, in_port, now, out):
        ctx = {"tag": pkt.tag, "in_port": in_port, "metadata": pkt.metadata,
               "eth_src": pkt.eth_src, "eth_dst": pkt.eth_dst}
        st = self.state_tables.get(tid)
        if st is not None:
            ctx["state"] = st.lookup(pkt, in_port, now)
        entry = self.tables[tid].match(ctx)
        if self.trace is not None:
            self.trace.append((tid, entry))
        self._apply(tid, entry.actions, pkt, in_port, now, out)

    def _apply(self, tid, actions, pkt, in_port, now, out):
        goto = None
        for a in actions:
            if isinstance(a, Drop):
                return
            if isinstance(a, (PushTag, SetTag)):
                pkt.tag = a.tag
            elif isinstance(a, PopTag):
                pkt.tag = TAG_NONE
            elif isinstance(a, SetMeta):
                pkt.metadata = a.value
            elif isinstance(a, SetMetaInPort):
                pkt.metadata = in_port
            elif isinstance(a, SetState):
                self.state_tables[a.table_id].set_state(pkt, in_port, a, now)
            elif isinstance(a, Output):
                out.append(Emission(a.port, pkt.copy()))
            elif isinstance(a, OutputInPort):
                out.append(Emission(in_port, pkt.copy()))
            elif isinstance(a, Duplicate):
                # DUPLICATE ends the list; each copy runs its own sublist
                self._apply(tid, a.first, pkt.copy(), in_port, now, out)
                self._apply(tid, a.second, pkt.copy(), in_port, now, out)
                return
            elif isinstance(a, GotoTable):
                goto = a.table_id
            else:
                raise ConfigError(f"unknown action {a!r}")
        if goto is not None:
            self._run_table(goto, pkt, in_port, now, out)

    def dump(self):
        lines = []
        for t in self.tables:
            for e in sorted(t.entries, key=lambda e: (-e.priority, e.describe())):
                lines.append(f"{self.name} t{t.table_id} {e.describe()}")
        return lines

