"""Command-line runner: compile, run and sweep.

Exit codes: 0 ok, 1 invalid input (scenario, arguments, unprotectable
demand), 2 runtime failure.
"""

import argparse
import csv
import io
import os
import sys

from . import sweeps
from .compiler import CompileError, TimeoutProfile, check_formulas, compile_network, dump
from .pathplan import (TopologyError, UnprotectableDemand, full_mesh_demands, grid_closed_forms,
                       grid_topology, plan_all)
from .scenario import ScenarioFileError, load, parse_rate, parse_time
from .simnet import ScenarioError, build

TABLE2_COLUMNS = ["n", "D", "E", "C", "min", "avg", "max", "E2N"]
NODE_COLUMNS = ["n", "node", "ports", "t0", "t1", "t2", "t3", "total", "t2_fsm", "t3_fsm"]
METRICS_COLUMNS = ["demand", "sent", "delivered", "lost", "in_flight", "out_of_order",
                   "duplicates", "detoured"]
LINK_COLUMNS = ["src", "dst", "bin", "data", "hb_req", "hb_reply", "probe", "total"]
LOSS_COLUMNS = ["d7_ms", "d6_ms", "mean_lost", "runs"]
OVERHEAD_COLUMNS = ["t", "data", "hb_reply", "probe", "total"]

VALIDATION_ERRORS = (ScenarioFileError, ScenarioError, CompileError, TopologyError,
                     UnprotectableDemand)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def compare_columns(rtts):
    return ["demands", "spider"] + [f"of_rtt{r}" for r in rtts]


def _csv_text(columns, rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r.get(k, "") for k in columns})
    return buf.getvalue()


def _write(path, text):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _target(explicit, outdir, name):
    if explicit:
        return explicit
    if outdir:
        return os.path.join(outdir, name)
    return None


def compile_report(t, plans, prof, n=None):
    """(table row, per-node rows, configs, formula mismatches)."""
    cfgs = compile_network(t, plans, prof)
    node_rows = []
    mismatches = {}
    for node in t.nodes:
        cfg = cfgs[node]
        c = cfg.count_entries()
        node_rows.append({"n": n if n is not None else "", "node": node, "ports": cfg.n_ports,
                          **{k: c[k] for k in ("t0", "t1", "t2", "t3", "total",
                                                "t2_fsm", "t3_fsm")}})
        bad = check_formulas(cfg)
        if bad:
            mismatches[node] = bad
    totals = [r["total"] for r in node_rows]
    if n is not None:
        row = dict(grid_closed_forms(n), n=n)
    else:
        e, c = len(t.edge_nodes), len(t.core_nodes)
        row = {"n": "", "D": len(plans), "E": e, "C": c, "E2N": e * e * len(t.nodes)}
    row.update({"min": min(totals), "avg": round(sum(totals) / len(totals)), "max": max(totals)})
    return row, node_rows, cfgs, mismatches


def cmd_compile(args, out):
    jobs = []
    if args.scenario:
        sc = load(args.scenario)
        jobs.append((sc.topology, [d for d, _ in sc.demands], sc.prof, sc.grid_n))
    for n in args.grid or []:
        t = grid_topology(n)
        jobs.append((t, full_mesh_demands(t), TimeoutProfile(), n))
    if not jobs:
        raise UsageError("compile needs a scenario file or --grid")
    rows, node_rows, dumps = [], [], []
    for t, demands, prof, n in jobs:
        plans = plan_all(t, demands)
        row, nrows, cfgs, bad = compile_report(t, plans, prof, n)
        if bad:
            raise RuntimeError(f"entry counts disagree with closed forms: {bad}")
        rows.append(row)
        node_rows.extend(nrows)
        if args.dump or args.out:
            dumps.extend(dump(cfgs))
    table = _csv_text(TABLE2_COLUMNS, rows)
    csv_path = _target(args.csv, args.out, "table2.csv")
    nodes_path = _target(args.nodes_csv, args.out, "nodes.csv")
    dump_path = _target(args.dump, args.out, "rules.txt")
    if csv_path:
        _write(csv_path, table)
    else:
        out.write(table)
    if nodes_path:
        _write(nodes_path, _csv_text(NODE_COLUMNS, node_rows))
    if dump_path:
        _write(dump_path, "\n".join(dumps) + "\n")
    return 0


def cmd_run(args, out):
    sc = load(args.scenario)
    if args.seed is not None:
        sc.seed = args.seed
    log_path = _target(args.log, args.out, "events.log")
    sc.log = log_path is not None
    sim = build(sc)
    m = sim.run(sc.duration)
    rows = []
    for key, st in m.demands.items():
        rows.append({"demand": st.label, "sent": st.sent, "delivered": st.delivered,
                     "lost": st.lost, "in_flight": st.in_flight,
                     "out_of_order": st.out_of_order, "duplicates": st.duplicates,
                     "detoured": st.detoured})
    link_rows = []
    for (u, v), per in sorted(m.links.items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1]))):
        bins = sorted({b for series in per.values() for b in series})
        for b in bins:
            r = {k: per.get(k, {}).get(b, 0) for k in ("data", "hb_req", "hb_reply", "probe")}
            r.update(src=u, dst=v, bin=b, total=sum(r.values()))
            link_rows.append(r)
    csv_path = _target(args.csv, args.out, "metrics.csv")
    links_path = _target(args.links_csv, args.out, "links.csv")
    if csv_path:
        _write(csv_path, _csv_text(METRICS_COLUMNS, rows))
    if links_path:
        _write(links_path, _csv_text(LINK_COLUMNS, link_rows))
    if log_path:
        _write(log_path, "\n".join(sim.log) + "\n")
    tot = m.totals()
    out.write(f"sent={tot['sent']} delivered={tot['delivered']} lost={tot['lost']} "
              f"in_flight={tot['in_flight']} out_of_order={tot['out_of_order']} "
              f"recovery_time_us={tot['recovery_time_us']} ctrl_msgs={m.ctrl_msgs}\n")
    if log_path:
        out.write(f"log={log_path}\n")
    return 0


def _float_list(s):
    return [float(x) if "." in x else int(x) for x in s.split(",") if x.strip()]


def cmd_sweep(args, out):
    kind = args.kind.upper()
    if kind == "LOSS":
        rows = sweeps.loss_sweep(_float_list(args.d6), _float_list(args.d7),
                                 parse_rate(args.rate, "rate"), args.tries, args.seed)
        for r in rows:
            r["runs"] = ";".join(map(str, r["runs"]))
        text = _csv_text(LOSS_COLUMNS, rows)
    elif kind == "OVERHEAD":
        if args.hb_rate is not None:
            d6 = round(1_000_000 / args.hb_rate)
        else:
            d6 = parse_time(args.d6_time, "d6")
        rows = sweeps.overhead_run(d6, args.start_rate, args.end_rate,
                                   round(parse_time(args.ramp, "ramp") / 1_000_000),
                                   round(parse_time(args.tail, "tail") / 1_000_000))
        text = _csv_text(OVERHEAD_COLUMNS, rows)
    else:
        rtts = _float_list(args.rtts)
        rows = sweeps.compare_sweep(range(1, args.max_demands + 1), rtts, args.tries, args.seed,
                                    parse_rate(args.rate, "rate"))
        for r in rows:
            for k, v in r.items():
                if isinstance(v, float):
                    r[k] = round(v, 3)
        text = _csv_text(compare_columns(rtts), rows)
    path = _target(args.csv, args.out, f"{kind.lower()}.csv")
    if path:
        _write(path, text)
    else:
        out.write(text)
    return 0


def make_parser():
    p = _Parser(prog="spidernet", description="SPIDER failure-recovery pipelines: "
                "compile, simulate and sweep.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    c = sub.add_parser("compile", help="compile pipelines and count flow entries")
    c.add_argument("scenario", nargs="?")
    c.add_argument("--grid", type=int, nargs="+", help="builtin grid sizes (full-mesh demands)")
    c.add_argument("--out", help="output directory")
    c.add_argument("--csv", help="entry-count table (default stdout)")
    c.add_argument("--nodes-csv", help="per-node entry counts")
    c.add_argument("--dump", help="rule dump")

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output directory")
    r.add_argument("--csv", help="per-demand metrics CSV")
    r.add_argument("--links-csv", help="per-link, per-bin packet counts")
    r.add_argument("--log", help="event log path")

    s = sub.add_parser("sweep", help="parameter sweeps (LOSS, OVERHEAD, COMPARE)")
    s.add_argument("kind", type=str.upper, choices=["LOSS", "OVERHEAD", "COMPARE"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tries", type=int, default=None)
    s.add_argument("--rate", default=None, help="pkt/s per demand")
    s.add_argument("--out", help="output directory")
    s.add_argument("--csv", help="output CSV (default stdout)")
    s.add_argument("--d6", default=",".join(map(str, sweeps.LOSS_D6_MS)), help="LOSS: ms list")
    s.add_argument("--d7", default=",".join(map(str, sweeps.LOSS_D7_MS)), help="LOSS: ms list")
    s.add_argument("--hb-rate", type=float, help="OVERHEAD: 1/d6 in pkt/s")
    s.add_argument("--d6-time", default="10 ms", help="OVERHEAD: d6 with unit")
    s.add_argument("--start-rate", type=float, default=200)
    s.add_argument("--end-rate", type=float, default=0)
    s.add_argument("--ramp", default="100 s")
    s.add_argument("--tail", default="10 s")
    s.add_argument("--max-demands", type=int, default=35)
    s.add_argument("--rtts", default=",".join(map(str, sweeps.COMPARE_RTT_MS)),
                   help="COMPARE: ms list")
    return p


def main(argv=None, out=None):
    out = out or sys.stdout
    try:
        args = make_parser().parse_args(argv)
        if args.cmd == "sweep":
            if args.tries is None:
                args.tries = 10 if args.kind == "LOSS" else 5
            if args.rate is None:
                args.rate = "1000" if args.kind == "LOSS" else "100"
            if args.tries < 1:
                raise UsageError("--tries must be >= 1")
        handler = {"compile": cmd_compile, "run": cmd_run, "sweep": cmd_sweep}[args.cmd]
        return handler(args, out)
    except UsageError as exc:
        sys.stderr.write(f"spidernet: usage: {exc}\n")
        return 1
    except VALIDATION_ERRORS as exc:
        sys.stderr.write(f"spidernet: invalid input: {exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"spidernet: {exc}\n")
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level runtime failure
        sys.stderr.write(f"spidernet: runtime error: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
