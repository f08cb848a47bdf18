"""slbag command line.

Exit status: 0 pass, 1 violation found, 2 usage / parse / replay divergence,
3 inconclusive.  The last line printed is always the VERDICT line.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass

from slbag import slcheck, specs
from slbag.algorithms import AlgorithmId
from slbag.primitives import UsageError
from slbag.sim import (
    Bounds,
    DivergenceError,
    ExplosionError,
    count_traces,
    dump_trace,
    parse_trace_text,
    parse_workload,
    replay,
    stress,
)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_INCONCLUSIVE = 0, 1, 2, 3
DEFAULT_CEILING = 2_000_000
DEFAULT_OUT = "slbag-witness.trace"


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits by itself; route its errors through the verdict path instead
    def error(self, message):
        raise _Usage(message)


@dataclass
class Outcome:
    verdict: str  # pass | fail | inconclusive
    traces: int = 0
    nodes: int = 0

    @property
    def code(self) -> int:
        return {"pass": EXIT_PASS, "fail": EXIT_FAIL, "inconclusive": EXIT_INCONCLUSIVE}[self.verdict]


def _ceiling(args) -> int | None:
    if args.ceiling is not None:
        value = args.ceiling
    else:
        env = os.environ.get("SLBAG_NODE_CEILING")
        if env is None:
            return DEFAULT_CEILING
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"SLBAG_NODE_CEILING={env!r} is not an integer") from None
    if value < 0:
        raise UsageError("node ceiling must be >= 0")
    return value or None  # 0 disables the ceiling


def _workload(args):
    if not args.workload:
        raise UsageError("--workload is required")
    return parse_workload(args.workload, args.algorithm, args.n, args.b, args.chooser, args.seed)


def _spec(args, algorithm: AlgorithmId):
    if args.spec is None:
        return slcheck.default_spec(algorithm, args.b)
    capacity = args.b if algorithm is AlgorithmId.SL_BB else 1
    return specs.make_spec(args.spec, capacity)


def _bounds(args) -> Bounds:
    return Bounds(max_steps=args.max_steps, max_loop_iters=args.max_loop_iters)


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(f"wrote {path}")


# ---------------------------------------------------------------- commands


def cmd_explore(args) -> Outcome:
    w = _workload(args)
    spec = _spec(args, w.algorithm)
    bounds, ceiling = _bounds(args), _ceiling(args)
    print(f"exploring {w.algorithm.value} n={w.n} b={w.b} workload {w.describe()}")
    counts = count_traces(w, bounds, ceiling=ceiling)
    ok, hists, states, bad = slcheck.check_leaves_linearizable(w, bounds, spec, ceiling)
    print(f"traces {counts.traces} ({counts.truncated} cut by bounds), {counts.nodes} distinct states")
    print(f"{hists} distinct complete histories checked for linearizability")
    if not ok:
        print("non-linearizable history found:")
        for o in bad.ops:
            print(f"  {o}")
        _write(args.out or DEFAULT_OUT, dump_trace(bad))
        return Outcome("fail", counts.traces, states)
    return Outcome("pass", counts.traces, states)


def cmd_validate(args) -> Outcome:
    w = _workload(args)
    spec = _spec(args, w.algorithm)
    bounds, ceiling = _bounds(args), _ceiling(args)
    print(f"validating {w.algorithm.value} n={w.n} b={w.b} workload {w.describe()} "
          f"max_loop_iters={bounds.max_loop_iters}")
    t0 = time.perf_counter()
    has_rules = w.algorithm is not AlgorithmId.LI_QUEUE
    rep = slcheck.validate_exhaustive(w, bounds, spec, ceiling, rules=has_rules)
    what = "rule check" if has_rules else "invariant check (no rules for li-queue)"
    print(f"{what}: {'OK' if rep.ok else 'FAILED'} over {rep.traces} traces "
          f"({rep.states} states, {time.perf_counter() - t0:.1f}s)")
    if rep.ok and not has_rules:
        ok, _, _, bad = slcheck.check_leaves_linearizable(w, bounds, spec, ceiling)
        if not ok:
            print("non-linearizable history found")
            _write(args.out or DEFAULT_OUT, dump_trace(bad))
            return Outcome("fail", rep.traces, rep.states)
    if not rep.ok:
        for v in rep.violations:
            print(f"  {v}")
        _write(args.out or DEFAULT_OUT, dump_trace(rep.counterexample))
        return Outcome("fail", rep.traces, rep.states)
    t0 = time.perf_counter()
    res = slcheck.find_sl_violation(w, spec, bounds, ceiling=ceiling)
    if res.inconclusive:
        print(f"SL search: {res.message}")
        return Outcome("inconclusive", rep.traces, rep.states + res.nodes)
    print(f"SL search: {'violation' if res.violation else 'NONE'} "
          f"({res.nodes} nodes, {time.perf_counter() - t0:.1f}s)")
    if res.violation:
        print(res.witness.describe())
        _write(args.out or DEFAULT_OUT, slcheck.dump_witness(res.witness))
        return Outcome("fail", rep.traces, rep.states + res.nodes)
    return Outcome("pass", rep.traces, rep.states + res.nodes)


def cmd_replay(args) -> Outcome:
    try:
        with open(args.file, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise UsageError(str(err)) from None
    if parse_trace_text(text).extra:
        return _replay_witness(text)
    trace = replay(text)
    alg = trace.workload.algorithm
    print(f"replayed {len(trace)} events of {alg.value} n={trace.workload.n}: identical")
    spec = _spec(args, alg)
    # no rules for LI_QUEUE, and a partial trace has nothing to place yet
    if alg is AlgorithmId.LI_QUEUE or any(o.pending for o in trace.ops):
        lin = specs.linearizable(trace.history(), spec)
        print("history", "linearizable" if lin is not None else "NOT linearizable")
        return Outcome("pass" if lin is not None else "fail", 1, len(trace))
    rep = slcheck.validate_trace(alg, trace, spec)
    print(f"validate_trace: {rep}")
    return Outcome("pass" if rep.ok else "fail", 1, len(trace))


def _replay_witness(text: str) -> Outcome:
    lw = slcheck.load_witness(text)
    print(f"replayed witness: alpha {len(lw.alpha)} events, branches of {len(lw.beta1) - len(lw.alpha)} "
          f"and {len(lw.beta2) - len(lw.alpha)} more; both identical")
    l1, l2 = lw.recheck()
    if not (l1 & l2):
        print(f"feasible prefixes under the {lw.spec_name} spec are disjoint "
              f"({len(l1)} vs {len(l2)}): violation confirmed")
        return Outcome("fail", 2, len(lw.beta1) + len(lw.beta2))
    # the branches alone do not conflict; re-run the search below alpha
    res = slcheck.find_sl_violation(lw.alpha.workload, lw.spec, prefix=lw.alpha.schedule)
    if res.inconclusive:
        return Outcome("inconclusive", 2, res.nodes)
    print("search below alpha:", "violation confirmed" if res.violation else "no violation")
    return Outcome("fail" if res.violation else "pass", res.traces, res.nodes)


def cmd_stress(args) -> Outcome:
    alg = AlgorithmId.parse(args.algorithm)
    if args.executors < 2:
        raise UsageError("--executors must be at least 2")
    per = -(-args.ops // args.executors)
    rep = stress(alg, executors=args.executors, ops_per_process=per, seed=args.seed, b=args.b,
                 iterations=args.iterations)
    print(f"stress {alg.value}: {len(rep.ops)} operations on {args.executors} threads in {rep.elapsed_s:.1f}s")
    print(f"duplicates {len(rep.duplicates)}, phantom values {len(rep.phantoms)}, "
          f"windows {rep.windows_checked} checked / {len(rep.window_failures)} failed")
    for msg in rep.window_failures[:5]:
        print(f"  {msg}")
    return Outcome("pass" if rep.ok else "fail", 1, len(rep.ops))


def cmd_counterexamples(args) -> Outcome:
    names = list(slcheck.counterexample_fixtures()) if args.which == "all" else [args.which]
    fixtures = [slcheck.fixture_by_name(n) for n in names]
    nodes = traces = 0
    confirmed = 0
    for i, f in enumerate(fixtures):
        alpha, t1, t2 = slcheck.fixture_traces(f)
        l1, l2 = slcheck.branch_prefix_sets(alpha, t1, t2, f.spec)
        print(f"{f.name} ({', '.join(f.aliases)}): {f.workload.algorithm.value} {f.workload.describe()}")
        print(f"  {f.description}")
        print(f"  scripted branches: feasible prefix sets {'disjoint' if not (l1 & l2) else 'overlap'}")
        res = slcheck.find_sl_violation(f.workload, f.spec, prefix=list(f.alpha), ceiling=_ceiling(args))
        if res.inconclusive:
            print(f"  search: {res.message}")
            return Outcome("inconclusive", traces, nodes + res.nodes)
        nodes += res.nodes
        traces += res.traces
        if res.violation and not (l1 & l2):
            confirmed += 1
            print("  " + res.witness.describe().replace("\n", "\n  "))
            out = args.out or DEFAULT_OUT
            if len(fixtures) > 1:
                root, ext = os.path.splitext(out)
                out = f"{root}.{f.name}{ext}"
            _write(out, slcheck.dump_witness(res.witness))
    # a reproduced counterexample is the expected (failing) verdict
    if confirmed == len(fixtures):
        return Outcome("fail", traces, nodes)
    print(f"only {confirmed} of {len(fixtures)} counterexamples reproduced")
    return Outcome("pass", traces, nodes)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="slbag", description="Explore and check bag algorithms built from shared objects.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model(sp, need_alg=True):
        sp.add_argument("--algorithm", required=need_alg, choices=[a.value for a in AlgorithmId])
        sp.add_argument("--n", type=int, default=2, help="number of processes (consumers for 1-producer bags)")
        sp.add_argument("--b", type=int, default=1, help="capacity of sl-bb")
        sp.add_argument("--workload", help='e.g. "p0:I1,I2;p1:T;p2:T"')
        sp.add_argument("--spec", choices=["bag", "bbag", "queue"])
        sp.add_argument("--max-loop-iters", type=int, default=3)
        sp.add_argument("--max-steps", type=int)
        sp.add_argument("--ceiling", type=int, help="node ceiling (0 = none; env SLBAG_NODE_CEILING)")
        sp.add_argument("--chooser", default="min", help="min | random | script:i,j,...")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help=f"witness/trace output file (default {DEFAULT_OUT})")

    model(sub.add_parser("explore", help="enumerate traces and check every history is linearizable"))
    model(sub.add_parser("validate", help="rule-based checks on every trace, then an SL violation search"))
    rp = sub.add_parser("replay", help="re-execute a trace or witness file and re-check it")
    rp.add_argument("file")
    rp.add_argument("--spec", choices=["bag", "bbag", "queue"])
    rp.add_argument("--b", type=int, default=1)
    st = sub.add_parser("stress", help="run on real threads and check the histories")
    st.add_argument("--algorithm", required=True, choices=[a.value for a in AlgorithmId])
    st.add_argument("--executors", type=int, default=4)
    st.add_argument("--ops", type=int, default=10_000, help="total operations")
    st.add_argument("--b", type=int, default=2)
    st.add_argument("--iterations", type=int, default=10)
    st.add_argument("--seed", type=int, default=0)
    ce = sub.add_parser("counterexamples", help="reproduce the scripted counterexamples")
    ce.add_argument("--which", default="all",
                    help="all, or one of " + ", ".join(
                        n for f in slcheck.counterexample_fixtures().values() for n in (f.name, *f.aliases)))
    ce.add_argument("--ceiling", type=int)
    ce.add_argument("--out")
    return p


COMMANDS = {
    "explore": cmd_explore,
    "validate": cmd_validate,
    "replay": cmd_replay,
    "stress": cmd_stress,
    "counterexamples": cmd_counterexamples,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        outcome = COMMANDS[args.command](args)
    except (_Usage, UsageError, DivergenceError, OSError) as err:
        print(f"error: {err}")
        print("VERDICT fail traces=0 nodes=0")
        return EXIT_USAGE
    except (ExplosionError, specs.Inconclusive) as err:
        print(str(err))
        print(f"VERDICT inconclusive traces=0 nodes={getattr(err, 'nodes', 0)}")
        return EXIT_INCONCLUSIVE
    sys.stdout.flush()
    print(f"VERDICT {outcome.verdict} traces={outcome.traces} nodes={outcome.nodes}")
    return outcome.code


if __name__ == "__main__":
    sys.exit(main())
