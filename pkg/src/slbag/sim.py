"""Virtual scheduler, exhaustive exploration, trace files, replay and a threaded stress backend.

A process begins its next request automatically the first time it is
scheduled while idle, so the invocation of an operation coincides with its
first shared step.
"""

from __future__ import annotations

import io
import itertools
import random
import sys
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator

from slbag import specs
from slbag.algorithms import (
    EMPTY,
    OK,
    AlgorithmId,
    Event,
    Instance,
    Request,
    StepOutcome,
    format_response,
    make_chooser,
    new_instance,
)
from slbag.primitives import BOTTOM, UsageError

# ---------------------------------------------------------------- workloads


@dataclass(frozen=True)
class Workload:
    algorithm: AlgorithmId
    n: int
    b: int = 1
    # (pid, requests) pairs in pid order
    programs: tuple[tuple[int, tuple[Request, ...]], ...] = ()
    chooser: str = "min"
    seed: int = 0

    def __post_init__(self):
        new_instance(self.algorithm, self.n, self.b)  # rejects bad n / b early
        values = [r.value for _, reqs in self.programs for r in reqs if r.kind == "I"]
        if len(values) != len(set(values)):
            raise UsageError("inserted values must be pairwise distinct")
        pids = range(self.n + 1) if self.algorithm.single_producer else range(self.n)
        for pid, reqs in self.programs:
            if pid not in pids:
                raise UsageError(f"process p{pid} does not exist for {self.algorithm.value} with n={self.n}")
            if self.algorithm.single_producer:
                for r in reqs:
                    if (r.kind == "I") != (pid == 0):
                        raise UsageError(f"p{pid} cannot issue {r}: only p0 inserts and only p1..p{self.n} take")

    def requests(self, pid: int) -> tuple[Request, ...]:
        for p, reqs in self.programs:
            if p == pid:
                return reqs
        return ()

    @property
    def pids(self) -> list[int]:
        return [p for p, _ in self.programs]

    def describe(self) -> str:
        return ";".join(f"p{pid}:" + ",".join(map(str, reqs)) for pid, reqs in self.programs if reqs)

    def new_instance(self) -> Instance:
        return new_instance(self.algorithm, self.n, self.b, make_chooser(self.chooser, self.seed))


def parse_workload(text: str, algorithm: AlgorithmId | str, n: int, b: int = 1,
                   chooser: str = "min", seed: int = 0) -> Workload:
    """``"p0:I1,I2;p1:T;p2:T"`` -> Workload."""
    if isinstance(algorithm, str):
        algorithm = AlgorithmId.parse(algorithm)
    programs: dict[int, tuple[Request, ...]] = {}
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        head, sep, body = chunk.partition(":")
        if not sep or head[:1] != "p" or not head[1:].isdigit():
            raise UsageError(f"bad process clause {chunk!r}")
        pid = int(head[1:])
        if pid in programs:
            raise UsageError(f"process p{pid} listed twice")
        programs[pid] = tuple(Request.parse(tok) for tok in body.split(",") if tok.strip())
    make_chooser(chooser, seed)  # validate early
    return Workload(algorithm, n, b, tuple(sorted(programs.items())), chooser, seed)


@dataclass(frozen=True)
class Bounds:
    max_steps: int | None = None
    max_loop_iters: int = 3

    def __post_init__(self):
        if self.max_loop_iters < 1 or (self.max_steps is not None and self.max_steps < 1):
            raise UsageError("bounds must be positive")


# ---------------------------------------------------------------- traces


@dataclass
class Trace:
    workload: Workload
    events: list[Event] = field(default_factory=list)
    ops: list[specs.Operation] = field(default_factory=list)
    truncated: bool = False

    def history(self) -> specs.History:
        return specs.History(list(self.ops))

    @property
    def schedule(self) -> list[int]:
        return [e.pid for e in self.events]

    def op(self, pid: int, op_seq: int) -> specs.Operation:
        for o in self.ops:
            if o.pid == pid and o.op_seq == op_seq:
                return o
        raise KeyError((pid, op_seq))

    def prefix(self, k: int) -> Trace:
        """The trace of the first ``k`` events."""
        ops = []
        for o in self.ops:
            if o.invoke >= k:
                continue
            if o.complete is not None and o.complete >= k:
                o = replace(o, response=None, complete=None)
            ops.append(o)
        return Trace(self.workload, self.events[:k], ops, False)

    def __len__(self) -> int:
        return len(self.events)


class Execution:
    """Mutable exploration state: the instance plus the history so far."""

    __slots__ = ("workload", "inst", "ops", "events", "record")

    def __init__(self, workload: Workload, record: bool = True):
        self.workload = workload
        self.inst = workload.new_instance()
        self.ops: dict[tuple[int, int], specs.Operation] = {}
        self.events: list[Event] | None = [] if record else None
        self.record = record

    @property
    def seq(self) -> int:
        return self.inst.seq

    def has_work(self, pid: int) -> bool:
        prog = self.inst.programs[pid]
        return prog.pending or prog.started < len(self.workload.requests(pid))

    def blocked(self, pid: int, bounds: Bounds | None) -> bool:
        if bounds is None:
            return False
        prog = self.inst.programs[pid]
        return prog.pending and prog.iters > bounds.max_loop_iters

    def enabled(self, bounds: Bounds | None = None) -> list[int]:
        if bounds is not None and bounds.max_steps is not None and self.seq >= bounds.max_steps:
            return []
        return [pid for pid in self.workload.pids if self.has_work(pid) and not self.blocked(pid, bounds)]

    def finished(self) -> bool:
        return not any(self.has_work(pid) for pid in self.workload.pids)

    def advance(self, pid: int) -> StepOutcome:
        inst = self.inst
        prog = inst.programs.get(pid)
        if prog is None or not self.has_work(pid):
            raise UsageError(f"schedule names p{pid}, which has no pending step")
        if not prog.pending:
            inst.begin_op(pid, self.workload.requests(pid)[prog.started])
            self.ops[(pid, prog.op_seq)] = specs.Operation(pid, prog.op_seq, prog.request, invoke=inst.seq)
        out = inst.step(pid)
        if out.done:
            key = (pid, out.event.op_seq)
            self.ops[key] = replace(self.ops[key], response=out.response, complete=out.event.seq)
        if self.record:
            self.events.append(out.event)
        return out

    def clone(self) -> Execution:
        twin = Execution.__new__(Execution)
        twin.workload = self.workload
        twin.inst = self.inst.clone()
        twin.ops = dict(self.ops)
        twin.events = list(self.events) if self.record else None
        twin.record = self.record
        return twin

    def history(self) -> specs.History:
        return specs.History(list(self.ops.values()))

    def history_key(self) -> tuple:
        return specs.History(list(self.ops.values())).key()

    def trace(self, truncated: bool = False) -> Trace:
        ops = sorted(self.ops.values(), key=lambda o: (o.invoke, o.pid))
        return Trace(self.workload, list(self.events or ()), ops, truncated)


def run(workload: Workload, schedule: Iterable[int]) -> Trace:
    """Execute ``schedule`` (a list of pids) and return the resulting trace."""
    ex = Execution(workload)
    for pid in schedule:
        ex.advance(pid)
    return ex.trace()


def run_solo_tail(ex: Execution, order: Iterable[int]) -> Execution:
    """Extend ``ex`` by running each listed process alone until it has no work left."""
    ex = ex.clone()
    for pid in order:
        guard = 0
        while ex.has_work(pid):
            ex.advance(pid)
            guard += 1
            if guard > 100_000:
                raise RuntimeError(f"p{pid} does not finish running alone")
    return ex


# ---------------------------------------------------------------- exploration


class ExplosionError(Exception):
    """Exploration exceeded its node ceiling."""

    def __init__(self, nodes: int, ceiling: int):
        super().__init__(f"exploration aborted after {nodes} nodes (ceiling {ceiling})")
        self.nodes = nodes
        self.ceiling = ceiling


@dataclass
class ExploreStats:
    traces: int = 0
    truncated: int = 0
    nodes: int = 0
    max_op_steps: int = 0


def iter_traces(workload: Workload, bounds: Bounds, ceiling: int | None = None,
                stats: ExploreStats | None = None, root: Execution | None = None) -> Iterator[Trace]:
    """Plain depth-first enumeration of every maximal interleaving.

    Each maximal trace is yielded once, in lexicographic order of the
    schedule.  A trace cut short by ``bounds`` has ``truncated`` set.
    """
    stats = stats if stats is not None else ExploreStats()
    start = root.clone() if root is not None else Execution(workload)
    stack = [start]
    while stack:
        ex = stack.pop()
        stats.nodes += 1
        if ceiling is not None and stats.nodes > ceiling:
            raise ExplosionError(stats.nodes, ceiling)
        enabled = ex.enabled(bounds)
        if not enabled:
            truncated = not ex.finished()
            stats.traces += 1
            stats.truncated += truncated
            yield ex.trace(truncated)
            continue
        for pid in reversed(enabled):
            child = ex.clone() if pid != enabled[0] else ex
            child.advance(pid)
            stats.max_op_steps = max(stats.max_op_steps, child.inst.programs[pid].steps)
            stack.append(child)


def explore(workload: Workload, bounds: Bounds, ceiling: int | None = None,
            visit: Callable[[Trace], None] | None = None) -> ExploreStats:
    stats = ExploreStats()
    for trace in iter_traces(workload, bounds, ceiling, stats):
        if visit is not None:
            visit(trace)
    return stats


def count_traces(workload: Workload, bounds: Bounds, root: Execution | None = None,
                 ceiling: int | None = None) -> ExploreStats:
    """Number of maximal interleavings, by dynamic programming over merged states.

    Agrees with :func:`explore` (tested) but visits each distinct
    configuration once.  ``nodes`` counts distinct configurations.
    """
    memo: dict = {}
    sys.setrecursionlimit(max(sys.getrecursionlimit(), 20_000))

    def go(ex: Execution) -> tuple[int, int]:
        key = (ex.inst.key(), ex.seq if bounds.max_steps is not None else None)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if ceiling is not None and len(memo) >= ceiling:
            raise ExplosionError(len(memo), ceiling)
        enabled = ex.enabled(bounds)
        if not enabled:
            res = (1, 0 if ex.finished() else 1)
        else:
            total = trunc = 0
            for pid in enabled:
                child = ex.clone()
                child.advance(pid)
                t, u = go(child)
                total += t
                trunc += u
            res = (total, trunc)
        memo[key] = res
        return res

    start = root.clone() if root is not None else Execution(workload, record=False)
    start.record = False
    start.events = None
    total, trunc = go(start)
    return ExploreStats(traces=total, truncated=trunc, nodes=len(memo))


def max_op_steps(workload: Workload, bounds: Bounds, ceiling: int | None = None) -> int:
    """Largest shared-step count of a single operation over all interleavings."""
    memo: dict = {}

    def go(ex: Execution) -> int:
        key = ex.inst.key(with_steps=True)
        if key in memo:
            return memo[key]
        if ceiling is not None and len(memo) >= ceiling:
            raise ExplosionError(len(memo), ceiling)
        best = 0
        for pid in ex.enabled(bounds):
            child = ex.clone()
            child.advance(pid)
            best = max(best, child.inst.programs[pid].steps, go(child))
        memo[key] = best
        return best

    return go(Execution(workload, record=False))


# ---------------------------------------------------------------- trace files


class DivergenceError(Exception):
    """Replay produced a different event or response than the file records."""

    def __init__(self, seq: int, expected: str, got: str):
        super().__init__(f"divergence at seq {seq}: file has {expected!r}, replay produced {got!r}")
        self.seq = seq


def fmt_value(v) -> str:
    if v is None:
        return "-"
    if v is BOTTOM:
        return "_"
    if v is True:
        return "true"
    if v is False:
        return "false"
    if isinstance(v, frozenset):
        return "{" + ",".join(map(str, sorted(v))) + "}"
    return str(v)


def event_line(e: Event) -> str:
    return f"{e.seq} {e.pid} {e.line} {e.obj} {e.action} {fmt_value(e.arg)} {fmt_value(e.response)}"


def op_line(o: specs.Operation) -> str:
    complete = "-" if o.complete is None else str(o.complete)
    return f"OP {o.pid} {o.op_seq} {o.request} {format_response(o.response)} {o.invoke} {complete}"


def header_line(w: Workload) -> str:
    return f"{w.algorithm.value} {w.n} {w.b} {w.chooser} {w.seed}"


def dump_trace(trace: Trace, out=None) -> str:
    buf = io.StringIO()
    buf.write(header_line(trace.workload) + "\n")
    for e in trace.events:
        buf.write(event_line(e) + "\n")
    for o in sorted(trace.ops, key=lambda o: (o.pid, o.op_seq)):
        buf.write(op_line(o) + "\n")
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


@dataclass
class ParsedTrace:
    header: tuple[str, ...]
    events: list[list[str]]
    ops: list[list[str]]
    extra: list[str]  # lines after the first section (witness appendix)


def parse_trace_text(text: str) -> ParsedTrace:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise UsageError("empty trace file")
    header = tuple(lines[0].split())
    if len(header) != 5:
        raise UsageError(f"bad header {lines[0]!r}: expected 'algorithm n b chooser seed'")
    events, ops = [], []
    i = 1
    while i < len(lines):
        toks = lines[i].split()
        if toks[0] == "WITNESS":
            break
        if toks[0] == "OP":
            if len(toks) != 7:
                raise UsageError(f"bad OP record {lines[i]!r}")
            ops.append(toks)
        else:
            if len(toks) != 7 or not toks[0].isdigit() or not toks[1].isdigit():
                raise UsageError(f"bad event record {lines[i]!r}")
            if ops:
                raise UsageError("event record after OP records")
            events.append(toks)
        i += 1
    return ParsedTrace(header, events, ops, lines[i:])


def workload_from_header(header, op_tokens) -> Workload:
    alg, n, b, chooser, seed = header
    try:
        n_i, b_i, seed_i = int(n), int(b), int(seed)
    except ValueError:
        raise UsageError(f"bad header numbers {' '.join(header)!r}") from None
    by_pid: dict[int, dict[int, Request]] = {}
    for toks in op_tokens:
        try:
            pid, op_seq = int(toks[1]), int(toks[2])
        except ValueError:
            raise UsageError(f"bad OP record {' '.join(toks)!r}") from None
        by_pid.setdefault(pid, {})[op_seq] = Request.parse(toks[3])
    programs = []
    for pid in sorted(by_pid):
        seqs = by_pid[pid]
        if sorted(seqs) != list(range(len(seqs))):
            raise UsageError(f"OP records of p{pid} are not numbered 0..k")
        programs.append((pid, tuple(seqs[i] for i in range(len(seqs)))))
    make_chooser(chooser, seed_i)
    return Workload(AlgorithmId.parse(alg), n_i, b_i, tuple(programs), chooser, seed_i)


def replay_tokens(workload: Workload, events: list[list[str]], ops: list[list[str]]) -> Trace:
    ex = Execution(workload)
    for toks in events:
        seq = int(toks[0])
        if seq != ex.seq:
            raise DivergenceError(ex.seq, " ".join(toks), f"seq {ex.seq}")
        try:
            out = ex.advance(int(toks[1]))
        except UsageError as err:
            raise DivergenceError(seq, " ".join(toks), str(err)) from None
        got = event_line(out.event)
        if got.split() != toks:
            raise DivergenceError(seq, " ".join(toks), got)
    trace = ex.trace()
    produced = {(o.pid, o.op_seq): op_line(o) for o in trace.ops}
    for toks in ops:
        key = (int(toks[1]), int(toks[2]))
        got = produced.get(key)
        if got is None or got.split() != toks:
            where = int(toks[5]) if toks[5].isdigit() else ex.seq
            if toks[6].isdigit():
                where = int(toks[6])
            raise DivergenceError(where, " ".join(toks), got or "operation never invoked")
    if len(produced) != len(ops):
        raise DivergenceError(ex.seq, f"{len(ops)} OP records", f"{len(produced)} operations")
    return trace


def replay(source) -> Trace:
    """Re-execute a trace file (path, file object or text) and verify every token."""
    text = _read_source(source)
    parsed = parse_trace_text(text)
    workload = workload_from_header(parsed.header, parsed.ops)
    return replay_tokens(workload, parsed.events, parsed.ops)


def _read_source(source) -> str:
    if hasattr(source, "read"):
        return source.read()
    if isinstance(source, str) and "\n" in source:
        return source
    with open(source, encoding="utf-8") as fh:
        return fh.read()


# ---------------------------------------------------------------- stress


@dataclass
class StressOp:
    pid: int
    request: Request
    response: object
    start_ns: int
    end_ns: int
    round: int
    iteration: int = 0


@dataclass
class StressReport:
    algorithm: AlgorithmId
    ops: list[StressOp]
    windows_checked: int = 0
    window_failures: list[str] = field(default_factory=list)
    duplicates: list[int] = field(default_factory=list)
    phantoms: list[int] = field(default_factory=list)
    elapsed_s: float = 0.0

    @property
    def ok(self) -> bool:
        return not (self.window_failures or self.duplicates or self.phantoms)


def generate_workload(algorithm: AlgorithmId, executors: int, ops_per_process: int, seed: int,
                      b: int = 1, first_value: int = 1) -> Workload:
    """Seeded random requests; single-producer algorithms get p0 inserting, the rest taking."""
    rng = random.Random(seed)
    programs = []
    counter = itertools.count(first_value)
    if algorithm.single_producer:
        n = executors - 1
        programs.append((0, tuple(Request("I", next(counter)) for _ in range(ops_per_process))))
        for pid in range(1, executors):
            programs.append((pid, tuple(Request("T") for _ in range(ops_per_process))))
    else:
        n = executors
        for pid in range(executors):
            programs.append((pid, tuple(Request("I", next(counter)) if rng.random() < 0.5 else Request("T")
                                        for _ in range(ops_per_process))))
    b = b if algorithm is AlgorithmId.SL_BB else 1
    return Workload(algorithm, n, b, tuple(programs), "random" if algorithm.single_producer else "min", seed)


def _spec_for(algorithm: AlgorithmId, b: int):
    if algorithm in (AlgorithmId.WF_1B, AlgorithmId.SL_1B):
        return specs.BagSpec(1)
    if algorithm is AlgorithmId.SL_BB:
        return specs.BagSpec(b)
    return specs.BagSpec(None)


def stress(algorithm: AlgorithmId | str, executors: int = 4, ops_per_process: int = 2500, seed: int = 0,
           b: int = 2, window_ops: int = 2, iterations: int = 1, switch_interval: float = 1e-5) -> StressReport:
    """Run the algorithm on real threads over lock-per-object memory.

    Threads proceed in rounds of ``window_ops`` operations each, separated by
    barriers, so the bag contents at the start of every round are known and
    each round's history (``executors * window_ops`` operations) is checked
    for linearizability on its own.  ``iterations`` splits the work across
    fresh instances (keeping the unbounded arrays short).
    """
    if isinstance(algorithm, str):
        algorithm = AlgorithmId.parse(algorithm)
    spec = _spec_for(algorithm, b)
    report = StressReport(algorithm, [])
    t0 = time.perf_counter()
    old_interval = sys.getswitchinterval()
    sys.setswitchinterval(switch_interval)
    try:
        per_iter = max(1, ops_per_process // iterations)
        for it in range(iterations):
            # fresh values per iteration so duplicates are detectable across all of them
            workload = generate_workload(algorithm, executors, per_iter, seed * 1_000_003 + it, b,
                                         first_value=1 + it * executors * per_iter)
            report.ops.extend(_stress_once(workload, window_ops, seed + it, it))
    finally:
        sys.setswitchinterval(old_interval)
    _check_stress(report, spec, executors, window_ops)
    report.elapsed_s = time.perf_counter() - t0
    return report


def _stress_once(workload: Workload, window_ops: int, seed: int, iteration: int) -> list[StressOp]:
    inst = new_instance(workload.algorithm, workload.n, workload.b,
                        make_chooser(workload.chooser, workload.seed), native=True)
    pids = workload.pids
    rounds = max(len(workload.requests(p)) for p in pids)
    rounds = -(-rounds // window_ops)
    barrier = threading.Barrier(len(pids))
    logs: dict[int, list[StressOp]] = {p: [] for p in pids}
    errors: list[BaseException] = []

    def worker(pid: int):
        rng = random.Random(f"{seed}:{pid}")
        reqs = workload.requests(pid)
        try:
            for r in range(rounds):
                for req in reqs[r * window_ops:(r + 1) * window_ops]:
                    start = time.perf_counter_ns()
                    inst.begin_op(pid, req)
                    while True:
                        if rng.random() < 0.3:
                            time.sleep(0)
                        out = inst.step(pid)
                        if out.done:
                            break
                    end = time.perf_counter_ns()
                    logs[pid].append(StressOp(pid, req, out.response, start, end, r, iteration))
                barrier.wait()
        except BaseException as err:  # surfaced after join
            errors.append(err)
            barrier.abort()

    threads = [threading.Thread(target=worker, args=(p,), daemon=True) for p in pids]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return [op for p in pids for op in logs[p]]


def _check_stress(report: StressReport, spec, executors: int, window_ops: int) -> None:
    inserted = {op.request.value for op in report.ops if op.request.kind == "I" and op.response == OK}
    taken: dict[int, int] = {}
    for op in report.ops:
        if op.request.kind == "T" and op.response not in (EMPTY, None):
            taken[op.response] = taken.get(op.response, 0) + 1
    report.duplicates = sorted(v for v, c in taken.items() if c > 1)
    report.phantoms = sorted(v for v in taken if v not in inserted)

    by_window: dict[tuple[int, int], list[StressOp]] = {}
    for op in report.ops:
        by_window.setdefault((op.iteration, op.round), []).append(op)
    contents: list[int] = []
    iteration = 0
    for (it, r), window in sorted(by_window.items()):
        if it != iteration:
            iteration, contents = it, []
        hist = specs.History([
            specs.Operation(op.pid, i, op.request, op.response, op.start_ns, op.end_ns)
            for i, op in enumerate(window)
        ])
        report.windows_checked += 1
        try:
            lin = specs.linearizable(hist, spec, initial=contents, ceiling=200_000)
        except specs.Inconclusive:
            lin = None
        if lin is None:
            report.window_failures.append(
                f"round {r}: " + ", ".join(f"p{o.pid}:{o.request}->{o.response}" for o in window))
        # values are distinct, so log order within the round does not matter
        gone = {op.response for op in window if op.request.kind == "T"}
        contents = [v for v in contents if v not in gone]
        contents += [op.request.value for op in window
                     if op.request.kind == "I" and op.response == OK and op.request.value not in gone]
