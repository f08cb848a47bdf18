"""Strong-linearizability tooling.

* Rule scanners turn a trace into an ordered list of placements
  ``(operation, response, point)`` following each algorithm's
  linearization-point rules.  They are causal: feeding events one at a time
  yields exactly the assignment of every prefix.
* :func:`validate_trace` checks one trace; :func:`validate_exhaustive` checks
  every trace of a workload tree, merging identical configurations.
* :func:`find_sl_violation` is rule-agnostic.  It computes, bottom-up over the
  exploration tree, the set of linearizations of each node's history that
  extend to a linearization in every child, and reports the shallowest node
  where that set becomes empty.
"""

from __future__ import annotations

import itertools
import sys
from collections import deque
from dataclasses import dataclass, field
from typing import Any, NamedTuple

from slbag import specs
from slbag.algorithms import EMPTY, FULL, OK, AlgorithmId, Event, Request
from slbag.primitives import BOTTOM, UsageError
from slbag.sim import (
    Bounds,
    Execution,
    ExplosionError,
    Trace,
    Workload,
    count_traces,
    dump_trace,
    event_line,
    op_line,
    parse_trace_text,
    parse_workload,
    replay_tokens,
    run,
    run_solo_tail,
    workload_from_header,
)


class Placement(NamedTuple):
    op: tuple[int, int]
    request: Request
    response: Any
    point: int


@dataclass
class Violation:
    kind: str  # containment | legality | coverage | response | prefix | lemma | progress | linearizability
    seq: int | None
    op: tuple[int, int] | None
    message: str

    def __str__(self) -> str:
        where = f"seq {self.seq}" if self.seq is not None else "end of trace"
        who = f" op p{self.op[0]}.{self.op[1]}" if self.op else ""
        return f"[{self.kind}] {where}{who}: {self.message}"


class RuleCoverageError(Exception):
    """A completed operation received no linearization point."""


def default_spec(algorithm: AlgorithmId, b: int = 1):
    if algorithm in (AlgorithmId.WF_1B, AlgorithmId.SL_1B):
        return specs.BagSpec(1)
    if algorithm is AlgorithmId.SL_BB:
        return specs.BagSpec(b)
    return specs.BagSpec(None)


# ---------------------------------------------------------------- scanners


class Scanner:
    """Incremental linearization-point assignment for one algorithm.

    ``feed`` consumes one event (with its operation's request and, if the
    step completed the operation, its response) and appends the placements
    whose points are that event.  Violations found on the way are collected in
    ``errors``.  ``key`` captures everything that influences future checks and
    deliberately omits sequence numbers so that equal configurations merge.
    """

    incremental = True  # placements are final once made (no retroactive insertion)

    def __init__(self, spec, initial=()):
        self.spec = spec
        self.state = spec.normalize(initial)
        self.placements: list[Placement] = []
        self.placed: dict[tuple[int, int], Any] = {}
        self.active: dict[tuple[int, int], Request] = {}
        self.errors: list[Violation] = []
        self.rule: dict = {}

    def clone(self) -> Scanner:
        twin = object.__new__(type(self))
        twin.__dict__.update(self.__dict__)
        twin.placements = list(self.placements)
        twin.placed = dict(self.placed)
        twin.active = dict(self.active)
        twin.errors = []
        twin.rule = dict(self.rule)
        return twin

    def key(self) -> tuple:
        return (self.state, tuple(sorted(self.placed.items(), key=repr)), tuple(sorted(self.active)),
                tuple(sorted(self.rule.items(), key=repr)))

    # -- helpers

    def _err(self, kind, ev, op, msg):
        self.errors.append(Violation(kind, ev.seq if ev is not None else None, op, msg))

    def place(self, ev: Event, op, request: Request, response):
        if op in self.placed:
            self._err("coverage", ev, op, "operation linearized twice")
            return
        if op not in self.active:
            self._err("containment", ev, op, "point lies outside the operation interval")
        if self.incremental:
            nxt = specs.spec_step(self.spec, self.state, request, response)
            if nxt is None:
                self._err("legality", ev, op,
                          f"{request}->{response} is illegal when the linearized contents are {list(self.state)}")
            else:
                self.state = nxt
        self.placed[op] = response
        self.placements.append(Placement(op, request, response, ev.seq))

    def feed(self, ev: Event, request: Request, done: bool, response=None) -> list[Violation]:
        op = (ev.pid, ev.op_seq)
        self.active.setdefault(op, request)
        self.on_event(ev, op, request)
        if done:
            self.on_complete(ev, op, request, response)
            if self.incremental:
                if op not in self.placed:
                    self._err("coverage", ev, op, f"completed {request}->{response} was never linearized")
                elif self.placed[op] != response:
                    self._err("response", ev, op,
                              f"linearized with response {self.placed[op]} but returned {response}")
            del self.active[op]
            self.placed.pop(op, None)  # completed ops no longer influence future checks
        return self.errors

    def on_event(self, ev, op, request):
        raise NotImplementedError

    def _op_of(self, pid):
        """The active operation of ``pid``, or None."""
        return next((o for o in self.active if o[0] == pid), None)

    def on_complete(self, ev, op, request, response):
        pass

    def finish(self) -> list[Violation]:
        return self.errors


class UnboundedSLRules(Scanner):
    """Take at its successful t&s or its EMPTY-confirming reread of Done;
    Insert at its Done.f&i unless a t&s on its cell coupled it earlier."""

    def on_event(self, ev, op, request):
        r = self.rule
        pid, line = ev.pid, ev.line
        if line == "insert:write-item":
            r[("written", pid)] = ev.obj.index
        elif line == "insert:inc-done":
            r.pop(("written", pid), None)
            if op not in self.placed:
                self.place(ev, op, request, OK)
        elif line == "take:read-done":
            r[("d", pid)] = ev.response
        elif line == "take:read-item":
            if ev.response is not BOTTOM:
                r[("x", pid)] = ev.response
        elif line == "take:t&s":
            x = r.pop(("x", pid))
            if ev.response == 0:
                cell = ev.obj.index
                for q in sorted(p for (tag, p) in r if tag == "written"):
                    if r[("written", q)] == cell:
                        ins = self._op_of(q)
                        if ins is not None and ins not in self.placed:
                            self.place(ev, ins, self.active[ins], OK)
                self.place(ev, op, request, x)
        elif line == "take:reread-done":
            d = r.pop(("d", pid))
            if ev.response == d:
                self.place(ev, op, request, EMPTY)


class OneBoundedSLRules(Scanner):
    """1-bounded SL rules: FULL at the check read, EMPTY at the false reread,
    Insert at Done.dWrite unless coupled by the first t&s on its cell."""

    def on_event(self, ev, op, request):
        r = self.rule
        line = ev.line
        if line == "insert:check-ts":
            if ev.response == 0:
                self.place(ev, op, request, FULL)
        elif line == "insert:write-item":
            r[("written", 0)] = ev.obj.index
        elif line == "insert:write-done":
            r.pop(("written", 0), None)
            if op not in self.placed:
                self.place(ev, op, request, OK)
        elif line == "take:read-item":
            if ev.response is not BOTTOM:
                r[("x", ev.pid)] = ev.response
        elif line == "take:t&s":
            x = r.pop(("x", ev.pid))
            if ev.response == 0:
                if r.get(("written", 0)) == ev.obj.index:
                    ins = next((o for o in self.active if o[0] == 0), None)
                    if ins is not None and ins not in self.placed:
                        self.place(ev, ins, self.active[ins], OK)
                self.place(ev, op, request, x)
        elif line == "take:reread-done":
            if ev.response is False:
                self.place(ev, op, request, EMPTY)


class WaitFree1BoundedRules(Scanner):
    """Linearizable (not strongly) rules with a retroactive EMPTY placement.

    An EMPTY Take whose Allocated read saw a live cell (item present, TS 0)
    is placed immediately after the first Take that later won TS on that cell;
    it can only be placed once the Take has returned, so earlier prefixes get a
    different assignment.
    """

    incremental = False

    def __init__(self, spec, initial=()):
        super().__init__(spec, initial)
        self.order: tuple = ()  # op ids in linearization order
        self.initial = self.state
        self.seqs: dict = {}  # reporting only; not part of the key

    def clone(self):
        twin = super().clone()
        twin.seqs = dict(self.seqs)
        return twin

    def key(self):
        return (self.order, tuple(sorted(self.placed.items(), key=repr)), tuple(sorted(self.active.items())),
                tuple(sorted(self.rule.items(), key=repr)))

    def _append(self, ev, op, request, response, after=None):
        if op in self.placed:
            self._err("coverage", ev, op, "operation linearized twice")
            return
        self.placed[op] = (request, response)
        if after is None:
            self.order = self.order + (op,)
            self.placements.append(Placement(op, request, response, ev.seq))
            return
        anchor_op, point = after
        pos = 0 if anchor_op is None else self.order.index(anchor_op) + 1
        # keep earlier retroactive EMPTYs at the same anchor first
        while pos < len(self.order) and self.placed[self.order[pos]][1] == EMPTY \
                and self.rule.get(("retro", self.order[pos])) == anchor_op:
            pos += 1
        self.rule[("retro", op)] = anchor_op
        self.order = self.order[:pos] + (op,) + self.order[pos:]
        self.placements.insert(pos, Placement(op, request, response, point))

    def on_event(self, ev, op, request):
        r = self.rule
        pid, line = ev.pid, ev.line
        if line == "insert:check-ts":
            if ev.response == 0:
                self._append(ev, op, request, FULL)
        elif line == "insert:write-item":
            self._append(ev, op, request, OK)
        elif line == "take:read-alloc":
            item, bit = ev.ctx
            live = item is not BOTTOM and bit == 0
            last = self.order[-1] if self.order else None
            r[("read", pid)] = (ev.response, live, last)
            self.seqs[("read", pid)] = ev.seq
        elif line == "take:read-item":
            if ev.response is not BOTTOM:
                r[("x", pid)] = ev.response
        elif line == "take:t&s":
            x = r.pop(("x", pid))
            if ev.response == 0:
                self._append(ev, op, request, x)
                cell = ev.obj.index
                for (tag, q), val in list(r.items()):
                    if tag == "read" and q != pid and val[0] == cell and val[1] and ("won", q) not in r:
                        r[("won", q)] = op
                        self.seqs[("won", q)] = ev.seq

    def on_complete(self, ev, op, request, response):
        r = self.rule
        pid = ev.pid
        if request.kind == "T":
            cell, live, last = r.pop(("read", pid))
            won = r.pop(("won", pid), None)
            read_seq = self.seqs.pop(("read", pid))
            won_seq = self.seqs.pop(("won", pid), None)
            if response == EMPTY:
                if not live:
                    self._append(ev, op, request, EMPTY, after=(last, read_seq))
                elif won is None:
                    self._err("coverage", ev, op, "EMPTY Take read a live cell but no other Take won it")
                else:
                    self._append(ev, op, request, EMPTY, after=(won, won_seq))
        if op not in self.placed:
            self._err("coverage", ev, op, f"completed {request}->{response} was never linearized")
        elif self.placed[op][1] != response:
            self._err("response", ev, op, f"linearized with {self.placed[op][1]} but returned {response}")

    def feed(self, ev, request, done, response=None):
        op = (ev.pid, ev.op_seq)
        self.active.setdefault(op, request)
        self.on_event(ev, op, request)
        if done:
            self.on_complete(ev, op, request, response)
            del self.active[op]
        return self.errors

    def finish(self):
        seq = [self.placed[o] for o in self.order]
        if not specs.is_legal(self.spec, seq, self.initial):
            self.errors.append(Violation("legality", None, None,
                                         "assigned order is illegal: " + ", ".join(f"{q}->{s}" for q, s in seq)))
        return self.errors


class BBoundedSLRules(Scanner):
    """Rules for the b-bounded bag: pending successful Takes wait for a TakeDone
    write, a producer read of 1 from their TS cell, or an uncoupled InsertDone
    write for another cell; EMPTY Takes wait at their TakeDone write unless an
    uncoupled InsertDone write comes first."""

    def on_event(self, ev, op, request):
        r = self.rule
        pid, line = ev.pid, ev.line
        if line == "insert:reread-takedone":
            if ev.response is False:
                self.place(ev, op, request, FULL)
        elif line == "insert:check-ts":
            if ev.response == 1:
                self._flush_takes(ev, lambda cell: cell == ev.obj.index)
        elif line == "insert:write-item":
            r[("poised", 0)] = ev.obj.index  # cell the producer wrote; poised for InsertDone
            r[("tas", 0)] = 0
        elif line == "insert:write-insertdone":
            cell = r.pop(("poised", 0))
            r.pop(("tas", 0))
            r.pop(("coupler", 0), None)
            if op not in self.placed:
                self._flush_takes(ev, lambda c: c != cell)
                for q in sorted(p for (tag, p) in list(r) if tag == "poised_empty"):
                    tk = self._op_of(q)
                    if tk is not None and tk not in self.placed:
                        self.place(ev, tk, self.active[tk], EMPTY)
                self.place(ev, op, request, OK)
        elif line == "take:read-item":
            if ev.response is not BOTTOM:
                r[("x", pid)] = ev.response
        elif line == "take:t&s":
            x = r.pop(("x", pid))
            if ev.response == 0:
                r[("won", pid)] = (ev.obj.index, x)
                if r.get(("poised", 0)) == ev.obj.index:
                    r[("tas", 0)] += 1
                    if r[("tas", 0)] > 1:
                        self._err("lemma", ev, op, f"second successful t&s on TS[{ev.obj.index}] "
                                  "between the producer's Items write and InsertDone write")
                    r.setdefault(("coupler", 0), pid)
        elif line == "take:reread-insertdone":
            if ev.response is False:
                r[("poised_empty", pid)] = True
        elif line in ("take:write-takedone-ok", "take:write-takedone-empty"):
            coupler = r.get(("coupler", 0))
            if coupler is not None and ("won", coupler) in r:
                ins = next((o for o in self.active if o[0] == 0), None)
                if ins is not None and ins not in self.placed:
                    r[("couple", coupler)] = ins
            r.pop(("coupler", 0), None)
            self._flush_takes(ev, lambda cell: True)
            if line == "take:write-takedone-empty":
                r.pop(("poised_empty", pid))
                if op not in self.placed:
                    self.place(ev, op, request, EMPTY)

    def _flush_takes(self, ev, cell_ok):
        r = self.rule
        ready = sorted((val[0], q) for (tag, q), val in r.items() if tag == "won" and cell_ok(val[0]))
        cells = [c for c, _ in ready]
        if len(cells) != len(set(cells)):
            self._err("lemma", ev, None, f"two successful Takes on one cell share point {ev.seq}")
        for cell, q in ready:
            _, x = r.pop(("won", q))
            tk = self._op_of(q)
            ins = r.pop(("couple", q), None)
            if ins is not None:
                self.place(ev, ins, self.active[ins], OK)
            if tk is not None:
                self.place(ev, tk, self.active[tk], x)



class NoRules(Scanner):
    """LI_QUEUE has no strong-linearization rules; nothing is placed."""

    def on_event(self, ev, op, request):
        pass


class _Unchecked(NoRules):
    # for runs that only want lemmas and progress: no placements, no complaints
    incremental = False


RULES = {
    AlgorithmId.LI_QUEUE: NoRules,
    AlgorithmId.UNBOUNDED_SL: UnboundedSLRules,
    AlgorithmId.WF_1B: WaitFree1BoundedRules,
    AlgorithmId.SL_1B: OneBoundedSLRules,
    AlgorithmId.SL_BB: BBoundedSLRules,
}


def make_scanner(algorithm: AlgorithmId, spec) -> Scanner:
    return RULES[algorithm](spec)


def _feed_trace(scanner: Scanner, trace: Trace, upto: int | None = None) -> Scanner:
    events = trace.events if upto is None else trace.events[:upto]
    for ev in events:
        o = trace.op(ev.pid, ev.op_seq)
        done = o.complete == ev.seq
        scanner.feed(ev, o.request, done, o.response if done else None)
    return scanner


def assign_lin_points(algorithm: AlgorithmId, trace: Trace, spec=None) -> list[Placement]:
    """Ordered placements for ``trace``; raises RuleCoverageError if a completed op is left out."""
    spec = spec or default_spec(algorithm, trace.workload.b)
    scanner = _feed_trace(make_scanner(algorithm, spec), trace)
    missing = [v for v in scanner.errors if v.kind == "coverage"]
    if missing:
        raise RuleCoverageError(str(missing[0]))
    return list(scanner.placements)


# ---------------------------------------------------------------- progress / lemma checks


class ProgressTracker:
    """Loop-progress evidence: a repeat-loop restart must follow a completing write."""

    def __init__(self, algorithm: AlgorithmId):
        self.algorithm = algorithm
        self.flags: dict = {}
        self.d: dict = {}

    def clone(self):
        twin = ProgressTracker.__new__(ProgressTracker)
        twin.algorithm = self.algorithm
        twin.flags = dict(self.flags)
        twin.d = dict(self.d)
        return twin

    def key(self):
        return tuple(sorted(self.flags.items()))

    def feed(self, ev: Event) -> list[Violation]:
        alg, line, pid, flags = self.algorithm, ev.line, ev.pid, self.flags
        errs: list[Violation] = []

        def bracket(restart: bool, what: str):
            if restart and not flags.get(pid, False):
                errs.append(Violation("progress", ev.seq, (pid, ev.op_seq),
                                      f"loop restarted although no {what} completed since the last bracketing read"))
            flags[pid] = False

        if alg is AlgorithmId.UNBOUNDED_SL:
            if line == "insert:inc-done":
                self._seen(lambda p: p != pid)
            elif line == "take:read-done":
                flags[pid] = False
                self.d[pid] = ev.response
            elif line == "take:reread-done":
                bracket(ev.response != self.d.pop(pid), "Insert")
        elif alg is AlgorithmId.SL_1B:
            if line == "insert:write-done":
                self._seen(lambda p: p != 0)
            elif line == "take:read-done":
                flags[pid] = False
            elif line == "take:reread-done":
                bracket(ev.response is True, "Insert")
        elif alg is AlgorithmId.SL_BB:
            if line == "insert:write-insertdone":
                self._seen(lambda p: p != 0)
            elif line in ("take:write-takedone-ok", "take:write-takedone-empty"):
                self._seen(lambda p: p == 0)
            elif line in ("take:read-insertdone", "insert:read-takedone"):
                flags[pid] = False
            elif line in ("take:reread-insertdone", "insert:reread-takedone"):
                bracket(ev.response is True, "Insert" if pid else "Take")
        return errs

    def _seen(self, which):
        for p in list(self.flags):
            if which(p):
                self.flags[p] = True


# ---------------------------------------------------------------- single-trace validation


@dataclass
class TraceReport:
    ok: bool
    placements: list[Placement]
    violations: list[Violation]

    def __str__(self) -> str:
        if self.ok:
            return "OK"
        return "\n".join(map(str, self.violations))


def validate_trace(algorithm: AlgorithmId, trace: Trace, spec=None, check_prefixes: bool | None = None,
                   check_lemmas: bool = True) -> TraceReport:
    """Containment, legality and prefix-monotonicity of the rule assignment.

    Prefix-monotonicity is checked by recomputing the assignment of every
    event-prefix and comparing it with the full assignment.  It is skipped by
    default for WF_1B, whose rules are linearizable but not prefix-closed.
    """
    spec = spec or default_spec(algorithm, trace.workload.b)
    if check_prefixes is None:
        check_prefixes = algorithm is not AlgorithmId.WF_1B
    scanner = _feed_trace(make_scanner(algorithm, spec), trace)
    violations = list(scanner.finish())
    full = scanner.placements
    # interval containment against real sequence numbers
    for p in full:
        o = trace.op(*p.op)
        if p.point < o.invoke or (o.complete is not None and p.point > o.complete):
            violations.append(Violation("containment", p.point, p.op,
                                        f"point {p.point} outside [{o.invoke}, {o.complete}]"))
    if check_prefixes:
        for k in range(len(trace.events)):
            part = _feed_trace(make_scanner(algorithm, spec), trace, k).placements
            if full[:len(part)] != part:
                violations.append(Violation("prefix", k, None,
                                            "assignment of the prefix is not a prefix of the full assignment"))
                break
    if check_lemmas:
        violations.extend(_replay_lemmas(trace))
    return TraceReport(not violations, list(full), violations)


def _replay_lemmas(trace: Trace) -> list[Violation]:
    from slbag.algorithms import check_invariants

    ex = Execution(trace.workload, record=False)
    prog = ProgressTracker(trace.workload.algorithm)
    out = []
    for ev in trace.events:
        step = ex.advance(ev.pid)
        out.extend(Violation("lemma", ev.seq, (ev.pid, ev.op_seq), m)
                   for m in check_invariants(ex.inst, step.event))
        out.extend(prog.feed(step.event))
    return out


# ---------------------------------------------------------------- exhaustive validation


@dataclass
class ExhaustiveReport:
    ok: bool
    traces: int
    truncated: int
    states: int
    violations: list[Violation] = field(default_factory=list)
    counterexample: Trace | None = None
    leaf_checks: int = 0

class _Node:
    __slots__ = ("ex", "scanner", "progress")

    def __init__(self, ex, scanner, progress):
        self.ex, self.scanner, self.progress = ex, scanner, progress

    def clone(self):
        return _Node(self.ex.clone(), self.scanner.clone(), self.progress.clone())

    def key(self):
        return (self.ex.inst.key(), self.scanner.key(), self.progress.key())


def validate_exhaustive(workload: Workload, bounds: Bounds, spec=None, ceiling: int | None = None,
                        lemmas: bool = True, rules: bool = True) -> ExhaustiveReport:
    """Run every check of :func:`validate_trace` on every trace of the tree.

    Each event is checked when it is appended, so the per-prefix assignment
    of every trace is the scanner's output after that prefix; the scanner
    never revises a placement (except WF_1B, which is only checked at leaves).
    Configurations with equal (instance, scanner, progress) state have equal
    futures and are checked once.
    """
    from slbag.algorithms import check_invariants

    alg = workload.algorithm
    spec = spec or default_spec(alg, workload.b)
    start = Execution(workload, record=False)
    node0 = _Node(start, make_scanner(alg, spec) if rules else _Unchecked(spec), ProgressTracker(alg))
    seen: set = set()
    path: list[int] = []
    found: list[Violation] = []
    sys.setrecursionlimit(max(sys.getrecursionlimit(), 20_000))

    def go(node: _Node) -> bool:
        key = node.key()
        if key in seen:
            return False
        if ceiling is not None and len(seen) >= ceiling:
            raise ExplosionError(len(seen), ceiling)
        seen.add(key)
        enabled = node.ex.enabled(bounds)
        if not enabled:
            errs = node.scanner.finish() if not node.scanner.incremental else []
            if errs and not node.ex.finished():
                errs = [e for e in errs if e.kind != "legality"]
            if errs:
                found.extend(errs)
                return True
            return False
        for pid in enabled:
            child = node.clone()
            step = child.ex.advance(pid)
            path.append(pid)
            ev = step.event
            errs = []
            if lemmas:
                errs.extend(Violation("lemma", ev.seq, (pid, ev.op_seq), m)
                            for m in check_invariants(child.ex.inst, ev))
                errs.extend(child.progress.feed(ev))
            request = child.ex.ops[(pid, ev.op_seq)].request
            errs.extend(child.scanner.feed(ev, request, step.done, step.response))
            if errs:
                found.extend(errs)
                return True
            if go(child):
                return True
            path.pop()
        return False

    failed = go(node0)
    counts = count_traces(workload, bounds)
    report = ExhaustiveReport(not failed, counts.traces, counts.truncated, len(seen), found)
    if failed:
        report.counterexample = run(workload, path)
    return report


def check_leaves_linearizable(workload: Workload, bounds: Bounds, spec, ceiling: int | None = None):
    """Every complete (non-truncated) trace's history is linearizable under ``spec``.

    Returns (ok, distinct_histories_checked, states, failing_trace_or_None).
    """
    seen: set = set()
    checked: dict = {}
    path: list[int] = []

    def go(ex: Execution) -> bool:
        key = (ex.inst.key(), ex.history_key())
        if key in seen:
            return False
        if ceiling is not None and len(seen) >= ceiling:
            raise ExplosionError(len(seen), ceiling)
        seen.add(key)
        enabled = ex.enabled(bounds)
        if not enabled:
            if not ex.finished():
                return False
            hk = ex.history_key()
            if hk not in checked:
                checked[hk] = specs.linearizable(ex.history(), spec) is not None
            return not checked[hk]
        for pid in enabled:
            child = ex.clone()
            child.advance(pid)
            path.append(pid)
            if go(child):
                return True
            path.pop()
        return False

    ex = Execution(workload, record=False)
    bad = go(ex)
    return (not bad, len(checked), len(seen), run(workload, path) if bad else None)


# ---------------------------------------------------------------- SL violation search


TOP = None  # unconstrained feasible set (truncated leaf)


@dataclass
class SlWitness:
    alpha: Trace
    beta1: Trace  # full trace alpha.beta1
    beta2: Trace
    spec_name: str
    evidence: str
    l1: frozenset = frozenset()
    l2: frozenset = frozenset()

    def describe(self) -> str:
        lines = [f"prefix alpha: {len(self.alpha)} events"]
        for e in self.alpha.events:
            lines.append("  " + event_line(e))
        for name, t in (("beta1", self.beta1), ("beta2", self.beta2)):
            resp = ", ".join(f"p{o.pid}.{o.op_seq} {o.request}->{o.response if not o.pending else '-'}"
                             for o in t.ops if o.invoke >= len(self.alpha) or o.complete is None
                             or o.complete >= len(self.alpha))
            lines.append(f"{name}: {len(t) - len(self.alpha)} more events; {resp}")
        lines.append(self.evidence)
        return "\n".join(lines)


@dataclass
class SlResult:
    witness: SlWitness | None
    nodes: int
    traces: int
    inconclusive: bool = False
    message: str = ""

    @property
    def violation(self) -> bool:
        return self.witness is not None


def _project(lins, completed: frozenset, invoked: frozenset) -> frozenset:
    out = set()
    for lin in lins:
        ids = set()
        if completed <= ids:
            out.add(())
        for k, (op, _) in enumerate(lin):
            if op not in invoked:
                break
            ids.add(op)
            if completed <= ids:
                out.add(lin[:k + 1])
    return frozenset(out)


def _history_sets(ex: Execution):
    completed = frozenset(k for k, o in ex.ops.items() if not o.pending)
    invoked = frozenset(ex.ops)
    return completed, invoked


def _spec_name(spec) -> str:
    if isinstance(spec, specs.QueueSpec):
        return "queue"
    return "bag" if spec.capacity is None else f"bbag:{spec.capacity}"


def find_sl_violation(workload: Workload, spec=None, bounds: Bounds | None = None,
                      prefix: list[int] | None = None, ceiling: int | None = 2_000_000) -> SlResult:
    """Search the exploration tree (optionally rooted at the schedule ``prefix``) for an SL violation."""
    bounds = bounds or Bounds()
    spec = spec or default_spec(workload.algorithm, workload.b)
    root = Execution(workload, record=False)
    for pid in prefix or ():
        root.advance(pid)
    memo: dict = {}
    sys.setrecursionlimit(max(sys.getrecursionlimit(), 20_000))

    def key_of(ex):
        return (ex.inst.key(), ex.history_key())

    def fold(ex: Execution):
        key = key_of(ex)
        if key in memo:
            return memo[key]
        if ceiling is not None and len(memo) >= ceiling:
            raise ExplosionError(len(memo), ceiling)
        enabled = ex.enabled(bounds)
        if not enabled:
            if not ex.finished():
                res = TOP
            else:
                res = frozenset(specs.all_linearizations(ex.history(), spec))
            memo[key] = res
            return res
        completed, invoked = _history_sets(ex)
        res = TOP
        for pid in enabled:
            child = ex.clone()
            child.advance(pid)
            f = fold(child)
            if f is TOP:
                continue
            proj = _project(f, completed, invoked)
            res = proj if res is TOP else res & proj
        memo[key] = res
        return res

    try:
        top = fold(root)
        traces = count_traces(workload, bounds, root=root).traces
    except ExplosionError as err:
        return SlResult(None, err.nodes, 0, True, str(err))
    if top is TOP or top:
        return SlResult(None, len(memo), traces)

    # Breadth-first from the root through empty nodes.  The witness prefix is
    # the first node where two solo continuations already conflict; failing
    # that, an origin (empty node whose children are all non-empty).
    queue = deque([(root, [])])
    visited = {key_of(root)}
    while queue:
        ex, path = queue.popleft()
        alpha_sched = list(prefix or ()) + path
        witness = _solo_witness(workload, spec, alpha_sched, ex)
        if witness is not None:
            return SlResult(witness, len(memo), traces)
        kids = []
        for pid in ex.enabled(bounds):
            child = ex.clone()
            child.advance(pid)
            kids.append((pid, child))
        empty_kids = [(pid, c) for pid, c in kids if memo[key_of(c)] == frozenset()]
        if not empty_kids:
            witness = _fset_witness(workload, spec, bounds, alpha_sched, ex, kids, memo, key_of)
            return SlResult(witness, len(memo), traces)
        for pid, c in empty_kids:
            k = key_of(c)
            if k not in visited:
                visited.add(k)
                queue.append((c, path + [pid]))
    raise AssertionError("empty root without an origin")


def _lin_str(lin) -> str:
    return "[" + ", ".join(f"p{op[0]}.{op[1]}->{resp}" for op, resp in lin) + "]"


def _solo_witness(workload, spec, alpha_sched, ex) -> SlWitness | None:
    """Two continuations, each an ordered set of processes run alone, with disjoint feasible prefixes."""
    completed, invoked = _history_sets(ex)
    lin_alpha = _project(specs.all_linearizations(ex.history(), spec), completed, invoked)
    pids = [p for p in workload.pids if ex.has_work(p)]
    candidates = []
    for r in range(0, len(pids) + 1):
        for order in itertools.permutations(pids, r):
            tail = run_solo_tail(ex, order)
            lins = specs.all_linearizations(tail.history(), spec)
            candidates.append((order, _project(lins, completed, invoked) & lin_alpha))
    for (o1, p1), (o2, p2) in itertools.combinations(candidates, 2):
        if p1 & p2:
            continue
        s1 = alpha_sched + _tail_schedule(ex, o1)
        s2 = alpha_sched + _tail_schedule(ex, o2)
        ev = ("no linearization of alpha's history is a prefix of both a linearization of "
              f"alpha.beta1 and of alpha.beta2 under the {_spec_name(spec)} spec\n"
              f"  beta1 runs {' then '.join(f'p{p}' for p in o1) or 'nothing'} alone; "
              f"feasible prefixes: {', '.join(sorted(map(_lin_str, p1))) or 'none'}\n"
              f"  beta2 runs {' then '.join(f'p{p}' for p in o2) or 'nothing'} alone; "
              f"feasible prefixes: {', '.join(sorted(map(_lin_str, p2))) or 'none'}")
        return SlWitness(run(workload, alpha_sched), run(workload, s1), run(workload, s2),
                         _spec_name(spec), ev, p1, p2)
    return None


def _fset_witness(workload, spec, bounds, alpha_sched, ex, kids, memo, key_of) -> SlWitness:
    completed, invoked = _history_sets(ex)
    alpha = run(workload, alpha_sched)
    if not kids:
        ev = f"the complete history of alpha is not linearizable under the {_spec_name(spec)} spec"
        return SlWitness(alpha, alpha, alpha, _spec_name(spec), ev)
    sets = [(pid, c, _project(memo[key_of(c)], completed, invoked)) for pid, c in kids
            if memo[key_of(c)] is not TOP]
    for (pa, ca, fa), (pb, cb, fb) in itertools.combinations(sets, 2):
        if not (fa & fb):
            s1 = alpha_sched + [pa] + _greedy_tail(ca, bounds)
            s2 = alpha_sched + [pb] + _greedy_tail(cb, bounds)
            ev = (f"children p{pa} and p{pb} of alpha admit disjoint feasible prefix sets "
                  f"{sorted(map(_lin_str, fa))} and {sorted(map(_lin_str, fb))}")
            return SlWitness(alpha, run(workload, s1), run(workload, s2), _spec_name(spec), ev, fa, fb)
    pa, ca, fa = sets[0]
    s1 = alpha_sched + [pa] + _greedy_tail(ca, bounds)
    ev = ("the feasible sets of alpha's children have an empty common intersection "
          "but no two are disjoint; beta1 = beta2 shown")
    return SlWitness(alpha, run(workload, s1), run(workload, s1), _spec_name(spec), ev, fa, fa)


def _tail_schedule(ex: Execution, order) -> list[int]:
    sched = []
    probe = ex.clone()
    for pid in order:
        while probe.has_work(pid):
            probe.advance(pid)
            sched.append(pid)
    return sched


def _greedy_tail(ex: Execution, bounds: Bounds) -> list[int]:
    sched = []
    probe = ex.clone()
    while True:
        en = probe.enabled(bounds)
        if not en:
            return sched
        probe.advance(en[0])
        sched.append(en[0])


# ---------------------------------------------------------------- witness files


def dump_witness(w: SlWitness) -> str:
    """Trace file of alpha.beta1 plus a WITNESS appendix carrying alpha.beta2."""
    text = dump_trace(w.beta1)
    n_alpha = len(w.alpha)
    lines = [text.rstrip("\n"),
             f"WITNESS {n_alpha} {len(w.beta1) - n_alpha} {len(w.beta2) - n_alpha} {w.spec_name}"]
    lines.extend(event_line(e) for e in w.beta2.events[n_alpha:])
    lines.extend(op_line(o) for o in sorted(w.beta2.ops, key=lambda o: (o.pid, o.op_seq)))
    return "\n".join(lines) + "\n"


def spec_from_name(name: str):
    if name == "bag":
        return specs.BagSpec(None)
    if name == "queue":
        return specs.QueueSpec()
    if name.startswith("bbag:") and name[5:].isdigit():
        return specs.BagSpec(int(name[5:]))
    raise UsageError(f"bad spec name {name!r} in witness")


def branch_prefix_sets(alpha: Trace, full1: Trace, full2: Trace, spec) -> tuple[frozenset, frozenset]:
    """Linearizations of alpha's history that some linearization of each full history extends."""
    completed = frozenset(o.id for o in alpha.ops if not o.pending)
    invoked = frozenset(o.id for o in alpha.ops)
    lin_alpha = _project(specs.all_linearizations(alpha.history(), spec), completed, invoked)
    return tuple(_project(specs.all_linearizations(t.history(), spec), completed, invoked) & lin_alpha
                 for t in (full1, full2))


@dataclass
class LoadedWitness:
    alpha: Trace
    beta1: Trace
    beta2: Trace
    spec: Any
    spec_name: str

    def recheck(self) -> tuple[frozenset, frozenset]:
        return branch_prefix_sets(self.alpha, self.beta1, self.beta2, self.spec)


def load_witness(text: str) -> LoadedWitness:
    """Parse and re-execute both branches of a witness file.

    Raises UsageError on malformed input and DivergenceError when either
    branch does not replay token for token.
    """
    parsed = parse_trace_text(text)
    if not parsed.extra or parsed.extra[0].split()[0] != "WITNESS":
        raise UsageError("no WITNESS section")
    head = parsed.extra[0].split()
    if len(head) != 5 or not all(t.isdigit() for t in head[1:4]):
        raise UsageError(f"bad WITNESS line {parsed.extra[0]!r}")
    n_alpha, n1, n2 = map(int, head[1:4])
    spec = spec_from_name(head[4])
    rest = [ln.split() for ln in parsed.extra[1:]]
    ev2 = [t for t in rest if t[0] != "OP"]
    ops2 = [t for t in rest if t[0] == "OP"]
    if len(parsed.events) != n_alpha + n1 or len(ev2) != n2:
        raise UsageError("WITNESS lengths do not match the recorded events")
    requests: dict = {}
    for toks in parsed.ops + ops2:
        k = (toks[1], toks[2])
        if requests.setdefault(k, toks[3]) != toks[3]:
            raise UsageError(f"p{toks[1]}.{toks[2]} has two different requests")
    union = [["OP", pid, seq, req] for (pid, seq), req in requests.items()]
    workload = workload_from_header(parsed.header, union)
    t1 = replay_tokens(workload, parsed.events, parsed.ops)
    t2 = replay_tokens(workload, parsed.events[:n_alpha] + ev2, ops2)
    return LoadedWitness(t1.prefix(n_alpha), t1, t2, spec, head[4])


# ---------------------------------------------------------------- fixtures


@dataclass(frozen=True)
class Fixture:
    name: str
    aliases: tuple[str, ...]
    workload: Workload
    alpha: tuple[int, ...]
    beta1: tuple[int, ...]  # solo order after alpha
    beta2: tuple[int, ...]
    spec: Any
    description: str


def counterexample_fixtures() -> dict[str, Fixture]:
    """The three scripted counterexamples, keyed by name."""
    li = parse_workload("p0:I1;p1:I2;p2:T", AlgorithmId.LI_QUEUE, 3)
    unb = parse_workload("p0:I1;p1:I2;p2:T;p3:T,T", AlgorithmId.UNBOUNDED_SL, 4)
    wf = parse_workload("p0:I1,I2,I3;p1:T,T;p2:T", AlgorithmId.WF_1B, 2, chooser="script:1,2,1")
    fx = [
        Fixture("li-queue-bag", ("lq",), li, (0, 1, 2, 2, 2, 2, 2, 0), (2,), (1, 2), specs.BagSpec(None),
                "ins1 and ins2 take slots 1 and 2; tk scans both empty slots, restarts, "
                "rereads Max and slot 1; ins1 writes slot 1 and returns.  Alone, tk then returns EMPTY; "
                "if ins2 writes first, tk returns 2."),
        Fixture("unbounded-sl-queue", ("uq",), unb, (0, 1, 2, 2, 2, 0, 0, 1, 1), (2,), (3,), specs.QueueSpec(),
                "ins1 and ins2 allocate slots 1 and 2; tk reads Done, Allocated=2 and an empty slot 1; "
                "both inserts complete.  Alone, tk returns 2; alternatively tk1 and tk2 run "
                "alone and return 1 then 2."),
        Fixture("wf-1b-bag", ("wf",), wf, (0,) * 7 + (1,) * 5 + (2,) + (0,) * 7, (2,), (1, 0, 2),
                specs.BagSpec(1),
                "ins1 fills cell 1 and tk1 takes it; tk2 reads Allocated=1; ins2 clears cell 1 and fills "
                "cell 2.  Alone, tk2 returns EMPTY; alternatively tk3 takes 2, ins3 refills cell 1 "
                "with 3 and tk2 returns 3."),
    ]
    return {f.name: f for f in fx}


def fixture_by_name(name: str) -> Fixture:
    for f in counterexample_fixtures().values():
        if name == f.name or name in f.aliases:
            return f
    raise UsageError(f"unknown counterexample {name!r}")


def fixture_traces(f: Fixture) -> tuple[Trace, Trace, Trace]:
    """(alpha, alpha.beta1, alpha.beta2) with each beta running its processes alone in order."""
    ex = Execution(f.workload)
    for pid in f.alpha:
        ex.advance(pid)
    s1 = list(f.alpha) + _tail_schedule(ex, f.beta1)
    s2 = list(f.alpha) + _tail_schedule(ex, f.beta2)
    return run(f.workload, f.alpha), run(f.workload, s1), run(f.workload, s2)
