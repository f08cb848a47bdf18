import pytest

from slbag import algorithms, slcheck, specs
from slbag.algorithms import EMPTY, OK, TAKE, AlgorithmId
from slbag.algorithms.bounded import StronglyLinearizable1Bounded
from slbag.algorithms.unbounded import UnboundedSL
from slbag.primitives import UsageError
from slbag.sim import Bounds, DivergenceError, Execution, dump_trace, iter_traces, parse_workload, run
from slbag.slcheck import (
    assign_lin_points,
    counterexample_fixtures,
    dump_witness,
    find_sl_violation,
    fixture_by_name,
    fixture_traces,
    load_witness,
    validate_exhaustive,
    validate_trace,
)

U = AlgorithmId.UNBOUNDED_SL


def points(placements):
    return [(p.op, p.response, p.point) for p in placements]


# -- rule assignments on hand-built traces


def test_sequential_insert_take():
    t = run(parse_workload("p0:I1;p1:T", U, 2), [0, 0, 0, 1, 1, 1, 1])
    assert points(assign_lin_points(U, t)) == [((0, 0), OK, 2), ((1, 0), 1, 6)]


def test_coupled_insert_placed_at_take():
    # the Take's t&s hits the cell after the write but before Done is incremented
    t = run(parse_workload("p0:I1;p1:T", U, 2), [0, 0, 1, 1, 1, 1, 0])
    assert [e.line for e in t.events][5:] == ["take:t&s", "insert:inc-done"]
    assert points(assign_lin_points(U, t)) == [((0, 0), OK, 5), ((1, 0), 1, 5)]
    assert validate_trace(U, t).ok


def _bb_tie_trace():
    w = parse_workload("p0:I1,I2;p1:T;p2:T;p3:T", AlgorithmId.SL_BB, 3, b=2)
    ex = Execution(w)

    def through(pid, line):
        while ex.advance(pid).event.line != line:
            pass

    while ex.has_work(0):
        ex.advance(0)
    through(1, "take:t&s")  # wins cell 1
    through(2, "take:t&s")  # loses cell 1
    through(2, "take:t&s")  # wins cell 2
    while ex.has_work(3):
        ex.advance(3)  # finds both cells taken: EMPTY
    for pid in (1, 2):
        while ex.has_work(pid):
            ex.advance(pid)
    return ex.trace()


def test_pending_successful_takes_placed_at_empty_takedone_write():
    t = _bb_tie_trace()
    write = next(e for e in t.events if e.line == "take:write-takedone-empty")
    assert write.pid == 3
    got = points(assign_lin_points(AlgorithmId.SL_BB, t))
    assert got[2:] == [((1, 0), 1, write.seq), ((2, 0), 2, write.seq), ((3, 0), EMPTY, write.seq)]
    assert validate_trace(AlgorithmId.SL_BB, t).ok


def test_wf1b_deferred_empty_follows_the_winning_take():
    f = fixture_by_name("wf")
    _, beta1, beta2 = fixture_traces(f)
    order = [(p.op, p.response) for p in assign_lin_points(AlgorithmId.WF_1B, beta2)]
    # tk2 read Allocated while cell 2 was live; it returns 3 here, so nothing deferred
    assert ((2, 0), 3) in order
    rep = validate_trace(AlgorithmId.WF_1B, beta1)
    assert rep.ok, rep


def test_wf1b_rules_are_not_prefix_closed():
    # an EMPTY Take is placed retroactively, so some prefix's assignment is revised
    w = parse_workload("p0:I1,I2;p1:T;p2:T", AlgorithmId.WF_1B, 2)
    for t in iter_traces(w, Bounds()):
        rep = validate_trace(AlgorithmId.WF_1B, t, check_prefixes=True)
        if not rep.ok:
            assert {v.kind for v in rep.violations} == {"prefix"}
            break
    else:
        pytest.fail("expected a revised prefix somewhere")


# -- validate_trace failure modes


def test_foreign_trace_gets_coverage_error():
    t = run(parse_workload("p0:I1;p1:T", AlgorithmId.LI_QUEUE, 2), [0, 0, 1, 1, 1])
    rep = validate_trace(U, t)
    assert not rep.ok
    assert {v.kind for v in rep.violations} & {"coverage", "legality"}


def test_corrupted_empty_is_a_legality_error():
    t = run(parse_workload("p0:I1;p1:T", U, 2), [0, 0, 0, 1, 1, 1, 1])
    scanner = slcheck.make_scanner(U, specs.BagSpec())
    for ev in t.events[:3]:
        scanner.feed(ev, t.op(0, 0).request, ev.seq == 2, OK if ev.seq == 2 else None)
    scanner.feed(t.events[3], TAKE, False)
    # claim the Take linearizes as EMPTY right after the Insert
    scanner.place(t.events[3], (1, 0), TAKE, EMPTY)
    assert [v.kind for v in scanner.errors] == ["legality"]


def test_point_outside_interval_is_reported(monkeypatch):
    class Early(slcheck.UnboundedSLRules):
        def on_event(self, ev, op, request):
            super().on_event(ev, op, request)
            if ev.line == "insert:inc-alloc":
                self.placements.append(slcheck.Placement((1, 0), TAKE, EMPTY, ev.seq))

    monkeypatch.setitem(slcheck.RULES, U, Early)
    t = run(parse_workload("p0:I1;p1:T", U, 2), [0, 0, 0, 1, 1, 1, 1])
    kinds = {v.kind for v in validate_trace(U, t).violations}
    assert "containment" in kinds


def test_rules_without_coupling_fail_exhaustive_check(monkeypatch):
    class NoCoupling(slcheck.UnboundedSLRules):
        def on_event(self, ev, op, request):
            super().on_event(ev, op, request)
            if ev.line == "insert:write-item":
                self.rule.pop(("written", ev.pid))

    monkeypatch.setitem(slcheck.RULES, U, NoCoupling)
    rep = validate_exhaustive(parse_workload("p0:I1;p1:T", U, 2), Bounds())
    assert not rep.ok
    assert rep.violations[0].kind in ("legality", "response")
    # the counterexample is a real trace that exhibits the coupling
    assert "take:t&s" in [e.line for e in rep.counterexample.events]


def test_lemma_check_fires_on_corrupted_memory(monkeypatch):
    real = algorithms.MACHINES[AlgorithmId.SL_1B]

    class Leaky(StronglyLinearizable1Bounded):
        def insert_write_item(self, inst, prog):
            super().insert_write_item(inst, prog)
            inst.memory.apply(algorithms.bounded.items(3), "write", 0, 99)

    monkeypatch.setitem(algorithms.MACHINES, AlgorithmId.SL_1B, Leaky())
    rep = validate_exhaustive(parse_workload("p0:I1;p1:T", AlgorithmId.SL_1B, 2), Bounds(max_loop_iters=2))
    assert not rep.ok and rep.violations[0].kind == "lemma"
    assert algorithms.MACHINES[AlgorithmId.SL_1B] is not real


def test_unbounded_take_without_recheck_is_caught(monkeypatch):
    class Hasty(UnboundedSL):
        def take_reread_done(self, inst, prog):
            inst.access(prog, "take:reread-done", self.DONE, "read")
            return EMPTY

    monkeypatch.setitem(algorithms.MACHINES, U, Hasty())
    w = parse_workload("p0:I1,I2;p1:T;p2:T", U, 3)
    assert not validate_exhaustive(w, Bounds(max_loop_iters=2)).ok
    ok, *_ = slcheck.check_leaves_linearizable(w, Bounds(max_loop_iters=2), specs.BagSpec())
    assert not ok
    assert find_sl_violation(w, bounds=Bounds(max_loop_iters=2)).violation


def test_sl1b_take_without_recheck_is_not_sl(monkeypatch):
    class Hasty(StronglyLinearizable1Bounded):
        def take_reread_done(self, inst, prog):
            inst.access(prog, "take:reread-done", self.DONE, "dRead")
            return EMPTY

    monkeypatch.setitem(algorithms.MACHINES, AlgorithmId.SL_1B, Hasty())
    w = parse_workload("p0:I1,I2,I3;p1:T,T;p2:T", AlgorithmId.SL_1B, 2)
    alpha = [0, 0, 1, 1, 1, 0, 0, 2, 2, 0, 0, 0]
    res = find_sl_violation(w, bounds=Bounds(max_loop_iters=2), prefix=alpha)
    assert res.violation
    assert len(res.witness.alpha) == len(alpha)


# -- exhaustive checks and cross-validation


@pytest.mark.parametrize("text,alg,n,b", [
    ("p0:I1;p1:T", "unbounded-sl", 2, 1),
    ("p0:I1,I2;p1:T", "sl-1b", 1, 1),
    ("p0:I1,I2;p1:T", "sl-bb", 1, 1),
    ("p0:I1,I2,I3;p1:T", "sl-bb", 1, 2),
])
def test_small_trees_pass_both_checkers(text, alg, n, b):
    w = parse_workload(text, alg, n, b)
    bounds = Bounds(max_loop_iters=2)
    rep = validate_exhaustive(w, bounds)
    assert rep.ok, rep.violations
    assert not find_sl_violation(w, bounds=bounds).violation


def test_exhaustive_agrees_with_per_trace_validation():
    w = parse_workload("p0:I1;p1:T", U, 2)
    for t in iter_traces(w, Bounds(max_loop_iters=2)):
        if not t.truncated:
            assert validate_trace(U, t).ok


def test_li_queue_leaves_linearizable_but_not_sl():
    w = parse_workload("p0:I1;p1:I2;p2:T", AlgorithmId.LI_QUEUE, 3)
    ok, hists, _, _ = slcheck.check_leaves_linearizable(w, Bounds(), specs.BagSpec())
    assert ok and hists > 1
    assert find_sl_violation(w, specs.BagSpec()).violation


def test_search_ceiling_is_inconclusive():
    w = parse_workload("p0:I1;p1:I2;p2:T", AlgorithmId.LI_QUEUE, 3)
    res = find_sl_violation(w, specs.BagSpec(), ceiling=10)
    assert res.inconclusive and not res.violation


# -- fixtures and witness files


def test_fixture_names_and_aliases():
    fx = counterexample_fixtures()
    assert set(fx) == {"li-queue-bag", "unbounded-sl-queue", "wf-1b-bag"}
    assert fixture_by_name("uq").name == "unbounded-sl-queue"
    with pytest.raises(UsageError):
        fixture_by_name("s9")


def test_li_queue_fixture_steps():
    alpha, b1, b2 = fixture_traces(fixture_by_name("lq"))
    assert [(e.pid, e.line) for e in alpha.events] == [
        (0, "insert:inc-max"), (1, "insert:inc-max"),
        (2, "take:read-max"), (2, "take:read-item"), (2, "take:read-item"),
        (2, "take:read-max"), (2, "take:read-item"),
        (0, "insert:write-item"),
    ]
    assert alpha.op(0, 0).response == OK and alpha.op(2, 0).pending
    assert b1.op(2, 0).response == EMPTY
    assert b2.op(2, 0).response == 2


def test_unbounded_queue_fixture_steps():
    alpha, b1, b2 = fixture_traces(fixture_by_name("uq"))
    ev = alpha.events
    assert [ev[0].response, ev[1].response] == [0, 1]  # slots 1 and 2
    assert (ev[3].line, ev[3].response) == ("take:read-alloc", 2)
    assert (ev[4].line, ev[4].obj.index) == ("take:read-item", 1)
    assert alpha.op(0, 0).response == OK and alpha.op(1, 0).response == OK
    assert b1.op(2, 0).response == 2
    assert (b2.op(3, 0).response, b2.op(3, 1).response) == (1, 2)


def test_wf1b_fixture_steps():
    alpha, b1, b2 = fixture_traces(fixture_by_name("wf"))
    assert alpha.op(0, 0).response == OK and alpha.op(1, 0).response == 1
    assert [(e.line, e.response) for e in alpha.events if e.pid == 2] == [("take:read-alloc", 1)]
    second = [e for e in alpha.events if e.pid == 0 and e.op_seq == 1]
    assert ("insert:clear-item", 1) in [(e.line, e.obj.index) for e in second]
    assert ("insert:write-item", 2) in [(e.line, e.obj.index) for e in second]
    assert alpha.op(0, 1).response == OK
    assert b1.op(2, 0).response == EMPTY
    assert (b2.op(1, 1).response, b2.op(0, 2).response, b2.op(2, 0).response) == (2, OK, 3)


@pytest.mark.parametrize("name", ["lq", "uq", "wf"])
def test_rooted_search_returns_fixture_alpha(name):
    f = fixture_by_name(name)
    res = find_sl_violation(f.workload, f.spec, prefix=list(f.alpha))
    assert res.violation
    assert res.witness.alpha.schedule == list(f.alpha)
    assert not (res.witness.l1 & res.witness.l2)


@pytest.mark.parametrize("name", ["lq", "uq", "wf"])
def test_witness_file_round_trip(name):
    f = fixture_by_name(name)
    w = find_sl_violation(f.workload, f.spec, prefix=list(f.alpha)).witness
    text = dump_witness(w)
    back = load_witness(text)
    assert dump_trace(back.beta1) == dump_trace(w.beta1)
    assert dump_trace(back.beta2) == dump_trace(w.beta2)
    l1, l2 = back.recheck()
    assert (l1, l2) == (w.l1, w.l2) and not (l1 & l2)


def test_tampered_witness_diverges():
    f = fixture_by_name("lq")
    text = dump_witness(find_sl_violation(f.workload, f.spec, prefix=list(f.alpha)).witness)
    lines = text.splitlines()
    i = max(k for k, ln in enumerate(lines) if "take:read-max" in ln)
    lines[i] = lines[i].rsplit(" ", 1)[0] + " 9"
    with pytest.raises(DivergenceError):
        load_witness("\n".join(lines))


def test_witness_without_appendix_rejected():
    t = run(parse_workload("p0:I1;p1:T", U, 2), [0, 0, 0])
    with pytest.raises(UsageError):
        load_witness(dump_trace(t))
