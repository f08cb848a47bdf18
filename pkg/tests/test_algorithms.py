import pytest

from slbag.algorithms import (
    EMPTY,
    FULL,
    OK,
    TAKE,
    AlgorithmId,
    check_invariants,
    insert,
    make_chooser,
    new_instance,
    run_solo,
)
from slbag.algorithms.bounded import ALLOCATED, hazard, items, ts
from slbag.primitives import BOTTOM, Kind, ObjectId, UsageError


def lines(events):
    return [e.line for e in events]


def value(inst, oid):
    return inst.memory.value(oid)


# -- initial configurations


def test_wf1b_initial_layout():
    inst = new_instance(AlgorithmId.WF_1B, 2)
    assert inst.memory.size("Items") == 3
    assert [value(inst, items(i)) for i in (1, 2, 3)] == [BOTTOM] * 3
    assert [value(inst, ts(i)) for i in (1, 2, 3)] == [1, 0, 0]
    assert value(inst, ALLOCATED) == 1
    assert inst.memory.size("Hazards") == 2


def test_slbb_initial_layout():
    inst = new_instance(AlgorithmId.SL_BB, 2, b=2)
    assert inst.memory.size("Items") == 4
    assert value(inst, ALLOCATED) == frozenset()
    assert all(value(inst, ts(i)) == 0 for i in range(1, 5))


def test_unbounded_counters_start_at_zero():
    inst = new_instance(AlgorithmId.UNBOUNDED_SL, 3)
    fai = Kind.FETCH_AND_INCREMENT
    assert value(inst, ObjectId(fai, "Allocated")) == 0
    assert value(inst, ObjectId(fai, "Done")) == 0
    assert sorted(inst.programs) == [0, 1, 2]


def test_single_producer_has_n_consumers():
    assert sorted(new_instance("sl-1b", 3).programs) == [0, 1, 2, 3]


@pytest.mark.parametrize("alg", ["wf-1b", "sl-1b", "li-queue", "unbounded-sl"])
def test_capacity_only_for_bbounded(alg):
    with pytest.raises(UsageError):
        new_instance(alg, 2, b=2)


@pytest.mark.parametrize("n,b", [(0, 1), (-1, 1), (2, 0), (True, 1)])
def test_bad_sizes(n, b):
    with pytest.raises(UsageError):
        new_instance("sl-bb", n, b)


def test_algorithm_names_parse_both_ways():
    assert AlgorithmId.parse("SL_BB") is AlgorithmId.SL_BB
    assert AlgorithmId.parse("wf-1b") is AlgorithmId.WF_1B
    with pytest.raises(UsageError):
        AlgorithmId.parse("treiber")


# -- begin_op contract


def test_consumer_cannot_insert():
    inst = new_instance("sl-1b", 2)
    with pytest.raises(UsageError, match="producer"):
        inst.begin_op(1, insert(3))


def test_producer_cannot_take():
    with pytest.raises(UsageError):
        new_instance("sl-bb", 2, 2).begin_op(0, TAKE)


def test_begin_twice_rejected():
    inst = new_instance("unbounded-sl", 2)
    inst.begin_op(1, TAKE)
    with pytest.raises(UsageError, match="pending"):
        inst.begin_op(1, TAKE)


def test_step_without_operation_rejected():
    with pytest.raises(UsageError):
        new_instance("li-queue", 2).step(0)
    with pytest.raises(UsageError):
        new_instance("li-queue", 2).begin_op(5, TAKE)


@pytest.mark.parametrize("alg", list(AlgorithmId))
def test_take_on_empty_bag(alg):
    inst = new_instance(alg, 2)
    _, resp = run_solo(inst, 1, TAKE)
    assert resp == EMPTY


def test_bad_insert_value():
    for bad in (-3, "7", True):
        with pytest.raises(UsageError):
            insert(bad)


# -- solo step sequences


def test_unbounded_insert_is_three_steps():
    inst = new_instance("unbounded-sl", 2)
    evs, resp = run_solo(inst, 0, insert(5))
    assert resp == OK
    assert lines(evs) == ["insert:inc-alloc", "insert:write-item", "insert:inc-done"]
    assert [e.response for e in evs] == [0, None, 0]
    assert evs[1].arg == 5 and evs[1].obj.index == 1


def test_unbounded_insert_then_take():
    inst = new_instance("unbounded-sl", 2)
    run_solo(inst, 0, insert(1))
    evs, resp = run_solo(inst, 1, TAKE)
    assert resp == 1
    assert lines(evs)[-1] == "take:t&s"


def test_wf1b_take_on_fresh_instance():
    inst = new_instance("wf-1b", 2)
    evs, resp = run_solo(inst, 1, TAKE)
    assert resp == EMPTY
    assert [(e.line, e.response) for e in evs] == [
        ("take:read-alloc", 1),
        ("take:write-hazard", None),
        ("take:read-item", BOTTOM),
        ("take:clear-hazard2", None),
    ]
    assert evs[1].arg == 1 and evs[1].obj == hazard(1)
    assert value(inst, hazard(1)) is BOTTOM


def test_slbb_full_at_takedone_read():
    inst = new_instance("sl-bb", 2, 1)
    assert run_solo(inst, 0, insert(1))[1] == OK
    evs, resp = run_solo(inst, 0, insert(2))
    assert resp == FULL
    assert evs[-1].line == "insert:reread-takedone" and evs[-1].response is False


def test_sl1b_full_without_done():
    inst = new_instance("sl-1b", 2)
    run_solo(inst, 0, insert(1))
    evs, resp = run_solo(inst, 0, insert(2))
    assert resp == FULL and lines(evs) == ["insert:check-ts"]


def test_slbb_refills_after_take():
    inst = new_instance("sl-bb", 2, 1)
    run_solo(inst, 0, insert(1))
    assert run_solo(inst, 1, TAKE)[1] == 1
    evs, resp = run_solo(inst, 0, insert(3))
    assert resp == OK
    assert "insert:reset" in lines(evs)
    assert value(inst, ALLOCATED) == frozenset({1})


def test_li_queue_take_gives_up_after_two_equal_passes():
    inst = new_instance("li-queue", 2)
    run_solo(inst, 0, insert(4))
    run_solo(inst, 1, TAKE)
    evs, resp = run_solo(inst, 1, TAKE)
    assert resp == EMPTY
    assert lines(evs).count("take:read-max") == 2


@pytest.mark.parametrize("alg,b", [("sl-1b", 1), ("wf-1b", 1), ("sl-bb", 2)])
def test_bounded_cycle_never_duplicates(alg, b):
    inst = new_instance(alg, 2, b)
    got = []
    for v in range(1, 30):
        if run_solo(inst, 0, insert(v))[1] == FULL:
            got.append(run_solo(inst, 1 + v % 2, TAKE)[1])
    assert len(got) == len(set(got)) and EMPTY not in got


def step_through(inst, pid, line):
    """Step ``pid`` until it has performed ``line``; returns that event."""
    while True:
        ev = inst.step(pid).event
        if ev.line == line:
            return ev


def test_collect_reads_each_hazard_separately():
    # p1 parks a hazard on cell 1 of a fresh instance; the producer's collect sees it
    inst = new_instance("wf-1b", 2)
    inst.begin_op(1, TAKE)
    step_through(inst, 1, "take:write-hazard")
    evs, _ = run_solo(inst, 0, insert(1))
    reads = [e for e in evs if e.line == "insert:collect"]
    assert [e.obj for e in reads] == [hazard(1), hazard(2)]
    assert [e.response for e in reads] == [1, BOTTOM]


def test_collect_sees_instantaneous_values():
    inst = new_instance("sl-1b", 2)
    inst.begin_op(0, insert(1))
    first = step_through(inst, 0, "insert:collect")
    inst.begin_op(2, TAKE)
    step_through(inst, 2, "take:write-hazard")  # lands between the two collect reads
    second = inst.step(0).event
    assert (first.obj, second.obj) == (hazard(1), hazard(2))
    assert (first.response, second.response) == (BOTTOM, 1)


# -- choosers and invariants


def test_scripted_chooser_picks_given_cells():
    inst = new_instance("wf-1b", 2, chooser=make_chooser("script:2,3"))
    run_solo(inst, 0, insert(1))
    assert value(inst, ALLOCATED) == 2
    run_solo(inst, 1, TAKE)
    run_solo(inst, 0, insert(2))
    assert value(inst, ALLOCATED) == 3


def test_random_chooser_is_reproducible():
    def cells(seed):
        inst = new_instance("wf-1b", 3, chooser=make_chooser("random", seed))
        out = []
        for v in range(1, 8):
            run_solo(inst, 0, insert(v))
            out.append(value(inst, ALLOCATED))
            run_solo(inst, 1, TAKE)
        return out

    assert cells(4) == cells(4)


def test_bad_chooser_token():
    for tok in ("max", "script:a"):
        with pytest.raises(UsageError):
            make_chooser(tok)


def test_invariant_check_fires_on_corrupted_state():
    inst = new_instance("sl-bb", 2, 1)
    inst.begin_op(0, insert(1))
    ev = inst.step(0).event
    assert check_invariants(inst, ev) == []
    # a stray item outside the allocated set
    inst.memory.apply(items(2), "write", 0, 9)
    assert check_invariants(inst, ev)


def test_clone_runs_independently():
    inst = new_instance("unbounded-sl", 2)
    inst.begin_op(0, insert(1))
    twin = inst.clone()
    inst.step(0)
    assert inst.key() != twin.key()
    assert twin.step(0).event.seq == 0
