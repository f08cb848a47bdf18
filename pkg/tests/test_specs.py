import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slbag.algorithms import EMPTY, FULL, OK, TAKE, insert
from slbag.primitives import UsageError
from slbag.specs import (
    BagSpec,
    History,
    Inconclusive,
    Operation,
    QueueSpec,
    all_linearizations,
    is_legal,
    linearizable,
    make_spec,
    spec_apply,
)

BAG, QUEUE = BagSpec(), QueueSpec()


def test_bag_take_branches_per_element():
    assert spec_apply(BAG, (1, 2), TAKE) == {(1, (2,)), (2, (1,))}


def test_bag_take_on_empty():
    assert spec_apply(BAG, (), TAKE) == {(EMPTY, ())}


def test_bounded_insert_at_capacity_is_full():
    assert spec_apply(BagSpec(1), (7,), insert(9)) == {(FULL, (7,))}


def test_queue_dequeues_head():
    assert spec_apply(QUEUE, (1, 2), TAKE) == {(1, (2,))}


def test_bag_duplicate_elements_share_branch():
    assert spec_apply(BAG, (3, 3), TAKE) == {(3, (3,))}


@pytest.mark.parametrize("seq,spec,want", [
    ([(insert(1), OK), (TAKE, 1), (TAKE, EMPTY)], BAG, True),
    ([(TAKE, 1)], BAG, False),
    ([(insert(1), OK), (insert(2), OK), (TAKE, 2), (TAKE, 1)], QUEUE, False),
    ([(insert(1), OK), (insert(2), OK), (TAKE, 2), (TAKE, 1)], BAG, True),
    ([(insert(1), OK), (insert(2), FULL), (TAKE, 1), (TAKE, EMPTY)], BagSpec(1), True),
    ([(insert(1), OK), (insert(2), OK)], BagSpec(1), False),
    ([(insert(1), FULL)], BagSpec(1), False),
])
def test_is_legal(seq, spec, want):
    assert is_legal(spec, seq) is want


def test_is_legal_with_initial_contents():
    assert is_legal(BAG, [(TAKE, 5)], initial=[5])
    assert not is_legal(QUEUE, [(TAKE, 6)], initial=[5, 6])


def test_make_spec():
    assert make_spec("bbag", 2) == BagSpec(2)
    assert isinstance(make_spec("queue"), QueueSpec)
    for bad in (("bbag", None), ("bbag", 0), ("stack", None)):
        with pytest.raises(UsageError):
            make_spec(*bad)


# -- histories


def op(pid, req, resp, inv, comp, k=0):
    return Operation(pid, k, req, resp, inv, comp)


def test_concurrent_insert_and_empty_take():
    h = History([op(0, insert(1), OK, 0, 3), op(1, TAKE, EMPTY, 1, 2)])
    lin = linearizable(h, BAG)
    assert [o for o, _ in lin] == [(1, 0), (0, 0)]


def test_take_needs_both_inserts_before_it():
    # ins1 and ins2 overlap tk, which returns 2 and finishes last
    h = History([op(0, insert(1), OK, 0, 7), op(1, insert(2), OK, 1, 9), op(2, TAKE, 2, 2, 10)])
    lin = linearizable(h, BAG)
    ids = [o for o, _ in lin]
    assert ids.index((1, 0)) < ids.index((2, 0))


def test_value_taken_twice_is_not_linearizable():
    h = History([op(0, insert(1), OK, 0, 1), op(1, TAKE, 1, 2, 3), op(2, TAKE, 1, 2, 4)])
    assert linearizable(h, BAG) is None


def test_real_time_order_is_respected():
    # Take finished before the Insert began, so it cannot see the value
    h = History([op(1, TAKE, 1, 0, 1), op(0, insert(1), OK, 2, 3)])
    assert linearizable(h, BAG) is None


def test_pending_op_may_be_dropped_or_kept():
    h = History([op(0, insert(1), None, 0, None), op(1, TAKE, EMPTY, 1, 2)])
    assert linearizable(h, BAG) is not None
    h = History([op(0, insert(1), None, 0, None), op(1, TAKE, 1, 1, 2)])
    lin = linearizable(h, BAG)
    assert lin == [((0, 0), OK), ((1, 0), 1)]


def test_all_linearizations_enumerates_pending_choices():
    h = History([op(0, insert(1), None, 0, None)])
    assert set(all_linearizations(h, BAG)) == {(), (((0, 0), OK),)}


def test_ceiling_raises_inconclusive():
    ops = [op(p, insert(p + 1), OK, 0, 50) for p in range(8)]
    with pytest.raises(Inconclusive):
        linearizable(History(ops + [op(9, TAKE, 99, 0, 50)]), BAG, ceiling=100)


def test_history_rejects_backwards_interval():
    with pytest.raises(UsageError):
        History([op(0, TAKE, EMPTY, 5, 2)])


def test_history_key_ignores_timestamps():
    a = History([op(0, insert(1), OK, 0, 1), op(1, TAKE, 1, 2, 3)])
    b = History([op(0, insert(1), OK, 10, 11), op(1, TAKE, 1, 20, 30)])
    assert a.key() == b.key()


# -- brute-force oracle


def brute_force(history, spec):
    """Try every order of every subset of pending ops with every response."""
    done = [o for o in history.ops if not o.pending]
    pend = [o for o in history.ops if o.pending]
    for r in range(len(pend) + 1):
        for extra in itertools.combinations(pend, r):
            chosen = done + list(extra)
            for perm in itertools.permutations(chosen):
                pos = {o.id: i for i, o in enumerate(perm)}
                if any(a.precedes(b) and pos[a.id] > pos[b.id] for a in chosen for b in chosen):
                    continue
                if _replay(perm, spec, spec.normalize(())):
                    return True
    return False


def _replay(ops, spec, state):
    if not ops:
        return True
    o, rest = ops[0], ops[1:]
    for resp, nxt in spec.outcomes(state, o.request):
        if (o.pending or resp == o.response) and _replay(rest, spec, nxt):
            return True
    return False


@st.composite
def histories(draw):
    n = draw(st.integers(1, 5))
    ops = []
    for pid in range(n):
        inv = draw(st.integers(0, 8))
        pending = draw(st.booleans()) and draw(st.booleans())
        comp = None if pending else inv + draw(st.integers(0, 6))
        if draw(st.booleans()):
            req, resp = insert(pid + 1), draw(st.sampled_from([OK, FULL]))
        else:
            req, resp = TAKE, draw(st.sampled_from([EMPTY, 1, 2, 3]))
        ops.append(Operation(pid, 0, req, None if pending else resp, inv, comp))
    return History(ops)


@settings(max_examples=300, deadline=None)
@given(histories(), st.sampled_from([BagSpec(), BagSpec(1), BagSpec(2), QueueSpec()]))
def test_search_agrees_with_brute_force(h, spec):
    found = linearizable(h, spec)
    assert (found is not None) == brute_force(h, spec)
    if found is not None:
        by_id = h.by_id()
        assert is_legal(spec, [(by_id[i].request, r) for i, r in found])
