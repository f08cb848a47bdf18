"""Sequential bag/queue specifications and a linearizability checker.

A bag state is a sorted tuple (a multiset); a queue state is a tuple in FIFO
order.  :func:`spec_step` answers "may ``request`` return ``response`` from
``state``" and gives the successor, which is all the checkers need.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator

from slbag.algorithms import EMPTY, FULL, OK, Request
from slbag.primitives import UsageError


class Inconclusive(Exception):
    """A search hit its node ceiling before reaching a verdict."""


@dataclass(frozen=True)
class BagSpec:
    capacity: int | None = None  # None = unbounded

    kind = "bag"

    def normalize(self, contents: Iterable[int]) -> tuple:
        return tuple(sorted(contents))

    def outcomes(self, state: tuple, request: Request):
        """All (response, next_state) pairs allowed from ``state``."""
        if request.kind == "I":
            if self.capacity is not None and len(state) >= self.capacity:
                return [(FULL, state)]
            nxt = list(state)
            bisect.insort(nxt, request.value)
            return [(OK, tuple(nxt))]
        if not state:
            return [(EMPTY, state)]
        out = []
        for i, v in enumerate(state):
            if i and state[i - 1] == v:
                continue
            out.append((v, state[:i] + state[i + 1:]))
        return out


@dataclass(frozen=True)
class QueueSpec:
    kind = "queue"

    def normalize(self, contents: Iterable[int]) -> tuple:
        return tuple(contents)

    def outcomes(self, state, request):
        if request.kind == "I":
            return [(OK, state + (request.value,))]
        if not state:
            return [(EMPTY, state)]
        return [(state[0], state[1:])]


def make_spec(name: str, capacity: int | None = None):
    if name == "bag":
        return BagSpec(None)
    if name == "bbag":
        if capacity is None or capacity < 1:
            raise UsageError("bbag needs a positive capacity")
        return BagSpec(capacity)
    if name == "queue":
        return QueueSpec()
    raise UsageError(f"unknown spec {name!r} (expected bag, bbag or queue)")


def spec_step(spec, state, request: Request, response) -> tuple | None:
    """Successor state if ``response`` is legal for ``request`` at ``state``, else None."""
    for resp, nxt in spec.outcomes(state, request):
        if resp == response:
            return nxt
    return None


def spec_apply(spec, state, request: Request) -> frozenset:
    """Every allowed ``(response, next_state)`` branch."""
    return frozenset(spec.outcomes(state, request))


def is_legal(spec, sequence: Iterable[tuple[Request, Any]], initial: Iterable[int] = ()) -> bool:
    state = spec.normalize(initial)
    for request, response in sequence:
        state = spec_step(spec, state, request, response)
        if state is None:
            return False
    return True


# ---------------------------------------------------------------- histories


@dataclass(frozen=True)
class Operation:
    pid: int
    op_seq: int
    request: Request
    response: Any = None  # None while pending
    invoke: int = 0
    complete: int | None = None

    @property
    def id(self) -> tuple[int, int]:
        return (self.pid, self.op_seq)

    @property
    def pending(self) -> bool:
        return self.complete is None

    def precedes(self, other: Operation) -> bool:
        return self.complete is not None and self.complete < other.invoke

    def __str__(self) -> str:
        resp = "-" if self.pending else self.response
        return f"p{self.pid}.{self.op_seq}:{self.request}->{resp}"


@dataclass
class History:
    ops: list[Operation] = field(default_factory=list)

    def __post_init__(self):
        for a in self.ops:
            if a.complete is not None and a.complete < a.invoke:
                raise UsageError(f"{a} completes before it is invoked")

    def by_id(self) -> dict:
        return {o.id: o for o in self.ops}

    def completed(self) -> list[Operation]:
        return [o for o in self.ops if not o.pending]

    def key(self) -> tuple:
        """Canonical shape: requests, responses and the real-time order, not timestamps."""
        ops = sorted(self.ops, key=lambda o: o.id)
        return tuple(
            (o.id, o.request, o.response, o.pending,
             frozenset(p.id for p in ops if p.precedes(o)))
            for o in ops
        )


def _search(history: History, spec, initial, ceiling, want_all: bool):
    ops = sorted(history.ops, key=lambda o: o.id)
    idx = {o.id: i for i, o in enumerate(ops)}
    preds = [0] * len(ops)
    for o in ops:
        for p in ops:
            if p.precedes(o):
                preds[idx[o.id]] |= 1 << idx[p.id]
    must = 0
    for o in ops:
        if not o.pending:
            must |= 1 << idx[o.id]
    start = spec.normalize(initial)
    dead: set = set()
    nodes = 0

    def dfs(done, state, path):
        nonlocal nodes
        nodes += 1
        if ceiling is not None and nodes > ceiling:
            raise Inconclusive(f"linearizability search exceeded {ceiling} nodes")
        if (done, state) in dead:
            return
        found = False
        if done & must == must:
            found = True
            yield tuple(path)
            if not want_all:
                return
        for i, o in enumerate(ops):
            bit = 1 << i
            if done & bit or preds[i] & ~done & must:
                continue
            if o.pending:
                choices = spec.outcomes(state, o.request)
            else:
                nxt = spec_step(spec, state, o.request, o.response)
                choices = [] if nxt is None else [(o.response, nxt)]
            for resp, nxt in choices:
                path.append((o.id, resp))
                for lin in dfs(done | bit, nxt, path):
                    found = True
                    yield lin
                    if not want_all:
                        return
                path.pop()
        if not found:
            dead.add((done, state))

    return dfs(0, start, [])


def linearizable(history: History, spec, initial: Iterable[int] = (), ceiling: int | None = 1_000_000):
    """A legal linearization ``[(op_id, response), ...]`` or None.

    Pending operations may be linearized (with any allowed response) or left
    out.  Raises :class:`Inconclusive` past ``ceiling`` search nodes.
    """
    for lin in _search(history, spec, initial, ceiling, want_all=False):
        return list(lin)
    return None


def all_linearizations(history: History, spec, initial: Iterable[int] = (),
                       ceiling: int | None = None) -> Iterator[tuple]:
    """Every linearization, each a tuple of ``(op_id, response)``."""
    return _search(history, spec, initial, ceiling, want_all=True)
