"""Step machines for the five bag/queue algorithms.

Each process is a resumable program.  :func:`step` performs exactly one access
to a shared object and runs the local code that follows it up to the next
shared access or the return.
"""

from __future__ import annotations

from slbag.algorithms.base import (
    EMPTY,
    FULL,
    OK,
    TAKE,
    AlgorithmId,
    Chooser,
    Event,
    Instance,
    Program,
    RandomChooser,
    Request,
    ScriptedChooser,
    StepOutcome,
    format_response,
    insert,
    make_chooser,
    parse_response,
)
from slbag.algorithms.bounded import (
    StronglyLinearizable1Bounded,
    StronglyLinearizableBBounded,
    WaitFree1Bounded,
)
from slbag.algorithms.unbounded import LiQueue, UnboundedSL
from slbag.primitives import UsageError

MACHINES = {
    AlgorithmId.LI_QUEUE: LiQueue(),
    AlgorithmId.UNBOUNDED_SL: UnboundedSL(),
    AlgorithmId.WF_1B: WaitFree1Bounded(),
    AlgorithmId.SL_1B: StronglyLinearizable1Bounded(),
    AlgorithmId.SL_BB: StronglyLinearizableBBounded(),
}


def new_instance(algorithm: AlgorithmId | str, n: int, b: int = 1, chooser: Chooser | None = None,
                 native: bool = False) -> Instance:
    """Fresh shared state.

    ``n`` is the number of processes for the unbounded algorithms (pids
    ``0..n-1``) and the number of consumers for the single-producer ones
    (producer pid 0, consumers ``1..n``).  Only SL_BB takes a capacity ``b``; the others require ``b=1``.
    """
    if isinstance(algorithm, str):
        algorithm = AlgorithmId.parse(algorithm)
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise UsageError(f"n must be a positive integer, got {n!r}")
    if isinstance(b, bool) or not isinstance(b, int) or b < 1:
        raise UsageError(f"b must be a positive integer, got {b!r}")
    if b != 1 and algorithm is not AlgorithmId.SL_BB:
        raise UsageError(f"{algorithm.value} has no capacity parameter; b must be 1, got {b}")
    return Instance(MACHINES[algorithm], n, b, chooser, native)


def begin_op(inst: Instance, pid: int, request: Request) -> None:
    inst.begin_op(pid, request)


def step(inst: Instance, pid: int) -> StepOutcome:
    return inst.step(pid)


def check_invariants(inst: Instance, event: Event) -> list[str]:
    """Lemma checks against the configuration right after ``event``."""
    return inst.machine.invariants(inst, event)


def run_solo(inst: Instance, pid: int, request: Request, limit: int = 10_000):
    """Run one operation alone to completion; returns (events, response)."""
    inst.begin_op(pid, request)
    events = []
    for _ in range(limit):
        out = inst.step(pid)
        events.append(out.event)
        if out.done:
            return events, out.response
    raise RuntimeError(f"{request} by process {pid} did not finish within {limit} solo steps")


__all__ = [
    "EMPTY", "FULL", "OK", "TAKE", "AlgorithmId", "Chooser", "Event", "Instance", "MACHINES",
    "Program", "RandomChooser", "Request", "ScriptedChooser", "StepOutcome", "begin_op",
    "check_invariants", "format_response", "insert", "make_chooser", "new_instance",
    "parse_response", "run_solo", "step",
]
