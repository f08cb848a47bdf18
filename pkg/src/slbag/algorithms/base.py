"""Shared machinery for the step machines: requests, responses, programs, instances."""

from __future__ import annotations

import enum
import random
from typing import Any, NamedTuple

from slbag.primitives import BOTTOM, LockedMemory, Memory, ObjectId, UsageError

OK = "OK"
FULL = "FULL"
EMPTY = "EMPTY"


class AlgorithmId(enum.Enum):
    LI_QUEUE = "li-queue"
    UNBOUNDED_SL = "unbounded-sl"
    WF_1B = "wf-1b"
    SL_1B = "sl-1b"
    SL_BB = "sl-bb"

    @property
    def single_producer(self) -> bool:
        return self in (AlgorithmId.WF_1B, AlgorithmId.SL_1B, AlgorithmId.SL_BB)

    @classmethod
    def parse(cls, text: str) -> AlgorithmId:
        try:
            return cls(text.lower().replace("_", "-"))
        except ValueError:
            try:
                return cls[text.upper().replace("-", "_")]
            except KeyError:
                raise UsageError(f"unknown algorithm {text!r}") from None


class Request(NamedTuple):
    kind: str  # "I" or "T"
    value: int | None = None

    def __str__(self) -> str:
        return "T" if self.kind == "T" else f"I{self.value}"

    @classmethod
    def parse(cls, token: str) -> Request:
        token = token.strip()
        if token == "T":
            return TAKE
        if token[:1] == "I" and token[1:].isdigit():
            return cls("I", int(token[1:]))
        raise UsageError(f"bad request token {token!r}")


TAKE = Request("T")


def insert(x: int) -> Request:
    if isinstance(x, bool) or not isinstance(x, int) or x < 0:
        raise UsageError(f"element {x!r} is not a non-negative integer")
    return Request("I", x)


def format_response(resp: Any) -> str:
    return "-" if resp is None else str(resp)


def parse_response(token: str):
    if token == "-":
        return None
    if token in (OK, FULL, EMPTY):
        return token
    if token.isdigit():
        return int(token)
    raise UsageError(f"bad response token {token!r}")


class Event(NamedTuple):
    seq: int
    pid: int
    line: str
    obj: ObjectId
    action: str
    arg: Any
    response: Any
    op_seq: int
    # Checker-only observations (e.g. cell state at a read); not serialized.
    ctx: Any = None


class StepOutcome(NamedTuple):
    event: Event
    done: bool
    response: Any = None


# ---------------------------------------------------------------- choosers


class Chooser:
    """Picks ``m`` from the eligible indices.  ``k`` counts earlier choices."""

    token = "min"
    # Stateless choosers keep the choice count out of the state key.
    stateful = False

    def choose(self, eligible: list[int], k: int) -> int:
        return eligible[0]


class RandomChooser(Chooser):
    token = "random"
    stateful = True

    def __init__(self, seed: int):
        self.seed = seed

    def choose(self, eligible, k):
        # Stateless in the choice count so cloned instances stay in lockstep.
        return random.Random(f"{self.seed}:{k}").choice(eligible)


class ScriptedChooser(Chooser):
    """Follows a fixed script; falls back to the smallest eligible index."""

    stateful = True

    def __init__(self, script):
        self.script = tuple(script)
        self.token = "script:" + ",".join(map(str, self.script))

    def choose(self, eligible, k):
        if k < len(self.script) and self.script[k] in eligible:
            return self.script[k]
        return eligible[0]


def make_chooser(token: str, seed: int = 0) -> Chooser:
    if token == "min":
        return Chooser()
    if token == "random":
        return RandomChooser(seed)
    if token.startswith("script:"):
        try:
            return ScriptedChooser(int(v) for v in token[7:].split(",") if v)
        except ValueError:
            raise UsageError(f"bad chooser script {token!r}") from None
    raise UsageError(f"unknown chooser {token!r}")


# ---------------------------------------------------------------- programs


class Program:
    """One process: pending request, control label, locals, persistent locals."""

    __slots__ = ("pid", "started", "request", "pc", "loc", "persist", "steps", "iters", "last")

    def __init__(self, pid: int, persist: dict | None = None):
        self.pid = pid
        self.started = 0
        self.request: Request | None = None
        self.pc: str | None = None
        self.loc: dict = {}
        self.persist: dict = persist or {}
        self.steps = 0
        self.iters = 0
        self.last: tuple | None = None

    @property
    def op_seq(self) -> int:
        return self.started - 1

    @property
    def pending(self) -> bool:
        return self.request is not None

    def clone(self) -> Program:
        twin = Program.__new__(Program)
        twin.pid = self.pid
        twin.started = self.started
        twin.request = self.request
        twin.pc = self.pc
        twin.loc = dict(self.loc)
        twin.persist = dict(self.persist)
        twin.steps = self.steps
        twin.iters = self.iters
        twin.last = None
        return twin

    def key(self, with_steps: bool = False) -> tuple:
        base = (self.started, self.request, self.pc, tuple(self.loc.items()),
                tuple(self.persist.items()), self.iters)
        return base + (self.steps,) if with_steps else base


_METHOD = str.maketrans({":": "_", "-": "_", "&": None})


class Machine:
    """One algorithm's code.  Subclasses define shared layout and line methods."""

    algorithm: AlgorithmId
    insert_first: str
    take_first: str
    lines: tuple[str, ...] = ()

    def build(self, n: int, b: int) -> Memory:
        raise NotImplementedError

    def producer_state(self, n: int, b: int) -> dict:
        return {}

    def begin(self, inst: Instance, prog: Program, request: Request) -> None:
        prog.loc = {"x": request.value} if request.kind == "I" else {}
        prog.pc = self.insert_first if request.kind == "I" else self.take_first

    def invariants(self, inst: Instance, event: Event) -> list[str]:
        return []


class Instance:
    """Shared variables of one algorithm plus one program per process."""

    def __init__(self, machine: Machine, n: int, b: int, chooser: Chooser | None = None,
                 native: bool = False):
        self.machine = machine
        self.algorithm = machine.algorithm
        self.n = n
        self.b = b
        self.chooser = chooser or Chooser()
        self.memory = machine.build(n, b)
        if native:
            self.memory = LockedMemory.adopt(self.memory)
        if self.algorithm.single_producer:
            pids = range(n + 1)
        else:
            pids = range(n)
        self.programs: dict[int, Program] = {
            pid: Program(pid, machine.producer_state(n, b) if pid == 0 and self.algorithm.single_producer else None)
            for pid in pids
        }
        self.seq = 0

    # -- plumbing used by the line methods

    def access(self, prog: Program, line: str, obj: ObjectId, action: str, arg: Any = None, ctx: Any = None):
        resp = self.memory.apply(obj, action, prog.pid, arg)
        prog.last = (line, obj, action, arg, resp, ctx)
        return resp

    def choose(self, prog: Program, eligible: list[int]) -> int:
        if not eligible:
            raise AssertionError("no eligible index to allocate")
        if not self.chooser.stateful:
            return self.chooser.choose(eligible, 0)
        k = prog.persist.get("choices", 0)
        prog.persist["choices"] = k + 1
        return self.chooser.choose(eligible, k)

    # -- public step API

    def is_producer(self, pid: int) -> bool:
        return self.algorithm.single_producer and pid == 0

    def begin_op(self, pid: int, request: Request) -> None:
        prog = self.programs.get(pid)
        if prog is None:
            raise UsageError(f"process {pid} does not exist (n={self.n})")
        if prog.pending:
            raise UsageError(f"process {pid} already has a pending {prog.request}")
        if self.algorithm.single_producer:
            if request.kind == "I" and pid != 0:
                raise UsageError(f"only the producer (process 0) may Insert; got process {pid}")
            if request.kind == "T" and pid == 0:
                raise UsageError("the producer may not Take")
        prog.request = request
        prog.started += 1
        prog.steps = 0
        prog.iters = 1
        self.machine.begin(self, prog, request)

    def step(self, pid: int) -> StepOutcome:
        prog = self.programs.get(pid)
        if prog is None or not prog.pending:
            raise UsageError(f"process {pid} has no pending operation")
        result = getattr(self.machine, prog.pc.translate(_METHOD))(self, prog)
        line, obj, action, arg, resp, ctx = prog.last
        event = Event(self.seq, pid, line, obj, action, arg, resp, prog.op_seq, ctx)
        self.seq += 1
        prog.steps += 1
        if result is None:
            return StepOutcome(event, False)
        prog.request = None
        prog.pc = None
        prog.loc = {}
        return StepOutcome(event, True, result)

    def clone(self) -> Instance:
        twin = Instance.__new__(Instance)
        twin.machine = self.machine
        twin.algorithm = self.algorithm
        twin.n = self.n
        twin.b = self.b
        twin.chooser = self.chooser
        twin.memory = self.memory.clone()
        twin.programs = {pid: p.clone() for pid, p in self.programs.items()}
        twin.seq = self.seq
        return twin

    def key(self, with_steps: bool = False) -> tuple:
        return (self.memory.key(), tuple(p.key(with_steps) for p in self.programs.values()))

    def snapshot(self, obj: ObjectId) -> dict:
        return self.memory.snapshot(obj)


def is_bottom(v) -> bool:
    return v is BOTTOM
