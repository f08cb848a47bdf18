"""Atomic base objects: registers, test&set, fetch&increment, ABA-detecting registers.

Every object is mutated only through :meth:`Memory.apply`, which performs one
indivisible transition and returns the response.  The same objects back both the
virtual scheduler (where calls are serialized by construction) and the native
stress backend (:class:`LockedMemory`, one lock per object).
"""

from __future__ import annotations

import enum
import threading
from typing import Any, NamedTuple


class UsageError(ValueError):
    """Raised when an API is called outside its contract."""


class _Bottom:
    __slots__ = ()

    def __repr__(self) -> str:
        return "BOTTOM"

    def __reduce__(self):
        return "BOTTOM"


BOTTOM = _Bottom()


class Kind(enum.Enum):
    REGISTER = "register"
    TEST_AND_SET = "test&set"
    RESETTABLE_TAS = "resettable-test&set"
    FETCH_AND_INCREMENT = "fetch&increment"
    ABA_REGISTER = "aba-register"


LEGAL_ACTIONS: dict[Kind, frozenset[str]] = {
    Kind.REGISTER: frozenset({"read", "write"}),
    Kind.TEST_AND_SET: frozenset({"t&s"}),
    Kind.RESETTABLE_TAS: frozenset({"t&s", "reset", "read"}),
    Kind.FETCH_AND_INCREMENT: frozenset({"f&i", "read"}),
    Kind.ABA_REGISTER: frozenset({"dWrite", "dRead"}),
}


class ObjectId(NamedTuple):
    kind: Kind
    name: str
    index: int | None = None

    def __str__(self) -> str:
        if self.index is None:
            return self.name
        return f"{self.name}[{self.index}]"


def in_universe(value: Any) -> bool:
    """Values a register may hold: BOTTOM, a non-negative int, or a set of indices."""
    if value is BOTTOM:
        return True
    if isinstance(value, bool):
        return False
    if isinstance(value, int):
        return value >= 0
    if isinstance(value, frozenset):
        return all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in value)
    return False


class Register:
    __slots__ = ("value",)

    def __init__(self, value: Any = BOTTOM):
        self.value = value

    def apply(self, action, actor, arg):
        if action == "read":
            return self.value
        if not in_universe(arg):
            raise UsageError(f"value {arg!r} is outside the element universe")
        self.value = arg
        return None

    def snapshot(self):
        return {"value": self.value}

    def key(self):
        return self.value

    def clone(self):
        return Register(self.value)


class TestAndSet:
    """Test&set bit; the resettable, readable variant also supports reset and read."""

    __slots__ = ("bit",)

    def __init__(self, bit: int = 0):
        self.bit = bit

    def apply(self, action, actor, arg):
        if action == "t&s":
            old = self.bit
            self.bit = 1
            return old
        if action == "reset":
            self.bit = 0
            return None
        return self.bit

    def snapshot(self):
        return {"bit": self.bit}

    def key(self):
        return self.bit

    def clone(self):
        return TestAndSet(self.bit)


class FetchAndIncrement:
    __slots__ = ("count",)

    def __init__(self, count: int = 0):
        self.count = count

    def apply(self, action, actor, arg):
        old = self.count
        if action == "f&i":
            self.count = old + 1
        return old

    def snapshot(self):
        return {"count": self.count}

    def key(self):
        return self.count

    def clone(self):
        return FetchAndIncrement(self.count)


class AbaRegister:
    """Restricted ABA-detecting register: argument-free dWrite, dRead returns the bit.

    ``last_seen`` maps each process to the write epoch it observed at its most
    recent dRead.  A dRead returns true iff the reader has read before and the
    epoch moved since.
    """

    __slots__ = ("write_epoch", "last_seen")

    def __init__(self, write_epoch: int = 0, last_seen: dict | None = None):
        self.write_epoch = write_epoch
        self.last_seen = {} if last_seen is None else last_seen

    def apply(self, action, actor, arg):
        if action == "dWrite":
            self.write_epoch += 1
            return None
        seen = self.last_seen.get(actor)
        self.last_seen[actor] = self.write_epoch
        return seen is not None and self.write_epoch > seen

    def snapshot(self):
        return {"write_epoch": self.write_epoch, "last_seen": dict(self.last_seen)}

    def key(self):
        # Only whether each reader is behind matters for future responses.
        return tuple(sorted((p, e == self.write_epoch) for p, e in self.last_seen.items()))

    def clone(self):
        return AbaRegister(self.write_epoch, dict(self.last_seen))


_FACTORY = {
    Kind.REGISTER: Register,
    Kind.TEST_AND_SET: TestAndSet,
    Kind.RESETTABLE_TAS: TestAndSet,
    Kind.FETCH_AND_INCREMENT: FetchAndIncrement,
    Kind.ABA_REGISTER: AbaRegister,
}


def new_object(kind: Kind, initial: Any = None):
    factory = _FACTORY[kind]
    return factory() if initial is None else factory(initial)


class Memory:
    """The shared objects of one algorithm instance.

    Fixed objects are declared up front.  Growable arrays (``declare_array`` with
    ``size=None``) materialize cells on first access, doubling their backing
    store, which models the infinite arrays of the unbounded algorithms.
    """

    def __init__(self):
        self.objects: dict[ObjectId, Any] = {}
        # name -> ids in index order; fixes a canonical layout for key()
        self._layout: dict[str, list[ObjectId]] = {}
        self._growable: dict[str, tuple[Kind, Any]] = {}

    def declare(self, kind: Kind, name: str, initial: Any = None, index: int | None = None) -> ObjectId:
        oid = ObjectId(kind, name, index)
        self.objects[oid] = new_object(kind, initial)
        self._layout.setdefault(name, []).append(oid)
        return oid

    def declare_array(self, kind: Kind, name: str, size: int | None, initial: Any = None,
                      overrides: dict[int, Any] | None = None) -> None:
        overrides = overrides or {}
        self._layout.setdefault(name, [])
        if size is None:
            self._growable[name] = (kind, initial)
            return
        for i in range(1, size + 1):
            self.declare(kind, name, overrides.get(i, initial), i)

    def cell(self, kind: Kind, name: str, index: int) -> ObjectId:
        oid = ObjectId(kind, name, index)
        if oid not in self.objects:
            self._grow(name, index)
        return oid

    def size(self, name: str) -> int:
        return len(self._layout[name])

    def _grow(self, name: str, index: int) -> None:
        if name not in self._growable or index < 1:
            raise UsageError(f"{name}[{index}] does not exist")
        kind, initial = self._growable[name]
        size = len(self._layout[name])
        for i in range(size + 1, max(index, 2 * size) + 1):
            self.declare(kind, name, initial, i)

    def apply(self, obj: ObjectId, action: str, actor: int, arg: Any = None):
        try:
            target = self.objects[obj]
        except KeyError:
            raise UsageError(f"unknown object {obj}") from None
        if action not in LEGAL_ACTIONS[obj.kind]:
            raise UsageError(f"{action} is not an operation of a {obj.kind.value} ({obj})")
        return target.apply(action, actor, arg)

    def snapshot(self, obj: ObjectId) -> dict:
        try:
            return self.objects[obj].snapshot()
        except KeyError:
            raise UsageError(f"unknown object {obj}") from None

    def value(self, obj: ObjectId):
        """Current register value / bit / count, for checkers; not a step."""
        return self.objects[obj].key()

    def clone(self) -> Memory:
        twin = Memory.__new__(Memory)
        twin.objects = {oid: o.clone() for oid, o in self.objects.items()}
        twin._layout = {name: list(ids) for name, ids in self._layout.items()}
        twin._growable = self._growable
        return twin

    def key(self) -> tuple:
        objs = self.objects
        return tuple(tuple(objs[oid].key() for oid in ids) for ids in self._layout.values())


class LockedMemory(Memory):
    """Memory for real threads: each apply holds the target object's lock."""

    def __init__(self):
        super().__init__()
        self._locks: dict[ObjectId, threading.Lock] = {}
        self._grow_lock = threading.Lock()

    def _lock_for(self, obj: ObjectId) -> threading.Lock:
        lock = self._locks.get(obj)
        if lock is None:
            with self._grow_lock:
                lock = self._locks.setdefault(obj, threading.Lock())
        return lock

    def cell(self, kind: Kind, name: str, index: int) -> ObjectId:
        oid = ObjectId(kind, name, index)
        if oid not in self.objects:
            with self._grow_lock:
                if oid not in self.objects:
                    self._grow(name, index)
        return oid

    def apply(self, obj: ObjectId, action: str, actor: int, arg: Any = None):
        with self._lock_for(obj):
            return super().apply(obj, action, actor, arg)

    def clone(self):
        raise UsageError("native memory cannot be cloned")

    @classmethod
    def adopt(cls, mem: Memory) -> LockedMemory:
        """Take over an already-declared layout."""
        locked = cls()
        locked.objects = mem.objects
        locked._layout = mem._layout
        locked._growable = mem._growable
        return locked
