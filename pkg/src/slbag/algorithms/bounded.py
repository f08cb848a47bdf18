"""Single-producer bounded bags that recycle cells guarded by hazard slots."""

from __future__ import annotations

from slbag.algorithms.base import EMPTY, FULL, OK, AlgorithmId, Machine
from slbag.primitives import BOTTOM, Kind, Memory, ObjectId

R, RTAS, ABA = Kind.REGISTER, Kind.RESETTABLE_TAS, Kind.ABA_REGISTER

ALLOCATED = ObjectId(R, "Allocated")


def items(i):
    return ObjectId(R, "Items", i)


def ts(i):
    return ObjectId(RTAS, "TS", i)


def hazard(i):
    return ObjectId(R, "Hazards", i)


class _HazardProducer(Machine):
    """Collect / allocate / reset tail shared by the three bounded bags."""

    def insert_collect(self, inst, prog):
        loc = prog.loc
        h = inst.access(prog, "insert:collect", hazard(loc["j"]), "read")
        if h is not BOTTOM:
            loc["hazardous"] = loc["hazardous"] | {h}
        loc["j"] += 1
        if loc["j"] > inst.n:
            del loc["j"]
            self._allocate(inst, prog)
            prog.pc = "insert:write-alloc"

    def _after_alloc_write(self, prog):
        pers, loc = prog.persist, prog.loc
        resets = tuple(sorted(pers["used"] - loc["hazardous"]))
        if resets:
            loc["resets"] = resets
            prog.pc = "insert:reset"
        else:
            self._narrow(prog)

    def insert_reset(self, inst, prog):
        loc = prog.loc
        inst.access(prog, "insert:reset", ts(loc["resets"][0]), "reset")
        loc["resets"] = loc["resets"][1:]
        if not loc["resets"]:
            del loc["resets"]
            self._narrow(prog)

    def _narrow(self, prog):
        prog.persist["used"] = prog.persist["used"] & prog.loc.pop("hazardous")
        prog.pc = "insert:write-item"

    def _common_invariants(self, inst, event):
        errs = []
        mem = inst.memory
        prod = inst.programs[0]
        if event.line == "insert:write-item" and mem.value(ts(event.obj.index)) != 0:
            errs.append(f"TS[{event.obj.index}] is not 0 when the producer writes Items[{event.obj.index}]")
        if event.pid == 0:
            for k in prod.persist["used"]:
                if mem.value(items(k)) is not BOTTOM:
                    errs.append(f"Items[{k}] is not BOTTOM although {k} is in used")
        return errs


class WaitFree1Bounded(_HazardProducer):
    """Capacity-1 bag, single producer.  Every Take finishes in a bounded number of steps."""

    algorithm = AlgorithmId.WF_1B
    insert_first = "insert:check-ts"
    take_first = "take:read-alloc"
    lines = ("insert:check-ts", "insert:clear-item", "insert:collect", "insert:write-alloc",
             "insert:reset", "insert:write-item",
             "take:read-alloc", "take:write-hazard", "take:read-item", "take:t&s",
             "take:clear-hazard1", "take:clear-hazard2")
    # producer positions strictly between clearing and refilling a cell
    _WINDOW = frozenset({"insert:collect", "insert:write-alloc", "insert:reset", "insert:write-item"})

    def build(self, n, b):
        mem = Memory()
        mem.declare_array(R, "Items", n + 1, BOTTOM)
        mem.declare_array(RTAS, "TS", n + 1, 0, overrides={1: 1})
        mem.declare(R, "Allocated", 1)
        mem.declare_array(R, "Hazards", n, BOTTOM)
        self._declare_extra(mem)
        return mem

    def _declare_extra(self, mem):
        pass

    def producer_state(self, n, b):
        return {"used": frozenset(), "m": 1}

    # Insert

    def insert_check_ts(self, inst, prog):
        if inst.access(prog, "insert:check-ts", ts(prog.persist["m"]), "read") == 0:
            return FULL
        prog.pc = "insert:clear-item"

    def insert_clear_item(self, inst, prog):
        m = prog.persist["m"]
        inst.access(prog, "insert:clear-item", items(m), "write", BOTTOM)
        prog.persist["used"] = prog.persist["used"] | {m}
        prog.loc.update(hazardous=frozenset(), j=1)
        prog.pc = "insert:collect"

    def _allocate(self, inst, prog):
        eligible = [i for i in range(1, inst.n + 2) if i not in prog.loc["hazardous"]]
        prog.persist["m"] = inst.choose(prog, eligible)

    def insert_write_alloc(self, inst, prog):
        inst.access(prog, "insert:write-alloc", ALLOCATED, "write", prog.persist["m"])
        self._after_alloc_write(prog)

    def insert_write_item(self, inst, prog):
        inst.access(prog, "insert:write-item", items(prog.persist["m"]), "write", prog.loc["x"])
        return OK

    # Take

    def take_read_alloc(self, inst, prog):
        a = inst.access(prog, "take:read-alloc", ALLOCATED, "read",
                        ctx=self._alloc_ctx(inst))
        prog.loc["a"] = a
        prog.pc = "take:write-hazard"

    def _alloc_ctx(self, inst):
        # Items/TS state of the cell named by Allocated, at the read.
        a = inst.memory.value(ALLOCATED)
        return (inst.memory.value(items(a)), inst.memory.value(ts(a)))

    def take_write_hazard(self, inst, prog):
        inst.access(prog, "take:write-hazard", hazard(prog.pid), "write", prog.loc["a"])
        prog.pc = "take:read-item"

    def take_read_item(self, inst, prog):
        x = inst.access(prog, "take:read-item", items(prog.loc["a"]), "read")
        if x is BOTTOM:
            prog.pc = "take:clear-hazard2"
        else:
            prog.loc["x"] = x
            prog.pc = "take:t&s"

    def take_ts(self, inst, prog):
        if inst.access(prog, "take:t&s", ts(prog.loc["a"]), "t&s") == 0:
            prog.pc = "take:clear-hazard1"
        else:
            del prog.loc["x"]
            prog.pc = "take:clear-hazard2"

    def take_clear_hazard1(self, inst, prog):
        inst.access(prog, "take:clear-hazard1", hazard(prog.pid), "write", BOTTOM)
        return prog.loc["x"]

    def take_clear_hazard2(self, inst, prog):
        inst.access(prog, "take:clear-hazard2", hazard(prog.pid), "write", BOTTOM)
        return EMPTY

    def invariants(self, inst, event):
        errs = self._common_invariants(inst, event)
        mem = inst.memory
        full = [i for i in range(1, inst.n + 2) if mem.value(items(i)) is not BOTTOM]
        if inst.programs[0].pc in self._WINDOW:
            if full:
                errs.append(f"Items{full} non-BOTTOM while the producer is between clear and write")
        elif full and full != [mem.value(ALLOCATED)]:
            errs.append(f"Items{full} non-BOTTOM but Allocated={mem.value(ALLOCATED)}")
        return errs


class StronglyLinearizable1Bounded(WaitFree1Bounded):
    """Capacity-1 bag; Takes retry while the Done ABA register reports a new Insert."""

    algorithm = AlgorithmId.SL_1B
    take_first = "take:read-done"
    lines = ("insert:check-ts", "insert:clear-item", "insert:collect", "insert:write-alloc",
             "insert:reset", "insert:write-item", "insert:write-done",
             "take:read-done", "take:read-alloc", "take:write-hazard", "take:read-item", "take:t&s",
             "take:clear-hazard1", "take:clear-hazard2", "take:reread-done")

    DONE = ObjectId(ABA, "Done")

    def _declare_extra(self, mem):
        mem.declare(ABA, "Done")

    def _alloc_ctx(self, inst):
        return None

    def insert_write_item(self, inst, prog):
        inst.access(prog, "insert:write-item", items(prog.persist["m"]), "write", prog.loc["x"])
        prog.pc = "insert:write-done"

    def insert_write_done(self, inst, prog):
        inst.access(prog, "insert:write-done", self.DONE, "dWrite")
        return OK

    def take_read_done(self, inst, prog):
        inst.access(prog, "take:read-done", self.DONE, "dRead")
        prog.pc = "take:read-alloc"

    def take_clear_hazard2(self, inst, prog):
        inst.access(prog, "take:clear-hazard2", hazard(prog.pid), "write", BOTTOM)
        prog.loc.pop("a", None)
        prog.pc = "take:reread-done"

    def take_reread_done(self, inst, prog):
        if inst.access(prog, "take:reread-done", self.DONE, "dRead") is False:
            return EMPTY
        prog.iters += 1
        prog.pc = "take:read-alloc"


class StronglyLinearizableBBounded(_HazardProducer):
    """Capacity-b bag coordinated through the InsertDone and TakeDone ABA registers."""

    algorithm = AlgorithmId.SL_BB
    insert_first = "insert:read-takedone"
    take_first = "take:read-insertdone"
    lines = ("insert:read-takedone", "insert:check-ts", "insert:clear-item", "insert:collect",
             "insert:write-alloc", "insert:reset", "insert:write-item", "insert:write-insertdone",
             "insert:reread-takedone",
             "take:read-insertdone", "take:read-alloc", "take:write-hazard", "take:read-item",
             "take:t&s", "take:clear-hazard1", "take:write-takedone-ok", "take:clear-hazard2",
             "take:reread-insertdone", "take:write-takedone-empty")

    INSERT_DONE = ObjectId(ABA, "InsertDone")
    TAKE_DONE = ObjectId(ABA, "TakeDone")

    def build(self, n, b):
        mem = Memory()
        mem.declare_array(R, "Items", n + b, BOTTOM)
        mem.declare_array(RTAS, "TS", n + b, 0)
        mem.declare(R, "Allocated", frozenset())
        mem.declare_array(R, "Hazards", n, BOTTOM)
        mem.declare(ABA, "InsertDone")
        mem.declare(ABA, "TakeDone")
        return mem

    def producer_state(self, n, b):
        return {"used": frozenset(), "alloc": frozenset()}

    # Insert

    def insert_read_takedone(self, inst, prog):
        inst.access(prog, "insert:read-takedone", self.TAKE_DONE, "dRead")
        self._start_pass(inst, prog)

    def _start_pass(self, inst, prog):
        prog.loc["scan"] = tuple(sorted(prog.persist["alloc"]))
        self._next_cell(inst, prog)

    def _next_cell(self, inst, prog):
        loc = prog.loc
        if loc["scan"]:
            prog.pc = "insert:check-ts"
            return
        del loc["scan"]
        if len(prog.persist["alloc"]) < inst.b:
            loc.update(hazardous=frozenset(), j=1)
            prog.pc = "insert:collect"
        else:
            prog.pc = "insert:reread-takedone"

    def insert_check_ts(self, inst, prog):
        if inst.access(prog, "insert:check-ts", ts(prog.loc["scan"][0]), "read") == 1:
            prog.pc = "insert:clear-item"
        else:
            prog.loc["scan"] = prog.loc["scan"][1:]
            self._next_cell(inst, prog)

    def insert_clear_item(self, inst, prog):
        m = prog.loc["scan"][0]
        inst.access(prog, "insert:clear-item", items(m), "write", BOTTOM)
        pers = prog.persist
        pers["alloc"] = pers["alloc"] - {m}
        pers["used"] = pers["used"] | {m}
        prog.loc["scan"] = prog.loc["scan"][1:]
        self._next_cell(inst, prog)

    def _allocate(self, inst, prog):
        pers = prog.persist
        taken = pers["alloc"] | prog.loc["hazardous"]
        m = inst.choose(prog, [i for i in range(1, inst.n + inst.b + 1) if i not in taken])
        prog.loc["m"] = m
        pers["alloc"] = pers["alloc"] | {m}

    def insert_write_alloc(self, inst, prog):
        inst.access(prog, "insert:write-alloc", ALLOCATED, "write", prog.persist["alloc"])
        self._after_alloc_write(prog)

    def insert_write_item(self, inst, prog):
        inst.access(prog, "insert:write-item", items(prog.loc["m"]), "write", prog.loc["x"])
        prog.pc = "insert:write-insertdone"

    def insert_write_insertdone(self, inst, prog):
        inst.access(prog, "insert:write-insertdone", self.INSERT_DONE, "dWrite")
        return OK

    def insert_reread_takedone(self, inst, prog):
        if inst.access(prog, "insert:reread-takedone", self.TAKE_DONE, "dRead") is False:
            return FULL
        prog.iters += 1
        self._start_pass(inst, prog)

    # Take

    def take_read_insertdone(self, inst, prog):
        inst.access(prog, "take:read-insertdone", self.INSERT_DONE, "dRead")
        prog.pc = "take:read-alloc"

    def take_read_alloc(self, inst, prog):
        allocated = inst.access(prog, "take:read-alloc", ALLOCATED, "read")
        prog.loc["allocated"] = tuple(sorted(allocated))
        self._next_slot(prog)

    def _next_slot(self, prog):
        prog.pc = "take:write-hazard" if prog.loc["allocated"] else "take:clear-hazard2"

    def _skip_slot(self, prog):
        prog.loc["allocated"] = prog.loc["allocated"][1:]
        self._next_slot(prog)

    def take_write_hazard(self, inst, prog):
        inst.access(prog, "take:write-hazard", hazard(prog.pid), "write", prog.loc["allocated"][0])
        prog.pc = "take:read-item"

    def take_read_item(self, inst, prog):
        x = inst.access(prog, "take:read-item", items(prog.loc["allocated"][0]), "read")
        if x is BOTTOM:
            self._skip_slot(prog)
        else:
            prog.loc["x"] = x
            prog.pc = "take:t&s"

    def take_ts(self, inst, prog):
        if inst.access(prog, "take:t&s", ts(prog.loc["allocated"][0]), "t&s") == 0:
            prog.pc = "take:clear-hazard1"
        else:
            del prog.loc["x"]
            self._skip_slot(prog)

    def take_clear_hazard1(self, inst, prog):
        inst.access(prog, "take:clear-hazard1", hazard(prog.pid), "write", BOTTOM)
        prog.pc = "take:write-takedone-ok"

    def take_write_takedone_ok(self, inst, prog):
        inst.access(prog, "take:write-takedone-ok", self.TAKE_DONE, "dWrite")
        return prog.loc["x"]

    def take_clear_hazard2(self, inst, prog):
        inst.access(prog, "take:clear-hazard2", hazard(prog.pid), "write", BOTTOM)
        del prog.loc["allocated"]
        prog.pc = "take:reread-insertdone"

    def take_reread_insertdone(self, inst, prog):
        if inst.access(prog, "take:reread-insertdone", self.INSERT_DONE, "dRead") is False:
            prog.pc = "take:write-takedone-empty"
            return None
        prog.iters += 1
        prog.pc = "take:read-alloc"

    def take_write_takedone_empty(self, inst, prog):
        inst.access(prog, "take:write-takedone-empty", self.TAKE_DONE, "dWrite")
        return EMPTY

    def invariants(self, inst, event):
        errs = self._common_invariants(inst, event)
        pers = inst.programs[0].persist
        if len(pers["alloc"]) > inst.b:
            errs.append(f"|alloc|={len(pers['alloc'])} exceeds b={inst.b}")
        mem = inst.memory
        stray = [i for i in range(1, inst.n + inst.b + 1)
                 if mem.value(items(i)) is not BOTTOM and i not in pers["alloc"]]
        if stray:
            errs.append(f"Items{stray} non-BOTTOM outside alloc")
        return errs
