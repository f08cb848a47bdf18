"""The two unbounded bags over infinite Items/TS arrays."""

from __future__ import annotations

from slbag.algorithms.base import EMPTY, OK, AlgorithmId, Machine
from slbag.primitives import BOTTOM, Kind, Memory, ObjectId

R, TAS, FAI = Kind.REGISTER, Kind.TEST_AND_SET, Kind.FETCH_AND_INCREMENT


def _unbounded_arrays(mem: Memory) -> None:
    mem.declare_array(R, "Items", None, BOTTOM)
    mem.declare_array(TAS, "TS", None, 0)


class LiQueue(Machine):
    """Array queue indexed by a Max counter.  Takes rescan until two passes agree."""

    algorithm = AlgorithmId.LI_QUEUE
    insert_first = "insert:inc-max"
    take_first = "take:read-max"
    lines = ("insert:inc-max", "insert:write-item", "take:read-max", "take:read-item", "take:t&s")

    MAX = ObjectId(FAI, "Max")

    def build(self, n, b):
        mem = Memory()
        _unbounded_arrays(mem)
        mem.declare(FAI, "Max", 1)
        return mem

    def begin(self, inst, prog, request):
        super().begin(inst, prog, request)
        if request.kind == "T":
            prog.loc.update(taken_old=0, max_old=0)

    def insert_inc_max(self, inst, prog):
        prog.loc["max"] = inst.access(prog, "insert:inc-max", self.MAX, "f&i")
        prog.pc = "insert:write-item"

    def insert_write_item(self, inst, prog):
        cell = inst.memory.cell(R, "Items", prog.loc["max"])
        inst.access(prog, "insert:write-item", cell, "write", prog.loc["x"])
        return OK

    def take_read_max(self, inst, prog):
        loc = prog.loc
        loc["taken_new"] = 0
        loc["max_new"] = inst.access(prog, "take:read-max", self.MAX, "read") - 1
        loc["i"] = 1
        return self._scan(prog)

    def _scan(self, prog):
        loc = prog.loc
        if loc["i"] <= loc["max_new"]:
            prog.pc = "take:read-item"
            return None
        if loc["taken_new"] == loc["taken_old"] and loc["max_new"] == loc["max_old"]:
            return EMPTY
        loc["taken_old"] = loc["taken_new"]
        loc["max_old"] = loc["max_new"]
        prog.iters += 1
        prog.pc = "take:read-max"
        return None

    def take_read_item(self, inst, prog):
        loc = prog.loc
        x = inst.access(prog, "take:read-item", inst.memory.cell(R, "Items", loc["i"]), "read")
        if x is not BOTTOM:
            loc["x"] = x
            prog.pc = "take:t&s"
            return None
        loc["i"] += 1
        return self._scan(prog)

    def take_ts(self, inst, prog):
        loc = prog.loc
        if inst.access(prog, "take:t&s", inst.memory.cell(TAS, "TS", loc["i"]), "t&s") == 0:
            return loc["x"]
        loc["taken_new"] += 1
        loc["i"] += 1
        loc.pop("x")
        return self._scan(prog)


class UnboundedSL(Machine):
    """Unbounded bag: Inserts claim a slot from Allocated and publish it through Done."""

    algorithm = AlgorithmId.UNBOUNDED_SL
    insert_first = "insert:inc-alloc"
    take_first = "take:read-done"
    lines = ("insert:inc-alloc", "insert:write-item", "insert:inc-done",
             "take:read-done", "take:read-alloc", "take:read-item", "take:t&s", "take:reread-done")

    ALLOCATED = ObjectId(FAI, "Allocated")
    DONE = ObjectId(FAI, "Done")

    def build(self, n, b):
        mem = Memory()
        _unbounded_arrays(mem)
        mem.declare(FAI, "Allocated", 0)
        mem.declare(FAI, "Done", 0)
        return mem

    def insert_inc_alloc(self, inst, prog):
        prog.loc["m"] = inst.access(prog, "insert:inc-alloc", self.ALLOCATED, "f&i") + 1
        prog.pc = "insert:write-item"

    def insert_write_item(self, inst, prog):
        inst.access(prog, "insert:write-item", inst.memory.cell(R, "Items", prog.loc["m"]), "write", prog.loc["x"])
        prog.pc = "insert:inc-done"

    def insert_inc_done(self, inst, prog):
        inst.access(prog, "insert:inc-done", self.DONE, "f&i")
        return OK

    def take_read_done(self, inst, prog):
        prog.loc = {"d": inst.access(prog, "take:read-done", self.DONE, "read")}
        prog.pc = "take:read-alloc"

    def take_read_alloc(self, inst, prog):
        prog.loc["m"] = inst.access(prog, "take:read-alloc", self.ALLOCATED, "read")
        prog.loc["i"] = 1
        self._scan(prog)

    def _scan(self, prog):
        prog.pc = "take:read-item" if prog.loc["i"] <= prog.loc["m"] else "take:reread-done"

    def take_read_item(self, inst, prog):
        loc = prog.loc
        x = inst.access(prog, "take:read-item", inst.memory.cell(R, "Items", loc["i"]), "read")
        if x is not BOTTOM:
            loc["x"] = x
            prog.pc = "take:t&s"
        else:
            loc["i"] += 1
            self._scan(prog)

    def take_ts(self, inst, prog):
        loc = prog.loc
        if inst.access(prog, "take:t&s", inst.memory.cell(TAS, "TS", loc["i"]), "t&s") == 0:
            return loc["x"]
        loc["i"] += 1
        del loc["x"]
        self._scan(prog)

    def take_reread_done(self, inst, prog):
        if inst.access(prog, "take:reread-done", self.DONE, "read") == prog.loc["d"]:
            return EMPTY
        prog.iters += 1
        prog.pc = "take:read-done"
