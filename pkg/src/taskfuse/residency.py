"""Buffer residency tracking and transfer planning.

Every buffer carries a monotonically increasing version; each (buffer,
device) pair remembers which version it holds.  A write (by a task or by the
host) bumps the version and makes the writing device the sole owner of the
latest copy; a copy propagates the current version without bumping it.  The
planner walks the graph in submission order (which is a topological order,
since inferred edges only point forward) and emits exactly the copies needed
to make every read valid at launch, plus a sync of written buffers back to
the host at graph end.  Buffers already valid at the destination produce no
copy, which is what eliminates redundant transfers across tasks and across
successive graphs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .devices import DeviceId
from .errors import GraphError


@dataclass
class _BufferState:
    version: int = 0
    owner: Optional[DeviceId] = None
    holders: dict = field(default_factory=dict)  # DeviceId -> version held


class ResidencyState:
    """Per-(buffer, device) validity versions; the scheduler is the sole mutator."""

    def __init__(self, host: DeviceId):
        self.host = host
        self._state: dict[str, _BufferState] = {}

    def declare(self, buffer_id: str):
        # Declared buffers start as version 0 owned by the host (zero-filled).
        st = _BufferState(version=0, owner=self.host)
        st.holders[self.host] = 0
        self._state[buffer_id] = st

    def buffers(self):
        return tuple(self._state)

    def latest(self, buffer_id: str) -> int:
        return self._state[buffer_id].version

    def owner(self, buffer_id: str) -> DeviceId:
        return self._state[buffer_id].owner

    def is_valid(self, buffer_id: str, device: DeviceId) -> bool:
        st = self._state[buffer_id]
        return st.holders.get(device) == st.version

    def note_write(self, buffer_id: str, device: DeviceId):
        st = self._state[buffer_id]
        st.version += 1
        st.owner = device
        st.holders = {device: st.version}

    def note_copy(self, buffer_id: str, src: DeviceId, dst: DeviceId):
        st = self._state[buffer_id]
        if st.holders.get(src) != st.version:
            raise GraphError(
                f"copy of stale residency: {buffer_id!r} v{st.version} not valid on {src}")
        st.holders[dst] = st.version

    def clone(self) -> "ResidencyState":
        out = ResidencyState(self.host)
        for b, st in self._state.items():
            c = _BufferState(st.version, st.owner, dict(st.holders))
            out._state[b] = c
        return out


@dataclass(frozen=True)
class CopyRecord:
    buffer: str
    src: DeviceId
    dst: DeviceId
    nbytes: int
    before_task: Optional[int]  # None = graph-end sync back to host


@dataclass
class TransferPlan:
    copies: list

    def __len__(self):
        return len(self.copies)

    def before(self, task_id: Optional[int]):
        return [c for c in self.copies if c.before_task == task_id]

    def total_bytes(self) -> int:
        return sum(c.nbytes for c in self.copies)


def plan_transfers(graph, mapping, residency: ResidencyState) -> TransferPlan:
    """Plan the minimal copy set for executing ``graph`` under ``mapping``.

    Simulates residency over submission order without mutating the real
    state.  Written buffers are synced back to the host at graph end (the
    host always observes results), which also keeps later graphs' host-side
    reads free.
    """
    if not graph.deps_inferred:
        raise GraphError("plan_transfers: dependencies not inferred")
    mapping.validate(graph, graph.runtime.devices)
    sim = residency.clone()
    host = sim.host
    copies: list[CopyRecord] = []
    descs = graph.runtime.buffers

    for tid, task in enumerate(graph.tasks):
        dev = mapping.device_for(tid)
        for b in task.reads:
            if not sim.is_valid(b, dev):
                src = sim.owner(b)
                copies.append(CopyRecord(b, src, dev, descs[b].nbytes, tid))
                sim.note_copy(b, src, dev)
        for b in task.writes:
            sim.note_write(b, dev)

    for b in graph.written_buffers():
        if not sim.is_valid(b, host):
            src = sim.owner(b)
            copies.append(CopyRecord(b, src, host, descs[b].nbytes, None))
            sim.note_copy(b, src, host)
    return TransferPlan(copies)
