"""Task graphs: construction, hazard inference, fusion, DOT emission.

A task is one kernel launch over an index space, naming the buffers it reads
and writes.  Dependencies are never declared by the caller; they are inferred
from buffer overlap: read-after-write edges from the last writer of each read
buffer, plus write-after-write and write-after-read edges so that executing
tasks in any edge-respecting order reproduces plain submission-order
semantics bit for bit.  Edges always point from a lower submission index to a
higher one, so the graph is acyclic by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .devices import DeviceId, _check_index_space
from .errors import GraphError

_ELEMENTS = {"u8": np.uint8, "u16": np.uint16, "f32": np.float32}


@dataclass(frozen=True)
class BufferDesc:
    id: str
    element: str
    shape: tuple

    def __post_init__(self):
        if self.element not in _ELEMENTS:
            raise GraphError(f"unsupported element type {self.element!r}")
        object.__setattr__(self, "shape", _check_index_space(self.shape))

    @property
    def dtype(self):
        return np.dtype(_ELEMENTS[self.element])

    @property
    def nbytes(self) -> int:
        return int(np.prod(self.shape)) * self.dtype.itemsize


@dataclass(frozen=True)
class TaskMeta:
    device_hint: Optional[DeviceId] = None
    profile: bool = False


@dataclass(frozen=True)
class Task:
    kernel: str
    reads: tuple
    writes: tuple
    index_space: tuple
    params: tuple = ()
    meta: TaskMeta = field(default_factory=TaskMeta)

    def __post_init__(self):
        object.__setattr__(self, "reads", tuple(self.reads))
        object.__setattr__(self, "writes", tuple(self.writes))
        object.__setattr__(self, "index_space", _check_index_space(self.index_space))
        object.__setattr__(self, "params", tuple(self.params))


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    buffer: str
    hazard: str  # raw | waw | war


class TaskGraph:
    """Submission-ordered task list plus inferred dependency edges."""

    _counter = 0

    def __init__(self, runtime, name: str = "graph"):
        TaskGraph._counter += 1
        self.runtime = runtime
        self.name = name
        self.graph_id = f"{name}#{TaskGraph._counter}"
        self.tasks: list[Task] = []
        self.edges: list[Edge] = []
        self.deps_inferred = False

    def add_task(self, task: Task) -> int:
        """Append a task; validates its kernel and buffers. Returns the task id."""
        kernel = self.runtime.registry.get(task.kernel)
        for b in task.reads + task.writes:
            if b not in self.runtime.buffers:
                raise GraphError(f"unknown buffer {b!r} in task {task.kernel!r}")
        if len(task.reads) != kernel.n_reads or len(task.writes) != kernel.n_writes:
            raise GraphError(
                f"task {task.kernel!r} arity mismatch: declared "
                f"{len(task.reads)}/{len(task.writes)}, kernel wants "
                f"{kernel.n_reads}/{kernel.n_writes}")
        self.tasks.append(task)
        self.deps_inferred = False
        return len(self.tasks) - 1

    def written_buffers(self) -> list[str]:
        seen = {}
        for t in self.tasks:
            for b in t.writes:
                seen.setdefault(b, None)
        return list(seen)

    def successors(self):
        succ = [[] for _ in self.tasks]
        for e in self.edges:
            succ[e.src].append(e.dst)
        return succ

    def predecessors(self):
        pred = [[] for _ in self.tasks]
        for e in self.edges:
            pred[e.dst].append(e.src)
        return pred


def infer_dependencies(graph: TaskGraph) -> TaskGraph:
    """Populate graph.edges from buffer hazards; returns the same graph.

    Per buffer, walking tasks in submission order: a reader depends on the
    last writer (RAW); a writer depends on the previous writer (WAW) and on
    every reader since that writer (WAR).  Duplicate pairs are collapsed,
    keeping the first hazard found.
    """
    edges: dict[tuple[int, int], Edge] = {}
    last_writer: dict[str, int] = {}
    readers_since: dict[str, list[int]] = {}

    def put(src, dst, buf, hazard):
        if src == dst:
            return
        edges.setdefault((src, dst), Edge(src, dst, buf, hazard))

    for j, task in enumerate(graph.tasks):
        for b in task.reads:
            if b in last_writer:
                put(last_writer[b], j, b, "raw")
        for b in task.writes:
            if b in last_writer:
                put(last_writer[b], j, b, "waw")
            for r in readers_since.get(b, ()):
                put(r, j, b, "war")
        for b in task.writes:
            last_writer[b] = j
            readers_since[b] = []
        for b in task.reads:
            if b not in task.writes:
                readers_since.setdefault(b, []).append(j)

    graph.edges = sorted(edges.values(), key=lambda e: (e.src, e.dst))
    graph.deps_inferred = True
    return graph


def fuse(graph: TaskGraph, a: int, b: int) -> TaskGraph:
    """Merge producer task ``a`` into consumer ``b`` via the registered composition.

    Valid only when a->b is a dependency edge, both tasks cover the same
    index space, and a's single written buffer is consumed by b alone among
    the graph's tasks (a dead intermediate).  The fused graph drops that
    buffer from its transfer surface; outputs are bitwise equal to the
    unfused graph.
    """
    if not graph.deps_inferred:
        infer_dependencies(graph)
    if not (0 <= a < len(graph.tasks) and 0 <= b < len(graph.tasks)):
        raise GraphError(f"fuse: no such tasks ({a}, {b})")
    ta, tb = graph.tasks[a], graph.tasks[b]
    if not any(e.src == a and e.dst == b for e in graph.edges):
        raise GraphError(f"fuse: no dependency edge {a}->{b}")
    if ta.index_space != tb.index_space:
        raise GraphError("fuse: index spaces differ")
    fused_name = graph.runtime.registry.fused_for(ta.kernel, tb.kernel)
    if fused_name is None:
        raise GraphError(f"fuse: no registered composition for ({ta.kernel}, {tb.kernel})")
    if len(ta.writes) != 1:
        raise GraphError("fuse: producer must write exactly one buffer")
    inter = ta.writes[0]
    if inter not in tb.reads:
        raise GraphError(f"fuse: consumer does not read {inter!r}")
    for k, t in enumerate(graph.tasks):
        if k in (a, b):
            continue
        if inter in t.reads or inter in t.writes:
            raise GraphError(f"fuse: intermediate {inter!r} is live in task {k}")
    written_here = set(graph.written_buffers())
    for r in tb.reads:
        if r != inter and r in written_here and r not in ta.reads:
            # b would consume another graph-internal product through the fused
            # task without a's ordering; keep fusion to the single-intermediate case.
            raise GraphError(f"fuse: consumer reads second intermediate {r!r}")

    c_reads = [r for r in tb.reads if r != inter]
    fused_task = Task(
        kernel=fused_name,
        reads=tuple(ta.reads) + tuple(c_reads),
        writes=tb.writes,
        index_space=ta.index_space,
        params=tuple(ta.params) + tuple(tb.params),
        meta=tb.meta,
    )
    out = TaskGraph(graph.runtime, graph.name + "+fused")
    for k, t in enumerate(graph.tasks):
        if k == a:
            out.tasks.append(fused_task)
        elif k == b:
            continue
        else:
            out.tasks.append(t)
    return infer_dependencies(out)


class DeviceMapping:
    """Total assignment of task ids to device ids; immutable, remap returns a copy."""

    def __init__(self, assignment: dict[int, DeviceId]):
        self._assignment = dict(assignment)

    @classmethod
    def uniform(cls, graph: TaskGraph, device: DeviceId) -> "DeviceMapping":
        return cls({i: device for i in range(len(graph.tasks))})

    @classmethod
    def by_task(cls, graph: TaskGraph, chooser) -> "DeviceMapping":
        """Build from ``chooser(task_id, task) -> DeviceId``."""
        return cls({i: chooser(i, t) for i, t in enumerate(graph.tasks)})

    def device_for(self, task_id: int) -> DeviceId:
        return self._assignment[task_id]

    def remap(self, task_id: int, device: DeviceId) -> "DeviceMapping":
        if task_id not in self._assignment:
            raise GraphError(f"remap: unknown task {task_id}")
        new = dict(self._assignment)
        new[task_id] = device
        return DeviceMapping(new)

    def validate(self, graph: TaskGraph, devices) -> None:
        for i in range(len(graph.tasks)):
            if i not in self._assignment:
                raise GraphError(f"mapping is not total: task {i} unmapped")
            if self._assignment[i] not in devices:
                raise GraphError(f"mapping names unregistered device {self._assignment[i]}")

    def items(self):
        return self._assignment.items()

    def __eq__(self, other):
        return isinstance(other, DeviceMapping) and self._assignment == other._assignment


def to_dot(graph: TaskGraph, mapping: Optional[DeviceMapping] = None) -> str:
    """Render the graph as DOT: nodes "idx:kernel@device", edges "buffer (bytes)"."""
    if not graph.deps_inferred:
        infer_dependencies(graph)
    lines = [f'digraph "{graph.graph_id}" {{', "  rankdir=LR;"]
    for i, t in enumerate(graph.tasks):
        dev = str(mapping.device_for(i)) if mapping is not None else "?"
        lines.append(f'  t{i} [label="{i}:{t.kernel}@{dev}" shape=box];')
    for e in graph.edges:
        nbytes = graph.runtime.buffers[e.buffer].nbytes
        lines.append(f'  t{e.src} -> t{e.dst} [label="{e.buffer} ({nbytes} B)"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
