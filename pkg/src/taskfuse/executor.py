"""Graph execution: dependency-ordered launches with transfer overlap.

Two paths share all bookkeeping: a threaded scheduler that runs independent
tasks concurrently (copies ride in each task's prologue, so transfers overlap
unrelated compute), and an inline serial loop used when a tick hook is
installed, where "tick = completed-task count" must be a deterministic time
base.  Because kernels are pure over their declared buffers and hazard edges
ordered every conflicting pair, final buffer bytes are identical on both
paths and under any mapping.

On a kernel failure the graph aborts: buffers the graph writes are restored
from a pre-execution snapshot and re-homed to the host, so partial results
are never observable downstream.
"""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .devices import copy_buffer
from .errors import GraphError, TaskFailure
from .residency import TransferPlan, plan_transfers


@dataclass
class TaskRecord:
    task_id: int
    kernel: str
    device: str
    wall: float
    modeled: float


@dataclass
class CopyDone:
    buffer: str
    src: str
    dst: str
    nbytes: int
    before_task: object
    modeled: float

    @property
    def category(self) -> str:
        if self.before_task is None:
            return "output"
        return "input" if self.src_is_host else "intertask"

    src_is_host: bool = False


@dataclass
class ExecutionReport:
    graph_id: str
    seed: int
    task_records: list = field(default_factory=list)
    copy_records: list = field(default_factory=list)
    trace: list = field(default_factory=list)  # (tick, task_id, kernel, reads, writes)
    wall_total: float = 0.0

    @property
    def launches(self) -> int:
        return len(self.task_records)

    @property
    def transfers(self) -> int:
        return len(self.copy_records)

    def bytes_by_category(self) -> dict:
        out = {"input": 0, "intertask": 0, "output": 0}
        for c in self.copy_records:
            out[c.category] += c.nbytes
        return out

    def copies_by_category(self) -> dict:
        out = {"input": 0, "intertask": 0, "output": 0}
        for c in self.copy_records:
            out[c.category] += 1
        return out

    @property
    def total_bytes(self) -> int:
        return sum(c.nbytes for c in self.copy_records)

    @property
    def modeled_total(self) -> float:
        return (sum(t.modeled for t in self.task_records)
                + sum(c.modeled for c in self.copy_records))


class _Run:
    """Shared state for one graph execution."""

    def __init__(self, runtime, graph, mapping, plan):
        self.runtime = runtime
        self.graph = graph
        self.mapping = mapping
        self.plan = plan
        self.lock = threading.Lock()
        self.report = ExecutionReport(graph.graph_id, runtime.seed)
        self.tick = 0
        self.failure = None

    def prologue(self, tid):
        """Make the task's reads valid on its device and collect kernel arguments.

        Input copies happen on demand here rather than at the planner's
        trigger points: hazard edges pin down which buffer *version* each
        task observes, but under concurrency a read may become due before
        the submission-order task the planner attached it to.  Each missing
        (buffer, version) is copied exactly once from the version's owner,
        so the executed copy multiset equals the planned one.
        """
        runtime, graph = self.runtime, self.graph
        task = graph.tasks[tid]
        dev = runtime.devices[self.mapping.device_for(tid)]
        with self.lock:
            for b in task.reads:
                if not runtime.residency.is_valid(b, dev.id):
                    self._do_copy(b, runtime.residency.owner(b), dev.id, tid)
            reads = [dev.memory[b] for b in task.reads]
            writes = []
            for b in task.writes:
                desc = runtime.buffers[b]
                writes.append(dev.ensure_alloc(b, desc.shape, desc.dtype))
        return dev, reads, writes

    def _do_copy(self, buffer, src, dst, before_task):
        runtime = self.runtime
        if not runtime.residency.is_valid(buffer, src):
            raise GraphError(
                f"planner bug: copy of {buffer!r} from {src} which is stale")
        modeled = copy_buffer(buffer, runtime.devices[src], runtime.devices[dst])
        runtime.residency.note_copy(buffer, src, dst)
        self.report.copy_records.append(CopyDone(
            buffer, str(src), str(dst), runtime.buffers[buffer].nbytes, before_task,
            modeled, src_is_host=(src == runtime.host_id)))

    def complete(self, tid, wall, modeled):
        task = self.graph.tasks[tid]
        dev_id = self.mapping.device_for(tid)
        with self.lock:
            for b in task.writes:
                self.runtime.residency.note_write(b, dev_id)
            self.report.task_records.append(
                TaskRecord(tid, task.kernel, str(dev_id), wall, modeled))
            self.report.trace.append((self.tick, tid, task.kernel, task.reads, task.writes))
            self.tick += 1

    def finish_outputs(self):
        with self.lock:
            for rec in self.plan.before(None):
                if self.runtime.residency.is_valid(rec.buffer, rec.dst):
                    continue
                self._do_copy(rec.buffer, self.runtime.residency.owner(rec.buffer),
                              rec.dst, None)


def _snapshot_writes(runtime, graph):
    snaps = {}
    for b in graph.written_buffers():
        owner = runtime.residency.owner(b)
        snaps[b] = runtime.devices[owner].memory[b].copy()
    return snaps


def _rollback(runtime, snaps):
    host = runtime.devices[runtime.host_id]
    for b, data in snaps.items():
        dst = host.ensure_alloc(b, data.shape, data.dtype)
        dst[...] = data
        runtime.residency.note_write(b, runtime.host_id)


def execute(runtime, graph, mapping, plan: TransferPlan = None, *,
            workers: int = None, tick_hook=None) -> ExecutionReport:
    """Execute a graph under a mapping; returns the execution report.

    ``tick_hook(tick, report)``, when given, is called after every task
    completion with the just-finished tick index; this forces the serial
    path so tick numbering is scheduler-independent.
    """
    if not graph.deps_inferred:
        raise GraphError("execute: dependencies not inferred")
    mapping.validate(graph, runtime.devices)
    if plan is None:
        plan = plan_transfers(graph, mapping, runtime.residency)
    if workers is None:
        workers = runtime.default_workers
    run = _Run(runtime, graph, mapping, plan)
    snaps = _snapshot_writes(runtime, graph)
    runtime._executing = True
    t0 = time.perf_counter()
    try:
        if tick_hook is not None or workers <= 1 or len(graph.tasks) <= 1:
            _run_serial(run, tick_hook)
        else:
            _run_threaded(run, workers)
        run.finish_outputs()
    except Exception:
        _rollback(runtime, snaps)
        raise
    finally:
        runtime._executing = False
    run.report.wall_total = time.perf_counter() - t0
    return run.report


def _launch(run, tid):
    task = run.graph.tasks[tid]
    dev, reads, writes = run.prologue(tid)
    kernel = run.runtime.registry.get(task.kernel)
    try:
        wall, modeled = dev.launch(kernel, task.index_space, reads, writes, task.params)
    except Exception as exc:
        raise TaskFailure(tid, task.kernel, exc) from exc
    run.complete(tid, wall, modeled)


def _run_serial(run, tick_hook):
    for tid in range(len(run.graph.tasks)):
        _launch(run, tid)
        if tick_hook is not None:
            tick_hook(run.tick - 1, run.report)


def _run_threaded(run, workers):
    graph = run.graph
    n = len(graph.tasks)
    indeg = [0] * n
    succ = graph.successors()
    for e in graph.edges:
        indeg[e.dst] += 1

    done = threading.Event()
    state = {"remaining": n, "failure": None}
    pool = ThreadPoolExecutor(max_workers=workers)

    def job(tid):
        try:
            if state["failure"] is None:
                _launch(run, tid)
        except Exception as exc:
            with run.lock:
                if state["failure"] is None:
                    state["failure"] = exc
        newly_ready = []
        with run.lock:
            state["remaining"] -= 1
            if state["remaining"] == 0:
                done.set()
            for s in succ[tid]:
                indeg[s] -= 1
                if indeg[s] == 0:
                    newly_ready.append(s)
        for s in sorted(newly_ready):
            pool.submit(job, s)

    roots = [i for i in range(n) if indeg[i] == 0]
    for tid in roots:
        pool.submit(job, tid)
    done.wait()
    pool.shutdown(wait=True)
    if state["failure"] is not None:
        raise state["failure"]
