"""Execution backends and the kernel registry.

Three device kinds are provided: ``serial-cpu`` (the host; runs kernels over
the whole index space), ``parallel-cpu`` (partitions the outermost index-space
extent across worker threads), and ``sim-accel`` (a simulated accelerator with
its own memory pool and a modeled transfer/launch cost, standing in for a GPU
or FPGA target).

Kernel bodies are pure functions ``body(span, reads, writes, params)`` over a
row span ``[lo, hi)`` of the outermost extent: an output element may depend
only on the element index, the read buffers and the scalar params, and the
body must write only rows of its declared write buffers inside the span.
Kernels that do not read their write buffers must write every element of
them; together these rules make outputs bitwise identical on every device
kind and under any partitioning.  Kernels flagged non-partitionable (e.g.
fixed-order reductions) always run as a single span.

A real OpenCL/GPU backend would slot in behind the same surface: it needs a
memory pool keyed by buffer id, ``launch`` over an index space, and ``copy``
in and out; residency planning above this layer is device-agnostic.
"""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DeviceError, GraphError, KernelContractError

DEVICE_KINDS = ("serial-cpu", "parallel-cpu", "sim-accel")


@dataclass(frozen=True)
class DeviceId:
    kind: str
    index: int = 0

    def __post_init__(self):
        if self.kind not in DEVICE_KINDS:
            raise DeviceError(f"unknown device kind {self.kind!r}")

    def __str__(self):
        return f"{self.kind}:{self.index}"


@dataclass(frozen=True)
class SimAccelConfig:
    """Modeled cost parameters for the simulated accelerator (PCIe-class defaults)."""

    bandwidth: float = 6.0 * 1024**3   # bytes/second
    latency: float = 20e-6             # seconds per transfer
    launch_overhead: float = 10e-6     # seconds per kernel launch

    def __post_init__(self):
        if self.bandwidth <= 0 or self.latency <= 0 or self.launch_overhead <= 0:
            raise DeviceError("SimAccelConfig values must be strictly positive")


@dataclass(frozen=True)
class KernelDef:
    name: str
    body: Callable
    n_reads: int
    n_writes: int
    elementwise: bool = False
    halo: int = 0                 # stencil halo rows when consuming a fused producer
    partitionable: bool = True


class KernelRegistry:
    """Name -> kernel definition, plus the fused-composition table."""

    def __init__(self):
        self._kernels: dict[str, KernelDef] = {}
        self._fused: dict[tuple[str, str], str] = {}

    def register(self, name, body, n_reads, n_writes, *, elementwise=False,
                 halo=0, partitionable=True):
        if name in self._kernels:
            raise GraphError(f"kernel {name!r} already registered")
        self._kernels[name] = KernelDef(name, body, n_reads, n_writes,
                                        elementwise=elementwise, halo=halo,
                                        partitionable=partitionable)

    def get(self, name) -> KernelDef:
        if name not in self._kernels:
            raise GraphError(f"unknown kernel {name!r}")
        return self._kernels[name]

    def __contains__(self, name):
        return name in self._kernels

    def names(self):
        return tuple(self._kernels)

    def register_fused(self, producer: str, consumer: str, inter_shape,
                       inter_dtype, n_producer_params: int, inter_pos: int = 0,
                       name: Optional[str] = None) -> str:
        """Register the composition of an elementwise producer into a consumer.

        The producer's single output becomes a kernel-local scratch buffer of
        shape ``inter_shape``: for a span the producer is evaluated over the
        span widened by the consumer's stencil halo, then the consumer runs
        with the scratch standing in for read ``inter_pos``.  Being
        elementwise, the recomputed halo rows are bitwise identical to a
        whole-buffer evaluation, so fused and unfused results agree exactly.
        """
        p, c = self.get(producer), self.get(consumer)
        if not p.elementwise:
            raise GraphError(f"fusion producer {producer!r} is not elementwise")
        if p.n_writes != 1:
            raise GraphError(f"fusion producer {producer!r} must write exactly one buffer")
        fused_name = name or f"{producer}+{consumer}"
        inter_shape = tuple(int(e) for e in inter_shape)
        inter_dtype = np.dtype(inter_dtype)
        halo = c.halo

        def body(span, reads, writes, params):
            lo, hi = span
            e0, e1 = max(0, lo - halo), min(inter_shape[0], hi + halo)
            scratch = np.zeros(inter_shape, dtype=inter_dtype)
            p.body((e0, e1), reads[:p.n_reads], [scratch], params[:n_producer_params])
            c_reads = list(reads[p.n_reads:])
            c_reads.insert(inter_pos, scratch)
            c.body(span, c_reads, writes, params[n_producer_params:])

        self.register(fused_name, body,
                      p.n_reads + c.n_reads - 1, c.n_writes,
                      elementwise=p.elementwise and c.elementwise and halo == 0,
                      partitionable=p.partitionable and c.partitionable)
        self._fused[(producer, consumer)] = fused_name
        return fused_name

    def fused_for(self, producer: str, consumer: str) -> Optional[str]:
        return self._fused.get((producer, consumer))


def _check_index_space(index_space):
    extents = tuple(int(e) for e in index_space)
    if not 1 <= len(extents) <= 3:
        raise DeviceError(f"index space needs 1-3 extents, got {extents}")
    if any(e < 1 for e in extents):
        raise DeviceError(f"index space extents must be >= 1, got {extents}")
    return extents


def _span_chunks(n, parts):
    bounds = [round(i * n / parts) for i in range(parts + 1)]
    return [(bounds[i], bounds[i + 1]) for i in range(parts) if bounds[i] < bounds[i + 1]]


class Device:
    """One execution backend with its own buffer pool."""

    def __init__(self, device_id: DeviceId, *, workers: int = 1,
                 accel_config: Optional[SimAccelConfig] = None, debug: bool = False):
        self.id = device_id
        self.workers = max(1, int(workers))
        self.accel_config = accel_config
        self.debug = debug
        self.memory: dict[str, np.ndarray] = {}
        self._pool: Optional[ThreadPoolExecutor] = None
        self._pool_lock = threading.Lock()

    # -- memory ------------------------------------------------------------

    def ensure_alloc(self, buffer_id: str, shape, dtype) -> np.ndarray:
        arr = self.memory.get(buffer_id)
        if arr is None:
            arr = np.zeros(shape, dtype=dtype)
            self.memory[buffer_id] = arr
        return arr

    # -- execution ---------------------------------------------------------

    def launch(self, kernel: KernelDef, index_space, reads, writes, params=()):
        """Run one kernel over an index space; returns (wall, modeled) seconds."""
        extents = _check_index_space(index_space)
        if len(reads) != kernel.n_reads or len(writes) != kernel.n_writes:
            raise DeviceError(
                f"kernel {kernel.name!r} expects {kernel.n_reads} reads / "
                f"{kernel.n_writes} writes, got {len(reads)}/{len(writes)}")

        guards = None
        if self.debug:
            write_ids = {id(w) for w in writes}
            guards = [(r, r.copy()) for r in reads if id(r) not in write_ids]

        t0 = time.perf_counter()
        n0 = extents[0]
        if kernel.partitionable and self.id.kind == "parallel-cpu" and self.workers > 1 and n0 > 1:
            chunks = _span_chunks(n0, min(self.workers, n0))
            futures = [self._get_pool().submit(kernel.body, span, reads, writes, params)
                       for span in chunks]
            for f in futures:
                f.result()
        else:
            kernel.body((0, n0), reads, writes, params)
        wall = time.perf_counter() - t0

        if guards is not None:
            for ref, snap in guards:
                if not np.array_equal(ref, snap):
                    raise KernelContractError(
                        f"kernel {kernel.name!r} wrote outside its write set")

        modeled = wall
        if self.accel_config is not None:
            modeled = self.accel_config.launch_overhead + wall
        return wall, modeled

    def _get_pool(self) -> ThreadPoolExecutor:
        with self._pool_lock:
            if self._pool is None:
                self._pool = ThreadPoolExecutor(max_workers=self.workers)
            return self._pool

    # -- reporting ---------------------------------------------------------

    def inventory_line(self) -> str:
        cfg = "-"
        if self.accel_config is not None:
            c = self.accel_config
            cfg = (f"bw={c.bandwidth / 1024**3:.1f}GiB/s lat={c.latency * 1e6:.0f}us "
                   f"launch={c.launch_overhead * 1e6:.0f}us")
        return f"{self.id} {self.id.kind} {self.workers} {cfg}"


def make_device(kind: str, index: int = 0, *, workers: int = 1,
                accel_config: Optional[SimAccelConfig] = None, debug: bool = False) -> Device:
    dev_id = DeviceId(kind, index)
    if kind == "sim-accel" and accel_config is None:
        accel_config = SimAccelConfig()
    if kind != "sim-accel":
        accel_config = None
    return Device(dev_id, workers=workers, accel_config=accel_config, debug=debug)


def copy_cost(nbytes: int, src: Device, dst: Device) -> float:
    """Modeled seconds to move ``nbytes`` from src to dst (0 for host<->host)."""
    if src.id == dst.id:
        return 0.0
    cfg = dst.accel_config or src.accel_config
    if cfg is None:
        return 0.0
    return cfg.latency + nbytes / cfg.bandwidth


def copy_buffer(buffer_id: str, src: Device, dst: Device) -> float:
    """Copy one buffer's bytes between device pools; returns modeled seconds."""
    if src.id == dst.id:
        return 0.0
    data = src.memory.get(buffer_id)
    if data is None:
        raise DeviceError(f"copy source {src.id} holds no bytes for {buffer_id!r}")
    dst_arr = dst.ensure_alloc(buffer_id, data.shape, data.dtype)
    np.copyto(dst_arr, data)
    return copy_cost(data.nbytes, src, dst)
