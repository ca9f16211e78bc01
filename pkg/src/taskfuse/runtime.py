"""Runtime session: devices, kernel registry, buffers, residency, execution.

The host is always ``serial-cpu:0``; dataset frames are written into its pool
and graph outputs are synced back to it.  Residency persists across graph
executions, so a buffer produced on an accelerator by one graph is still
valid there for the next one -- repeated uploads are planned away rather than
re-issued.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .devices import Device, DeviceId, KernelRegistry, SimAccelConfig, make_device
from .errors import GraphError
from .executor import ExecutionReport, execute
from .graph import BufferDesc, DeviceMapping, TaskGraph
from .residency import ResidencyState, TransferPlan, plan_transfers


class Runtime:
    def __init__(self, *, workers: int = 4, debug: bool = False, seed: int = 0,
                 accel_config: Optional[SimAccelConfig] = None):
        self.default_workers = workers
        self.debug = debug
        self.seed = seed
        self.registry = KernelRegistry()
        self.buffers: dict[str, BufferDesc] = {}
        self.devices: dict[DeviceId, Device] = {}
        self.host_id = self.add_device("serial-cpu", 0)
        self.residency = ResidencyState(self.host_id)
        self._accel_config = accel_config
        self._executing = False
        self.host_fetch_bytes = 0

    # -- devices -------------------------------------------------------------

    def add_device(self, kind: str, index: Optional[int] = None, *,
                   workers: int = 1, accel_config: Optional[SimAccelConfig] = None) -> DeviceId:
        if index is None:
            index = sum(1 for d in self.devices if d.kind == kind)
        cfg = accel_config or getattr(self, "_accel_config", None)
        dev = make_device(kind, index, workers=workers, accel_config=cfg, debug=self.debug)
        if dev.id in self.devices:
            raise GraphError(f"device {dev.id} already registered")
        self.devices[dev.id] = dev
        return dev.id

    def device(self, spec) -> DeviceId:
        """Resolve 'kind' or 'kind:index' (or a DeviceId) to a registered id."""
        if isinstance(spec, DeviceId):
            if spec not in self.devices:
                raise GraphError(f"unregistered device {spec}")
            return spec
        kind, _, idx = str(spec).partition(":")
        if idx:
            did = DeviceId(kind, int(idx))
            if did not in self.devices:
                raise GraphError(f"unregistered device {did}")
            return did
        for did in self.devices:
            if did.kind == kind:
                return did
        raise GraphError(f"no device of kind {kind!r} registered")

    def host(self) -> Device:
        return self.devices[self.host_id]

    def inventory(self) -> str:
        return "\n".join(self.devices[d].inventory_line() for d in self.devices)

    # -- buffers ---------------------------------------------------------------

    def declare_buffer(self, buffer_id: str, element: str, shape) -> BufferDesc:
        if buffer_id in self.buffers:
            raise GraphError(f"buffer {buffer_id!r} already declared")
        desc = BufferDesc(buffer_id, element, tuple(shape))
        self.buffers[buffer_id] = desc
        self.host().ensure_alloc(buffer_id, desc.shape, desc.dtype)
        self.residency.declare(buffer_id)
        return desc

    def write_buffer(self, buffer_id: str, data) -> None:
        """Host-side write of a whole buffer; bumps its version."""
        desc = self._desc(buffer_id)
        arr = np.asarray(data)
        if arr.shape != desc.shape:
            raise GraphError(f"buffer {buffer_id!r} expects shape {desc.shape}, got {arr.shape}")
        host_arr = self.host().memory[buffer_id]
        host_arr[...] = arr.astype(desc.dtype, copy=False)
        self.residency.note_write(buffer_id, self.host_id)

    def read_buffer(self, buffer_id: str) -> np.ndarray:
        """Latest buffer contents as a read-only host-side view."""
        desc = self._desc(buffer_id)
        if not self.residency.is_valid(buffer_id, self.host_id):
            owner = self.residency.owner(buffer_id)
            src = self.devices[owner]
            dst = self.host()
            dst.ensure_alloc(buffer_id, desc.shape, desc.dtype)
            np.copyto(dst.memory[buffer_id], src.memory[buffer_id])
            self.residency.note_copy(buffer_id, owner, self.host_id)
            self.host_fetch_bytes += desc.nbytes
        view = self.host().memory[buffer_id].view()
        view.flags.writeable = False
        return view

    def _desc(self, buffer_id) -> BufferDesc:
        if buffer_id not in self.buffers:
            raise GraphError(f"unknown buffer {buffer_id!r}")
        return self.buffers[buffer_id]

    # -- graphs ------------------------------------------------------------------

    def new_graph(self, name: str = "graph") -> TaskGraph:
        return TaskGraph(self, name)

    def uniform_mapping(self, graph: TaskGraph, device) -> DeviceMapping:
        return DeviceMapping.uniform(graph, self.device(device))

    def plan(self, graph: TaskGraph, mapping: DeviceMapping) -> TransferPlan:
        return plan_transfers(graph, mapping, self.residency)

    def execute(self, graph: TaskGraph, mapping: DeviceMapping,
                plan: Optional[TransferPlan] = None, *, workers: Optional[int] = None,
                tick_hook=None) -> ExecutionReport:
        return execute(self, graph, mapping, plan, workers=workers, tick_hook=tick_hook)

    def remap(self, mapping: DeviceMapping, task_id: int, device) -> DeviceMapping:
        """New mapping with one task moved; rejected while a graph is executing."""
        if self._executing:
            raise GraphError("remap during execution is not allowed")
        return mapping.remap(task_id, self.device(device))
