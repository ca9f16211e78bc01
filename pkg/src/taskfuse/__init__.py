"""taskfuse: a task-graph runtime with residency-tracked data movement,
a 4-lane vector math layer, a dense depth-camera SLAM pipeline built on
registered kernels, and a seeded fault-injection laboratory."""

__version__ = "0.1.0"

from .devices import DeviceId, KernelRegistry, SimAccelConfig
from .errors import TaskFuseError
from .graph import BufferDesc, DeviceMapping, Task, TaskGraph, fuse, infer_dependencies, to_dot
from .residency import ResidencyState, TransferPlan, plan_transfers
from .runtime import Runtime
from .vecmath import Float4, Mat4, matrix_op, rigid_inverse, vector_op

__all__ = [
    "BufferDesc", "DeviceId", "DeviceMapping", "Float4", "KernelRegistry",
    "Mat4", "ResidencyState", "Runtime", "SimAccelConfig", "Task", "TaskGraph",
    "TaskFuseError", "TransferPlan", "fuse", "infer_dependencies", "matrix_op",
    "plan_transfers", "rigid_inverse", "to_dot", "vector_op", "__version__",
]
