"""Exception types shared across the package."""


class TaskFuseError(Exception):
    """Base class for all package errors."""


class DegenerateInputError(TaskFuseError, ValueError):
    """A numerically degenerate input (e.g. normalizing a near-zero vector)."""


class NonRigidError(TaskFuseError, ValueError):
    """A matrix that was required to be a rigid transform is not one."""


class GraphError(TaskFuseError, ValueError):
    """Task-graph contract violation: unknown kernel/buffer, bad fuse, remap mid-run."""


class DeviceError(TaskFuseError, ValueError):
    """Device contract violation: bad index space, copy of invalid residency."""


class KernelContractError(TaskFuseError, RuntimeError):
    """A kernel body broke its declared contract (wrote outside its write set)."""


class TaskFailure(TaskFuseError, RuntimeError):
    """A kernel body raised during graph execution; carries the failing task."""

    def __init__(self, task_id, kernel, cause):
        self.task_id = task_id
        self.kernel = kernel
        self.cause = cause
        super().__init__(f"task {task_id} ({kernel}) failed: {cause!r}")


class FormatError(TaskFuseError, ValueError):
    """Malformed sequence/trajectory file."""


class FaultSpecError(TaskFuseError, ValueError):
    """Invalid fault specification (bad window, bit out of range, ...)."""
