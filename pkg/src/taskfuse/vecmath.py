"""Immutable 4-lane single-precision vector and 4x4 matrix arithmetic.

This is the arithmetic currency of the SLAM kernels.  The semantic contract:

* values are immutable once constructed and safe to share between workers;
* lanes are four contiguous float32 values; a 3-component point or direction
  keeps lane 3 at exactly 0.0, and 3-component operations preserve that;
* every operation agrees with a double-precision scalar evaluation to within
  single-precision rounding (1e-6 relative for vectors, 1e-5 for matrices).

The public operation catalog is frozen at 13 kinds:

  vector (9): add, sub, mul_elem, scale, dot3, dot4, cross3, length3,
              normalize3
  matrix (4): mvmul, mmmul, transpose, scale_mat

``rigid_inverse`` is a separate helper for rigid transforms and is not part
of the 13-op catalog.  No SIMD is required; plain float32 arithmetic carries
the contract.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, NonRigidError

_F32 = np.float32

# Rigidity gate for the upper-left 3x3 block: max |R^T R - I|.
RIGID_TOL = 1e-5


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


class Float4:
    """Immutable 4-lane float32 vector."""

    __slots__ = ("_lanes",)

    def __init__(self, x=0.0, y=0.0, z=0.0, w=0.0):
        lanes = np.array([x, y, z, w], dtype=_F32)
        if not np.isfinite(lanes).all():
            raise ValueError(f"non-finite lanes: {lanes.tolist()}")
        object.__setattr__(self, "_lanes", _freeze(lanes))

    @classmethod
    def from_array(cls, arr) -> "Float4":
        a = np.asarray(arr, dtype=_F32).reshape(4)
        return cls(a[0], a[1], a[2], a[3])

    @property
    def x(self) -> float:
        return float(self._lanes[0])

    @property
    def y(self) -> float:
        return float(self._lanes[1])

    @property
    def z(self) -> float:
        return float(self._lanes[2])

    @property
    def w(self) -> float:
        return float(self._lanes[3])

    def lanes(self) -> np.ndarray:
        """Read-only view of the four lanes."""
        return self._lanes

    def __getitem__(self, i: int) -> float:
        return float(self._lanes[i])

    def __iter__(self):
        return iter(self._lanes.tolist())

    def __setattr__(self, name, value):
        raise AttributeError("Float4 is immutable")

    def __eq__(self, other):
        if not isinstance(other, Float4):
            return NotImplemented
        return bool(np.array_equal(self._lanes, other._lanes))

    def __hash__(self):
        return hash(self._lanes.tobytes())

    def __repr__(self):
        return "Float4(%g, %g, %g, %g)" % tuple(self._lanes.tolist())


class Mat4:
    """Immutable 4x4 float32 matrix, stored as four Float4 columns."""

    __slots__ = ("_m",)

    def __init__(self, rows):
        m = np.array(rows, dtype=_F32).reshape(4, 4)
        if not np.isfinite(m).all():
            raise ValueError("non-finite matrix entries")
        object.__setattr__(self, "_m", _freeze(m))

    @classmethod
    def from_columns(cls, c0: Float4, c1: Float4, c2: Float4, c3: Float4) -> "Mat4":
        return cls(np.stack([c0.lanes(), c1.lanes(), c2.lanes(), c3.lanes()], axis=1))

    @classmethod
    def identity(cls) -> "Mat4":
        return cls(np.eye(4, dtype=_F32))

    def column(self, j: int) -> Float4:
        return Float4.from_array(self._m[:, j])

    def array(self) -> np.ndarray:
        """Read-only (4, 4) view; entry [i, j] is row i, column j."""
        return self._m

    def __setattr__(self, name, value):
        raise AttributeError("Mat4 is immutable")

    def __eq__(self, other):
        if not isinstance(other, Mat4):
            return NotImplemented
        return bool(np.array_equal(self._m, other._m))

    def __hash__(self):
        return hash(self._m.tobytes())

    def __repr__(self):
        return f"Mat4({self._m.tolist()})"

    def is_rigid(self, tol: float = RIGID_TOL) -> bool:
        r = self._m[:3, :3].astype(np.float64)
        ortho = np.abs(r.T @ r - np.eye(3)).max() < tol
        bottom = np.array_equal(self._m[3], np.array([0, 0, 0, 1], dtype=_F32))
        return bool(ortho and bottom)


# ---------------------------------------------------------------------------
# vector operations (9 kinds)

def add(a: Float4, b: Float4) -> Float4:
    return Float4.from_array(a.lanes() + b.lanes())


def sub(a: Float4, b: Float4) -> Float4:
    return Float4.from_array(a.lanes() - b.lanes())


def mul_elem(a: Float4, b: Float4) -> Float4:
    return Float4.from_array(a.lanes() * b.lanes())


def scale(a: Float4, s: float) -> Float4:
    return Float4.from_array(a.lanes() * _F32(s))


def dot3(a: Float4, b: Float4) -> float:
    p = a.lanes()[:3] * b.lanes()[:3]
    return float((p[0] + p[1]) + p[2])


def dot4(a: Float4, b: Float4) -> float:
    p = a.lanes() * b.lanes()
    return float(((p[0] + p[1]) + p[2]) + p[3])


def cross3(a: Float4, b: Float4) -> Float4:
    (ax, ay, az, _), (bx, by, bz, _) = a.lanes(), b.lanes()
    return Float4(ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx, 0.0)


def length3(a: Float4) -> float:
    return float(np.sqrt(_F32(dot3(a, a))))


def normalize3(a: Float4) -> Float4:
    n = length3(a)
    if n <= 1e-12:
        raise DegenerateInputError(f"cannot normalize near-zero vector (|a| = {n})")
    inv = _F32(1.0) / _F32(n)
    l = a.lanes()
    return Float4(l[0] * inv, l[1] * inv, l[2] * inv, 0.0)


# ---------------------------------------------------------------------------
# matrix operations (4 kinds)

def mvmul(m: Mat4, v: Float4) -> Float4:
    return Float4.from_array(m.array() @ v.lanes())


def mmmul(a: Mat4, b: Mat4) -> Mat4:
    return Mat4(a.array() @ b.array())


def transpose(m: Mat4) -> Mat4:
    return Mat4(m.array().T)


def scale_mat(m: Mat4, s: float) -> Mat4:
    return Mat4(m.array() * _F32(s))


def rigid_inverse(m: Mat4) -> Mat4:
    """Inverse of a rigid transform, computed as (R^T, -R^T t).

    Rejects matrices that fail the rigidity invariant rather than falling
    back to a general inverse.
    """
    if not m.is_rigid():
        raise NonRigidError("matrix is not a rigid transform")
    a = m.array()
    rt = a[:3, :3].T
    t = rt @ a[:3, 3]
    out = np.eye(4, dtype=_F32)
    out[:3, :3] = rt
    out[:3, 3] = -t
    return Mat4(out)


# ---------------------------------------------------------------------------
# frozen catalog + dispatch

VECTOR_OPS = {
    "add": add,
    "sub": sub,
    "mul_elem": mul_elem,
    "scale": scale,
    "dot3": dot3,
    "dot4": dot4,
    "cross3": cross3,
    "length3": length3,
    "normalize3": normalize3,
}

MATRIX_OPS = {
    "mvmul": mvmul,
    "mmmul": mmmul,
    "transpose": transpose,
    "scale_mat": scale_mat,
}

OP_CATALOG = tuple(VECTOR_OPS) + tuple(MATRIX_OPS)

_UNARY = {"length3", "normalize3", "transpose"}


def vector_op(kind: str, a: Float4, b=None):
    """Dispatch one of the 9 vector op kinds; ``b`` is a Float4 or scalar."""
    if kind not in VECTOR_OPS:
        raise KeyError(f"unknown vector op {kind!r}")
    fn = VECTOR_OPS[kind]
    return fn(a) if kind in _UNARY else fn(a, b)


def matrix_op(kind: str, m: Mat4, x=None):
    """Dispatch one of the 4 matrix op kinds; ``x`` is a Mat4, Float4 or scalar."""
    if kind not in MATRIX_OPS:
        raise KeyError(f"unknown matrix op {kind!r}")
    fn = MATRIX_OPS[kind]
    return fn(m) if kind in _UNARY else fn(m, x)
