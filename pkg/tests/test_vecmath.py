"""Vector/matrix layer vs. an independent double-precision scalar oracle.

The oracle evaluates every operation with plain float64 formulas, element by
element, with no reference to the library's code paths.  Comparisons are
relative to the natural data scale of each operation (so dot products with
heavy cancellation are judged against the input magnitudes, which is the
error a single-precision evaluation can actually promise).
"""

import math

import numpy as np
import pytest

from taskfuse import vecmath as vm
from taskfuse.errors import DegenerateInputError, NonRigidError
from taskfuse.vecmath import Float4, Mat4

N_SAMPLES = 10_000
VEC_TOL = 1e-6
MAT_TOL = 1e-5


def rand_lanes(rng, n, zero_w=False):
    lanes = rng.uniform(-2.0, 2.0, size=(n, 4))
    if zero_w:
        lanes[:, 3] = 0.0
    return lanes


def f4(row):
    return Float4(row[0], row[1], row[2], row[3])


# ---------------------------------------------------------------------------
# scalar float64 oracles

def oracle_vector(kind, a, b):
    a = np.asarray(a, dtype=np.float64)
    if kind == "add":
        return a + np.asarray(b, np.float64)
    if kind == "sub":
        return a - np.asarray(b, np.float64)
    if kind == "mul_elem":
        return a * np.asarray(b, np.float64)
    if kind == "scale":
        return a * float(b)
    if kind == "dot3":
        return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    if kind == "dot4":
        return a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
    if kind == "cross3":
        return np.array([a[1] * b[2] - a[2] * b[1],
                         a[2] * b[0] - a[0] * b[2],
                         a[0] * b[1] - a[1] * b[0], 0.0])
    if kind == "length3":
        return math.sqrt(a[0] ** 2 + a[1] ** 2 + a[2] ** 2)
    if kind == "normalize3":
        n = math.sqrt(a[0] ** 2 + a[1] ** 2 + a[2] ** 2)
        return np.array([a[0] / n, a[1] / n, a[2] / n, 0.0])
    raise AssertionError(kind)


def oracle_matrix(kind, m, x):
    m = np.asarray(m, dtype=np.float64)
    if kind == "mvmul":
        return m @ np.asarray(x, np.float64)
    if kind == "mmmul":
        return m @ np.asarray(x, np.float64)
    if kind == "transpose":
        return m.T
    if kind == "scale_mat":
        return m * float(x)
    raise AssertionError(kind)


def assert_close(got, want, tol, scale):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    err = np.abs(got - want).max()
    bound = tol * max(1.0, scale)
    assert err <= bound, f"error {err:.3e} > {bound:.3e}"


# ---------------------------------------------------------------------------
# trivial anchors

def test_dot3_unit():
    e = Float4(1, 0, 0, 0)
    assert vm.dot3(e, e) == 1.0


def test_cross3_basis():
    got = vm.cross3(Float4(1, 0, 0, 0), Float4(0, 1, 0, 0))
    assert got == Float4(0, 0, 1, 0)


def test_mvmul_identity_bitwise():
    v = Float4(1, 2, 3, 0)
    assert vm.mvmul(Mat4.identity(), v) == v


def test_transpose_involution_bitwise():
    rng = np.random.default_rng(3)
    m = Mat4(rng.uniform(-2, 2, (4, 4)))
    assert vm.transpose(vm.transpose(m)) == m


# ---------------------------------------------------------------------------
# seeded batches vs the oracle

@pytest.mark.parametrize("kind", sorted(vm.VECTOR_OPS))
def test_vector_ops_match_oracle(kind):
    rng = np.random.default_rng(hash(kind) % 2**32)
    a_rows = rand_lanes(rng, N_SAMPLES, zero_w=kind in ("dot3", "cross3", "length3", "normalize3"))
    b_rows = rand_lanes(rng, N_SAMPLES)
    scalars = rng.uniform(-3.0, 3.0, N_SAMPLES)
    for i in range(N_SAMPLES):
        a = f4(a_rows[i])
        if kind == "normalize3" and vm.length3(a) <= 1e-6:
            continue
        b = scalars[i] if kind == "scale" else f4(b_rows[i])
        got = vm.vector_op(kind, a, b)
        want = oracle_vector(kind, a_rows[i].astype(np.float32),
                             b if kind == "scale" else b_rows[i].astype(np.float32))
        scale = float(np.abs(a_rows[i]).sum() * (1 + np.abs(b_rows[i]).sum()))
        if isinstance(got, Float4):
            got = got.lanes()
        assert_close(got, want, VEC_TOL, scale)


@pytest.mark.parametrize("kind", sorted(vm.MATRIX_OPS))
def test_matrix_ops_match_oracle(kind):
    rng = np.random.default_rng(hash(kind) % 2**32)
    n = N_SAMPLES // 10  # 4x4 entries each; still >= 10k scalar checks
    for i in range(n):
        m_rows = rng.uniform(-2, 2, (4, 4))
        m = Mat4(m_rows)
        m32 = m_rows.astype(np.float32)
        if kind == "mvmul":
            x_row = rand_lanes(rng, 1)[0]
            got = vm.matrix_op(kind, m, f4(x_row)).lanes()
            want = oracle_matrix(kind, m32, x_row.astype(np.float32))
        elif kind == "mmmul":
            x_rows = rng.uniform(-2, 2, (4, 4))
            got = vm.matrix_op(kind, m, Mat4(x_rows)).array()
            want = oracle_matrix(kind, m32, x_rows.astype(np.float32))
        elif kind == "transpose":
            got = vm.matrix_op(kind, m).array()
            want = oracle_matrix(kind, m32, None)
        else:
            s = float(rng.uniform(-3, 3))
            got = vm.matrix_op(kind, m, s).array()
            want = oracle_matrix(kind, m32, s)
        assert_close(got, want, MAT_TOL, scale=16.0 * 4.0)


def test_lane3_zero_preserved():
    rng = np.random.default_rng(11)
    rows = rand_lanes(rng, 2000, zero_w=True)
    for i in range(0, 2000, 2):
        a, b = f4(rows[i]), f4(rows[i + 1])
        for out in (vm.add(a, b), vm.sub(a, b), vm.mul_elem(a, b),
                    vm.scale(a, 1.5), vm.cross3(a, b)):
            assert out.w == 0.0
        if vm.length3(a) > 1e-6:
            assert vm.normalize3(a).w == 0.0


# ---------------------------------------------------------------------------
# catalog, immutability, errors

def test_catalog_is_13_ops():
    assert len(vm.OP_CATALOG) == 13
    assert len(vm.VECTOR_OPS) == 9 and len(vm.MATRIX_OPS) == 4
    assert "rigid_inverse" not in vm.OP_CATALOG


def test_unknown_kind_rejected():
    with pytest.raises(KeyError):
        vm.vector_op("nope", Float4())
    with pytest.raises(KeyError):
        vm.matrix_op("nope", Mat4.identity())


def test_immutability():
    v = Float4(1, 2, 3, 0)
    with pytest.raises(AttributeError):
        v.x = 5.0
    with pytest.raises(ValueError):
        v.lanes()[0] = 5.0
    m = Mat4.identity()
    with pytest.raises(ValueError):
        m.array()[0, 0] = 2.0


def test_nonfinite_rejected():
    with pytest.raises(ValueError):
        Float4(float("nan"), 0, 0, 0)
    with pytest.raises(ValueError):
        Mat4(np.full((4, 4), np.inf))


def test_normalize_degenerate():
    with pytest.raises(DegenerateInputError):
        vm.normalize3(Float4(0, 0, 0, 0))


# ---------------------------------------------------------------------------
# rigid transforms

def random_rigid(rng):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    ang = rng.uniform(0, 2 * np.pi)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    r = np.eye(3) + math.sin(ang) * k + (1 - math.cos(ang)) * (k @ k)
    m = np.eye(4)
    m[:3, :3] = r
    m[:3, 3] = rng.uniform(-2, 2, 3)
    return Mat4(m)


def test_rigid_inverse_identity():
    assert vm.rigid_inverse(Mat4.identity()) == Mat4.identity()


def test_rigid_inverse_pure_translation():
    m = np.eye(4)
    m[:3, 3] = (1, 2, 3)
    inv = vm.rigid_inverse(Mat4(m))
    assert np.allclose(inv.array()[:3, 3], (-1, -2, -3))


def test_rigid_inverse_roundtrip_seeded():
    rng = np.random.default_rng(1234)
    for _ in range(100):
        m = random_rigid(rng)
        prod = vm.mmmul(m, vm.rigid_inverse(m)).array()
        assert np.abs(prod - np.eye(4)).max() < 1e-5


def test_rigid_inverse_rejects_nonrigid():
    with pytest.raises(NonRigidError):
        vm.rigid_inverse(Mat4(np.diag([2.0, 1.0, 1.0, 1.0])))
