"""Device backends: determinism, cost model, registry contracts."""

import numpy as np
import pytest

from taskfuse.devices import (DeviceId, KernelRegistry, SimAccelConfig, copy_buffer,
                              copy_cost, make_device)
from taskfuse.errors import DeviceError, GraphError, KernelContractError


def saxpy(span, reads, writes, params):
    lo, hi = span
    writes[0][lo:hi] = np.float32(params[0]) * reads[0][lo:hi] + reads[1][lo:hi]


def make_registry():
    reg = KernelRegistry()
    reg.register("saxpy", saxpy, 2, 1, elementwise=True)
    return reg


def test_duplicate_registration_rejected():
    reg = make_registry()
    with pytest.raises(GraphError, match="already registered"):
        reg.register("saxpy", saxpy, 2, 1)


def test_unknown_kernel_rejected():
    with pytest.raises(GraphError, match="unknown kernel"):
        make_registry().get("mystery")


def test_cross_device_bitwise_identical():
    reg = make_registry()
    rng = np.random.default_rng(0)
    x = rng.standard_normal(10_000).astype(np.float32)
    y = rng.standard_normal(10_000).astype(np.float32)
    outs = []
    for dev in (make_device("serial-cpu"), make_device("parallel-cpu", workers=4),
                make_device("sim-accel")):
        out = np.zeros_like(x)
        dev.launch(reg.get("saxpy"), (10_000,), [x, y], [out], (1.5,))
        outs.append(out)
    assert np.array_equal(outs[0], outs[1])
    assert np.array_equal(outs[0], outs[2])


def test_empty_index_space_rejected():
    dev = make_device("serial-cpu")
    reg = make_registry()
    with pytest.raises(DeviceError, match="1-3 extents"):
        dev.launch(reg.get("saxpy"), (), [np.zeros(1, np.float32)] * 2,
                   [np.zeros(1, np.float32)])
    with pytest.raises(DeviceError, match=">= 1"):
        dev.launch(reg.get("saxpy"), (0,), [np.zeros(1, np.float32)] * 2,
                   [np.zeros(1, np.float32)])


def test_arity_mismatch_rejected():
    dev = make_device("serial-cpu")
    reg = make_registry()
    with pytest.raises(DeviceError, match="expects 2 reads"):
        dev.launch(reg.get("saxpy"), (4,), [np.zeros(4, np.float32)],
                   [np.zeros(4, np.float32)])


def test_copy_cost_arithmetic():
    cfg = SimAccelConfig(bandwidth=1024**3, latency=10e-6, launch_overhead=1e-6)
    host = make_device("serial-cpu")
    accel = make_device("sim-accel", accel_config=cfg)
    got = copy_cost(1024**2, host, accel)
    assert got == pytest.approx(10e-6 + 1024**2 / 1024**3)  # 10us + 0.977ms
    assert copy_cost(1024**2, host, host) == 0.0


def test_copy_same_device_noop():
    dev = make_device("sim-accel")
    dev.memory["b"] = np.arange(4, dtype=np.float32)
    assert copy_buffer("b", dev, dev) == 0.0


def test_copy_roundtrip_bitwise():
    host = make_device("serial-cpu")
    accel = make_device("sim-accel")
    rng = np.random.default_rng(1)
    data = rng.standard_normal(4096).astype(np.float32)
    host.memory["b"] = data.copy()
    copy_buffer("b", host, accel)
    host.memory["b"][:] = 0
    copy_buffer("b", accel, host)
    assert np.array_equal(host.memory["b"], data)


def test_copy_missing_source_rejected():
    host = make_device("serial-cpu")
    accel = make_device("sim-accel")
    with pytest.raises(DeviceError, match="no bytes"):
        copy_buffer("ghost", host, accel)


def test_sim_accel_modeled_adds_launch_overhead():
    cfg = SimAccelConfig(launch_overhead=5e-3)
    accel = make_device("sim-accel", accel_config=cfg)
    reg = make_registry()
    x = np.ones(16, np.float32)
    out = np.zeros(16, np.float32)
    wall, modeled = accel.launch(reg.get("saxpy"), (16,), [x, x], [out], (1.0,))
    assert modeled == pytest.approx(wall + 5e-3)


def test_cpu_modeled_equals_wall():
    dev = make_device("serial-cpu")
    reg = make_registry()
    x = np.ones(16, np.float32)
    out = np.zeros(16, np.float32)
    wall, modeled = dev.launch(reg.get("saxpy"), (16,), [x, x], [out], (1.0,))
    assert modeled == wall


def test_debug_guard_catches_stray_write():
    def naughty(span, reads, writes, params):
        reads[0][0] += 1.0  # writes outside its declared write set

    reg = KernelRegistry()
    reg.register("naughty", naughty, 1, 1)
    dev = make_device("serial-cpu", debug=True)
    with pytest.raises(KernelContractError, match="outside its write set"):
        dev.launch(reg.get("naughty"), (4,), [np.zeros(4, np.float32)],
                   [np.zeros(4, np.float32)])
    # without debug the same launch goes unchecked
    dev2 = make_device("serial-cpu")
    dev2.launch(reg.get("naughty"), (4,), [np.zeros(4, np.float32)],
                [np.zeros(4, np.float32)])


def test_partitioning_and_nonpartitionable_spans():
    spans = []

    def spy(span, reads, writes, params):
        spans.append(span)
        writes[0][span[0]:span[1]] = 1.0

    reg = KernelRegistry()
    reg.register("spy", spy, 0, 1, partitionable=True)
    reg.register("spy1", spy, 0, 1, partitionable=False)
    par = make_device("parallel-cpu", workers=4)
    out = np.zeros(100, np.float32)

    spans.clear()
    par.launch(reg.get("spy"), (100,), [], [out])
    assert len(spans) == 4 and sorted(spans)[0] == (0, 25)
    assert out.min() == 1.0  # spans cover everything

    spans.clear()
    par.launch(reg.get("spy1"), (100,), [], [out])
    assert spans == [(0, 100)]


def test_inventory_lines():
    accel = make_device("sim-accel", index=2)
    line = accel.inventory_line()
    assert line.startswith("sim-accel:2 sim-accel 1 ")
    assert "bw=6.0GiB/s" in line
    cpu = make_device("parallel-cpu", workers=8)
    assert cpu.inventory_line() == "parallel-cpu:0 parallel-cpu 8 -"


def test_sim_accel_config_positive():
    with pytest.raises(DeviceError):
        SimAccelConfig(bandwidth=0)
    with pytest.raises(DeviceError):
        SimAccelConfig(latency=-1)
