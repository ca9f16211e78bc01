"""Shared machinery for graph property tests: a small kernel zoo, seeded
random graph generation, and independent oracles (serial submission-order
execution on bare arrays; a from-scratch residency simulation for transfer
counts)."""

import numpy as np

from taskfuse import DeviceMapping, Runtime, Task, infer_dependencies

BUF_LEN = 64


def fill_body(span, reads, writes, params):
    lo, hi = span
    idx = np.arange(lo, hi, dtype=np.float32)
    writes[0][lo:hi] = (idx * np.float32(params[0]) + np.float32(params[1])) % np.float32(17.0)


def square_body(span, reads, writes, params):
    # mod keeps chained applications bounded (no overflow-to-inf flakiness)
    lo, hi = span
    writes[0][lo:hi] = np.mod(reads[0][lo:hi] * reads[0][lo:hi], np.float32(7.0))


def axpy_body(span, reads, writes, params):
    lo, hi = span
    writes[0][lo:hi] = np.float32(params[0]) * reads[0][lo:hi] + reads[1][lo:hi]


def mix_body(span, reads, writes, params):
    lo, hi = span
    writes[0][lo:hi] = reads[0][lo:hi] * np.float32(0.5) + reads[1][lo:hi] * np.float32(0.25)


def rmw_body(span, reads, writes, params):
    # reads = (x, acc), writes = (acc,): acc <- acc * 0.5 + x
    lo, hi = span
    writes[0][lo:hi] = reads[1][lo:hi] * np.float32(0.5) + reads[0][lo:hi]


KERNELS = {
    "fill": (fill_body, 0, 1),
    "square": (square_body, 1, 1),
    "axpy": (axpy_body, 2, 1),
    "mix": (mix_body, 2, 1),
    "rmw": (rmw_body, 2, 1),
}


def make_runtime(n_buffers, *, workers=4, debug=False, seed=0):
    rt = Runtime(workers=workers, debug=debug, seed=seed)
    rt.add_device("parallel-cpu", workers=3)
    rt.add_device("sim-accel")
    rt.add_device("sim-accel")
    for name, (body, nr, nw) in KERNELS.items():
        rt.registry.register(name, body, nr, nw, elementwise=True)
    for i in range(n_buffers):
        rt.declare_buffer(f"b{i}", "f32", (BUF_LEN,))
    return rt


def seed_buffers(rt, rng, n_buffers):
    for i in range(n_buffers):
        rt.write_buffer(f"b{i}", rng.standard_normal(BUF_LEN).astype(np.float32))


def random_graph(rt, rng, n_tasks, n_buffers):
    g = rt.new_graph("prop")
    names = sorted(KERNELS)
    for _ in range(n_tasks):
        kname = names[rng.integers(len(names))]
        _, nr, nw = KERNELS[kname]
        params = ()
        if kname == "fill":
            params = (float(rng.uniform(0.1, 3.0)), float(rng.uniform(0, 5)))
            reads = ()
            writes = (f"b{rng.integers(n_buffers)}",)
        elif kname == "rmw":
            x, acc = rng.integers(n_buffers, size=2)
            reads = (f"b{x}", f"b{acc}")
            writes = (f"b{acc}",)
        else:
            picks = rng.integers(n_buffers, size=nr + 1)
            reads = tuple(f"b{p}" for p in picks[:nr])
            writes = (f"b{picks[nr]}",)
        if kname == "axpy":
            params = (float(rng.uniform(-2, 2)),)
        g.add_task(Task(kname, reads, writes, (BUF_LEN,), params))
    return infer_dependencies(g)


def random_mapping(rt, g, rng):
    devs = sorted(rt.devices, key=str)
    return DeviceMapping({i: devs[rng.integers(len(devs))] for i in range(len(g.tasks))})


# ---------------------------------------------------------------------------
# oracles

def serial_oracle(g, initial):
    """Reference result: apply each task's body in submission order to plain
    arrays, with no devices, residency, or threads involved."""
    mem = {b: a.copy() for b, a in initial.items()}
    for t in g.tasks:
        body = KERNELS[t.kernel][0]
        reads = [mem[b] for b in t.reads]
        writes = [mem[b] for b in t.writes]
        body((0, BUF_LEN), reads, writes, t.params)
    return mem


def edge_oracle(g):
    """Brute-force hazard pairs: (i, j) iff some buffer makes them conflict
    with no intervening writer of that buffer."""
    edges = set()
    tasks = g.tasks
    for j in range(len(tasks)):
        for i in range(j):
            for b in set(tasks[i].writes) | set(tasks[i].reads):
                conflict = (
                    (b in tasks[i].writes and (b in tasks[j].reads or b in tasks[j].writes))
                    or (b in tasks[i].reads and b in tasks[j].writes)
                )
                if not conflict:
                    continue
                if any(b in tasks[k].writes for k in range(i + 1, j)):
                    continue
                edges.add((i, j))
    return edges


def transfer_oracle(g, mapping, host_id):
    """Independent residency walk counting the copies a minimal plan needs.

    Starts from the all-buffers-valid-on-host state of a fresh runtime and
    replays tasks in submission order; finishes with the written-buffer sync
    back to the host.
    """
    holders = {}  # buffer -> set of devices holding the latest version
    owner = {}
    copies = 0
    for b in g.runtime.buffers:
        holders[b] = {host_id}
        owner[b] = host_id
    for tid, t in enumerate(g.tasks):
        dev = mapping.device_for(tid)
        for b in t.reads:
            if dev not in holders[b]:
                copies += 1
                holders[b].add(dev)
        for b in t.writes:
            holders[b] = {dev}
            owner[b] = dev
    for b in g.written_buffers():
        if host_id not in holders[b]:
            copies += 1
    return copies
