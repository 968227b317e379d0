"""Throughput of the scan kernels on every available backend."""

import time

import numpy as np

from .. import kernels

DEFAULT_SHAPES = ((8, 32, 16, 16), (64, 4, 16, 16), (4, 256, 16, 16))  # (batch, length, n_state, width)


def _best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(shapes=DEFAULT_SHAPES, repeats=5, seed=0):
    """Return rows ``{backend, kernel, shape, seconds, elements_per_s}`` (best of ``repeats``)."""
    rng = np.random.default_rng(seed)
    rows = []
    for shape in shapes:
        nb, length, ns, width = shape
        x = rng.normal(size=(nb, length, width))
        a = rng.uniform(0.5, 1.0, (ns, width))
        bb = rng.normal(size=(ns, width))
        c = rng.normal(size=(ns, width))
        a3 = rng.uniform(0.5, 1.0, (nb, length, ns * width))
        u3 = rng.normal(size=(nb, length, ns * width))
        cost = rng.uniform(size=(length, length))
        for name, mod in kernels.backends().items():
            y, h = mod.ssm_forward(x, a, bb, c)
            h3 = mod.scan_forward(a3, u3)
            cases = {
                "scan_forward": lambda: mod.scan_forward(a3, u3),
                "scan_backward": lambda: mod.scan_backward(a3, h3, u3),
                "ssm_forward": lambda: mod.ssm_forward(x, a, bb, c),
                "ssm_backward": lambda: mod.ssm_backward(x, a, bb, c, h, y),
                "dtw": lambda: mod.dtw_path_cost(cost),
            }
            for kernel, fn in cases.items():
                secs = _best_of(fn, repeats)
                elems = length * length if kernel == "dtw" else nb * length * ns * width
                rows.append({"backend": name, "kernel": kernel, "shape": "x".join(map(str, shape)),
                             "seconds": secs, "elements_per_s": elems / secs})
    return rows


def format_rows(rows):
    out = [f"{'backend':8s} {'kernel':14s} {'shape':14s} {'ms':>10s} {'Melem/s':>10s}"]
    for r in rows:
        out.append(f"{r['backend']:8s} {r['kernel']:14s} {r['shape']:14s} {1e3 * r['seconds']:10.3f} "
                   f"{r['elements_per_s'] / 1e6:10.2f}")
    return "\n".join(out)
