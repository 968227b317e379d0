"""Compare the compiled and numpy scan backends.

Kernel timings come from ``fewshot_ssm.harness.bench``.  The end-to-end rows
time full training steps in a subprocess per backend, since the backend is
fixed at import (``FEWSHOT_SSM_PURE=1`` forces the numpy fallback).

    python benchmarks/bench_scan.py [--repeats 5] [--steps 20]
"""

import argparse
import os
import subprocess
import sys
from collections import defaultdict

from fewshot_ssm.harness.bench import bench, format_rows

STEP_SNIPPET = """
import time
from fewshot_ssm import kernels
from fewshot_ssm.harness.config import RunConfig
from fewshot_ssm.harness import runner
cfg = RunConfig(episodes={steps}, eval_every=0, lr=0.05)
t0 = time.perf_counter()
runner.train(cfg)
print(kernels.BACKEND, (time.perf_counter() - t0) / {steps})
"""


def train_step_seconds(pure, steps):
    env = dict(os.environ, FEWSHOT_SSM_PURE="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(steps=steps)], env=env,
                         capture_output=True, text=True, check=True).stdout.split()
    return out[0], float(out[1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--steps", type=int, default=20)
    args = ap.parse_args()

    rows = bench(repeats=args.repeats)
    print(format_rows(rows))

    by_case = defaultdict(dict)
    for r in rows:
        by_case[(r["kernel"], r["shape"])][r["backend"]] = r["seconds"]
    if any("cython" in v for v in by_case.values()):
        print("\nspeedup (python / cython)")
        for (kernel, shape), t in by_case.items():
            print(f"  {kernel:14s} {shape:14s} {t['python'] / t['cython']:8.1f}x")
    else:
        print("\ncompiled backend not built; only the numpy fallback was timed")

    print("\nend-to-end training step (default 5-way 1-shot episode)")
    for pure in (False, True):
        backend, secs = train_step_seconds(pure, args.steps)
        print(f"  {backend:8s} {1e3 * secs:9.1f} ms/step")


if __name__ == "__main__":
    main()
