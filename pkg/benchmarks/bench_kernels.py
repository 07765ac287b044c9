"""Time the compiled kernels against the numpy fallback on training-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Also runs one span of training under each backend.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from tdslab import _fallback

try:
    from tdslab import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    table = rng.standard_normal((501, 8))
    table[0] = 0
    ids = rng.integers(0, 501, size=(4096, 8)).astype(np.int64)
    rows = rng.standard_normal((4096, 8))
    idx = rng.integers(0, 501, size=4096).astype(np.int64)
    scores = rng.standard_normal(20000)
    labels = (rng.random(20000) < 0.3).astype(np.int64)
    groups = np.repeat(np.arange(1000), 20).astype(np.int64)
    _, counts = _fallback.seq_pool(table, ids)
    grad_pooled = rng.standard_normal((4096, 8))
    return {
        "scatter_add_rows": lambda m: m.scatter_add_rows(np.zeros_like(table), idx, rows),
        "seq_pool": lambda m: m.seq_pool(table, ids),
        "seq_pool_backward": lambda m: m.seq_pool_backward(np.zeros_like(table), ids, grad_pooled, counts),
        "midrank_auc": lambda m: m.midrank_auc(scores, labels),
        "grouped_auc": lambda m: m.grouped_auc(scores, labels, groups),
    }


_SPAN_SNIPPET = """
import time
from tdslab import BACKEND, GeneratorConfig, MemoryManifest, TrainConfig, iter_spans
from tdslab.trainer import Trainer
g = GeneratorConfig(n_spans=1)
span = next(iter(iter_spans(g)))
tr = Trainer(g.schema, TrainConfig(method="elbo_tds"))
t = time.perf_counter(); tr.train_span(span); print(BACKEND, time.perf_counter() - t)
"""


def span_time(pure):
    env = dict(os.environ, TDSLAB_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", _SPAN_SNIPPET], env=env, capture_output=True, text=True, check=True)
    backend, seconds = out.stdout.split()
    return backend, float(seconds)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--skip-span", action="store_true")
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
        return 1
    fns = cases(np.random.default_rng(0))
    print(f"{'kernel':<20}{'fallback ms':>14}{'compiled ms':>14}{'speedup':>10}")
    for name, fn in fns.items():
        slow = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        fast = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<20}{slow:>14.3f}{fast:>14.3f}{slow / fast:>9.1f}x")
    if not args.skip_span:
        for pure in (True, False):
            backend, sec = span_time(pure)
            print(f"one elbo_tds span, backend={backend}: {sec:.2f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
