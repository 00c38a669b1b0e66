"""Compiled-vs-python kernel benchmark.

Per-kernel microbenchmarks run both backends in one process (the modules
are imported side by side); the end-to-end training-step comparison spawns
subprocesses because the backend is fixed at import time via
SCRIBBLECAP_KERNELS.

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--steps N] [--skip-e2e]
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from scribblecap.kernels import available_backends

LN_EPS = 1e-5


def _timeit(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(rng: np.random.Generator):
    """(name, make_args, call) per kernel, float64, training-like shapes."""
    x = rng.standard_normal((64, 256))
    g = rng.standard_normal(256)
    b = rng.standard_normal(256)
    dy = rng.standard_normal((64, 256))
    scores = rng.standard_normal((256, 256))
    probs_src = rng.random((256, 256)) + 1e-3
    probs = probs_src / probs_src.sum(axis=1, keepdims=True)
    dp = rng.standard_normal((256, 256))
    h = rng.standard_normal((64, 1024))
    dh = rng.standard_normal((64, 1024))
    logits = rng.standard_normal((64, 5000))
    targets = rng.integers(0, 5000, size=64).astype(np.int64)
    dlogits_probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    dlogits_probs /= dlogits_probs.sum(axis=1, keepdims=True)
    p = rng.standard_normal(1 << 20)
    grad = rng.standard_normal(1 << 20)
    m = np.zeros(1 << 20)
    v = np.zeros(1 << 20)

    def cases(k):
        yield "layernorm_forward", lambda: k.layernorm_forward(x, g, b, LN_EPS)
        mean = x.mean(axis=1)
        rstd = 1.0 / np.sqrt(x.var(axis=1) + LN_EPS)
        yield "layernorm_backward", lambda: k.layernorm_backward(dy, x, g, mean, rstd)
        yield "softmax_rows", lambda: k.softmax_rows(scores)
        yield "softmax_rows_backward", lambda: k.softmax_rows_backward(dp, probs)
        yield "gelu_forward", lambda: k.gelu_forward(h)
        yield "gelu_backward", lambda: k.gelu_backward(dh, h)
        dlosses = np.full(64, 1.0 / 64)
        yield "cross_entropy_rows", lambda: k.cross_entropy_rows(logits, targets)
        yield "cross_entropy_backward", lambda: k.cross_entropy_backward(
            dlogits_probs, targets, dlosses)
        yield "adam_update", lambda: k.adam_update(
            p.copy(), grad, m.copy(), v.copy(), 1, 1e-3, 0.9, 0.999, 1e-8)

    return cases


def bench_kernels(repeats: int) -> None:
    backends = available_backends()
    if "compiled" not in backends:
        print("compiled backend not built; showing python only")
    rng = np.random.default_rng(0)
    cases = _cases(rng)
    names = [n for n, _ in cases(backends["python"])]
    timings: dict[str, dict[str, float]] = {n: {} for n in names}
    for bname, module in sorted(backends.items()):
        for kname, call in cases(module):
            call()  # warm
            timings[kname][bname] = _timeit(call, repeats)
    width = max(len(n) for n in names)
    header = f"{'kernel':<{width}}  {'python':>10}  {'compiled':>10}  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for kname in names:
        py = timings[kname]["python"]
        row = f"{kname:<{width}}  {py * 1e6:>8.1f}us"
        if "compiled" in timings[kname]:
            cy = timings[kname]["compiled"]
            row += f"  {cy * 1e6:>8.1f}us  {py / cy:>7.2f}x"
        print(row)


E2E_SNIPPET = r"""
import time
from scribblecap.training import TrainConfig, train
import tempfile
from scribblecap.kernels import backend_name
cfg = TrainConfig(n_images=64, grid=6, epochs={epochs}, batch_size=8,
                  lm_warmup_steps=120, eval_max_items=8, seed=5)
t0 = time.time()
with tempfile.TemporaryDirectory() as td:
    res = train(cfg, td)
print(f"{{backend_name()}} {{res.steps}} steps {{time.time() - t0:.2f}}s")
"""


def bench_e2e(epochs: int) -> None:
    print("\nend-to-end training (subprocess per backend):")
    for backend in ("python", "compiled"):
        env = dict(os.environ, SCRIBBLECAP_KERNELS=backend)
        proc = subprocess.run([sys.executable, "-c", E2E_SNIPPET.format(epochs=epochs)],
                              env=env, capture_output=True, text=True)
        if proc.returncode:
            print(f"{backend}: unavailable ({proc.stderr.strip().splitlines()[-1]})")
        else:
            print(proc.stdout.strip())


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--steps", type=int, default=4,
                    help="epochs for the end-to-end comparison")
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args()
    bench_kernels(args.repeats)
    if not args.skip_e2e:
        bench_e2e(args.steps)


if __name__ == "__main__":
    main()
