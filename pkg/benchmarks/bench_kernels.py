"""Compiled vs numpy recurrence kernels on training-sized batches.

    python benchmarks/bench_kernels.py [--batch 128 --steps 50 --d 64 --repeat 5]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mtam import kernels


def make_inputs(B, T, d, rng):
    X = rng.normal(size=(T, B, d))
    ldt = np.log1p(rng.exponential(3.0, size=(T, B)))
    mask = np.ones((T, B), dtype=np.uint8)
    mask[T // 2:, : B // 4] = 0
    u = lambda *s: rng.uniform(-0.2, 0.2, size=s)
    return dict(X=X, ldt=ldt, mask=mask, Wzrt=u(2 * d, 3 * d), bzrt=u(3 * d), Wh=u(2 * d, d), bh=u(d),
                Wd=u(d), bd=u(d), Wgd=u(d), Wgt=u(d), bg=u(d))


def run(a, reps):
    fwd_args = (a["X"], a["ldt"], a["mask"], a["Wzrt"], a["bzrt"], a["Wh"], a["bh"], a["Wd"], a["bd"],
                a["Wgd"], a["Wgt"], a["bg"], True, 1.0)
    best_f = best_b = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        Hs, caches = kernels.recurrent_forward(*fwd_args)
        t1 = time.perf_counter()
        dH = np.ones_like(Hs[1:])
        kernels.recurrent_backward(dH, a["X"], a["ldt"], a["mask"], Hs, caches, a["Wzrt"], a["Wh"],
                                   a["Wgd"], a["Wgt"], True, 1.0)
        t2 = time.perf_counter()
        best_f, best_b = min(best_f, t1 - t0), min(best_b, t2 - t1)
    return best_f, best_b, Hs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--steps", type=int, default=50)
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    a = make_inputs(args.batch, args.steps, args.d, np.random.default_rng(0))
    results = {}
    for name in ("python", "compiled"):
        if name == "compiled" and not kernels.compiled_available():
            print("compiled extension not built; skipping")
            continue
        kernels.use_backend(name)
        results[name] = run(a, args.repeat)
        f, b, _ = results[name]
        print(f"{name:9s} forward {f * 1e3:8.2f} ms   backward {b * 1e3:8.2f} ms")
    if len(results) == 2:
        diff = np.max(np.abs(results["python"][2] - results["compiled"][2]))
        speed = sum(results["python"][:2]) / sum(results["compiled"][:2])
        print(f"speedup {speed:.2f}x, max |H_python - H_compiled| = {diff:.2e}")


if __name__ == "__main__":
    main()
