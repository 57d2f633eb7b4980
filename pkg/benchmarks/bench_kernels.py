"""Time the compiled and numpy kernel backends on full-batch training work.

    python3 benchmarks/bench_kernels.py [--widths 256,1024,2048] [--repeat 20]
"""

import argparse
import timeit

import numpy as np
from threadpoolctl import threadpool_limits

from lora_lab import kernels
from lora_lab.model import Dataset, ModelConfig, frozen_cache, init_student


def _setup(n, N, seed=0):
    st = init_student(ModelConfig(n=n), "A", seed)
    st.B[:] = np.random.default_rng(seed).normal(0, 0.5, st.B.shape)
    rng = np.random.default_rng(seed + 1)
    cache = frozen_cache(st, Dataset(rng.standard_normal((N, 5)), rng.standard_normal(N)))
    return st, cache


def bench(n, N, repeat):
    st, cache = _setup(n, N)
    dA, dB = np.empty_like(st.A), np.empty_like(st.B)
    m, v = np.zeros_like(st.A), np.ones_like(st.A)
    rows = {}
    for name in sorted(kernels.BACKENDS):
        grads = lambda: kernels.lora_loss_grads(cache, st.W_out, st.A, st.B, 1.0, dA, dB, backend=name)  # noqa: E731
        ev = lambda: kernels.lora_eval(cache, st.W_out, st.A, st.B, 1.0, backend=name)  # noqa: E731
        adam = lambda: kernels.adamw_update(st.A.copy(), dA, m.copy(), v.copy(), 1e-3, 0.9, 0.99, 1e-8, 0.0, 0.1, 0.01, backend=name)  # noqa: E731
        rows[name] = [min(timeit.repeat(f, number=1, repeat=repeat)) * 1e3 for f in (grads, ev, adam)]
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--widths", default="256,1024,2048")
    ap.add_argument("--samples", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=10)
    args = ap.parse_args()
    print(f"backends: {', '.join(sorted(kernels.BACKENDS))} (default {kernels.BACKEND}); best of {args.repeat}, ms")
    print(f"{'width':>6} {'backend':>8} {'loss+grads':>11} {'eval':>8} {'adamw':>8}")
    with threadpool_limits(limits=1):
        for n in (int(w) for w in args.widths.split(",")):
            rows = bench(n, args.samples, args.repeat)
            for name, (g, e, a) in rows.items():
                print(f"{n:>6} {name:>8} {g:>11.2f} {e:>8.2f} {a:>8.3f}")
            if "cython" in rows:
                print(f"{'':>6} {'speedup':>8} {rows['python'][0] / rows['cython'][0]:>10.1f}x "
                      f"{rows['python'][1] / rows['cython'][1]:>7.1f}x")


if __name__ == "__main__":
    main()
