"""Compare the numba and numpy kernel backends.

Times each hot kernel on training-realistic shapes, then one full training
epoch per backend. Run from the repository root:

    python3 benchmarks/bench_kernels.py
"""

import os
import time

import numpy as np

from unimos import kernels
from unimos.data import SynthSpec, gen_synth
from unimos.trainer import TrainConfig, train


def time_fn(fn, *args, repeat=200):
    fn(*args)  # warm up (and trigger JIT compilation)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def bench_kernels():
    rng = np.random.default_rng(0)
    batch = rng.normal(size=(32, 512))
    text = rng.normal(size=(65, 512))
    logits = rng.normal(size=(32, 65))
    grad = rng.normal(size=(32, 65))
    bottleneck = rng.normal(size=(32, 256))
    gamma = np.ones(256)
    beta = np.zeros(256)
    bgrad = rng.normal(size=(32, 256))
    _, mean, var = kernels.batchnorm_train_np(bottleneck, gamma, beta, 1e-5)

    cases = {
        "softmax_rows": (logits,),
        "log_softmax_rows": (logits,),
        "cosine_rows": (batch, text),
        "cosine_rows_grad": (batch, text, grad),
        "batchnorm_train": (bottleneck, gamma, beta, 1e-5),
        "batchnorm_train_grad": (bottleneck, gamma, mean, var, 1e-5, bgrad),
    }

    backends = {"numpy": kernels.numpy_impls()}
    nb = kernels.numba_impls()
    if nb is not None:
        backends["numba"] = nb

    print(f"{'kernel':24s}" + "".join(f"{name:>12s}" for name in backends) + f"{'speedup':>10s}")
    for case, args in cases.items():
        times = {name: time_fn(impls[case], *args) for name, impls in backends.items()}
        row = f"{case:24s}" + "".join(f"{times[n] * 1e6:10.1f}us" for n in times)
        if "numba" in times:
            row += f"{times['numpy'] / times['numba']:9.2f}x"
        print(row)


def bench_epoch():
    spec = SynthSpec(per_domain=200, seed=3)
    source, target, text, _ = gen_synth(spec)
    cfg = TrainConfig(epochs=2, seed=3, temperature=0.05)
    t0 = time.perf_counter()
    train(source, target, text, cfg)
    per_epoch = (time.perf_counter() - t0) / cfg.epochs
    print(f"\ntraining ({kernels.BACKEND} backend): {per_epoch * 1e3:.0f} ms/epoch "
          f"(N={spec.per_domain}/domain, d={spec.dim}, K={spec.class_count})")


if __name__ == "__main__":
    print(f"active backend: {kernels.BACKEND} "
          f"(set UNIMOS_NUMBA=0 to force the numpy path)\n")
    bench_kernels()
    bench_epoch()
