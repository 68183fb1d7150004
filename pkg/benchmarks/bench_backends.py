"""Compare the compiled kernel backend against the pure-numpy fallback.

Times the three hot kernels (silu forward/backward, tanh forward/backward,
fused Adam update) plus an end-to-end training step, on both backends in
the same process.

Usage: python benchmarks/bench_backends.py [--size N] [--repeats R]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from signet import _backend


def _time(fn, repeats):
    fn()  # warmup
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(kernels, size, repeats, rng):
    x = rng.standard_normal(size)
    g = rng.standard_normal(size)
    p = rng.standard_normal(size)
    m = np.zeros(size)
    v = np.zeros(size)
    out = np.empty(size)
    rows = {}
    rows["silu_forward"] = _time(lambda: kernels.silu_forward(x, out), repeats)
    rows["silu_backward"] = _time(lambda: kernels.silu_backward(x, g, out), repeats)
    rows["tanh_forward"] = _time(lambda: kernels.tanh_forward(x, out), repeats)
    rows["tanh_backward"] = _time(lambda: kernels.tanh_backward(x, g, out), repeats)
    rows["adam_update"] = _time(
        lambda: kernels.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8,
                                    0.271, 0.00299), repeats)
    return rows


def bench_train_step(pure, repeats):
    import importlib
    import os

    os.environ["SIGNET_PURE"] = "1" if pure else ""
    importlib.reload(_backend)
    import signet.autodiff as autodiff
    importlib.reload(autodiff)
    import signet.net as netmod
    importlib.reload(netmod)
    import signet.optim as optim
    importlib.reload(optim)

    rng = np.random.default_rng(0)
    net = netmod.MlpNet([2, 128, 128, 128, 2], rng=rng)
    adam = optim.AdamState(net)
    x = rng.standard_normal((256, 2))

    def step():
        net.zero_grad()
        out = net.forward(x)
        loss = autodiff.mean(autodiff.sumsq(out - autodiff.Tensor(x)))
        loss.backward()
        optim.adam_step(net, adam, 1e-3)

    return _time(step, repeats)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--size", type=int, default=1_000_000)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    backends = {"numpy": _backend.numpy_kernels}
    if _backend.compiled_kernels is not None:
        backends["compiled"] = _backend.compiled_kernels
    else:
        print("compiled backend unavailable; benchmarking numpy only")

    results = {name: bench_kernels(k, args.size, args.repeats, rng)
               for name, k in backends.items()}
    kernels = list(next(iter(results.values())))
    print(f"\nelementwise kernels, {args.size:,} doubles (best of {args.repeats}):")
    print(f"{'kernel':<16}" + "".join(f"{n:>12}" for n in results))
    for k in kernels:
        line = f"{k:<16}"
        for name in results:
            line += f"{results[name][k] * 1e3:>10.3f}ms"
        if len(results) == 2:
            speedup = results["numpy"][k] / results["compiled"][k]
            line += f"   x{speedup:.2f}"
        print(line)

    print("\nend-to-end training step (batch 256, widths 2-128-128-128-2):")
    t_compiled = None
    if _backend.compiled_kernels is not None:
        t_compiled = bench_train_step(False, args.repeats)
        print(f"{'compiled':<16}{t_compiled * 1e3:>10.3f}ms")
    t_numpy = bench_train_step(True, args.repeats)
    print(f"{'numpy':<16}{t_numpy * 1e3:>10.3f}ms")
    if t_compiled:
        print(f"speedup x{t_numpy / t_compiled:.2f}")


if __name__ == "__main__":
    main()
