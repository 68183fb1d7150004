"""Kernel backend selection.

The compiled extension (signet._kernels, Cython) is preferred; a pure-numpy
implementation with identical semantics is used when the extension is absent
or when SIGNET_PURE=1 is set. benchmarks/bench_backends.py compares the two.
"""

import os

import numpy as np


class _NumpyKernels:
    name = "numpy"

    @staticmethod
    def silu_forward(x, out):
        s = 1.0 / (1.0 + np.exp(-x))
        np.multiply(x, s, out=out)

    @staticmethod
    def silu_backward(x, g, out):
        s = 1.0 / (1.0 + np.exp(-x))
        np.multiply(g, s * (1.0 + x * (1.0 - s)), out=out)

    @staticmethod
    def tanh_forward(x, out):
        np.tanh(x, out=out)

    @staticmethod
    def tanh_backward(y, g, out):
        np.multiply(g, 1.0 - y * y, out=out)

    @staticmethod
    def adam_update(p, g, m, v, lr, beta1, beta2, eps, bias1, bias2):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bias1) / (np.sqrt(v / bias2) + eps)


def _load_compiled():
    if os.environ.get("SIGNET_PURE") == "1":
        return None
    try:
        from signet import _kernels
    except ImportError:
        return None
    _kernels.name = "cython"
    return _kernels


numpy_kernels = _NumpyKernels
compiled_kernels = _load_compiled()
kernels = compiled_kernels if compiled_kernels is not None else numpy_kernels

BACKEND = getattr(kernels, "name", "cython")


def _flat(a):
    return np.ascontiguousarray(a).reshape(-1)


def silu(x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    kernels.silu_forward(_flat(x), out.reshape(-1))
    return out


def silu_grad(x, g):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    kernels.silu_backward(_flat(x), _flat(g), out.reshape(-1))
    return out


def tanh(x):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    kernels.tanh_forward(_flat(x), out.reshape(-1))
    return out


def tanh_grad(y, g):
    y = np.ascontiguousarray(y)
    out = np.empty_like(y)
    kernels.tanh_backward(_flat(y), _flat(g), out.reshape(-1))
    return out


def adam_update(p, g, m, v, lr, beta1, beta2, eps, step):
    bias1 = 1.0 - beta1 ** step
    bias2 = 1.0 - beta2 ** step
    kernels.adam_update(p.reshape(-1), _flat(g), m.reshape(-1), v.reshape(-1),
                        lr, beta1, beta2, eps, bias1, bias2)
