# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled elementwise kernels for the training hot loop.

Matrix products stay in BLAS via numpy either way; these kernels cover the
elementwise work (activations and the fused Adam update) where numpy pays
for several temporaries per call.
"""

from libc.math cimport exp, sqrt, tanh as ctanh


def silu_forward(double[::1] x, double[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double s
    for i in range(n):
        s = 1.0 / (1.0 + exp(-x[i]))
        out[i] = x[i] * s


def silu_backward(double[::1] x, double[::1] g, double[::1] out):
    # d/dx [x*sigmoid(x)] = s * (1 + x * (1 - s))
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double s
    for i in range(n):
        s = 1.0 / (1.0 + exp(-x[i]))
        out[i] = g[i] * s * (1.0 + x[i] * (1.0 - s))


def tanh_forward(double[::1] x, double[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    for i in range(n):
        out[i] = ctanh(x[i])


def tanh_backward(double[::1] y, double[::1] g, double[::1] out):
    # y is tanh(x); derivative is 1 - y^2
    cdef Py_ssize_t i, n = y.shape[0]
    for i in range(n):
        out[i] = g[i] * (1.0 - y[i] * y[i])


def adam_update(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps,
                double bias1, double bias2):
    """In-place Adam step; bias1/bias2 are 1 - beta^t correction factors."""
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double mhat, vhat
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        mhat = m[i] / bias1
        vhat = v[i] / bias2
        p[i] -= lr * mhat / (sqrt(vhat) + eps)
