"""Inference: single-step generation, recursive refinement, and multistep
masked editing with noise injection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from signet.errors import ConfigError, DimensionError


@dataclass
class EditSchedule:
    """Strictly decreasing positive injection noise levels."""

    sigmas: np.ndarray

    def __post_init__(self):
        self.sigmas = np.asarray(self.sigmas, dtype=np.float64)
        if self.sigmas.ndim != 1 or len(self.sigmas) == 0:
            raise ConfigError("edit schedule needs at least one level")
        if np.any(self.sigmas <= 0) or np.any(np.diff(self.sigmas) >= 0):
            raise ConfigError("edit schedule must be strictly decreasing and positive")

    @classmethod
    def geometric(cls, sigma_hi, sigma_lo, steps=10):
        if not 0 < sigma_lo < sigma_hi:
            raise ConfigError("need 0 < sigma_lo < sigma_hi")
        return cls(np.geomspace(sigma_hi, sigma_lo, steps))


@dataclass
class Mask:
    """Per-coordinate weights in [0, 1]; 1 marks coordinates the model
    regenerates, 0 marks coordinates preserved from the input."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if np.any(self.weights < 0) or np.any(self.weights > 1):
            raise ConfigError("mask weights must lie in [0, 1]")

    @property
    def is_binary(self):
        return bool(np.all((self.weights == 0.0) | (self.weights == 1.0)))


def _net_apply(net, x):
    out = net.forward(x)
    return np.asarray(out) if isinstance(out, np.ndarray) else out.data


def sample_single(net, z):
    """One forward pass: f(z)."""
    return _net_apply(net, np.atleast_2d(np.asarray(z, dtype=np.float64)))


def sample_recursive(net, z, max_iters=10, tol=1e-4):
    """Iterate x <- f(x) until the per-row sup-norm change drops below tol.

    Returns (x, iterations). On an exactly idempotent map this stops after
    iteration 2 (first detected repeat). Non-convergence is reported through
    iterations == max_iters, not an error.
    """
    if max_iters < 1 or tol <= 0:
        raise ConfigError("need max_iters >= 1 and tol > 0")
    x = np.atleast_2d(np.asarray(z, dtype=np.float64))
    iters = 0
    for _ in range(max_iters):
        x_new = _net_apply(net, x)
        iters += 1
        delta = np.abs(x_new - x).max(axis=1)
        x = x_new
        if iters >= 2 and np.all(delta < tol):
            break
    return x, iters


def _blend(fx, keep, mask: Mask):
    if mask.is_binary:
        # exact branchless preservation: unmasked coordinates stay bitwise
        return np.where(mask.weights.astype(bool), fx, keep)
    return fx * mask.weights + keep * (1.0 - mask.weights)


def sample_multistep_edit(net, x_prime, mask: Mask, edit: EditSchedule, rng):
    """Masked multistep editing.

    x <- f(x') (x) M + x' (x) (1-M); then per level i: perturb with sigma_i
    noise, reproject, and blend again. All-ones mask gives unconditional
    multistep generation; coordinates with M=0 pass through untouched.
    """
    x_prime = np.atleast_2d(np.asarray(x_prime, dtype=np.float64))
    if mask.weights.shape != x_prime.shape[1:] and mask.weights.shape != x_prime.shape:
        raise DimensionError(
            f"mask shape {mask.weights.shape} does not match data shape "
            f"{x_prime.shape}")
    x = _blend(_net_apply(net, x_prime), x_prime, mask)
    for sigma in edit.sigmas:
        x_tau = x + sigma * rng.standard_normal(x.shape)
        x = _blend(_net_apply(net, x_tau), x, mask)
    return x
