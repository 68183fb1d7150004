"""Noise schedule sigma(t), its warped discretization grid, and the noising
operator x -> x + sigma(t_n) * eps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from signet.errors import ConfigError, RangeError


@dataclass
class NoiseSchedule:
    """sigma(t) on [eps, T] with an N-interval rho-warped grid.

    kind "identity": sigma(t) = t (so sigma_min/sigma_max are implied by
    eps and T). kind "linear": affine interpolation from sigma_min at eps
    to sigma_max at T.
    """

    kind: str = "identity"
    sigma_min: float = 0.002
    sigma_max: float = 1.0
    eps: float = 0.002
    T: float = 1.0
    N: int = 18
    rho: float = 7.0
    _grid: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("identity", "linear"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if not (0.0 < self.eps < self.T):
            raise ConfigError(f"need 0 < eps < T, got eps={self.eps}, T={self.T}")
        if self.N < 1:
            raise ConfigError(f"need N >= 1, got {self.N}")
        if self.kind == "identity":
            self.sigma_min = self.eps
            self.sigma_max = self.T
        elif not (0.0 < self.sigma_min < self.sigma_max):
            raise ConfigError("need 0 < sigma_min < sigma_max")

    def _check_t(self, t):
        if t < self.eps - 1e-12 or t > self.T + 1e-12:
            raise RangeError(f"t={t} outside [{self.eps}, {self.T}]")

    def sigma(self, t):
        self._check_t(t)
        if self.kind == "identity":
            return float(t)
        frac = (t - self.eps) / (self.T - self.eps)
        return float(self.sigma_min + (self.sigma_max - self.sigma_min) * frac)

    def sigma_dot(self, t):
        self._check_t(t)
        if self.kind == "identity":
            return 1.0
        return (self.sigma_max - self.sigma_min) / (self.T - self.eps)

    def grid(self):
        """t_i = (eps^(1/rho) + (i/N)(T^(1/rho) - eps^(1/rho)))^rho, endpoints exact."""
        if self._grid is None:
            i = np.arange(self.N + 1, dtype=np.float64)
            a = self.eps ** (1.0 / self.rho)
            b = self.T ** (1.0 / self.rho)
            t = (a + (i / self.N) * (b - a)) ** self.rho
            t[0] = self.eps
            t[-1] = self.T
            self._grid = t
        return self._grid

    def sigma_at(self, n):
        """sigma at grid index n."""
        return self.sigma(self.grid()[n])

    def noise(self, x, n, rng):
        """x + sigma(t_n) * eps with eps ~ N(0, I).

        The draw is a constant with respect to any gradient tape; callers add
        the returned array to tape tensors when gradients must flow through x.
        """
        grid = self.grid()
        if not 0 <= n <= self.N:
            raise RangeError(f"grid index {n} outside [0, {self.N}]")
        x = np.asarray(x, dtype=np.float64)
        return x + self.sigma(grid[n]) * rng.standard_normal(x.shape)
