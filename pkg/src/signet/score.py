"""Score-function sources: exact Gaussian-mixture scores, empirical kernel
estimators over a dataset, and an online-trained score network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from signet import autodiff as ad
from signet.errors import ConfigError, DegenerateDensityError, DivergenceError, PhaseError
from signet.net import MlpNet
from signet.optim import AdamState, adam_step

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GaussianMixture:
    """Isotropic Gaussian mixture: weights (K,), means (K, d), stds (K,)."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.stds = np.asarray(self.stds, dtype=np.float64)
        if self.weights.ndim != 1 or len(self.weights) != len(self.means) \
                or len(self.weights) != len(self.stds):
            raise ConfigError("mixture component counts disagree")
        if np.any(self.weights < 0) or self.weights.sum() <= 0:
            raise ConfigError("mixture weights must be non-negative with positive sum")
        if np.any(self.stds <= 0):
            raise ConfigError("mixture stds must be positive")
        self.weights = self.weights / self.weights.sum()

    @property
    def dim(self):
        return self.means.shape[1]

    def sample(self, count, rng):
        comps = rng.choice(len(self.weights), size=count, p=self.weights)
        eps = rng.standard_normal((count, self.dim))
        return self.means[comps] + self.stds[comps, None] * eps

    def population_mean(self):
        return self.weights @ self.means

    def population_var(self):
        """Per-dimension variance of the mixture."""
        mu = self.population_mean()
        second = self.weights @ (self.means ** 2 + self.stds[:, None] ** 2)
        return second - mu ** 2

    def transformed(self, shift, scale):
        """The mixture of (x - shift) / scale; scale must be scalar so the
        components stay isotropic."""
        return GaussianMixture(self.weights.copy(),
                               (self.means - shift) / scale,
                               self.stds / scale)


def _component_terms(gm: GaussianMixture, x, sigma):
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    var = gm.stds ** 2 + sigma ** 2
    if np.any(var <= 0.0):
        raise DegenerateDensityError("zero total variance: score undefined")
    diff = gm.means[None, :, :] - x2[:, None, :]       # (B, K, d)
    sq = np.sum(diff * diff, axis=-1)                   # (B, K)
    loglik = (np.log(gm.weights)[None, :]
              - 0.5 * gm.dim * (LOG_2PI + np.log(var))[None, :]
              - 0.5 * sq / var[None, :])
    return x2, var, diff, loglik


def mixture_logpdf(gm: GaussianMixture, x, sigma=0.0):
    """log density of the sigma-perturbed mixture (finite-difference oracle)."""
    x2, _, _, loglik = _component_terms(gm, x, sigma)
    out = logsumexp(loglik, axis=1)
    return out if np.asarray(x).ndim == 2 else float(out[0])


def mixture_score(gm: GaussianMixture, x, sigma=0.0):
    """Exact score of the mixture convolved with N(0, sigma^2 I).

    grad_x log sum_k pi_k N(x; mu_k, (s_k^2 + sigma^2) I)
      = sum_k w_k(x) (mu_k - x) / (s_k^2 + sigma^2),
    with posterior responsibilities w_k computed in log space.
    """
    x2, var, diff, loglik = _component_terms(gm, x, sigma)
    resp = np.exp(loglik - logsumexp(loglik, axis=1, keepdims=True))
    out = np.einsum("bk,bkd->bd", resp, diff / var[None, :, None])
    return out if np.asarray(x).ndim == 2 else out[0]


def kernel_score(dataset, x, sigma):
    """Empirical kernel score: grad_x log sum_i N(x; x_i, sigma^2 I)."""
    if sigma <= 0:
        raise ConfigError("kernel_score requires sigma > 0")
    data = np.atleast_2d(np.asarray(dataset, dtype=np.float64))
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    diff = data[None, :, :] - x2[:, None, :]            # (B, M, d)
    logits = -np.sum(diff * diff, axis=-1) / (2.0 * sigma ** 2)
    w = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    out = np.einsum("bm,bmd->bd", w, diff) / sigma ** 2
    return out if np.asarray(x).ndim == 2 else out[0]


class ScoreSource:
    """Evaluator (point, noise level) -> score vector."""

    def __init__(self, sched):
        self.sched = sched

    def evaluate(self, x, n):
        return self.evaluate_sigma(x, self.sched.sigma_at(n))

    def evaluate_sigma(self, x, sigma):
        raise NotImplementedError


class AnalyticScore(ScoreSource):
    def __init__(self, gm: GaussianMixture, sched):
        super().__init__(sched)
        self.gm = gm

    def evaluate_sigma(self, x, sigma):
        return mixture_score(self.gm, x, sigma)


class KernelScore(ScoreSource):
    def __init__(self, dataset, sched, sigma_floor=1e-2):
        super().__init__(sched)
        self.dataset = np.atleast_2d(np.asarray(dataset, dtype=np.float64))
        self.sigma_floor = float(sigma_floor)

    def evaluate_sigma(self, x, sigma):
        return kernel_score(self.dataset, x, max(sigma, self.sigma_floor))


class LearnedScore(ScoreSource):
    """Score network conditioned on log(sigma) appended to the input.

    The net predicts the noise eps_hat(x, sigma); the score is -eps_hat /
    sigma. This keeps targets at unit scale across noise levels instead of
    exploding like 1/sigma at the low end. Training phases take exclusive
    write access: evaluate() during an update raises PhaseError.
    """

    def __init__(self, net: MlpNet, sched):
        super().__init__(sched)
        if net.widths[0] != net.widths[-1] + 1:
            raise ConfigError(
                f"score net must take [x, log sigma], widths {net.widths}")
        self.net = net
        self._updating = False

    def begin_update(self):
        self._updating = True

    def end_update(self):
        self._updating = False

    def _inputs(self, x, sigma):
        x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cond = np.full((x2.shape[0], 1), np.log(sigma))
        return np.concatenate([x2, cond], axis=1)

    def evaluate_sigma(self, x, sigma):
        if self._updating:
            raise PhaseError("learned score evaluated during an update phase")
        out = -self.net.forward(ad.Tensor(self._inputs(x, sigma))).data / sigma
        return out if np.asarray(x).ndim == 2 else out[0]


def score_net(dim, hidden=(64, 64), activation="silu", rng=None):
    widths = [dim + 1, *hidden, dim]
    return MlpNet(widths, activation=activation, rng=rng, endomorphic=False)


def dsm_loss(net: MlpNet, x, n, sched, rng):
    """Denoising score matching in noise-prediction form.

    The net regresses eps from (x + sigma*eps, log sigma); this equals the
    raw score objective || s + eps/sigma ||^2 up to the sigma^2 weighting
    that keeps targets at unit scale."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    sigma = sched.sigma_at(n)
    eps = rng.standard_normal(x.shape)
    inp = np.concatenate([x + sigma * eps, np.full((x.shape[0], 1), np.log(sigma))],
                         axis=1)
    out = net.forward(ad.Tensor(inp))
    return ad.sumsq(out - eps) / x.shape[0]


def train_learned_score(net: MlpNet, data_stream, sched, steps, lr=1e-3,
                        batch=128, rng=None, beta1=0.9, beta2=0.999):
    """Fit a score net by DSM over noise levels sampled from the grid.

    data_stream is either an (M, d) array (minibatches are resampled from
    it) or a callable (batch_size, rng) -> (batch_size, d) array. Returns a
    LearnedScore wrapper; steps=0 leaves the net at initialization.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if callable(data_stream):
        draw = data_stream
    else:
        pool = np.atleast_2d(np.asarray(data_stream, dtype=np.float64))

        def draw(b, r):
            return pool[r.integers(0, len(pool), size=b)]

    source = LearnedScore(net, sched)
    state = AdamState(net, beta1=beta1, beta2=beta2)
    source.begin_update()
    try:
        for step in range(steps):
            x = draw(batch, rng)
            n = int(rng.integers(1, sched.N + 1))
            net.zero_grad()
            loss = dsm_loss(net, x, n, sched, rng)
            if not np.isfinite(loss.item()):
                raise DivergenceError(f"DSM loss diverged at step {step}",
                                      step=step)
            loss.backward()
            adam_step(net, state, lr)
    finally:
        source.end_update()
    return source
