"""Score sources against independent oracles."""

import numpy as np
import pytest

from signet.errors import ConfigError, DegenerateDensityError, PhaseError
from signet.schedule import NoiseSchedule
from signet.score import (AnalyticScore, GaussianMixture, KernelScore,
                          LearnedScore, dsm_loss, kernel_score, mixture_logpdf,
                          mixture_score, score_net, train_learned_score)


def _gm():
    return GaussianMixture(np.array([0.3, 0.7]),
                           np.array([[-1.0, 0.5], [0.8, -0.3]]),
                           np.array([0.4, 0.6]))


def _fd_score(gm, x, sigma, step=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        hi = x.copy(); hi[i] += step
        lo = x.copy(); lo[i] -= step
        g[i] = (mixture_logpdf(gm, hi, sigma) - mixture_logpdf(gm, lo, sigma)) / (2 * step)
    return g


@pytest.mark.parametrize("sigma", [0.0, 0.1, 0.7])
def test_mixture_score_matches_logpdf_gradient(sigma):
    gm = _gm()
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((20, 2)) * 1.5
    analytic = mixture_score(gm, pts, sigma)
    for k, p in enumerate(pts):
        np.testing.assert_allclose(analytic[k], _fd_score(gm, p.copy(), sigma),
                                   atol=1e-6)


def test_single_point_kernel_equals_gaussian_score():
    # one data point: kernel density IS N(x; x_1, sigma^2 I), so scores match
    # the single-component mixture exactly
    x1 = np.array([0.4, -0.7])
    sigma = 0.35
    gm = GaussianMixture(np.array([1.0]), x1[None, :], np.array([sigma]))
    pts = np.random.default_rng(1).standard_normal((30, 2))
    ks = kernel_score(x1[None, :], pts, sigma)
    ms = mixture_score(gm, pts, 0.0)
    np.testing.assert_array_equal(ks, ms)  # same closed form, bitwise


def test_kernel_score_is_responsibility_weighted():
    data = np.random.default_rng(2).standard_normal((50, 2))
    pts = np.random.default_rng(3).standard_normal((10, 2))
    sigma = 0.5
    got = kernel_score(data, pts, sigma)
    # brute-force reference with explicit normalized weights
    for b, p in enumerate(pts):
        logits = -np.sum((data - p) ** 2, axis=1) / (2 * sigma ** 2)
        w = np.exp(logits - logits.max())
        w /= w.sum()
        ref = (w[:, None] * (data - p)).sum(axis=0) / sigma ** 2
        np.testing.assert_allclose(got[b], ref, rtol=1e-10)


def test_kernel_score_far_field_stable():
    data = np.zeros((5, 2))
    far = np.array([[1e4, 1e4]])
    out = kernel_score(data, far, 0.1)
    assert np.all(np.isfinite(out))


def test_degenerate_density_raises():
    gm = _gm()
    gm.stds = np.array([0.0, 0.0])  # bypass constructor validation on purpose
    with pytest.raises(DegenerateDensityError):
        mixture_score(gm, np.zeros(2), 0.0)
    with pytest.raises(ConfigError):
        kernel_score(np.zeros((3, 2)), np.zeros(2), 0.0)


def test_mixture_population_moments():
    gm = _gm()
    rng = np.random.default_rng(4)
    draws = gm.sample(400000, rng)
    np.testing.assert_allclose(draws.mean(axis=0), gm.population_mean(), atol=5e-3)
    np.testing.assert_allclose(draws.var(axis=0), gm.population_var(), atol=1e-2)


def test_transformed_mixture_consistent():
    gm = _gm()
    shift = gm.population_mean()
    scale = float(np.sqrt(gm.population_var().mean()))
    tf = gm.transformed(shift, scale)
    # score transforms as s'(y) = scale * s(scale*y + shift)
    y = np.random.default_rng(5).standard_normal((10, 2))
    np.testing.assert_allclose(mixture_score(tf, y, 0.0),
                               scale * mixture_score(gm, y * scale + shift, 0.0),
                               rtol=1e-10)


def test_score_sources_share_interface():
    sched = NoiseSchedule(N=8)
    gm = _gm()
    rng = np.random.default_rng(6)
    pts = rng.standard_normal((6, 2))
    a = AnalyticScore(gm, sched)
    np.testing.assert_allclose(a.evaluate(pts, 3),
                               mixture_score(gm, pts, sched.sigma_at(3)))
    k = KernelScore(gm.sample(100, rng), sched, sigma_floor=0.05)
    assert k.evaluate(pts, 1).shape == pts.shape


def test_learned_score_phase_guard():
    sched = NoiseSchedule(N=4)
    src = LearnedScore(score_net(2, rng=np.random.default_rng(7)), sched)
    src.begin_update()
    with pytest.raises(PhaseError):
        src.evaluate(np.zeros((1, 2)), 1)
    src.end_update()
    assert src.evaluate(np.zeros((1, 2)), 1).shape == (1, 2)


def test_learned_score_widths_validated():
    sched = NoiseSchedule(N=4)
    from signet.net import MlpNet
    with pytest.raises(ConfigError):
        LearnedScore(MlpNet([2, 8, 2]), sched)


def test_dsm_training_approaches_gaussian_score():
    # single Gaussian: perturbed score is -(x - mu) / (s^2 + sigma^2)
    sched = NoiseSchedule(N=6)
    gm = GaussianMixture(np.array([1.0]), np.array([[0.0, 0.0]]), np.array([1.0]))
    rng = np.random.default_rng(8)
    data = gm.sample(4000, rng)
    net = score_net(2, hidden=(48, 48), rng=rng)
    src = train_learned_score(net, data, sched, steps=2000, lr=2e-3, rng=rng)
    pts = np.random.default_rng(9).standard_normal((200, 2))
    n = 5  # moderate noise level: the 1/sigma score amplification is mild
    sigma = sched.sigma_at(n)
    truth = mixture_score(gm, pts, sigma)
    err = np.linalg.norm(src.evaluate(pts, n) - truth, axis=1).mean()
    scale = np.linalg.norm(truth, axis=1).mean()
    assert err < 0.3 * scale


def test_dsm_loss_value_reasonable():
    sched = NoiseSchedule(N=4)
    net = score_net(2, rng=np.random.default_rng(10))
    x = np.random.default_rng(11).standard_normal((32, 2))
    loss = dsm_loss(net, x, 1, sched, np.random.default_rng(12))
    assert np.isfinite(loss.item()) and loss.item() > 0
