"""Objective terms: values, identities, and gradient correctness."""

import numpy as np
import pytest

from signet import autodiff as ad
from signet.errors import ConfigError, ContractError
from signet.gradcheck import finite_diff_check
from signet.losses import (LossReport, LossWeights, auto_balance, dmd_grad,
                           denoise_loss, flow_loss, idem_loss, ign_total,
                           pair_distance, recon_loss, reg_loss, sign_total,
                           tight_loss)
from signet.net import FrozenView, MlpNet
from signet.schedule import NoiseSchedule
from signet.score import AnalyticScore, GaussianMixture

RNG = np.random.default_rng(0)
GM = GaussianMixture(np.array([0.5, 0.5]), np.array([[-1.0, 0.0], [1.0, 0.0]]),
                     np.array([0.3, 0.3]))
SCHED = NoiseSchedule(N=6)
TEACHER = AnalyticScore(GM, SCHED)


def _net(seed=0, widths=(2, 6, 5, 2)):
    return MlpNet(list(widths), rng=np.random.default_rng(seed))


def test_pair_distance_values():
    a = ad.Tensor(np.array([[1.0, 2.0], [0.0, 0.0]]))
    b = ad.Tensor(np.array([[0.0, 0.0], [3.0, 4.0]]))
    assert pair_distance(a, b, "sq_l2").item() == pytest.approx((5 + 25) / 2)
    assert pair_distance(a, b, "l2").item() == pytest.approx((np.sqrt(5) + 5) / 2)
    with pytest.raises(ConfigError):
        pair_distance(a, b, "l1")


def test_weights_validation():
    with pytest.raises(ConfigError):
        LossWeights(lambda_f=-1.0)
    with pytest.raises(ConfigError):
        LossWeights(lambda_d=float("nan"))


def test_tight_equals_negative_idem_when_copies_match():
    # with theta' = theta and the same z, -tight == idem by construction
    net = _net(1)
    frozen = FrozenView(net)
    z = RNG.standard_normal((16, 2))
    lt = tight_loss(net, frozen, z).item()
    li = idem_loss(net, frozen, z).item()
    assert lt == pytest.approx(-li, rel=1e-12)


def test_tight_clamp_bounds_magnitude():
    net = _net(2)
    frozen = FrozenView(net)
    net.set_flat(net.get_flat() * 8.0)  # make the copies disagree wildly
    z = 5.0 * RNG.standard_normal((8, 2))
    clamped = tight_loss(net, frozen, z, clamp=1.0).item()
    assert -1.0 <= clamped <= 0.0


@pytest.mark.parametrize("name", ["recon", "idem_inner", "idem_outer",
                                  "tight", "flow", "denoise", "reg"])
def test_every_loss_passes_finite_differences(name):
    net = _net(3)
    frozen = FrozenView(net)
    data_rng = np.random.default_rng(42)  # fixed draws per case
    x = data_rng.standard_normal((4, 2))
    z = data_rng.standard_normal((4, 2))
    zp, yp = data_rng.standard_normal((4, 2)), data_rng.standard_normal((4, 2))

    def lossfn(n):
        r = np.random.default_rng(99)  # fixed noise per evaluation
        if name == "recon":
            return recon_loss(n, x)
        if name == "idem_inner":
            return idem_loss(n, frozen, z, order="inner")
        if name == "idem_outer":
            return idem_loss(n, frozen, z, order="outer")
        if name == "tight":
            return tight_loss(n, frozen, z)
        if name == "flow":
            return flow_loss(n, frozen, x, 3, TEACHER, SCHED, r)
        if name == "denoise":
            return denoise_loss(n, x, 2, SCHED, r)
        return reg_loss(n, zp, yp)

    assert finite_diff_check(lossfn, net) <= 1e-4


def test_combined_total_passes_finite_differences():
    net = _net(4)
    frozen = FrozenView(net)
    x = RNG.standard_normal((3, 2))
    z = RNG.standard_normal((3, 2))
    w = LossWeights(lambda_f=0.7, lambda_n=0.5, lambda_r=0.3, lambda_d=0.0)
    pairs = (RNG.standard_normal((3, 2)), RNG.standard_normal((3, 2)))

    def lossfn(n):
        total, _ = sign_total(n, frozen, x, z, 2, w, TEACHER, SCHED,
                              np.random.default_rng(7), pair_batch=pairs)
        return total

    assert finite_diff_check(lossfn, net) <= 1e-4


def test_dmd_zero_when_sources_agree():
    net = _net(5)
    z = RNG.standard_normal((8, 2))
    net.zero_grad()
    surrogate, _ = dmd_grad(net, z, 2, TEACHER, TEACHER, SCHED,
                            np.random.default_rng(1))
    assert surrogate == 0.0
    assert all(p.grad is None for p in net.params)


def test_dmd_injects_score_difference():
    # identity-at-init net: f(z) = z, so the injected gradient reaching the
    # final bias is (weight/B) * sum_rows g
    net = MlpNet([2, 4, 2], identity_init=True, rng=np.random.default_rng(6))
    z = RNG.standard_normal((8, 2))

    class Shifted:
        def __init__(self, delta):
            self.delta = np.asarray(delta)

        def evaluate(self, x, n):
            return TEACHER.evaluate(x, n) + self.delta

    net.zero_grad()
    rng = np.random.default_rng(2)
    dmd_grad(net, z, 2, Shifted([0.5, -0.25]), TEACHER, SCHED, rng, weight=2.0)
    bias_grad = net.params[-1].grad
    np.testing.assert_allclose(bias_grad, (2.0 / 8) * 8 * np.array([0.5, -0.25]),
                               rtol=1e-12)


def test_sign_total_report_consistency():
    net = _net(7)
    frozen = FrozenView(net)
    x, z = RNG.standard_normal((8, 2)), RNG.standard_normal((8, 2))
    w = LossWeights(lambda_f=0.4, lambda_n=0.2)
    total, rep = sign_total(net, frozen, x, z, 3, w, TEACHER, SCHED,
                            np.random.default_rng(3), step=17)
    assert rep.step == 17
    assert rep.total == pytest.approx(
        rep.recon + rep.idem + 0.4 * rep.flow + 0.2 * rep.denoise)
    assert all(v >= 0 for v in (rep.recon, rep.idem, rep.flow, rep.denoise))


def test_sign_total_requires_learned_for_dmd():
    net = _net(8)
    frozen = FrozenView(net)
    w = LossWeights(lambda_d=1.0)
    with pytest.raises(ContractError):
        sign_total(net, frozen, RNG.standard_normal((2, 2)),
                   RNG.standard_normal((2, 2)), 1, w, TEACHER, SCHED,
                   np.random.default_rng(4))


def test_reg_loss_empty_pairs():
    with pytest.raises(ConfigError):
        reg_loss(_net(9), np.empty((0, 2)), np.empty((0, 2)))


def test_ign_total_composition():
    net = _net(10)
    frozen = FrozenView(net)
    x, z = RNG.standard_normal((6, 2)), RNG.standard_normal((6, 2))
    w = LossWeights(lambda_i=2.0, lambda_t=0.5)
    total, rep = ign_total(net, frozen, x, z, w)
    assert rep.total == pytest.approx(rep.recon + 2.0 * rep.idem + 0.5 * rep.tight)
    assert rep.tight == pytest.approx(-rep.idem, rel=1e-12)


def test_auto_balance_matches_recon_scale():
    w = LossWeights(lambda_f=1.0, lambda_n=1.0, lambda_r=0.0, lambda_d=0.0)
    rep = LossReport(recon=2.0, flow=0.5, denoise=8.0)
    out = auto_balance(w, rep)
    assert out.lambda_f * rep.flow == pytest.approx(rep.recon)
    assert out.lambda_n * rep.denoise == pytest.approx(rep.recon)
    assert out.lambda_r == 0.0


def test_csv_row_round_trip():
    rep = LossReport(step=3, recon=0.125, idem=1e-17, total=0.125)
    row = rep.csv_row().split(",")
    assert len(row) == len(LossReport.CSV_COLUMNS)
    assert float(row[1]) == 0.125
    assert float(row[2]) == 1e-17
