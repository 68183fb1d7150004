"""Training objectives: reconstruction, idempotence, tightness (baseline),
consistency flow, distribution-matching pseudo-gradient, denoising and
regression auxiliaries, and the combined objectives."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from signet import autodiff as ad
from signet.errors import ConfigError, ContractError
from signet.pfode import flow_target

METRICS = ("sq_l2", "l2")


@dataclass
class LossWeights:
    """lambda_f/d/r/n weight the auxiliary terms of the combined objective;
    lambda_i/lambda_t only drive the baseline objective."""

    lambda_f: float = 1.0
    lambda_d: float = 0.0
    lambda_r: float = 0.0
    lambda_n: float = 1.0
    lambda_i: float = 1.0
    lambda_t: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{f.name} must be finite and >= 0, got {v}")
            setattr(self, f.name, v)


@dataclass
class LossReport:
    """Per-term scalar values for one step. total is the weighted sum of the
    scalar-valued terms; the DMD term acts through gradient injection and is
    tracked only by its monitoring surrogate."""

    step: int = 0
    recon: float = 0.0
    idem: float = 0.0
    tight: float = 0.0
    flow: float = 0.0
    dmd_surrogate: float = 0.0
    denoise: float = 0.0
    reg: float = 0.0
    total: float = 0.0
    grad_norm: float = 0.0
    wall_ms: float = 0.0

    CSV_COLUMNS = ("step", "l_recon", "l_idem", "l_tight", "l_flow",
                   "l_dmd_surrogate", "l_denoise", "l_reg", "total",
                   "grad_norm", "wall_ms")

    def csv_row(self):
        return (f"{self.step},{self.recon:.17g},{self.idem:.17g},"
                f"{self.tight:.17g},{self.flow:.17g},{self.dmd_surrogate:.17g},"
                f"{self.denoise:.17g},{self.reg:.17g},{self.total:.17g},"
                f"{self.grad_norm:.17g},{self.wall_ms:.3f}")


def _as_batch(x):
    if isinstance(x, ad.Tensor):
        return x
    return ad.Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))


def pair_distance(a, b, metric="sq_l2"):
    """Mean over the batch of D(a_row, b_row)."""
    if metric == "sq_l2":
        return ad.sumsq(a - b) / a.data.shape[0]
    if metric == "l2":
        d = a - b
        return ad.mean(ad.sqrt(ad.asum(ad.mul(d, d), axis=1)))
    raise ConfigError(f"unknown metric {metric!r}")


def _row_sq(a, b):
    d = a - b
    return ad.asum(ad.mul(d, d), axis=1)


def recon_loss(net, x, metric="sq_l2"):
    """Boundary condition: data points map to themselves."""
    x = _as_batch(x)
    return pair_distance(x, net.forward(x), metric)


def idem_loss(net, frozen, z, metric="sq_l2", order="inner", fz=None):
    """Idempotence drift with split gradient paths.

    order "inner" freezes the outer application: D(f(z), f'(f(z))).
    order "outer" is the variant with the frozen copy applied first:
    D(f(z), f(f'(z))).
    """
    z = _as_batch(z)
    if fz is None:
        fz = net.forward(z)
    if order == "inner":
        return pair_distance(fz, frozen.forward(fz), metric)
    if order == "outer":
        return pair_distance(fz, net.forward(ad.stop_gradient(frozen.forward(z))), metric)
    raise ConfigError(f"unknown idem order {order!r}")


def tight_loss(net, frozen, z, metric="sq_l2", clamp=None):
    """Baseline manifold-shrinking term: -D(f(f'(z)), f'(z)).

    Gradient flows through the outer application only. The raw value is
    unbounded below; clamp > 0 applies a smooth per-row cap
    -clamp * tanh(D_row / clamp).
    """
    z = _as_batch(z)
    inner = ad.stop_gradient(frozen.forward(z))
    outer = net.forward(inner)
    if metric == "sq_l2":
        rows = _row_sq(outer, inner)
    elif metric == "l2":
        rows = ad.sqrt(_row_sq(outer, inner))
    else:
        raise ConfigError(f"unknown metric {metric!r}")
    if clamp is not None and clamp > 0:
        rows = ad.tanh(rows * (1.0 / clamp)) * clamp
    return -ad.mean(rows)


def flow_loss(net, frozen, x, n, src, sched, rng, metric="sq_l2"):
    """Consistency along the empirical PF-ODE: outputs at adjacent grid
    points must agree, with the lower-noise (target) side frozen."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_tn = sched.noise(x, n, rng)
    x_ts = flow_target(x_tn, n, src, sched)
    return pair_distance(net.forward(ad.Tensor(x_tn)),
                         ad.stop_gradient(frozen.forward(ad.Tensor(x_ts))), metric)


def denoise_loss(net, x, n, sched, rng, metric="sq_l2"):
    """Noisy input must map back to the clean sample."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_tn = sched.noise(x, n, rng)
    return pair_distance(ad.Tensor(x), net.forward(ad.Tensor(x_tn)), metric)


def reg_loss(net, z_pairs, y_pairs, metric="sq_l2"):
    """Supervised regression onto pre-generated (noise, endpoint) pairs."""
    z_pairs = np.atleast_2d(np.asarray(z_pairs, dtype=np.float64))
    if z_pairs.size == 0:
        raise ConfigError("empty pair store")
    y = ad.Tensor(np.atleast_2d(np.asarray(y_pairs, dtype=np.float64)))
    return pair_distance(net.forward(ad.Tensor(z_pairs)), y, metric)


def dmd_grad(net, z, n, s_learned, s_teacher, sched, rng, weight=1.0, fz=None):
    """Distribution-matching pseudo-gradient.

    y_n = noise(f(z), n); the score difference
    g = s_learned(y_n, n) - s_teacher(y_n, n) is injected at the generator
    output (noise is constant in backward, so dy/df is the identity) and
    backpropagated as g * df/dtheta. Returns (surrogate, fz) where the
    surrogate mean(g . f(z)) with g detached is for monitoring only.
    """
    if fz is None:
        fz = net.forward(_as_batch(z))
    y = sched.noise(fz.data, n, rng)
    g = np.asarray(s_learned.evaluate(y, n)) - np.asarray(s_teacher.evaluate(y, n))
    batch = fz.data.shape[0]
    if weight != 0.0 and fz.requires_grad and np.any(g != 0.0):
        fz.backward(seed=(weight / batch) * g)
    surrogate = float(np.mean(np.sum(g * fz.data, axis=1)))
    return surrogate, fz


def sign_total(net, frozen, x, z, n, weights: LossWeights, teacher, sched, rng,
               learned=None, pair_batch=None, metric="sq_l2",
               idem_order="inner", noise_weighting=False, step=0):
    """Combined objective: recon + idem + lf*flow + ld*dmd + lr*reg + ln*denoise.

    The DMD term contributes through gradient injection (performed here);
    the returned scalar covers the remaining terms and is what the caller
    backpropagates. A term is active when its weight is positive.

    noise_weighting scales the sigma-dependent terms (flow, denoise) by
    1/sigma(t_n)^2 so per-step totals stay comparable across noise levels;
    reported per-term values are always the unweighted ones.
    """
    x = _as_batch(x)
    z = _as_batch(z)
    fz = net.forward(z)
    report = LossReport(step=step)

    terms = []
    l_recon = recon_loss(net, x, metric)
    report.recon = l_recon.item()
    terms.append(l_recon)

    l_idem = idem_loss(net, frozen, z, metric, order=idem_order, fz=fz)
    report.idem = l_idem.item()
    terms.append(l_idem)

    x_tn = None
    w_sigma = 1.0 / sched.sigma_at(n) ** 2 if noise_weighting else 1.0
    if weights.lambda_f > 0 or weights.lambda_n > 0:
        x_tn = sched.noise(x.data, n, rng)
        f_xtn = net.forward(ad.Tensor(x_tn))
    if weights.lambda_f > 0:
        x_ts = flow_target(x_tn, n, teacher, sched)
        l_flow = pair_distance(
            f_xtn, ad.stop_gradient(frozen.forward(ad.Tensor(x_ts))), metric)
        report.flow = l_flow.item()
        terms.append(l_flow * (weights.lambda_f * w_sigma))
    if weights.lambda_n > 0:
        l_den = pair_distance(x, f_xtn, metric)
        report.denoise = l_den.item()
        terms.append(l_den * (weights.lambda_n * w_sigma))
    if weights.lambda_r > 0:
        if pair_batch is None:
            raise ConfigError("lambda_r > 0 requires a pre-generated pair batch")
        l_reg = reg_loss(net, pair_batch[0], pair_batch[1], metric)
        report.reg = l_reg.item()
        terms.append(l_reg * weights.lambda_r)
    if weights.lambda_d > 0:
        if learned is None:
            raise ContractError("lambda_d > 0 requires a learned score source")
        report.dmd_surrogate, _ = dmd_grad(
            net, z, n, learned, teacher, sched, rng,
            weight=weights.lambda_d, fz=fz)

    total = terms[0]
    for t in terms[1:]:
        total = total + t
    report.total = total.item()
    return total, report


def ign_total(net, frozen, x, z, weights: LossWeights, metric="sq_l2",
              tight_clamp=None, step=0):
    """Baseline objective: recon + lambda_i*idem + lambda_t*tight."""
    x = _as_batch(x)
    z = _as_batch(z)
    report = LossReport(step=step)
    l_recon = recon_loss(net, x, metric)
    l_idem = idem_loss(net, frozen, z, metric)
    l_tight = tight_loss(net, frozen, z, metric, clamp=tight_clamp)
    report.recon = l_recon.item()
    report.idem = l_idem.item()
    report.tight = l_tight.item()
    total = l_recon + l_idem * weights.lambda_i + l_tight * weights.lambda_t
    report.total = total.item()
    return total, report


def auto_balance(weights: LossWeights, report: LossReport):
    """Rescale active auxiliary weights so each weighted term starts at the
    magnitude of the reconstruction term (calibration-batch heuristic)."""
    ref = max(abs(report.recon), 1e-12)

    def rescale(lam, value):
        if lam <= 0:
            return lam
        return ref / max(abs(value), 1e-12)

    return LossWeights(
        lambda_f=rescale(weights.lambda_f, report.flow),
        lambda_d=rescale(weights.lambda_d, report.dmd_surrogate),
        lambda_r=rescale(weights.lambda_r, report.reg),
        lambda_n=rescale(weights.lambda_n, report.denoise),
        lambda_i=weights.lambda_i,
        lambda_t=weights.lambda_t,
    )
