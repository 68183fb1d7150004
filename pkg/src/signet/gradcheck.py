"""Central-finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np


def finite_diff_check(lossfn, net, step=1e-6):
    """Max relative error between analytic and central-difference gradients.

    lossfn(net) must be deterministic given the net (fix any rng and frozen
    copies in the closure, so perturbing a parameter does not move the
    frozen side). The per-component error is
    |analytic - central| / (1 + max(|analytic|, |central|)),
    i.e. absolute for small gradients (where central differences are pure
    roundoff noise) and relative for large ones.
    """
    net.zero_grad()
    loss = lossfn(net)
    loss.backward()
    analytic = net.grad_flat()

    theta = net.get_flat()
    central = np.empty_like(theta)
    work = theta.copy()
    for i in range(theta.size):
        work[i] = theta[i] + step
        net.set_flat(work)
        hi = lossfn(net).item()
        work[i] = theta[i] - step
        net.set_flat(work)
        lo = lossfn(net).item()
        work[i] = theta[i]
        central[i] = (hi - lo) / (2.0 * step)
    net.set_flat(theta)
    net.zero_grad()

    err = np.abs(analytic - central) / (1.0 + np.maximum(np.abs(analytic),
                                                         np.abs(central)))
    return float(err.max())
