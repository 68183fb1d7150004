"""MLP generator, frozen (detached) views, and parameter plumbing."""

from __future__ import annotations

import numpy as np

from signet import autodiff as ad
from signet.errors import DimensionError

_ACTIVATIONS = {"silu": ad.silu, "tanh": ad.tanh}


class MlpNet:
    """A fully-connected net over float64 tensors.

    When ``identity_init`` is set, the final layer starts at zero and a skip
    connection adds the input, so the map starts out as the identity. Used
    for generators, where the reconstruction boundary condition wants
    f ~ identity on the data at the start of training.
    """

    def __init__(self, widths, activation="silu", identity_init=False,
                 rng=None, endomorphic=True):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise DimensionError(f"bad layer widths {widths}")
        if endomorphic and widths[0] != widths[-1]:
            raise DimensionError(
                f"generator must map the data space to itself, got widths {widths}")
        if activation not in _ACTIVATIONS:
            raise DimensionError(f"unknown activation {activation!r}")
        self.widths = widths
        self.activation = activation
        self.identity_init = bool(identity_init)
        self.endomorphic = bool(endomorphic)
        if rng is None:
            rng = np.random.default_rng(0)
        self.params = []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            last = i == len(widths) - 2
            if last and identity_init:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            b = np.zeros(fan_out)
            self.params.append(ad.Tensor(w, requires_grad=True))
            self.params.append(ad.Tensor(b, requires_grad=True))

    @property
    def in_width(self):
        return self.widths[0]

    @property
    def out_width(self):
        return self.widths[-1]

    @property
    def param_count(self):
        return sum(p.data.size for p in self.params)

    def parameters(self):
        return self.params

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def forward(self, x, params=None):
        """f(x) per row; records the tape when gradients are live."""
        if not isinstance(x, ad.Tensor):
            x = ad.Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        if x.data.ndim != 2 or x.data.shape[1] != self.in_width:
            raise DimensionError(
                f"batch shape {x.data.shape} incompatible with input width {self.in_width}")
        if params is None:
            params = self.params
        act = _ACTIVATIONS[self.activation]
        h = x
        n_layers = len(self.widths) - 1
        for i in range(n_layers):
            h = ad.affine(h, params[2 * i], params[2 * i + 1])
            if i < n_layers - 1:
                h = act(h)
        if self.identity_init:
            h = ad.add(h, x)
        return h

    def __call__(self, x):
        return self.forward(x)

    # -- flat parameter vector (gradcheck, checkpoints) -------------------

    def get_flat(self):
        return np.concatenate([p.data.reshape(-1) for p in self.params])

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.param_count:
            raise DimensionError(
                f"flat vector size {vec.size} != parameter count {self.param_count}")
        off = 0
        for p in self.params:
            n = p.data.size
            p.data = vec[off:off + n].reshape(p.data.shape).copy()
            off += n

    def grad_flat(self):
        parts = []
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            parts.append(np.asarray(g).reshape(-1))
        return np.concatenate(parts)

    def arch_descriptor(self):
        return {
            "widths": self.widths,
            "activation": self.activation,
            "identity_init": self.identity_init,
            "endomorphic": self.endomorphic,
        }

    @classmethod
    def from_descriptor(cls, desc):
        return cls(desc["widths"], activation=desc["activation"],
                   identity_init=desc["identity_init"],
                   endomorphic=desc.get("endomorphic", True))


class FrozenView:
    """A detached view of an MlpNet.

    Forward values are identical to the source net at refresh time, but the
    parameters are constants: no gradient reaches the source parameters
    through this path. Gradients still flow through the *input*, which is
    what the idempotence loss needs.
    """

    def __init__(self, net: MlpNet):
        self.net = net
        self.params = [ad.Tensor(p.data.copy()) for p in net.params]

    def refresh(self):
        """Copy mode: snapshot the source parameters."""
        for frozen, live in zip(self.params, self.net.params):
            frozen.data = live.data.copy()

    def ema_update(self, decay):
        """EMA mode; decay=0 reduces to a plain copy."""
        if decay == 0.0:
            self.refresh()
            return
        for frozen, live in zip(self.params, self.net.params):
            frozen.data = decay * frozen.data + (1.0 - decay) * live.data

    def forward(self, x):
        return self.net.forward(x, params=self.params)

    def __call__(self, x):
        return self.forward(x)
