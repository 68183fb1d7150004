"""Flat `key = value` run configuration with dotted namespaces.

Unknown keys are errors (no silent typos). Every run echoes its resolved
config, which reproduces the run when fed back in. The SIGN_SEED
environment variable overrides the config seed; an explicit --seed flag
overrides both.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np

from signet.errors import ConfigError
from signet.losses import LossWeights
from signet.schedule import NoiseSchedule
from signet.score import GaussianMixture

DEFAULTS = {
    "seed": 0,
    "dataset.kind": "gaussian_mixture",
    "dataset.count": 20000,
    "dataset.normalize": True,
    "dataset.mixture.weights": "0.5,0.5",
    "dataset.mixture.means": "-0.95,-0.95;0.95,0.95",
    "dataset.mixture.stds": "0.3,0.3",
    "dataset.moons.noise": 0.05,
    "dataset.rings.radii": "0.6,1.2",
    "dataset.rings.noise": 0.03,
    "dataset.idx.images": "",
    "dataset.idx.labels": "",
    "net.widths": "2,128,128,128,2",
    "net.activation": "silu",
    "net.identity_init": True,
    "schedule.kind": "identity",
    "schedule.sigma_min": 0.002,
    "schedule.sigma_max": 1.0,
    "schedule.eps": 0.002,
    "schedule.T": 1.0,
    "schedule.N": 18,
    "schedule.rho": 7.0,
    "score.kind": "analytic",
    "score.kernel.sigma_floor": 0.01,
    "score.net.hidden": "64,64",
    "score.net.lr": 1e-3,
    "score.net.steps": 2000,
    "loss.metric": "sq_l2",
    "loss.lambda_f": 1.0,
    "loss.lambda_d": 0.0,
    "loss.lambda_r": 0.0,
    "loss.lambda_n": 1.0,
    "loss.lambda_i": 1.0,
    "loss.lambda_t": 0.1,
    "loss.auto_balance": False,
    "loss.noise_weighting": False,
    "loss.tight_clamp": 0.0,
    "loss.idem_order": "inner",
    "train.mode": "sign",
    "train.steps": 20000,
    "train.batch": 256,
    "train.lr": 1e-3,
    "train.lr_decay": "none",
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.adam_eps": 1e-8,
    "train.freeze_mode": "copy",
    "train.ema_decay": 0.999,
    "train.checkpoint_interval": 5000,
    "train.grad_clip": True,
    "train.grad_clip_mult": 100.0,
    "train.score_updates_per_step": 5,
    "pfode.solver": "euler",
    "reg.pair_count": 4096,
    "reg.pair_path": "",
    "sampler.max_iters": 10,
    "sampler.tol": 1e-4,
    "sampler.edit_steps": 10,
    "sampler.edit_sigma_hi": 0.5,
    "sampler.edit_sigma_lo": 0.002,
    "eval.projections": 128,
    "eval.samples": 10000,
    "scaling.grid_sizes": "8,16,32",
    "scaling.max_steps": 8000,
    "scaling.flow_tol_mult": 1e-4,
    "trace.count": 8,
}


def _convert(key, raw):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"bad boolean for {key}: {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"bad integer for {key}: {raw!r}") from exc
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"bad float for {key}: {raw!r}") from exc
    return raw.strip()


def parse_config_text(text):
    """Parse `key = value` lines; '#' starts a comment; blank lines ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        out[key] = _convert(key, raw)
    return out


class Config:
    """Resolved run configuration (defaults + file + overrides)."""

    def __init__(self, values):
        self.values = dict(values)

    def __getitem__(self, key):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def resolved_text(self):
        lines = []
        for key in sorted(self.values):
            v = self.values[key]
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = f"{v:.17g}"
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self):
        return hashlib.sha256(self.resolved_text().encode()).hexdigest()[:16]

    # -- typed views ------------------------------------------------------

    def ints(self, key):
        return [int(v) for v in str(self[key]).split(",") if v.strip()]

    def floats(self, key):
        return [float(v) for v in str(self[key]).split(",") if v.strip()]

    def schedule(self):
        return NoiseSchedule(
            kind=self["schedule.kind"],
            sigma_min=self["schedule.sigma_min"],
            sigma_max=self["schedule.sigma_max"],
            eps=self["schedule.eps"],
            T=self["schedule.T"],
            N=self["schedule.N"],
            rho=self["schedule.rho"],
        )

    def weights(self):
        return LossWeights(
            lambda_f=self["loss.lambda_f"],
            lambda_d=self["loss.lambda_d"],
            lambda_r=self["loss.lambda_r"],
            lambda_n=self["loss.lambda_n"],
            lambda_i=self["loss.lambda_i"],
            lambda_t=self["loss.lambda_t"],
        )

    def mixture(self):
        weights = self.floats("dataset.mixture.weights")
        means = [[float(v) for v in part.split(",")]
                 for part in str(self["dataset.mixture.means"]).split(";") if part.strip()]
        stds = self.floats("dataset.mixture.stds")
        return GaussianMixture(np.array(weights), np.array(means), np.array(stds))


def load_config(path=None, overrides=(), seed=None):
    """Defaults < config file < repeated key=value overrides < SIGN_SEED <
    explicit seed argument."""
    values = dict(DEFAULTS)
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _convert(key, raw)
    env_seed = os.environ.get("SIGN_SEED")
    if env_seed is not None:
        values["seed"] = int(env_seed)
    if seed is not None:
        values["seed"] = int(seed)
    return Config(values)
