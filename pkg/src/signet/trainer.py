"""Training loops for the combined objective and the adversarial baseline,
pair pre-generation, and binary checkpoint / pair-store persistence."""

from __future__ import annotations

import json
import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from signet import pfode
from signet.errors import ConfigError, DivergenceError, FormatError
from signet.losses import LossReport, auto_balance, ign_total, sign_total
from signet.net import FrozenView, MlpNet
from signet.optim import AdamState, adam_step
from signet.score import LearnedScore, dsm_loss, score_net

CKPT_MAGIC = b"SGNCKPT1"
PAIR_MAGIC = b"SGNPAIR1"
CKPT_VERSION = 1


@dataclass
class TrainResult:
    net: MlpNet
    frozen: FrozenView
    reports: list = field(default_factory=list)
    aborted: bool = False
    abort_step: int | None = None
    learned: LearnedScore | None = None


class MetricsWriter:
    """Streams LossReport rows to a CSV file (or collects them in memory)."""

    def __init__(self, path=None):
        self.path = path
        self._fh = None
        if path is not None:
            self._fh = open(path, "w", encoding="utf-8")
            self._fh.write(",".join(LossReport.CSV_COLUMNS) + "\n")

    def write(self, report: LossReport):
        if self._fh is not None:
            self._fh.write(report.csv_row() + "\n")

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


# -- binary persistence ---------------------------------------------------

def _read_exact(fh, count, what):
    buf = fh.read(count)
    if len(buf) != count:
        raise FormatError(f"truncated checkpoint reading {what}")
    return buf


def save_checkpoint(path, net: MlpNet, step, seed, rng, adam: AdamState = None,
                    cfg_hash=""):
    desc = dict(net.arch_descriptor(), cfg_hash=cfg_hash)
    desc_bytes = json.dumps(desc, sort_keys=True).encode()
    state_bytes = json.dumps(rng.bit_generator.state).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<I", len(desc_bytes)))
        fh.write(desc_bytes)
        fh.write(struct.pack("<QQ", step, seed))
        fh.write(struct.pack("<I", len(state_bytes)))
        fh.write(state_bytes)
        fh.write(net.get_flat().tobytes())
        if adam is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<Qddd", adam.step, adam.beta1, adam.beta2,
                                 adam.eps))
            fh.write(np.concatenate([m.reshape(-1) for m in adam.m]).tobytes())
            fh.write(np.concatenate([v.reshape(-1) for v in adam.v]).tobytes())


def load_checkpoint(path, expect_widths=None):
    """Returns a dict with net, step, seed, rng, adam (or None), descriptor."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 8, "magic")
        if magic != CKPT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        version, = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CKPT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        dlen, = struct.unpack("<I", _read_exact(fh, 4, "descriptor length"))
        desc = json.loads(_read_exact(fh, dlen, "descriptor"))
        if expect_widths is not None and list(desc["widths"]) != [int(w) for w in expect_widths]:
            raise ConfigError(
                f"architecture mismatch: checkpoint widths {desc['widths']}, "
                f"expected {list(expect_widths)}")
        step, seed = struct.unpack("<QQ", _read_exact(fh, 16, "step/seed"))
        rlen, = struct.unpack("<I", _read_exact(fh, 4, "rng length"))
        rng_state = json.loads(_read_exact(fh, rlen, "rng state"))
        net = MlpNet.from_descriptor(desc)
        flat = np.frombuffer(
            _read_exact(fh, 8 * net.param_count, "parameters"), dtype="<f8")
        net.set_flat(flat)
        adam = None
        flag, = struct.unpack("<B", _read_exact(fh, 1, "optimizer flag"))
        if flag:
            astep, b1, b2, eps = struct.unpack(
                "<Qddd", _read_exact(fh, 32, "optimizer header"))
            adam = AdamState(net, beta1=b1, beta2=b2, eps=eps)
            adam.step = astep
            m = np.frombuffer(_read_exact(fh, 8 * net.param_count, "adam m"),
                              dtype="<f8")
            v = np.frombuffer(_read_exact(fh, 8 * net.param_count, "adam v"),
                              dtype="<f8")
            off = 0
            for k, p in enumerate(net.parameters()):
                n = p.data.size
                adam.m[k] = m[off:off + n].reshape(p.data.shape).copy()
                adam.v[k] = v[off:off + n].reshape(p.data.shape).copy()
                off += n
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = rng_state
    return {"net": net, "step": step, "seed": seed, "rng": rng, "adam": adam,
            "descriptor": desc}


def save_pairs(path, z, y):
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    with open(path, "wb") as fh:
        fh.write(PAIR_MAGIC)
        fh.write(struct.pack("<QI", z.shape[0], z.shape[1]))
        for zi, yi in zip(z, y):
            fh.write(zi.tobytes())
            fh.write(yi.tobytes())


def load_pairs(path):
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 8, "pair magic")
        if magic != PAIR_MAGIC:
            raise FormatError(f"bad pair-store magic {magic!r}")
        count, d = struct.unpack("<QI", _read_exact(fh, 12, "pair header"))
        z = np.empty((count, d))
        y = np.empty((count, d))
        for i in range(count):
            z[i] = np.frombuffer(_read_exact(fh, 8 * d, f"pair {i} z"), dtype="<f8")
            y[i] = np.frombuffer(_read_exact(fh, 8 * d, f"pair {i} y"), dtype="<f8")
    return z, y


def pregenerate_pairs(teacher, sched, count, dim, rng, solver="euler",
                      batch=1024):
    """Draw z ~ N(0, sigma(T)^2 I), solve the teacher PF-ODE to its endpoint.

    Pairs whose solve produced non-finite values are dropped; returns
    (z, y, failure_count).
    """
    if count < 1:
        raise ConfigError("pair count must be >= 1")
    zs, ys, failures = [], [], 0
    sigma_T = sched.sigma(sched.T)
    remaining = count
    while remaining > 0:
        b = min(batch, remaining)
        z = sigma_T * rng.standard_normal((b, dim))
        try:
            y = pfode.solve(z, teacher, sched, solver=solver).endpoint()
        except DivergenceError:
            failures += b
            remaining -= b
            continue
        ok = np.all(np.isfinite(y), axis=1)
        failures += int(b - ok.sum())
        zs.append(z[ok])
        ys.append(y[ok])
        remaining -= b
    if not zs:
        raise DivergenceError("every pair solve failed")
    return np.concatenate(zs), np.concatenate(ys), failures


# -- training loops -------------------------------------------------------

def _lr_at(cfg, step, steps):
    """Learning rate for a step: constant, or cosine decay to 1% of base.

    Depends only on (config, step index) so checkpoint resume reproduces the
    same schedule."""
    lr = cfg["train.lr"]
    decay = cfg["train.lr_decay"]
    if decay == "none":
        return lr
    if decay == "cosine":
        frac = step / max(steps, 1)
        return lr * (0.01 + 0.99 * 0.5 * (1.0 + np.cos(np.pi * frac)))
    raise ConfigError(f"unknown train.lr_decay {decay!r}")


def _finite(report: LossReport):
    vals = (report.recon, report.idem, report.tight, report.flow,
            report.denoise, report.reg, report.total)
    return all(np.isfinite(v) for v in vals)


def _make_net(cfg, rng):
    return MlpNet(cfg.ints("net.widths"), activation=cfg["net.activation"],
                  identity_init=cfg["net.identity_init"], rng=rng)


def train_sign(cfg, bundle, teacher, learned=None, out_dir=None,
               resume_from=None):
    """Distillation training loop.

    Per step: refresh the frozen copy, draw (x, z, n), assemble the combined
    objective, Adam-update; when the distribution-matching term is on,
    interleave K denoising-score-matching updates of the learned score on
    generator outputs. Divergence raises DivergenceError with the step index
    and last report.
    """
    sched = cfg.schedule()
    weights = cfg.weights()
    metric = cfg["loss.metric"]
    idem_order = cfg["loss.idem_order"]
    seed = cfg["seed"]
    data = bundle.data
    dim = bundle.dim
    batch = cfg["train.batch"]
    steps = cfg["train.steps"]
    ema_decay = cfg["train.ema_decay"] if cfg["train.freeze_mode"] == "ema" else 0.0

    rng = np.random.default_rng(seed)
    net = _make_net(cfg, rng)
    adam = AdamState(net, beta1=cfg["train.beta1"], beta2=cfg["train.beta2"],
                     eps=cfg["train.adam_eps"])
    start_step = 0
    if resume_from is not None:
        loaded = load_checkpoint(resume_from, expect_widths=cfg.ints("net.widths"))
        net = loaded["net"]
        adam = loaded["adam"] or adam
        rng = loaded["rng"]
        start_step = loaded["step"]
    frozen = FrozenView(net)

    # side streams are seeded independently so checkpoint resume only needs
    # the main rng state
    pair_batch_all = None
    if weights.lambda_r > 0:
        if cfg["reg.pair_path"]:
            pz, py = load_pairs(cfg["reg.pair_path"])
        else:
            pz, py, _fail = pregenerate_pairs(
                teacher, sched, cfg["reg.pair_count"], dim,
                np.random.default_rng(seed + 1), solver=cfg["pfode.solver"])
        pair_batch_all = (pz, py)
    pair_rng = np.random.default_rng(seed + 2)

    score_rng = np.random.default_rng(seed + 3)
    score_adam = None
    if weights.lambda_d > 0:
        if learned is None:
            learned = LearnedScore(
                score_net(dim, hidden=cfg.ints("score.net.hidden"),
                          activation=cfg["net.activation"],
                          rng=np.random.default_rng(seed + 4)),
                sched)
        score_adam = AdamState(learned.net)

    # latents are drawn at the prior scale sigma(T), matching sampling time
    sigma_T = sched.sigma(sched.T)

    if cfg["loss.auto_balance"]:
        cal_rng = np.random.default_rng(seed + 5)
        idx = cal_rng.integers(0, len(data), size=batch)
        z = sigma_T * cal_rng.standard_normal((batch, dim))
        n = int(cal_rng.integers(1, sched.N + 1))
        frozen.refresh()
        _, cal_report = sign_total(
            net, frozen, data[idx], z, n, weights, teacher, sched, cal_rng,
            learned=learned, pair_batch=_pair_minibatch(pair_batch_all, batch, cal_rng),
            metric=metric, idem_order=idem_order,
            noise_weighting=cfg["loss.noise_weighting"])
        net.zero_grad()
        weights = auto_balance(weights, cal_report)

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    writer = MetricsWriter(os.path.join(out_dir, "metrics.csv") if out_dir else None)
    ckpt_dir = None
    if out_dir:
        ckpt_dir = os.path.join(out_dir, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)
    interval = cfg["train.checkpoint_interval"]

    result = TrainResult(net=net, frozen=frozen, learned=learned)
    clip = None
    try:
        for step in range(start_step, steps):
            t0 = time.perf_counter()
            if ema_decay > 0 and step > 0:
                frozen.ema_update(ema_decay)
            else:
                frozen.refresh()
            idx = rng.integers(0, len(data), size=batch)
            x = data[idx]
            z = sigma_T * rng.standard_normal((batch, dim))
            n = int(rng.integers(1, sched.N + 1))
            net.zero_grad()
            total, report = sign_total(
                net, frozen, x, z, n, weights, teacher, sched, rng,
                learned=learned,
                pair_batch=_pair_minibatch(pair_batch_all, batch, pair_rng),
                metric=metric, idem_order=idem_order,
                noise_weighting=cfg["loss.noise_weighting"], step=step)
            if not _finite(report):
                result.aborted = True
                result.abort_step = step
                result.reports.append(report)
                writer.write(report)
                raise DivergenceError(f"non-finite loss at step {step}",
                                      step=step, report=report)
            total.backward()
            norm = adam_step(net, adam, _lr_at(cfg, step, steps), clip=clip)
            if clip is None and cfg["train.grad_clip"] and norm > 0:
                clip = cfg["train.grad_clip_mult"] * norm
            report.grad_norm = norm
            if weights.lambda_d > 0:
                _update_learned_score(net, learned, score_adam, sched, cfg,
                                      batch, score_rng)
            report.wall_ms = 1000.0 * (time.perf_counter() - t0)
            result.reports.append(report)
            writer.write(report)
            done = step + 1
            if ckpt_dir and (done % interval == 0 or done == steps):
                save_checkpoint(os.path.join(ckpt_dir, f"ckpt_{done:07d}.bin"),
                                net, done, seed, rng, adam, cfg.digest())
    finally:
        writer.close()
    if ckpt_dir:
        save_checkpoint(os.path.join(ckpt_dir, "final.bin"), net, steps, seed,
                        rng, adam, cfg.digest())
    return result


def _pair_minibatch(pair_batch_all, batch, rng):
    if pair_batch_all is None:
        return None
    pz, py = pair_batch_all
    idx = rng.integers(0, len(pz), size=min(batch, len(pz)))
    return pz[idx], py[idx]


def _update_learned_score(net, learned, score_adam, sched, cfg, batch, rng):
    """K DSM updates of the learned score on current generator outputs."""
    learned.begin_update()
    sigma_T = sched.sigma(sched.T)
    try:
        for _ in range(cfg["train.score_updates_per_step"]):
            z = sigma_T * rng.standard_normal((batch, net.in_width))
            xg = net.forward(z).data
            n = int(rng.integers(1, sched.N + 1))
            learned.net.zero_grad()
            loss = dsm_loss(learned.net, xg, n, sched, rng)
            loss.backward()
            adam_step(learned.net, score_adam, cfg["score.net.lr"])
    finally:
        learned.end_update()


def train_ign(cfg, bundle, out_dir=None):
    """Adversarial baseline loop.

    Divergence is an expected, recorded outcome: the loop stops and the
    result carries aborted/abort_step instead of raising.
    """
    weights = cfg.weights()
    metric = cfg["loss.metric"]
    clamp = cfg["loss.tight_clamp"] or None
    seed = cfg["seed"]
    data = bundle.data
    dim = bundle.dim
    batch = cfg["train.batch"]
    steps = cfg["train.steps"]

    sigma_T = cfg.schedule().sigma(cfg.schedule().T)
    rng = np.random.default_rng(seed)
    net = _make_net(cfg, rng)
    adam = AdamState(net, beta1=cfg["train.beta1"], beta2=cfg["train.beta2"],
                     eps=cfg["train.adam_eps"])
    frozen = FrozenView(net)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    writer = MetricsWriter(os.path.join(out_dir, "metrics.csv") if out_dir else None)
    result = TrainResult(net=net, frozen=frozen)
    clip = None
    use_clip = cfg["train.grad_clip"]
    try:
        for step in range(steps):
            t0 = time.perf_counter()
            frozen.refresh()
            idx = rng.integers(0, len(data), size=batch)
            z = sigma_T * rng.standard_normal((batch, dim))
            net.zero_grad()
            total, report = ign_total(net, frozen, data[idx], z, weights,
                                      metric=metric, tight_clamp=clamp, step=step)
            if not _finite(report):
                result.aborted = True
                result.abort_step = step
                result.reports.append(report)
                writer.write(report)
                break
            total.backward()
            try:
                norm = adam_step(net, adam, _lr_at(cfg, step, steps), clip=clip)
            except DivergenceError:
                result.aborted = True
                result.abort_step = step
                result.reports.append(report)
                writer.write(report)
                break
            if clip is None and use_clip and norm > 0:
                clip = cfg["train.grad_clip_mult"] * norm
            report.grad_norm = norm
            report.wall_ms = 1000.0 * (time.perf_counter() - t0)
            result.reports.append(report)
            writer.write(report)
    finally:
        writer.close()
    return result


def stability_telemetry(reports):
    """Counts of non-finite totals and overshoot steps (|total| exceeding 10x
    the running median of preceding |total| values)."""
    totals = np.array([r.total for r in reports])
    nonfinite = int(np.sum(~np.isfinite(totals)))
    overshoot = 0
    history = []
    for t in totals:
        if history and np.isfinite(t) and abs(t) > 10.0 * np.median(history):
            overshoot += 1
        if np.isfinite(t):
            history.append(abs(t))
    max_abs = float(np.nanmax(np.abs(totals[np.isfinite(totals)]))) if np.any(np.isfinite(totals)) else float("inf")
    return {"nonfinite": nonfinite, "overshoot": overshoot, "max_abs_total": max_abs,
            "steps": len(reports)}
