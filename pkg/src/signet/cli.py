"""Command-line surface orchestrating the experiment lifecycle.

Every command takes --config/--set/--out/--seed, echoes its resolved
configuration into the output directory, and writes a key=value summary.
Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical divergence,
5 IO/format error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from signet import data as datamod
from signet import evalmetrics, pfode, trainer
from signet.config import load_config
from signet.errors import (ConfigError, DataError, DivergenceError,
                           FormatError, SignetError)
from signet.sampler import EditSchedule, Mask, sample_multistep_edit, \
    sample_recursive, sample_single
from signet.score import AnalyticScore, KernelScore, score_net, \
    train_learned_score

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_IO = 5


def _make_parser():
    parser = argparse.ArgumentParser(prog="signet")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out", default="out")
        p.add_argument("--seed", type=int, default=None)
        return p

    common(sub.add_parser("gen-data", help="generate a dataset as CSV"))
    common(sub.add_parser("pretrain-score", help="fit a score net by DSM"))
    common(sub.add_parser("pregen-pairs", help="pre-generate regression pairs"))
    common(sub.add_parser("train", help="train a generator (sign or ign mode)"))

    p = common(sub.add_parser("sample", help="draw samples from a checkpoint"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--count", type=int, default=1024)
    p.add_argument("--mode", choices=("single", "recursive", "multistep"),
                   default="single")
    p.add_argument("--pgm", default=None, metavar="HxW",
                   help="also emit an 8-bit PGM grid for image-shaped rows")

    p = common(sub.add_parser("edit", help="masked multistep editing"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, metavar="CSV")
    p.add_argument("--mask", required=True, metavar="CSV")

    p = common(sub.add_parser("eval", help="metrics for a checkpoint"))
    p.add_argument("--ckpt", required=True)

    common(sub.add_parser("trace", help="dump teacher PF-ODE trajectories"))
    common(sub.add_parser("scaling-study",
                          help="error-scaling table across grid resolutions"))
    return parser


def _prepare(args):
    cfg = load_config(args.config, overrides=args.set, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "resolved.cfg"), "w", encoding="utf-8") as fh:
        fh.write(cfg.resolved_text())
    return cfg


def _write_summary(out_dir, entries):
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        for line in entries:
            fh.write(line + "\n")


def _dataset(cfg, rng):
    spec = datamod.DatasetSpec.from_config(cfg)
    return datamod.generate(spec, rng)


def build_teacher(cfg, bundle, sched, rng):
    kind = cfg["score.kind"]
    if kind == "analytic":
        if bundle.mixture is None:
            raise ConfigError(
                "score.kind=analytic requires a gaussian_mixture dataset")
        return AnalyticScore(bundle.mixture, sched)
    if kind == "kernel":
        return KernelScore(bundle.data, sched,
                           sigma_floor=cfg["score.kernel.sigma_floor"])
    if kind == "learned":
        net = score_net(bundle.dim, hidden=cfg.ints("score.net.hidden"),
                        activation=cfg["net.activation"], rng=rng)
        return train_learned_score(net, bundle.data, sched,
                                   cfg["score.net.steps"],
                                   lr=cfg["score.net.lr"], rng=rng)
    raise ConfigError(f"unknown score.kind {kind!r}")


# -- command bodies -------------------------------------------------------

def _cmd_gen_data(args, cfg):
    rng = np.random.default_rng(cfg["seed"])
    bundle = _dataset(cfg, rng)
    samples_dir = os.path.join(args.out, "samples")
    os.makedirs(samples_dir, exist_ok=True)
    datamod.save_samples_csv(os.path.join(samples_dir, "data.csv"), bundle.data)
    _write_summary(args.out, [
        f"count={len(bundle.data)}",
        f"dim={bundle.dim}",
        f"mean_abs_max={np.abs(bundle.data.mean(axis=0)).max():.6g}",
        f"std_min={bundle.data.std(axis=0).min():.6g}",
        f"std_max={bundle.data.std(axis=0).max():.6g}",
    ])
    return 0


def _cmd_pretrain_score(args, cfg):
    rng = np.random.default_rng(cfg["seed"])
    bundle = _dataset(cfg, rng)
    sched = cfg.schedule()
    net = score_net(bundle.dim, hidden=cfg.ints("score.net.hidden"),
                    activation=cfg["net.activation"], rng=rng)
    train_learned_score(net, bundle.data, sched, cfg["score.net.steps"],
                        lr=cfg["score.net.lr"], rng=rng)
    ckpt_dir = os.path.join(args.out, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    trainer.save_checkpoint(os.path.join(ckpt_dir, "score.bin"), net,
                            cfg["score.net.steps"], cfg["seed"], rng,
                            cfg_hash=cfg.digest())
    _write_summary(args.out, [f"score_steps={cfg['score.net.steps']}"])
    return 0


def _cmd_pregen_pairs(args, cfg):
    rng = np.random.default_rng(cfg["seed"])
    bundle = _dataset(cfg, rng)
    sched = cfg.schedule()
    teacher = build_teacher(cfg, bundle, sched, rng)
    z, y, failures = trainer.pregenerate_pairs(
        teacher, sched, cfg["reg.pair_count"], bundle.dim, rng,
        solver=cfg["pfode.solver"])
    trainer.save_pairs(os.path.join(args.out, "pairs.bin"), z, y)
    _write_summary(args.out, [f"pairs={len(z)}", f"failures={failures}"])
    return 0


def _cmd_train(args, cfg):
    rng = np.random.default_rng(cfg["seed"])
    bundle = _dataset(cfg, rng)
    sched = cfg.schedule()
    mode = cfg["train.mode"]
    if mode == "sign":
        teacher = build_teacher(cfg, bundle, sched, rng)
        result = trainer.train_sign(cfg, bundle, teacher, out_dir=args.out)
    elif mode == "ign":
        result = trainer.train_ign(cfg, bundle, out_dir=args.out)
    else:
        raise ConfigError(f"unknown train.mode {mode!r}")
    eval_rng = np.random.default_rng(cfg["seed"] + 101)
    z = eval_rng.standard_normal((2048, bundle.dim))
    drift = evalmetrics.idem_drift(result.net, z)
    last = result.reports[-1] if result.reports else None
    telemetry = trainer.stability_telemetry(result.reports)
    _write_summary(args.out, [
        f"mode={mode}",
        f"steps={len(result.reports)}",
        f"aborted={str(result.aborted).lower()}",
        f"idem_drift={drift:.17g}",
        f"final_total={last.total if last else float('nan'):.17g}",
        f"nonfinite_steps={telemetry['nonfinite']}",
        f"overshoot_steps={telemetry['overshoot']}",
    ])
    return 0


def _load_net(path):
    return trainer.load_checkpoint(path)["net"]


def _cmd_sample(args, cfg):
    net = _load_net(args.ckpt)
    sched = cfg.schedule()
    rng = np.random.default_rng(cfg["seed"])
    z = sched.sigma(sched.T) * rng.standard_normal((args.count, net.in_width))
    if args.mode == "single":
        out = sample_single(net, z)
    elif args.mode == "recursive":
        out, _iters = sample_recursive(net, z, cfg["sampler.max_iters"],
                                       cfg["sampler.tol"])
    else:
        edit = EditSchedule.geometric(cfg["sampler.edit_sigma_hi"],
                                      cfg["sampler.edit_sigma_lo"],
                                      cfg["sampler.edit_steps"])
        mask = Mask(np.ones(net.in_width))
        out = sample_multistep_edit(net, z, mask, edit, rng)
    samples_dir = os.path.join(args.out, "samples")
    os.makedirs(samples_dir, exist_ok=True)
    datamod.save_samples_csv(os.path.join(samples_dir, "samples.csv"), out)
    if args.pgm:
        h, w = (int(v) for v in args.pgm.lower().split("x"))
        datamod.save_pgm_grid(os.path.join(samples_dir, "samples.pgm"),
                              out[:64], (h, w))
    _write_summary(args.out, [f"samples={len(out)}", f"mode={args.mode}"])
    return 0


def _cmd_edit(args, cfg):
    net = _load_net(args.ckpt)
    x = datamod.load_samples_csv(args.input)
    mask = Mask(datamod.load_samples_csv(args.mask).reshape(-1))
    rng = np.random.default_rng(cfg["seed"])
    edit = EditSchedule.geometric(cfg["sampler.edit_sigma_hi"],
                                  cfg["sampler.edit_sigma_lo"],
                                  cfg["sampler.edit_steps"])
    out = sample_multistep_edit(net, x, mask, edit, rng)
    samples_dir = os.path.join(args.out, "samples")
    os.makedirs(samples_dir, exist_ok=True)
    datamod.save_samples_csv(os.path.join(samples_dir, "edited.csv"), out)
    _write_summary(args.out, [f"edited={len(out)}"])
    return 0


def _cmd_eval(args, cfg):
    net = _load_net(args.ckpt)
    rng = np.random.default_rng(cfg["seed"])
    bundle = _dataset(cfg, rng)
    sched = cfg.schedule()
    teacher = build_teacher(cfg, bundle, sched, rng)
    m = min(cfg["eval.samples"], len(bundle.data))
    z = sched.sigma(sched.T) * rng.standard_normal((m, bundle.dim))
    samples = sample_single(net, z)
    data_idx = rng.permutation(len(bundle.data))
    half = min(m, len(bundle.data) // 2)
    report = evalmetrics.EvalReport(
        idem_drift=evalmetrics.idem_drift(net, z),
        recon_error=evalmetrics.recon_error(net, bundle.data[:m]),
        sliced_w2=evalmetrics.sliced_w2(samples[:half], bundle.data[data_idx[:half]],
                                        cfg["eval.projections"], rng),
        sliced_w2_baseline=evalmetrics.sliced_w2(
            bundle.data[data_idx[:half]], bundle.data[data_idx[half:2 * half]],
            cfg["eval.projections"], rng),
        energy_distance=evalmetrics.energy_distance(
            samples[:half], bundle.data[data_idx[:half]], rng),
        flow_residuals=evalmetrics.flow_residuals(net, bundle.data, teacher,
                                                  sched, rng),
    )
    lines = report.summary_lines()
    with open(os.path.join(args.out, "eval.csv"), "w", encoding="utf-8") as fh:
        fh.write("metric,value\n")
        for line in lines:
            key, value = line.split("=", 1)
            fh.write(f"{key},{value}\n")
    _write_summary(args.out, lines)
    return 0


def _cmd_trace(args, cfg):
    rng = np.random.default_rng(cfg["seed"])
    bundle = _dataset(cfg, rng)
    sched = cfg.schedule()
    teacher = build_teacher(cfg, bundle, sched, rng)
    grid = sched.grid()
    count = cfg["trace.count"]
    z = sched.sigma(sched.T) * rng.standard_normal((count, bundle.dim))
    path = os.path.join(args.out, "trace.csv")
    with open(path, "w", encoding="utf-8") as fh:
        cols = ",".join(f"x_{i}" for i in range(bundle.dim))
        fh.write(f"traj_id,grid_index,t,{cols}\n")
        for tid in range(count):
            traj = pfode.solve(z[tid], teacher, sched,
                               solver=cfg["pfode.solver"])
            for idx, state in zip(traj.indices, traj.states):
                vals = ",".join(f"{v:.17g}" for v in np.atleast_1d(state))
                fh.write(f"{tid},{idx},{grid[idx]:.17g},{vals}\n")
    _write_summary(args.out, [f"trajectories={count}"])
    return 0


def _cmd_scaling_study(args, cfg):
    if cfg["score.kind"] != "analytic":
        raise ConfigError("scaling-study requires score.kind=analytic")
    base_seed = cfg["seed"]
    rng = np.random.default_rng(base_seed)
    bundle = _dataset(cfg, rng)
    gm = bundle.mixture
    if gm is None:
        raise ConfigError("scaling-study requires a gaussian_mixture dataset")
    ns = cfg.ints("scaling.grid_sizes")
    data_scale_sq = float(np.mean(bundle.data.var(axis=0)))
    tol = cfg["scaling.flow_tol_mult"] * data_scale_sq

    def sched_factory(n):
        from signet.schedule import NoiseSchedule
        return NoiseSchedule(kind=cfg["schedule.kind"],
                             sigma_min=cfg["schedule.sigma_min"],
                             sigma_max=cfg["schedule.sigma_max"],
                             eps=cfg["schedule.eps"], T=cfg["schedule.T"],
                             N=n, rho=cfg["schedule.rho"])

    nets, flagged = {}, []
    for n in ns:
        sub_cfg = load_config(args.config, overrides=list(args.set) + [
            f"schedule.N={n}", f"train.steps={cfg['scaling.max_steps']}",
        ], seed=base_seed + n)
        sub_bundle = _dataset(sub_cfg, np.random.default_rng(sub_cfg["seed"]))
        teacher = AnalyticScore(sub_bundle.mixture, sched_factory(n))
        result = trainer.train_sign(sub_cfg, sub_bundle, teacher)
        tail = [r.flow for r in result.reports[-100:]]
        if float(np.mean(tail)) > tol:
            flagged.append(n)
        nets[n] = result.net

    x_T = cfg["schedule.sigma_max"] * np.random.default_rng(base_seed + 7).standard_normal((64, bundle.dim))
    table = evalmetrics.theorem3_scaling(gm, sched_factory, nets, x_T,
                                         flagged=flagged)
    kept_n = [n for n in sorted(table) if not table[n]["excluded"]]
    lines = [f"N={n} sup_error={table[n]['sup_error']:.17g} "
             f"excluded={str(table[n]['excluded']).lower()}" for n in sorted(table)]
    slope = float("nan")
    if len(kept_n) >= 2:
        slope = evalmetrics.fit_loglog_slope(
            kept_n, [table[n]["sup_error"] for n in kept_n])
    with open(os.path.join(args.out, "scaling.csv"), "w", encoding="utf-8") as fh:
        fh.write("N,sup_error,excluded\n")
        for n in sorted(table):
            fh.write(f"{n},{table[n]['sup_error']:.17g},"
                     f"{int(table[n]['excluded'])}\n")
    _write_summary(args.out, lines + [f"slope={slope:.6g}"])
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "pretrain-score": _cmd_pretrain_score,
    "pregen-pairs": _cmd_pregen_pairs,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "edit": _cmd_edit,
    "eval": _cmd_eval,
    "trace": _cmd_trace,
    "scaling-study": _cmd_scaling_study,
}


def run(argv=None):
    args = _make_parser().parse_args(argv)
    try:
        cfg = _prepare(args)
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error category=config {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error category=data {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"error category=divergence step={exc.step} {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FormatError, OSError) as exc:
        print(f"error category=io {exc}", file=sys.stderr)
        return EXIT_IO
    except SignetError as exc:
        print(f"error category=internal {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
