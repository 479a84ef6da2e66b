"""Command line entry point: ``train``, ``evaluate``, ``sweep`` and ``oracle``."""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .allocator import AllocatorModel
from .harness import (CSV_HEADER, ExperimentConfig, build_model, decompose_delays, format_row,
                      held_out_set, load_config, oracle_experiment, run_sweep, _atomic_write)
from .trainer import TrainingDivergence, train

EXIT_DIVERGED = 3


def _config(args):
    if args.config:
        cfg = load_config(args.config, desk=args.desk)
    else:
        cfg = ExperimentConfig.desk() if args.desk else ExperimentConfig.full()
    training = cfg.training
    if args.deterministic is not None:
        training = dataclasses.replace(training, deterministic=args.deterministic)
    if getattr(args, "scheme", None):
        training = dataclasses.replace(training, scheme=args.scheme)
    cfg = dataclasses.replace(cfg, training=training)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seeds=(args.seed,))
    return cfg


def cmd_train(args):
    cfg = _config(args)
    seed = cfg.seeds[0]
    training = dataclasses.replace(cfg.training, seed=seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg, cfg.system, seed)
    try:
        model, report = train(training, model, cfg.system, checkpoint_path=out / "model.npz")
    except TrainingDivergence as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    _atomic_write(out / "train_report.csv", report.to_csv())
    print(f"best epoch {report.best_epoch}: validation t_gamma {report.best_val_tgamma_s:.6g} s "
          f"-> {out / 'model.npz'}")
    return 0


def cmd_evaluate(args):
    cfg = _config(args)
    model = AllocatorModel.load(args.checkpoint)
    if (model.n_devices, model.n_antennas) != (cfg.system.n_devices, cfg.system.n_antennas):
        print("checkpoint dimensions do not match the configuration", file=sys.stderr)
        return 2
    seed = cfg.seeds[0] if args.seed is not None else cfg.test_seed
    tests = held_out_set(dataclasses.replace(cfg, test_seed=seed), cfg.system)
    stats = decompose_delays(model, tests, cfg.system, cfg.training.gamma)
    row = dict(scheme=model.meta.get("scheme", "unknown"), axis="none", value=0.0, seed=seed,
               diverged=0, **stats)
    text = CSV_HEADER + "\n" + format_row(row) + "\n"
    if args.out:
        out = Path(args.out)
        _atomic_write(out / "evaluate.csv", text)
    sys.stdout.write(text)
    return 0


def cmd_sweep(args):
    cfg = _config(args)
    if args.axis:
        cfg = dataclasses.replace(cfg, sweep_axis=args.axis)
    if args.grid:
        cfg = dataclasses.replace(cfg, sweep_grid=tuple(float(v) for v in args.grid.split(",")))
    if args.workers:
        cfg = dataclasses.replace(cfg, workers=args.workers)
    path, rows = run_sweep(cfg, args.out, cache_dir=args.cache)
    print(f"wrote {len(rows)} rows to {path}")
    if any(r["diverged"] for r in rows):
        print("some cells diverged; see the 'diverged' column", file=sys.stderr)
        return EXIT_DIVERGED
    return 0


def cmd_oracle(args):
    seed = 0 if args.seed is None else args.seed
    report, _, _, _ = oracle_experiment(args.devices, seed=seed, n_instances=args.instances)
    lines = ["instance,oracle_tgamma_s,model_tgamma_s,gap"]
    lines += [f"{i},{float(o)!r},{float(m)!r},{float(g)!r}" for i, (o, m, g)
              in enumerate(zip(report.oracle_t, report.model_t, report.gaps))]
    text = "\n".join(lines) + "\n"
    if args.out:
        _atomic_write(Path(args.out) / "oracle.csv", text)
    sys.stdout.write(text)
    print(f"mean gap {report.mean_gap:.4%}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="robustdelay",
                                     description="Robust delay-minimizing resource allocation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", help="INI experiment file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--desk", action="store_true", help="reduced desk-scale profile")
        p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)

    p = sub.add_parser("train", help="train one allocator and save its checkpoint")
    common(p, out_required=True)
    p.add_argument("--scheme")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="robust delay of a checkpoint on a held-out set")
    common(p)
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train and evaluate every scheme along one axis")
    common(p, out_required=True)
    p.add_argument("--axis", choices=["sigma_h_sq", "sigma_w_sq", "p_max_dbm"])
    p.add_argument("--grid", help="comma separated grid values")
    p.add_argument("--workers", type=int)
    p.add_argument("--cache", help="checkpoint cache directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="compare a tiny trained model with the grid oracle")
    common(p)
    p.add_argument("--devices", type=int, choices=[1, 2], default=1)
    p.add_argument("--instances", type=int, default=10)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
