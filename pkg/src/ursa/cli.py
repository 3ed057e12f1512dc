"""Command-line entry point.

Subcommands: ``convert-mnist`` (IDX files to a cloud archive), ``train``,
``eval``, ``gradcheck``, and ``sweep``. Exit codes: 0 success, 1 usage or
configuration error, 2 data error, 3 numerical abort. ``URSA_THREADS``
caps the sweep worker pool.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import constellation as cl
from . import training
from .data import convert_images, load_cloud_archive, load_idx, save_cloud_archive
from .errors import ConfigError, DataError, NumericalAbort
from .head import init_model, load_checkpoint, save_checkpoint, summary
from .linalg import Rng
from .training import TrainConfig, config_from_text, config_to_text, evaluate, gradient_check

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; route them to exit 1 instead
    def error(self, message):
        raise _UsageError(message)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--measure", choices=cl.MEASURES, default=None)
    p.add_argument("--stars", type=int, default=None, metavar="M")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--snapshot-epochs", default=None, metavar="E0,E1,...")
    p.add_argument("--precision", choices=("f32", "f64"), default=None)
    p.add_argument("--hidden", default=None, metavar="H1,H2")
    p.add_argument("--config", default=None, metavar="FILE")


def _resolve_config(args) -> TrainConfig:
    """Defaults, then the config file, then explicit flags."""
    config = TrainConfig()
    if args.config is not None:
        try:
            with open(args.config) as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        config = config_from_text(text, base=config)
    overrides = {
        "measure": args.measure, "stars": args.stars, "sigma": args.sigma,
        "lam": args.lam, "learning_rate": args.lr, "batch_size": args.batch,
        "epochs": args.epochs, "seed": args.seed, "dropout_rate": args.dropout,
        "precision": args.precision,
    }
    config = replace(config, **{k: v for k, v in overrides.items() if v is not None})
    if args.snapshot_epochs is not None:
        try:
            config = replace(config, snapshot_epochs=tuple(
                int(e) for e in args.snapshot_epochs.split(",") if e.strip()))
        except ValueError as exc:
            raise ConfigError(f"bad --snapshot-epochs: {exc}") from exc
    if args.hidden is not None:
        try:
            h = tuple(int(x) for x in args.hidden.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad --hidden: {exc}") from exc
        config = replace(config, hidden=h)
    if args.no_augment:
        config = replace(config, augment=replace(config.augment, enabled=False))
    config.validate()
    return config


def _build_model(config: TrainConfig, dim: int, class_count: int):
    return init_model(Rng(config.seed), config.stars, dim, class_count, config.measure,
                      sigma=config.sigma, lam=config.lam, hidden=config.hidden,
                      dropout_rate=config.dropout_rate, dtype=config.dtype)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_convert_mnist(args) -> int:
    images, labels = load_idx(args.images, args.labels)
    dataset = convert_images(images, labels, Rng(args.seed))
    save_cloud_archive(args.out, dataset)
    print(f"wrote {dataset.count} clouds ({dataset.points_per_cloud} points, "
          f"{dataset.dim}-D) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _resolve_config(args)
    train_set = load_cloud_archive(args.train_archive, split="train")
    test_set = load_cloud_archive(args.test_archive, split="test")
    model = _build_model(config, train_set.dim, train_set.class_count)
    print(summary(model))

    def progress(report):
        e = report.epoch[-1]
        print(f"epoch {e}: loss={report.train_loss[-1]:.4f} "
              f"train_acc={report.train_acc[-1]:.4f} test_acc={report.test_acc[-1]:.4f} "
              f"({report.seconds[-1]:.1f}s)")

    if args.snapshot_dir is not None:
        os.makedirs(args.snapshot_dir, exist_ok=True)
    model, report = training.train(model, train_set, test_set, config,
                                   snapshot_dir=args.snapshot_dir, progress=progress)
    save_checkpoint(args.out_checkpoint, model, config_to_text(config))
    report.to_csv(args.report)
    print(f"checkpoint: {args.out_checkpoint}")
    print(f"report: {args.report}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _config_text = load_checkpoint(args.checkpoint)
    dataset = load_cloud_archive(args.archive, split="test")
    if dataset.dim != model.constellation.dim:
        raise ConfigError(f"archive holds {dataset.dim}-D points but the checkpoint "
                          f"expects {model.constellation.dim}-D")
    if dataset.class_count != model.class_count:
        raise ConfigError(f"archive declares {dataset.class_count} classes but the "
                          f"checkpoint has {model.class_count}")
    acc = evaluate(model, dataset)
    print(f"accuracy: {acc:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = _resolve_config(args)
    tolerance = args.tolerance
    rng = Rng(config.seed)
    all_passed = True
    print(f"{'measure':<12} {'scenario':<12} {'max_rel_err':>12} {'excluded':>9} status")
    for measure in cl.MEASURES:
        for scenario in ("small-random", "singularity"):
            model = training.make_gradcheck_model(rng, measure)
            cloud = rng.generator.uniform(-1, 1, size=(6, 3))
            if scenario == "singularity":
                model.constellation.stars[0] = cloud[0]  # exact point/star coincidence
            label = int(rng.generator.integers(0, 4))
            report = gradient_check(model, cloud, label, tolerance=tolerance)
            worst = max(b.max_rel_err for b in report.blocks)
            status = "PASS" if report.passed else "FAIL"
            all_passed &= report.passed
            print(f"{measure:<12} {scenario:<12} {worst:>12.3e} "
                  f"{report.excluded_total:>9} {status}")
    print("all blocks passed" if all_passed else "gradient check FAILED")
    return EXIT_OK if all_passed else EXIT_CONFIG


def cmd_sweep(args) -> int:
    config = _resolve_config(args)
    try:
        m_list = [int(x) for x in args.m_list.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --m-list: {exc}") from exc
    if not m_list:
        raise ConfigError("--m-list must name at least one star count")
    if len(set(m_list)) != len(m_list):
        raise ConfigError(f"--m-list contains duplicates: {args.m_list}")
    if any(m < 1 for m in m_list):
        raise ConfigError("star counts must be positive")
    if args.runs < 1:
        raise ConfigError(f"--runs must be >= 1, got {args.runs}")

    train_set = load_cloud_archive(args.train_archive, split="train")
    test_set = load_cloud_archive(args.test_archive, split="test")

    def run_cell(cell):
        measure, m = cell
        accs = []
        errors = []
        for run in range(args.runs):
            run_config = replace(config, measure=measure, stars=m, seed=config.seed + run)
            try:
                model = _build_model(run_config, train_set.dim, train_set.class_count)
                model, _report = training.train(model, train_set, None, run_config)
                accs.append(evaluate(model, test_set))
            except (ConfigError, DataError, NumericalAbort, ValueError) as exc:
                errors.append(f"run {run}: {exc}")
        return accs, errors

    cells = [(measure, m) for measure in cl.MEASURES for m in m_list]
    workers = max(1, int(os.environ.get("URSA_THREADS", "1")))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(cell) for cell in cells]

    lines = ["measure,stars,runs,mean_accuracy,std_accuracy,status"]
    for (measure, m), (accs, errors) in zip(cells, results):
        if accs:
            mean = float(np.mean(accs))
            std = float(np.std(accs))
            mean_s, std_s = f"{mean:.6f}", f"{std:.6f}"
        else:
            mean_s = std_s = ""
        status = "ok" if not errors else f"error({len(errors)}/{args.runs}): {errors[0]}"
        lines.append(f"{measure},{m},{args.runs},{mean_s},{std_s},{status}")
        print(lines[-1])
    with open(args.out, "w") as f:
        f.write("\n".join(lines) + "\n")
    print(f"sweep results: {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="ursa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert-mnist", help="convert IDX image/label files to a cloud archive")
    p.add_argument("images")
    p.add_argument("labels")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_convert_mnist)

    p = sub.add_parser("train", help="train a model on two cloud archives")
    p.add_argument("train_archive")
    p.add_argument("test_archive")
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--report", default="report.csv")
    p.add_argument("--snapshot-dir", default=None)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="report a checkpoint's accuracy on an archive")
    p.add_argument("checkpoint")
    p.add_argument("archive")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all backward passes")
    p.add_argument("--tolerance", type=float, default=1e-4)
    _add_train_flags(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="accuracy grid over measures and star counts")
    p.add_argument("train_archive")
    p.add_argument("test_archive")
    p.add_argument("--m-list", required=True, metavar="M0,M1,...")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--out", default="sweep.csv")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # argparse --help exits 0
        return int(exc.code or 0)


def main_entry() -> None:
    sys.exit(main())
