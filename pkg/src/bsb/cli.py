"""Command line entry point.

Subcommands cover the individual stages (train, attack-adv, attack-mi,
synth-data, report) and the full grid run. Exit codes: 0 success, 1 usage
or configuration error, 2 data error, 3 runtime failure.
"""

import argparse
import sys
from pathlib import Path

from .config import apply_override, build_config, load_settings
from .data import DataFormatError, save_idx, synth_blobs
from .harness import (
    GridCellError,
    aggregate_adv_by_dataset,
    aggregate_mi_by_variant,
    attack_efficacy,
    cell_name,
    emit_csv,
    emit_roc_svg,
    load_dataset,
    parse_csv,
    run_attack_panel,
    run_experiment,
    run_mi_pipeline,
    train_target,
)
from .models import save_model
from .nn import DivergenceError
from .oracle import QueryBudgetError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    """Bad command line; reported on stderr with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p):
    p.add_argument("--config", metavar="PATH", help="INI config file")
    p.add_argument("--seed", type=int, help="experiment seed")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--dataset", choices=("mnist", "cifar10", "synth"))
    p.add_argument("--model", choices=("lenet5", "resnet-small"))
    p.add_argument("--bayesian", action="store_true", default=None,
                   help="use the dropout-Bayesian variant")
    p.add_argument("--attack", choices=("boundary", "hsj"))
    p.add_argument("--samples", type=int, help="attack panel size")
    p.add_argument("--query-budget", type=int, dest="query_budget",
                   help="per-sample oracle query cap for both attacks")
    p.add_argument("--workers", type=int, help="attack worker threads")


def build_parser():
    parser = _Parser(prog="bsb", description=__doc__.split("\n", 1)[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, fn, desc in (
        ("train", _cmd_train, "train one model and report test accuracy"),
        ("attack-adv", _cmd_attack_adv, "run decision-based attacks on one model"),
        ("attack-mi", _cmd_attack_mi, "run membership inference on one model"),
        ("run", _cmd_run, "run the full model grid and emit tables/plots"),
        ("synth-data", _cmd_synth_data, "generate the synthetic dataset as IDX files"),
        ("report", _cmd_report, "aggregate a results CSV into summary tables"),
    ):
        p = sub.add_parser(name, help=desc, description=desc)
        _add_common(p)
        p.set_defaults(func=fn)
    return parser


def _config_from_args(args):
    settings = load_settings(args.config)
    if args.seed is not None:
        apply_override(settings, "experiment.seed", args.seed)
    if args.out is not None:
        apply_override(settings, "experiment.out_dir", args.out)
    if args.dataset is not None:
        apply_override(settings, "experiment.dataset", args.dataset)
    if args.model is not None:
        apply_override(settings, "experiment.families", args.model.replace("-", "_"))
    if args.bayesian:
        apply_override(settings, "experiment.bayesian", "true")
    if args.samples is not None:
        apply_override(settings, "experiment.samples_per_attack", args.samples)
    if args.query_budget is not None:
        apply_override(settings, "boundary.max_queries", args.query_budget)
        apply_override(settings, "hsj.max_queries", args.query_budget)
    if args.workers is not None:
        apply_override(settings, "experiment.workers", args.workers)
    return build_config(settings)


def _single_model(cfg, args):
    family = cfg.families[0]
    bayes = bool(args.bayesian)
    return family, bayes


def _out_dir(cfg):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_train(args):
    cfg = _config_from_args(args)
    family, bayes = _single_model(cfg, args)
    full = load_dataset(cfg)
    net, spec, _, _, _, _, test_acc = train_target(cfg, full, family, bayes)
    out = _out_dir(cfg)
    path = out / f"{cell_name(cfg.dataset, family, bayes)}.bsbm"
    save_model(path, spec, net)
    print(f"trained {cell_name(cfg.dataset, family, bayes)}: "
          f"test accuracy {100.0 * test_acc:.2f}%")
    print(f"model saved to {path}")
    return EXIT_OK


def _cmd_attack_adv(args):
    cfg = _config_from_args(args)
    family, bayes = _single_model(cfg, args)
    full = load_dataset(cfg)
    net, _, _, test_set, _, _, test_acc = train_target(cfg, full, family, bayes)
    print(f"target {cell_name(cfg.dataset, family, bayes)}: "
          f"test accuracy {100.0 * test_acc:.2f}%")
    kinds = (args.attack,) if args.attack else ("hsj", "boundary")
    for kind in kinds:
        results = run_attack_panel(cfg, net, test_set, kind)
        queries = sum(r.queries_used for r in results) / len(results)
        print(f"{kind}: efficacy {attack_efficacy(results):.2f}% "
              f"over {len(results)} samples, mean queries {queries:.1f}")
    return EXIT_OK


def _cmd_attack_mi(args):
    cfg = _config_from_args(args)
    family, bayes = _single_model(cfg, args)
    full = load_dataset(cfg)
    net, spec, fit_train, test_set, shadow_pool, cell_seed, test_acc = train_target(
        cfg, full, family, bayes)
    name = cell_name(cfg.dataset, family, bayes)
    print(f"target {name}: test accuracy {100.0 * test_acc:.2f}%")
    acc, roc = run_mi_pipeline(cfg, net, spec, fit_train, test_set,
                               shadow_pool, cell_seed)
    out = _out_dir(cfg)
    csv_path = out / f"roc-{name}.csv"
    csv_path.write_text(roc.to_csv())
    svg_path = out / f"roc-{name}.svg"
    emit_roc_svg({name: roc}, svg_path)
    print(f"membership inference: accuracy {100.0 * acc:.2f}%, AUC {roc.auc:.4f}")
    print(f"roc written to {csv_path} and {svg_path}")
    return EXIT_OK


def _cmd_run(args):
    cfg = _config_from_args(args)
    rows, curves = run_experiment(cfg)
    out = _out_dir(cfg)
    csv_path = out / "results.csv"
    emit_csv(rows, csv_path)
    svg_path = out / "roc.svg"
    emit_roc_svg(curves, svg_path)
    print(f"results written to {csv_path}")
    print(f"roc curves written to {svg_path}")
    _print_summary(rows)
    return EXIT_OK


def _cmd_synth_data(args):
    cfg = _config_from_args(args)
    ds = synth_blobs(cfg.synth_n, cfg.synth_classes, cfg.synth_side,
                     cfg.synth_noise, seed=cfg.seed)
    out = _out_dir(cfg)
    images = out / "synth-images-idx3-ubyte"
    labels = out / "synth-labels-idx1-ubyte"
    save_idx(ds, images, labels)
    print(f"wrote {len(ds)} images ({cfg.synth_classes} classes, "
          f"{cfg.synth_side}x{cfg.synth_side}) to {images} and {labels}")
    return EXIT_OK


def _cmd_report(args):
    cfg = _config_from_args(args)
    csv_path = Path(cfg.out_dir) / "results.csv"
    if not csv_path.is_file():
        raise FileNotFoundError(f"results file not found: {csv_path}")
    rows = parse_csv(csv_path)
    if not rows:
        print(f"{csv_path} holds no result rows")
        return EXIT_OK
    _print_summary(rows)
    return EXIT_OK


def _print_summary(rows):
    mi = aggregate_mi_by_variant(rows)
    adv = aggregate_adv_by_dataset(rows)
    print("membership inference accuracy (%) by dataset and variant:")
    for (dataset, bayes), value in sorted(mi.items()):
        variant = "bayesian" if bayes else "point"
        print(f"  {dataset:<8} {variant:<9} {value:.2f}")
    print("adversarial attack efficacy (%) by dataset:")
    for dataset, pair in sorted(adv.items()):
        print(f"  {dataset:<8} hsj {pair['hsj']:.2f}  boundary {pair['boundary']:.2f}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise UsageError("a subcommand is required (see --help)")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GridCellError as exc:
        cause = exc.__cause__
        if isinstance(cause, (DataFormatError, FileNotFoundError)):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, QueryBudgetError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
