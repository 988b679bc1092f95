"""Command-line entry point: ``mvweak <command> [options]``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure (non-finite loss or failed oracle). ``MVWEAK_SEED`` overrides the
config seed; an explicit ``--seed`` overrides both.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from mvweak.config import load_run_config
from mvweak.errors import ConfigError, DataError, MvweakError, NumericalError, ShapeError, ValidationError

log = logging.getLogger("mvweak")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _overrides(args, mapping):
    return {key: getattr(args, attr) for attr, key in mapping.items() if getattr(args, attr, None) is not None}


def _config(args, mapping=None):
    overrides = _overrides(args, mapping or {})
    env_seed = os.environ.get("MVWEAK_SEED")
    if env_seed is not None and getattr(args, "seed", None) is None:
        try:
            overrides["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"MVWEAK_SEED must be an integer, got {env_seed!r}") from None
    elif getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return load_run_config(args.config, overrides)


def cmd_gen_data(args):
    from mvweak.pipeline import gen_data

    cfg = _config(args)
    index = gen_data(cfg, args.out, args.n, cfg.seed, args.n_weak)
    print(f"wrote {len(index)} sequences to {args.out}")


def cmd_featurize(args):
    from mvweak.pipeline import featurize

    cfg = _config(args)
    if not args.oracle and args.detections is None:
        raise DataError("no detections given: pass --detections DIR or --oracle")
    rows, cols = cfg.grid.rows, cfg.grid.cols
    if args.grid is not None:
        try:
            rows, cols = (int(v) for v in args.grid.lower().split("x"))
        except ValueError:
            raise ConfigError(f"--grid must look like RxC, got {args.grid!r}") from None
    index = featurize(args.data, rows, cols, None if args.oracle else args.detections)
    print(f"featurized {len(index)} sequences with a {rows}x{cols} grid (N={rows * cols})")


def cmd_train_base(args):
    from mvweak.pipeline import train_base_step

    cfg = _config(args, {"epochs": "train.epochs", "batch_size": "train.batch_size"})
    _, history = train_base_step(cfg, args.data, args.out, cfg.seed)
    last = history[-1] if history else {}
    print(f"base model saved to {args.out}; final total loss {last.get('total', float('nan')):.4f}")


def cmd_export_embeddings(args):
    from mvweak.pipeline import export_embeddings_step

    store = export_embeddings_step(args.checkpoint, args.data, args.out)
    print(f"wrote embeddings for {len(store)} sequences to {args.out}")


def cmd_train_downstream(args):
    from mvweak.pipeline import train_downstream_step

    mapping = {"epochs": "downstream_train.epochs", "task": "task"}
    cfg = _config(args, mapping)
    if args.no_latents:
        cfg.downstream = dataclasses.replace(cfg.downstream, use_latents=False)
    _, history = train_downstream_step(cfg, args.data, args.embeddings, args.out, args.task, cfg.seed, args.base)
    print(f"downstream model saved to {args.out}; final loss {history[-1]['total']:.4f}" if history else "no epochs run")


def cmd_evaluate(args):
    from mvweak.pipeline import evaluate_step

    report = evaluate_step(args.checkpoint, args.data, args.embeddings, args.task, args.out, args.split, args.plot_dir)
    print(report.summary())


def cmd_ablate(args):
    from mvweak.core_data import DatasetIndex
    from mvweak.pipeline import base_split
    from mvweak.train_eval import load_arrays, run_ablation_matrix, write_table_csv

    cfg = _config(args)
    index = DatasetIndex.load(args.data)
    train = load_arrays(index, "train", require_frame_labels=True)
    test = load_arrays(index, "test", require_frame_labels=True)
    base_arrays = load_arrays(index, base_split(index))
    seeds = [int(s) for s in args.seeds.split(",")]
    rows, _ = run_ablation_matrix(train, test, cfg.model, cfg.downstream, cfg.train, cfg.downstream_train,
                                  seeds=seeds, metric=args.metric, base_arrays=base_arrays)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_table_csv(args.out, rows)
    print(Path(args.out).read_text(), end="")


def cmd_oracle_check(args):
    from mvweak.checks import run_oracle_checks

    seed = args.seed if args.seed is not None else int(os.environ.get("MVWEAK_SEED", 0))
    results = run_oracle_checks(seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    if not all(ok for _, ok, _ in results):
        raise NumericalError("oracle check failed")


def cmd_run(args):
    from mvweak.pipeline import run_pipeline

    cfg = _config(args)
    report = run_pipeline(cfg, args.workdir)
    print(report.summary())


def build_parser():
    p = _Parser(prog="mvweak", description="Weak-label multi-view video learning pipeline.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_, formatter_class=fmt)
        sp.set_defaults(func=func)
        return sp

    def with_config(sp, seed=True):
        sp.add_argument("--config", default=None, help="YAML or JSON run config (defaults used when omitted)")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="overrides MVWEAK_SEED and the config seed")

    sp = add("gen-data", cmd_gen_data, "Generate a synthetic multi-view corpus with oracle detections.")
    with_config(sp)
    sp.add_argument("--out", required=True, help="corpus directory to create")
    sp.add_argument("--n", type=int, default=None, help="frame-labelled sequences (default: scenario.num_sequences)")
    sp.add_argument("--n-weak", type=int, default=None,
                    help="bag-only sequences for the base model (default: scenario.num_weak_sequences)")

    sp = add("featurize", cmd_featurize, "Write PD and SL vectors (pd.mvt, sl.mvt) for every sequence.")
    with_config(sp, seed=False)
    sp.add_argument("--data", required=True, help="corpus directory")
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--detections", default=None, help="directory of <sequence_id>.jsonl detection files")
    src.add_argument("--oracle", action="store_true", help="use each sequence's own detections.jsonl")
    sp.add_argument("--grid", default=None, help="grid as RxC (default: grid section of the config, 4x4)")

    sp = add("train-base", cmd_train_base, "Train the base model on action bags.")
    with_config(sp)
    sp.add_argument("--data", required=True, help="featurized corpus directory")
    sp.add_argument("--out", required=True, help="checkpoint directory")
    sp.add_argument("--epochs", type=int, default=None, help="override train.epochs")
    sp.add_argument("--batch-size", type=int, default=None, help="override train.batch_size")

    sp = add("export-embeddings", cmd_export_embeddings, "Write per-sequence latent embeddings from a base checkpoint.")
    sp.add_argument("--checkpoint", required=True, help="base checkpoint directory")
    sp.add_argument("--data", required=True, help="featurized corpus directory")
    sp.add_argument("--out", required=True, help="embedding store directory")

    sp = add("train-downstream", cmd_train_downstream, "Train the frame-level downstream model.")
    with_config(sp)
    sp.add_argument("--data", required=True, help="featurized corpus directory")
    sp.add_argument("--embeddings", default=None, help="embedding store directory")
    sp.add_argument("--out", required=True, help="checkpoint directory")
    sp.add_argument("--task", choices=["detection", "recognition"], default=None, help="default: config task")
    sp.add_argument("--epochs", type=int, default=None, help="override downstream_train.epochs")
    sp.add_argument("--no-latents", action="store_true", help="baseline mode without latent embeddings")
    sp.add_argument("--base", default=None, help="base checkpoint for downstream.transfer_weights")

    sp = add("evaluate", cmd_evaluate, "Evaluate a downstream checkpoint and print frame-level metrics.")
    sp.add_argument("--checkpoint", required=True, help="downstream checkpoint directory")
    sp.add_argument("--data", required=True, help="featurized corpus directory")
    sp.add_argument("--embeddings", default=None, help="embedding store directory")
    sp.add_argument("--task", choices=["detection", "recognition"], required=True, help="frame-level task")
    sp.add_argument("--split", default="test", help="split to evaluate")
    sp.add_argument("--out", default=None, help="metrics.json path")
    sp.add_argument("--plot-dir", default=None, help="write per-class precision-recall plots here")

    sp = add("ablate", cmd_ablate, "Run the ablation matrix and write the table as CSV.")
    with_config(sp, seed=False)
    sp.add_argument("--data", required=True, help="featurized corpus directory with a train/test split")
    sp.add_argument("--out", required=True, help="CSV output path")
    sp.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    sp.add_argument("--metric", choices=["accuracy", "mean_ap", "macro_f1"], default="accuracy", help="table metric")

    sp = add("oracle-check", cmd_oracle_check, "Check the latent loss and AP against their brute-force oracles.")
    sp.add_argument("--seed", type=int, default=None, help="seed for the random instances")

    sp = add("run", cmd_run, "Run the whole pipeline: gen-data through evaluate.")
    with_config(sp)
    sp.add_argument("--workdir", required=True, help="directory for all artifacts (config paths are relative to it)")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, ShapeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValidationError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MvweakError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
