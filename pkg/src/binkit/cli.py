"""Command-line entry point: ``binkit <command> [options]``."""

from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import classical, data, evaluation, imagery, sae, synthetic, training

log = logging.getLogger("binkit")

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DATA = 4


class CLIError(Exception):
    def __init__(self, message: str, status: int = EXIT_DATA):
        super().__init__(message)
        self.status = status


def _env_seed() -> int:
    raw = os.environ.get("BINKIT_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CLIError(f"BINKIT_SEED must be an integer, got {raw!r}", EXIT_USAGE) from None


def _tau(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _named(text: str) -> tuple[str, str]:
    name, sep, path = text.partition("=")
    if not sep or not name or not path:
        raise argparse.ArgumentTypeError(f"expected NAME=PATH, got {text!r}")
    return name, path


def _load_model(path) -> sae.Model:
    try:
        return sae.read_checkpoint(path)
    except OSError as exc:
        raise CLIError(f"cannot read checkpoint {path}: {exc.strerror}", EXIT_IO) from exc


def _load_manifest(path) -> data.DatasetManifest:
    return data.DatasetManifest.load(path)


def _spec_from_args(args) -> sae.TopologySpec:
    base = sae.PRESETS[args.preset]
    return sae.TopologySpec(
        kind=args.kind or base.kind,
        window_side=args.window or base.window_side,
        filters=args.filters or base.filters,
        kernel_side=args.kernel or base.kernel_side,
        depth=args.depth,
    )


def _train_config(args) -> training.TrainConfig:
    return training.TrainConfig(
        max_epochs=args.epochs, patience=args.patience, batch_size=args.batch_size,
        learning_rate=args.lr, augment_factor=args.augment, seed=args.seed,
    )


def _binarizer(args):
    if args.model:
        model = _load_model(args.model)
        return lambda img: sae.binarize_document(model, img, args.tau)
    method = args.method or "otsu"
    if method == "sae":
        raise CLIError("--method sae requires --model", EXIT_USAGE)
    return lambda img: classical.binarize(img, method, args.window_side, args.k, args.r)


def cmd_binarize(args) -> None:
    mask = _binarizer(args)(imagery.load_gray(args.input))
    imagery.save_mask(mask, args.output)
    log.info("wrote %s (%d%% foreground)", args.output, round(100 * mask.mean()))


def cmd_synth(args) -> None:
    synthetic.generate_synthetic_corpus(
        args.out, seed=args.seed, n_train=args.train, n_val=args.val, n_test=args.test,
        page_size=args.size, degradation=args.degradation,
    )
    print(f"corpus written to {args.out}")


def cmd_train(args) -> None:
    manifest = _load_manifest(args.corpus)
    model = sae.build_model(_spec_from_args(args), args.seed)
    best, history = training.train(model, manifest, _train_config(args))
    sae.write_checkpoint(best, args.out)
    print(f"best epoch {history.best_epoch + 1}/{history.epochs} "
          f"(val F-m {history.val_fm[history.best_epoch]:.4f}, stop: {history.stop_reason})")
    if args.history:
        with open(args.history, "w") as fh:
            fh.write("epoch,train_loss,val_fm\n")
            for i, (loss, fm) in enumerate(zip(history.train_loss, history.val_fm), 1):
                fh.write(f"{i},{loss:.6f},{fm:.6f}\n")


def cmd_eval(args) -> None:
    records = _load_manifest(args.corpus).split(args.split)
    if not records:
        raise CLIError(f"split {args.split!r} is empty")
    report = evaluation.evaluate(_binarizer(args), records, jobs=args.jobs)
    print(f"micro F-m {report.micro_fm:.4f}  macro F-m {report.macro_fm:.4f}  pages {len(records)}")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("image,fm,tp,fp,fn\n")
            for name, c in report.per_image:
                fh.write(f"{name},{evaluation.f_measure(c):.6f},{c.tp},{c.fp},{c.fn}\n")


def cmd_sweep(args) -> None:
    model = _load_model(args.model)
    records = _load_manifest(args.corpus).split(args.split)
    table = evaluation.threshold_sweep(model, records, args.taus)
    for row in table.rows:
        print(f"tau {row.tau:.2f}  F-m {row.fm:.4f}")
    print(f"spread {table.spread:.4f}")
    if args.csv:
        table.write_csv(args.csv)


def cmd_heatmap(args) -> None:
    model = _load_model(args.model)
    records = _load_manifest(args.corpus).split(args.split)
    heat = evaluation.error_heatmap(model, records, args.tau)
    prefix = Path(args.out_prefix)
    heat.write_csv(f"{prefix}.csv")
    heat.write_pgm(f"{prefix}_errors.pgm")
    heat.write_pgm(f"{prefix}_ink.pgm", "ink")
    print(f"{int(heat.errors.sum())} errors over {heat.windows} windows -> {prefix}.csv")


def cmd_matrix(args) -> None:
    models = {name: _load_model(path) for name, path in args.model}
    tests = {name: _load_manifest(path).split(args.split) for name, path in args.corpus}
    matrix = evaluation.domain_matrix(models, tests, args.tau)
    width = max(len(n) for n in matrix.train_names + matrix.test_names + ["train"])
    print(" " * width + "".join(f" {n:>{width}}" for n in matrix.test_names) + f" {'avg':>{width}}")
    for i, r in enumerate(matrix.train_names):
        cells = "".join(f" {v:>{width}.4f}" for v in matrix.values[i])
        print(f"{r:>{width}}{cells} {matrix.row_averages[i]:>{width}.4f}")
    if args.csv:
        matrix.write_csv(args.csv)


def _grid_job(job):
    corpus, spec, config = job
    manifest = _load_manifest(corpus)
    model = sae.build_model(spec, config.seed)
    best, history = training.train(model, manifest, config)
    return spec, history.val_fm[history.best_epoch], history.epochs


def cmd_gridsearch(args) -> None:
    config = _train_config(args)
    specs = []
    for kind, window, filters, kernel in itertools.product(args.kinds, args.windows, args.filters_grid, args.kernels):
        try:
            specs.append(sae.TopologySpec(kind, window, filters, kernel))
        except ValueError as exc:
            log.warning("skipping %s/%d/%d/%d: %s", kind, window, filters, kernel, exc)
    jobs = [(args.corpus, s, config) for s in specs]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_grid_job, jobs))
    else:
        results = [_grid_job(j) for j in jobs]
    lines = ["kind,window,filters,kernel,depth,val_fm,epochs"]
    for spec, fm, epochs in results:
        lines.append(f"{spec.kind},{spec.window_side},{spec.filters},{spec.kernel_side},{spec.depth},{fm:.6f},{epochs}")
    print("\n".join(lines))
    if args.csv:
        Path(args.csv).write_text("\n".join(lines) + "\n")


def _add_model_flags(p):
    p.add_argument("--preset", choices=sorted(sae.PRESETS), default="full",
                   help="base topology (full: REDNET/256/64/5, small: REDNET/64/16/5)")
    p.add_argument("--kind", type=str.upper, choices=sae.KINDS)
    p.add_argument("--window", type=_positive)
    p.add_argument("--filters", type=_positive)
    p.add_argument("--kernel", type=_positive)
    p.add_argument("--depth", type=_positive)


def _add_train_flags(p):
    p.add_argument("--epochs", type=_positive, default=200)
    p.add_argument("--patience", type=_positive, default=10)
    p.add_argument("--batch-size", type=_positive, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--augment", type=int, default=data.AUGMENT_FACTOR,
                   help="augmented copies per training window")


def _add_binarizer_flags(p):
    p.add_argument("--method", choices=classical.METHODS + ("sae",),
                   help="classical method (default otsu) or sae with --model")
    p.add_argument("--model", help="SAE checkpoint; implies --method sae")
    p.add_argument("--tau", type=_tau, default=sae.DEFAULT_TAU)
    p.add_argument("--window-side", type=int, default=classical.WINDOW_SIDE,
                   help="local window for niblack/sauvola/wolf")
    p.add_argument("-k", type=float, default=None, help="k for niblack/sauvola/wolf")
    p.add_argument("-r", type=float, default=classical.SAUVOLA_R, help="Sauvola dynamic range")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="defaults to $BINKIT_SEED or 0")
    common.add_argument("--jobs", type=_positive, default=1, help="worker cap")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="binkit", description="Document image binarization toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("binarize", parents=[common], help="binarize one image")
    _add_binarizer_flags(p)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_binarize)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=20)
    p.add_argument("--val", type=int, default=4)
    p.add_argument("--test", type=int, default=6)
    p.add_argument("--size", type=_positive, default=512)
    p.add_argument("--degradation", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train an SAE")
    p.add_argument("--corpus", required=True, help="directory holding train/val/test.tsv")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="optional per-epoch CSV")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="F-measure on a corpus split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test", choices=tuple(data.SPLIT_FILES))
    p.add_argument("--csv")
    _add_binarizer_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="F-measure across thresholds")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test", choices=tuple(data.SPLIT_FILES))
    p.add_argument("--taus", type=_tau, nargs="+", default=list(evaluation.DEFAULT_TAUS))
    p.add_argument("--csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("heatmap", parents=[common], help="error positions within the window")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test", choices=tuple(data.SPLIT_FILES))
    p.add_argument("--tau", type=_tau, default=sae.DEFAULT_TAU)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("matrix", parents=[common], help="cross-corpus F-measure matrix")
    p.add_argument("--model", type=_named, action="append", required=True, metavar="NAME=CKPT")
    p.add_argument("--corpus", type=_named, action="append", required=True, metavar="NAME=DIR")
    p.add_argument("--split", default="test", choices=tuple(data.SPLIT_FILES))
    p.add_argument("--tau", type=_tau, default=sae.DEFAULT_TAU)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("gridsearch", parents=[common], help="window/filter/kernel grid")
    p.add_argument("--corpus", required=True)
    p.add_argument("--kinds", type=str.upper, nargs="+", choices=sae.KINDS, default=list(sae.KINDS))
    p.add_argument("--windows", type=_positive, nargs="+", default=[64, 128, 256, 384])
    p.add_argument("--filters-grid", type=_positive, nargs="+", default=[16, 32, 64, 96, 128])
    p.add_argument("--kernels", type=_positive, nargs="+", default=[3, 5, 7])
    p.add_argument("--csv")
    _add_train_flags(p)
    p.set_defaults(func=cmd_gridsearch)
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is None:
            args.seed = _env_seed()
        if getattr(args, "model", None) and getattr(args, "method", None) not in (None, "sae"):
            raise CLIError(f"--method {args.method} conflicts with --model", EXIT_USAGE)
        args.func(args)
    except CLIError as exc:
        print(f"binkit: error: {exc}", file=sys.stderr)
        return exc.status
    except (imagery.RasterError, sae.CheckpointError, data.ManifestError) as exc:
        print(f"binkit: error: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc.__cause__, OSError) else EXIT_DATA
    except OSError as exc:
        print(f"binkit: error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, training.TrainingError) as exc:
        print(f"binkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
