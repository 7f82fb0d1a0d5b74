"""Command-line entry point: ``slnscreen <subcommand> ...``.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import reports
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, with_overrides
from .corpus import DEFAULT_FRACTIONS, assign_splits, chunk_vote_sets, load_manifest
from .errors import ValidationError
from .metrics import METRIC_NAMES, aggregate_users, build_user_report
from .synthetic import generate_synthetic_corpus
from .trainer import evaluate_split, train

log = logging.getLogger("slnscreen")


def _common(p: argparse.ArgumentParser, *, manifest=False, split=False, corpus=False):
    p.add_argument("--config", type=Path, help="key = value file overriding defaults")
    p.add_argument("--seed", type=int, help="seed override (generator / model + training)")
    p.add_argument("--out", type=Path, help="output path")
    p.add_argument("--dump-config", action="store_true", help="print the effective configuration and exit")
    if manifest:
        p.add_argument("--manifest", type=Path, required=True, help="corpus manifest (JSON Lines)")
    if split:
        p.add_argument("--split", choices=("train", "val", "test"), default="test", help="split to use")
    if corpus:
        p.add_argument("--policy", choices=("slide", "image"), help="split granularity")
        p.add_argument("--label-mode", choices=("case", "slide"), help="patch labelling")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slnscreen", description="Sentinel lymph node patch screening pipeline")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic corpus (manifest + PPM patches)")
    _common(p, corpus=True)

    p = sub.add_parser("train", help="train a model: manifest -> checkpoint + report")
    _common(p, manifest=True, corpus=True)

    p = sub.add_parser("predict", help="checkpoint + manifest + split -> predictions CSV")
    _common(p, manifest=True, split=True, corpus=True)
    p.add_argument("--checkpoint", type=Path, required=True, help="trained checkpoint file")

    p = sub.add_parser("evaluate", help="predictions CSV -> report, metrics CSV and figures")
    _common(p)
    p.add_argument("predictions", type=Path, help="predictions CSV")
    p.add_argument("--label", help="user label for the report (default: file stem)")

    p = sub.add_parser("tables", help="recompute the reference result tables")
    _common(p)
    p.add_argument("--fixtures", action="store_true", help="use the shipped reference-table fixtures")

    p = sub.add_parser("agreement", help="per-user metric rows and their means")
    _common(p)
    p.add_argument("reports", nargs="+", type=Path, help="evaluation output dirs or metrics CSVs")
    return parser


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    seed = args.seed
    return with_overrides(
        cfg,
        model_seed=seed,
        train_seed=seed,
        policy=getattr(args, "policy", None),
        label_mode=getattr(args, "label_mode", None),
    )


def _require_out(args) -> Path:
    if args.out is None:
        raise ValidationError(f"{args.command}: --out is required")
    return args.out


def _load_corpus(args, cfg: RunConfig):
    corpus = load_manifest(args.manifest, cfg.patches_per_slide, cfg.label_mode)
    if getattr(args, "policy", None) is not None or any(p.split is None for p in corpus.patches.values()):
        corpus = assign_splits(corpus, DEFAULT_FRACTIONS, cfg.train_seed, cfg.policy, cfg.case_coherent)
    return corpus


def cmd_generate(args, cfg: RunConfig) -> int:
    out = _require_out(args)
    corpus = generate_synthetic_corpus(out, 0 if args.seed is None else args.seed, cfg.layout())
    counts = corpus.split_counts()
    print(f"wrote {len(corpus.cases)} cases, {len(corpus.slides)} slides, {len(corpus.patches)} patches to {out}")
    print("split images: " + ", ".join(f"{k} {v}" for k, v in counts.items()))
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    from .plotting import plot_training_curves

    out = _require_out(args)
    corpus = _load_corpus(args, cfg)
    model, report = train(corpus, cfg.model_config(), cfg.train_config())
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "checkpoint.slns")
    reports.write_train_report(report, out)
    plot_training_curves(report, out / "training_curves.png")
    print((out / "train_summary.txt").read_text(), end="")
    print(f"wall clock: {report.wall_seconds:.1f} s")
    return 0


def cmd_predict(args, cfg: RunConfig) -> int:
    out = _require_out(args)
    model = load_checkpoint(args.checkpoint, num_classes=4)
    corpus = _load_corpus(args, cfg)
    rows = evaluate_split(model, corpus, args.split)
    if out.parent != Path():
        out.parent.mkdir(parents=True, exist_ok=True)
    reports.write_predictions(rows, out)
    print(f"wrote {len(rows)} predictions to {out}")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    from .plotting import plot_confusion2, plot_confusion4

    rows = reports.read_predictions(args.predictions)
    sets = chunk_vote_sets((r.patch_id, r.slide_id, r.observed_dx) for r in rows)
    report = build_user_report(args.label or args.predictions.stem, rows, sets)
    text = reports.render_user_report(report)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.txt").write_text(text, encoding="utf-8")
        reports.write_metrics_csv(report, args.out / "metrics.csv")
        plot_confusion4(report.image_matrix, args.out / "confusion_image.png")
        plot_confusion2(report.image_grouped, args.out / "confusion_grouped.png", "Grouped")
        plot_confusion2(report.case_matrix, args.out / "confusion_case.png", "Majority vote")
    print(text, end="")
    return 0


def cmd_tables(args, cfg: RunConfig) -> int:
    if not args.fixtures:
        raise ValidationError("tables: nothing to tabulate; pass --fixtures")
    text = reports.render_fixture_tables()
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "tables.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_agreement(args, cfg: RunConfig) -> int:
    from .plotting import plot_agreement

    rows = []
    for path in args.reports:
        label = path.name if path.is_dir() else path.stem
        csv_path = path / "metrics.csv" if path.is_dir() else path
        rows.append((label, reports.read_metrics_csv(csv_path, "case")))
    means = aggregate_users(rows)
    text = reports.render_metric_table(rows, means) + "\n"
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "agreement.txt").write_text(text, encoding="utf-8")
        with open(args.out / "agreement.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("user", *METRIC_NAMES))
            for label, row in rows:
                w.writerow((label, *(row[n].render() for n in METRIC_NAMES)))
            w.writerow(("Means", *(means[n] for n in METRIC_NAMES)))
        plot_agreement([(l, {n: r[n].rendered() for n in METRIC_NAMES}) for l, r in rows], means,
                       args.out / "agreement.png")
    print(text, end="")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "tables": cmd_tables,
    "agreement": cmd_agreement,
}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _run_config(args)
        if args.dump_config:
            print(cfg.dump(), end="")
            return 0
        return COMMANDS[args.command](args, cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
