"""CSV formats and plain-text rendering of result tables."""

from __future__ import annotations

import csv
from decimal import Decimal
from pathlib import Path
from typing import Sequence

from .corpus import DiagnosticCategory, category
from .errors import ValidationError
from .metrics import (
    METRIC_NAMES,
    ConfusionMatrix2,
    ConfusionMatrix4,
    DiagnosticMetrics,
    Ratio,
    UserReport,
)
from .trainer import PredictionRow, TrainReport

PREDICTION_FIELDS = ("patch_id", "slide_id", "case_id", "observed_dx", "predicted_dx", "p0", "p1", "p2", "p3")
METRIC_FIELDS = ("level", "metric", "numerator", "denominator", "rendered")
TRAIN_FIELDS = ("epoch", "train_loss", "val_loss", "val_acc")
METRIC_LABELS = {"accuracy": "Accuracy", "sensitivity": "Sensitivity", "specificity": "Specificity",
                 "ppv": "PPV", "npv": "NPV"}


def _g6(x: float) -> str:
    return f"{x:.6g}"


# -- predictions ------------------------------------------------------------


def write_predictions(rows: Sequence[PredictionRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_FIELDS)
        for r in rows:
            w.writerow([r.patch_id, r.slide_id, r.case_id, r.observed_dx, r.predicted_dx,
                        *(f"{p:.9g}" for p in r.probs)])


def read_predictions(path) -> list[PredictionRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PREDICTION_FIELDS:
            raise ValidationError(f"{path}: expected header {','.join(PREDICTION_FIELDS)}")
        for lineno, rec in enumerate(reader, 2):
            try:
                rows.append(PredictionRow(
                    rec["patch_id"], rec["slide_id"], rec["case_id"],
                    int(category(int(rec["observed_dx"]))), int(category(int(rec["predicted_dx"]))),
                    tuple(float(rec[f"p{k}"]) for k in range(4)),
                ))
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"{path}: line {lineno}: {exc}") from None
    ids = [r.patch_id for r in rows]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicate patch_id rows")
    return sorted(rows, key=lambda r: r.patch_id)


# -- training report --------------------------------------------------------


def write_train_report(report: TrainReport, out_dir) -> None:
    """``train_report.csv`` plus ``train_summary.txt``.

    Wall-clock time is left out of both files so identical runs give identical bytes.
    """
    out_dir = Path(out_dir)
    with open(out_dir / "train_report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAIN_FIELDS)
        for e in report.epochs:
            w.writerow([e.epoch, _g6(e.train_loss), _g6(e.val_loss), _g6(e.val_acc)])
    best = report.best
    lines = [
        f"epochs run: {len(report.epochs)}",
        f"stopping reason: {report.stop_reason}",
        f"best epoch: {report.best_epoch}",
        f"best val loss: {_g6(best.val_loss)}",
        f"best val accuracy: {_g6(best.val_acc)}",
        f"train seed: {report.seed}",
        f"model seed: {report.model_seed}",
    ]
    (out_dir / "train_summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- tables -----------------------------------------------------------------


def _pct(r: Ratio) -> str:
    return f"{r.render()}%" if r.computable else r.render()


def render_confusion4(m: ConfusionMatrix4, title: str = "Image-by-image accuracy") -> str:
    names = [f"{c.short_name} ({int(c)})" for c in DiagnosticCategory]
    width = max(map(len, names)) + 2
    lines = [title, "", " " * width + "Predicted diagnosis", "Observed".ljust(width) + "".join(n.rjust(width) for n in names)]
    for i, row in enumerate(m.counts):
        lines.append(names[i].ljust(width) + "".join(str(c).rjust(width) for c in row))
    lines.append("")
    lines.append(f"Accuracy: {m.accuracy} = {_pct(m.accuracy)}")
    return "\n".join(lines)


def render_confusion2(m: ConfusionMatrix2, title: str, neg: str = "Negative", pos: str = "Positive") -> str:
    width = max(len(neg), len(pos)) + 12
    acc = Ratio(m.tp + m.tn, m.total)
    return "\n".join([
        title,
        "",
        "".ljust(width) + f"Predicted {neg}".rjust(width) + f"Predicted {pos}".rjust(width),
        f"Observed {neg}".ljust(width) + str(m.tn).rjust(width) + str(m.fp).rjust(width),
        f"Observed {pos}".ljust(width) + str(m.fn).rjust(width) + str(m.tp).rjust(width),
        "",
        f"Accuracy: {acc} = {_pct(acc)}",
    ])


def render_metrics(metrics: DiagnosticMetrics, title: str) -> str:
    lines = [title]
    for name, r in metrics.items():
        lines.append(f"  {METRIC_LABELS[name]:<12} = {str(r):>9} = {_pct(r)}")
    return "\n".join(lines)


def render_metric_table(rows: Sequence[tuple[str, dict]], means: dict | None = None,
                        title: str = "Accuracy, sensitivity, specificity, PPV and NPV per user") -> str:
    width = max([len(label) for label, _ in rows] + [5]) + 2
    header = "User".ljust(width) + "".join(METRIC_LABELS[n].rjust(13) for n in METRIC_NAMES)

    def fmt(v):
        if isinstance(v, Ratio):
            return v.render()
        return "not computable" if v is None else str(v)

    lines = [title, "", header]
    for label, row in rows:
        lines.append(label.ljust(width) + "".join(fmt(row.get(n)).rjust(13) for n in METRIC_NAMES))
    if means is not None:
        lines.append("Means".ljust(width) + "".join(fmt(means[n]).rjust(13) for n in METRIC_NAMES))
    return "\n".join(lines)


def render_case_section(report: UserReport) -> str:
    lines = [f"Case-by-case majority voting ({len(report.vote_sets)} sets of 5)", ""]
    for vs, outcome in zip(report.vote_sets, report.outcomes):
        lines.append(
            f"{vs.set_id:<16} observed dx={int(vs.observed_dx)} "
            f"{'positive' if outcome.observed_positive else 'negative'} -> predicted "
            f"{'positive' if outcome.predicted_positive else 'negative'}  {outcome.describe()}"
        )
    return "\n".join(lines)


def render_user_report(report: UserReport) -> str:
    parts = [
        f"Evaluation report: {report.label}",
        render_confusion4(report.image_matrix, "Table 1 layout: image-by-image accuracy"),
        render_confusion2(report.image_grouped, "Table 2 layout: grouped ranking",
                          "Negative (0) or ITC (1)", "Micro Met (2) or Macro Met (3)"),
        render_metrics(report.image_metrics, "Image-level grouped metrics"),
        render_confusion2(report.case_matrix, "Table 4 layout: majority voting with group ranking"),
        render_metrics(report.case_metrics, "Case-level (voted) metrics"),
        render_case_section(report),
    ]
    return "\n\n".join(parts) + "\n"


def metric_rows(report: UserReport) -> list[tuple[str, str, int, int, str]]:
    rows = [("image4", "accuracy", report.image_matrix.trace, report.image_matrix.total,
             report.image_matrix.accuracy.render())]
    for level, metrics in (("image", report.image_metrics), ("case", report.case_metrics)):
        for name, r in metrics.items():
            rows.append((level, name, r.numerator, r.denominator, r.render()))
    return rows


def write_metrics_csv(report: UserReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        w.writerows(metric_rows(report))


def read_metrics_csv(path, level: str = "case") -> dict[str, Ratio]:
    """The five ratios of one level from a metrics CSV written by :func:`write_metrics_csv`."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_FIELDS:
            raise ValidationError(f"{path}: expected header {','.join(METRIC_FIELDS)}")
        for lineno, rec in enumerate(reader, 2):
            if rec["level"] == level:
                try:
                    out[rec["metric"]] = Ratio(int(rec["numerator"]), int(rec["denominator"]))
                except ValueError as exc:
                    raise ValidationError(f"{path}: line {lineno}: {exc}") from None
    missing = [n for n in METRIC_NAMES if n not in out]
    if missing:
        raise ValidationError(f"{path}: no {level}-level rows for {', '.join(missing)}")
    return out


def decimal_or_none(v) -> Decimal | None:
    return v.rendered() if isinstance(v, Ratio) else v


def render_fixture_tables() -> str:
    """Recompute every reference table from the shipped fixtures."""
    from . import fixtures
    from .metrics import aggregate_users, diagnostic_metrics, group_confusion, score_vote_set, tabulate_confusion4

    printed = fixtures.printed_values()
    m4 = tabulate_confusion4(fixtures.table1_predictions())
    m2 = group_confusion(m4)
    t4 = fixtures.table4()
    parts = [
        render_confusion4(m4, "Table 1: image-by-image accuracy")
        + f"  (printed {printed['table1_accuracy']}%)",
        render_confusion2(m2, "Table 2: grouped ranking", "Negative (0) or ITC (1)", "Micro Met (2) or Macro Met (3)")
        + f"  (printed {printed['table2_accuracy']}%)",
        render_metrics(diagnostic_metrics(m2), "Grouped image-level metrics from Table 2"),
    ]
    lines = ["Table 3: examples of majority voting", ""]
    for ex in fixtures.table3():
        outcome = score_vote_set(ex["observed_dx"], ex["predicted_dx"])
        calls = " ".join(str(p) for p in ex["predicted_dx"])
        lines.append(f"  observed dx={ex['observed_dx']}  predicted dx=[{calls}]  {outcome.describe()}")
    parts.append("\n".join(lines))
    parts.append(render_confusion2(t4, "Table 4: majority voting with group ranking (user 1)")
                 + f"  (printed {printed['table4_accuracy']}%)")
    parts.append(render_metrics(diagnostic_metrics(t4), "Case-level metrics from Table 4"))
    users, printed_means = fixtures.table5()
    means = aggregate_users(users)
    parts.append(render_metric_table(users, means, "Table 5: per-user metrics and recomputed means")
                 + "\nPrinted means: " + " / ".join(str(printed_means[n]) for n in METRIC_NAMES))
    return "\n\n".join(parts) + "\n"
