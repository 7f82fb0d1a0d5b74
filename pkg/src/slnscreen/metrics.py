"""Confusion matrices, grouped ranking, 5-patch majority voting and diagnostic metrics.

Metrics are exact integer ratios; percentages are only produced when
rendering (half-up to two decimals).  A ratio with a zero denominator is
"not computable" and never silently becomes 0 or 100.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .corpus import VOTES_PER_SET, VoteSet, category, grouped
from .errors import NotComputableError, VoteSetError

METRIC_NAMES = ("accuracy", "sensitivity", "specificity", "ppv", "npv")
NOT_COMPUTABLE = "not computable"


def round_half_up(value: Fraction, places: int = 2) -> Decimal:
    scale = 10**places
    scaled = value * scale
    # floor(x + 1/2), symmetric for negatives
    sign = -1 if scaled < 0 else 1
    units = (abs(scaled) * 2 + 1) // 2
    return (Decimal(sign * units) / scale).quantize(Decimal(1).scaleb(-places))


@dataclass(frozen=True)
class Ratio:
    numerator: int
    denominator: int

    @property
    def computable(self) -> bool:
        return self.denominator != 0

    @property
    def value(self) -> Fraction | None:
        return Fraction(self.numerator, self.denominator) if self.computable else None

    @property
    def percent(self) -> Fraction | None:
        return self.value * 100 if self.computable else None

    def rendered(self) -> Decimal | None:
        return round_half_up(self.percent) if self.computable else None

    def render(self) -> str:
        return str(self.rendered()) if self.computable else NOT_COMPUTABLE

    def __str__(self):
        return f"{self.numerator}/{self.denominator}"


@dataclass(frozen=True)
class ConfusionMatrix4:
    """``counts[observed][predicted]`` over the four diagnostic categories."""

    counts: tuple[tuple[int, int, int, int], ...]

    def __post_init__(self):
        if len(self.counts) != 4 or any(len(r) != 4 for r in self.counts):
            raise ValueError("a 4-class confusion matrix needs 4x4 counts")
        if any(c < 0 for r in self.counts for c in r):
            raise ValueError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", tuple(tuple(int(c) for c in r) for r in self.counts))

    @property
    def total(self) -> int:
        return sum(map(sum, self.counts))

    @property
    def trace(self) -> int:
        return sum(self.counts[i][i] for i in range(4))

    @property
    def accuracy(self) -> Ratio:
        return Ratio(self.trace, self.total)


@dataclass(frozen=True)
class ConfusionMatrix2:
    tn: int
    fp: int
    fn: int
    tp: int

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp


@dataclass(frozen=True)
class DiagnosticMetrics:
    accuracy: Ratio
    sensitivity: Ratio
    specificity: Ratio
    ppv: Ratio
    npv: Ratio

    def items(self) -> list[tuple[str, Ratio]]:
        return [(name, getattr(self, name)) for name in METRIC_NAMES]

    def rendered(self) -> dict[str, Decimal | None]:
        return {name: r.rendered() for name, r in self.items()}


def tabulate_confusion4(pairs: Iterable) -> ConfusionMatrix4:
    """Count ``(observed, predicted)`` pairs; objects with those attributes also work."""
    counts = [[0] * 4 for _ in range(4)]
    for item in pairs:
        if hasattr(item, "observed_dx"):
            obs, pred = item.observed_dx, item.predicted_dx
        else:
            obs, pred = item
        counts[category(obs)][category(pred)] += 1
    return ConfusionMatrix4(tuple(map(tuple, counts)))


def group_confusion(m: ConfusionMatrix4) -> ConfusionMatrix2:
    c = m.counts
    block = lambda rows, cols: sum(c[i][j] for i in rows for j in cols)  # noqa: E731
    neg, pos = (0, 1), (2, 3)
    return ConfusionMatrix2(tn=block(neg, neg), fp=block(neg, pos), fn=block(pos, neg), tp=block(pos, pos))


def majority_vote(votes: Sequence[bool]) -> bool:
    """Case-level call from five grouped patch calls: positive iff at least 3 are positive."""
    votes = list(votes)
    if len(votes) != VOTES_PER_SET:
        raise VoteSetError(f"majority vote needs exactly {VOTES_PER_SET} votes, got {len(votes)}")
    return sum(bool(v) for v in votes) >= 3


@dataclass(frozen=True)
class VoteOutcome:
    observed_positive: bool
    predicted_positive: bool
    agreeing: int  # patch calls matching the observed group

    @property
    def correct(self) -> bool:
        return self.observed_positive == self.predicted_positive

    def describe(self) -> str:
        return f"{self.agreeing}/{VOTES_PER_SET} -> {'Correct' if self.correct else 'Incorrect'}"


def score_vote_set(observed_dx: int, predicted_dx: Sequence[int]) -> VoteOutcome:
    calls = [grouped(p) for p in predicted_dx]
    observed = grouped(observed_dx)
    return VoteOutcome(observed, majority_vote(calls), sum(c == observed for c in calls))


def vote_outcomes(vote_sets: Sequence[VoteSet], predictions: Mapping[str, int]) -> list[VoteOutcome]:
    out = []
    for vs in vote_sets:
        try:
            preds = [predictions[pid] for pid in vs.patch_ids]
        except KeyError as exc:
            raise VoteSetError(f"vote set {vs.set_id}: no prediction for patch {exc.args[0]}") from None
        out.append(score_vote_set(vs.observed_dx, preds))
    return out


def binary_confusion(outcomes: Iterable[VoteOutcome]) -> ConfusionMatrix2:
    tn = fp = fn = tp = 0
    for o in outcomes:
        if o.observed_positive:
            tp += o.predicted_positive
            fn += not o.predicted_positive
        else:
            fp += o.predicted_positive
            tn += not o.predicted_positive
    return ConfusionMatrix2(tn, fp, fn, tp)


def case_confusion(vote_sets: Sequence[VoteSet], predictions: Mapping[str, int]) -> ConfusionMatrix2:
    return binary_confusion(vote_outcomes(vote_sets, predictions))


def diagnostic_metrics(m: ConfusionMatrix2) -> DiagnosticMetrics:
    return DiagnosticMetrics(
        accuracy=Ratio(m.tp + m.tn, m.total),
        sensitivity=Ratio(m.tp, m.tp + m.fn),
        specificity=Ratio(m.tn, m.tn + m.fp),
        ppv=Ratio(m.tp, m.tp + m.fp),
        npv=Ratio(m.tn, m.tn + m.fn),
    )


def _as_percent(value) -> Fraction | None:
    if isinstance(value, Ratio):
        return value.percent
    if value is None:
        return None
    return Fraction(Decimal(str(value)) if isinstance(value, float) else value)


def aggregate_users(rows: Sequence[tuple[str, Mapping]]) -> dict[str, Decimal]:
    """Unweighted mean of per-user percentage rows, rendered half-up to 2 decimals.

    Each row is ``(user_label, {metric: value})`` where a value is a
    percentage (Decimal/Fraction/int/str) or a :class:`Ratio`.
    """
    if not rows:
        raise NotComputableError("need at least one user row to average")
    means = {}
    for name in METRIC_NAMES:
        total = Fraction(0)
        for label, row in rows:
            pct = _as_percent(row.get(name))
            if pct is None:
                raise NotComputableError(f"user {label}: metric {name} is not computable")
            total += pct
        means[name] = round_half_up(total / len(rows))
    return means


@dataclass(frozen=True)
class UserReport:
    label: str
    image_matrix: ConfusionMatrix4
    image_grouped: ConfusionMatrix2
    case_matrix: ConfusionMatrix2
    image_metrics: DiagnosticMetrics
    case_metrics: DiagnosticMetrics
    outcomes: tuple[VoteOutcome, ...]
    vote_sets: tuple[VoteSet, ...]


def build_user_report(label: str, predictions: Sequence, vote_sets: Sequence[VoteSet]) -> UserReport:
    """Image-level and vote-level results for one set of prediction rows."""
    m4 = tabulate_confusion4(predictions)
    m2 = group_confusion(m4)
    outcomes = vote_outcomes(vote_sets, {r.patch_id: r.predicted_dx for r in predictions})
    case = binary_confusion(outcomes)
    if case.total * VOTES_PER_SET != m4.total:
        raise VoteSetError(
            f"{label}: {case.total} vote sets do not cover {m4.total} scored patches"
        )
    return UserReport(label, m4, m2, case, diagnostic_metrics(m2), diagnostic_metrics(case),
                      tuple(outcomes), tuple(vote_sets))
