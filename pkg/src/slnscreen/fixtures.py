"""Reference result tables (confusion counts, vote examples, per-user rows) shipped as CSV."""

from __future__ import annotations

import csv
import io
from decimal import Decimal
from importlib import resources

from .metrics import METRIC_NAMES, ConfusionMatrix2, ConfusionMatrix4


def _rows(name: str) -> list[dict[str, str]]:
    text = resources.files("slnscreen").joinpath("data").joinpath(name).read_text(encoding="utf-8")
    return list(csv.DictReader(io.StringIO(text)))


def table1() -> ConfusionMatrix4:
    rows = sorted(_rows("table1.csv"), key=lambda r: int(r["observed_dx"]))
    return ConfusionMatrix4(tuple(tuple(int(r[f"predicted_{j}"]) for j in range(4)) for r in rows))


def table1_predictions() -> list[tuple[int, int]]:
    """Table 1 expanded back into one ``(observed, predicted)`` pair per patch."""
    m = table1()
    return [(o, p) for o in range(4) for p in range(4) for _ in range(m.counts[o][p])]


def table3() -> list[dict]:
    return [
        {
            "example": int(r["example"]),
            "observed_dx": int(r["observed_dx"]),
            "predicted_dx": [int(v) for v in r["predicted_dx"].split()],
            "agreeing": int(r["agreeing"]),
            "outcome": r["outcome"],
        }
        for r in _rows("table3.csv")
    ]


def table4() -> ConfusionMatrix2:
    r = {row["observed"]: row for row in _rows("table4.csv")}
    return ConfusionMatrix2(
        tn=int(r["negative"]["predicted_negative"]),
        fp=int(r["negative"]["predicted_positive"]),
        fn=int(r["positive"]["predicted_negative"]),
        tp=int(r["positive"]["predicted_positive"]),
    )


def table5() -> tuple[list[tuple[str, dict[str, Decimal]]], dict[str, Decimal]]:
    """Per-user rows and the printed means row."""
    users, means = [], None
    for r in _rows("table5.csv"):
        row = {name: Decimal(r[name]) for name in METRIC_NAMES}
        if r["user"] == "Means":
            means = row
        else:
            users.append((r["user"], row))
    return users, means


def printed_values() -> dict[str, Decimal]:
    return {r["quantity"]: Decimal(r["printed"]) for r in _rows("printed.csv")}
