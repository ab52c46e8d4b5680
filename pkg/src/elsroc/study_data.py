"""Per-study 2x2 tables, observed rates and within-study variances."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .transforms import TransformPair, t_alpha, t_alpha_deriv

REQUIRED_COLUMNS = ("tp", "fn", "fp", "tn")
CORRECTIONS = ("half", "none")


class DataFormatError(ValueError):
    """Malformed input table; message names the data row and column."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class StudyTable:
    nTP: int
    nFN: int
    nFP: int
    nTN: int
    label: str = ""

    def __post_init__(self):
        for name in ("nTP", "nFN", "nFP", "nTN"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
        if self.nTP + self.nFN < 1 or self.nFP + self.nTN < 1:
            raise ValueError("a study needs at least one diseased and one non-diseased subject")

    @property
    def counts(self):
        return (self.nTP, self.nFN, self.nFP, self.nTN)


@dataclass(frozen=True)
class ObservedPoint:
    sens: float
    fpr: float
    var_sens: float
    var_fpr: float
    n_diseased: float
    n_nondiseased: float
    label: str = ""


def from_counts(table: StudyTable, correction: str = "half") -> ObservedPoint:
    """Observed rates of one study.

    With ``correction="half"`` 0.5 is added to all four cells when any cell
    is zero; ``"none"`` leaves the counts alone and rejects rates of 0 or 1.
    """
    if correction not in CORRECTIONS:
        raise ValueError(f"unknown correction {correction!r}; expected one of {CORRECTIONS}")
    tp, fn, fp, tn = (float(c) for c in table.counts)
    if correction == "half" and min(tp, fn, fp, tn) == 0:
        tp, fn, fp, tn = tp + 0.5, fn + 0.5, fp + 0.5, tn + 0.5
    n1 = tp + fn
    n0 = fp + tn
    sens = tp / n1
    fpr = fp / n0
    if not (0.0 < sens < 1.0 and 0.0 < fpr < 1.0):
        raise ValueError(
            f"study {table.label or '?'}: degenerate rates sens={sens}, fpr={fpr}; "
            "use correction='half'"
        )
    return ObservedPoint(
        sens=sens,
        fpr=fpr,
        var_sens=sens * (1.0 - sens) / n1,
        var_fpr=fpr * (1.0 - fpr) / n0,
        n_diseased=n1,
        n_nondiseased=n0,
        label=table.label,
    )


def transformed_obs(point: ObservedPoint, pair: TransformPair):
    return (t_alpha(pair.alpha_p, point.sens), t_alpha(pair.alpha_q, point.fpr))


def within_study_var(point: ObservedPoint, pair: TransformPair):
    """Delta-method variances of the transformed rates."""
    dp = t_alpha_deriv(pair.alpha_p, point.sens)
    dq = t_alpha_deriv(pair.alpha_q, point.fpr)
    return (dp * dp * point.var_sens, dq * dq * point.var_fpr)


class Dataset:
    """At least three observed studies; ``y`` holds (sens, fpr) rows.

    Arrays are read-only so a dataset can be shared between fits.
    """

    def __init__(self, points: Iterable[ObservedPoint]):
        self.points = tuple(points)
        if len(self.points) < 3:
            raise ValueError(f"need at least 3 studies, got {len(self.points)}")
        self.y = np.array([[p.sens, p.fpr] for p in self.points], dtype=float)
        self.var = np.array([[p.var_sens, p.var_fpr] for p in self.points], dtype=float)
        self.y.setflags(write=False)
        self.var.setflags(write=False)

    def __repr__(self):
        return f"Dataset(N={self.N})"

    @classmethod
    def from_tables(cls, tables: Sequence[StudyTable], correction: str = "half") -> "Dataset":
        return cls(from_counts(t, correction) for t in tables)

    @property
    def N(self) -> int:
        return len(self.points)

    @property
    def labels(self):
        return [p.label for p in self.points]

    def z(self, pair: TransformPair) -> np.ndarray:
        """(N, 2) transformed observations."""
        return np.column_stack(
            [t_alpha(pair.alpha_p, self.y[:, 0]), t_alpha(pair.alpha_q, self.y[:, 1])]
        )

    def d2(self, pair: TransformPair) -> np.ndarray:
        """(N, 2) within-study variances on the transformed scale."""
        dp = t_alpha_deriv(pair.alpha_p, self.y[:, 0])
        dq = t_alpha_deriv(pair.alpha_q, self.y[:, 1])
        return np.column_stack([dp * dp * self.var[:, 0], dq * dq * self.var[:, 1]])


def _parse_count(text, row, column):
    s = text.strip()
    try:
        v = int(s)
    except ValueError:
        raise DataFormatError(
            f"row {row}, column {column}: expected an integer count, got {text!r}", row, column
        ) from None
    if v < 0:
        raise DataFormatError(f"row {row}, column {column}: negative count {v}", row, column)
    return v


def read_dataset(source) -> list[StudyTable]:
    """Parse a delimited table with columns ``label,tp,fn,fp,tn``.

    ``source`` is a path or an open text stream. Column order and case do
    not matter, comma or tab delimiters are detected from the header, and
    blank or ``#`` lines are skipped. Extra columns are ignored.
    Rows are numbered from 1 after the header.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8", newline="") as fh:
            text = fh.read()
    else:
        text = source.read()
    lines = [
        ln for ln in text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
        if ln.strip() and not ln.lstrip().startswith("#")
    ]
    if not lines:
        raise DataFormatError("empty input: missing header row")
    delim = "\t" if "\t" in lines[0] else ","
    rows = list(csv.reader(io.StringIO("\n".join(lines)), delimiter=delim))
    header = [h.strip().lower() for h in rows[0]]
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise DataFormatError(f"missing required column(s): {', '.join(missing)}", column=missing[0])
    idx = {c: header.index(c) for c in header}
    tables = []
    for r, cells in enumerate(rows[1:], start=1):
        if len(cells) < len(header):
            raise DataFormatError(f"row {r}: expected {len(header)} fields, got {len(cells)}", r)
        counts = [_parse_count(cells[idx[c]], r, c) for c in REQUIRED_COLUMNS]
        label = cells[idx["label"]].strip() if "label" in idx else f"study{r}"
        try:
            tables.append(StudyTable(*counts, label=label))
        except ValueError as exc:
            raise DataFormatError(f"row {r}: {exc}", r) from None
    return tables
