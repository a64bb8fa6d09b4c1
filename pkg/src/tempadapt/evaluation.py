"""Evaluation metrics: pseudo-perplexity, macro F1, control-relative
differences, cross-temporal matrices and the off-diagonal signed-rank test.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import ConfigurationError, DataError

EXACT_WILCOXON_MAX_N = 25


def pseudo_perplexity(losses: Sequence[float]) -> float:
    """exp of the mean cross-entropy loss over all masked tokens.

    Corpus-level: one mean over every masked token in the test set, not a
    per-document aggregate.
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        raise DataError("pseudo-perplexity of an empty loss set is undefined")
    return float(np.exp(losses.mean()))


def confusion_matrix(predictions, golds, n_classes: int) -> np.ndarray:
    """Rows are gold classes, columns predicted classes."""
    predictions = np.asarray(predictions, dtype=np.int64)
    golds = np.asarray(golds, dtype=np.int64)
    if predictions.shape != golds.shape:
        raise DataError(
            f"length mismatch: {predictions.shape[0]} predictions, {golds.shape[0]} golds"
        )
    if golds.size and (
        golds.min() < 0 or golds.max() >= n_classes
        or predictions.min() < 0 or predictions.max() >= n_classes
    ):
        raise DataError("labels out of range")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (golds, predictions), 1)
    return cm


@dataclass
class ClsResult:
    macro_f1: float  # 0..100 scale
    per_class_precision: list[float]
    per_class_recall: list[float]
    per_class_f1: list[float]
    confusion: np.ndarray
    test_period: Optional[str] = None
    provenance: dict = field(default_factory=dict)


def classification_result(predictions, golds, n_classes: int) -> ClsResult:
    """Macro F1 with per-class precision/recall and the confusion matrix.

    A class with zero predicted and zero gold positives contributes F1 = 0.
    """
    cm = confusion_matrix(predictions, golds, n_classes)
    precisions, recalls, f1s = [], [], []
    for c in range(n_classes):
        tp = cm[c, c]
        pred_pos = cm[:, c].sum()
        gold_pos = cm[c, :].sum()
        p = tp / pred_pos if pred_pos else 0.0
        r = tp / gold_pos if gold_pos else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        precisions.append(float(p))
        recalls.append(float(r))
        f1s.append(float(f1))
    return ClsResult(
        macro_f1=100.0 * float(np.mean(f1s)),
        per_class_precision=precisions,
        per_class_recall=recalls,
        per_class_f1=f1s,
        confusion=cm,
    )


def macro_f1(predictions, golds, n_classes: int) -> float:
    """Unweighted mean of per-class F1 on a 0-100 scale."""
    return classification_result(predictions, golds, n_classes).macro_f1


def relative_difference(value: float, control: float) -> float:
    """(value - control) / control * 100."""
    if control == 0:
        raise DataError("relative difference against a zero control is undefined")
    return (value - control) / control * 100.0


@dataclass
class CrossTemporalMatrix:
    """Train-period x test-period metric grid with per-column controls."""

    row_periods: list[str]
    col_periods: list[str]
    values: np.ndarray  # shape (rows, cols)
    control: np.ndarray  # shape (cols,)
    metric: str = "pseudo_perplexity"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.control = np.asarray(self.control, dtype=np.float64)
        if self.values.shape != (len(self.row_periods), len(self.col_periods)):
            raise DataError("matrix shape does not match period ids")
        if self.control.shape != (len(self.col_periods),):
            raise DataError("one control value per test period required")

    @property
    def percent_differences(self) -> np.ndarray:
        if np.any(self.control == 0):
            raise DataError("zero control value in matrix")
        return (self.values - self.control[None, :]) / self.control[None, :] * 100.0

    def is_square(self) -> bool:
        return self.row_periods == self.col_periods

    def best_row_per_column(self, lower_is_better: bool) -> list[int]:
        """Index of the best training period for each test period; ties go
        to the earliest training period."""
        pick = np.argmin if lower_is_better else np.argmax
        return [int(pick(self.values[:, c])) for c in range(len(self.col_periods))]

    def to_csv(self, path: Path, percent: bool = False) -> None:
        """Write the grid as a (rows+1) x (cols+1) CSV with period ids in
        the first row and column."""
        data = self.percent_differences if percent else self.values
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["train\\test"] + list(self.col_periods))
            for r, pid in enumerate(self.row_periods):
                writer.writerow([pid] + [repr(float(v)) for v in data[r]])

    def save(self, out_dir: Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self.to_csv(out_dir / "raw.csv", percent=False)
        self.to_csv(out_dir / "percent.csv", percent=True)
        with (out_dir / "control.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["test"] + list(self.col_periods))
            writer.writerow(["control"] + [repr(float(v)) for v in self.control])

    @classmethod
    def load(cls, out_dir: Path, metric: str = "pseudo_perplexity") -> "CrossTemporalMatrix":
        out_dir = Path(out_dir)
        with (out_dir / "raw.csv").open(newline="") as fh:
            rows = list(csv.reader(fh))
        col_periods = rows[0][1:]
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        with (out_dir / "control.csv").open(newline="") as fh:
            crows = list(csv.reader(fh))
        control = np.array([float(v) for v in crows[1][1:]])
        return cls([r[0] for r in rows[1:]], col_periods, values, control, metric=metric)


def build_matrix(
    checkpoints_by_period: dict[str, object],
    test_sets_by_period: dict[str, object],
    evaluate: Callable[[object, object], float],
    control_checkpoint: object,
    metric: str = "pseudo_perplexity",
) -> CrossTemporalMatrix:
    """Evaluate every (checkpoint, test set) pair plus one control value per
    test period. `evaluate` maps (checkpoint, test set) to a scalar; results
    are independent of evaluation order because each cell is computed in
    isolation."""
    row_periods = sorted(checkpoints_by_period)
    col_periods = sorted(test_sets_by_period)
    missing = [p for p in row_periods if p not in test_sets_by_period]
    if row_periods == col_periods and not missing:
        pass
    elif missing:
        raise ConfigurationError(f"missing test periods: {missing}")
    values = np.empty((len(row_periods), len(col_periods)))
    for r, rp in enumerate(row_periods):
        for c, cp in enumerate(col_periods):
            values[r, c] = evaluate(checkpoints_by_period[rp], test_sets_by_period[cp])
    control = np.array(
        [evaluate(control_checkpoint, test_sets_by_period[cp]) for cp in col_periods]
    )
    return CrossTemporalMatrix(row_periods, col_periods, values, control, metric=metric)


def offdiagonal_pairs(matrix: CrossTemporalMatrix) -> list[tuple[float, float]]:
    """Matched off-diagonal cells, one pair per unordered period pair a < b,
    oriented (past model on future test, future model on past test)."""
    if not matrix.is_square():
        raise DataError("off-diagonal pairing requires a square matrix")
    n = len(matrix.row_periods)
    pairs = []
    for a in range(n):
        for b in range(a + 1, n):
            pairs.append((float(matrix.values[a, b]), float(matrix.values[b, a])))
    return pairs


@dataclass
class WilcoxonResult:
    w_plus: float
    n_pairs: int
    zeros_dropped: int
    p_value: float
    method: str  # "exact" | "normal-approximation"


def _exact_signed_rank_p(ranks: np.ndarray, w_plus: float) -> float:
    """P(W+ >= w_plus) under the null, by dynamic programming over the
    2^n equiprobable sign assignments. Midranks are halves, so everything
    is doubled to stay integral."""
    doubled = np.rint(2 * ranks).astype(np.int64)
    total = int(doubled.sum())
    # dist[s] = number of sign assignments with doubled W+ == s
    dist = np.zeros(total + 1, dtype=np.float64)
    dist[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(dist)
        shifted[r:] = dist[: total + 1 - r]
        dist = dist + shifted
    threshold = int(math.ceil(round(2 * w_plus, 6)))
    p = dist[threshold:].sum() / dist.sum()
    return float(p)


def wilcoxon_signed_rank(
    pairs: Sequence[tuple[float, float]], alternative: str = "greater"
) -> WilcoxonResult:
    """One-sided Wilcoxon signed-rank test on paired values.

    Differences are first - second; zeros are dropped (and counted); ties
    get midranks. Exact p by enumeration over sign assignments for
    n <= 25, else a tie-corrected normal approximation with continuity
    correction.
    """
    if alternative not in ("greater", "less"):
        raise ConfigurationError(f"unknown alternative: {alternative!r}")
    diffs = np.array([float(a) - float(b) for a, b in pairs], dtype=np.float64)
    zeros = int(np.sum(diffs == 0))
    diffs = diffs[diffs != 0]
    if diffs.size == 0:
        raise DataError("all paired differences are zero")
    if alternative == "less":
        diffs = -diffs
    ranks = stats.rankdata(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())
    n = diffs.size
    if n <= EXACT_WILCOXON_MAX_N:
        p = _exact_signed_rank_p(ranks, w_plus)
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        # tie correction on the variance
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(
            tie_counts**3 - tie_counts
        ) / 48.0
        z = (w_plus - mean - 0.5) / math.sqrt(var)
        p = float(stats.norm.sf(z))
        method = "normal-approximation"
    p = min(max(p, np.nextafter(0, 1)), 1.0)
    return WilcoxonResult(
        w_plus=w_plus, n_pairs=n, zeros_dropped=zeros, p_value=p, method=method
    )
