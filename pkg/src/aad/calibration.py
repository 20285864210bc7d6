"""Percentile threshold calibration.

Candidate thresholds come from the score distribution of a normal-only
validation split; the final threshold is either picked by F1 on a separately
labeled calibration split or, without labels, defaults to the highest-grid
percentile candidate. Predictions use strict inequality: score > threshold
flags a frame anomalous.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLabelsError, EmptyInputError
from .metrics import confusion, precision_recall_f1

DEFAULT_GRID = tuple(range(5, 100, 5))  # 5, 10, ..., 95


@dataclass(frozen=True)
class ThresholdCandidate:
    percentile: float
    threshold: float
    source: str = ""


@dataclass(frozen=True)
class SweepRow:
    percentile: float
    threshold: float
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class CalibrationResult:
    threshold: float
    percentile: float
    f1: float
    sweep: tuple[SweepRow, ...]

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "percentile": self.percentile,
            "f1": self.f1,
            "sweep": [vars(r) for r in self.sweep],
        }


def percentile(values, p: float) -> float:
    """Linear-interpolation percentile: index p/100 * (n - 1) into sorted values."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise EmptyInputError("percentile of empty vector")
    if not 0.0 <= p <= 100.0:
        raise ValueError(f"percentile p={p} outside [0, 100]")
    s = np.sort(v)
    idx = p / 100.0 * (s.size - 1)
    lo = int(np.floor(idx))
    hi = int(np.ceil(idx))
    if lo == hi:
        return float(s[lo])
    frac = idx - lo
    return float(s[lo] + frac * (s[hi] - s[lo]))


def sweep_thresholds(scores, grid=DEFAULT_GRID, source: str = "") -> list[ThresholdCandidate]:
    """One candidate per grid percentile of the validation scores."""
    s = np.asarray(scores, dtype=float).ravel()
    if s.size == 0:
        raise EmptyInputError("cannot sweep thresholds over empty scores")
    return [
        ThresholdCandidate(percentile=float(p), threshold=percentile(s, float(p)), source=source)
        for p in sorted(grid)
    ]


def select_by_f1(scores, labels, candidates) -> CalibrationResult:
    """Pick the candidate maximizing F1; ties go to the lowest percentile."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels, dtype=int).ravel()
    if not candidates:
        raise EmptyInputError("no threshold candidates")
    if np.all(y == y[0] if y.size else True) or y.size == 0:
        raise DegenerateLabelsError("F1 selection needs both classes present")

    rows = []
    for cand in sorted(candidates, key=lambda c: c.percentile):
        preds = (s > cand.threshold).astype(int)
        p, r, f1 = precision_recall_f1(confusion(y, preds))
        rows.append(SweepRow(cand.percentile, cand.threshold, p, r, f1))

    best = rows[0]
    for row in rows[1:]:
        if row.f1 > best.f1:
            best = row
    return CalibrationResult(
        threshold=best.threshold,
        percentile=best.percentile,
        f1=best.f1,
        sweep=tuple(rows),
    )


def default_candidate(candidates) -> ThresholdCandidate:
    """Fallback when no labeled calibration split exists: highest grid percentile."""
    if not candidates:
        raise EmptyInputError("no threshold candidates")
    return max(candidates, key=lambda c: c.percentile)
