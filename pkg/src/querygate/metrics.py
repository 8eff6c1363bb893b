"""Map evaluation and learning-curve export.

Agreement between a predicted map and the reference is summarized by the
chance-corrected kappa statistic over all reference-labeled pixels. Curve
files track kappa against both the iteration count and the real labeling
effort: every query actually presented to the oracle counts, successful or
not, while masked candidates cost nothing because the labeler never saw
them.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    """Counts indexed (reference class - 1, predicted class - 1)."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise MetricsError("confusion matrix must be square")
        if (self.counts < 0).any():
            raise MetricsError("confusion matrix counts must be nonnegative")

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def omega(self) -> int:
        return self.counts.shape[0]


def confusion_matrix(
    predicted: np.ndarray, reference: np.ndarray, omega: int
) -> ConfusionMatrix:
    """Counts over pixels with a nonzero reference label only."""
    predicted = np.asarray(predicted)
    reference = np.asarray(reference)
    if predicted.shape != reference.shape:
        raise MetricsError(
            f"dimension mismatch: predicted {predicted.shape} vs reference {reference.shape}"
        )
    mask = reference > 0
    ref = reference[mask].astype(np.int64)
    pred = predicted[mask].astype(np.int64)
    if (ref > omega).any() or (pred > omega).any() or (pred < 0).any():
        raise MetricsError("labels exceed the class count")
    counts = np.zeros((omega, omega), dtype=np.int64)
    np.add.at(counts, (ref - 1, pred - 1), 1)
    return ConfusionMatrix(counts)


def overall_accuracy(cm: ConfusionMatrix) -> float:
    if cm.n == 0:
        raise MetricsError("empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.n


def cohen_kappa(cm: ConfusionMatrix) -> float:
    """(p_o - p_e) / (1 - p_e), computed with integer-exact numerators.

    Perfect agreement on a chance-saturated matrix returns exactly 1;
    disagreement there is undefined and raises.
    """
    n = cm.n
    if n == 0:
        raise MetricsError("kappa undefined for an empty matrix")
    trace = int(np.trace(cm.counts))
    rows = cm.counts.sum(axis=1)
    cols = cm.counts.sum(axis=0)
    chance = int((rows * cols).sum())
    numerator = n * trace - chance
    denominator = n * n - chance
    if denominator == 0:
        if numerator == 0:
            return 1.0
        raise MetricsError("kappa degenerate: chance agreement is 1 with disagreement")
    return numerator / denominator


@dataclass
class CurvePoint:
    iteration: int
    labels_cum: int  # training-set size used at this iteration
    effort_cum: int  # seeds + presented queries before this iteration's batch
    kappa: float
    oa: float
    queries_iter: int  # queries presented during this iteration


@dataclass
class RunCurve:
    method: str
    seed: int
    points: list[CurvePoint] = field(default_factory=list)


def _fmt(value: float) -> str:
    return repr(float(value))


def curves_csv_text(runs: list[RunCurve]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(
        ["method", "seed", "iteration", "labels_cum", "effort_cum", "kappa", "oa", "queries_iter"]
    )
    for run in runs:
        for p in run.points:
            writer.writerow(
                [
                    run.method,
                    run.seed,
                    p.iteration,
                    p.labels_cum,
                    p.effort_cum,
                    _fmt(p.kappa),
                    _fmt(p.oa),
                    p.queries_iter,
                ]
            )
    return out.getvalue()


def summary_csv_text(runs: list[RunCurve]) -> str:
    """Per-method mean and std across runs, by iteration."""
    grouped: dict[tuple[str, int], list[CurvePoint]] = {}
    methods: list[str] = []
    for run in runs:
        if run.method not in methods:
            methods.append(run.method)
        for p in run.points:
            grouped.setdefault((run.method, p.iteration), []).append(p)

    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["method", "iteration", "kappa_mean", "kappa_std", "effort_mean"])
    for method in methods:
        iterations = sorted(i for (m, i) in grouped if m == method)
        for it in iterations:
            pts = grouped[(method, it)]
            kappas = np.asarray([p.kappa for p in pts], dtype=np.float64)
            efforts = np.asarray([p.effort_cum for p in pts], dtype=np.float64)
            writer.writerow(
                [
                    method,
                    it,
                    _fmt(kappas.mean()),
                    _fmt(kappas.std()),
                    _fmt(efforts.mean()),
                ]
            )
    return out.getvalue()


def export_learning_curves(runs: list[RunCurve], outdir: str | Path) -> tuple[Path, Path]:
    if not runs:
        raise MetricsError("need at least one completed run")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    curves = outdir / "curves.csv"
    summary = outdir / "summary.csv"
    curves.write_text(curves_csv_text(runs))
    summary.write_text(summary_csv_text(runs))
    return curves, summary


def effort_to_reach(points: list[CurvePoint], target_kappa: float) -> int | None:
    """Cumulative effort at which kappa first reaches the target, if ever."""
    for p in points:
        if p.kappa >= target_kappa:
            return p.effort_cum
    return None
