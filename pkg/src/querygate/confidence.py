"""Labeler-confidence model and query gate.

A binary training set accumulates one example per query outcome: answered
queries become positives, refused or masked ones become negatives. From the
second iteration on (once negatives exist) a calibrated RBF SVM predicts the
probability that the labeler can answer a candidate, and only candidates
whose probability strictly exceeds the gate threshold are presented.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .svm import (
    SIGMA_GRID,
    BinarySvm,
    KernelParams,
    PlattCalibration,
    platt_calibrate,
    select_sigma_cv,
    stratified_folds,
    train_binary_smo,
)

OUTCOME_LABELED = "labeled"
OUTCOME_REFUSED = "refused"
OUTCOME_MASKED = "masked"
OUTCOMES = (OUTCOME_LABELED, OUTCOME_REFUSED, OUTCOME_MASKED)

DEFAULT_THETA = 0.6


class ConfidenceUntrainable(RuntimeError):
    """The confidence set has only one class; callers must bypass the gate."""


@dataclass(frozen=True)
class GateConfig:
    theta: float = DEFAULT_THETA

    def __post_init__(self) -> None:
        if not (0.0 < self.theta < 1.0):
            raise ValueError("theta must be in (0, 1)")


@dataclass
class ConfExample:
    x: np.ndarray
    y: int  # +1 answerable, -1 bad state
    pixel_id: int | None = None


@dataclass
class ConfidenceSet:
    examples: list[ConfExample] = field(default_factory=list)
    positives: int = 0
    negatives: int = 0

    def __len__(self) -> int:
        return len(self.examples)

    def features(self) -> np.ndarray:
        return np.stack([e.x for e in self.examples])

    def labels(self) -> np.ndarray:
        return np.asarray([e.y for e in self.examples], dtype=np.float64)


def record_confidence_example(
    conf_set: ConfidenceSet,
    x: np.ndarray,
    outcome: str,
    pixel_id: int | None = None,
) -> ConfidenceSet:
    """Append one example: labeled -> +1, refused or masked -> -1."""
    if outcome not in OUTCOMES:
        raise ValueError(f"unknown outcome {outcome!r}")
    y = 1 if outcome == OUTCOME_LABELED else -1
    conf_set.examples.append(ConfExample(np.asarray(x, dtype=np.float64), y, pixel_id))
    if y > 0:
        conf_set.positives += 1
    else:
        conf_set.negatives += 1
    return conf_set


@dataclass
class ConfidenceModel:
    svm: BinarySvm
    calibration: PlattCalibration
    trained_at_iteration: int
    sigma: float

    def probabilities(self, candidates: np.ndarray) -> np.ndarray:
        return self.calibration.probability(self.svm.decision(candidates))


def _held_out_decisions(
    x: np.ndarray, y: np.ndarray, params: KernelParams, folds: int, seed: int, tol: float
) -> np.ndarray:
    """Decision value per sample from a model that never saw it.

    Calibrating on these (rather than on the final model's own training
    decisions, which saturate at +-1) keeps the probabilities honest about
    generalization; folds whose training half is single-class fall back to
    the full-model decision for their samples.
    """
    decisions = np.zeros(len(y))
    assignment = stratified_folds(y, folds, seed)
    fallback = None
    for fold in range(folds):
        val = assignment == fold
        if not val.any():
            continue
        train = ~val
        if len(np.unique(y[train])) < 2:
            if fallback is None:
                fallback = train_binary_smo(x, y, params, tol=tol)
            decisions[val] = fallback.decision(x[val])
            continue
        machine = train_binary_smo(x[train], y[train], params, tol=tol)
        decisions[val] = machine.decision(x[val])
    return decisions


def train_confidence_model(
    conf_set: ConfidenceSet,
    grid: tuple[float, ...] = SIGMA_GRID,
    folds: int = 4,
    seed: int = 0,
    C: float = 100.0,
    tol: float = 1e-3,
    iteration: int = 0,
) -> ConfidenceModel:
    """CV-selected bandwidth, then a sigmoid fitted on held-out fold decisions."""
    if conf_set.positives == 0 or conf_set.negatives == 0:
        raise ConfidenceUntrainable(
            "confidence model untrainable: needs both a positive and a negative example"
        )
    x = conf_set.features()
    y = conf_set.labels()
    sigma = select_sigma_cv(x, y, grid=grid, folds=folds, seed=seed, C=C, tol=tol)
    params = KernelParams(sigma=sigma, C=C)
    svm = train_binary_smo(x, y, params, tol=tol)
    held_out = _held_out_decisions(x, y, params, folds, seed, tol)
    calibration = platt_calibrate(held_out, y)
    return ConfidenceModel(
        svm=svm, calibration=calibration, trained_at_iteration=iteration, sigma=sigma
    )


def confidence_map(model: ConfidenceModel, candidates: np.ndarray) -> np.ndarray:
    """Probability of "labeler can answer" per candidate; values in (0, 1)."""
    return model.probabilities(candidates)


def passes_mask(p: float, gate: GateConfig) -> bool:
    """Strictly greater than the threshold; equality stays hidden."""
    return p > gate.theta
