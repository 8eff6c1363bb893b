"""Candidate ranking heuristics.

Three ways to order the unlabeled pool: margin between the two most
confident one-against-all decision values (lower margin = more desirable),
normalized vote entropy of a bagged committee (higher = more desirable),
and plain random sampling as the baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .rng import derive_seed
from .svm import KernelParams, OaaModel, train_one_against_all

MCLU = "mclu"
NEQB = "neqb"
RS = "rs"
HEURISTICS = (MCLU, NEQB, RS)


class HeuristicError(RuntimeError):
    pass


@dataclass
class HeuristicScores:
    """One score per candidate. Orientation depends on the heuristic:
    lower is more desirable for "mclu", higher for "neqb", ignored for "rs".
    """

    candidate_ids: np.ndarray
    scores: np.ndarray
    heuristic: str

    def __post_init__(self) -> None:
        if self.heuristic not in HEURISTICS:
            raise HeuristicError(f"unknown heuristic {self.heuristic!r}")
        if len(self.candidate_ids) != len(self.scores):
            raise HeuristicError("one score per candidate required")
        if len(self.scores) and not np.isfinite(self.scores).all():
            raise HeuristicError("scores must be finite")


def mclu_margins(decision_values: np.ndarray) -> np.ndarray:
    """Margin between the two largest |decision| entries per row."""
    magnitudes = np.abs(np.asarray(decision_values, dtype=np.float64))
    if magnitudes.ndim != 2 or magnitudes.shape[1] < 2:
        raise HeuristicError("need decision values for at least 2 classes")
    part = np.partition(magnitudes, -2, axis=1)
    return part[:, -1] - part[:, -2]


def score_mclu(model: OaaModel, candidates: np.ndarray, candidate_ids: np.ndarray) -> HeuristicScores:
    decisions = model.decision_values(candidates)
    return HeuristicScores(
        candidate_ids=np.asarray(candidate_ids),
        scores=mclu_margins(decisions),
        heuristic=MCLU,
    )


def score_random(candidate_ids: np.ndarray) -> HeuristicScores:
    ids = np.asarray(candidate_ids)
    return HeuristicScores(candidate_ids=ids, scores=np.zeros(len(ids)), heuristic=RS)


@dataclass
class Committee:
    """Bagged one-against-all models over random training subsets."""

    members: list[OaaModel]
    fraction: float
    seed: int

    @property
    def size(self) -> int:
        return len(self.members)


def train_bagged_committee(
    x: np.ndarray,
    y: np.ndarray,
    k: int,
    fraction: float,
    omega: int,
    params: KernelParams,
    seed: int,
    tol: float = 1e-3,
    redraw_cap: int = 20,
) -> Committee:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64).ravel()
    if k < 2:
        raise HeuristicError("committee needs at least 2 members")
    if not (0 < fraction <= 1):
        raise HeuristicError("fraction must be in (0, 1]")
    n = len(y)
    draw = math.ceil(fraction * n)
    if draw < 2:
        raise HeuristicError("fraction leaves fewer than 2 samples per member")

    members: list[OaaModel] = []
    for m in range(k):
        rng = np.random.default_rng(derive_seed(seed, "committee-member", m))
        for attempt in range(redraw_cap + 1):
            idx = rng.choice(n, size=draw, replace=False)
            if len(np.unique(y[idx])) >= 2:
                break
        else:
            raise HeuristicError(
                f"member {m}: redraw cap exceeded; class balance too degenerate"
            )
        members.append(train_one_against_all(x[idx], y[idx], omega, params, tol=tol))
    return Committee(members=members, fraction=fraction, seed=seed)


def committee_votes(committee: Committee, candidates: np.ndarray) -> np.ndarray:
    """Vote counts per candidate, shape (n_candidates, omega); columns are classes 1..omega."""
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    omega = committee.members[0].omega
    counts = np.zeros((candidates.shape[0], omega), dtype=np.int64)
    rows = np.arange(candidates.shape[0])
    for member in committee.members:
        counts[rows, member.predict(candidates) - 1] += 1
    return counts


def entropy_scores_from_votes(counts: np.ndarray) -> np.ndarray:
    """Normalized vote entropy per row, in [0, 1]; unanimous rows score 0.

    Counts are sorted descending before summation so that identical vote
    partitions produce bitwise-identical scores regardless of which classes
    received the votes (keeps the quantized score set exact).
    """
    counts = np.asarray(counts, dtype=np.float64)
    k = counts.sum(axis=1)
    ordered = np.sort(counts, axis=1)[:, ::-1]
    p = ordered / k[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(ordered > 0, p * np.log(p), 0.0)
    h = -plogp.sum(axis=1)
    n_voted = (ordered > 0).sum(axis=1)
    norm = np.log(np.maximum(n_voted, 2))
    return np.where(n_voted > 1, h / norm, 0.0)


def score_neqb(
    committee: Committee, candidates: np.ndarray, candidate_ids: np.ndarray
) -> HeuristicScores:
    counts = committee_votes(committee, candidates)
    return HeuristicScores(
        candidate_ids=np.asarray(candidate_ids),
        scores=entropy_scores_from_votes(counts),
        heuristic=NEQB,
    )


def rank_candidates(scores: HeuristicScores, seed: int) -> np.ndarray:
    """Candidates ordered most-desirable first; exact-tie groups are shuffled.

    A seeded random permutation acts as the secondary sort key, which both
    shuffles tie groups and, for random sampling, is the entire order.
    """
    n = len(scores.candidate_ids)
    rng = np.random.default_rng(seed)
    tiebreak = rng.permutation(n)
    if scores.heuristic == RS:
        order = np.argsort(tiebreak, kind="stable")
    elif scores.heuristic == MCLU:
        order = np.lexsort((tiebreak, scores.scores))
    else:
        order = np.lexsort((tiebreak, -scores.scores))
    return np.asarray(scores.candidate_ids)[order]


@lru_cache(maxsize=None)
def _partitions_exact(n: int, k: int) -> int:
    """Number of partitions of n into exactly k parts."""
    if k < 1 or n < k:
        return 0
    if k == 1 or k == n:
        return 1
    return _partitions_exact(n - 1, k - 1) + _partitions_exact(n - k, k)


def count_entropy_levels(n: int, max_classes: int) -> int:
    """Distinct vote partitions an n-member committee can form over at most
    ``max_classes`` predicted classes — an upper bound on the number of
    distinct entropy values the committee can produce.
    """
    if n < 1 or max_classes < 1:
        raise ValueError("need n >= 1 and max_classes >= 1")
    return sum(_partitions_exact(n, k) for k in range(1, max_classes + 1))
