"""The query loop.

Each iteration: train the multiclass classifier on the labeled set, train
the confidence model on the outcome set (from the second iteration on),
score and rank the candidate pool, then walk the ranking assembling a batch
— masking low-confidence candidates, recording refusals, and stopping once
the batch holds ``batch_size`` valid labels. Sessions are deterministic
given their seeds and persist to a checksummed snapshot.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .confidence import (
    ConfidenceModel,
    ConfidenceSet,
    ConfidenceUntrainable,
    GateConfig,
    OUTCOME_LABELED,
    OUTCOME_MASKED,
    OUTCOME_REFUSED,
    passes_mask,
    record_confidence_example,
    train_confidence_model,
)
from .features import FeatureStack
from .heuristics import (
    MCLU,
    NEQB,
    RS,
    HEURISTICS,
    HeuristicScores,
    mclu_margins,
    entropy_scores_from_votes,
    rank_candidates,
    score_random,
    train_bagged_committee,
    committee_votes,
)
from .oracle import OracleFn
from .raster import LabelMap
from .rng import derive_rng, derive_seed
from .svm import (
    SIGMA_GRID,
    KernelParams,
    OaaModel,
    median_sigma,
    select_sigma_cv,
    train_one_against_all,
)

logger = logging.getLogger(__name__)

SNAPSHOT_MAGIC = "QGSNAP"
SNAPSHOT_VERSION = 1


class EngineError(RuntimeError):
    pass


class SnapshotError(EngineError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    heuristic: str = MCLU
    gated: bool = True
    batch_size: int = 20
    theta: float = 0.6
    seeds_per_class: int = 5
    committee_size: int = 10
    committee_fraction: float = 0.75
    max_iterations: int = 10
    max_total_queries: int | None = None
    candidate_subsample: int = 0  # 0 = score the full pool
    svm_c: float = 100.0
    confidence_c: float | None = None  # None: same C as the main classifier
    smo_tol: float = 1e-3
    sigma_grid: tuple[float, ...] = SIGMA_GRID
    cv_folds: int = 4
    cv_main: bool = True  # re-select the main classifier bandwidth per iteration
    mask_negatives: bool = True  # record masked candidates as negatives
    median_sample: int = 1000

    def __post_init__(self) -> None:
        if self.heuristic not in HEURISTICS:
            raise ValueError(f"unknown heuristic {self.heuristic!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0.0 < self.theta < 1.0):
            raise ValueError("theta must be in (0, 1)")
        if self.seeds_per_class < 1:
            raise ValueError("seeds_per_class must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma_grid"] = list(self.sigma_grid)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        data = dict(data)
        if "sigma_grid" in data:
            data["sigma_grid"] = tuple(float(s) for s in data["sigma_grid"])
        if "max_total_queries" in data and data["max_total_queries"] is not None:
            data["max_total_queries"] = int(data["max_total_queries"])
        return cls(**data)


@dataclass
class QueryRecord:
    iteration: int
    seq: int  # logical timestamp: global event counter
    order: int  # position within the iteration's walk
    pixel_id: int
    score: float
    confidence: float
    outcome: str
    label: int = 0


@dataclass
class IterationStats:
    iteration: int
    sigma_main: float
    sigma_confidence: float | None
    presented: int
    labeled: int
    refused: int
    masked: int
    pool_before: int
    partial: bool


@dataclass
class Session:
    config: EngineConfig
    omega: int
    width: int
    height: int
    feature_matrix: np.ndarray  # (n_pixels, dim) float64
    epsilon: int = 1
    labeled_ids: list[int] = field(default_factory=list)
    labeled_classes: list[int] = field(default_factory=list)
    conf_set: ConfidenceSet = field(default_factory=ConfidenceSet)
    pool_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    excluded: set[int] = field(default_factory=set)  # refused: never presented again
    masked: set[int] = field(default_factory=set)  # already hold a masked negative
    query_log: list[QueryRecord] = field(default_factory=list)
    history: list[IterationStats] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    seed: int = 0
    seed_count: int = 0
    sigma_median: float = 0.0
    artifacts: dict = field(default_factory=dict)  # rebuilt per iteration, not persisted

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    @property
    def effort(self) -> int:
        """Queries actually presented to the oracle, plus the initial seeds.

        Masked candidates never reach the oracle and cost nothing.
        """
        presented = sum(
            1 for r in self.query_log if r.outcome in (OUTCOME_LABELED, OUTCOME_REFUSED)
        )
        return self.seed_count + presented

    @property
    def total_presented(self) -> int:
        return self.effort - self.seed_count

    def stopping_met(self) -> bool:
        if self.epsilon > self.config.max_iterations:
            return True
        if (
            self.config.max_total_queries is not None
            and self.total_presented >= self.config.max_total_queries
        ):
            return True
        return len(self.pool_ids) == 0

    def labeled_features(self) -> np.ndarray:
        return self.feature_matrix[np.asarray(self.labeled_ids, dtype=np.int64)]

    def check_invariants(self) -> None:
        labeled = set(self.labeled_ids)
        pool = set(int(p) for p in self.pool_ids)
        if labeled & pool:
            raise EngineError("labeled set and candidate pool overlap")
        if len(self.labeled_ids) > len(self.conf_set):
            raise EngineError("labeled set larger than confidence set")
        by_outcome = {OUTCOME_LABELED: 0, OUTCOME_REFUSED: 0, OUTCOME_MASKED: 0}
        for r in self.query_log:
            by_outcome[r.outcome] += 1
        if sum(by_outcome.values()) != len(self.query_log):
            raise EngineError("query log outcome counts inconsistent")


def init_session(
    features: FeatureStack,
    config: EngineConfig,
    ground_truth: LabelMap | None = None,
    seeds: list[tuple[int, int]] | None = None,
    seed: int = 0,
) -> Session:
    """Start a session: seed labels in, everything else in the candidate pool.

    Simulated mode draws ``seeds_per_class`` stratified seed pixels from the
    ground truth; interactive mode passes explicit ``seeds`` as
    (pixel_id, class) pairs collected from the labeler.
    """
    matrix = features.matrix()
    n_pixels = features.height * features.width

    if seeds is None:
        if ground_truth is None:
            raise EngineError("need either ground truth or explicit seed pixels")
        omega = ground_truth.omega
        rng = derive_rng(seed, "seed-draw")
        flat = ground_truth.labels.ravel()
        seeds = []
        for cls in range(1, omega + 1):
            candidates = np.flatnonzero(flat == cls)
            if len(candidates) == 0:
                raise EngineError(f"class {cls} has zero ground-truth pixels")
            if len(candidates) < config.seeds_per_class:
                raise EngineError(
                    f"class {cls} has only {len(candidates)} pixels; "
                    f"cannot draw {config.seeds_per_class} seeds"
                )
            for pid in rng.choice(candidates, size=config.seeds_per_class, replace=False):
                seeds.append((int(pid), cls))
    else:
        if ground_truth is not None:
            omega = ground_truth.omega
        else:
            omega = max(cls for _, cls in seeds)

    if len({pid for pid, _ in seeds}) != len(seeds):
        raise EngineError("duplicate seed pixels")

    session = Session(
        config=config,
        omega=omega,
        width=features.width,
        height=features.height,
        feature_matrix=matrix,
        seed=seed,
        seed_count=len(seeds),
    )
    for pid, cls in seeds:
        session.labeled_ids.append(pid)
        session.labeled_classes.append(cls)
        record_confidence_example(session.conf_set, matrix[pid], OUTCOME_LABELED, pid)
    taken = np.asarray(sorted(pid for pid, _ in seeds), dtype=np.int64)
    session.pool_ids = np.setdiff1d(np.arange(n_pixels, dtype=np.int64), taken)
    session.sigma_median = median_sigma(
        matrix, sample_size=config.median_sample, seed=derive_seed(seed, "median-sigma")
    )
    session.check_invariants()
    return session


def _train_main_model(session: Session) -> tuple[OaaModel, float]:
    cfg = session.config
    x = session.labeled_features()
    y = np.asarray(session.labeled_classes, dtype=np.int64)
    if cfg.cv_main and session.epsilon >= 2:
        sigma = select_sigma_cv(
            x,
            y,
            grid=cfg.sigma_grid,
            folds=cfg.cv_folds,
            seed=derive_seed(session.seed, "cv-main", session.epsilon),
            C=cfg.svm_c,
            tol=cfg.smo_tol,
        )
    else:
        sigma = session.sigma_median
    model = train_one_against_all(
        x, y, session.omega, KernelParams(sigma=sigma, C=cfg.svm_c), tol=cfg.smo_tol
    )
    return model, sigma


def _score_pool(
    session: Session, model: OaaModel, pool: np.ndarray, all_decisions: np.ndarray
) -> HeuristicScores:
    cfg = session.config
    if cfg.heuristic == RS:
        return score_random(pool)
    if cfg.heuristic == MCLU:
        return HeuristicScores(
            candidate_ids=pool,
            scores=mclu_margins(all_decisions[pool]),
            heuristic=MCLU,
        )
    committee = train_bagged_committee(
        session.labeled_features(),
        np.asarray(session.labeled_classes, dtype=np.int64),
        k=cfg.committee_size,
        fraction=cfg.committee_fraction,
        omega=session.omega,
        params=KernelParams(sigma=session.sigma_median, C=cfg.svm_c),
        seed=derive_seed(session.seed, "committee", session.epsilon),
        tol=cfg.smo_tol,
    )
    counts = committee_votes(committee, session.feature_matrix[pool])
    return HeuristicScores(
        candidate_ids=pool,
        scores=entropy_scores_from_votes(counts),
        heuristic=NEQB,
    )


def _confidence_probabilities(session: Session) -> tuple[np.ndarray, float | None]:
    """Probability per pixel that the labeler can answer; all-ones bypass
    while the gate is off, at the first iteration, or with a one-class set.
    """
    cfg = session.config
    if not cfg.gated or session.epsilon < 2:
        return np.ones(session.n_pixels), None
    try:
        model = train_confidence_model(
            session.conf_set,
            grid=cfg.sigma_grid,
            folds=cfg.cv_folds,
            seed=derive_seed(session.seed, "cv-confidence", session.epsilon),
            C=cfg.confidence_c if cfg.confidence_c is not None else cfg.svm_c,
            tol=cfg.smo_tol,
            iteration=session.epsilon,
        )
    except ConfidenceUntrainable:
        session.warnings.append(
            f"iteration {session.epsilon}: confidence set single-class, gate bypassed"
        )
        return np.ones(session.n_pixels), None
    session.artifacts["confidence_model"] = model
    return model.probabilities(session.feature_matrix), model.sigma


def assemble_batch(
    session: Session,
    ranking: np.ndarray,
    conf_probs: np.ndarray,
    scores_by_id: dict[int, float],
    oracle: OracleFn,
) -> list[tuple[int, int]]:
    """Walk the ranking until the batch holds ``batch_size`` valid labels.

    Refused pixels join the permanent exclusion set; low-confidence pixels
    are recorded as masked negatives (once each, ever) without reaching the
    oracle. Exhausting the ranking closes the iteration with a partial batch.
    """
    cfg = session.config
    gate = GateConfig(theta=cfg.theta)
    batch: list[tuple[int, int]] = []
    order = 0
    seq = len(session.query_log)
    for pid in ranking:
        pid = int(pid)
        if len(batch) >= cfg.batch_size:
            break
        if pid in session.excluded:
            continue
        p = float(conf_probs[pid])
        score = scores_by_id.get(pid, 0.0)
        if not passes_mask(p, gate):
            if pid in session.masked or not cfg.mask_negatives:
                continue
            record_confidence_example(
                session.conf_set, session.feature_matrix[pid], OUTCOME_MASKED, pid
            )
            session.masked.add(pid)
            order += 1
            seq += 1
            session.query_log.append(
                QueryRecord(
                    iteration=session.epsilon,
                    seq=seq,
                    order=order,
                    pixel_id=pid,
                    score=score,
                    confidence=p,
                    outcome=OUTCOME_MASKED,
                )
            )
            continue
        answer = oracle(pid)
        order += 1
        seq += 1
        if answer is None:
            record_confidence_example(
                session.conf_set, session.feature_matrix[pid], OUTCOME_REFUSED, pid
            )
            session.excluded.add(pid)
            session.query_log.append(
                QueryRecord(
                    iteration=session.epsilon,
                    seq=seq,
                    order=order,
                    pixel_id=pid,
                    score=score,
                    confidence=p,
                    outcome=OUTCOME_REFUSED,
                )
            )
        else:
            if not (1 <= answer <= session.omega):
                raise EngineError(f"oracle answered class {answer} outside 1..{session.omega}")
            record_confidence_example(
                session.conf_set, session.feature_matrix[pid], OUTCOME_LABELED, pid
            )
            batch.append((pid, int(answer)))
            session.query_log.append(
                QueryRecord(
                    iteration=session.epsilon,
                    seq=seq,
                    order=order,
                    pixel_id=pid,
                    score=score,
                    confidence=p,
                    outcome=OUTCOME_LABELED,
                    label=int(answer),
                )
            )
    return batch


def run_iteration(session: Session, oracle: OracleFn) -> Session:
    """One pass of the loop; all randomness is keyed by (seed, purpose, iteration)."""
    if session.stopping_met():
        raise EngineError("stopping rule already met")
    cfg = session.config
    eps = session.epsilon
    pool_before = len(session.pool_ids)

    model, sigma_main = _train_main_model(session)
    session.artifacts["model"] = model

    all_decisions = model.decision_values(session.feature_matrix)
    class_map = (all_decisions.argmax(axis=1) + 1).astype(np.uint16)
    session.artifacts["classification_map"] = class_map.reshape(
        session.height, session.width
    )

    pool = session.pool_ids
    if cfg.candidate_subsample and cfg.candidate_subsample < len(pool):
        rng = derive_rng(session.seed, "subsample", eps)
        pool = np.sort(rng.choice(pool, size=cfg.candidate_subsample, replace=False))

    scores = _score_pool(session, model, pool, all_decisions)
    ranking = rank_candidates(scores, derive_seed(session.seed, "rank", eps))
    scores_by_id = {
        int(pid): float(s) for pid, s in zip(scores.candidate_ids, scores.scores)
    }

    conf_probs, sigma_conf = _confidence_probabilities(session)
    session.artifacts["confidence_map"] = conf_probs.reshape(
        session.height, session.width
    )

    log_before = len(session.query_log)
    batch = assemble_batch(session, ranking, conf_probs, scores_by_id, oracle)
    new_records = session.query_log[log_before:]

    for pid, cls in batch:
        session.labeled_ids.append(pid)
        session.labeled_classes.append(cls)
    batch_ids = np.asarray(sorted(pid for pid, _ in batch), dtype=np.int64)
    session.pool_ids = np.setdiff1d(session.pool_ids, batch_ids)

    partial = len(batch) < cfg.batch_size
    if partial:
        session.warnings.append(
            f"iteration {eps}: ranking exhausted with {len(batch)}/{cfg.batch_size} labels"
        )
    session.history.append(
        IterationStats(
            iteration=eps,
            sigma_main=sigma_main,
            sigma_confidence=sigma_conf,
            presented=sum(1 for r in new_records if r.outcome != OUTCOME_MASKED),
            labeled=len(batch),
            refused=sum(1 for r in new_records if r.outcome == OUTCOME_REFUSED),
            masked=sum(1 for r in new_records if r.outcome == OUTCOME_MASKED),
            pool_before=pool_before,
            partial=partial,
        )
    )
    session.epsilon = eps + 1
    session.check_invariants()
    return session


def run_session(
    features: FeatureStack,
    config: EngineConfig,
    oracle: OracleFn,
    ground_truth: LabelMap | None = None,
    seed: int = 0,
    per_iteration=None,
) -> Session:
    """Headless driver: init, then iterate until the stopping rule is met."""
    session = init_session(features, config, ground_truth=ground_truth, seed=seed)
    while not session.stopping_met():
        run_iteration(session, oracle)
        if per_iteration is not None:
            per_iteration(session)
    return session


# ---------------------------------------------------------------------------
# Snapshot persistence
# ---------------------------------------------------------------------------


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    return {
        "dtype": a.dtype.str,
        "shape": list(a.shape),
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def _decode_array(spec: dict) -> np.ndarray:
    raw = base64.b64decode(spec["data"])
    return np.frombuffer(raw, dtype=np.dtype(spec["dtype"])).reshape(spec["shape"]).copy()


def persist_session(session: Session, path: str | Path) -> None:
    body = {
        "version": SNAPSHOT_VERSION,
        "config": session.config.to_dict(),
        "omega": session.omega,
        "width": session.width,
        "height": session.height,
        "epsilon": session.epsilon,
        "seed": session.seed,
        "seed_count": session.seed_count,
        "sigma_median": session.sigma_median,
        "feature_matrix": _encode_array(session.feature_matrix),
        "labeled_ids": session.labeled_ids,
        "labeled_classes": session.labeled_classes,
        "conf_examples": [
            {"pixel_id": e.pixel_id, "y": e.y} for e in session.conf_set.examples
        ],
        "pool_ids": _encode_array(session.pool_ids),
        "excluded": sorted(session.excluded),
        "masked": sorted(session.masked),
        "query_log": [asdict(r) for r in session.query_log],
        "history": [asdict(h) for h in session.history],
        "warnings": session.warnings,
    }
    payload = json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")
    checksum = hashlib.sha256(payload).hexdigest()
    header = f"{SNAPSHOT_MAGIC}{SNAPSHOT_VERSION} {checksum}\n".encode("ascii")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(header + payload)


def resume_session(path: str | Path) -> Session:
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise SnapshotError("truncated snapshot")
    header = raw[:newline].decode("ascii", errors="replace")
    payload = raw[newline + 1 :]
    if not header.startswith(SNAPSHOT_MAGIC):
        raise SnapshotError("not a session snapshot")
    magic, _, checksum = header.partition(" ")
    version = magic[len(SNAPSHOT_MAGIC) :]
    if version != str(SNAPSHOT_VERSION):
        raise SnapshotError(f"snapshot version {version!r} not supported")
    if hashlib.sha256(payload).hexdigest() != checksum:
        raise SnapshotError("checksum mismatch: snapshot corrupted")
    body = json.loads(payload.decode("utf-8"))

    matrix = _decode_array(body["feature_matrix"])
    session = Session(
        config=EngineConfig.from_dict(body["config"]),
        omega=body["omega"],
        width=body["width"],
        height=body["height"],
        feature_matrix=matrix,
        epsilon=body["epsilon"],
        seed=body["seed"],
        seed_count=body["seed_count"],
        sigma_median=body["sigma_median"],
        labeled_ids=[int(i) for i in body["labeled_ids"]],
        labeled_classes=[int(c) for c in body["labeled_classes"]],
        pool_ids=_decode_array(body["pool_ids"]).astype(np.int64),
        excluded=set(int(i) for i in body["excluded"]),
        masked=set(int(i) for i in body["masked"]),
        query_log=[QueryRecord(**r) for r in body["query_log"]],
        history=[IterationStats(**h) for h in body["history"]],
        warnings=list(body["warnings"]),
    )
    conf = ConfidenceSet()
    for entry in body["conf_examples"]:
        pid = entry["pixel_id"]
        outcome = OUTCOME_LABELED if entry["y"] > 0 else OUTCOME_REFUSED
        record_confidence_example(conf, matrix[pid], outcome, pid)
        conf.examples[-1].y = entry["y"]
    # record_confidence_example tallies refused for every negative; recompute
    # nothing further: positives/negatives depend only on the sign of y.
    session.conf_set = conf
    session.check_invariants()
    return session


def export_query_log_csv(session: Session, path: str | Path) -> None:
    """Query log as CSV: iteration, order, pixel_x, pixel_y, score, confidence, outcome, label."""
    lines = ["iteration,order,pixel_x,pixel_y,score,confidence,outcome,label"]
    for r in session.query_log:
        y, x = divmod(r.pixel_id, session.width)
        lines.append(
            f"{r.iteration},{r.order},{x},{y},{float(r.score)!r},"
            f"{float(r.confidence)!r},{r.outcome},{r.label}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
