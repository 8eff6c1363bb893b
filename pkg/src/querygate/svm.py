"""RBF-kernel SVM machinery.

Contains the binary dual solver (sequential minimal optimization with
maximal-violating-pair working sets), a one-against-all multiclass wrapper,
sigmoid probability calibration of decision values, and two bandwidth
selection rules: the median pairwise distance heuristic and stratified
cross-validation over a logarithmic grid.
"""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

# Wide default search grid for the kernel bandwidth: 9 log-spaced points.
SIGMA_GRID: tuple[float, ...] = tuple(float(s) for s in np.logspace(-1.0, 3.0, 9))

DEFAULT_C = 100.0
DEFAULT_TOL = 1e-3
DEFAULT_KERNEL_EVAL_CAP = 10_000_000


class SvmError(RuntimeError):
    pass


class SmoConvergenceError(SvmError):
    """Solver hit its work cap; carries best-so-far diagnostics."""

    def __init__(self, message: str, kkt_violation: float, objective: float, updates: int):
        super().__init__(
            f"{message} (kkt_violation={kkt_violation:.3e}, "
            f"objective={objective:.6e}, updates={updates})"
        )
        self.kkt_violation = kkt_violation
        self.objective = objective
        self.updates = updates


class CalibrationError(RuntimeError):
    """Sigmoid fit failed to decrease its objective; carries the iterate trace."""

    def __init__(self, message: str, trace: list[tuple[float, float, float]]):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class KernelParams:
    sigma: float
    C: float = DEFAULT_C

    def __post_init__(self) -> None:
        if not (self.sigma > 0):
            raise ValueError("sigma must be > 0")
        if not (self.C > 0):
            raise ValueError("C must be > 0")


def rbf_kernel(x: np.ndarray, z: np.ndarray, sigma: float) -> float:
    """exp(-||x-z||^2 / (2 sigma^2)); always in (0, 1] for finite inputs."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {z.shape}")
    if not (sigma > 0):
        raise ValueError("sigma must be > 0")
    d = x - z
    return float(np.exp(-(d @ d) / (2.0 * sigma * sigma)))


def rbf_matrix(a: np.ndarray, b: np.ndarray, sigma: float) -> np.ndarray:
    """Pairwise kernel block, shape (len(a), len(b)).

    Inputs are made contiguous so each row's value is bit-identical no
    matter how the candidate set was sliced or ordered.
    """
    a = np.ascontiguousarray(np.atleast_2d(np.asarray(a, dtype=np.float64)))
    b = np.ascontiguousarray(np.atleast_2d(np.asarray(b, dtype=np.float64)))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    sq = (
        (a * a).sum(axis=1)[:, None]
        + (b * b).sum(axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-sq / (2.0 * sigma * sigma))


def median_sigma(pool: np.ndarray, sample_size: int = 1000, seed: int = 0) -> float:
    """Median pairwise Euclidean distance over a seeded subsample of the pool."""
    pool = np.atleast_2d(np.asarray(pool, dtype=np.float64))
    n = pool.shape[0]
    if n < 2:
        raise ValueError("need at least 2 vectors")
    take = min(sample_size, n)
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=take, replace=False)
    sub = pool[np.sort(idx)]
    sq = (
        (sub * sub).sum(axis=1)[:, None]
        + (sub * sub).sum(axis=1)[None, :]
        - 2.0 * (sub @ sub.T)
    )
    np.maximum(sq, 0.0, out=sq)
    iu = np.triu_indices(take, k=1)
    dists = np.sqrt(sq[iu])
    med = float(np.median(dists))
    if med == 0.0:
        raise ValueError("zero bandwidth: sampled vectors are all identical")
    return med


class _KernelRowCache:
    """Kernel-row cache with a total evaluation budget.

    Rows live in a flat list while they all fit (the normal desk-scale
    case); an LRU ordered dict takes over only when the capacity is smaller
    than the training set.
    """

    def __init__(self, x: np.ndarray, sigma: float, capacity: int, budget: int):
        self.x = x
        self.sigma = sigma
        self.capacity = max(2, capacity)
        self.budget = budget
        self.evals = 0
        self._sq_norms = (x * x).sum(axis=1)
        n = x.shape[0]
        self._flat: list[np.ndarray | None] | None = (
            [None] * n if self.capacity >= n else None
        )
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()

    def _compute(self, i: int) -> np.ndarray:
        self.evals += len(self._sq_norms)
        if self.evals > self.budget:
            raise _BudgetExceeded()
        sq = self._sq_norms + self._sq_norms[i] - 2.0 * (self.x @ self.x[i])
        np.maximum(sq, 0.0, out=sq)
        row = np.exp(-sq / (2.0 * self.sigma * self.sigma))
        if not np.isfinite(row).all():
            raise SvmError("non-finite kernel values")
        return row

    def row(self, i: int) -> np.ndarray:
        if self._flat is not None:
            cached = self._flat[i]
            if cached is None:
                cached = self._compute(i)
                self._flat[i] = cached
            return cached
        cached = self._rows.get(i)
        if cached is not None:
            self._rows.move_to_end(i)
            return cached
        row = self._compute(i)
        self._rows[i] = row
        if len(self._rows) > self.capacity:
            self._rows.popitem(last=False)
        return row


class _BudgetExceeded(Exception):
    pass


@dataclass
class BinarySvm:
    """Trained binary machine: f(x) = sum_i coef_i k(sv_i, x) + bias.

    ``dual_coef`` holds alpha_i * y_i for the retained (alpha_i > 0)
    support vectors. A ``degenerate`` machine has no support vectors and a
    constant decision (used for classes absent from training).
    """

    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    params: KernelParams
    degenerate: bool = False
    kkt_violation: float = 0.0
    dual_objective: float = 0.0
    kernel_evals: int = 0
    objective_trace: list[float] = field(default_factory=list)

    def decision(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.degenerate or len(self.support_vectors) == 0:
            return np.full(x.shape[0], self.bias)
        k = rbf_matrix(x, self.support_vectors, self.params.sigma)
        # row-wise reduction (not GEMV) so a candidate's value does not
        # depend on how the batch was ordered
        return (k * self.dual_coef).sum(axis=1) + self.bias

    def decision_one(self, x: np.ndarray) -> float:
        return float(self.decision(np.atleast_2d(x))[0])


def train_binary_smo(
    x: np.ndarray,
    y: np.ndarray,
    params: KernelParams,
    tol: float = DEFAULT_TOL,
    max_kernel_evals: int = DEFAULT_KERNEL_EVAL_CAP,
    max_updates: int = 1_000_000,
    cache_rows: int = 4096,
    record_objective: bool = False,
) -> BinarySvm:
    """Solve the soft-margin dual by sequential minimal optimization.

    Working sets are maximal-KKT-violating pairs; the solver stops once the
    largest violation drops below ``tol``. Each analytic two-variable step
    increases the dual objective, so the trace (when recorded) is
    non-decreasing.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    n = len(y)
    if x.shape[0] != n:
        raise ValueError("sample/label count mismatch")
    if not np.isfinite(x).all():
        raise SvmError("non-finite kernel values: training samples are not finite")
    present = set(np.unique(y))
    if not present <= {-1.0, 1.0}:
        raise ValueError("labels must be +1/-1")
    if present != {-1.0, 1.0}:
        raise ValueError("both labels must be present")
    if not (tol > 0):
        raise ValueError("tol must be > 0")

    C = params.C
    cache = _KernelRowCache(x, params.sigma, cache_rows, max_kernel_evals)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the minimization form at alpha = 0

    def objective() -> float:
        # W(alpha) = sum(alpha) - 0.5 alpha'Q alpha, via Q alpha = grad + 1.
        return float(0.5 * (alpha.sum() - alpha @ grad))

    trace: list[float] = []
    kkt = math.inf
    updates = 0
    converged = False
    snap = 1e-12
    positive = y > 0
    # Masks of coordinates movable upward/downward along y; kept incrementally
    # (with their complements and counts) since an update touches only two
    # coordinates.
    up = positive.copy()  # alpha = 0 everywhere: positives can rise
    low = ~positive
    not_up = ~up
    not_low = ~low
    up_count = int(up.sum())
    low_count = int(low.sum())

    def refresh_masks(t: int) -> None:
        nonlocal up_count, low_count
        if positive[t]:
            new_up = alpha[t] < C
            new_low = alpha[t] > 0
        else:
            new_up = alpha[t] > 0
            new_low = alpha[t] < C
        up_count += int(new_up) - int(up[t])
        low_count += int(new_low) - int(low[t])
        up[t] = new_up
        not_up[t] = not new_up
        low[t] = new_low
        not_low[t] = not new_low

    neg_yg = np.empty(n)
    sel = np.empty(n)
    tmp = np.empty(n)
    try:
        while updates < max_updates:
            np.multiply(y, grad, out=neg_yg)
            np.negative(neg_yg, out=neg_yg)
            if up_count == 0 or low_count == 0:
                kkt = 0.0
                converged = True
                break
            np.copyto(sel, neg_yg)
            sel[not_up] = -np.inf
            i = int(sel.argmax())
            np.copyto(sel, neg_yg)
            sel[not_low] = np.inf
            j = int(sel.argmin())
            m_up = neg_yg[i]
            m_low = neg_yg[j]
            kkt = m_up - m_low
            if kkt < tol:
                converged = True
                break

            ki = cache.row(i)
            kj = cache.row(j)
            quad = ki[i] + kj[j] - 2.0 * ki[j]
            if quad <= 0:
                quad = 1e-12
            step = (m_up - m_low) / quad
            # Box limits along the feasible direction (alpha_i += y_i t, alpha_j -= y_j t).
            hi_i = C - alpha[i] if y[i] > 0 else alpha[i]
            hi_j = alpha[j] if y[j] > 0 else C - alpha[j]
            step = min(step, hi_i, hi_j)
            if step <= 0:
                converged = True
                break
            alpha[i] += y[i] * step
            alpha[j] -= y[j] * step
            for t in (i, j):
                if alpha[t] < snap:
                    alpha[t] = 0.0
                elif alpha[t] > C - snap:
                    alpha[t] = C
                refresh_masks(t)
            np.subtract(ki, kj, out=tmp)
            np.multiply(tmp, y, out=tmp)
            tmp *= step
            grad += tmp
            updates += 1
            if record_objective:
                trace.append(objective())
    except _BudgetExceeded:
        raise SmoConvergenceError(
            "kernel evaluation budget exhausted", kkt, objective(), updates
        ) from None

    if not converged:
        raise SmoConvergenceError("update cap reached", kkt, objective(), updates)

    neg_yg = -(y * grad)
    free = (alpha > 0) & (alpha < C)
    if free.any():
        bias = float(neg_yg[free].mean())
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        hi = neg_yg[up].max() if up.any() else 0.0
        lo = neg_yg[low].min() if low.any() else 0.0
        bias = float((hi + lo) / 2.0)

    keep = alpha > 0
    return BinarySvm(
        support_vectors=x[keep].copy(),
        dual_coef=(alpha * y)[keep].copy(),
        bias=bias,
        params=params,
        kkt_violation=float(max(kkt, 0.0)),
        dual_objective=objective(),
        kernel_evals=cache.evals,
        objective_trace=trace,
    )


@dataclass
class OaaModel:
    """One machine per class; prediction is the argmax of decision values."""

    machines: list[BinarySvm]
    classes: list[int]
    absent: list[int] = field(default_factory=list)

    @property
    def omega(self) -> int:
        return len(self.classes)

    def decision_values(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.column_stack([m.decision(x) for m in self.machines])

    def predict(self, x: np.ndarray) -> np.ndarray:
        # argmax returns the first maximum: exact ties go to the lowest class.
        return np.asarray(self.classes)[self.decision_values(x).argmax(axis=1)]


def binary_svm_to_dict(machine: BinarySvm) -> dict:
    """Self-describing record: support vectors, coefficients, bias, sigma, C."""
    return {
        "support_vectors": machine.support_vectors.tolist(),
        "dual_coef": machine.dual_coef.tolist(),
        "bias": machine.bias,
        "sigma": machine.params.sigma,
        "C": machine.params.C,
        "degenerate": machine.degenerate,
    }


def binary_svm_from_dict(record: dict) -> BinarySvm:
    return BinarySvm(
        support_vectors=np.asarray(record["support_vectors"], dtype=np.float64),
        dual_coef=np.asarray(record["dual_coef"], dtype=np.float64),
        bias=float(record["bias"]),
        params=KernelParams(sigma=float(record["sigma"]), C=float(record["C"])),
        degenerate=bool(record["degenerate"]),
    )


def oaa_model_to_dict(model: OaaModel, feature_ref: str | None = None) -> dict:
    return {
        "classes": model.classes,
        "absent": model.absent,
        "machines": [binary_svm_to_dict(m) for m in model.machines],
        "feature_ref": feature_ref,
    }


def oaa_model_from_dict(record: dict) -> OaaModel:
    return OaaModel(
        machines=[binary_svm_from_dict(m) for m in record["machines"]],
        classes=[int(c) for c in record["classes"]],
        absent=[int(c) for c in record.get("absent", [])],
    )


def train_one_against_all(
    x: np.ndarray,
    y: np.ndarray,
    omega: int,
    params: KernelParams,
    tol: float = DEFAULT_TOL,
) -> OaaModel:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64).ravel()
    if omega < 2:
        raise ValueError("need at least 2 classes")
    present = set(int(c) for c in np.unique(y))
    if len(present) < 2:
        raise SvmError("fewer than 2 distinct classes present")
    machines: list[BinarySvm] = []
    absent: list[int] = []
    for cls in range(1, omega + 1):
        if cls not in present:
            absent.append(cls)
            machines.append(
                BinarySvm(
                    support_vectors=np.empty((0, x.shape[1])),
                    dual_coef=np.empty(0),
                    bias=-1.0,
                    params=params,
                    degenerate=True,
                )
            )
            continue
        binary = np.where(y == cls, 1.0, -1.0)
        machines.append(train_binary_smo(x, binary, params, tol=tol))
    if absent:
        logger.warning("classes absent from training set: %s", absent)
    return OaaModel(machines=machines, classes=list(range(1, omega + 1)), absent=absent)


@dataclass(frozen=True)
class PlattCalibration:
    """Sigmoid map from decision value to probability: 1/(1+exp(A f + B))."""

    A: float
    B: float
    objective: float = 0.0

    def probability(self, decisions: np.ndarray) -> np.ndarray:
        f = np.asarray(decisions, dtype=np.float64)
        z = self.A * f + self.B
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = np.exp(-z[pos]) / (1.0 + np.exp(-z[pos]))
        out[~pos] = 1.0 / (1.0 + np.exp(z[~pos]))
        return out


def _platt_objective(decisions: np.ndarray, targets: np.ndarray, a: float, b: float) -> float:
    # Cross-entropy against the smoothed targets, in the overflow-safe form.
    z = a * decisions + b
    pos = z >= 0
    obj = np.empty_like(z)
    obj[pos] = targets[pos] * z[pos] + np.log1p(np.exp(-z[pos]))
    obj[~pos] = (targets[~pos] - 1.0) * z[~pos] + np.log1p(np.exp(z[~pos]))
    return float(obj.sum())


def platt_calibrate(
    decisions: np.ndarray,
    labels: np.ndarray,
    max_iter: int = 100,
    min_step: float = 1e-10,
    ridge: float = 1e-12,
) -> PlattCalibration:
    """Fit the sigmoid by damped Newton on the regularized log-likelihood.

    Targets are smoothed counts: (N+ + 1)/(N+ + 2) for positives and
    1/(N- + 2) for negatives. When decision values correlate positively
    with the +1 labels, the fitted slope A is negative.
    """
    f = np.asarray(decisions, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if len(f) != len(y):
        raise ValueError("decision/label count mismatch")
    if len(f) < 4:
        raise ValueError("need at least 4 samples")
    n_pos = int((y > 0).sum())
    n_neg = int((y < 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both labels must be present")

    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    t = np.where(y > 0, hi, lo)

    a = 0.0
    b = math.log((n_neg + 1.0) / (n_pos + 1.0))
    fval = _platt_objective(f, t, a, b)
    trace: list[tuple[float, float, float]] = [(a, b, fval)]

    for _ in range(max_iter):
        z = a * f + b
        p = np.empty_like(z)
        pos = z >= 0
        p[pos] = np.exp(-z[pos]) / (1.0 + np.exp(-z[pos]))
        p[~pos] = 1.0 / (1.0 + np.exp(z[~pos]))
        w = p * (1.0 - p)
        h11 = float((f * f * w).sum()) + ridge
        h22 = float(w.sum()) + ridge
        h21 = float((f * w).sum())
        d = t - p
        g1 = float((f * d).sum())
        g2 = float(d.sum())
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db

        stepsize = 1.0
        improved = False
        while stepsize >= min_step:
            na, nb = a + stepsize * da, b + stepsize * db
            nf = _platt_objective(f, t, na, nb)
            if nf < fval + 1e-4 * stepsize * gd:
                a, b, fval = na, nb, nf
                trace.append((a, b, fval))
                improved = True
                break
            stepsize /= 2.0
        if not improved:
            raise CalibrationError(
                "line search failed to decrease the calibration objective", trace
            )

    return PlattCalibration(A=a, B=b, objective=fval)


def stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Seeded stratified fold assignment; returns a fold index per sample.

    Classes with fewer members than folds degrade to leave-one-out for those
    members (each lands in its own fold) with a warning.
    """
    y = np.asarray(y).ravel()
    rng = np.random.default_rng(seed)
    assignment = np.zeros(len(y), dtype=np.int64)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        if len(idx) < folds:
            logger.warning(
                "class %s has %d members for %d folds; degrades to leave-one-out",
                cls, len(idx), folds,
            )
        perm = rng.permutation(idx)
        assignment[perm] = np.arange(len(perm)) % folds
    return assignment


def select_sigma_cv(
    x: np.ndarray,
    y: np.ndarray,
    grid: tuple[float, ...] = SIGMA_GRID,
    folds: int = 4,
    seed: int = 0,
    C: float = DEFAULT_C,
    tol: float = DEFAULT_TOL,
) -> float:
    """Bandwidth with the best mean fold accuracy; ties go to the larger sigma."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y).ravel()
    if len(grid) == 0:
        raise ValueError("sigma grid is empty")
    if len(grid) == 1:
        return float(grid[0])
    if len(y) < folds:
        raise ValueError("not enough samples for the fold count")

    assignment = stratified_folds(y, folds, seed)
    classes = np.unique(y)
    binary = set(int(c) for c in classes) == {-1, 1}

    best_sigma = float(grid[0])
    best_acc = -1.0
    for sigma in sorted(float(s) for s in grid):
        params = KernelParams(sigma=sigma, C=C)
        accs = []
        for fold in range(folds):
            val = assignment == fold
            train = ~val
            if not val.any():
                continue
            if len(np.unique(y[train])) < 2:
                continue
            if binary:
                machine = train_binary_smo(x[train], y[train], params, tol=tol)
                pred = np.where(machine.decision(x[val]) >= 0, 1, -1)
            else:
                model = train_one_against_all(
                    x[train], y[train], omega=int(classes.max()), params=params, tol=tol
                )
                pred = model.predict(x[val])
            accs.append(float((pred == y[val]).mean()))
        mean_acc = float(np.mean(accs)) if accs else 0.0
        if mean_acc >= best_acc:
            best_acc = mean_acc
            best_sigma = sigma
    return best_sigma
