"""Label oracles.

An oracle maps a queried pixel to either a class label or ``None``, the
"unknown" answer signalling a bad state. Three flavors: a perfect
ground-truth lookup, a simulated fallible labeler that refuses impure
neighborhoods and occasionally anything at all, and a thread-safe bridge
that defers each query to a human via the HTTP service.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .raster import LabelMap
from .rng import derive_seed

# An oracle answer: a class index in 1..omega, or None for "unknown".
OracleAnswer = int | None

# Engine-facing oracle: pixel id (row * width + col) -> answer.
OracleFn = Callable[[int], OracleAnswer]

PERSONAS: dict[str, dict] = {
    "trained_analyst": {"window": 1, "purity": 1.0, "refusal": 0.05},
    "novice": {"window": 1, "purity": 0.8, "refusal": 0.15},
}


class OracleError(RuntimeError):
    pass


class StaleQueryError(OracleError):
    """Answer for a pixel that is not the currently presented query."""


class DuplicateAnswerError(OracleError):
    """Second answer for an already-answered query."""


def _check_bounds(labels: LabelMap, x: int, y: int) -> None:
    if not (0 <= x < labels.width and 0 <= y < labels.height):
        raise OracleError(f"pixel ({x}, {y}) out of bounds")


def answer_ground_truth(labels: LabelMap, x: int, y: int) -> OracleAnswer:
    """The reference label, or unknown where the map is unlabeled."""
    _check_bounds(labels, x, y)
    value = int(labels.labels[y, x])
    return value if value > 0 else None


@dataclass(frozen=True)
class FallibleOracleConfig:
    """Simulated labeler: refuses pixels whose neighborhood is impure.

    ``window`` is the half-width of the inspected square, ``purity`` the
    minimum modal-label fraction among labeled neighbors, ``refusal`` an
    extra per-pixel refusal probability drawn from a stream keyed by
    (seed, pixel), so outcomes do not depend on query order.
    """

    window: int = 1
    purity: float = 1.0
    refusal: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.window < 0:
            raise ValueError("window radius must be >= 0")
        if not (0.0 < self.purity <= 1.0):
            raise ValueError("purity must be in (0, 1]")
        if not (0.0 <= self.refusal < 1.0):
            raise ValueError("refusal probability must be in [0, 1)")

    @classmethod
    def persona(cls, name: str, seed: int = 0) -> "FallibleOracleConfig":
        if name not in PERSONAS:
            raise ValueError(f"unknown persona {name!r}; know {sorted(PERSONAS)}")
        return cls(seed=seed, **PERSONAS[name])


def answer_fallible(
    labels: LabelMap, x: int, y: int, config: FallibleOracleConfig
) -> OracleAnswer:
    _check_bounds(labels, x, y)
    own = int(labels.labels[y, x])
    if own == 0:
        return None

    w = config.window
    block = labels.labels[
        max(0, y - w) : min(labels.height, y + w + 1),
        max(0, x - w) : min(labels.width, x + w + 1),
    ]
    labeled = block[block > 0]
    modal = int(np.bincount(labeled).max())
    if modal / labeled.size < config.purity:
        return None

    if config.refusal > 0.0:
        pixel_id = y * labels.width + x
        rng = np.random.default_rng(derive_seed(config.seed, "fallible", pixel_id))
        if rng.random() < config.refusal:
            return None
    return own


def make_ground_truth_oracle(labels: LabelMap) -> OracleFn:
    def oracle(pixel_id: int) -> OracleAnswer:
        y, x = divmod(pixel_id, labels.width)
        return answer_ground_truth(labels, x, y)

    return oracle


def make_fallible_oracle(labels: LabelMap, config: FallibleOracleConfig) -> OracleFn:
    def oracle(pixel_id: int) -> OracleAnswer:
        y, x = divmod(pixel_id, labels.width)
        return answer_fallible(labels, x, y, config)

    return oracle


class InteractiveBridge:
    """Serializes one outstanding query between an engine thread and a UI.

    The engine calls :meth:`ask` and blocks; the service forwards the human's
    answer through :meth:`submit` exactly once per presented query.
    """

    def __init__(self, timeout: float | None = None):
        self._cond = threading.Condition()
        self._current: int | None = None
        self._answer: OracleAnswer = None
        self._answered = False
        self._last_answered: int | None = None
        self._closed = False
        self._timeout = timeout

    @property
    def current_query(self) -> int | None:
        with self._cond:
            return self._current

    def ask(self, pixel_id: int) -> OracleAnswer:
        """Engine side: present a query and wait for its answer."""
        with self._cond:
            if self._closed:
                raise OracleError("bridge closed")
            self._current = pixel_id
            self._answered = False
            self._cond.notify_all()
            while not self._answered and not self._closed:
                if not self._cond.wait(timeout=self._timeout):
                    raise OracleError(f"timed out waiting for answer to {pixel_id}")
            if self._closed and not self._answered:
                raise OracleError("bridge closed")
            self._current = None
            self._last_answered = pixel_id
            return self._answer

    def submit(self, pixel_id: int, answer: OracleAnswer) -> None:
        """UI side: forward an answer for the currently presented query."""
        with self._cond:
            if self._current is None:
                if pixel_id == self._last_answered:
                    raise DuplicateAnswerError(
                        f"pixel {pixel_id} was already answered"
                    )
                raise StaleQueryError(f"no query outstanding for pixel {pixel_id}")
            if pixel_id != self._current:
                raise StaleQueryError(
                    f"pixel {pixel_id} is not the current query {self._current}"
                )
            if self._answered:
                raise DuplicateAnswerError(f"pixel {pixel_id} was already answered")
            self._answer = answer
            self._answered = True
            self._cond.notify_all()

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()
