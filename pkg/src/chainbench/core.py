"""Domain types shared by every learner.

Action indices are 0-based throughout the package: action ``k`` of an
:class:`ActionGrid` has value ``offset + k * step`` for ``k = 0..count-1``.
"""

from __future__ import annotations

import contextlib
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

PROB_ATOL = 1e-9
REGULARITY_TOL = 1e-12


class ForbiddenQuery(Exception):
    """A learner asked for a loss value its feedback model does not reveal."""


# ---------------------------------------------------------------------------
# Action grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ActionGrid:
    count: int
    offset: float
    step: float

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("grid needs at least one action")
        if self.step <= 0:
            raise ValueError("grid step must be positive")
        last = self.offset + (self.count - 1) * self.step
        if self.offset < 0 or last > 1 + 1e-12:
            raise ValueError(f"grid values leave [0, 1]: [{self.offset}, {last}]")
        object.__setattr__(self, "_values", self.offset + self.step * np.arange(self.count))

    @classmethod
    def dyadic(cls, depth: int) -> "ActionGrid":
        """``{0, 2^-M, ..., 1 - 2^-M}``: the grid of the covering-tree learners."""
        return cls(2**depth, 0.0, 2.0**-depth)

    @classmethod
    def dyadic_upper(cls, depth: int) -> "ActionGrid":
        """``{2^-M, 2 * 2^-M, ..., 1}``: the grid of the wavelet-tree learner."""
        return cls(2**depth, 2.0**-depth, 2.0**-depth)

    @classmethod
    def reserve(cls, gamma: float) -> "ActionGrid":
        """``{0, gamma, 2 gamma, ...}`` with ``ceil(1/gamma)`` points."""
        if not 0 < gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        return cls(math.ceil(1.0 / gamma - 1e-9), 0.0, gamma)

    @classmethod
    def centered(cls, count: int) -> "ActionGrid":
        """Midpoints of ``count`` equal cells; a ``1/(2 count)``-cover of [0, 1]."""
        return cls(count, 0.5 / count, 1.0 / count)

    @property
    def values(self) -> np.ndarray:
        return self._values  # type: ignore[attr-defined]

    def __len__(self) -> int:
        return self.count

    def value(self, k: int) -> float:
        if not 0 <= k < self.count:
            raise IndexError(k)
        return float(self._values[k])  # type: ignore[attr-defined]

    def nearest(self, y):
        """Index of the grid point closest to ``y``; ties go to the lower index."""
        y_arr = np.asarray(y, dtype=float)
        pos = (y_arr - self.offset) / self.step
        lo = np.clip(np.floor(pos).astype(np.int64), 0, self.count - 1)
        hi = np.minimum(lo + 1, self.count - 1)
        vals = self.values
        take_hi = np.abs(vals[hi] - y_arr) < np.abs(y_arr - vals[lo])
        out = np.where(take_hi, hi, lo)
        return int(out) if out.ndim == 0 else out

    def index_of(self, y: float) -> int:
        k = int(round((y - self.offset) / self.step))
        if not 0 <= k < self.count or abs(self.value(k) - y) > 1e-9:
            raise ValueError(f"{y} is not a grid value")
        return k


# ---------------------------------------------------------------------------
# Contexts
# ---------------------------------------------------------------------------


def as_context(x: Sequence[float] | np.ndarray | float) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ValueError("a context is a 1-d coordinate vector")
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValueError("context coordinates must lie in [0, 1]")
    return arr


def sup_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


class Regularity(str, enum.Enum):
    LIPSCHITZ = "lipschitz-1"
    SEMI_LIPSCHITZ = "semi-lipschitz"


@dataclass(frozen=True)
class LossFunction:
    """A loss ``[0, 1] -> [0, 1]`` with a declared regularity.

    ``fn`` must accept a float array and return an array of the same shape.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    regularity: Regularity = Regularity.LIPSCHITZ

    def __call__(self, y):
        out = self.fn(np.asarray(y, dtype=float))
        return float(out) if np.ndim(out) == 0 else out


def constant_loss(c: float, regularity: Regularity = Regularity.LIPSCHITZ) -> LossFunction:
    return LossFunction(lambda y: np.full(np.shape(y), float(c)), regularity)


def verify_regularity(loss: LossFunction, resolution: int, tolerance: float = REGULARITY_TOL) -> bool:
    """Check the declared regularity of ``loss`` over all pairs of a uniform grid."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    ys = np.linspace(0.0, 1.0, resolution)
    vals = np.asarray(loss(ys), dtype=float)
    chunk = max(1, 4_000_000 // resolution)
    for start in range(0, resolution, chunk):
        y0 = ys[start:start + chunk, None]
        v0 = vals[start:start + chunk, None]
        dy = ys[None, :] - y0
        dv = vals[None, :] - v0
        if loss.regularity is Regularity.LIPSCHITZ:
            bad = np.abs(dv) > np.abs(dy) + tolerance
        else:
            # l(y + delta) >= l(y) - delta for delta > 0
            bad = (dy > 0) & (dv < -dy - tolerance)
        if bad.any():
            return False
    return True


# ---------------------------------------------------------------------------
# Feedback
# ---------------------------------------------------------------------------


class FeedbackModel(str, enum.Enum):
    BANDIT = "bandit"
    ONE_SIDED = "one-sided"
    FULL = "full"


class _Audit:
    """Process-wide tally of feedback violations, for test-suite auditing."""

    def __init__(self) -> None:
        self.total = 0


AUDIT = _Audit()


@contextlib.contextmanager
def audit_violations() -> Iterator["_Scope"]:
    scope = _Scope(AUDIT.total)
    try:
        yield scope
    finally:
        scope.end = AUDIT.total


class _Scope:
    def __init__(self, start: int) -> None:
        self.start = start
        self.end: int | None = None

    @property
    def count(self) -> int:
        end = AUDIT.total if self.end is None else self.end
        return end - self.start


@dataclass
class GuardedFeedback:
    """Per-round loss oracle enforcing a feedback model.

    The learner records its play with :meth:`record_play` and may then read
    losses through :meth:`query` / :meth:`query_many`.  Reads the model does
    not allow raise :class:`ForbiddenQuery` and are counted as violations.
    """

    model: FeedbackModel
    loss: LossFunction
    played_value: float | None = None
    played_index: int | None = None
    queries: int = 0
    violations: int = 0

    def record_play(self, value: float, index: int | None = None) -> None:
        if self.played_value is not None:
            raise RuntimeError("play already recorded for this round")
        self.played_value = float(value)
        self.played_index = index

    def permits(self, y) -> np.ndarray | bool:
        if self.played_value is None:
            raise RuntimeError("no play recorded yet")
        y_arr = np.asarray(y, dtype=float)
        if self.model is FeedbackModel.FULL:
            ok = np.ones(y_arr.shape, dtype=bool)
        elif self.model is FeedbackModel.ONE_SIDED:
            ok = y_arr >= self.played_value
        else:
            ok = y_arr == self.played_value
        return bool(ok) if ok.ndim == 0 else ok

    def _reject(self, y) -> None:
        self.violations += 1
        AUDIT.total += 1
        raise ForbiddenQuery(
            f"{self.model.value} feedback forbids reading loss at {y!r} "
            f"(played {self.played_value})"
        )

    def query(self, y: float) -> float:
        if not self.permits(y):
            self._reject(y)
        self.queries += 1
        return float(self.loss(float(y)))

    def query_many(self, ys: np.ndarray) -> np.ndarray:
        ys = np.asarray(ys, dtype=float)
        ok = self.permits(ys)
        if not np.all(ok):
            self._reject(ys[~np.asarray(ok)])
        self.queries += ys.size
        return np.asarray(self.loss(ys), dtype=float)


def query_feedback(guard: GuardedFeedback, y: float) -> float:
    return guard.query(y)


@dataclass(frozen=True)
class Play:
    """What a learner did in one round: the sampled index and its distribution."""

    index: int
    value: float
    probs: np.ndarray


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------


def sample_categorical(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF draw: the first index whose cumulative mass exceeds ``u``."""
    cdf = np.cumsum(probs)
    k = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    if k >= len(probs):
        # u * total landed on the final rounding boundary
        k = int(np.flatnonzero(np.asarray(probs) > 0)[-1])
    return k


@dataclass
class RandomSource:
    """Seeded counter-based stream (Philox) that can be split by key path."""

    seed: int
    path: tuple[int, ...] = ()
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def split(self, *keys: int) -> "RandomSource":
        return RandomSource(self.seed, self.path + tuple(int(k) for k in keys))

    def uniform(self) -> float:
        return float(self._gen.random())

    def categorical(self, probs: np.ndarray) -> int:
        return sample_categorical(probs, self.uniform())

    @property
    def generator(self) -> np.random.Generator:
        return self._gen


def check_distribution(p: np.ndarray, atol: float = PROB_ATOL) -> None:
    if np.any(p < 0) or abs(float(np.sum(p)) - 1.0) > atol:
        raise ValueError("not a probability vector")
