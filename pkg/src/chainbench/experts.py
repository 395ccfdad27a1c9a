"""Exponential-weights primitives: Hedge, Exp3, Exp3-RTB and the Exp4 estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ActionGrid, GuardedFeedback, Play, RandomSource

# 2(sqrt2 - 1) / (e - 2), the constant of the variance-adaptive rate
_RATE_CONST = 2.0 * (math.sqrt(2.0) - 1.0) / (math.e - 2.0)


class AnchorUnobservable(Exception):
    """An estimate needed a loss the learner was never allowed to read."""


def hedge_distribution(cum_loss: np.ndarray, eta: float) -> np.ndarray:
    """Softmax of ``-eta * cum_loss`` computed with a max-shift."""
    z = -eta * (np.asarray(cum_loss, dtype=float) - np.min(cum_loss))
    w = np.exp(z)
    return w / w.sum()


def variance_rate(variance: float, n: int) -> float:
    if variance <= 0.0:
        return math.inf
    return math.sqrt(_RATE_CONST * math.log(n) / variance)


def adaptive_rate(variance: float, n: int, cap: float, previous: float = math.inf) -> float:
    """``min(cap, variance term, previous)``; the variance term is infinite at zero."""
    if n < 2:
        raise ValueError("adaptive rate needs at least two experts")
    return min(cap, variance_rate(variance, n), previous)


def exp4_cap(gamma: float, spread: float) -> float:
    return gamma / (2.0 * spread)


@dataclass
class AdaptiveRate:
    """Running state of the variance-adaptive learning rate."""

    n: int
    cap: float
    variance: float = 0.0
    eta: float = field(init=False)

    def __post_init__(self) -> None:
        self.eta = adaptive_rate(0.0, self.n, self.cap)

    def observe(self, q: np.ndarray, losses: np.ndarray) -> float:
        mean = float(q @ losses)
        self.variance += float(q @ (losses - mean) ** 2)
        self.eta = adaptive_rate(self.variance, self.n, self.cap, self.eta)
        return self.eta


@dataclass
class HedgeState:
    """Exponential weights over ``n`` experts with a fixed or adaptive rate."""

    n: int
    eta: float | None = None
    rate: AdaptiveRate | None = None
    cum_loss: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if (self.eta is None) == (self.rate is None):
            raise ValueError("give exactly one of a fixed eta or an adaptive rate")
        self.cum_loss = np.zeros(self.n)

    @property
    def current_eta(self) -> float:
        return self.rate.eta if self.rate is not None else float(self.eta)

    def distribution(self) -> np.ndarray:
        return hedge_distribution(self.cum_loss, self.current_eta)

    def update(self, losses: np.ndarray) -> None:
        losses = np.asarray(losses, dtype=float)
        if self.rate is not None:
            q = self.distribution()
            self.cum_loss += losses
            self.rate.observe(q, losses)
        else:
            self.cum_loss += losses


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def exp3_estimates(loss_played: float, probs: np.ndarray, played: int) -> np.ndarray:
    est = np.zeros(len(probs))
    est[played] = loss_played / probs[played]
    return est


def exp3rtb_estimates(losses: np.ndarray, q: np.ndarray, played: int) -> np.ndarray:
    """``l(y_k) / sum_{j<=k} q(j)`` for ``k >= played``, zero below.

    ``losses`` only needs valid entries from ``played`` upwards.
    """
    cdf = np.cumsum(q)
    est = np.zeros(len(q))
    est[played:] = np.asarray(losses[played:], dtype=float) / cdf[played:]
    return est


def _anchored(losses: np.ndarray, support: np.ndarray, played: int):
    support = np.asarray(support, dtype=np.int64)
    if support.size == 0:
        raise ValueError("effective action set is empty")
    anchor = int(support.max())
    live = support[support >= played]
    if live.size == 0:
        return support, live, 0.0
    needed = np.asarray(losses, dtype=float)[np.append(live, anchor)]
    if np.any(np.isnan(needed)):
        raise AnchorUnobservable(f"loss at index {anchor} or below it was not observed")
    return support, live, float(losses[anchor])


def exp4_range_estimates(losses: np.ndarray, support, cdf: np.ndarray, played: int) -> np.ndarray:
    """Range-adaptive Exp4 estimate anchored at the top of ``support``.

    ``losses`` is a length-K vector with NaN at unobserved entries and ``cdf``
    is the cumulative sampling distribution.
    """
    support, live, anchor_loss = _anchored(losses, support, played)
    est = np.zeros(len(cdf))
    if live.size:
        est[live] = (np.asarray(losses)[live] - anchor_loss) / cdf[live]
    return est


def exp4_penalized_estimates(
    losses: np.ndarray,
    support,
    cdf: np.ndarray,
    played: int,
    spread: float,
    alpha: float,
    gamma: float,
) -> np.ndarray:
    support, live, anchor_loss = _anchored(losses, support, played)
    est = np.zeros(len(cdf))
    est[support] = -alpha / cdf[support] + alpha / gamma
    if live.size:
        est[live] += (np.asarray(losses)[live] - anchor_loss + spread) / cdf[live]
    return est


# ---------------------------------------------------------------------------
# Finite-action learners
# ---------------------------------------------------------------------------


class Exp3:
    """Exp3 with a fixed rate over a finite grid, bandit feedback."""

    def __init__(self, grid: ActionGrid, eta: float):
        self.grid = grid
        self.eta = eta
        self.cum_loss = np.zeros(grid.count)

    def distribution(self) -> np.ndarray:
        return hedge_distribution(self.cum_loss, self.eta)

    def round(self, rng: RandomSource, guard: GuardedFeedback) -> Play:
        p = self.distribution()
        k = rng.categorical(p)
        value = self.grid.value(k)
        guard.record_play(value, k)
        self.cum_loss += exp3_estimates(guard.query(value), p, k)
        return Play(k, value, p)


class Exp3RTB:
    """Exp3 for reserve prices: one-sided feedback, exploration mass on the lowest price."""

    def __init__(self, gamma: float):
        if not 0 < gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        self.gamma = gamma
        self.eta = gamma / 2.0
        self.grid = ActionGrid.reserve(gamma)
        self.cum_loss = np.zeros(self.grid.count)

    def distribution(self) -> np.ndarray:
        q = (1.0 - self.gamma) * hedge_distribution(self.cum_loss, self.eta)
        q[0] += self.gamma
        return q

    def round(self, rng: RandomSource, guard: GuardedFeedback) -> Play:
        q = self.distribution()
        k = rng.categorical(q)
        value = self.grid.value(k)
        guard.record_play(value, k)
        losses = np.empty(self.grid.count)
        losses[k:] = guard.query_many(self.grid.values[k:])
        self.cum_loss += exp3rtb_estimates(losses, q, k)
        return Play(k, value, q)

    @staticmethod
    def regret_bound(T: int, gamma: float) -> float:
        return gamma * T * (2.0 + 0.25 * math.log(math.e / gamma)) + 2.0 * math.log(math.ceil(1.0 / gamma - 1e-9)) / gamma


class ContextFreeRTB:
    """Adapter so bare Exp3-RTB fits the contextual learner interface."""

    def __init__(self, gamma: float):
        self.inner = Exp3RTB(gamma)
        self.grid = self.inner.grid

    def round(self, x, rng: RandomSource, guard: GuardedFeedback) -> Play:
        return self.inner.round(rng, guard)
