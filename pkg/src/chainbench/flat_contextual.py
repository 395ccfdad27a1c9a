"""Fixed-radius ball covers of the context space, one expert learner per ball."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .core import ActionGrid, GuardedFeedback, Play, RandomSource, as_context
from .experts import Exp3, Exp3RTB


@dataclass
class BallCover:
    """Balls of sup-norm radius ``radius`` created on demand, in creation order."""

    radius: float
    factory: Callable[[], Any]
    centers: list[np.ndarray] = field(default_factory=list)
    learners: list[Any] = field(default_factory=list)
    _stack: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.centers)

    def lookup_or_create(self, x) -> int:
        x = as_context(x)
        if self.centers:
            dist = np.max(np.abs(self._stack - x), axis=1)
            k = int(np.argmin(dist))  # first minimiser is the oldest ball
            if dist[k] <= self.radius:
                return k
        self.centers.append(x.copy())
        self.learners.append(self.factory())
        self._stack = np.vstack(self.centers)
        return len(self.centers) - 1

    def max_balls(self, d: int) -> float:
        return (1.0 + 1.0 / self.radius) ** d


def exp3_radius(T: int, d: int) -> float:
    """Cover radius for bandit feedback with a one-dimensional action space."""
    return min(1.0, math.log(T) ** (2.0 / (d + 3)) * T ** (-1.0 / (d + 3)))


def exp3_rate(T: int, d: int, eps: float, K: int) -> float:
    n_balls = (2.0 / eps) ** d
    if K < 2:
        return 1.0
    return math.sqrt(2.0 * n_balls * math.log(K) / (T * K))


def rtb_radius(T: int, d: int) -> float:
    return T ** (-1.0 / (d + 2))


class ContextualExp3:
    """Bandit feedback: route each context to a ball and run Exp3 there."""

    def __init__(self, T: int, d: int, epsilon: float | None = None):
        self.epsilon = exp3_radius(T, d) if epsilon is None else epsilon
        self.grid = ActionGrid.centered(math.ceil(1.0 / self.epsilon - 1e-9))
        self.eta = exp3_rate(T, d, self.epsilon, self.grid.count)
        self.cover = BallCover(self.epsilon, lambda: Exp3(self.grid, self.eta))

    def round(self, x, rng: RandomSource, guard: GuardedFeedback) -> Play:
        ball = self.cover.lookup_or_create(x)
        return self.cover.learners[ball].round(rng, guard)


class ContextualRTB:
    """One-sided feedback: route each context to a ball and run Exp3-RTB there."""

    def __init__(self, T: int, d: int, epsilon: float | None = None):
        self.epsilon = rtb_radius(T, d) if epsilon is None else epsilon
        self.gamma = self.epsilon
        self.grid = ActionGrid.reserve(self.gamma)
        self.cover = BallCover(self.epsilon, lambda: Exp3RTB(self.gamma))

    def round(self, x, rng: RandomSource, guard: GuardedFeedback) -> Play:
        ball = self.cover.lookup_or_create(x)
        return self.cover.learners[ball].round(rng, guard)
