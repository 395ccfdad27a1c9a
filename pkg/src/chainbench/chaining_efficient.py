"""Dyadic context partition, wavelet-like Lipschitz approximation and HierExp4*.

The efficient chaining tree alternates binning nodes, which route a context to
its dyadic sub-cube, and Exp4 nodes, which aggregate three children labelled by
a coefficient in {-1, 0, 1}.  For a fixed context only a ternary tree of Exp4
nodes is active, so weights are stored per (level, cube) as a ``3^m x 3``
block of cumulative losses, with the row index encoding the coefficient
prefix in base 3 (digit ``c + 1``).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .core import ActionGrid, GuardedFeedback, Play, RandomSource, as_context

COEFFS = (-1, 0, 1)
_FIT_PREFERENCE = np.array([0, -1, 1])  # argmin keeps the first of equal candidates


class InvalidHorizon(ValueError):
    pass


# ---------------------------------------------------------------------------
# Dyadic cubes
# ---------------------------------------------------------------------------


def cube_coords(x: np.ndarray, m: int) -> np.ndarray:
    """Integer coordinates of the depth-``m`` cube containing each point.

    Cubes are half-open on the right except the last one, which is closed.
    """
    side = 1 << m
    return np.minimum(np.floor(np.asarray(x, dtype=float) * side).astype(np.int64), side - 1)


def cube_index(x, m: int) -> np.ndarray | int:
    """Flat index of the depth-``m`` cube, first coordinate most significant."""
    k = cube_coords(x, m)
    side = 1 << m
    d = k.shape[-1]
    weights = side ** np.arange(d - 1, -1, -1)
    out = k @ weights
    return int(out) if np.ndim(out) == 0 else out


def dyadic_path(x, depth: int) -> tuple[int, ...]:
    """``(sigma_1, ..., sigma_depth)``: the child slot chosen at each depth."""
    x = as_context(x)
    d = len(x)
    path = []
    for m in range(1, depth + 1):
        bits = cube_coords(x, m) & 1
        path.append(int(bits @ (1 << np.arange(d - 1, -1, -1))))
    return tuple(path)


def cube_centers(d: int, m: int) -> np.ndarray:
    side = 1 << m
    axis = (np.arange(side) + 0.5) / side
    return np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)


def _parent_index(d: int, m: int) -> np.ndarray:
    """Flat index at depth ``m - 1`` of the parent of every depth-``m`` cube."""
    side = 1 << m
    grid = np.stack(np.meshgrid(*([np.arange(side)] * d), indexing="ij"), axis=-1).reshape(-1, d)
    half = side >> 1
    return (grid // 2) @ (half ** np.arange(d - 1, -1, -1))


# ---------------------------------------------------------------------------
# Wavelet approximation
# ---------------------------------------------------------------------------


@dataclass
class WaveletCoefficients:
    d: int
    depth: int
    coeffs: list[np.ndarray]  # coeffs[m - 1][cube index at depth m]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return wavelet_eval(self, x)


def wavelet_fit(f: Callable[[np.ndarray], np.ndarray], d: int, depth: int) -> WaveletCoefficients:
    """Fit coefficients by projecting ``f`` at cube centres, coarse to fine.

    ``f`` takes an ``(n, d)`` array of points and returns ``n`` values.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    coeffs = []
    prev = np.array([0.5])
    for m in range(1, depth + 1):
        target = np.asarray(f(cube_centers(d, m)), dtype=float)
        base = prev[_parent_index(d, m)]
        cand = base[:, None] + _FIT_PREFERENCE[None, :] * 2.0**-m
        pick = np.argmin(np.abs(cand - target[:, None]), axis=1)
        c = _FIT_PREFERENCE[pick]
        coeffs.append(c.astype(np.int8))
        prev = base + c * 2.0**-m
    return WaveletCoefficients(d, depth, coeffs)


def wavelet_eval(w: WaveletCoefficients, x) -> np.ndarray | float:
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    out = np.full(len(pts), 0.5)
    for m in range(1, w.depth + 1):
        out += w.coeffs[m - 1][cube_index(pts, m)] * 2.0**-m
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# Schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StarSchedule:
    T: int
    d: int
    gamma: float
    depth: int
    c_T: float
    eta: np.ndarray  # eta[m], m = 0..depth
    alpha: np.ndarray  # alpha[m], m = 0..depth, alpha[depth] = 0


def star_gamma(T: int, d: int) -> float:
    if d == 1:
        return T**-0.5 / math.log(T)
    return T ** (-1.0 / (d + 2.0 / 3.0))


def star_schedule(T: int, d: int, depth: int | None = None) -> StarSchedule:
    """Exploration, per-level rates and penalties for HierExp4*.

    ``depth`` overrides ``ceil(log2(1/gamma))``; rates keep their formula and
    penalties are summed up to the overridden depth.
    """
    if T < 3:
        raise InvalidHorizon(f"horizon must be at least 3, got {T}")
    if d < 1:
        raise ValueError("dimension must be positive")
    gamma = star_gamma(T, d)
    M = max(1, math.ceil(math.log2(1.0 / gamma) - 1e-9)) if depth is None else depth
    if M < 1:
        raise ValueError("depth must be at least 1")
    if d == 1:
        c_T = 2.0**-1.25 * 2.0**-0.5
    elif d <= 4:
        c_T = 2.0**-1.25 * M**-0.5
    else:
        c_T = 2.0 ** (d / 4.0 - 3.0)
    m = np.arange(M + 1)
    eta = c_T * 2.0 ** (m * (d / 4.0 + 1.0)) * math.sqrt(gamma) * T**-0.25
    alpha = np.zeros(M + 1)
    for j in range(M, 0, -1):
        alpha[j - 1] = alpha[j] + 2.0 ** (4 - 2 * j) * eta[j]
    return StarSchedule(T, d, gamma, M, c_T, eta, alpha)


# ---------------------------------------------------------------------------
# Tree structure
# ---------------------------------------------------------------------------


def leaf_actions(depth: int) -> np.ndarray:
    """0-based grid index of every leaf, leaves ordered by base-3 coefficient sequence."""
    idx = np.full(1, 1 << (depth - 1), dtype=np.int64)
    for k in range(1, depth + 1):
        idx = (idx[:, None] + np.array(COEFFS)[None, :] * (1 << (depth - k))).reshape(-1)
    return np.clip(idx, 1, 1 << depth) - 1


def exp4_node_total(depth: int, d: int) -> int:
    return sum(3**m * 2 ** (d * (m + 1)) for m in range(depth))


def active_exp4_total(depth: int) -> int:
    return (3**depth - 1) // 2


def iter_exp4_nodes(depth: int, d: int) -> Iterator[tuple[int, ...]]:
    """Every Exp4 node label ``(s_1, c_1, ..., s_m, c_m, s_{m+1})`` by explicit traversal."""
    slots = range(1 << d)

    def walk(prefix: tuple[int, ...], m: int):
        for s in slots:
            node = prefix + (s,)
            yield node
            if m + 1 < depth:
                for c in COEFFS:
                    yield from walk(node + (c,), m + 1)

    if depth > 0:
        yield from walk((), 0)


def activate_path(x, depth: int) -> list[tuple[int, ...]]:
    """Labels of the Exp4 nodes active for context ``x``."""
    sigma = dyadic_path(x, depth)
    active = []
    for m in range(depth):
        for cs in itertools.product(COEFFS, repeat=m):
            label: tuple[int, ...] = ()
            for k in range(m):
                label += (sigma[k], cs[k])
            active.append(label + (sigma[m],))
    return active


# ---------------------------------------------------------------------------
# Learner
# ---------------------------------------------------------------------------


def _row_softmax(cum: np.ndarray, eta: float) -> np.ndarray:
    w = np.exp(-eta * (cum - cum.min(axis=1, keepdims=True)))
    return w / w.sum(axis=1, keepdims=True)


@dataclass
class DyadicTree:
    d: int
    depth: int
    blocks: list[dict[int, np.ndarray]] = field(init=False)

    def __post_init__(self) -> None:
        self.blocks = [dict() for _ in range(self.depth)]

    def block(self, m: int, cube: int) -> np.ndarray:
        b = self.blocks[m].get(cube)
        if b is None:
            b = np.zeros((3**m, 3))
            self.blocks[m][cube] = b
        return b

    def allocated_nodes(self) -> int:
        return sum(3**m * len(level) for m, level in enumerate(self.blocks))


class HierExp4Star:
    """Chaining over wavelet-like approximations with penalised Exp4 estimates."""

    def __init__(self, T: int, d: int, schedule: StarSchedule | None = None, depth: int | None = None):
        self.schedule = star_schedule(T, d, depth) if schedule is None else schedule
        self.d = d
        self.depth = self.schedule.depth
        self.gamma = self.schedule.gamma
        self.grid = ActionGrid.dyadic_upper(self.depth)
        self.tree = DyadicTree(d, self.depth)
        self.leaf_action = leaf_actions(self.depth)
        M = self.depth
        # largest leaf action below each Exp4 node, per level
        self.anchors = [self.leaf_action.reshape(3**m, -1).max(axis=1) for m in range(M)]
        self.last_plan: dict | None = None

    def active_blocks(self, x) -> list[np.ndarray]:
        x = as_context(x)
        return [self.tree.block(m, cube_index(x, m + 1)) for m in range(self.depth)]

    def round(self, x, rng: RandomSource, guard: GuardedFeedback) -> Play:
        blocks = self.active_blocks(x)
        eta = self.schedule.eta
        qs = [_row_softmax(b, eta[m]) for m, b in enumerate(blocks)]
        prob = np.ones(1)
        for q in qs:
            prob = (prob[:, None] * q).reshape(-1)
        p_root = np.bincount(self.leaf_action, weights=prob, minlength=self.grid.count)
        pstar = (1.0 - self.gamma) * p_root
        pstar[0] += self.gamma
        k = rng.categorical(pstar)
        value = self.grid.value(k)
        guard.record_play(value, k)
        losses = np.full(self.grid.count, np.nan)
        losses[k:] = guard.query_many(self.grid.values[k:])
        tildes = self.expert_losses(qs, pstar, k, losses)
        for b, t in zip(blocks, tildes):
            b += t
        self.last_plan = {"q": qs, "pstar": pstar, "tilde": tildes}
        return Play(k, value, pstar)

    def expert_losses(self, qs, pstar, played, losses) -> list[np.ndarray]:
        """Penalised expert losses of every active Exp4 node, level by level."""
        cdf = np.cumsum(pstar)
        a = self.leaf_action
        live = a >= played
        inv = 1.0 / cdf[a]
        A = np.where(live, np.nan_to_num(losses[a]) * inv, 0.0)
        B = np.where(live, inv, 0.0)
        C = inv
        alpha = self.schedule.alpha
        out: list[np.ndarray] = [None] * self.depth  # type: ignore[list-item]
        for m in range(self.depth - 1, -1, -1):
            rows = 3**m
            Ac, Bc, Cc = A.reshape(rows, 3), B.reshape(rows, 3), C.reshape(rows, 3)
            anchor = self.anchors[m]
            anchor_loss = np.where(anchor >= played, np.nan_to_num(losses[anchor]), 0.0)
            spread = 2.0 ** (1 - m)
            out[m] = Ac + (spread - anchor_loss)[:, None] * Bc - alpha[m] * Cc + alpha[m] / self.gamma
            q = qs[m]
            A, B, C = (q * Ac).sum(axis=1), (q * Bc).sum(axis=1), (q * Cc).sum(axis=1)
        return out
