"""Oblivious adversaries: contextual second-price auctions and Lipschitz bump losses."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np

from .core import LossFunction, RandomSource, Regularity

KINDS = ("auction-iid", "auction-adversarial", "lipschitz-synthetic")
ENV_STREAM = 1 << 30  # split key reserved for environment randomness

AUCTION_DEFAULTS = {"bid_center": 0.6, "bid_slope": 1.0, "bid_gap": 0.3, "bid_noise": 0.05, "regime_length": 0}
LIPSCHITZ_DEFAULTS = {"bumps": 3, "loss_level": 0.9, "weight_jitter": 0.5}
MAX_BUMPS = 5


class InvalidBids(ValueError):
    pass


class InvalidSpec(ValueError):
    pass


def auction_loss(y, b1, b2):
    """One minus the seller's revenue for reserve price ``y``."""
    b1 = np.asarray(b1, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    if np.any(b2 < 0) or np.any(b2 > b1) or np.any(b1 > 1):
        raise InvalidBids("bids must satisfy 0 <= b2 <= b1 <= 1")
    y = np.asarray(y, dtype=float)
    out = 1.0 - np.maximum(y, b2) * (y <= b1)
    return float(out) if out.ndim == 0 else out


def auction_loss_function(b1: float, b2: float) -> LossFunction:
    auction_loss(0.0, b1, b2)  # validate once
    return LossFunction(lambda y: 1.0 - np.maximum(y, b2) * (y <= b1), Regularity.SEMI_LIPSCHITZ)


@dataclass(frozen=True)
class EnvironmentSpec:
    kind: str
    d: int
    T: int
    seed: int
    params: dict[str, Any] = field(default_factory=dict)

    def resolved_params(self) -> dict[str, Any]:
        base = AUCTION_DEFAULTS if self.kind.startswith("auction") else LIPSCHITZ_DEFAULTS
        unknown = set(self.params) - set(base)
        if unknown:
            raise InvalidSpec(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        return {**base, **self.params}


def _lipschitz_profile(x: np.ndarray, phase: float) -> np.ndarray:
    """A 1-Lipschitz map of the context (sup norm) with range [-1/(2 pi), 1/(2 pi)]."""
    return np.sin(2.0 * np.pi * x.mean(axis=-1) + phase) / (2.0 * np.pi)


@dataclass
class EnvironmentTrace:
    spec: EnvironmentSpec
    contexts: np.ndarray
    b1: np.ndarray | None = None
    b2: np.ndarray | None = None
    level: np.ndarray | None = None
    centers: np.ndarray | None = None  # (T, J) bump centres
    radii: np.ndarray | None = None  # (J,)
    weights: np.ndarray | None = None  # (T, J)

    def __len__(self) -> int:
        return len(self.contexts)

    @property
    def is_auction(self) -> bool:
        return self.b1 is not None

    def loss(self, t: int) -> LossFunction:
        if self.is_auction:
            return auction_loss_function(float(self.b1[t]), float(self.b2[t]))
        c, r, w, a = self.centers[t], self.radii, self.weights[t], float(self.level[t])

        def fn(y: np.ndarray) -> np.ndarray:
            y = np.asarray(y, dtype=float)
            dip = np.maximum(0.0, r - np.abs(y[..., None] - c)) @ w
            return np.clip(a - dip, 0.0, 1.0)

        return LossFunction(fn, Regularity.LIPSCHITZ)

    def __getitem__(self, t: int) -> tuple[np.ndarray, LossFunction]:
        return self.contexts[t], self.loss(t)

    def __iter__(self) -> Iterator[tuple[np.ndarray, LossFunction]]:
        for t in range(len(self)):
            yield self[t]

    def loss_matrix(self, ys: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        """Losses of every round (or the given rounds) at every action in ``ys``."""
        ys = np.asarray(ys, dtype=float)
        idx = np.arange(len(self)) if rows is None else np.asarray(rows)
        if self.is_auction:
            b1 = self.b1[idx, None]
            b2 = self.b2[idx, None]
            return 1.0 - np.maximum(ys[None, :], b2) * (ys[None, :] <= b1)
        out = np.empty((len(idx), len(ys)))
        step = max(1, 2_000_000 // max(1, len(ys) * len(self.radii)))
        for s in range(0, len(idx), step):
            sel = idx[s:s + step]
            gap = np.abs(ys[None, :, None] - self.centers[sel][:, None, :])
            dip = np.einsum("tnj,tj->tn", np.maximum(0.0, self.radii - gap), self.weights[sel])
            out[s:s + step] = np.clip(self.level[sel, None] - dip, 0.0, 1.0)
        return out

    def breakpoints(self) -> np.ndarray:
        """Actions at which the summed loss can attain its infimum besides grid points."""
        if self.is_auction:
            return np.unique(np.concatenate([self.b1, [1.0]]))
        return np.unique(np.clip(np.concatenate([self.centers.ravel(), [0.0, 1.0]]), 0.0, 1.0))


def generate_environment(spec: EnvironmentSpec) -> EnvironmentTrace:
    if spec.kind not in KINDS:
        raise InvalidSpec(f"unknown environment kind {spec.kind!r}")
    if spec.d < 1 or spec.T < 1:
        raise InvalidSpec("dimension and horizon must be positive")
    p = spec.resolved_params()
    gen = RandomSource(spec.seed).split(ENV_STREAM).generator
    T, d = spec.T, spec.d

    if spec.kind == "lipschitz-synthetic":
        J = int(p["bumps"])
        if not 1 <= J <= MAX_BUMPS:
            raise InvalidSpec(f"bumps must be in 1..{MAX_BUMPS}")
        jitter = float(p["weight_jitter"])
        level = float(p["loss_level"])
        if not 0 <= jitter <= 1 or not 0 <= level <= 1:
            raise InvalidSpec("weight_jitter and loss_level must lie in [0, 1]")
        contexts = gen.random((T, d))
        base_w = gen.dirichlet(np.ones(J))  # sums to one, keeps the mixture 1-Lipschitz
        radii = gen.uniform(0.1, 0.4, J)
        offsets = gen.uniform(0.2, 0.8, J)
        slopes = gen.uniform(-1.0, 1.0, J)
        phases = gen.uniform(0.0, 2.0 * np.pi, J)
        profile = np.stack([_lipschitz_profile(contexts, ph) for ph in phases], axis=1)
        centers = np.clip(offsets + slopes * profile, 0.0, 1.0)
        weights = base_w * (1.0 - jitter * gen.random((T, J)))
        return EnvironmentTrace(spec, contexts, level=np.full(T, level), centers=centers, radii=radii, weights=weights)

    center = float(p["bid_center"])
    slope = float(p["bid_slope"])
    gap = float(p["bid_gap"])
    noise = float(p["bid_noise"])
    if not (0 <= center <= 1 and abs(slope) <= 1 and gap >= 0 and noise >= 0):
        raise InvalidSpec("bid parameters out of range")
    phase = gen.uniform(0.0, 2.0 * np.pi)
    if spec.kind == "auction-iid":
        contexts = gen.random((T, d))
        centres = np.full(T, center)
        slopes = np.full(T, slope)
    else:
        regime = int(p["regime_length"]) or max(1, T // 8)
        n_regimes = -(-T // regime)
        levels = gen.choice([0.3, 0.5, 0.7, 0.9], size=n_regimes)
        centres = np.repeat(levels, regime)[:T]
        slopes = np.repeat(np.where(np.arange(n_regimes) % 2 == 0, slope, -slope), regime)[:T]
        steps = gen.normal(0.0, 0.05, (T, d))
        walk = np.cumsum(steps, axis=0) + gen.random(d)
        contexts = 1.0 - np.abs(1.0 - np.mod(walk, 2.0))  # reflect into [0, 1]
    b1 = np.clip(centres + slopes * _lipschitz_profile(contexts, phase) + noise * gen.standard_normal(T), 0.0, 1.0)
    b2 = np.clip(b1 - gap * gen.random(T), 0.0, None)
    b2 = np.minimum(b2, b1)
    return EnvironmentTrace(spec, contexts, b1=b1, b2=b2)
