"""Experiment configuration, regret comparators, the replay loop and CSV output."""

from __future__ import annotations

import configparser
import dataclasses
import itertools
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import kernels
from .chaining import FunctionDictionary, HierExp4, HierHedge
from .chaining_efficient import HierExp4Star
from .core import FeedbackModel, GuardedFeedback, RandomSource
from .environments import AUCTION_DEFAULTS, KINDS, LIPSCHITZ_DEFAULTS, EnvironmentSpec, EnvironmentTrace, generate_environment
from .experts import ContextFreeRTB
from .flat_contextual import ContextualExp3, ContextualRTB

ALGORITHMS = {
    "contextual-exp3": FeedbackModel.BANDIT,
    "contextual-rtb": FeedbackModel.ONE_SIDED,
    "exp3-rtb": FeedbackModel.ONE_SIDED,
    "hier-exp4": FeedbackModel.ONE_SIDED,
    "hier-exp4-star": FeedbackModel.ONE_SIDED,
    "hier-hedge": FeedbackModel.FULL,
}
CSV_HEADER = "t,replicate,loss,cum_loss,comparator_cum,regret"
ENV_PARAM_KEYS = tuple(AUCTION_DEFAULTS) + tuple(LIPSCHITZ_DEFAULTS)


class ConfigError(ValueError):
    pass


class HarnessIOError(OSError):
    pass


class TooLarge(RuntimeError):
    """The exhaustive multi-dimensional comparator would exceed its state budget."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    algorithm: str
    horizon: int
    kind: str = "auction-iid"
    dimension: int = 1
    replicates: int = 1
    seed: int = 0
    gamma: float | None = None
    epsilon: float | None = None
    depth: int | None = None
    comparator: str | None = None
    comparator_resolution: int = 64
    loss_column: str = "realized"
    dictionary_bins: int = 8
    env_params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {sorted(ALGORITHMS)}")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown environment kind {self.kind!r}")
        if self.horizon < 1 or self.replicates < 1 or self.dimension < 1:
            raise ConfigError("horizon, replicates and dimension must be positive")
        if self.comparator is None:
            self.comparator = "lipschitz" if self.dimension == 1 else "constant"
        if self.comparator not in ("lipschitz", "constant"):
            raise ConfigError("comparator must be 'lipschitz' or 'constant'")
        if self.loss_column not in ("realized", "expected"):
            raise ConfigError("loss_column must be 'realized' or 'expected'")
        if self.comparator_resolution < 1 or self.dictionary_bins < 1:
            raise ConfigError("resolutions must be positive")

    @property
    def feedback(self) -> FeedbackModel:
        return ALGORITHMS[self.algorithm]

    def environment(self) -> EnvironmentSpec:
        return EnvironmentSpec(self.kind, self.dimension, self.horizon, self.seed, dict(self.env_params))

    def with_overrides(self, **kw: Any) -> "ExperimentConfig":
        return dataclasses.replace(self, **{k: v for k, v in kw.items() if v is not None})


_SECTION = "experiment"
_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig) if f.name != "env_params"}


def _coerce(key: str, raw: str) -> Any:
    kind = _FIELD_TYPES.get(key)
    try:
        if key in ENV_PARAM_KEYS:
            return float(raw)
        if kind in ("int", "int | None"):
            return int(raw)
        if kind == "float | None":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str  # keep keys case-sensitive
    try:
        parser.read_string(f"[{_SECTION}]\n{text}", source="config")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}".replace("\n", " ")) from exc
    if parser.sections() != [_SECTION]:
        raise ConfigError("section headers are not allowed; use flat key = value lines")
    values: dict[str, Any] = {}
    env: dict[str, float] = {}
    for key, raw in parser[_SECTION].items():
        if key in ENV_PARAM_KEYS:
            env[key] = _coerce(key, raw)
        elif key in _FIELD_TYPES:
            values[key] = _coerce(key, raw)
        else:
            raise ConfigError(f"unknown key {key!r}")
    for required in ("algorithm", "horizon"):
        if required not in values:
            raise ConfigError(f"missing required key {required!r}")
    return ExperimentConfig(**values, env_params=env)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise HarnessIOError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


# ---------------------------------------------------------------------------
# Learners
# ---------------------------------------------------------------------------


def make_learner(cfg: ExperimentConfig):
    T, d = cfg.horizon, cfg.dimension
    name = cfg.algorithm
    if name == "contextual-exp3":
        return ContextualExp3(T, d, cfg.epsilon)
    if name == "contextual-rtb":
        return ContextualRTB(T, d, cfg.epsilon)
    if name == "exp3-rtb":
        return ContextFreeRTB(cfg.gamma if cfg.gamma is not None else T**-0.5)
    if name == "hier-exp4-star":
        return HierExp4Star(T, d, depth=cfg.depth)
    dictionary = FunctionDictionary.canonical(cfg.dictionary_bins, d)
    if name == "hier-exp4":
        return HierExp4(dictionary, T, cfg.gamma, cfg.depth)
    return HierHedge(dictionary, T, cfg.epsilon, cfg.depth)


# ---------------------------------------------------------------------------
# Comparators
# ---------------------------------------------------------------------------


@dataclass
class ComparatorResult:
    total: float
    per_round: np.ndarray

    @property
    def prefix(self) -> np.ndarray:
        return np.cumsum(self.per_round)


def best_constant(trace: EnvironmentTrace, resolution: int, chunk: int = 256) -> ComparatorResult:
    cands = np.linspace(0.0, 1.0, 4 * resolution + 1)
    if trace.is_auction:
        # the summed auction loss jumps only at top bids, so they complete the search
        cands = np.unique(np.concatenate([cands, trace.breakpoints()]))
    best, arg = math.inf, 0.0
    for s in range(0, len(cands), chunk):
        sums = trace.loss_matrix(cands[s:s + chunk]).sum(axis=0)
        k = int(np.argmin(sums))
        if sums[k] < best:
            best, arg = float(sums[k]), float(cands[s + k])
    per_round = trace.loss_matrix(np.array([arg]))[:, 0]
    return ComparatorResult(float(per_round.sum()), per_round)


def lipschitz_dp_1d(trace: EnvironmentTrace, resolution: int) -> ComparatorResult:
    """Best discretely-Lipschitz policy on ``resolution`` context bins.

    Actions live on a grid of step ``1 / (4 * resolution)`` and neighbouring
    bins may differ by at most one bin width.
    """
    R = resolution
    actions = np.linspace(0.0, 1.0, 4 * R + 1)
    bins = np.minimum((trace.contexts[:, 0] * R).astype(np.int64), R - 1)
    losses = trace.loss_matrix(actions)
    cost = np.zeros((R, len(actions)))
    np.add.at(cost, bins, losses)
    total, path = kernels.lipschitz_dp(cost, 4)
    per_round = losses[np.arange(len(bins)), path[bins]]
    return ComparatorResult(float(per_round.sum()), per_round)


def lipschitz_bruteforce(trace: EnvironmentTrace, resolution: int, max_bins: int = 6, budget: int = 1_000_000) -> ComparatorResult:
    """Exhaustive search over Lipschitz bin-to-action assignments for d >= 2."""
    R = resolution
    coords = np.minimum((trace.contexts * R).astype(np.int64), R - 1)
    occupied, bin_of = np.unique(coords, axis=0, return_inverse=True)
    bin_of = bin_of.reshape(-1)
    k = len(occupied)
    actions = np.linspace(0.0, 1.0, R + 1)
    if k > max_bins or len(actions) ** k > budget:
        raise TooLarge(f"{k} occupied bins with {len(actions)} actions exceeds the search budget")
    losses = trace.loss_matrix(actions)
    cost = np.zeros((k, len(actions)))
    np.add.at(cost, bin_of, losses)
    centers = (occupied + 0.5) / R
    limit = np.max(np.abs(centers[:, None, :] - centers[None, :, :]), axis=2)
    best, best_assign = math.inf, None
    for assign in itertools.product(range(len(actions)), repeat=k):
        vals = actions[list(assign)]
        if np.any(np.abs(vals[:, None] - vals[None, :]) > limit + 1e-12):
            continue
        c = float(cost[np.arange(k), assign].sum())
        if c < best:
            best, best_assign = c, assign
    per_round = losses[np.arange(len(bin_of)), np.asarray(best_assign)[bin_of]]
    return ComparatorResult(float(per_round.sum()), per_round)


def comparator_value(trace: EnvironmentTrace, cls: str, resolution: int) -> ComparatorResult:
    if cls == "constant":
        return best_constant(trace, resolution)
    if cls != "lipschitz":
        raise ValueError(f"unknown comparator class {cls!r}")
    if trace.contexts.shape[1] == 1:
        return lipschitz_dp_1d(trace, resolution)
    return lipschitz_bruteforce(trace, resolution)


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


@dataclass
class RegretTrace:
    replicate: int
    loss: np.ndarray
    expected_loss: np.ndarray
    action: np.ndarray
    comparator_cum: np.ndarray
    violations: int = 0
    column: str = "realized"

    @property
    def chosen(self) -> np.ndarray:
        return self.loss if self.column == "realized" else self.expected_loss

    @property
    def cum_loss(self) -> np.ndarray:
        return np.cumsum(self.chosen)

    @property
    def regret(self) -> np.ndarray:
        return self.cum_loss - self.comparator_cum

    @property
    def final_regret(self) -> float:
        return float(self.regret[-1])

    @property
    def final_expected_regret(self) -> float:
        return float(np.sum(self.expected_loss) - self.comparator_cum[-1])


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    comparator: ComparatorResult
    traces: list[RegretTrace]


def run_replicate(cfg: ExperimentConfig, trace: EnvironmentTrace, comparator: ComparatorResult, r: int) -> RegretTrace:
    learner = make_learner(cfg)
    rng = RandomSource(cfg.seed).split(r)
    grid_losses = trace.loss_matrix(learner.grid.values)
    T = len(trace)
    loss = np.empty(T)
    expected = np.empty(T)
    action = np.empty(T)
    violations = 0
    model = cfg.feedback
    for t in range(T):
        guard = GuardedFeedback(model, trace.loss(t))
        play = learner.round(trace.contexts[t], rng, guard)
        violations += guard.violations
        loss[t] = grid_losses[t, play.index]
        expected[t] = float(play.probs @ grid_losses[t])
        action[t] = play.value
    return RegretTrace(r, loss, expected, action, comparator.prefix, violations, cfg.loss_column)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    trace = generate_environment(cfg.environment())
    comparator = comparator_value(trace, cfg.comparator, cfg.comparator_resolution)
    traces = [run_replicate(cfg, trace, comparator, r) for r in range(cfg.replicates)]
    return ExperimentResult(cfg, comparator, traces)


def _fmt(v: float) -> str:
    return f"{v:.12g}"


def format_csv(traces: list[RegretTrace]) -> str:
    if not traces:
        raise ValueError("no traces to write")
    parts = [CSV_HEADER]
    for tr in traces:
        cum = tr.cum_loss
        for t in range(len(tr.loss)):
            parts.append(
                f"{t + 1},{tr.replicate},{_fmt(tr.chosen[t])},{_fmt(cum[t])},"
                f"{_fmt(tr.comparator_cum[t])},{_fmt(cum[t] - tr.comparator_cum[t])}"
            )
    return "\n".join(parts) + "\n"


def emit_csv(traces: list[RegretTrace], path: str | os.PathLike) -> Path:
    path = Path(path)
    text = format_csv(traces)
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise HarnessIOError(f"cannot write {path}: {exc}") from exc
    return path
