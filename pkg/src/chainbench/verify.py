"""Fast invariant checks run by ``chainbench verify``."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .chaining import FunctionDictionary, build_covering_tree
from .chaining_efficient import (
    active_exp4_total,
    activate_path,
    exp4_node_total,
    iter_exp4_nodes,
    star_schedule,
    wavelet_eval,
    wavelet_fit,
)
from .core import audit_violations
from .experts import (
    exp3rtb_estimates,
    exp4_penalized_estimates,
    exp4_range_estimates,
    hedge_distribution,
)
from .harness import ExperimentConfig, format_csv, run_experiment

Check = Callable[[np.random.Generator], tuple[bool, str]]


def random_lipschitz(gen: np.random.Generator, d: int) -> Callable[[np.ndarray], np.ndarray]:
    """A random 1-Lipschitz map ``[0,1]^d -> [0,1]`` under the sup norm."""
    kind = gen.integers(3)
    if kind == 0:
        c = gen.random(d)
        h = gen.random()
        s = gen.choice([-1.0, 1.0])
        return lambda x: np.clip(h + s * np.max(np.abs(x - c), axis=-1), 0.0, 1.0)
    if kind == 1:
        w = gen.normal(size=d)
        w /= max(1.0, np.abs(w).sum())
        b = gen.random()
        return lambda x: np.clip(b + (x - 0.5) @ w, 0.0, 1.0)
    f, g = random_lipschitz(gen, d), random_lipschitz(gen, d)
    op = np.maximum if gen.random() < 0.5 else np.minimum
    return lambda x: op(f(x), g(x))


def random_support_state(gen: np.random.Generator, K: int):
    q = gen.dirichlet(np.ones(K))
    support = np.sort(gen.choice(K, size=gen.integers(1, K + 1), replace=False))
    return q, support


def check_hedge(gen: np.random.Generator, instances: int = 200) -> tuple[bool, str]:
    fails = 0
    for _ in range(instances):
        N = int(gen.integers(1, 9))
        T = int(gen.integers(1, 65))
        L = gen.random((T, N)) * gen.uniform(0.1, 3.0)
        etas = np.sort(gen.uniform(0.01, 2.0, T))[::-1]
        cum = np.zeros(N)
        alg, second = 0.0, 0.0
        for t in range(T):
            p = hedge_distribution(cum, etas[t])
            alg += p @ L[t]
            second += etas[t] * (p @ L[t] ** 2)
            cum += L[t]
        bound = math.log(N) / etas[-1] + 0.5 * second
        if alg - cum.min() > bound + 1e-9:
            fails += 1
    return fails == 0, f"{fails} failures over {instances} instances"


def check_estimators(gen: np.random.Generator, states: int = 50) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(states):
        K = int(gen.integers(1, 9))
        q, support = random_support_state(gen, K)
        cdf = np.cumsum(q)
        cdf[-1] = 1.0
        ell = gen.random(K)
        E, alpha = gen.uniform(1.0, 4.0), gen.uniform(0.0, 1.0)
        gamma = q[0]
        anchor = ell[support.max()]
        mean_rtb = np.zeros(K)
        mean_rng = np.zeros(K)
        mean_pen = np.zeros(K)
        for i in range(K):
            obs = np.where(np.arange(K) >= i, ell, np.nan)
            mean_rtb += q[i] * exp3rtb_estimates(obs, q, i)
            mean_rng += q[i] * exp4_range_estimates(obs, support, cdf, i)
            mean_pen += q[i] * exp4_penalized_estimates(obs, support, cdf, i, E, alpha, gamma)
        worst = max(worst, np.max(np.abs(mean_rtb - ell)))
        worst = max(worst, np.max(np.abs(mean_rng[support] - (ell[support] - anchor))))
        target = ell[support] - anchor + E - alpha / cdf[support] + alpha / gamma
        worst = max(worst, np.max(np.abs(mean_pen[support] - target)))
    return worst <= 1e-10, f"max deviation {worst:.3g}"


def check_wavelet(gen: np.random.Generator, functions: int = 40) -> tuple[bool, str]:
    fails = 0
    for _ in range(functions):
        d = int(gen.integers(1, 3))
        M = int(gen.integers(1, 7))
        f = random_lipschitz(gen, d)
        pts = gen.random((2000, d))
        err = np.max(np.abs(wavelet_eval(wavelet_fit(f, d, M), pts) - f(pts)))
        fails += err > 2.0**-M + 1e-12
    return fails == 0, f"{fails} failures over {functions} functions"


def check_tree(gen: np.random.Generator) -> tuple[bool, str]:
    dictionary = FunctionDictionary.canonical(4, 1)
    worst = -np.inf
    for M in range(0, 5):
        tree = build_covering_tree(dictionary, M)
        slack = tree.leaf_spread(dictionary.table) - 2.0 ** (2.0 - tree.level)
        worst = max(worst, float(slack.max()))
    return worst <= 1e-12, f"max leaf spread minus bound {worst:.3g}"


def check_star_counts(gen: np.random.Generator) -> tuple[bool, str]:
    for d in (1, 2):
        for M in (1, 2, 3):
            if sum(1 for _ in iter_exp4_nodes(M, d)) != exp4_node_total(M, d):
                return False, f"total count mismatch at d={d}, M={M}"
            if len(activate_path(gen.random(d), M)) != active_exp4_total(M):
                return False, f"active count mismatch at d={d}, M={M}"
    return True, "node counts match"


def check_schedule(gen: np.random.Generator) -> tuple[bool, str]:
    worst = 0.0
    for T in (3, 100, 4096, 10**6):
        for d in range(1, 7):
            s = star_schedule(T, d)
            for m in range(1, s.depth + 1):
                worst = max(worst, abs(s.alpha[m - 1] - s.alpha[m] - 2.0 ** (4 - 2 * m) * s.eta[m]))
    return worst <= 1e-12, f"max recursion error {worst:.3g}"


def check_discipline(gen: np.random.Generator) -> tuple[bool, str]:
    with audit_violations() as scope:
        for algo, kind in (
            ("contextual-exp3", "lipschitz-synthetic"),
            ("contextual-rtb", "auction-iid"),
            ("exp3-rtb", "auction-adversarial"),
            ("hier-exp4", "auction-iid"),
            ("hier-hedge", "lipschitz-synthetic"),
        ):
            run_experiment(ExperimentConfig(algo, 64, kind=kind, comparator="constant", dictionary_bins=4))
        run_experiment(ExperimentConfig("hier-exp4-star", 64, depth=3, comparator="constant"))
    return scope.count == 0, f"{scope.count} violations"


def check_determinism(gen: np.random.Generator) -> tuple[bool, str]:
    cfg = ExperimentConfig("hier-exp4", 64, replicates=2, seed=7, dictionary_bins=4)
    a = format_csv(run_experiment(cfg).traces)
    b = format_csv(run_experiment(cfg).traces)
    return a == b, "identical CSV" if a == b else "CSV differs"


CHECKS: dict[str, Check] = {
    "hedge-inequality": check_hedge,
    "estimator-unbiasedness": check_estimators,
    "wavelet-approximation": check_wavelet,
    "covering-tree-geometry": check_tree,
    "star-node-counts": check_star_counts,
    "schedule-identities": check_schedule,
    "feedback-discipline": check_discipline,
    "determinism": check_determinism,
}


def run_checks(seed: int = 0) -> list[tuple[str, bool, str]]:
    results = []
    for name, check in CHECKS.items():
        ok, detail = check(np.random.default_rng([seed, len(results)]))
        results.append((name, bool(ok), detail))
    return results
