"""Time the compiled kernels against the numpy fallback on realistic inputs.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--bins B]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from chainbench import _kernels_py
from chainbench.chaining import FunctionDictionary, HierExp4

try:
    from chainbench import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def _best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def _cases(bins: int):
    learner = HierExp4(FunctionDictionary.canonical(bins), 4096)
    arrays = learner._arrays
    gen = np.random.default_rng(0)
    n = learner.tree.n_nodes
    cum = gen.random(n) * 10
    eta = learner.cap.copy()
    actions = learner.leaf_actions([0.4])
    q, _, _ = _kernels_py.tree_forward(*arrays, cum, eta, actions, learner.grid.count)
    losses = gen.normal(size=n)
    cost = gen.random((64, 257))
    table = np.ascontiguousarray(FunctionDictionary.canonical(min(bins, 6)).table)

    def forward(mod):
        return lambda: mod.tree_forward(*arrays, cum, eta, actions, learner.grid.count)

    def propagate(mod):
        return lambda: mod.tree_propagate(*arrays, q, losses.copy())

    def update(mod):
        return lambda: mod.tree_update(*arrays, q, losses, cum.copy(), eta.copy(), np.zeros(n), learner.cap)

    def dp(mod):
        return lambda: mod.lipschitz_dp(cost, 4)

    def farthest(mod):
        return lambda: mod.farthest_point(table)

    return n, {
        "tree_forward": forward,
        "tree_propagate": propagate,
        "tree_update": update,
        "lipschitz_dp (64x257)": dp,
        f"farthest_point ({len(table)} members)": farthest,
    }


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--bins", type=int, default=8, help="canonical dictionary bins for the tree kernels")
    args = parser.parse_args(argv)

    n, cases = _cases(args.bins)
    print(f"tree with {n} nodes (canonical dictionary, {args.bins} bins); best of {args.repeat}")
    print(f"{'kernel':34s} {'python [ms]':>12s} {'compiled [ms]':>14s} {'speedup':>8s}")
    for name, make in cases.items():
        py = _best_of(make(_kernels_py), args.repeat) * 1e3
        if _compiled is None:
            print(f"{name:34s} {py:12.3f} {'n/a':>14s} {'':>8s}")
            continue
        cc = _best_of(make(_compiled), args.repeat) * 1e3
        print(f"{name:34s} {py:12.3f} {cc:14.3f} {py / cc:7.1f}x")


if __name__ == "__main__":
    main()
