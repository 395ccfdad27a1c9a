"""Covering trees over a finite function dictionary and the chaining learners on them.

A tree of depth ``M`` has one node per member of each level's net; level ``m``
is a ``2^-m`` cover of the dictionary in sup norm.  Nodes are stored in flat
arrays ordered level by level, with the children of every node contiguous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Hashable, Sequence

import numpy as np

from . import kernels
from .core import ActionGrid, GuardedFeedback, Play, RandomSource, as_context

LEMMA_TOL = 1e-12


class CoverTooCoarse(Exception):
    """A net failed to cover the dictionary at its level's radius."""


# ---------------------------------------------------------------------------
# Dictionaries
# ---------------------------------------------------------------------------


class FunctionDictionary:
    """Finite set of policies ``[0,1]^d -> [0,1]``.

    ``table`` holds every member's values on the evaluation grid and is what
    sup-norm distances are computed from.
    """

    def __init__(self, table: np.ndarray, evaluator: Callable[[np.ndarray], np.ndarray], d: int, key: Hashable):
        self.table = np.asarray(table, dtype=float)
        self._evaluator = evaluator
        self.d = d
        self.key = key

    def __len__(self) -> int:
        return self.table.shape[0]

    def evaluate(self, x) -> np.ndarray:
        """Values of every member at context ``x``."""
        return self._evaluator(as_context(x))

    def distance(self, i: int, j: int) -> float:
        return float(np.max(np.abs(self.table[i] - self.table[j])))

    @classmethod
    def from_callables(cls, fns: Sequence[Callable[[np.ndarray], float]], d: int, resolution: int) -> "FunctionDictionary":
        axis = np.linspace(0.0, 1.0, resolution)
        points = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
        table = np.array([[f(p) for p in points] for f in fns], dtype=float)
        _, first = np.unique(table, axis=0, return_index=True)
        keep = np.sort(first)
        kept = [fns[i] for i in keep]

        def evaluator(x: np.ndarray) -> np.ndarray:
            return np.array([f(x) for f in kept], dtype=float)

        return cls(table[keep], evaluator, d, ("callables", id(fns), d, resolution))

    @classmethod
    def canonical(cls, bins: int = 8, d: int = 1) -> "FunctionDictionary":
        """Piecewise-linear functions of the coordinate mean.

        Knots sit at the bin centres ``(k + 1/2)/bins`` with values in
        ``{0, 1/bins, ..., 1}`` and adjacent knots differ by at most
        ``1/bins``, so every member is 1-Lipschitz in sup norm.  Outside the
        outer knots the function is constant.
        """
        if bins < 1:
            raise ValueError("bins must be positive")
        seqs = np.arange(bins + 1, dtype=np.int64)[:, None]
        for _ in range(bins - 1):
            last = seqs[:, -1]
            ext = []
            for step in (-1, 0, 1):
                nxt = last + step
                ok = (nxt >= 0) & (nxt <= bins)
                ext.append(np.hstack([seqs[ok], nxt[ok, None]]))
            seqs = np.vstack(ext)
        order = np.lexsort(seqs.T[::-1])
        table = seqs[order] / bins
        knots = (np.arange(bins) + 0.5) / bins

        def evaluator(x: np.ndarray) -> np.ndarray:
            u = float(np.mean(x))
            if bins == 1 or u <= knots[0]:
                return table[:, 0].copy()
            if u >= knots[-1]:
                return table[:, -1].copy()
            pos = (u - knots[0]) * bins
            j = min(int(pos), bins - 2)
            w = pos - j
            return (1.0 - w) * table[:, j] + w * table[:, j + 1]

        return cls(table, evaluator, d, ("canonical", bins, d))


# ---------------------------------------------------------------------------
# Covering tree
# ---------------------------------------------------------------------------


def _sup_rows(table: np.ndarray, rows: np.ndarray, cols: np.ndarray, chunk: int = 1 << 22) -> np.ndarray:
    """Sup distances between ``table[rows]`` and ``table[cols]``, as a matrix."""
    out = np.empty((len(rows), len(cols)))
    g = table.shape[1]
    step = max(1, chunk // max(1, len(cols) * g))
    tc = table[cols]
    for s in range(0, len(rows), step):
        tr = table[rows[s:s + step]]
        out[s:s + step] = np.max(np.abs(tr[:, None, :] - tc[None, :, :]), axis=2)
    return out


def farthest_point_order(table: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Greedy farthest-point traversal starting from member 0.

    Returns the order and ``radius[k]``, the covering radius of the first
    ``k + 1`` members of the order.  Ties go to the lowest member index.
    """
    return kernels.farthest_point(np.ascontiguousarray(table, dtype=float))


@dataclass
class CoveringTree:
    depth: int
    label: np.ndarray  # dictionary member of each node
    level: np.ndarray
    parent: np.ndarray
    child_start: np.ndarray
    child_count: np.ndarray
    level_start: np.ndarray  # nodes of level m are level_start[m]:level_start[m+1]

    @property
    def n_nodes(self) -> int:
        return len(self.label)

    @property
    def leaves(self) -> slice:
        return slice(int(self.level_start[self.depth]), int(self.level_start[self.depth + 1]))

    def nodes_at(self, m: int) -> np.ndarray:
        return np.arange(self.level_start[m], self.level_start[m + 1])

    def children(self, v: int) -> np.ndarray:
        s = int(self.child_start[v])
        return np.arange(s, s + int(self.child_count[v]))

    def leaf_spread(self, table: np.ndarray) -> np.ndarray:
        """Max sup distance between two leaves below each node."""
        hi = np.full((self.n_nodes, table.shape[1]), -np.inf)
        lo = np.full((self.n_nodes, table.shape[1]), np.inf)
        lv = self.leaves
        hi[lv] = table[self.label[lv]]
        lo[lv] = table[self.label[lv]]
        for v in range(self.level_start[self.depth] - 1, -1, -1):
            kids = self.children(v)
            hi[v] = hi[kids].max(axis=0)
            lo[v] = lo[kids].min(axis=0)
        return np.max(hi - lo, axis=1)

    def dump(self) -> str:
        lines = ["node\tlevel\tparent\tlabel"]
        for v in range(self.n_nodes):
            lines.append(f"{v}\t{self.level[v]}\t{self.parent[v]}\t{self.label[v]}")
        return "\n".join(lines) + "\n"


_TREE_CACHE: dict[tuple, CoveringTree] = {}
_ORDER_CACHE: dict[Hashable, tuple[np.ndarray, np.ndarray]] = {}


def build_covering_tree(dictionary: FunctionDictionary, depth: int, use_cache: bool = True) -> CoveringTree:
    if len(dictionary) == 0:
        raise ValueError("dictionary is empty")
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    key = (dictionary.key, depth)
    if use_cache and key in _TREE_CACHE:
        return _TREE_CACHE[key]
    table = dictionary.table
    if use_cache and dictionary.key in _ORDER_CACHE:
        order, radius = _ORDER_CACHE[dictionary.key]
    else:
        order, radius = farthest_point_order(table)
        _ORDER_CACHE[dictionary.key] = (order, radius)

    levels: list[np.ndarray] = []
    parents: list[np.ndarray] = []
    for m in range(depth + 1):
        r = 2.0**-m
        size = int(np.argmax(radius <= r + LEMMA_TOL)) + 1
        if radius[size - 1] > r + LEMMA_TOL:
            raise CoverTooCoarse(f"level {m} net has radius {radius[size - 1]} > {r}")
        net = order[:size]
        if m == 0:
            if size != 1:
                raise CoverTooCoarse(f"dictionary diameter {radius[0]} exceeds 1, so the root cannot cover it")
            levels.append(net.copy())
            parents.append(np.array([-1]))
            continue
        prev = levels[-1]
        pos_in_prev = {int(f): i for i, f in enumerate(prev)}
        par = np.empty(size, dtype=np.int64)
        fresh = []
        for i, f in enumerate(net):
            if int(f) in pos_in_prev:
                par[i] = pos_in_prev[int(f)]
            else:
                fresh.append(i)
        if fresh:
            fresh_arr = np.array(fresh)
            dist = _sup_rows(table, net[fresh_arr], prev)
            par[fresh_arr] = np.argmin(dist, axis=1)  # lowest node index on ties
            if np.any(dist.min(axis=1) > 2.0 ** -(m - 1) + LEMMA_TOL):
                raise CoverTooCoarse(f"level {m} node farther than {2.0 ** -(m - 1)} from its parent")
        srt = np.argsort(par, kind="stable")
        levels.append(net[srt])
        parents.append(par[srt])

    sizes = np.array([len(lv) for lv in levels])
    level_start = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    n = int(level_start[-1])
    label = np.concatenate(levels).astype(np.int64)
    level = np.repeat(np.arange(depth + 1), sizes).astype(np.int64)
    parent = np.full(n, -1, dtype=np.int64)
    child_start = np.zeros(n, dtype=np.int64)
    child_count = np.zeros(n, dtype=np.int64)
    for m in range(1, depth + 1):
        glob = parents[m] + level_start[m - 1]
        parent[level_start[m]:level_start[m + 1]] = glob
        counts = np.bincount(parents[m], minlength=sizes[m - 1])
        child_count[level_start[m - 1]:level_start[m]] = counts
        child_start[level_start[m - 1]:level_start[m]] = level_start[m] + np.concatenate([[0], np.cumsum(counts)[:-1]])
    tree = CoveringTree(depth, label, level, parent, child_start, child_count, level_start)

    spread = tree.leaf_spread(table)
    bound = 2.0 ** (-level.astype(float) + 2)
    if np.any(spread > bound + LEMMA_TOL):
        raise CoverTooCoarse("leaf spread exceeds 2^(2-m) at some node")
    if use_cache:
        _TREE_CACHE[key] = tree
    return tree


def leaf_recommend(value: float, grid: ActionGrid) -> int:
    return grid.nearest(value)


# ---------------------------------------------------------------------------
# Default tuning
# ---------------------------------------------------------------------------


def hierexp4_gamma(T: int, d: int) -> float:
    if d == 1:
        g = T ** (-1.0 / 3.0)
    elif d == 2:
        g = T ** (-1.0 / 3.0) * math.log(T) ** (2.0 / 3.0)
    else:
        g = T ** (-1.0 / (d + 1))
    return min(g, 1.0)


def hierhedge_epsilon(T: int, d: int) -> float:
    if d <= 2:
        return T**-0.5
    return (1.0 / T) ** (1.0 / d)


def depth_for(scale: float) -> int:
    """``floor(log2(1/scale))`` clamped at zero, robust to float noise."""
    return max(0, int(math.floor(math.log2(1.0 / scale) + 1e-9)))


# ---------------------------------------------------------------------------
# Learners
# ---------------------------------------------------------------------------


class _TreeLearner:
    def __init__(self, dictionary: FunctionDictionary, depth: int, caps: np.ndarray):
        self.dictionary = dictionary
        self.tree = build_covering_tree(dictionary, depth)
        self.grid = ActionGrid.dyadic(depth)
        t = self.tree
        self._arrays = (t.parent, t.child_start, t.child_count, t.level_start)
        n = t.n_nodes
        self.cum = np.zeros(n)
        self.variance = np.zeros(n)
        self.cap = caps[t.level].astype(float)
        self.eta = self.cap.copy()
        self._leaf_labels = t.label[t.leaves]

    def leaf_actions(self, x) -> np.ndarray:
        vals = self.dictionary.evaluate(x)[self._leaf_labels]
        actions = np.zeros(self.tree.n_nodes, dtype=np.int64)
        actions[self.tree.leaves] = self.grid.nearest(vals)
        return actions

    def forward(self, actions: np.ndarray):
        return kernels.tree_forward(*self._arrays, self.cum, self.eta, actions, self.grid.count)

    def node_distribution(self, v: int, q: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """``p_t(v, .)`` for one node, by walking its subtree (diagnostics only)."""
        t = self.tree
        p = np.zeros(self.grid.count)
        stack = [(v, 1.0)]
        while stack:
            u, mass = stack.pop()
            if t.child_count[u] == 0:
                p[actions[u]] += mass
            else:
                for w in t.children(u):
                    stack.append((int(w), mass * q[w]))
        return p


class HierExp4(_TreeLearner):
    """Chaining with one-sided feedback: Exp4 at every internal node of the tree."""

    def __init__(self, dictionary: FunctionDictionary, T: int, gamma: float | None = None, depth: int | None = None):
        self.gamma = hierexp4_gamma(T, dictionary.d) if gamma is None else gamma
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        depth = depth_for(self.gamma) if depth is None else depth
        # range of level-m estimates is E = 2^(3-m); cap gamma / (2E)
        caps = self.gamma * 2.0 ** (np.arange(depth + 1) - 4.0)
        super().__init__(dictionary, depth, caps)
        self.last_plan: dict | None = None

    def root_mixture(self, p_root: np.ndarray) -> np.ndarray:
        pstar = (1.0 - self.gamma) * p_root
        pstar[0] += self.gamma
        return pstar

    def round(self, x, rng: RandomSource, guard: GuardedFeedback) -> Play:
        actions = self.leaf_actions(x)
        q, _, p_root = self.forward(actions)
        pstar = self.root_mixture(p_root)
        k = rng.categorical(pstar)
        value = self.grid.value(k)
        guard.record_play(value, k)
        losses = np.full(self.grid.count, np.nan)
        losses[k:] = guard.query_many(self.grid.values[k:])
        self.update(q, actions, pstar, k, losses)
        return Play(k, value, pstar)

    def expert_losses(self, q, actions, pstar, played, losses):
        """Per-node expert losses from one bottom-up pass over the tree.

        With ``A(w) = sum_i p(w,i) l(i) 1{I<=i} / P*(i)`` and
        ``B(w) = sum_i p(w,i) 1{I<=i} / P*(i)`` the Exp4 expert loss of child
        ``w`` of ``v`` is ``A(w) - l(j_v) B(w)``, where ``j_v`` is the largest
        action recommended below ``v``.  If ``j_v < I`` both sums vanish.
        """
        t = self.tree
        cdf = np.cumsum(pstar)
        lv = t.leaves
        a = actions[lv]
        live = a >= played
        A = np.zeros(t.n_nodes)
        B = np.zeros(t.n_nodes)
        inv = np.where(live, 1.0 / cdf[a], 0.0)
        B[lv] = inv
        A[lv] = np.where(live, np.nan_to_num(losses[a]) * inv, 0.0)
        kernels.tree_propagate(*self._arrays, q, A)
        kernels.tree_propagate(*self._arrays, q, B)
        anchor = kernels.tree_propagate_max(*self._arrays, actions.copy())
        anchor_loss = np.where(anchor >= played, np.nan_to_num(losses[anchor]), 0.0)
        tilde = np.zeros(t.n_nodes)
        tilde[1:] = A[1:] - anchor_loss[t.parent[1:]] * B[1:]
        return tilde, anchor

    def update(self, q, actions, pstar, played, losses) -> None:
        tilde, anchor = self.expert_losses(q, actions, pstar, played, losses)
        self.last_plan = {"q": q, "actions": actions, "pstar": pstar, "anchor": anchor, "tilde": tilde}
        kernels.tree_update(*self._arrays, q, tilde, self.cum, self.eta, self.variance, self.cap)


class HierHedge(_TreeLearner):
    """Chaining with full information: Hedge at every internal node, true losses."""

    def __init__(self, dictionary: FunctionDictionary, T: int, epsilon: float | None = None, depth: int | None = None):
        self.epsilon = hierhedge_epsilon(T, dictionary.d) if epsilon is None else epsilon
        depth = depth_for(self.epsilon) if depth is None else depth
        # E = 2^(3-m) and no exploration, so the cap is 1/E
        caps = 2.0 ** (np.arange(depth + 1) - 3.0)
        super().__init__(dictionary, depth, caps)

    def round(self, x, rng: RandomSource, guard: GuardedFeedback) -> Play:
        actions = self.leaf_actions(x)
        q, _, p_root = self.forward(actions)
        k = rng.categorical(p_root)
        value = self.grid.value(k)
        guard.record_play(value, k)
        losses = guard.query_many(self.grid.values)
        t = self.tree
        A = np.zeros(t.n_nodes)
        A[t.leaves] = losses[actions[t.leaves]]
        kernels.tree_propagate(*self._arrays, q, A)
        A[0] = 0.0
        kernels.tree_update(*self._arrays, q, A, self.cum, self.eta, self.variance, self.cap)
        return Play(k, value, p_root)
