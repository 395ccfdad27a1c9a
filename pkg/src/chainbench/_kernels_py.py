"""Pure numpy versions of the compiled kernels, vectorised one tree level at a time."""

from __future__ import annotations

import math

import numpy as np

IMPLEMENTATION = "python"

_RATE_CONST = 2.0 * (math.sqrt(2.0) - 1.0) / (math.e - 2.0)


def _levels(level_start):
    for m in range(len(level_start) - 2):
        yield m, level_start[m], level_start[m + 1], level_start[m + 2]


def tree_forward(parent, child_start, child_count, level_start, cum, eta, leaf_action, n_actions):
    n = len(cum)
    q = np.ones(n)
    prob = np.zeros(n)
    prob[0] = 1.0
    for _, lo, hi, end in _levels(level_start):
        starts = child_start[lo:hi] - hi
        kids = cum[hi:end]
        par = parent[hi:end]
        shift = np.minimum.reduceat(kids, starts)
        w = np.exp(-eta[par] * (kids - shift[par - lo]))
        tot = np.add.reduceat(w, starts)
        q[hi:end] = w / tot[par - lo]
        prob[hi:end] = prob[par] * q[hi:end]
    leaves = child_count == 0
    p = np.bincount(leaf_action[leaves], weights=prob[leaves], minlength=n_actions)
    return q, prob, p


def tree_propagate(parent, child_start, child_count, level_start, q, vals):
    levels = list(_levels(level_start))
    for _, lo, hi, end in reversed(levels):
        starts = child_start[lo:hi] - hi
        vals[lo:hi] = np.add.reduceat(q[hi:end] * vals[hi:end], starts)
    return vals


def tree_propagate_max(parent, child_start, child_count, level_start, vals):
    levels = list(_levels(level_start))
    for _, lo, hi, end in reversed(levels):
        starts = child_start[lo:hi] - hi
        vals[lo:hi] = np.maximum.reduceat(vals[hi:end], starts)
    return vals


def tree_update(parent, child_start, child_count, level_start, q, losses, cum, eta, variance, cap):
    for _, lo, hi, end in _levels(level_start):
        starts = child_start[lo:hi] - hi
        par = parent[hi:end]
        ql = q[hi:end] * losses[hi:end]
        mean = np.add.reduceat(ql, starts)
        dev = losses[hi:end] - mean[par - lo]
        var = np.add.reduceat(q[hi:end] * dev * dev, starts)
        cum[hi:end] += losses[hi:end]
        counts = child_count[lo:hi]
        multi = counts > 1
        variance[lo:hi] += np.where(multi, var, 0.0)
        with np.errstate(divide="ignore"):
            term = np.where(
                variance[lo:hi] > 0,
                np.sqrt(_RATE_CONST * np.log(np.maximum(counts, 2)) / np.where(variance[lo:hi] > 0, variance[lo:hi], 1.0)),
                np.inf,
            )
        rate = np.minimum(cap[lo:hi], term)
        eta[lo:hi] = np.where(multi, np.minimum(eta[lo:hi], rate), eta[lo:hi])


def lipschitz_dp(cost, window):
    """Minimum of sum_b cost[b, a_b] subject to |a_b - a_{b+1}| <= window."""
    cost = np.asarray(cost, dtype=float)
    B, n = cost.shape
    value = cost[0].copy()
    choice = np.empty((B, n), dtype=np.int64)
    choice[0] = np.arange(n)
    pad = np.full(n + 2 * window, np.inf)
    idx = np.arange(n)
    for b in range(1, B):
        pad[window:window + n] = value
        views = np.lib.stride_tricks.sliding_window_view(pad, 2 * window + 1)
        off = np.argmin(views, axis=1)  # first minimiser, i.e. lowest index
        arg = idx - window + off
        choice[b] = arg
        value = value[arg] + cost[b]
    path = np.empty(B, dtype=np.int64)
    a = int(np.argmin(value))
    total = float(value[a])
    for b in range(B - 1, -1, -1):
        path[b] = a
        a = choice[b, a]
    return total, path


def farthest_point(table):
    """Greedy farthest-point order from row 0 and the covering radius of each prefix."""
    table = np.asarray(table, dtype=float)
    n = table.shape[0]
    order = np.empty(n, dtype=np.int64)
    radius = np.empty(n)
    mind = np.full(n, np.inf)
    far = 0
    for k in range(n):
        order[k] = far
        mind = np.minimum(mind, np.max(np.abs(table - table[far]), axis=1))
        far = int(np.argmax(mind))
        radius[k] = mind[far]
    return order, radius
