# Compiled hot loops for the covering-tree learners and the comparator DP.
# Node arrays are ordered level by level with each node's children contiguous,
# so a forward sweep visits parents before children.

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, log, INFINITY

cnp.import_array()

cdef double RATE_CONST = 2.0 * (sqrt(2.0) - 1.0) / (2.718281828459045 - 2.0)

IMPLEMENTATION = "compiled"


def tree_forward(const long long[:] parent, const long long[:] child_start,
                 const long long[:] child_count, const long long[:] level_start,
                 const double[:] cum, const double[:] eta,
                 const long long[:] leaf_action, long long n_actions):
    cdef Py_ssize_t n = cum.shape[0]
    cdef Py_ssize_t v, w, s, e
    cdef double lo, tot, rate
    q_arr = np.ones(n)
    prob_arr = np.zeros(n)
    p_arr = np.zeros(n_actions)
    cdef double[:] q = q_arr
    cdef double[:] prob = prob_arr
    cdef double[:] p = p_arr
    prob[0] = 1.0
    for v in range(n):
        e = child_count[v]
        if e == 0:
            p[leaf_action[v]] += prob[v]
            continue
        s = child_start[v]
        e = s + e
        rate = eta[v]
        lo = INFINITY
        for w in range(s, e):
            if cum[w] < lo:
                lo = cum[w]
        tot = 0.0
        for w in range(s, e):
            q[w] = exp(-rate * (cum[w] - lo))
            tot += q[w]
        for w in range(s, e):
            q[w] /= tot
            prob[w] = prob[v] * q[w]
    return q_arr, prob_arr, p_arr


def tree_propagate(const long long[:] parent, const long long[:] child_start,
                   const long long[:] child_count, const long long[:] level_start,
                   const double[:] q, double[:] vals):
    cdef Py_ssize_t v, w, s, e
    cdef double acc
    for v in range(vals.shape[0] - 1, -1, -1):
        e = child_count[v]
        if e == 0:
            continue
        s = child_start[v]
        acc = 0.0
        for w in range(s, s + e):
            acc += q[w] * vals[w]
        vals[v] = acc
    return np.asarray(vals)


def tree_propagate_max(const long long[:] parent, const long long[:] child_start,
                       const long long[:] child_count, const long long[:] level_start,
                       long long[:] vals):
    cdef Py_ssize_t v, w, s, e
    cdef long long best
    for v in range(vals.shape[0] - 1, -1, -1):
        e = child_count[v]
        if e == 0:
            continue
        s = child_start[v]
        best = vals[s]
        for w in range(s + 1, s + e):
            if vals[w] > best:
                best = vals[w]
        vals[v] = best
    return np.asarray(vals)


def tree_update(const long long[:] parent, const long long[:] child_start,
                const long long[:] child_count, const long long[:] level_start,
                const double[:] q, const double[:] losses, double[:] cum,
                double[:] eta, double[:] variance, const double[:] cap):
    cdef Py_ssize_t v, w, s, e
    cdef double mean, var, rate
    for v in range(cum.shape[0]):
        e = child_count[v]
        if e == 0:
            continue
        s = child_start[v]
        if e == 1:
            cum[s] += losses[s]
            continue
        mean = 0.0
        for w in range(s, s + e):
            mean += q[w] * losses[w]
        var = 0.0
        for w in range(s, s + e):
            var += q[w] * (losses[w] - mean) * (losses[w] - mean)
            cum[w] += losses[w]
        variance[v] += var
        rate = cap[v]
        if variance[v] > 0.0:
            rate = min(rate, sqrt(RATE_CONST * log(<double>e) / variance[v]))
        if rate < eta[v]:
            eta[v] = rate


def lipschitz_dp(const double[:, :] cost, long long window):
    """Minimum of sum_b cost[b, a_b] subject to |a_b - a_{b+1}| <= window."""
    cdef Py_ssize_t B = cost.shape[0], n = cost.shape[1]
    cdef Py_ssize_t b, a, j, lo, hi, arg
    cdef double best
    value_arr = np.empty(n)
    nxt_arr = np.empty(n)
    choice_arr = np.empty((B, n), dtype=np.int64)
    cdef double[:] value = value_arr
    cdef double[:] nxt = nxt_arr
    cdef long long[:, :] choice = choice_arr
    for a in range(n):
        value[a] = cost[0, a]
        choice[0, a] = a
    for b in range(1, B):
        for a in range(n):
            lo = a - window if a >= window else 0
            hi = a + window if a + window < n else n - 1
            best = value[lo]
            arg = lo
            for j in range(lo + 1, hi + 1):
                if value[j] < best:
                    best = value[j]
                    arg = j
            nxt[a] = best + cost[b, a]
            choice[b, a] = arg
        for a in range(n):
            value[a] = nxt[a]
    path = np.empty(B, dtype=np.int64)
    arg = int(np.argmin(value_arr))
    total = float(value_arr[arg])
    for b in range(B - 1, -1, -1):
        path[b] = arg
        arg = choice[b, arg]
    return total, path


def farthest_point(const double[:, ::1] table):
    """Greedy farthest-point order from row 0 and the covering radius of each prefix."""
    cdef Py_ssize_t n = table.shape[0], g = table.shape[1]
    cdef Py_ssize_t k, i, j, far
    cdef double dist, diff, best
    order_arr = np.empty(n, dtype=np.int64)
    radius_arr = np.empty(n)
    mind_arr = np.full(n, INFINITY)
    cdef long long[:] order = order_arr
    cdef double[:] radius = radius_arr
    cdef double[:] mind = mind_arr
    far = 0
    for k in range(n):
        order[k] = far
        best = -1.0
        for i in range(n):
            dist = 0.0
            for j in range(g):
                diff = table[i, j] - table[far, j]
                if diff < 0:
                    diff = -diff
                if diff > dist:
                    dist = diff
            if dist < mind[i]:
                mind[i] = dist
        for i in range(n):
            if mind[i] > best:
                best = mind[i]
                far = i
        radius[k] = best
    return order_arr, radius_arr
