"""numba-compiled kernels. Row loops are ``prange``-parallel; each row writes only
its own output slots, so results do not depend on the thread count."""

import math

import numpy as np
from numba import njit, prange


@njit(cache=True, inline="always")
def _dist(a, b, cosine):
    acc = 0.0
    if cosine:
        for k in range(a.shape[0]):
            acc += a[k] * b[k]
        v = 1.0 - acc
        return v if v > 0.0 else 0.0
    for k in range(a.shape[0]):
        t = a[k] - b[k]
        acc += t * t
    return math.sqrt(acc)


@njit(cache=True, parallel=True)
def nearest_in_support(Q, S, exclude, cosine):
    nq = Q.shape[0]
    idx = np.full(nq, -1, dtype=np.int64)
    dist = np.full(nq, np.inf)
    for i in prange(nq):
        best = np.inf
        bj = -1
        for j in range(S.shape[0]):
            if j == exclude[i]:
                continue
            dj = _dist(Q[i], S[j], cosine)
            if dj < best:
                best = dj
                bj = j
        idx[i] = bj
        dist[i] = best
    return idx, dist


@njit(cache=True, parallel=True)
def assign_nearest(X, C):
    n = X.shape[0]
    labels = np.empty(n, dtype=np.int64)
    sq = np.empty(n)
    for i in prange(n):
        best = np.inf
        bj = 0
        for j in range(C.shape[0]):
            acc = 0.0
            for k in range(X.shape[1]):
                t = X[i, k] - C[j, k]
                acc += t * t
            if acc < best:
                best = acc
                bj = j
        labels[i] = bj
        sq[i] = best
    return labels, sq


@njit(cache=True, parallel=True)
def radius_counts(X, vals, grid, cosine):
    n = X.shape[0]
    c = vals.shape[1]
    G = grid.shape[0]
    nbr = np.zeros((n, G), dtype=np.int64)
    diff = np.zeros((n, G, c), dtype=np.int64)
    for i in prange(n):
        for j in range(n):
            if j == i:
                continue
            dj = _dist(X[i], X[j], cosine)
            # first grid slot whose radius admits j; cumulated below
            g = 0
            while g < G and grid[g] < dj:
                g += 1
            if g == G:
                continue
            nbr[i, g] += 1
            for q in range(c):
                if vals[i, q] != vals[j, q]:
                    diff[i, g, q] += 1
        for g in range(1, G):
            nbr[i, g] += nbr[i, g - 1]
            for q in range(c):
                diff[i, g, q] += diff[i, g - 1, q]
    return nbr, diff


@njit(cache=True, parallel=True)
def knn_indices(X, k, cosine):
    n = X.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for i in prange(n):
        d = np.empty(n)
        for j in range(n):
            d[j] = np.inf if j == i else _dist(X[i], X[j], cosine)
        order = np.argsort(d, kind="mergesort")
        for q in range(k):
            out[i, q] = order[q]
    return out


@njit(cache=True, parallel=True)
def witness_distance(X, labels, support, cosine):
    n, m = support.shape
    out = np.full((n, m), np.inf)
    for i in prange(n):
        for j in range(n):
            if j == i or labels[j] == labels[i]:
                continue
            dj = _dist(X[i], X[j], cosine)
            for s in range(m):
                if support[i, s] and not support[j, s] and dj < out[i, s]:
                    out[i, s] = dj
    return out


@njit(cache=True)
def max_pairwise_distance(X, cosine):
    n = X.shape[0]
    best = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            dj = _dist(X[i], X[j], cosine)
            if dj > best:
                best = dj
    return best
