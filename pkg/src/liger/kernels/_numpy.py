"""Pure-numpy kernels. Same contracts as the numba versions in ``_numba``."""

import numpy as np

_BLOCK_ELEMS = 1 << 22


def _rows_per_block(ns, d):
    return max(1, _BLOCK_ELEMS // max(1, ns * max(d, 1)))


def distance_block(A, B, cosine):
    """Pairwise distances between the rows of ``A`` and ``B``."""
    if cosine:
        return np.maximum(1.0 - A @ B.T, 0.0)
    diff = A[:, None, :] - B[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def nearest_in_support(Q, S, exclude, cosine):
    nq = Q.shape[0]
    idx = np.full(nq, -1, dtype=np.int64)
    dist = np.full(nq, np.inf)
    if S.shape[0] == 0:
        return idx, dist
    step = _rows_per_block(S.shape[0], Q.shape[1])
    for lo in range(0, nq, step):
        hi = min(nq, lo + step)
        D = distance_block(Q[lo:hi], S, cosine)
        ex = exclude[lo:hi]
        rows = np.nonzero(ex >= 0)[0]
        D[rows, ex[rows]] = np.inf
        j = np.argmin(D, axis=1)
        dj = D[np.arange(hi - lo), j]
        ok = np.isfinite(dj)
        idx[lo:hi] = np.where(ok, j, -1)
        dist[lo:hi] = dj
    return idx, dist


def assign_nearest(X, C):
    n = X.shape[0]
    labels = np.empty(n, dtype=np.int64)
    sq = np.empty(n)
    step = _rows_per_block(C.shape[0], X.shape[1])
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        diff = X[lo:hi, None, :] - C[None, :, :]
        D = np.einsum("ijk,ijk->ij", diff, diff)
        j = np.argmin(D, axis=1)
        labels[lo:hi] = j
        sq[lo:hi] = D[np.arange(hi - lo), j]
    return labels, sq


def radius_counts(X, vals, grid, cosine):
    """Neighbour and disagreement counts for each point at each (ascending) radius."""
    n, c = vals.shape
    G = grid.shape[0]
    nbr = np.zeros((n, G), dtype=np.int64)
    diff = np.zeros((n, G, c), dtype=np.int64)
    step = _rows_per_block(n, X.shape[1])
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        D = distance_block(X[lo:hi], X, cosine)
        D[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        # integer operands: einsum over two bool arrays would OR instead of count
        neq = (vals[lo:hi, None, :] != vals[None, :, :]).astype(np.int64)
        for g in range(G):
            within = D <= grid[g]
            nbr[lo:hi, g] = within.sum(axis=1)
            diff[lo:hi, g, :] = np.einsum("ij,ijc->ic", within.astype(np.int64), neq)
    return nbr, diff


def knn_indices(X, k, cosine):
    """Indices of the ``k`` nearest other points, closest first, ties to the lower index."""
    n = X.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    step = _rows_per_block(n, X.shape[1])
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        D = distance_block(X[lo:hi], X, cosine)
        D[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        order = np.argsort(D, axis=1, kind="stable")
        out[lo:hi] = order[:, :k]
    return out


def witness_distance(X, labels, support, cosine):
    """For each (point, source) with support, distance to the nearest off-support point
    carrying a different label; ``inf`` where no such point exists or off support."""
    n, m = support.shape
    out = np.full((n, m), np.inf)
    step = _rows_per_block(n, X.shape[1])
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        D = distance_block(X[lo:hi], X, cosine)
        D[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        differ = labels[lo:hi, None] != labels[None, :]
        for s in range(m):
            cand = np.where(differ & ~support[None, :, s], D, np.inf)
            best = cand.min(axis=1) if n else np.full(hi - lo, np.inf)
            out[lo:hi, s] = np.where(support[lo:hi, s], best, np.inf)
    return out


def max_pairwise_distance(X, cosine):
    n = X.shape[0]
    best = 0.0
    step = _rows_per_block(n, X.shape[1])
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        D = distance_block(X[lo:hi], X, cosine)
        if D.size:
            best = max(best, float(D.max()))
    return best
