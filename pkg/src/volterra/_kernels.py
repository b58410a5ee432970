"""Compiled inner loops.

Every reduction runs over its index in ascending order, so results do not
depend on how paths are distributed over workers.
"""

from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(cache=True, inline="always")
def _two_sum_add(s, c, x):
    # Neumaier compensated accumulation
    t = s + x
    if abs(s) >= abs(x):
        c += (s - t) + x
    else:
        c += (x - t) + s
    return t, c


@nb.njit(cache=True)
def diagonal_cumsum_symmetric(G):
    """In place: G[a, b] <- sum_{r=0}^{min(a,b)} G[a-r, b-r], then mirror.

    Only the upper triangle of the input is read.
    """
    M = G.shape[0]
    for a in range(1, M):
        for b in range(a, M):
            G[a, b] += G[a - 1, b - 1]
    for a in range(M):
        for b in range(a + 1, M):
            G[b, a] = G[a, b]


@nb.njit(cache=True)
def lower_matvec(L, xi):
    """L @ xi for lower-triangular L, row sums in ascending column order."""
    M = L.shape[0]
    out = np.empty(M)
    for i in range(M):
        s = 0.0
        c = 0.0
        for j in range(i + 1):
            s, c = _two_sum_add(s, c, L[i, j] * xi[j])
        out[i] = s + c
    return out


@nb.njit(cache=True)
def lower_matvec_many(L, Xi):
    """Row-wise lower_matvec for each row of Xi (paths x M)."""
    P = Xi.shape[0]
    M = L.shape[0]
    out = np.empty((P, M))
    for p in range(P):
        for i in range(M):
            s = 0.0
            c = 0.0
            for j in range(i + 1):
                s, c = _two_sum_add(s, c, L[i, j] * Xi[p, j])
            out[p, i] = s + c
    return out


@nb.njit(cache=True)
def ito_convolution(e, dW, stride, n_out):
    """O_m = sum_{l < m*stride} e[m*stride - l] * dW[l] for m = 1..n_out."""
    out = np.empty(n_out)
    for m in range(1, n_out + 1):
        n = m * stride
        s = 0.0
        c = 0.0
        for l in range(n):
            s, c = _two_sum_add(s, c, e[n - l] * dW[l])
        out[m - 1] = s + c
    return out


@nb.njit(cache=True)
def history_sum(w, F, m):
    """sum_{j=0}^{m-1} w[m-1-j] * F[j], ascending j, compensated."""
    s = 0.0
    c = 0.0
    for j in range(m):
        s, c = _two_sum_add(s, c, w[m - 1 - j] * F[j])
    return s + c


@nb.njit(cache=True)
def history_sums_paths(w, F, m):
    """history_sum for each row of F (paths x (M+1)); w is one mode's weights."""
    P = F.shape[0]
    out = np.empty(P)
    for p in range(P):
        s = 0.0
        c = 0.0
        for j in range(m):
            s, c = _two_sum_add(s, c, w[m - 1 - j] * F[p, j])
        out[p] = s + c
    return out


@nb.njit(cache=True)
def cq_history_paths(omega, U, m):
    """sum_{j=1}^{m-1} omega[m-j] * U[p, j] for each path p."""
    P = U.shape[0]
    out = np.empty(P)
    for p in range(P):
        s = 0.0
        c = 0.0
        for j in range(1, m):
            s, c = _two_sum_add(s, c, omega[m - j] * U[p, j])
        out[p] = s + c
    return out
