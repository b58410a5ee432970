"""Randomness for one mode: Brownian increments, exact Gaussian draws of the
stochastic convolution O(t) = int_0^t e(t - s) sqrt(mu) dbeta(s) with
e(t) = E_rho(-lambda t^rho), and Ito-sum approximations of O on a path.

Seeds.  Every random stream is a Philox generator keyed by
SeedSequence(master_seed, spawn_key=(path, mode, stream)); ``stream`` 0
feeds the exact sampler's standard normals, stream 1 the Brownian
increments.  The map from the tuple to the stream is injective, so a draw
only depends on its own indices and never on scheduling.

Covariance.  For grid times t_i = i dt,

    C[i, j] = mu int_0^{min(t_i, t_j)} e(t_i - s) e(t_j - s) ds.

With tau = t_i - s and P[n, m] = int_0^dt e(t_n + u) e(t_m + u) du this is
C[i, j] = sum_{r >= 0} P[i-1-r, j-1-r], i.e. a cumulative sum of the panel
Gram matrix P along its diagonals.  P comes from a Gauss-Legendre rule
(V W V^T) and costs O(M^2 q) flops.  The first panel holds the t^rho
singularity of e at 0.  There the quadrature moments of e against the
Lagrange basis are computed on a geometrically graded mesh (product
integration).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .errors import FactorizationError, GridError, QuadratureError
from .io import ArrayCache, cache_key
from .model import KernelSpec
from .resolvent import TimeGrid, resolvent_values

__all__ = [
    "PathSeed",
    "BrownianPath",
    "ConvCovariance",
    "StochConv",
    "build_conv_covariance",
    "sample_exact",
    "sample_exact_paths",
    "brownian_path",
    "kernel_on_grid",
    "sample_ito_sum",
    "ito_sum_all",
    "STREAM_EXACT",
    "STREAM_BROWNIAN",
]

STREAM_EXACT = 0
STREAM_BROWNIAN = 1

CLAMP_REL = 1e-12
CLAMP_ABORT_REL = 1e-8


@dataclass(frozen=True)
class PathSeed:
    master_seed: int
    path_index: int
    mode_index: int
    stream: int = STREAM_EXACT

    def __post_init__(self):
        if not (0 <= int(self.master_seed) < 2**64):
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if min(self.path_index, self.mode_index, self.stream) < 0:
            raise ValueError("indices must be non-negative")

    def rng(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.master_seed),
                                    spawn_key=(int(self.path_index), int(self.mode_index),
                                               int(self.stream)))
        return np.random.Generator(np.random.Philox(ss))

    def normals(self, n: int) -> np.ndarray:
        return self.rng().standard_normal(n)


@dataclass(frozen=True)
class BrownianPath:
    """Increments of sqrt(mu_k) beta_k over a grid, one row per mode."""

    grid: TimeGrid
    increments: np.ndarray = field(repr=False)

    def restrict(self, coarse: TimeGrid) -> "BrownianPath":
        """Sum the increments over each coarse step (t_{m-1}, t_m]."""
        r = coarse.ratio_to(self.grid)
        inc = self.increments.reshape(self.increments.shape[0], coarse.M, r).sum(axis=2)
        return BrownianPath(coarse, inc)

    def values(self) -> np.ndarray:
        """W(t_m), m = 0..M, per mode."""
        n = self.increments.shape[0]
        return np.concatenate([np.zeros((n, 1)), np.cumsum(self.increments, axis=1)], axis=1)


def brownian_path(mus, grid: TimeGrid, master_seed: int, path_index: int,
                  modes=None) -> BrownianPath:
    """Increments sqrt(dt mu_k) xi for each mode, from the Brownian stream."""
    mus = np.atleast_1d(np.asarray(mus, dtype=float))
    modes = range(mus.size) if modes is None else modes
    inc = np.empty((mus.size, grid.M))
    for row, k in enumerate(modes):
        xi = PathSeed(master_seed, path_index, k, STREAM_BROWNIAN).normals(grid.M)
        inc[row] = math.sqrt(grid.dt * mus[row]) * xi
    return BrownianPath(grid, inc)


@dataclass(frozen=True)
class ConvCovariance:
    """Covariance of (O(t_1), ..., O(t_M)) for one mode and its Cholesky factor.

    ``clamp`` is the eigenvalue shift applied when the plain factorization
    failed (0 when it succeeded).  ``matrix`` may be None when it was
    dropped to save memory; ``diag`` is always kept.
    """

    mode: int
    lam: float
    mu: float
    rho: float
    grid: TimeGrid
    chol: np.ndarray = field(repr=False)
    matrix: np.ndarray | None = field(default=None, repr=False)
    diag: np.ndarray | None = field(default=None, repr=False)
    clamp: float = 0.0

    def reconstruction_error(self) -> float:
        """max |L L^T - C| / max |C| (requires the matrix)."""
        if self.matrix is None:
            raise ValueError("matrix was not kept")
        scale = np.abs(self.matrix).max()
        if scale == 0:
            return float(np.abs(self.chol).max())
        return float(np.abs(self.chol @ self.chol.T - self.matrix).max() / scale)


@dataclass(frozen=True)
class StochConv:
    mode: int
    values: np.ndarray
    method: str


@lru_cache(maxsize=None)
def _gauss_legendre01(q: int):
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _graded_rule(q: int, ratio: float, levels: int):
    """Nodes/weights on [0, 1] graded geometrically towards 0."""
    x, w = _gauss_legendre01(q)
    nodes, weights = [], []
    hi = 1.0
    for _ in range(levels):
        lo = hi * ratio
        nodes.append(lo + (hi - lo) * x)
        weights.append((hi - lo) * w)
        hi = lo
    nodes.append(hi * x)
    weights.append(hi * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _lagrange_matrix(xk: np.ndarray, g: np.ndarray) -> np.ndarray:
    """L[i, q] = l_q(g_i) for the Lagrange basis on nodes xk (barycentric)."""
    diff = xk[:, None] - xk[None, :]
    np.fill_diagonal(diff, 1.0)
    bw = 1.0 / diff.prod(axis=1)
    d = g[:, None] - xk[None, :]
    exact = d == 0.0
    d[exact] = 1.0
    terms = bw[None, :] / d
    L = terms / terms.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    L[rows] = exact[rows].astype(float)
    return L


def _panel_rule(dt: float, S: int, q: int):
    x, w = _gauss_legendre01(q)
    u = (dt / S) * (np.arange(S)[:, None] + x[None, :]).ravel()
    W = np.tile((dt / S) * w, S)
    return u, W


def _gram(rho, lam, grid, S, q, ratio, levels):
    """Panel Gram matrix P (upper triangle valid) for unit mu."""
    M, dt = grid.M, grid.dt
    t = grid.times()[:M]
    u, W = _panel_rule(dt, S, q)
    V = resolvent_values(rho, lam, (t[:, None] + u[None, :]).ravel()).reshape(M, -1)
    P = (V * W[None, :]) @ V.T
    # first panel: product integration against the singular factor e(u)
    h0 = dt / S
    gx, gw = _graded_rule(q, ratio, levels)
    g, gwt = h0 * gx, h0 * gw
    eg = resolvent_values(rho, lam, g)
    x, _ = _gauss_legendre01(q)
    Lm = _lagrange_matrix(h0 * x, g)
    mom = (gwt * eg) @ Lm
    a = W * V[0]
    a[:q] = mom
    if M > 1:
        P[0, 1:] = V[1:] @ a
    P[0, 0] = np.dot(gwt, eg * eg) + np.dot(W[q:], V[0, q:] ** 2)
    return P, V, W


def _diag_check(rho, lam, grid, S, q, P_diag, rows, ratio, levels):
    """Diagonal entries for selected rows with 2S sub-panels."""
    t = grid.times()[rows]
    u, W = _panel_rule(grid.dt, 2 * S, q)
    V = resolvent_values(rho, lam, (t[:, None] + u[None, :]).ravel()).reshape(len(rows), -1)
    ref = (V * V) @ W
    if rows[0] == 0:
        h0 = grid.dt / (2 * S)
        gx, gw = _graded_rule(q, ratio, levels)
        eg = resolvent_values(rho, lam, h0 * gx)
        ref[0] = np.dot(h0 * gw, eg * eg) + np.dot(W[q:], V[0, q:] ** 2)
    return np.abs(ref - P_diag[rows])


def build_conv_covariance(lam: float, mu: float, kernel: KernelSpec, grid: TimeGrid,
                          quad_tol: float = 1e-10, mode: int = 0, nodes: int = 16,
                          keep_matrix: bool = True,
                          cache: ArrayCache | None = None) -> ConvCovariance:
    """Covariance matrix of the stochastic convolution at t_1..t_M and its
    Cholesky factor.

    Sub-panels per step are chosen so that each spans at most four time
    scales lam^(-1/rho) of the resolvent.  The diagonal of the panel Gram
    matrix is re-evaluated on twice as many sub-panels for a sample of
    rows; the panel count doubles until the two agree to ``quad_tol``.
    """
    rho = kernel.rho
    M = grid.M
    key = None
    if cache is not None:
        key = cache_key("cov", rho, [lam], grid.T, M, mu, quad_tol, nodes)
        L = cache.get(key, "chol")
        D = cache.get(key, "diag")
        C = cache.get(key, "matrix") if keep_matrix else None
        meta = cache.get(key, "clamp")
        if L is not None and D is not None and meta is not None and (C is not None or not keep_matrix):
            return ConvCovariance(mode, lam, mu, rho, grid, L, C, D, float(meta[0]))

    if mu == 0.0:
        Z = np.zeros((M, M))
        return ConvCovariance(mode, lam, mu, rho, grid, Z, Z.copy() if keep_matrix else None,
                              np.zeros(M), 0.0)
    if lam == 0.0:
        t = grid.times()[1:]
        C = mu * np.minimum(t[:, None], t[None, :])
    else:
        tau = lam ** (-1.0 / rho)
        S = max(1, math.ceil(grid.dt / (4.0 * tau)))
        ratio, levels = 0.25, 26
        rows = np.unique(np.concatenate([np.arange(min(M, 4)),
                                         np.linspace(0, M - 1, min(M, 32)).astype(int)]))
        for _ in range(7):
            P, _, _ = _gram(rho, lam, grid, S, nodes, ratio, levels)
            pdiag = np.diagonal(P).copy()
            err = _diag_check(rho, lam, grid, S, nodes, pdiag, rows, ratio, levels)
            # tolerance relative to the panel size of a unit-variance increment
            if err.max() <= quad_tol * max(grid.dt, pdiag.max()):
                break
            S *= 2
            del P
        else:
            raise QuadratureError("covariance quadrature did not meet quad_tol")
        _kernels.diagonal_cumsum_symmetric(P)
        C = P
        C *= mu
    diag = np.diagonal(C).copy()
    L, clamp = _factor(C)
    if not keep_matrix:
        C = None
    cov = ConvCovariance(mode, lam, mu, rho, grid, L, C, diag, clamp)
    if cache is not None:
        cache.put(key, "chol", L)
        cache.put(key, "diag", diag)
        cache.put(key, "clamp", np.array([clamp]))
        if C is not None:
            cache.put(key, "matrix", C)
    return cov


def _factor(C: np.ndarray):
    try:
        return np.linalg.cholesky(C), 0.0
    except np.linalg.LinAlgError:
        pass
    maxdiag = float(np.diagonal(C).max())
    floor = CLAMP_REL * maxdiag
    evals, evecs = np.linalg.eigh(C)
    clamp = float(max(0.0, floor - evals.min()))
    if clamp > CLAMP_ABORT_REL * maxdiag:
        raise FactorizationError(
            f"covariance is indefinite beyond tolerance (clamp {clamp:.3e}, "
            f"max diagonal {maxdiag:.3e})")
    evals = np.maximum(evals, floor)
    Cr = (evecs * evals) @ evecs.T
    Cr = 0.5 * (Cr + Cr.T)
    try:
        return np.linalg.cholesky(Cr), clamp
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("Cholesky failed after eigenvalue clamping") from exc


def sample_exact(cov: ConvCovariance, seed: PathSeed | None = None,
                 xi: np.ndarray | None = None) -> StochConv:
    """O = L xi with xi from ``seed`` (or given explicitly)."""
    if xi is None:
        if seed is None:
            raise ValueError("need a seed or xi")
        xi = seed.normals(cov.grid.M)
    xi = np.ascontiguousarray(xi, dtype=float)
    if xi.shape != (cov.grid.M,):
        raise GridError("xi length does not match the grid")
    return StochConv(cov.mode, _kernels.lower_matvec(cov.chol, xi), "exact_cholesky")


def sample_exact_paths(cov: ConvCovariance, master_seed: int, paths) -> np.ndarray:
    """Exact draws for several paths (rows), identical to per-path sample_exact."""
    paths = list(paths)
    Xi = np.empty((len(paths), cov.grid.M))
    for row, p in enumerate(paths):
        Xi[row] = PathSeed(master_seed, p, cov.mode, STREAM_EXACT).normals(cov.grid.M)
    return _kernels.lower_matvec_many(np.ascontiguousarray(cov.chol), Xi)


def kernel_on_grid(rho: float, lam: float, grid: TimeGrid) -> np.ndarray:
    """e(t_l) = E_rho(-lam t_l^rho) for l = 0..M."""
    return np.asarray(resolvent_values(rho, lam, grid.times()))


def sample_ito_sum(e_fine: np.ndarray, path: BrownianPath, coarse: TimeGrid,
                   row: int = 0, mode: int = 0) -> StochConv:
    """Left-point Ito sum O(t_m) = sum_{tau_l < t_m} e(t_m - tau_l) dW_l on a fine path.

    ``e_fine`` holds the kernel at the fine lags (``kernel_on_grid``);
    ``row`` selects the mode row of the path.
    """
    r = coarse.ratio_to(path.grid)
    e = np.ascontiguousarray(e_fine, dtype=float)
    if e.size != path.grid.M + 1:
        raise GridError("kernel values must be given on the fine grid")
    dW = np.ascontiguousarray(path.increments[row])
    return StochConv(mode, _kernels.ito_convolution(e, dW, r, coarse.M), "ito_sum")


def ito_sum_all(e_fine: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """Ito sums at every fine time t_1..t_M for one increment vector."""
    return _kernels.ito_convolution(np.ascontiguousarray(e_fine), np.ascontiguousarray(dW),
                                    1, dW.size)
