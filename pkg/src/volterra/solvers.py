"""Time stepping: Mittag-Leffler Euler integrator (MLEI) and backward-Euler CQ.

Both methods act mode by mode (the nonlinearity is uncoupled).  The
``*_paths`` functions advance a batch of sample paths of one mode at once;
each path is computed independently with a fixed summation order, so the
result for a path does not depend on which other paths share its batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DomainError, GridError, NonFiniteError
from .model import Nonlinearity, ProblemInstance
from .noise import BrownianPath, StochConv
from .resolvent import ResolventTable, TimeGrid, build_resolvent_table

__all__ = [
    "Trajectory",
    "CQWeights",
    "cq_weights",
    "mlei_paths",
    "becq_paths",
    "mlei_step_all",
    "becq_step_all",
    "deterministic_run",
]

METHODS = ("mlei", "becq")


@dataclass(frozen=True)
class Trajectory:
    """Mode coefficients U[m, k] at t_m, m = 0..M."""

    grid: TimeGrid
    U: np.ndarray = field(repr=False)
    method: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown method {self.method!r}")
        if self.U.ndim != 2 or self.U.shape[0] != self.grid.M + 1:
            raise GridError("trajectory shape does not match the grid")


@dataclass(frozen=True)
class CQWeights:
    """Coefficients c_j of (1 - z)^(-alpha); quadrature weights are scale * c."""

    alpha: float
    dt: float
    c: np.ndarray = field(repr=False)
    scale: float

    @property
    def omega(self) -> np.ndarray:
        return self.scale * self.c


def cq_weights(alpha: float, dt: float, M: int) -> CQWeights:
    """First-order convolution quadrature weights for the kernel t^(alpha-1)/Gamma(alpha).

    c_0 = 1, c_j = c_{j-1} (j - 1 + alpha) / j, scale = dt^alpha.
    alpha = 0 and alpha = 1 are accepted as limiting cases.
    """
    if not (0.0 <= alpha <= 1.0):
        raise DomainError("alpha must lie in [0, 1]")
    if not (math.isfinite(dt) and dt > 0):
        raise DomainError("dt must be positive")
    if int(M) != M or M < 0:
        raise DomainError("M must be a non-negative integer")
    c = np.empty(int(M) + 1)
    c[0] = 1.0
    for j in range(1, int(M) + 1):
        c[j] = c[j - 1] * (j - 1 + alpha) / j
    c.setflags(write=False)
    return CQWeights(float(alpha), float(dt), c, float(dt) ** alpha)


def _eval_f(nl: Nonlinearity, u: np.ndarray, step: int, mode: int) -> np.ndarray:
    try:
        return nl(u)
    except NonFiniteError as exc:
        raise NonFiniteError(f"{exc} (step {step}, mode {mode})", step, mode) from None


def _check_finite(u: np.ndarray, step: int, mode: int, method: str) -> None:
    if not np.all(np.isfinite(u)):
        raise NonFiniteError(f"{method}: non-finite state at step {step}, mode {mode}",
                             step, mode)


def mlei_paths(s: np.ndarray, w: np.ndarray, u0: float, nl: Nonlinearity,
               conv: np.ndarray | None, n_paths: int = 1, mode: int = 0) -> np.ndarray:
    """MLEI for one mode and a batch of paths.

    U_m = s[m] u0 + sum_{j<m} w[m-j-1] f(U_j) + conv[:, m-1].

    ``s`` has length M+1 and ``w`` length M (one table row); ``conv`` has
    shape (paths, M) or is None for the deterministic problem.
    Returns an array of shape (paths, M+1).
    """
    M = w.size
    if s.size != M + 1:
        raise GridError("resolvent values and weights disagree on M")
    if conv is not None:
        conv = np.asarray(conv, dtype=float)
        if conv.ndim != 2 or conv.shape[1] != M:
            raise GridError("stochastic convolution does not match the grid")
        n_paths = conv.shape[0]
    w = np.ascontiguousarray(w, dtype=float)
    U = np.empty((n_paths, M + 1))
    U[:, 0] = u0
    use_f = not nl.is_zero
    F = np.zeros((n_paths, M + 1)) if use_f else None
    if use_f:
        F[:, 0] = _eval_f(nl, U[:, 0], 0, mode)
    lin = s * u0
    for m in range(1, M + 1):
        h = _kernels.history_sums_paths(w, F, m) if use_f else 0.0
        if conv is None:
            U[:, m] = lin[m] + h
        else:
            U[:, m] = (lin[m] + h) + conv[:, m - 1]
        _check_finite(U[:, m], m, mode, "mlei")
        if use_f and m < M:
            F[:, m] = _eval_f(nl, U[:, m], m, mode)
    return U


def becq_paths(lam: float, cq: CQWeights, u0: float, nl: Nonlinearity,
               dW: np.ndarray | None, M: int | None = None, n_paths: int = 1,
               mode: int = 0) -> np.ndarray:
    """Backward-Euler convolution quadrature for one mode and a batch of paths.

    (U_m - U_{m-1}) + lam dt sum_{j=1}^m omega_{m-j} U_j = dt f(U_{m-1}) + dW_m,
    solved for U_m by a scalar division.  ``dW`` has shape (paths, M) or is
    None for the deterministic problem.
    """
    if dW is not None:
        dW = np.asarray(dW, dtype=float)
        n_paths, M = dW.shape
    if M is None:
        raise GridError("M is required without increments")
    if cq.c.size < M + 1:
        raise GridError("not enough quadrature weights")
    dt = cq.dt
    omega = np.ascontiguousarray(cq.omega[: M + 1])
    denom = 1.0 + lam * dt * omega[0]
    U = np.empty((n_paths, M + 1))
    U[:, 0] = u0
    use_f = not nl.is_zero
    for m in range(1, M + 1):
        rhs = U[:, m - 1].copy()
        if use_f:
            rhs += dt * _eval_f(nl, U[:, m - 1], m - 1, mode)
        if dW is not None:
            rhs += dW[:, m - 1]
        if lam != 0.0 and m > 1:
            rhs -= lam * dt * _kernels.cq_history_paths(omega, U, m)
        U[:, m] = rhs / denom
        _check_finite(U[:, m], m, mode, "becq")
    return U


def _conv_rows(conv, N: int, M: int) -> list:
    if conv is None:
        return [None] * N
    if isinstance(conv, np.ndarray):
        conv = list(conv)
    if len(conv) != N:
        raise GridError("need one stochastic convolution per mode")
    rows = []
    for c in conv:
        v = c.values if isinstance(c, StochConv) else np.asarray(c, dtype=float)
        if v.shape != (M,):
            raise GridError("stochastic convolution length does not match the grid")
        rows.append(v[None, :])
    return rows


def mlei_step_all(instance: ProblemInstance, table: ResolventTable, conv=None,
                  meta: dict | None = None) -> Trajectory:
    """One MLEI trajectory for every mode.

    ``conv`` holds one StochConv (or length-M vector) per mode, or None for
    the deterministic problem.
    """
    if table.N != instance.N or table.lambdas != instance.spectrum.lambdas:
        raise GridError("resolvent table does not match the instance")
    if table.grid.T != instance.T:
        raise GridError("resolvent table horizon differs from the instance")
    M = table.grid.M
    rows = _conv_rows(conv, instance.N, M)
    U = np.empty((M + 1, instance.N))
    u0 = instance.u0_array
    for k in range(instance.N):
        U[:, k] = mlei_paths(table.s[k], table.w[k], u0[k], instance.nonlinearity,
                             rows[k], 1, k)[0]
    return Trajectory(table.grid, U, "mlei", dict(meta or {}, instance=instance.digest()))


def becq_step_all(instance: ProblemInstance, path: BrownianPath | None, cq: CQWeights,
                  grid: TimeGrid | None = None, meta: dict | None = None) -> Trajectory:
    """One BE-CQ trajectory for every mode.

    ``path`` must already live on the stepping grid (see BrownianPath.restrict);
    None means zero noise, in which case ``grid`` is required.
    """
    grid = path.grid if path is not None else grid
    if grid is None:
        raise GridError("a grid is needed when no path is given")
    if grid.T != instance.T or not math.isclose(cq.dt, grid.dt, rel_tol=1e-15):
        raise GridError("quadrature weights do not match the grid")
    if path is not None and path.increments.shape != (instance.N, grid.M):
        raise GridError("Brownian path does not match the instance")
    U = np.empty((grid.M + 1, instance.N))
    u0 = instance.u0_array
    for k, lam in enumerate(instance.spectrum.lambdas):
        dW = None if path is None else path.increments[k][None, :]
        U[:, k] = becq_paths(lam, cq, u0[k], instance.nonlinearity, dW, grid.M, 1, k)[0]
    return Trajectory(grid, U, "becq", dict(meta or {}, instance=instance.digest()))


def deterministic_run(instance: ProblemInstance, method: str, grid: TimeGrid,
                      table: ResolventTable | None = None) -> Trajectory:
    """Noise-free run (all mu_k must vanish)."""
    if not instance.deterministic:
        raise DomainError("deterministic_run needs zero noise (all mu_k = 0)")
    if grid.T != instance.T:
        raise GridError("grid horizon differs from the instance")
    if method == "mlei":
        if table is None:
            table = build_resolvent_table(instance.spectrum, instance.kernel, grid)
        return mlei_step_all(instance, table, None)
    if method == "becq":
        cq = cq_weights(instance.kernel.alpha, grid.dt, grid.M)
        return becq_step_all(instance, None, cq, grid)
    raise DomainError(f"unknown method {method!r}")
