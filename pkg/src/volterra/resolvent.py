"""Scalar resolvents s_k(t) = E_rho(-lambda_k t^rho) and integrated weights.

For each mode the table holds

    s[k, i] = E_rho(-lambda_k t_i^rho),                i = 0..M
    w[k, i-1] = int_{t_{i-1}}^{t_i} E_rho(-lambda_k sigma^rho) dsigma,   i = 1..M

The weight of the scheme's history term for step m and subinterval
[t_j, t_{j+1}] only depends on the lag m - j, so a single vector per mode
suffices: the contribution of F(U_j) to U_m uses w[k, m - j - 1].
Weights come from the antiderivative G(t) = t E_{rho,2}(-lambda t^rho).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma

from .errors import DomainError, GridError, QuadratureError
from .io import ArrayCache, cache_key
from .model import KernelSpec, Spectrum
from .special_functions import DEFAULT_ACCURACY, MLAccuracy, MLParams, ml_eval

__all__ = [
    "TimeGrid",
    "ResolventTable",
    "SmoothingReport",
    "build_resolvent_table",
    "resolvent_values",
    "resolvent_derivative",
    "volterra_residual",
    "check_smoothing_bounds",
    "trapezoid_weights",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_m = (m/M) T, m = 0..M.

    Times are formed as (m/M)*T so that a coarse grid's times are
    bit-identical to the corresponding fine-grid times.
    """

    T: float
    M: int

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise GridError("T must be positive")
        if int(self.M) != self.M or self.M < 1:
            raise GridError("M must be a positive integer")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "M", int(self.M))

    @property
    def dt(self) -> float:
        return self.T / self.M

    def times(self) -> np.ndarray:
        return (np.arange(self.M + 1) / self.M) * self.T

    def ratio_to(self, fine: "TimeGrid") -> int:
        """Number of fine steps per step of this grid."""
        if fine.T != self.T or fine.M % self.M:
            raise GridError(f"grid M={fine.M} does not refine M={self.M}")
        return fine.M // self.M


@dataclass(frozen=True)
class ResolventTable:
    grid: TimeGrid
    rho: float
    lambdas: tuple[float, ...]
    s: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return len(self.lambdas)


def _params(rho: float, b: float) -> MLParams:
    return MLParams(rho, b)


def resolvent_values(rho: float, lam: float, t, accuracy: MLAccuracy = DEFAULT_ACCURACY):
    """E_rho(-lam t^rho) for t >= 0."""
    t = np.asarray(t, dtype=float)
    return ml_eval(_params(rho, 1.0), -lam * t**rho, accuracy)


def resolvent_derivative(rho: float, lam: float, t, accuracy: MLAccuracy = DEFAULT_ACCURACY):
    """d/dt E_rho(-lam t^rho) = -lam t^(rho-1) E_{rho,rho}(-lam t^rho), t > 0."""
    t = np.asarray(t, dtype=float)
    if rho == 1.0:
        return -lam * np.exp(-lam * t)
    return -lam * t ** (rho - 1.0) * ml_eval(_params(rho, rho), -lam * t**rho, accuracy)


def _antiderivative(rho: float, lam: float, t: np.ndarray, accuracy: MLAccuracy):
    return t * ml_eval(_params(rho, 2.0), -lam * t**rho, accuracy)


def build_resolvent_table(spectrum: Spectrum, kernel: KernelSpec, grid: TimeGrid,
                          accuracy: MLAccuracy = DEFAULT_ACCURACY,
                          cache: ArrayCache | None = None) -> ResolventTable:
    """Tabulate s and w for every mode of ``spectrum`` on ``grid``."""
    rho = kernel.rho
    key = None
    if cache is not None:
        key = cache_key("resolvent", rho, spectrum.lambdas, grid.T, grid.M,
                        accuracy.target_rel_err, accuracy.regime_thresholds)
        s = cache.get(key, "s")
        w = cache.get(key, "w")
        if s is not None and w is not None:
            return ResolventTable(grid, rho, spectrum.lambdas, s, w)
    t = grid.times()
    N = spectrum.N
    s = np.empty((N, grid.M + 1))
    w = np.empty((N, grid.M))
    for k, lam in enumerate(spectrum.lambdas):
        s[k] = resolvent_values(rho, lam, t, accuracy)
        G = _antiderivative(rho, lam, t, accuracy)
        w[k] = np.diff(G)
    s.setflags(write=False)
    w.setflags(write=False)
    if cache is not None:
        cache.put(key, "s", s)
        cache.put(key, "w", w)
    return ResolventTable(grid, rho, spectrum.lambdas, s, w)


def trapezoid_weights(rho: float, lam: float, grid: TimeGrid, tol: float = 1e-10,
                      max_level: int = 22) -> np.ndarray:
    """Integrated weights by adaptive (per-panel doubling) trapezoid rule.

    Each panel [t_{i-1}, t_i] is refined until the Richardson estimate
    |T_2n - T_n| / 3 falls below ``tol`` relative to the panel value.
    Independent of the closed form; used as a test oracle.
    """
    t = grid.times()
    a, b = t[:-1], t[1:]
    h = b - a
    fa = resolvent_values(rho, lam, a)
    fb = resolvent_values(rho, lam, b)
    sums = 0.5 * (fa + fb)         # endpoint contribution (weights 1/2)
    interior = np.zeros_like(a)    # running sum of interior node values
    prev = sums * h
    out = np.full_like(a, np.nan)
    active = np.ones(a.size, dtype=bool)
    for level in range(1, max_level + 1):
        n = 2**level
        idx = np.nonzero(active)[0]
        k = np.arange(1, n, 2)
        x = a[idx, None] + (k[None, :] / n) * h[idx, None]
        interior[idx] += resolvent_values(rho, lam, x.ravel()).reshape(x.shape).sum(axis=1)
        cur = (sums[idx] + interior[idx]) * h[idx] / n
        err = np.abs(cur - prev[idx]) / 3.0
        done = err <= tol * np.maximum(np.abs(cur), 1e-300)
        if level >= 3:
            out[idx[done]] = cur[done]
            active[idx[done]] = False
        prev[idx] = cur
        if not active.any():
            return out
    raise QuadratureError("trapezoid oracle did not reach its tolerance")


def _fractional_integral_trap(s: np.ndarray, h: float, beta: float) -> np.ndarray:
    """J^beta of the piecewise-linear interpolant of s at every grid point.

    Product trapezoid rule with exact moments of (t - sigma)^(beta-1):
    J^beta s(t_n) = h^beta / Gamma(beta + 2) * sum_j a_{j,n} s_j.
    """
    n_pts = s.size
    n = np.arange(n_pts, dtype=float)
    d = n[1:]
    mid = (d + 1) ** (beta + 1) - 2 * d ** (beta + 1) + (d - 1) ** (beta + 1)
    # interior weights form a Toeplitz sum: sum_{j=1}^{n-1} mid[n-j-1] s_j
    conv = np.convolve(mid, s[1:])[: n_pts - 1]
    out = np.zeros(n_pts)
    m = n[1:]
    a0 = (m - 1) ** (beta + 1) - (m - beta - 1) * m**beta
    # conv[i] = sum_{j} mid[i-j] s[1+j]; for point n we need j <= n-2, i = n-2
    interior = np.concatenate([[0.0], conv[: n_pts - 2]])
    out[1:] = a0 * s[0] + interior + s[1:]
    return out * h**beta / gamma(beta + 2)


def volterra_residual(kernel: KernelSpec, lam: float, s_values, T: float = 1.0) -> float:
    """Residual of s' + lam * J^alpha s = 0 for samples of s on [0, T].

    The equation is checked in its integrated form s + lam J^rho s = 1,
    differentiated by a centered difference over two cells:

        r_i = (s_{i+1} - s_{i-1}) / 2h + lam (J^rho s(t_{i+1}) - J^rho s(t_{i-1})) / 2h,

    which equals the cell average of s' + lam J^alpha s.  J^rho uses product
    integration of the piecewise-linear interpolant with exact moments of
    the kernel.  A pointwise difference quotient of s is not usable here:
    s'' ~ t^(rho-2) is unbounded at 0, so the first interior point alone
    carries an O(lam h^(rho-1)) error.
    Returns max_i |r_i| over interior points.
    """
    s = np.asarray(s_values, dtype=float)
    if s.ndim != 1 or s.size < 512:
        raise GridError("volterra_residual needs at least 512 grid points")
    _check_lambda(lam)
    h = T / (s.size - 1)
    if lam == 0.0:
        J = np.zeros_like(s)
    else:
        J = _fractional_integral_trap(s, h, kernel.rho)
    r = (s[2:] - s[:-2]) / (2 * h) + lam * (J[2:] - J[:-2]) / (2 * h)
    return float(np.max(np.abs(r)))


@dataclass(frozen=True)
class SmoothingReport:
    """Empirical constants of the smoothing bounds and the verdict.

    ``constants`` maps (bound, s) to the observed sup, where bound is
    "S1": lambda^s |s_k(t)| t^(s rho),   s in {0, 1/(2 rho), 1/rho}
    "S2": lambda^s |s_k'(t)| t^(s rho + 1), same s
    "S3": lambda^-s |s_k'(t)| t^(1 - s rho), s in {0, 1/2, 1}
    """

    constants: dict
    ceiling: float
    passed: bool


def check_smoothing_bounds(table: ResolventTable, kernel: KernelSpec,
                           ceiling: float = 10.0, refine: int = 8) -> SmoothingReport:
    """Check the smoothing bounds on the table grid (S1) and on a grid
    ``refine`` times finer (S2, S3, using the exact derivative of s)."""
    rho = kernel.rho
    t = table.grid.times()[1:]
    tf = TimeGrid(table.grid.T, table.grid.M * refine).times()[1:]
    consts = {}
    s_exps = (0.0, 1.0 / (2 * rho), 1.0 / rho)
    for s in s_exps:
        consts[("S1", s)] = 0.0
        consts[("S2", s)] = 0.0
    for s in (0.0, 0.5, 1.0):
        consts[("S3", s)] = 0.0
    for k, lam in enumerate(table.lambdas):
        sk = np.abs(table.s[k, 1:])
        dsk = np.abs(resolvent_derivative(rho, lam, tf)) if lam > 0 else np.zeros_like(tf)
        for s in s_exps:
            ls = lam**s if s > 0 else 1.0
            consts[("S1", s)] = max(consts[("S1", s)], float(np.max(ls * sk * t ** (s * rho))))
            consts[("S2", s)] = max(consts[("S2", s)],
                                    float(np.max(ls * dsk * tf ** (s * rho + 1))))
        for s in (0.0, 0.5, 1.0):
            if lam == 0.0:
                val = 0.0  # s_k is constant, derivative vanishes identically
            else:
                val = float(np.max(lam**-s * dsk * tf ** (1 - s * rho)))
            consts[("S3", s)] = max(consts[("S3", s)], val)
    passed = all(v <= ceiling for v in consts.values())
    return SmoothingReport(consts, float(ceiling), passed)


def _check_lambda(lam: float) -> None:
    if not (math.isfinite(lam) and lam >= 0):
        raise DomainError("lambda must be finite and non-negative")
