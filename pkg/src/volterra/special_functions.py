"""Mittag-Leffler functions E_{a,b}(x) on the non-positive real axis.

``ml_eval`` picks one of three regimes from |x|:

* the Taylor series for |x| <= r_series,
* the asymptotic expansion for |x| >= r_asymptotic,
* otherwise the Laplace inversion integral, with the Bromwich line folded
  onto a Hankel path around the branch cut of s^a.  When 1 < a <= 2 the two
  complex poles of 1/(s^a - x) pass from one side of the path to the other,
  so their residues are added explicitly.  The integral along the cut is
  computed with a double-exponential trapezoid rule that halves its step
  until two successive levels agree.

The same residues also enter the asymptotic regime.  For a in (1, 2) they
decay like exp(R cos(pi/a)), R = |x|^(1/a), which is slower than any power
of 1/|x| at moderate R.

``ml_oracle`` and ``ml_oracle_hankel`` are slow mpmath references for
testing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .errors import DomainError, NonConvergenceError, PrecisionExhaustedError, RegimeError

__all__ = [
    "MLParams",
    "MLAccuracy",
    "DEFAULT_ACCURACY",
    "ml_eval",
    "ml_series",
    "ml_contour",
    "ml_asymptotic",
    "ml_oracle",
    "ml_oracle_hankel",
    "OSCILLATION_BOUND",
]

# Upper bound c on -E_{a,1}(x) for a in (1, 2] and x <= 0.  The deepest
# undershoot is about 0.06 at a = 1.75 and reaches 1 only as a -> 2 (cosine).
OSCILLATION_BOUND = 1.0

# Asymptotic expansion: R = |x|^(1/a) at which the optimally truncated
# series reaches ~1e-13 relative accuracy.
_ASYMPTOTIC_R_MIN = 36.0


@dataclass(frozen=True)
class MLParams:
    """Parameters of E_{a,b}.  ``b = 1`` gives the one-parameter function."""

    a: float
    b: float = 1.0

    def __post_init__(self):
        a, b = float(self.a), float(self.b)
        if not (math.isfinite(a) and 0.0 < a <= 2.0):
            raise DomainError(f"need 0 < a <= 2, got a={self.a!r}")
        if not (math.isfinite(b) and b >= 1.0):
            raise DomainError(f"need b >= 1, got b={self.b!r}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class MLAccuracy:
    """Accuracy target and regime radii.

    ``regime_thresholds=None`` selects defaults that depend on ``a``:
    r_series = min(5, 5**a) and r_asymptotic = max(50, 2 * 36**a).
    """

    target_rel_err: float = 1e-12
    regime_thresholds: tuple[float, float] | None = None

    def __post_init__(self):
        if not (0.0 < self.target_rel_err < 1.0):
            raise DomainError("target_rel_err must lie in (0, 1)")
        if self.regime_thresholds is not None:
            rs, ra = (float(v) for v in self.regime_thresholds)
            if not (0.0 < rs < ra):
                raise DomainError("need 0 < r_series < r_asymptotic")
            object.__setattr__(self, "regime_thresholds", (rs, ra))

    def thresholds(self, a: float) -> tuple[float, float]:
        if self.regime_thresholds is not None:
            return self.regime_thresholds
        return min(5.0, 5.0**a), max(50.0, 2.0 * _ASYMPTOTIC_R_MIN**a)


DEFAULT_ACCURACY = MLAccuracy()


def _sinpi(v: float) -> float:
    """sin(pi v), exactly zero at integers."""
    r = math.fmod(v, 2.0)
    if r == int(r):
        return 0.0
    return math.sin(math.pi * r)


def _cospi(v: float) -> float:
    r = math.fmod(v, 2.0)
    if r + 0.5 == int(r + 0.5):
        return 0.0
    return math.cos(math.pi * r)


def _prepare(x):
    arr = np.asarray(x, dtype=float) if not np.iscomplexobj(x) else None
    if arr is None:
        raise DomainError("complex arguments are not supported")
    if not np.all(np.isfinite(arr)):
        raise DomainError("x must be finite")
    if np.any(arr > 0.0):
        raise DomainError("x must be <= 0 (positive axis is out of scope)")
    return arr


def _finish(x_in, out: np.ndarray):
    if np.ndim(x_in) == 0:
        return float(out)
    return out


# --------------------------------------------------------------------------
# a = 1
# --------------------------------------------------------------------------

def _ml_a1(b: float, x: np.ndarray) -> np.ndarray:
    if b == 1.0:
        return np.exp(x)
    out = np.empty_like(x)
    if b == 2.0:
        small = x == 0.0
        out[small] = 1.0
        xs = x[~small]
        out[~small] = np.expm1(xs) / xs
        return out
    # E_{1,b}(x) = 1/Gamma(b-1) * int_0^1 exp(x u) (1-u)^(b-2) du, b > 1
    scale = special.rgamma(b - 1.0)
    for i, xi in np.ndenumerate(x):
        val, _ = integrate.quad(lambda u: math.exp(xi * u), 0.0, 1.0,
                                weight="alg", wvar=(0.0, b - 2.0),
                                epsabs=0.0, epsrel=2e-14, limit=200)
        out[i] = scale * val
    return out


# --------------------------------------------------------------------------
# series
# --------------------------------------------------------------------------

def ml_series(params: MLParams, x, accuracy: MLAccuracy = DEFAULT_ACCURACY):
    """Taylor series sum_k x^k / Gamma(a k + b).

    Accepted for |x| <= 4 * r_series.  Beyond that the alternating terms
    cancel too strongly for double precision.
    """
    arr = _prepare(x)
    a, b = params.a, params.b
    rs, _ = accuracy.thresholds(a)
    ax = np.abs(arr)
    if arr.size and ax.max() > 4.0 * rs * (1.0 + 1e-12):
        raise RegimeError(f"series regime limited to |x| <= {4 * rs:g}")
    xmax = float(ax.max()) if arr.size else 0.0
    nterms = _series_terms(a, b, xmax)
    coef = _series_coefficients(a, b, nterms)
    flat = arr.reshape(-1)
    out = np.empty_like(flat)
    for start in range(0, flat.size, 4096):
        blk = flat[start:start + 4096].astype(np.longdouble)
        # Horner in extended precision; terms alternate and cancel
        acc = np.full(blk.shape, coef[-1])
        for c in coef[-2::-1]:
            acc = acc * blk + c
        out[start:start + 4096] = acc.astype(float)
    return _finish(x, out.reshape(arr.shape))


@lru_cache(maxsize=256)
def _series_coefficients(a: float, b: float, nterms: int) -> np.ndarray:
    """1/Gamma(a k + b) for k < nterms, correctly rounded to long double."""
    import mpmath as mp

    with mp.workdps(30):
        A, B = mp.mpf(a), mp.mpf(b)
        vals = [mp.rgamma(A * k + B) for k in range(nterms)]
    # go through a decimal string: long double cannot be built from mpf
    return np.array([np.longdouble(mp.nstr(v, 25)) for v in vals])


@lru_cache(maxsize=256)
def _series_terms(a: float, b: float, xmax: float) -> int:
    """Smallest K such that terms beyond K are below 1e-20."""
    if xmax == 0.0:
        return 1
    lx = math.log(xmax)
    prev = -math.inf
    for k in range(1, 10000):
        lt = k * lx - math.lgamma(a * k + b)
        if lt < prev and lt < -46.0:
            return k + 1
        prev = lt
    raise RegimeError("series does not converge numerically for this |x|")


# --------------------------------------------------------------------------
# Hankel path plus residues
# --------------------------------------------------------------------------

_DE_T_LO = -4.25
_DE_T_HI = 1.8125
_DE_H0 = 1.0 / 16.0
_DE_MAX_LEVEL = 6
_CIRCLE_NODES = 40


@lru_cache(maxsize=None)
def _de_nodes(level: int):
    """Nodes of the exp-sinh map r = exp(pi/2 sinh t) new at ``level``.

    Level 0 uses step h0; level l > 0 adds the odd multiples of h0 / 2^l.
    Returns (u, du) with du the Jacobian.
    """
    h = _DE_H0 / 2**level
    j = np.arange(math.ceil(_DE_T_LO / h), math.floor(_DE_T_HI / h) + 1)
    if level > 0:
        j = j[j % 2 != 0]
    t = j * h
    u = np.exp(0.5 * math.pi * np.sinh(t))
    du = 0.5 * math.pi * np.cosh(t) * u
    return u, du


@lru_cache(maxsize=None)
def _circle_nodes():
    g, w = np.polynomial.legendre.leggauss(_CIRCLE_NODES)
    return math.pi * g, w


def _pole_term(a: float, b: float, R: np.ndarray) -> np.ndarray:
    """Residues of exp(s) s^(a-b) / (s^a + y) at s = R exp(+-i pi/a)."""
    if a <= 1.0:
        return np.zeros_like(R)
    phase = math.pi / a
    re = R * math.cos(phase)
    # exp(s) s^(1-b) = exp(re) R^(1-b) exp(i (R sin(phase) + (1-b) phase))
    ang = R * math.sin(phase) + (1.0 - b) * phase
    with np.errstate(under="ignore"):
        mag = np.exp(re) * np.power(R, 1.0 - b, where=R > 0, out=np.ones_like(R))
    return (2.0 / a) * mag * np.cos(ang)


def ml_contour(params: MLParams, x, accuracy: MLAccuracy = DEFAULT_ACCURACY):
    """Laplace inversion along a Hankel path around the negative real axis.

    E_{a,b}(x) = (1/2 pi i) int_Ha exp(s) s^(a-b) / (s^a - x) ds + residues.
    The path consists of a circle of radius r0 = min(1, R/4) and the two
    banks of the cut, which combine into a real integral over (r0, inf).
    """
    arr = _prepare(x)
    a, b = params.a, params.b
    if a == 1.0:
        raise RegimeError("a = 1 has a pole on the branch cut; use ml_eval")
    tol = accuracy.target_rel_err
    flat = arr.reshape(-1)
    out = np.empty_like(flat)
    zero = flat == 0.0
    out[zero] = special.rgamma(b)
    idx = np.nonzero(~zero)[0]
    for start in range(0, idx.size, 2048):
        sel = idx[start:start + 2048]
        out[sel] = _contour_block(a, b, -flat[sel], tol)
    return _finish(x, out.reshape(arr.shape))


def _contour_block(a: float, b: float, y: np.ndarray, tol: float) -> np.ndarray:
    R = y ** (1.0 / a)
    r0 = np.minimum(1.0, 0.25 * R)
    sin_b = _sinpi(b)
    sin_ab = _sinpi(a - b)
    cos_a = _cospi(a)

    def ray_sum(level):
        u, du = _de_nodes(level)
        r = r0[:, None] + u[None, :]
        ra = r**a
        num = r ** (a - b) * (ra * sin_b - y[:, None] * sin_ab)
        den = ra * ra + 2.0 * y[:, None] * ra * cos_a + y[:, None] ** 2
        with np.errstate(under="ignore"):
            f = np.exp(-r) * num / den * du[None, :]
        return f.sum(axis=1)

    th, w = _circle_nodes()
    p = a - b + 1.0
    s = r0[:, None] * np.exp(1j * th[None, :])
    sp = r0[:, None] ** p * np.exp(1j * p * th[None, :])
    sa = r0[:, None] ** a * np.exp(1j * a * th[None, :])
    circ = 0.5 * ((np.exp(s) * sp / (sa + y[:, None])).real * w[None, :]).sum(axis=1)
    pole = _pole_term(a, b, R)

    total = ray_sum(0)
    prev = total * _DE_H0 / math.pi
    for level in range(1, _DE_MAX_LEVEL + 1):
        total = total + ray_sum(level)
        cur = total * (_DE_H0 / 2**level) / math.pi
        scale = np.maximum.reduce([np.abs(cur), np.abs(circ), np.abs(pole),
                                   np.abs(cur + circ + pole)])
        rel = np.abs(cur - prev) / np.where(scale > 0, scale, 1.0)
        # The trapezoid error squares from one level to the next, so the
        # error of ``cur`` is about rel**2 once rel is small.
        predicted = np.where(rel < 1e-3, rel * rel, rel)
        if np.all(predicted <= 0.1 * tol):
            return cur + circ + pole
        prev = cur
    raise NonConvergenceError(
        f"Hankel quadrature did not converge for a={a}, b={b} "
        f"(estimated rel. error {float(predicted.max()):.2e})")


# --------------------------------------------------------------------------
# asymptotic expansion
# --------------------------------------------------------------------------

def ml_asymptotic(params: MLParams, x, terms: int | None = None,
                  accuracy: MLAccuracy = DEFAULT_ACCURACY):
    """Asymptotic expansion for large negative x.

    E_{a,b}(x) ~ residues - sum_{k=1}^{K} x^(-k) / Gamma(b - a k).
    ``terms=None`` truncates each point just before its smallest term.
    Accepted for |x| >= r_asymptotic / 2.
    """
    arr = _prepare(x)
    a, b = params.a, params.b
    if a == 1.0:
        raise RegimeError("asymptotic series degenerates at a = 1 (Gamma poles)")
    _, ra = accuracy.thresholds(a)
    ax = np.abs(arr)
    if arr.size and ax.min() < 0.5 * ra * (1.0 - 1e-12):
        raise RegimeError(f"asymptotic regime requires |x| >= {0.5 * ra:g}")
    flat = ax.reshape(-1)
    kmax = terms if terms is not None else 120
    if kmax < 1:
        raise DomainError("terms must be >= 1")
    k = np.arange(1, kmax + 1, dtype=float)
    z = b - a * k
    # log|1/Gamma(z)| and its sign; exact zeros at the poles z = 0, -1, ...
    pole = (z <= 0) & (z == np.round(z))
    lg = np.where(pole, 0.0, special.gammaln(np.where(pole, 0.5, z)))
    sgn = np.where(pole, 0.0, special.gammasgn(np.where(pole, 0.5, z)))
    logt = -k[None, :] * np.log(flat)[:, None] - lg[None, :]
    # x^(-k) = (-1)^k |x|^(-k)
    sign = sgn[None, :] * np.where(k % 2 == 0, 1.0, -1.0)[None, :]
    with np.errstate(under="ignore"):
        mag = np.exp(logt)
    if terms is None:
        # Optimal truncation: keep terms up to the minimum of the envelope
        # Gamma(1 - z) / (pi |x|^k), which ignores the sin(pi z) factor whose
        # zeros would otherwise fake an early minimum.
        env = special.gammaln(np.maximum(1.0 - z, 1.0))
        logenv = -k[None, :] * np.log(flat)[:, None] + env[None, :]
        first = np.argmin(logenv, axis=1)
        keep = np.arange(kmax)[None, :] <= first[:, None]
        mag = np.where(keep, mag, 0.0)
    series = -(sign * mag).sum(axis=1)
    R = flat ** (1.0 / a)
    out = series + _pole_term(a, b, R)
    return _finish(x, out.reshape(arr.shape))


# --------------------------------------------------------------------------
# dispatcher
# --------------------------------------------------------------------------

def ml_eval(params: MLParams, x, accuracy: MLAccuracy = DEFAULT_ACCURACY):
    """E_{a,b}(x) for x <= 0, scalar or array, to ``target_rel_err``."""
    arr = _prepare(x)
    a, b = params.a, params.b
    if a == 1.0:
        return _finish(x, _ml_a1(b, arr))
    rs, ra = accuracy.thresholds(a)
    flat = arr.reshape(-1)
    ax = np.abs(flat)
    out = np.empty_like(flat)
    small = ax <= rs
    large = ax >= ra
    mid = ~(small | large)
    if small.any():
        out[small] = ml_series(params, flat[small], accuracy)
    if large.any():
        out[large] = ml_asymptotic(params, flat[large], accuracy=accuracy)
    if mid.any():
        out[mid] = ml_contour(params, flat[mid], accuracy)
    return _finish(x, out.reshape(arr.shape))


# --------------------------------------------------------------------------
# extended-precision references
# --------------------------------------------------------------------------

def ml_oracle(params: MLParams, x: float, digits: int = 30):
    """Series sum in mpmath with a certified truncation and rounding bound.

    Returns an ``mpmath.mpf`` whose absolute error is below 10**(-digits).
    Restricted to |x| <= 200.
    """
    import mpmath as mp

    x = float(x)
    if x > 0 or not math.isfinite(x):
        raise DomainError("oracle needs finite x <= 0")
    if abs(x) > 200.0:
        raise DomainError("series oracle restricted to |x| <= 200")
    if digits < 1 or digits > 2000:
        raise PrecisionExhaustedError("digits must lie in [1, 2000]")
    a, b = params.a, params.b
    ax = abs(x)
    # magnitude of the largest term (controls cancellation)
    if ax == 0.0:
        return mp.mpf(1) / mp.gamma(mp.mpf(b))
    peak = max(k * math.log10(ax) - math.lgamma(a * k + b) / math.log(10)
               for k in range(0, 20000))
    guard = max(0, int(math.ceil(peak))) + 15
    with mp.workdps(digits + guard):
        X = mp.mpf(x)
        A, B = mp.mpf(a), mp.mpf(b)
        total = mp.mpf(0)
        eps = mp.mpf(10) ** (-(digits + 5))
        k = 0
        while True:
            t = X**k / mp.gamma(A * k + B)
            total += t
            k += 1
            if k > 200000:
                raise PrecisionExhaustedError("series oracle did not terminate")
            # once terms decrease with ratio q < 1/2, the tail is bounded by
            # |t_k| / (1 - q) <= 2 |t_k|
            tk = abs(X**k / mp.gamma(A * k + B))
            tk1 = abs(X ** (k + 1) / mp.gamma(A * (k + 1) + B))
            if tk > 0 and tk1 <= tk / 2 and 2 * tk < eps and k * a + b > 2:
                q = tk1 / tk
                # ratios keep decreasing past the peak (log-convexity of Gamma)
                if tk / (1 - q) < eps:
                    break
        return +total


def ml_oracle_hankel(params: MLParams, x: float, digits: int = 30):
    """Extended-precision integral reference for large |x|.

    Uses the Hankel representation collapsed onto the cut (circle radius
    shrunk to zero, valid for b < a + 1) plus the pole residues, in
    mpmath at two working precisions.  Raises if they disagree by more
    than 10**(-digits) relative.
    """
    import mpmath as mp

    a, b = params.a, params.b
    x = float(x)
    if x >= 0 or not math.isfinite(x):
        raise DomainError("Hankel oracle needs finite x < 0")
    if not (b < a + 1.0) or a == 1.0:
        raise DomainError("Hankel oracle needs b < a + 1 and a != 1")

    def value(dps):
        with mp.workdps(dps):
            A, B, Y = mp.mpf(a), mp.mpf(b), mp.mpf(-x)
            p = A - B + 1  # substitution v = r^p removes the r^(a-b) endpoint
            sb, sab, ca = mp.sinpi(B), mp.sinpi(A - B), mp.cospi(A)

            def f(v):
                if v == 0:
                    return mp.mpf(0)
                r = v ** (1 / p)
                ra = r**A
                num = ra * sb - Y * sab
                den = ra * ra + 2 * Y * ra * ca + Y * Y
                return mp.exp(-r) * num / den / p

            R = Y ** (1 / A)
            pts = sorted({mp.mpf(0), mp.mpf(1), R ** p, mp.mpf(10) ** p,
                          mp.mpf(50) ** p, mp.mpf(200) ** p})
            ray = mp.quad(f, pts + [mp.inf]) / mp.pi
            pole = mp.mpf(0)
            if A > 1:
                sp = R * mp.expjpi(1 / A)
                pole = (2 / A) * mp.re(mp.exp(sp) * sp ** (1 - B))
            return ray + pole

    v1 = value(digits + 10)
    v2 = value(digits + 25)
    with mp.workdps(digits + 25):
        if abs(v1 - v2) > mp.mpf(10) ** (-digits) * abs(v2):
            raise PrecisionExhaustedError("Hankel oracle failed to certify")
    return v2
