"""Problem description: spectrum, kernel, nonlinearity, initial data.

The equation is posed in the eigenbasis of A, so an instance is a list of
scalar modes k with eigenvalue lambda_k of A, noise eigenvalue mu_k of Q,
an uncoupled nonlinearity F(u)_k = f(u_k) and initial coefficient u0_k.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, NonFiniteError

__all__ = [
    "Spectrum",
    "KernelSpec",
    "Nonlinearity",
    "ProblemInstance",
    "RegularityReport",
    "dirichlet_laplacian_1d",
    "laplacian_modes",
    "validate_noise_regularity",
    "apply_nonlinearity",
    "nonlinearity_from_name",
]


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues of A (``lambdas``) and of the noise covariance Q (``mus``).

    ``mus=None`` means the noise has not been specified yet.  A zero
    eigenvalue is accepted as a synthetic test mode (s_k == 1).
    """

    lambdas: tuple[float, ...]
    mus: tuple[float, ...] | None = None

    def __post_init__(self):
        lam = tuple(float(v) for v in np.atleast_1d(self.lambdas))
        if len(lam) == 0:
            raise DomainError("spectrum needs at least one mode")
        if not all(math.isfinite(v) and v >= 0.0 for v in lam):
            raise DomainError("eigenvalues must be finite and non-negative")
        if any(b < a for a, b in zip(lam, lam[1:])):
            raise DomainError("eigenvalues must be nondecreasing")
        object.__setattr__(self, "lambdas", lam)
        if self.mus is not None:
            mu = tuple(float(v) for v in np.atleast_1d(self.mus))
            if len(mu) != len(lam):
                raise DomainError("mus and lambdas must have equal length")
            if not all(math.isfinite(v) and v >= 0.0 for v in mu):
                raise DomainError("noise eigenvalues must be finite and non-negative")
            object.__setattr__(self, "mus", mu)

    @property
    def N(self) -> int:
        return len(self.lambdas)

    @property
    def lam(self) -> np.ndarray:
        return np.array(self.lambdas)

    @property
    def mu(self) -> np.ndarray:
        if self.mus is None:
            raise DomainError("noise eigenvalues are not set")
        return np.array(self.mus)

    def with_mus(self, mus) -> "Spectrum":
        return Spectrum(self.lambdas, tuple(np.broadcast_to(np.asarray(mus, float), (self.N,))))

    def subset(self, idx) -> "Spectrum":
        idx = list(idx)
        mus = None if self.mus is None else tuple(self.mus[i] for i in idx)
        return Spectrum(tuple(self.lambdas[i] for i in idx), mus)


@dataclass(frozen=True)
class KernelSpec:
    """Riesz kernel b(t) = t^(alpha-1)/Gamma(alpha) with rho = alpha + 1.

    Requires 1 < rho < 2.  ``KernelSpec.memoryless()`` builds the rho = 1
    limit (b = delta, the Ornstein-Uhlenbeck case) used as a reduction test.
    """

    rho: float
    allow_memoryless: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        rho = float(self.rho)
        object.__setattr__(self, "rho", rho)
        if self.allow_memoryless and rho == 1.0:
            return
        if not (1.0 < rho < 2.0):
            raise DomainError(f"need 1 < rho < 2, got {self.rho!r}")

    @classmethod
    def memoryless(cls) -> "KernelSpec":
        return cls(1.0, allow_memoryless=True)

    @property
    def alpha(self) -> float:
        return self.rho - 1.0


@dataclass(frozen=True)
class Nonlinearity:
    """Uncoupled nonlinearity F(u)_k = f(u_k), or the zero map.

    ``f`` must accept and return numpy arrays elementwise.
    """

    kind: str = "zero"
    f: Callable[[np.ndarray], np.ndarray] | None = None
    lipschitz_hint: float | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("uncoupled", "zero"):
            raise DomainError(f"unknown nonlinearity kind {self.kind!r}")
        if self.kind == "uncoupled" and self.f is None:
            raise DomainError("uncoupled nonlinearity needs a function f")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def __call__(self, u):
        return apply_nonlinearity(self, u)


def _rational(c: float):
    def f(u):
        return c * (1.0 - u) / (1.0 + u * u)
    return f


def nonlinearity_from_name(name: str, scale: float = 5.0) -> Nonlinearity:
    """Built-in nonlinearities: ``sin``, ``rational`` (c(1-u)/(1+u^2)), ``zero``."""
    if name == "sin":
        return Nonlinearity("uncoupled", np.sin, 1.0, "sin")
    if name == "rational":
        # sup |d/du (1-u)/(1+u^2)| = (1 + sqrt 2)/2 ~ 1.207
        return Nonlinearity("uncoupled", _rational(float(scale)),
                            abs(scale) * (1 + math.sqrt(2)) / 2, f"rational({scale!r})")
    if name == "zero":
        return Nonlinearity("zero", None, 0.0, "zero")
    raise DomainError(f"unknown nonlinearity {name!r}")


def apply_nonlinearity(nl: Nonlinearity, u) -> np.ndarray:
    """Componentwise f(u_k); zeros for the zero kind."""
    u = np.asarray(u, dtype=float)
    if nl.is_zero:
        return np.zeros_like(u)
    out = np.asarray(nl.f(u), dtype=float)
    if out.shape != u.shape:
        raise DomainError("nonlinearity changed the array shape")
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))[0]
        raise NonFiniteError(f"nonlinearity returned a non-finite value at index {tuple(bad)}")
    return out


@dataclass(frozen=True)
class ProblemInstance:
    """One problem: spectrum (with mus), kernel, nonlinearity, u0, horizon T."""

    spectrum: Spectrum
    kernel: KernelSpec
    nonlinearity: Nonlinearity = field(default_factory=Nonlinearity)
    u0: tuple[float, ...] | None = None
    T: float = 1.0

    def __post_init__(self):
        if self.spectrum.mus is None:
            raise DomainError("problem instance needs noise eigenvalues (mus)")
        if not (math.isfinite(self.T) and self.T > 0):
            raise DomainError("T must be positive")
        u0 = (0.0,) * self.spectrum.N if self.u0 is None else tuple(float(v) for v in self.u0)
        if len(u0) != self.spectrum.N:
            raise DomainError("u0 must have one coefficient per mode")
        if not all(math.isfinite(v) for v in u0):
            raise DomainError("u0 must be finite")
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "T", float(self.T))

    @property
    def N(self) -> int:
        return self.spectrum.N

    @property
    def u0_array(self) -> np.ndarray:
        return np.array(self.u0)

    @property
    def deterministic(self) -> bool:
        return not any(self.spectrum.mus)

    def describe(self) -> dict:
        return {
            "lambdas": list(self.spectrum.lambdas),
            "mus": list(self.spectrum.mus),
            "rho": self.kernel.rho,
            "nonlinearity": self.nonlinearity.name or self.nonlinearity.kind,
            "u0": list(self.u0),
            "T": self.T,
        }

    def digest(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def dirichlet_laplacian_1d(N: int) -> Spectrum:
    """Eigenvalues k^2 pi^2, k = 1..N, of -d^2/dx^2 on (0,1) with Dirichlet BC."""
    if int(N) != N or N < 1:
        raise DomainError("N must be a positive integer")
    k = np.arange(1, int(N) + 1, dtype=float)
    return Spectrum(tuple(k * k * math.pi**2))


def laplacian_modes(indices) -> Spectrum:
    """Selected Dirichlet modes k (1-based), e.g. ``[10]`` for lambda_10."""
    idx = sorted(int(i) for i in indices)
    if not idx or idx[0] < 1:
        raise DomainError("mode indices must be >= 1")
    return Spectrum(tuple(float(k * k) * math.pi**2 for k in idx))


@dataclass(frozen=True)
class RegularityReport:
    beta_estimate: float
    trace: float
    predicted_temporal_rate: float
    notes: str = ""


def validate_noise_regularity(spectrum: Spectrum, kernel: KernelSpec) -> RegularityReport:
    """Estimate the noise regularity exponent beta from the truncated spectrum.

    The relevant quantity is the Hilbert-Schmidt norm
    sum_k lambda_k^(beta - 1/rho) mu_k.  Power laws mu_k ~ k^(-p) and
    lambda_k ~ k^q are fitted by least squares on log-log data over the top
    half of the modes; the sum is finite iff q (beta - 1/rho) - p < -1, which
    gives beta = min(1/rho, 1/rho + (p - 1)/q).
    """
    mu = spectrum.mu
    lam = spectrum.lam
    inv_rho = 1.0 / kernel.rho
    trace = math.fsum(mu)
    if trace == 0.0:
        return RegularityReport(inv_rho, 0.0, 1.0, "deterministic (all mu_k = 0)")
    if spectrum.N == 1:
        return RegularityReport(inv_rho, trace, kernel.rho * inv_rho,
                                "single mode: noise is trace class")
    k = np.arange(1, spectrum.N + 1, dtype=float)
    top = slice(spectrum.N // 2, None)
    kk, mm, ll = k[top], mu[top], lam[top]
    ok = (mm > 0) & (ll > 0)
    if ok.sum() < 2:
        return RegularityReport(inv_rho, trace, 1.0,
                                "too few nonzero modes in fit window; assuming trace class")
    logk = np.log(kk[ok])
    p = -np.polyfit(logk, np.log(mm[ok]), 1)[0]
    q = np.polyfit(logk, np.log(ll[ok]), 1)[0]
    if q <= 0:
        return RegularityReport(inv_rho, trace, 1.0,
                                "eigenvalues not growing; treated as trace class")
    beta = min(inv_rho, inv_rho + (p - 1.0) / q)
    notes = f"fit over modes {spectrum.N // 2 + 1}..{spectrum.N}: mu ~ k^-{p:.3f}, lambda ~ k^{q:.3f}"
    if beta <= 0.0:
        notes += "; regularity condition fails (beta <= 0), estimate clipped"
        beta = 1e-6
    return RegularityReport(float(beta), trace, float(beta * kernel.rho), notes)
