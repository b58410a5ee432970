"""Strong-error studies, trajectory dumps and their configuration.

A study draws, for every sample path, one noise realization on the
reference grid and reuses it on every coarser grid:

* ``exact_cholesky``: an exact joint draw of the stochastic convolution at
  the reference times; coarser grids take the subset of values at their
  own times.
* ``ito_sum``: Brownian increments on the reference grid; BE-CQ sums them
  over coarse steps and MLEI uses left-point Ito sums of the resolvent.

Paths are processed in fixed blocks of ``PATH_BLOCK``, independent of the
worker count, and aggregated in path order, so tables are byte-identical
for any number of workers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import multiprocessing as mp
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import __version__, _kernels
from .errors import ConfigError, DegenerateDataError
from .io import ArrayCache
from .model import (
    KernelSpec,
    ProblemInstance,
    Spectrum,
    laplacian_modes,
    nonlinearity_from_name,
)
from .noise import PathSeed, STREAM_BROWNIAN, build_conv_covariance, kernel_on_grid, sample_exact_paths
from .resolvent import TimeGrid, build_resolvent_table
from .solvers import METHODS, becq_paths, cq_weights, mlei_paths

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

__all__ = [
    "ExperimentConfig",
    "ErrorRow",
    "ErrorTable",
    "SlopeFit",
    "load_config",
    "config_from_dict",
    "run_strong_error_study",
    "run_trajectory_demo",
    "fit_slope",
    "write_study",
]

PATH_BLOCK = 10
METRICS = ("final_time", "sup_over_grid")
SAMPLERS = ("exact_cholesky", "ito_sum")
BOOTSTRAP_STREAM = 2**32 - 1


@dataclass(frozen=True)
class ExperimentConfig:
    instance: ProblemInstance
    methods: tuple[str, ...] = ("mlei",)
    dt_levels: tuple[int, ...] = (16, 32, 64, 128, 256, 512)
    ref_level: int = 8192
    n_paths: int = 100
    master_seed: int = 0
    error_metric: str = "final_time"
    sampler_mode: str | None = None
    reference: str = "self"
    workers: int = 1
    n_boot: int = 1000
    cache_dir: str | None = None
    demo_level: int | None = None
    demo_paths: int = 1
    check: dict = field(default_factory=dict)
    output_dir: str = "results"

    def __post_init__(self):
        methods = tuple(self.methods)
        if not methods or any(m not in METHODS for m in methods) or len(set(methods)) != len(methods):
            raise ConfigError(f"methods must be distinct entries of {METHODS}")
        object.__setattr__(self, "methods", methods)
        levels = tuple(int(v) for v in self.dt_levels)
        if not levels or any(v < 1 for v in levels) or list(levels) != sorted(set(levels)):
            raise ConfigError("dt_levels must be strictly increasing positive integers")
        object.__setattr__(self, "dt_levels", levels)
        if int(self.ref_level) < 1 or any(self.ref_level % v for v in levels):
            raise ConfigError("ref_level must be divisible by every dt level")
        if self.ref_level < 8 * levels[-1]:
            raise ConfigError("ref_level must be at least 8 times the finest dt level")
        if int(self.n_paths) < 2:
            raise ConfigError("n_paths must be at least 2")
        if not (0 <= int(self.master_seed) < 2**64):
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        if self.error_metric not in METRICS:
            raise ConfigError(f"error_metric must be one of {METRICS}")
        sampler = self.sampler_mode
        if sampler is None:
            sampler = "ito_sum" if "becq" in methods else "exact_cholesky"
        if sampler not in SAMPLERS:
            raise ConfigError(f"sampler_mode must be one of {SAMPLERS}")
        if sampler == "exact_cholesky" and "becq" in methods:
            raise ConfigError("becq needs Brownian increments: use sampler_mode = 'ito_sum'")
        object.__setattr__(self, "sampler_mode", sampler)
        if self.reference not in ("self",) + METHODS:
            raise ConfigError("reference must be 'self', 'mlei' or 'becq'")
        if self.reference == "becq" and sampler == "exact_cholesky":
            raise ConfigError("a becq reference needs sampler_mode = 'ito_sum'")
        if int(self.workers) < 1 or int(self.n_boot) < 0:
            raise ConfigError("workers must be >= 1 and bootstrap >= 0")
        if self.demo_level is not None and int(self.demo_level) < 1:
            raise ConfigError("demo level must be positive")
        if int(self.demo_paths) < 1:
            raise ConfigError("demo n_paths must be positive")
        for meth, win in self.check.items():
            if meth not in methods or len(win) != 2 or not win[0] <= win[1]:
                raise ConfigError(f"bad check window for {meth!r}")

    @property
    def grids(self) -> list[TimeGrid]:
        return [TimeGrid(self.instance.T, M) for M in self.dt_levels]

    @property
    def ref_grid(self) -> TimeGrid:
        return TimeGrid(self.instance.T, self.ref_level)

    def to_dict(self) -> dict:
        """Canonical description (everything that affects the numbers)."""
        return {
            "instance": self.instance.describe(),
            "methods": list(self.methods),
            "dt_levels": list(self.dt_levels),
            "ref_level": self.ref_level,
            "n_paths": self.n_paths,
            "master_seed": self.master_seed,
            "error_metric": self.error_metric,
            "sampler_mode": self.sampler_mode,
            "reference": self.reference,
            "bootstrap": self.n_boot,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------- config files

_SECTIONS = {
    "instance": {"rho", "lambdas", "modes", "mus", "nonlinearity", "scale", "u0", "T"},
    "study": {"methods", "dt_levels", "ref_level", "n_paths", "master_seed", "error_metric",
              "sampler_mode", "reference", "workers", "bootstrap", "cache_dir"},
    "demo": {"level", "n_paths"},
    "check": set(METHODS),
    "output": {"dir"},
}


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a config from parsed TOML; unknown sections or keys are errors."""
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    for name, allowed in _SECTIONS.items():
        sec = data.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"[{name}] must be a table")
        bad = set(sec) - allowed
        if bad:
            raise ConfigError(f"unknown key(s) in [{name}]: {sorted(bad)}")
    inst = data.get("instance")
    if not inst:
        raise ConfigError("missing [instance] section")
    try:
        return _build_config(data, inst)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _build_config(data: dict, inst: dict) -> ExperimentConfig:
    if ("lambdas" in inst) == ("modes" in inst):
        raise ConfigError("give exactly one of 'lambdas' or 'modes' in [instance]")
    if "rho" not in inst:
        raise ConfigError("missing 'rho' in [instance]")
    spec = (Spectrum(tuple(inst["lambdas"])) if "lambdas" in inst
            else laplacian_modes(inst["modes"]))
    spec = spec.with_mus(inst.get("mus", 1.0))
    name = inst.get("nonlinearity", "zero")
    nl = (nonlinearity_from_name(name, inst["scale"]) if "scale" in inst
          else nonlinearity_from_name(name))
    instance = ProblemInstance(spec, KernelSpec(inst["rho"]), nl,
                               None if "u0" not in inst else tuple(inst["u0"]),
                               inst.get("T", 1.0))
    st = data.get("study", {})
    kw = {}
    for key, attr in (("methods", "methods"), ("dt_levels", "dt_levels"),
                      ("ref_level", "ref_level"), ("n_paths", "n_paths"),
                      ("master_seed", "master_seed"), ("error_metric", "error_metric"),
                      ("sampler_mode", "sampler_mode"), ("reference", "reference"),
                      ("workers", "workers"), ("bootstrap", "n_boot"),
                      ("cache_dir", "cache_dir")):
        if key in st:
            kw[attr] = tuple(st[key]) if key in ("methods", "dt_levels") else st[key]
    demo = data.get("demo", {})
    if "level" in demo:
        kw["demo_level"] = demo["level"]
    if "n_paths" in demo:
        kw["demo_paths"] = demo["n_paths"]
    kw["check"] = {k: tuple(float(x) for x in v) for k, v in data.get("check", {}).items()}
    if "dir" in data.get("output", {}):
        kw["output_dir"] = data["output"]["dir"]
    return ExperimentConfig(instance, **kw)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return config_from_dict(data)


# ---------------------------------------------------------------- slopes

class SlopeFit(NamedTuple):
    slope: float
    intercept: float
    ci: tuple[float, float] | None


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def fit_slope(points, per_path_sq=None, n_boot: int = 1000, seed: int = 0,
              level: float = 0.90) -> SlopeFit:
    """Least-squares fit of log2(err) against log2(dt).

    ``points`` is a sequence of (dt, err).  With ``per_path_sq`` (one array
    of per-path squared errors per point, err = sqrt(mean)), a percentile
    bootstrap over paths gives the ``level`` confidence interval.
    """
    pts = [(float(d), float(e)) for d, e in points]
    if len(pts) < 3:
        raise DegenerateDataError("need at least 3 points for a slope")
    dt = np.array([p[0] for p in pts])
    err = np.array([p[1] for p in pts])
    if not (np.all(np.isfinite(err)) and np.all(err > 0) and np.all(dt > 0)):
        raise DegenerateDataError("errors must be finite and positive")
    x = np.log2(dt)
    slope, intercept = _ols(x, np.log2(err))
    ci = None
    if per_path_sq is not None and n_boot > 0:
        X = np.asarray(per_path_sq, dtype=float)
        if X.ndim != 2 or X.shape[0] != len(pts):
            raise DegenerateDataError("per-path data must have one row per point")
        ss = np.random.SeedSequence(int(seed), spawn_key=(BOOTSTRAP_STREAM,))
        rng = np.random.Generator(np.random.Philox(ss))
        n = X.shape[1]
        idx = rng.integers(0, n, size=(n_boot, n))
        boot = np.sqrt(X[:, idx].mean(axis=2))          # (points, n_boot)
        ok = np.all(boot > 0, axis=0)
        y = np.log2(boot[:, ok])
        xc = x - x.mean()
        slopes = xc @ (y - y.mean(axis=0)) / (xc @ xc)
        if slopes.size:
            tail = 50 * (1 - level)
            lo, hi = np.percentile(slopes, [tail, 100 - tail])
            ci = (float(lo), float(hi))
    return SlopeFit(slope, intercept, ci)


# ---------------------------------------------------------------- study

@dataclass(frozen=True)
class ErrorRow:
    method: str
    M: int
    dt: float
    strong_error: float
    stderr: float


@dataclass(frozen=True)
class ErrorTable:
    """Strong errors for one metric, fitted slopes and per-path data."""

    metric: str
    rows: tuple[ErrorRow, ...]
    slopes: dict                      # method -> SlopeFit (NaN slope if degenerate)
    per_path: dict = field(repr=False, default_factory=dict)   # (method, M) -> sq errors
    meta: dict = field(default_factory=dict)
    companion: "ErrorTable | None" = field(default=None, repr=False)

    def errors(self, method: str) -> np.ndarray:
        return np.array([r.strong_error for r in self.rows if r.method == method])

    def row(self, method: str, M: int) -> ErrorRow:
        for r in self.rows:
            if r.method == method and r.M == M:
                return r
        raise KeyError((method, M))

    def errors_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "dt", "strong_error", "stderr"])
        for r in self.rows:
            w.writerow([r.method, _fmt(r.dt), _fmt(r.strong_error), _fmt(r.stderr)])
        return buf.getvalue()

    def slopes_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "slope", "ci_lo", "ci_hi"])
        for meth, fit in self.slopes.items():
            lo, hi = fit.ci if fit.ci is not None else (math.nan, math.nan)
            w.writerow([meth, _fmt(fit.slope), _fmt(lo), _fmt(hi)])
        return buf.getvalue()


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


@dataclass
class _Context:
    config: ExperimentConfig
    tables: dict          # M -> ResolventTable (mlei)
    cqs: dict             # M -> CQWeights (becq)
    covs: list            # per mode ConvCovariance or None
    kernels: list         # per mode resolvent values on the reference grid (ito_sum)


_CTX: _Context | None = None


def _prepare(config: ExperimentConfig) -> _Context:
    inst = config.instance
    cache = ArrayCache(config.cache_dir) if config.cache_dir else None
    levels = list(config.dt_levels) + [config.ref_level]
    used = set(config.methods)
    if config.reference != "self":
        used.add(config.reference)
    tables, cqs = {}, {}
    for M in levels:
        g = TimeGrid(inst.T, M)
        if "mlei" in used:
            tables[M] = build_resolvent_table(inst.spectrum, inst.kernel, g, cache=cache)
        if "becq" in used:
            cqs[M] = cq_weights(inst.kernel.alpha, g.dt, M)
    covs = [None] * inst.N
    kernels = [None] * inst.N
    for k, (lam, mu) in enumerate(zip(inst.spectrum.lambdas, inst.spectrum.mus)):
        if mu == 0.0:
            continue
        if config.sampler_mode == "exact_cholesky":
            covs[k] = build_conv_covariance(lam, mu, inst.kernel, config.ref_grid, mode=k,
                                            keep_matrix=False, cache=cache)
        elif "mlei" in used:
            kernels[k] = kernel_on_grid(inst.kernel.rho, lam, config.ref_grid)
    return _Context(config, tables, cqs, covs, kernels)


def _increments(mu: float, grid: TimeGrid, seed: int, paths, mode: int) -> np.ndarray:
    out = np.empty((len(paths), grid.M))
    sd = math.sqrt(grid.dt * mu)
    for row, p in enumerate(paths):
        out[row] = sd * PathSeed(seed, p, mode, STREAM_BROWNIAN).normals(grid.M)
    return out


def _mode_noise(ctx: _Context, k: int, paths, grid: TimeGrid):
    """(stochastic convolution, Brownian increments) of one mode on ``grid``."""
    cfg = ctx.config
    mu = cfg.instance.spectrum.mus[k]
    if mu == 0.0:
        return None, None
    if cfg.sampler_mode == "exact_cholesky":
        return sample_exact_paths(ctx.covs[k], cfg.master_seed, paths), None
    dW = _increments(mu, grid, cfg.master_seed, paths, k)
    conv = None
    if ctx.kernels[k] is not None:
        conv = np.empty_like(dW)
        for row in range(dW.shape[0]):
            conv[row] = _kernels.ito_convolution(ctx.kernels[k], dW[row], 1, dW.shape[1])
    return conv, dW


def _solve(ctx: _Context, method: str, M: int, r: int, k: int, conv, dW, n_paths: int):
    """Run ``method`` on M steps; noise arrays live on a grid r times finer."""
    inst = ctx.config.instance
    u0 = inst.u0[k]
    if method == "mlei":
        c = None if conv is None else np.ascontiguousarray(conv[:, r - 1::r])
        t = ctx.tables[M]
        return mlei_paths(t.s[k], t.w[k], u0, inst.nonlinearity, c, n_paths, k)
    d = None if dW is None else dW.reshape(dW.shape[0], M, r).sum(axis=2)
    return becq_paths(inst.spectrum.lambdas[k], ctx.cqs[M], u0, inst.nonlinearity,
                      d, M, n_paths, k)


def _run_block(paths) -> dict:
    ctx = _CTX
    cfg = ctx.config
    P = len(paths)
    fin = {(m, M): np.zeros(P) for m in cfg.methods for M in cfg.dt_levels}
    sup = {(m, M): np.zeros((P, M + 1)) for m in cfg.methods for M in cfg.dt_levels}
    for k in range(cfg.instance.N):
        conv, dW = _mode_noise(ctx, k, paths, cfg.ref_grid)
        refs = {}
        for meth in cfg.methods:
            rmeth = meth if cfg.reference == "self" else cfg.reference
            if rmeth not in refs:
                refs[rmeth] = _solve(ctx, rmeth, cfg.ref_level, 1, k, conv, dW, P)
            ref = refs[rmeth]
            for M in cfg.dt_levels:
                r = cfg.ref_level // M
                D = _solve(ctx, meth, M, r, k, conv, dW, P) - ref[:, ::r]
                D2 = D * D
                fin[meth, M] += D2[:, -1]
                sup[meth, M] += D2
    return {key: (fin[key], sup[key].max(axis=1)) for key in fin}


def _blocks(n_paths: int):
    return [list(range(i, min(i + PATH_BLOCK, n_paths))) for i in range(0, n_paths, PATH_BLOCK)]


def _map_blocks(blocks, workers: int):
    if workers <= 1 or len(blocks) == 1:
        return [_run_block(b) for b in blocks]
    try:
        ctx = mp.get_context("fork")
    except ValueError:  # pragma: no cover
        return [_run_block(b) for b in blocks]
    with ctx.Pool(min(workers, len(blocks))) as pool:
        return pool.map(_run_block, blocks, chunksize=1)


def _rms(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    mean = math.fsum(x.tolist()) / n
    err = math.sqrt(mean)
    if err == 0.0:
        return 0.0, 0.0
    var = math.fsum(((x - mean) ** 2).tolist()) / (n - 1)
    return err, math.sqrt(var / n) / (2 * err)


def _table(config: ExperimentConfig, metric: str, data: dict, meta: dict) -> ErrorTable:
    rows, slopes = [], {}
    for meth in config.methods:
        pts = []
        for M in config.dt_levels:
            err, se = _rms(data[meth, M])
            dt = config.instance.T / M
            rows.append(ErrorRow(meth, M, dt, err, se))
            pts.append((dt, err))
        X = np.stack([data[meth, M] for M in config.dt_levels])
        try:
            slopes[meth] = fit_slope(pts, X, config.n_boot, config.master_seed)
        except DegenerateDataError:
            slopes[meth] = SlopeFit(math.nan, math.nan, None)
    return ErrorTable(metric, tuple(rows), slopes, data, meta)


def run_strong_error_study(config: ExperimentConfig, workers: int | None = None) -> ErrorTable:
    """Monte-Carlo strong errors of every method at every dt level.

    Returns the table for ``config.error_metric``; the other metric is
    attached as ``companion``.
    """
    global _CTX
    if len(config.dt_levels) < 3:
        raise ConfigError("a strong-error study needs at least 3 dt levels")
    workers = config.workers if workers is None else int(workers)
    _CTX = _prepare(config)
    try:
        results = _map_blocks(_blocks(config.n_paths), workers)
    finally:
        clamps = [0.0 if c is None else c.clamp for c in _CTX.covs]
        _CTX = None
    keys = results[0].keys()
    fin = {key: np.concatenate([res[key][0] for res in results]) for key in keys}
    sup = {key: np.concatenate([res[key][1] for res in results]) for key in keys}
    meta = {
        "master_seed": config.master_seed,
        "config_hash": config.digest(),
        "instance_hash": config.instance.digest(),
        "version": __version__,
        "numpy": np.__version__,
        "sampler_mode": config.sampler_mode,
        "reference": config.reference,
        "n_paths": config.n_paths,
        "clamp_events": [{"mode": k, "shift": c} for k, c in enumerate(clamps) if c > 0],
    }
    tables = {m: _table(config, m, d, dict(meta, metric=m))
              for m, d in (("final_time", fin), ("sup_over_grid", sup))}
    main = tables[config.error_metric]
    other = tables[METRICS[1 - METRICS.index(config.error_metric)]]
    return ErrorTable(main.metric, main.rows, main.slopes, main.per_path, main.meta, other)


def write_study(table: ErrorTable, outdir) -> list[Path]:
    """errors.csv, slopes.csv, meta.json (+ the companion metric's CSVs)."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "errors.csv", out / "slopes.csv", out / "meta.json"]
    files[0].write_text(table.errors_csv())
    files[1].write_text(table.slopes_csv())
    files[2].write_text(json.dumps(table.meta, indent=2, sort_keys=True) + "\n")
    if table.companion is not None:
        c = table.companion
        for stem, text in (("errors", c.errors_csv()), ("slopes", c.slopes_csv())):
            f = out / f"{stem}_{c.metric}.csv"
            f.write_text(text)
            files.append(f)
    return files


# ---------------------------------------------------------------- demo

def run_trajectory_demo(config: ExperimentConfig, outdir) -> list[Path]:
    """Write sample trajectories of the first configured method.

    One CSV per path (``m,t,k,U``, k is the 0-based mode position) and a
    JSON sidecar.  The step count is ``demo_level`` or the finest dt level.
    """
    inst = config.instance
    M = config.demo_level or config.dt_levels[-1]
    grid = TimeGrid(inst.T, M)
    method = config.methods[0]
    paths = list(range(config.demo_paths))
    tables, cqs = {}, {}
    if method == "mlei":
        tables[M] = build_resolvent_table(inst.spectrum, inst.kernel, grid)
    else:
        cqs[M] = cq_weights(inst.kernel.alpha, grid.dt, M)
    covs, kernels = [None] * inst.N, [None] * inst.N
    for k, (lam, mu) in enumerate(zip(inst.spectrum.lambdas, inst.spectrum.mus)):
        if mu == 0.0:
            continue
        if config.sampler_mode == "exact_cholesky":
            covs[k] = build_conv_covariance(lam, mu, inst.kernel, grid, mode=k, keep_matrix=False)
        elif method == "mlei":
            kernels[k] = kernel_on_grid(inst.kernel.rho, lam, grid)
    ctx = _Context(config, tables, cqs, covs, kernels)
    clamps = [0.0 if c is None else c.clamp for c in covs]
    U = np.empty((len(paths), M + 1, inst.N))
    for k in range(inst.N):
        conv, dW = _mode_noise(ctx, k, paths, grid)
        U[:, :, k] = _solve(ctx, method, M, 1, k, conv, dW, len(paths))
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    t = grid.times()
    files = []
    for row, p in enumerate(paths):
        f = out / f"trajectory_{method}_p{p}.csv"
        with open(f, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["m", "t", "k", "U"])
            for m in range(M + 1):
                for k in range(inst.N):
                    w.writerow([m, _fmt(t[m]), k, _fmt(U[row, m, k])])
        files.append(f)
    side = out / "trajectory_meta.json"
    side.write_text(json.dumps({
        "method": method, "M": M, "paths": paths, "master_seed": config.master_seed,
        "sampler_mode": config.sampler_mode, "config_hash": config.digest(),
        "instance_hash": inst.digest(), "version": __version__,
        "clamp_events": [{"mode": k, "shift": c} for k, c in enumerate(clamps) if c > 0],
    }, indent=2, sort_keys=True) + "\n")
    files.append(side)
    return files
