import csv
import io
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volterra.errors import ConfigError, DegenerateDataError
from volterra.harness import (
    ExperimentConfig,
    config_from_dict,
    fit_slope,
    load_config,
    run_strong_error_study,
    run_trajectory_demo,
    write_study,
)
from volterra.model import KernelSpec, ProblemInstance, laplacian_modes, nonlinearity_from_name

FIXTURES = Path(__file__).parent / "fixtures"
CONFIGS = Path(__file__).parent.parent / "configs"


def small(nl="sin", methods=("mlei",), mus=1.0, rho=1.5, k=2, u0=None, **kw):
    inst = ProblemInstance(laplacian_modes([k]).with_mus(mus), KernelSpec(rho),
                           nonlinearity_from_name(nl), u0)
    kw.setdefault("dt_levels", (8, 16, 32))
    kw.setdefault("ref_level", 256)
    kw.setdefault("n_paths", 20)
    kw.setdefault("master_seed", 3)
    return ExperimentConfig(inst, methods, **kw)


class TestFitSlope:
    def test_linear(self):
        dts = [2.0**-j for j in range(4, 10)]
        fit = fit_slope([(d, d) for d in dts])
        assert fit.slope == pytest.approx(1.0, abs=1e-12)
        assert fit.intercept == pytest.approx(0.0, abs=1e-10)
        assert fit.ci is None

    def test_sqrt(self):
        dts = [2.0**-j for j in range(4, 10)]
        assert fit_slope([(d, 3 * math.sqrt(d)) for d in dts]).slope == pytest.approx(0.5, abs=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateDataError):
            fit_slope([(0.1, 1.0), (0.05, 0.0), (0.025, 0.2)])
        with pytest.raises(DegenerateDataError):
            fit_slope([(0.1, 1.0), (0.05, math.nan), (0.025, 0.2)])
        with pytest.raises(DegenerateDataError):
            fit_slope([(0.1, 1.0), (0.05, 0.5)])

    def test_bootstrap_ci(self):
        rng = np.random.default_rng(0)
        dts = np.array([2.0**-j for j in range(3, 8)])
        X = (dts[:, None] ** 2) * rng.chisquare(1, size=(dts.size, 200))
        pts = [(d, math.sqrt(x.mean())) for d, x in zip(dts, X)]
        fit = fit_slope(pts, X, 500, seed=1)
        lo, hi = fit.ci
        assert lo < fit.slope < hi
        assert fit_slope(pts, X, 500, seed=1).ci == fit.ci

    @settings(max_examples=50, deadline=None)
    @given(p=st.floats(0.1, 3.0), c=st.floats(1e-6, 1e3))
    def test_power_law_recovered(self, p, c):
        dts = [2.0**-j for j in range(3, 9)]
        assert fit_slope([(d, c * d**p) for d in dts]).slope == pytest.approx(p, abs=1e-9)


class TestConfig:
    def test_defaults(self):
        cfg = small(dt_levels=(16, 32, 64, 128, 256, 512), ref_level=8192)
        assert cfg.sampler_mode == "exact_cholesky"
        assert cfg.error_metric == "final_time"
        assert small(methods=("mlei", "becq")).sampler_mode == "ito_sum"

    @pytest.mark.parametrize("kw", [
        dict(ref_level=100),
        dict(ref_level=128),
        dict(n_paths=1),
        dict(dt_levels=(16, 8, 32)),
        dict(error_metric="median"),
        dict(sampler_mode="exact_cholesky", methods=("becq",)),
        dict(methods=("rk4",)),
        dict(methods=()),
        dict(master_seed=-1),
        dict(workers=0),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            small(**kw)

    def test_toml(self, tmp_path):
        f = tmp_path / "c.toml"
        f.write_text('[instance]\nrho = 1.2\nmodes = [10]\nmus = 1.0\nnonlinearity = "rational"\n'
                     '[study]\ndt_levels = [4, 8, 16]\nref_level = 128\nn_paths = 5\n'
                     'master_seed = 9\n[check]\nmlei = [0.8, 1.2]\n')
        cfg = load_config(f)
        assert cfg.instance.spectrum.lambdas == pytest.approx((100 * math.pi**2,))
        assert cfg.instance.nonlinearity.name == "rational(5.0)"
        assert cfg.check == {"mlei": (0.8, 1.2)}
        assert cfg.digest() == load_config(f).digest()

    @pytest.mark.parametrize("text", [
        '[instance]\nrho = 1.2\nmodes = [1]\ncolour = "red"\n',
        '[instance]\nrho = 1.2\nmodes = [1]\n[extra]\na = 1\n',
        '[instance]\nrho = 1.2\n',
        '[instance]\nrho = 1.2\nmodes = [1]\nlambdas = [1.0]\n',
        '[study]\nn_paths = 4\n',
        '[instance]\nrho = 2.5\nmodes = [1]\n',
        '[instance]\nrho = 1.2\nmodes = [1]\nnonlinearity = "tanh"\n',
        '[instance\n',
    ])
    def test_bad_files(self, tmp_path, text):
        f = tmp_path / "c.toml"
        f.write_text(text)
        with pytest.raises(ConfigError):
            load_config(f)

    def test_example_configs_load(self):
        files = sorted(CONFIGS.glob("*.toml"))
        assert files
        for f in files:
            load_config(f)


class TestStudy:
    def test_coupling_exactness(self):
        cfg = small(nl="zero", u0=(0.4,), rho=1.2, k=10)
        table = run_strong_error_study(cfg)
        for t in (table, table.companion):
            assert all(r.strong_error <= 1e-12 for r in t.rows)
        assert math.isnan(table.slopes["mlei"].slope)

    def test_sup_dominates_final(self):
        table = run_strong_error_study(small(methods=("mlei", "becq")))
        assert table.metric == "final_time"
        sup = table.companion
        for r, s in zip(table.rows, sup.rows):
            assert s.strong_error >= r.strong_error
        for key, v in table.per_path.items():
            assert np.all(sup.per_path[key] >= v)

    def test_workers_do_not_change_output(self):
        cfg = small(n_paths=25)
        a = run_strong_error_study(cfg, workers=1)
        b = run_strong_error_study(cfg, workers=3)
        assert a.errors_csv() == b.errors_csv()
        assert a.slopes_csv() == b.slopes_csv()

    def test_seed_matters(self):
        a = run_strong_error_study(small())
        b = run_strong_error_study(small(master_seed=4))
        assert a.errors_csv() != b.errors_csv()

    def test_errors_decrease(self):
        table = run_strong_error_study(small(n_paths=40, dt_levels=(8, 16, 32, 64), ref_level=512))
        e = table.errors("mlei")
        assert np.all(np.diff(e) < 0)

    def test_regression_fixture(self):
        ref = json.loads((FIXTURES / "mlei_study.json").read_text())
        table = run_strong_error_study(config_from_dict(ref["config"]))
        fit = table.slopes["mlei"]
        lo, hi = ref["ci"]
        assert lo <= fit.slope <= hi
        np.testing.assert_allclose(table.errors("mlei"), ref["errors"], rtol=1e-12)

    def test_cross_reference(self):
        cfg = small(methods=("becq",), reference="mlei")
        table = run_strong_error_study(cfg)
        own = run_strong_error_study(small(methods=("becq",)))
        assert table.errors_csv() != own.errors_csv()

    def test_becq_worse_than_mlei(self):
        table = run_strong_error_study(small(methods=("mlei", "becq"), k=10, rho=1.75))
        assert np.all(table.errors("becq") > table.errors("mlei"))

    def test_deterministic_study(self):
        table = run_strong_error_study(small(mus=0.0, u0=(1.0,), n_paths=2,
                                             dt_levels=(16, 32, 64), ref_level=1024))
        assert all(r.stderr == 0.0 for r in table.rows)
        assert 0.9 <= table.slopes["mlei"].slope <= 1.2

    def test_too_few_levels(self):
        with pytest.raises(ConfigError):
            run_strong_error_study(small(dt_levels=(8, 16)))

    def test_outputs(self, tmp_path):
        table = run_strong_error_study(small())
        files = write_study(table, tmp_path)
        names = {f.name for f in files}
        assert {"errors.csv", "slopes.csv", "meta.json", "errors_sup_over_grid.csv"} <= names
        rows = list(csv.reader(io.StringIO((tmp_path / "errors.csv").read_text())))
        assert rows[0] == ["method", "dt", "strong_error", "stderr"]
        assert len(rows) == 4
        assert float(rows[1][1]) == 1 / 8
        head = (tmp_path / "slopes.csv").read_text().splitlines()[0]
        assert head == "method,slope,ci_lo,ci_hi"
        meta = json.loads((tmp_path / "meta.json").read_text())
        assert meta["master_seed"] == 3 and meta["clamp_events"] == []


class TestDemo:
    def test_zero_file(self, tmp_path):
        cfg = small(nl="zero", mus=0.0, demo_level=16)
        files = run_trajectory_demo(cfg, tmp_path)
        data = np.loadtxt(files[0], delimiter=",", skiprows=1)
        assert files[0].read_text().startswith("m,t,k,U\n")
        assert data.shape == (17, 4)
        assert not data[:, 3].any()
        assert json.loads(files[-1].read_text())["M"] == 16

    def test_paths_and_methods(self, tmp_path):
        cfg = small(methods=("becq", "mlei"), demo_level=32, demo_paths=2)
        files = run_trajectory_demo(cfg, tmp_path)
        assert [f.name for f in files[:2]] == ["trajectory_becq_p0.csv", "trajectory_becq_p1.csv"]
        a = np.loadtxt(files[0], delimiter=",", skiprows=1)[:, 3]
        b = np.loadtxt(files[1], delimiter=",", skiprows=1)[:, 3]
        assert not np.array_equal(a, b)
