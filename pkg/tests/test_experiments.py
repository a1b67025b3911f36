import csv
import json

import numpy as np
import pytest

import iboss_clr.experiments as ex
from iboss_clr.core import ClrParams, Dataset, RngSpec
from iboss_clr.em import FitError, align_labels
from iboss_clr.experiments import (
    CSV_COLUMNS,
    SimConfig,
    default_paper_config,
    desk_config,
    gen_clr_data,
    gen_covariates,
    gen_standin_data,
    mse_report,
    relative_efficiency,
    run_bootstrap,
    run_simulation,
)


def _tiny(**kw):
    base = dict(family="normal", mu_z=[0.0], sigma_z=[[1.0]], truth=ClrParams([[1.0, 2.0]], [1.0], [1.0]),
                n_full=200, k=200, replicates=3, methods=("full",), restarts=1)
    base.update(kw)
    return SimConfig(**base)


# --- configuration ----------------------------------------------------------------

def test_paper_config():
    c = default_paper_config()
    assert (c.p, c.truth.g, c.k) == (10, 5, 10_000)
    np.testing.assert_array_equal(c.truth.beta[2], [3, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12])
    assert c.truth.sigma2[4] == 25
    assert c.sigma_z[0, 1] == 0.5 and c.sigma_z[0, 0] == 1.0
    np.testing.assert_array_equal(c.truth.pi, [0.1, 0.1, 0.2, 0.3, 0.3])


def test_desk_config_is_valid_for_iboss():
    c = desk_config()
    assert c.k % (2 * c.p) == 0 and c.truth.g == 2 and c.p == 3


def test_config_json_roundtrip_and_hash():
    c = desk_config("lognormal", replicates=4)
    back = SimConfig.from_dict(json.loads(json.dumps(c.to_dict())))
    assert back.to_dict() == c.to_dict()
    assert back.hash() == c.hash()
    assert c.with_(seed=1).hash() != c.hash()


def test_config_validation():
    with pytest.raises(ValueError, match="positive definite"):
        _tiny(sigma_z=[[-1.0]])
    with pytest.raises(ValueError, match="k <= N"):
        _tiny(k=500)
    with pytest.raises(ValueError, match="replicates"):
        _tiny(replicates=0)
    with pytest.raises(ValueError, match="family"):
        _tiny(family="uniform")


# --- generators --------------------------------------------------------------------

def test_near_deterministic_expert():
    c = _tiny(truth=ClrParams([[1.0, 2.0]], [1e-6], [1.0]), n_full=5000, k=10)
    data, _ = gen_clr_data(c, RngSpec(1))
    dev = np.abs(data.y - data.design() @ c.truth.beta[0])
    assert np.mean(dev < 0.01) >= 0.997


@pytest.mark.slow
def test_paper_label_frequencies_and_covariance():
    c = default_paper_config(n_full=10**6)
    data, labels = gen_clr_data(c, RngSpec(2))
    freq = np.bincount(labels, minlength=5) / labels.size
    assert np.max(np.abs(freq - c.truth.pi)) < 0.005
    assert np.max(np.abs(np.cov(data.z, rowvar=False) - c.sigma_z)) < 0.01


def test_lognormal_is_exp_of_normal():
    s = np.array([[1.0, 0.5], [0.5, 2.0]])
    a = gen_covariates("normal", [0.1, -0.2], s, 50, RngSpec(3).generator())
    b = gen_covariates("lognormal", [0.1, -0.2], s, 50, RngSpec(3).generator())
    np.testing.assert_allclose(b, np.exp(a))
    with pytest.raises(ValueError, match="positive definite"):
        gen_covariates("normal", [0, 0], [[1, 2], [2, 1]], 5)


def test_true_label_ols_recovers_beta():
    c = desk_config(n_full=20_000)
    data, labels = gen_clr_data(c, RngSpec(4))
    X = data.design()
    for g in range(c.truth.g):
        Xg, yg = X[labels == g], data.y[labels == g]
        b, *_ = np.linalg.lstsq(Xg, yg, rcond=None)
        resid = yg - Xg @ b
        s2 = resid @ resid / (len(yg) - X.shape[1])
        se = np.sqrt(np.diag(s2 * np.linalg.inv(Xg.T @ Xg)))
        assert np.all(np.abs(b - c.truth.beta[g]) < 3 * se + 1e-12)


def test_standin_data():
    d = gen_standin_data(500, RngSpec(1))
    assert d.p == 1 and d.n == 500 and np.all(d.z > 0)


# --- metrics -----------------------------------------------------------------------------

TRUTH = ClrParams([[1.0, 2.0, 3.0], [-1.0, 0.0, 5.0]], [1.0, 2.0], [0.4, 0.6])


def test_mse_exact_cases():
    assert mse_report([TRUTH, TRUTH], TRUTH) == (0.0, 0.0)
    off = ClrParams(TRUTH.beta + [[1.0, 0, 0], [0, 0, 0]], TRUTH.sigma2, TRUTH.pi)
    assert mse_report([off], TRUTH) == (1.0, 0.0)


def test_mse_hand_sum(rng):
    fits = [ClrParams(TRUTH.beta + rng.normal(scale=0.3, size=(2, 3)), TRUTH.sigma2, TRUTH.pi) for _ in range(3)]
    b0 = sum(((f.beta[:, 0] - TRUTH.beta[:, 0]) ** 2).sum() for f in fits) / 3
    b1 = sum(((f.beta[:, 1:] - TRUTH.beta[:, 1:]) ** 2).sum() for f in fits) / 3
    got = mse_report(fits, TRUTH)
    assert got[0] == pytest.approx(b0, rel=1e-14) and got[1] == pytest.approx(b1, rel=1e-14)


def test_mse_requires_alignment():
    with pytest.raises(ValueError, match="aligned"):
        mse_report([TRUTH.permuted([1, 0])], TRUTH)
    assert mse_report([align_labels(TRUTH.permuted([1, 0]), TRUTH)], TRUTH) == (0.0, 0.0)
    with pytest.raises(ValueError, match="G="):
        mse_report([ClrParams([[0, 1, 1]], [1], [1])], TRUTH)


def test_relative_efficiency():
    assert relative_efficiency(1.0, 2.0, 1.0, 2.0) == 1.0
    assert relative_efficiency(2.0, 1.0, 1.0, 1.0) == 0.5
    assert relative_efficiency(1.0, 4.0, 0.8, 1.0) == pytest.approx(0.2)
    for bad in [(0, 1, 1, 1), (1, -1, 1, 1), (1, 1, 1, float("nan"))]:
        with pytest.raises(ValueError):
            relative_efficiency(*bad)


# --- runners --------------------------------------------------------------------------------

def test_full_method_single_expert_is_ols():
    c = _tiny()
    rep = run_simulation(c)
    for s in range(c.replicates):
        data, _ = gen_clr_data(c, RngSpec(c.seed, c.stream).generator(s, 0))
        b, *_ = np.linalg.lstsq(data.design(), data.y, rcond=None)
        row = [r for r in rep.rows if r["replicate"] == s][0]
        assert row["mse_b0"] == pytest.approx((b[0] - 1.0) ** 2, rel=1e-8, abs=1e-14)
        assert row["mse_b1"] == pytest.approx((b[1] - 2.0) ** 2, rel=1e-8, abs=1e-14)


def test_report_invariants_and_determinism(tmp_path):
    c = desk_config(n_full=3000, k=102, replicates=3).with_(restarts=2)
    a = run_simulation(c)
    b = run_simulation(c)
    for m in c.methods:
        assert a.methods[m]["mse_slopes"] == b.methods[m]["mse_slopes"]
        assert a.methods[m]["mse_intercept"] >= 0 and a.methods[m]["cpu_fit_seconds"] >= 0
    assert a.methods["iboss"]["eff_vs_iboss"] == 1.0
    for r in a.rows:
        assert abs(r["t_select"] + r["t_fit"] - r["t_pipeline"]) <= 0.05 * r["t_pipeline"]
    assert a.metadata["config_hash"] == c.hash()
    path = tmp_path / "rows.csv"
    a.write_csv(path)
    rows = list(csv.DictReader(path.open()))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 6


def test_threads_do_not_change_results():
    c = desk_config(n_full=3000, k=102, replicates=2).with_(restarts=2)
    a = run_simulation(c, threads=1)
    b = run_simulation(c, threads=2)
    assert [r["mse_b1"] for r in a.rows] == [r["mse_b1"] for r in b.rows]


def test_failed_replicates_are_counted(monkeypatch):
    real = ex.em_fit
    calls = {"n": 0}

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] == 2:
            raise FitError("forced")
        return real(*args, **kw)

    monkeypatch.setattr(ex, "em_fit", flaky)
    rep = run_simulation(_tiny(replicates=3))
    assert rep.metadata["failed"] == 1
    assert rep.methods["full"]["replicates_ok"] == 2
    assert rep.methods["full"]["replicates_failed"] == 1


def test_bootstrap_protocol():
    data = gen_standin_data(4000, RngSpec(5))
    reps = run_bootstrap(data, [2000, 4000], k=100, b_samples=2, restarts=2, rng=RngSpec(6))
    assert [r.metadata["n"] for r in reps] == [2000, 4000]
    assert all(set(r.methods) == {"iboss", "random"} for r in reps)
    with pytest.raises(ValueError, match="exceeds"):
        run_bootstrap(data, [5000], k=100, b_samples=1)


def test_bootstrap_self_reference():
    data = gen_standin_data(1500, RngSpec(7))
    rep = run_bootstrap(data, [1500], k=1000, b_samples=1, restarts=3, rng=RngSpec(8), methods=("full",))[0]
    assert np.isfinite(rep.methods["full"]["mse_slopes"])


def test_bootstrap_default_k():
    import inspect
    assert inspect.signature(run_bootstrap).parameters["k"].default == 1000


@pytest.mark.slow
def test_bootstrap_iboss_improves_with_n():
    data = gen_standin_data(100_000, RngSpec(9))
    reps = run_bootstrap(data, [5000, 80_000], k=1000, b_samples=20, restarts=3, rng=RngSpec(10),
                         methods=("iboss",))
    assert reps[1].methods["iboss"]["mse_slopes"] < reps[0].methods["iboss"]["mse_slopes"]
