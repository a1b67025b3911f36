"""Data generators, error metrics and the simulation / bootstrap runners."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import ClrParams, Dataset, RngSpec, as_generator
from .em import DegenerateFitError, EmControls, FitError, FitResult, align_labels, em_fit, label_permutation
from .selection import select

log = logging.getLogger(__name__)

FAMILIES = ("normal", "lognormal")
CSV_COLUMNS = ("method", "N", "replicate", "mse_b0", "mse_b1", "t_select", "t_fit")


@dataclass(frozen=True, eq=False)
class SimConfig:
    family: str
    mu_z: np.ndarray
    sigma_z: np.ndarray
    truth: ClrParams
    n_full: int
    k: int
    replicates: int = 20
    methods: tuple[str, ...] = ("iboss", "random")
    restarts: int = 5
    seed: int = 0
    stream: int = 0
    tol: float = 1e-8
    max_iter: int = 500

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu_z, dtype=float))
        sig = np.atleast_2d(np.asarray(self.sigma_z, dtype=float))
        object.__setattr__(self, "mu_z", mu)
        object.__setattr__(self, "sigma_z", sig)
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if sig.shape != (mu.size, mu.size) or mu.size != self.truth.p:
            raise ValueError("mu_z, Sigma_z and truth disagree on p")
        if not np.allclose(sig, sig.T):
            raise ValueError("Sigma_z is not symmetric")
        try:
            np.linalg.cholesky(sig)
        except np.linalg.LinAlgError:
            raise ValueError("Sigma_z is not positive definite") from None
        if not (1 <= self.k <= self.n_full):
            raise ValueError(f"need 1 <= k <= N, got k={self.k}, N={self.n_full}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")

    @property
    def p(self) -> int:
        return self.truth.p

    @property
    def controls(self) -> EmControls:
        return EmControls(tol=self.tol, max_iter=self.max_iter)

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "mu_z": self.mu_z.tolist(),
            "sigma_z": self.sigma_z.tolist(),
            "truth": self.truth.to_dict(),
            "n_full": int(self.n_full),
            "k": int(self.k),
            "replicates": int(self.replicates),
            "methods": list(self.methods),
            "restarts": int(self.restarts),
            "seed": int(self.seed),
            "stream": int(self.stream),
            "tol": self.tol,
            "max_iter": int(self.max_iter),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        d["truth"] = ClrParams.from_dict(d["truth"])
        d.pop("sigma", None)
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def default_paper_config(family: str = "normal", n_full: int = 100_000) -> SimConfig:
    """The full-size simulation design: p=10, G=5, k=10000, 100 replicates."""
    g, p = 5, 10
    gs = np.arange(1, g + 1)
    beta = np.column_stack([gs, gs[:, None] + np.arange(p)[None, :]])
    truth = ClrParams(beta, gs.astype(float) ** 2, [0.1, 0.1, 0.2, 0.3, 0.3])
    sigma_z = np.full((p, p), 0.5) + 0.5 * np.eye(p)
    return SimConfig(family, np.zeros(p), sigma_z, truth, n_full, k=10_000, replicates=100,
                     methods=("iboss", "random", "full"))


def desk_config(family: str = "normal", n_full: int = 10_000, k: int = 1002,
                replicates: int = 20) -> SimConfig:
    """Scaled-down design (p=3, G=2) that runs in minutes on one core.

    Same construction as the full design: intercept g, slopes (g, g+1, g+2),
    sigma_g = g, unit-variance covariates with correlation 0.5.
    """
    g, p = 2, 3
    gs = np.arange(1, g + 1)
    beta = np.column_stack([gs, gs[:, None] + np.arange(p)[None, :]])
    truth = ClrParams(beta, gs.astype(float) ** 2, [0.5, 0.5])
    sigma_z = np.full((p, p), 0.5) + 0.5 * np.eye(p)
    return SimConfig(family, np.zeros(p), sigma_z, truth, n_full, k=k, replicates=replicates)


def gen_covariates(family: str, mu_z, sigma_z, n: int, rng=None) -> np.ndarray:
    gen = as_generator(rng)
    mu_z = np.atleast_1d(np.asarray(mu_z, dtype=float))
    try:
        chol = np.linalg.cholesky(np.atleast_2d(sigma_z))
    except np.linalg.LinAlgError:
        raise ValueError("Sigma_z is not positive definite") from None
    z = mu_z + gen.standard_normal((n, mu_z.size)) @ chol.T
    if family == "lognormal":
        return np.exp(z)
    if family != "normal":
        raise ValueError(f"unknown covariate family {family!r}")
    return z


def gen_responses(z: np.ndarray, truth: ClrParams, rng=None):
    """Draw cluster labels from pi and y from the chosen expert; returns (y, labels)."""
    gen = as_generator(rng)
    n = z.shape[0]
    labels = gen.choice(truth.g, size=n, p=truth.pi)
    mean = truth.beta[labels, 0] + np.einsum("ij,ij->i", z, truth.beta[labels, 1:])
    y = mean + np.sqrt(truth.sigma2[labels]) * gen.standard_normal(n)
    return y, labels


def gen_clr_data(config: SimConfig, rng=None, n: int | None = None):
    """Simulate ``n`` (default ``config.n_full``) rows; returns (Dataset, labels)."""
    gen = as_generator(rng if rng is not None else RngSpec(config.seed, config.stream))
    n = config.n_full if n is None else int(n)
    z = gen_covariates(config.family, config.mu_z, config.sigma_z, n, gen)
    y, labels = gen_responses(z, config.truth, gen)
    return Dataset(z, y), labels


def gen_standin_data(n: int, rng=None) -> Dataset:
    """Synthetic two-cluster, one-covariate data with a skewed positive covariate.

    Stand-in for a real single-covariate dataset when running the bootstrap
    protocol without external files.
    """
    gen = as_generator(rng)
    z = gen.lognormal(mean=0.0, sigma=0.5, size=(n, 1))
    truth = ClrParams([[2.0, 3.0], [5.0, 9.0]], [0.25, 1.0], [0.4, 0.6])
    y, _ = gen_responses(z, truth, gen)
    return Dataset(z, y, ("z1",))


# --- metrics -----------------------------------------------------------------

def _params(f) -> ClrParams:
    return f.params if isinstance(f, FitResult) else f


def squared_errors(fit, reference: ClrParams) -> tuple[float, float]:
    """(sum_g (b0_hat - b0)^2, sum_g ||b1_hat - b1||^2) for one aligned fit."""
    diff = _params(fit).beta - reference.beta
    return float((diff[:, 0] ** 2).sum()), float((diff[:, 1:] ** 2).sum())


def mse_report(fits, reference: ClrParams) -> tuple[float, float]:
    """Average intercept and slope squared errors over replicates.

    Every fit must already be label-aligned to ``reference``; an unaligned
    fit raises ValueError.
    """
    fits = list(fits)
    if not fits:
        raise ValueError("no fits to summarise")
    b0 = b1 = 0.0
    for f in fits:
        par = _params(f)
        if par.g != reference.g or par.p != reference.p:
            raise ValueError(f"fit has G={par.g}, p={par.p}; reference has G={reference.g}, p={reference.p}")
        if not np.array_equal(label_permutation(par, reference), np.arange(par.g)):
            raise ValueError("fit is not label-aligned to the reference; call align_labels first")
        e0, e1 = squared_errors(par, reference)
        b0 += e0
        b1 += e1
    return b0 / len(fits), b1 / len(fits)


def relative_efficiency(mse_a: float, time_a: float, mse_iboss: float, time_iboss: float) -> float:
    """(MSE_iboss / MSE_a) / (time_a / time_iboss)."""
    vals = (mse_a, time_a, mse_iboss, time_iboss)
    if not all(np.isfinite(v) and v > 0 for v in vals):
        raise ValueError(f"relative efficiency needs positive inputs, got {vals}")
    return (mse_iboss / mse_a) / (time_a / time_iboss)


# --- reports -----------------------------------------------------------------

@dataclass
class ExperimentReport:
    methods: dict[str, dict]
    rows: list[dict]
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"metadata": self.metadata, "methods": self.methods}

    def column(self, method: str, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows if r["method"] == method and r.get("ok", True)])

    def write_csv(self, path, append: bool = False) -> None:
        write_rows_csv(path, self.rows, append=append)


def write_rows_csv(path, rows, append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with path.open("a" if append else "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore")
        if new:
            w.writeheader()
        for r in rows:
            if r.get("ok", True):
                w.writerow(r)


def _summarise(rows, methods, n_label) -> dict[str, dict]:
    out = {}
    for m in methods:
        ok = [r for r in rows if r["method"] == m and r["ok"]]
        failed = sum(1 for r in rows if r["method"] == m and not r["ok"])
        if ok:
            out[m] = {
                "N": n_label,
                "mse_intercept": float(np.mean([r["mse_b0"] for r in ok])),
                "mse_slopes": float(np.mean([r["mse_b1"] for r in ok])),
                "cpu_select_seconds": float(np.mean([r["t_select"] for r in ok])),
                "cpu_fit_seconds": float(np.mean([r["t_fit"] for r in ok])),
                "replicates_ok": len(ok),
                "replicates_failed": failed,
            }
        else:
            out[m] = {"N": n_label, "replicates_ok": 0, "replicates_failed": failed}
    base = out.get("iboss")
    for m, s in out.items():
        if base is None or not s.get("replicates_ok") or not base.get("replicates_ok"):
            s["eff_vs_iboss"] = None
            continue
        t_m = s["cpu_select_seconds"] + s["cpu_fit_seconds"]
        t_b = base["cpu_select_seconds"] + base["cpu_fit_seconds"]
        try:
            s["eff_vs_iboss"] = 1.0 if m == "iboss" else relative_efficiency(
                s["mse_slopes"], t_m, base["mse_slopes"], t_b)
        except ValueError:
            s["eff_vs_iboss"] = None
    return out


def _run_method(data: Dataset, method: str, k: int, g: int, restarts: int, controls: EmControls,
                sel_rng, fit_rng):
    t0 = time.perf_counter()
    sel = select(data, method, k, rng=sel_rng)
    t1 = time.perf_counter()
    fit = em_fit(data, sel, g, restarts, fit_rng, controls)
    t2 = time.perf_counter()
    return fit, t1 - t0, t2 - t1, t2 - t0


def _replicate(cfg: dict, s: int) -> list[dict]:
    config = SimConfig.from_dict(cfg)
    spec = RngSpec(config.seed, config.stream)
    data, _ = gen_clr_data(config, spec.generator(s, 0))
    rows = []
    for mi, m in enumerate(config.methods):
        row = {"method": m, "N": config.n_full, "replicate": s, "ok": False}
        try:
            fit, ts, tf, tp = _run_method(
                data, m, config.k, config.truth.g, config.restarts, config.controls,
                spec.generator(s, 1, mi), spec.generator(s, 2, mi))
        except (FitError, np.linalg.LinAlgError) as err:
            log.warning("replicate %d, method %s failed: %s", s, m, err)
            rows.append(row)
            continue
        aligned = align_labels(fit.params, config.truth)
        e0, e1 = squared_errors(aligned, config.truth)
        row.update(ok=True, mse_b0=e0, mse_b1=e1, t_select=ts, t_fit=tf, t_pipeline=tp,
                   iterations=fit.iterations, converged=fit.converged)
        rows.append(row)
    return rows


def _threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("IBOSS_CLR_THREADS", "1"))
    return max(1, threads)


def run_simulation(config: SimConfig, threads: int | None = None) -> ExperimentReport:
    """Repeat generate -> select -> fit -> align for every method.

    Replicate ``s`` uses streams ``(stream, s, ...)`` so results do not depend
    on ``threads``.  Failed fits are excluded and counted.
    """
    cfg = config.to_dict()
    threads = _threads(threads)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            chunks = list(ex.map(_replicate, [cfg] * config.replicates, range(config.replicates)))
    else:
        chunks = [_replicate(cfg, s) for s in range(config.replicates)]
    rows = [r for c in chunks for r in c]
    failed = sum(not r["ok"] for r in rows)
    if failed:
        log.warning("%d method-replicates failed and were excluded", failed)
    meta = {"config_hash": config.hash(), "seed": config.seed, "stream": config.stream,
            "config": cfg, "failed": failed}
    return ExperimentReport(_summarise(rows, config.methods, config.n_full), rows, meta)


def run_bootstrap(data: Dataset, n_values, k: int = 1000, b_samples: int = 500, restarts: int = 5,
                  rng=None, g: int = 2, methods=("iboss", "random"),
                  controls: EmControls = EmControls(), reference: FitResult | None = None):
    """Bootstrap comparison of subdata methods against a full-data fit.

    The full data are fitted once (unless ``reference`` is supplied) and its
    coefficients serve as the target.  For each n, ``b_samples`` bootstrap
    samples of size n are drawn with replacement; each method selects k rows,
    fits, aligns to the reference and records squared errors.

    Returns one ExperimentReport per n, in the order of ``n_values``.
    """
    spec = rng if isinstance(rng, RngSpec) else RngSpec(0 if rng is None else int(rng))
    for n in n_values:
        if int(n) > data.n:
            raise ValueError(f"bootstrap size n={n} exceeds N={data.n}")
    if reference is None:
        reference = em_fit(data, None, g, restarts, spec.generator(9_999), controls)
    ref = reference.params
    reports = []
    for ni, n in enumerate(int(v) for v in n_values):
        rows = []
        for b in range(b_samples):
            gen = spec.generator(ni, b, 0)
            boot = data.take(gen.integers(0, data.n, size=n))
            for mi, m in enumerate(methods):
                row = {"method": m, "N": n, "replicate": b, "ok": False}
                try:
                    fit, ts, tf, tp = _run_method(boot, m, k, g, restarts, controls,
                                                  spec.generator(ni, b, 1, mi), spec.generator(ni, b, 2, mi))
                except (FitError, np.linalg.LinAlgError) as err:
                    log.warning("bootstrap n=%d b=%d method %s failed: %s", n, b, m, err)
                    rows.append(row)
                    continue
                e0, e1 = squared_errors(align_labels(fit.params, ref), ref)
                row.update(ok=True, mse_b0=e0, mse_b1=e1, t_select=ts, t_fit=tf, t_pipeline=tp,
                           iterations=fit.iterations)
                rows.append(row)
        meta = {"n": n, "k": k, "b_samples": b_samples, "seed": spec.seed, "stream": spec.stream,
                "reference": reference.to_dict(), "failed": sum(not r["ok"] for r in rows)}
        reports.append(ExperimentReport(_summarise(rows, methods, n), rows, meta))
    return reports
