"""Loglikelihood and EM fitting for the clusterwise linear regression model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .core import (
    SIGMA2_FLOOR,
    ClrParams,
    Dataset,
    InvalidParamsError,
    RngSpec,
    SelectionResult,
    as_generator,
    param_dim,
    select_indices,
)

log = logging.getLogger(__name__)


class FitError(RuntimeError):
    """Base class for numerical failures while fitting."""


class SingularGramError(FitError):
    def __init__(self, cluster: int):
        super().__init__(f"weighted Gram matrix is singular for cluster {cluster}")
        self.cluster = cluster


class EmptyClusterError(FitError):
    def __init__(self, clusters):
        self.clusters = list(clusters)
        super().__init__(f"clusters {self.clusters} have (almost) no responsibility mass")


class DegenerateFitError(FitError):
    """Every EM restart failed."""


class SpuriousFitError(FitError):
    """A restart converged to a cluster too small to identify its regression."""


@dataclass(frozen=True)
class EmControls:
    tol: float = 1e-8
    max_iter: int = 500
    sigma2_floor: float = SIGMA2_FLOOR
    empty_frac: float = 1e-8
    reinit_frac: float = 0.10
    # a converged cluster with less responsibility mass than this is treated as a
    # spurious maximiser; None means p + 2, 0 disables the check
    min_cluster_mass: float | None = None
    # converged fits with min sigma2 / max sigma2 below this are also rejected
    min_variance_ratio: float = 1e-2


@dataclass(frozen=True, eq=False)
class FitResult:
    params: ClrParams
    loglik: float
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    restart_index: int
    aic: float
    reinit_iterations: tuple[int, ...] = ()
    n: int = 0

    @property
    def g(self) -> int:
        return self.params.g

    @property
    def bic(self) -> float:
        return math.log(self.n) * self.params.dim - 2.0 * self.loglik

    def to_dict(self) -> dict:
        d = self.params.to_dict()
        d.update(
            loglik=self.loglik,
            aic=self.aic,
            bic=self.bic,
            iterations=self.iterations,
            converged=self.converged,
            restart_index=self.restart_index,
        )
        return d


def aic(loglik: float, g: int, p: int) -> float:
    return 2.0 * param_dim(g, p) - 2.0 * loglik


def _component_logdens(X: np.ndarray, y: np.ndarray, params: ClrParams) -> np.ndarray:
    """(n, G) matrix of log(pi_g) + log phi(y_i | x_i beta_g, sigma2_g)."""
    mu = X @ params.beta.T
    return (
        np.log(params.pi)
        - 0.5 * np.log(2 * math.pi * params.sigma2)
        - 0.5 * (y[:, None] - mu) ** 2 / params.sigma2
    )


def _check_x(x, params: ClrParams) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != params.p + 1:
        raise InvalidParamsError(f"dimension mismatch: design vector has length {x.shape[0]}, expected {params.p + 1}")
    return x


def log_density_point(x, y: float, params: ClrParams) -> float:
    """log sum_g pi_g phi(y | x'beta_g, sigma2_g), evaluated with log-sum-exp."""
    x = _check_x(x, params)
    return float(logsumexp(_component_logdens(x[None, :], np.array([float(y)]), params)))


def _rows(data: Dataset, subset):
    idx = select_indices(data, subset)
    if idx is not None and idx.size == 0:
        raise ValueError("empty subset")
    return data.design(idx), data.response(idx)


def loglik(data: Dataset, subset, params: ClrParams) -> float:
    X, y = _rows(data, subset)
    return float(logsumexp(_component_logdens(X, y, params), axis=1).sum())


def _responsibilities(lc: np.ndarray):
    ll = logsumexp(lc, axis=1)
    w = np.exp(lc - ll[:, None])
    w /= w.sum(axis=1, keepdims=True)
    return w, ll


def e_step(data: Dataset, subset, params: ClrParams) -> np.ndarray:
    """Posterior cluster probabilities, one row per subset row."""
    X, y = _rows(data, subset)
    return _responsibilities(_component_logdens(X, y, params))[0]


def _m_step(X, y, w, controls: EmControls = EmControls()) -> ClrParams:
    n, g = w.shape
    mass = w.sum(axis=0)
    empty = np.flatnonzero(mass < controls.empty_frac * n)
    if empty.size:
        raise EmptyClusterError(empty)
    beta = np.empty((g, X.shape[1]))
    sigma2 = np.empty(g)
    for c in range(g):
        wc = w[:, c]
        Xw = X * wc[:, None]
        gram = Xw.T @ X
        try:
            b = np.linalg.solve(gram, Xw.T @ y)
        except np.linalg.LinAlgError:
            raise SingularGramError(c) from None
        if not np.all(np.isfinite(b)):
            raise SingularGramError(c)
        beta[c] = b
        resid = y - X @ b
        sigma2[c] = max(float(wc @ resid**2) / mass[c], controls.sigma2_floor)
    return ClrParams(beta, sigma2, mass / mass.sum())


def m_step(data: Dataset, subset, resp: np.ndarray, controls: EmControls = EmControls()) -> ClrParams:
    """Weighted maximum-likelihood update given responsibilities.

    Raises SingularGramError (with the cluster id) when a weighted normal
    equation cannot be solved, and EmptyClusterError when a cluster carries
    less than ``empty_frac * k`` total responsibility.
    """
    X, y = _rows(data, subset)
    resp = np.asarray(resp, dtype=float)
    if resp.shape[0] != X.shape[0]:
        raise ValueError(f"responsibilities have {resp.shape[0]} rows, subset has {X.shape[0]}")
    return _m_step(X, y, resp, controls)


def _reinit_clusters(w: np.ndarray, ll: np.ndarray, clusters, frac: float) -> np.ndarray:
    """Hand the worst-fitted ``frac`` of points to each starved cluster."""
    w = w.copy()
    n = w.shape[0]
    m = max(int(math.ceil(frac * n)), 1)
    order = np.argsort(ll, kind="stable")
    for i, c in enumerate(clusters):
        rows = order[i * m:(i + 1) * m] if (i + 1) * m <= n else order[:m]
        w[rows] = 0.0
        w[rows, c] = 1.0
    return w


def _run_em(X, y, init: ClrParams, controls: EmControls):
    params = init
    lc = _component_logdens(X, y, params)
    w, ll = _responsibilities(lc)
    trace = [float(ll.sum())]
    reinits = []
    converged = False
    it = 0
    for it in range(1, controls.max_iter + 1):
        try:
            params = _m_step(X, y, w, controls)
        except EmptyClusterError as err:
            reinits.append(it)
            if len(reinits) > 10:
                raise
            params = _m_step(X, y, _reinit_clusters(w, ll, err.clusters, controls.reinit_frac), controls)
        lc = _component_logdens(X, y, params)
        w, ll = _responsibilities(lc)
        cur = float(ll.sum())
        if not math.isfinite(cur):
            raise FitError("loglikelihood became non-finite")
        prev = trace[-1]
        trace.append(cur)
        if abs(cur - prev) <= controls.tol * max(abs(prev), 1.0):
            converged = True
            break
    return params, np.array(trace), it, converged, tuple(reinits)


def _check_mass(X, y, params: ClrParams, controls: EmControls) -> None:
    floor = X.shape[1] + 1 if controls.min_cluster_mass is None else controls.min_cluster_mass
    if params.g == 1 or floor <= 0:
        return
    mass = _responsibilities(_component_logdens(X, y, params))[0].sum(axis=0)
    small = np.flatnonzero(mass < floor)
    if small.size:
        raise SpuriousFitError(
            f"clusters {small.tolist()} carry mass {mass[small].round(2).tolist()} < {floor:g}")
    ratio = params.sigma2.min() / params.sigma2.max()
    if ratio < controls.min_variance_ratio:
        raise SpuriousFitError(f"variance ratio {ratio:.3g} < {controls.min_variance_ratio:g}")


def _random_start(X, y, g, gen, controls) -> ClrParams:
    n = X.shape[0]
    labels = gen.integers(0, g, size=n)
    w = np.zeros((n, g))
    w[np.arange(n), labels] = 1.0
    try:
        return _m_step(X, y, w, controls)
    except EmptyClusterError as err:
        ll = np.zeros(n)
        return _m_step(X, y, _reinit_clusters(w, ll, err.clusters, controls.reinit_frac), controls)


def em_fit(
    data: Dataset,
    subset,
    g: int,
    restarts: int = 5,
    rng=None,
    controls: EmControls = EmControls(),
) -> FitResult:
    """Fit a G-cluster CLR model by EM, keeping the best of several restarts.

    Each restart starts from a uniformly random hard partition followed by
    one M-step.  Restart ``i`` draws from stream ``(rng.stream, i)`` so runs
    are reproducible regardless of order.

    A restart that converges to a spurious maximiser (a cluster with less
    than ``min_cluster_mass`` responsibility, or a variance far below the
    others) is discarded, as is one that fails numerically.
    """
    if int(g) < 1:
        raise ValueError(f"invalid number of clusters G={g}")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    X, y = _rows(data, subset)
    p = X.shape[1] - 1
    if X.shape[0] < g * (p + 2):
        raise ValueError(f"subset of size {X.shape[0]} too small for G={g}, p={p} (need {g * (p + 2)})")
    spec = rng if isinstance(rng, RngSpec) else None
    base = as_generator(rng) if spec is None else None

    best = None
    failures = []
    for i in range(restarts):
        gen = spec.generator(i) if spec is not None else base
        try:
            init = _random_start(X, y, g, gen, controls)
            params, trace, iters, conv, reinits = _run_em(X, y, init, controls)
            _check_mass(X, y, params, controls)
        except (FitError, np.linalg.LinAlgError, FloatingPointError) as err:
            failures.append(f"restart {i}: {err}")
            continue
        if best is None or trace[-1] > best.loglik:
            best = FitResult(
                params=params,
                loglik=float(trace[-1]),
                loglik_trace=trace,
                iterations=iters,
                converged=conv,
                restart_index=i,
                aic=aic(float(trace[-1]), g, p),
                reinit_iterations=reinits,
                n=X.shape[0],
            )
    if best is None:
        raise DegenerateFitError(f"all {restarts} restarts degenerate: " + "; ".join(failures))
    if failures:
        log.debug("em_fit: %d of %d restarts failed", len(failures), restarts)
    return best


def select_g(data: Dataset, subset, g_candidates, restarts: int = 5, rng=None,
             controls: EmControls = EmControls(), criterion: str = "aic"):
    """Fit each candidate G and pick the smallest AIC (ties go to smaller G).

    ``criterion="bic"`` ranks by BIC instead; AIC tends to over-select G for
    mixtures, BIC is the usual consistent alternative.

    Returns ``(fits, chosen_g)`` where ``fits`` maps G to its FitResult.  A
    candidate for which every restart is degenerate is left out of ``fits``;
    DegenerateFitError is raised only when no candidate can be fitted.
    """
    if criterion not in ("aic", "bic"):
        raise ValueError(f"unknown criterion {criterion!r}")
    cands = sorted({int(c) for c in g_candidates})
    if not cands:
        raise ValueError("empty candidate list for G")
    fits = {}
    failed = []
    for c in cands:
        r = rng.child(rng.stream * 1000 + c) if isinstance(rng, RngSpec) else rng
        try:
            fits[c] = em_fit(data, subset, c, restarts, r, controls)
        except DegenerateFitError as err:
            log.warning("G=%d dropped: %s", c, err)
            failed.append(f"G={c}: {err}")
    if not fits:
        raise DegenerateFitError("no candidate G could be fitted; " + " | ".join(failed))
    chosen = min(fits, key=lambda c: (getattr(fits[c], criterion), c))
    return fits, chosen


def label_permutation(fitted: ClrParams, reference: ClrParams) -> np.ndarray:
    if fitted.g != reference.g or fitted.p != reference.p:
        raise ValueError(
            f"G mismatch: fitted has G={fitted.g}, p={fitted.p}; reference has G={reference.g}, p={reference.p}"
        )
    cost = ((reference.beta[:, None, :] - fitted.beta[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(fitted.g, dtype=int)
    perm[rows] = cols
    return perm


def align_labels(fitted: ClrParams, reference: ClrParams) -> ClrParams:
    """Relabel ``fitted`` to minimise the total squared beta distance to ``reference``."""
    return fitted.permuted(label_permutation(fitted, reference))
