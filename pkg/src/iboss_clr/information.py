"""Fisher-information machinery for the CLR model.

Matrices and vectors are laid out in the theta order of :mod:`iboss_clr.core`:
beta by cluster, then the G variances, then the first G-1 mixing weights.
Indices ``g1``/``g2`` are 0-based cluster numbers.

The per-point information ``I = I_C - I_M`` has a closed-form complete part
``I_C`` (block diagonal) but no closed form for the missing part ``I_M``.
Its diagonal is computed here by quadrature over y, and bounded entrywise by
the closed-form surrogate returned by :func:`surrogate_q`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad_vec
from scipy.special import logsumexp

from .core import ClrParams, Dataset, RngSpec, as_generator, param_dim, select_indices

LAYOUT = "beta-by-cluster,sigma2,pi"


class QuadratureError(RuntimeError):
    def __init__(self, achieved: float, requested: float):
        super().__init__(f"quadrature did not converge: achieved error {achieved:.3e}, requested {requested:.3e}")
        self.achieved = achieved
        self.requested = requested


def _x(x, params: ClrParams) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != params.p + 1:
        raise ValueError(f"design vector has length {x.shape[0]}, expected p+1={params.p + 1}")
    return x


def complete_info_point(x, params: ClrParams) -> np.ndarray:
    """Complete-data information of one design point (block diagonal, d x d)."""
    x = _x(x, params)
    g, p = params.g, params.p
    q = p + 1
    m = np.zeros((params.dim, params.dim))
    xx = np.outer(x, x)
    for c in range(g):
        m[c * q:(c + 1) * q, c * q:(c + 1) * q] = params.pi[c] * xx / params.sigma2[c]
    nb = g * q
    m[nb:nb + g, nb:nb + g] = np.diag(params.pi / (2.0 * params.sigma2**2))
    if g > 1:
        m[nb + g:, nb + g:] = _pi_block(params.pi)
    return m


def _pi_block(pi: np.ndarray) -> np.ndarray:
    g = pi.size
    return np.full((g - 1, g - 1), 1.0 / pi[-1]) + np.diag(1.0 / pi[:-1])


# --- overlap integrals -----------------------------------------------------
#
# With variances s1, s2 and means g1 = x'beta_1, g2 = x'beta_2,
# sqrt(pi1 phi1 pi2 phi2) = f3 * N(y; m, v) where
#   S = s1 + s2,  v = 2 s1 s2 / S,  m = (s2 g1 + s1 g2) / S,
#   f3 = sqrt(pi1 pi2) sqrt(2 sqrt(s1 s2) / S) exp(-(g1 - g2)^2 / (4 S)),
# so f1 and f2 are moments of u = y - g1 ~ N(a, v), a = s1 (g2 - g1) / S.

def _pair(x, params: ClrParams, g1: int, g2: int):
    if g1 == g2:
        raise ValueError(f"overlap integrals need two distinct clusters, got g1 = g2 = {g1}")
    x = _x(x, params)
    s1, s2 = params.sigma2[g1], params.sigma2[g2]
    gam1, gam2 = float(x @ params.beta[g1]), float(x @ params.beta[g2])
    S = s1 + s2
    diff = gam1 - gam2
    f3 = math.sqrt(params.pi[g1] * params.pi[g2]) * math.sqrt(2.0 * math.sqrt(s1 * s2) / S) \
        * math.exp(-diff * diff / (4.0 * S))
    a = s1 * (gam2 - gam1) / S
    v = 2.0 * s1 * s2 / S
    return x, s1, f3, a, v


def f3(x, params: ClrParams, g1: int, g2: int) -> float:
    return _pair(x, params, g1, g2)[2]


def f1(x, params: ClrParams, g1: int, g2: int) -> np.ndarray:
    x, s1, ov, a, v = _pair(x, params, g1, g2)
    return x * x * ov * (v + a * a) / (s1 * s1)


def f2(x, params: ClrParams, g1: int, g2: int) -> float:
    x, s1, ov, a, v = _pair(x, params, g1, g2)
    # E[(u^2 - s1)^2] = Var(u^2) + (E u^2 - s1)^2, both terms nonnegative
    m2 = a * a + v
    central = 2.0 * v * v + 4.0 * a * a * v + (m2 - s1) ** 2
    return ov * central / (4.0 * s1**4)


def surrogate_q(x, params: ClrParams) -> np.ndarray:
    """Diagonal of the closed-form matrix that dominates diag(I_M) at x."""
    x = _x(x, params)
    g, q = params.g, params.p + 1
    out = np.zeros(params.dim)
    if g == 1:
        return out
    nb = g * q
    ov = np.zeros((g, g))
    for c in range(g):
        for o in range(g):
            if o == c:
                continue
            out[c * q:(c + 1) * q] += 0.5 * f1(x, params, c, o)
            out[nb + c] += 0.5 * f2(x, params, c, o)
            ov[c, o] = f3(x, params, c, o)
    pi = params.pi
    last = g - 1
    tail = 0.5 * ov[last].sum() / pi[last] ** 2
    for c in range(g - 1):
        out[nb + g + c] = 0.5 * ov[c].sum() / pi[c] ** 2 + tail + ov[c, last] / (pi[c] * pi[last])
    return out


# --- missing information ---------------------------------------------------

def _windows(params: ClrParams, x: np.ndarray, width: float):
    centers = params.beta @ x
    half = width * np.sqrt(params.sigma2)
    iv = sorted(zip(centers - half, centers + half))
    merged = [list(iv[0])]
    for lo, hi in iv[1:]:
        if lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return merged, centers


def _missing_integrand(params: ClrParams, gam: np.ndarray):
    logpi = np.log(params.pi)
    s2 = params.sigma2
    half_log = 0.5 * np.log(2.0 * math.pi * s2)
    g = params.g

    def h(y):
        r = y - gam
        lc = logpi - half_log - 0.5 * r * r / s2
        lp = logsumexp(lc)
        w = np.exp(lc - lp)
        joint = np.exp(lc)                      # pi_g phi_g = p(y) w_g
        rest = np.array([w.sum() - w[c] for c in range(g)])   # 1 - w_g without cancellation
        base = joint * rest                     # p(y) w_g (1 - w_g)
        d_sig = (r * r - s2) / (2.0 * s2 * s2)
        out_beta = base * r * r / (s2 * s2)
        out_sig = base * d_sig * d_sig
        pi = params.pi
        out_pi = base[:-1] / pi[:-1] ** 2 + base[-1] / pi[-1] ** 2 \
            + 2.0 * joint[:-1] * w[-1] / (pi[:-1] * pi[-1])
        return np.concatenate([out_beta, out_sig, out_pi])

    return h


def missing_info_diag(x, params: ClrParams, tol: float = 1e-10, width: float = 10.0,
                      return_error: bool = False):
    """Diagonal of the missing information I_M at x, by adaptive quadrature.

    Integrates over the union of ``[x'beta_g - width*sigma_g, x'beta_g + width*sigma_g]``
    windows using adaptive Gauss-Kronrod (21-point) refinement.  Raises
    :class:`QuadratureError` if the requested absolute tolerance is not met.
    """
    x = _x(x, params)
    g, q = params.g, params.p + 1
    out = np.zeros(params.dim)
    if g == 1:
        return (out, 0.0) if return_error else out
    intervals, centers = _windows(params, x, width)
    h = _missing_integrand(params, centers)
    total = np.zeros(2 * g + g - 1)
    err_total = 0.0
    for lo, hi in intervals:
        pts = [c for c in centers if lo < c < hi]
        res, err, info = quad_vec(h, lo, hi, epsabs=tol, epsrel=1e-12, norm="max",
                                  points=pts or None, full_output=True, limit=20000)
        if not info.success and err > max(tol, 1e-12 * np.abs(res).max()):
            raise QuadratureError(err, tol)
        err_total += err
        total += res
    xx = x * x
    for c in range(g):
        out[c * q:(c + 1) * q] = xx * total[c]
    nb = g * q
    out[nb:nb + g] = total[g:2 * g]
    out[nb + g:] = total[2 * g:]
    return (out, err_total) if return_error else out


# --- Monte-Carlo oracle for the observed-data information -------------------

def score_vectors(X_or_x, y, params: ClrParams) -> np.ndarray:
    """Per-observation scores of log sum_g pi_g phi_g, shape (n, d)."""
    x = np.asarray(X_or_x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    g, q = params.g, params.p + 1
    if x.ndim == 1:
        gam = np.broadcast_to(params.beta @ x, (y.size, g))
        X = np.broadcast_to(x, (y.size, q))
    else:
        X = x
        gam = X @ params.beta.T
    r = y[:, None] - gam
    s2 = params.sigma2
    lc = np.log(params.pi) - 0.5 * np.log(2 * math.pi * s2) - 0.5 * r * r / s2
    w = np.exp(lc - logsumexp(lc, axis=1, keepdims=True))
    out = np.empty((y.size, param_dim(g, params.p)))
    for c in range(g):
        out[:, c * q:(c + 1) * q] = (w[:, c] * r[:, c] / s2[c])[:, None] * X
    nb = g * q
    out[:, nb:nb + g] = w * (-0.5 / s2 + r * r / (2 * s2 * s2))
    out[:, nb + g:] = w[:, :-1] / params.pi[:-1] - (w[:, -1] / params.pi[-1])[:, None]
    return out


def _reduced_scores(y, gam, params: ClrParams) -> np.ndarray:
    """Scores with the design vector factored out, shape (n, 3G-1).

    Columns: w_g r_g / s2_g (multiplies x for the beta_g block), the G
    variance scores, then the G-1 mixing-weight scores.
    """
    r = y[:, None] - gam
    s2 = params.sigma2
    lc = np.log(params.pi) - 0.5 * np.log(2 * math.pi * s2) - 0.5 * r * r / s2
    w = np.exp(lc - logsumexp(lc, axis=1, keepdims=True))
    return np.hstack([
        w * r / s2,
        w * (-0.5 / s2 + r * r / (2 * s2 * s2)),
        w[:, :-1] / params.pi[:-1] - (w[:, -1] / params.pi[-1])[:, None],
    ])


def _expand_reduced(m: np.ndarray, x: np.ndarray, g: int) -> np.ndarray:
    """Map a (3G-1)^2 moment matrix of reduced scores to the full d x d layout."""
    q = x.size
    expand = np.zeros((3 * g - 1, g * q + 2 * g - 1))
    for c in range(g):
        expand[c, c * q:(c + 1) * q] = x
    expand[g:, g * q:] = np.eye(2 * g - 1)
    return expand.T @ m @ expand


def true_info_point_mc(x, params: ClrParams, n_draws: int = 10**6, rng=None, chunk: int = 100_000):
    """Monte-Carlo estimate of the per-point information E[s s'].

    Draws are stratified by mixture component (``n_draws // G`` each) and
    antithetic within a component.  Returns ``(estimate, standard_error)``,
    both d x d.
    """
    if n_draws < 10**4:
        raise ValueError("n_draws must be at least 1e4")
    x = _x(x, params)
    gen = as_generator(rng if rng is not None else RngSpec())
    g = params.g
    m = 3 * g - 1
    iu, ju = np.triu_indices(m)
    gam = params.beta @ x
    sd = np.sqrt(params.sigma2)
    pairs = max(n_draws // (2 * g), 2)
    mean = np.zeros(iu.size)
    var = np.zeros(iu.size)
    for c in range(g):
        s1 = np.zeros(iu.size)
        s2 = np.zeros(iu.size)
        done = 0
        while done < pairs:
            n = min(chunk, pairs - done)
            e = gen.standard_normal(n)
            a = _reduced_scores(gam[c] + sd[c] * e, gam, params)
            b = _reduced_scores(gam[c] - sd[c] * e, gam, params)
            h = 0.5 * (a[:, iu] * a[:, ju] + b[:, iu] * b[:, ju])
            s1 += h.sum(axis=0)
            s2 += (h * h).sum(axis=0)
            done += n
        mc = s1 / pairs
        vc = np.maximum(s2 / pairs - mc * mc, 0.0) * pairs / (pairs - 1)
        mean += params.pi[c] * mc
        var += params.pi[c] ** 2 * vc / pairs
    red = np.zeros((m, m))
    red_se = np.zeros((m, m))
    red[iu, ju] = red[ju, iu] = mean
    red_se[iu, ju] = red_se[ju, iu] = np.sqrt(var)
    est = _expand_reduced(red, x, g)
    # every full entry is one reduced entry times a product of (at most two) x's
    se = _expand_reduced(red_se, np.abs(x), g)
    return est, se


def complete_score_mc(x, params: ClrParams, n_draws: int = 10**6, rng=None):
    """Monte-Carlo E[s_c s_c'] for the complete-data score (labels observed).

    Used as an independent check of :func:`complete_info_point`.
    Returns ``(estimate, standard_error)``.
    """
    x = _x(x, params)
    gen = as_generator(rng if rng is not None else RngSpec())
    g, q = params.g, params.p + 1
    d = params.dim
    labels = gen.choice(g, size=n_draws, p=params.pi)
    e = gen.standard_normal(n_draws)
    s2 = params.sigma2[labels]
    r = np.sqrt(s2) * e
    S = np.zeros((n_draws, d))
    rows = np.arange(n_draws)
    for c in range(g):
        sel = labels == c
        S[np.ix_(sel, np.arange(c * q, (c + 1) * q))] = (r[sel] / s2[sel])[:, None] * x
    nb = g * q
    S[rows, nb + labels] = -0.5 / s2 + r * r / (2 * s2 * s2)
    if g > 1:
        onehot = np.zeros((n_draws, g))
        onehot[rows, labels] = 1.0
        S[:, nb + g:] = onehot[:, :-1] / params.pi[:-1] - (onehot[:, -1] / params.pi[-1])[:, None]
    est = S.T @ S / n_draws
    sq = (S * S).T @ (S * S) / n_draws
    se = np.sqrt(np.maximum(sq - est * est, 0.0) / n_draws)
    return est, se


# --- subdata-level quantities ------------------------------------------------

def subdata_info(data: Dataset, subset, params: ClrParams, mode: str = "complete",
                 n_draws: int = 10**5, rng=None):
    """Sum of per-point information matrices over the selected rows.

    ``mode="complete"`` returns the closed-form complete information.
    ``mode="mc"`` returns ``(estimate, standard_error)`` of the observed-data
    information by Monte Carlo.
    """
    idx = select_indices(data, subset)
    X = data.design(idx)
    if X.shape[0] == 0:
        raise ValueError("empty subset")
    if X.shape[1] != params.p + 1:
        raise ValueError(f"data has p={X.shape[1] - 1} but params have p={params.p}")
    if mode == "complete":
        g, q = params.g, params.p + 1
        n = X.shape[0]
        m = np.zeros((params.dim, params.dim))
        xtx = X.T @ X
        for c in range(g):
            m[c * q:(c + 1) * q, c * q:(c + 1) * q] = params.pi[c] * xtx / params.sigma2[c]
        nb = g * q
        m[nb:nb + g, nb:nb + g] = n * np.diag(params.pi / (2.0 * params.sigma2**2))
        if g > 1:
            m[nb + g:, nb + g:] = n * _pi_block(params.pi)
        return m
    if mode == "mc":
        spec = rng if isinstance(rng, RngSpec) else RngSpec(0 if rng is None else int(rng))
        est = np.zeros((params.dim, params.dim))
        var = np.zeros_like(est)
        for i, row in enumerate(X):
            e, s = true_info_point_mc(row, params, n_draws, spec.generator(i))
            est += e
            var += s * s
        return est, np.sqrt(var)
    raise ValueError(f"unknown mode {mode!r}")


def d_criterion(info) -> float:
    """log det of an information matrix; -inf when it is singular."""
    sign, ld = np.linalg.slogdet(np.asarray(info, dtype=float))
    return float(ld) if sign > 0 else -math.inf


# --- asymptotic variance predictors ---------------------------------------------

@dataclass(frozen=True, eq=False)
class AsymptoticLimit:
    scaling: np.ndarray      # diagonal of the scaling matrix (A_N or B_N)
    limit: np.ndarray        # (p+1) x (p+1) limit of Var(scaling * beta_hat_g)
    family: str


def asymptotic_limit(params: ClrParams, family: str, mu_z, sigma_z, k: int, r: int, n: int,
                     g: int) -> AsymptoticLimit:
    """Limit of the scaled covariance of cluster ``g``'s IBOSS estimator.

    normal:    scaling (1, sqrt(log N), ...),
               limit (s2/pi) * blkdiag(1/k, (Phi rho^2 Phi)^-1 / (4r))
    lognormal: scaling (1, exp(sd_j sqrt(2 log N)), ...),
               limit (2 s2 / (k pi)) * [[1, -nu'], [-nu, p Psi + nu nu']]
    with Phi the covariate standard deviations, rho their correlation,
    nu_j = exp(-mu_j) and Psi = diag(nu_j^2).
    """
    mu_z = np.asarray(mu_z, dtype=float).ravel()
    sigma_z = np.atleast_2d(np.asarray(sigma_z, dtype=float))
    p = mu_z.size
    if sigma_z.shape != (p, p) or p != params.p:
        raise ValueError("mu_z / Sigma_z dimensions do not match params")
    sd = np.sqrt(np.diag(sigma_z))
    rho = sigma_z / np.outer(sd, sd)
    s2, pi = params.sigma2[g], params.pi[g]
    logn = math.log(n)
    if family == "normal":
        phi = np.diag(sd)
        inner = phi @ rho @ rho @ phi
        if np.linalg.matrix_rank(inner) < p:
            raise np.linalg.LinAlgError("correlation matrix is singular")
        lim = np.zeros((p + 1, p + 1))
        lim[0, 0] = 1.0 / k
        lim[1:, 1:] = np.linalg.inv(inner) / (4.0 * r)
        lim *= s2 / pi
        scaling = np.concatenate([[1.0], np.full(p, math.sqrt(logn))])
    elif family == "lognormal":
        if np.linalg.matrix_rank(rho) < p:
            raise np.linalg.LinAlgError("correlation matrix is singular")
        nu = np.exp(-mu_z)
        lim = np.empty((p + 1, p + 1))
        lim[0, 0] = 1.0
        lim[0, 1:] = -nu
        lim[1:, 0] = -nu
        lim[1:, 1:] = p * np.diag(nu**2) + np.outer(nu, nu)
        lim *= 2.0 * s2 / (k * pi)
        scaling = np.concatenate([[1.0], np.exp(sd * math.sqrt(2.0 * logn))])
    else:
        raise ValueError(f"unknown covariate family {family!r}")
    return AsymptoticLimit(scaling, lim, family)


def slope_variance_lower_bound(sigma2_g: float, pi_g: float, k: int, mu: float, sd: float,
                               n: int) -> float:
    """Leading-order lower bound on Var(slope) for any size-k subdata (normal covariates).

    Decays like 1/log N.
    """
    return sigma2_g / (k * pi_g) / (abs(mu) + sd * math.sqrt(2.0 * math.log(n))) ** 2
