"""Subdata selection: IBOSS extreme-value selection and the two baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, RngSpec, SelectionResult, as_generator


class SelectionError(ValueError):
    """A selection precondition does not hold."""


@dataclass(frozen=True)
class SelectionPlan:
    k: int
    p: int
    method: str = "iboss"

    def __post_init__(self):
        if self.k < 1:
            raise SelectionError(f"k must be positive, got {self.k}")
        if self.method == "iboss":
            # k < 2p gives 0 < r < 1, so this also covers the k >= 2p requirement
            if self.k % (2 * self.p):
                hint = f" (k must be at least 2p={2 * self.p})" if self.k < 2 * self.p else ""
                raise SelectionError(
                    f"k/(2p) must be an integer: k={self.k}, p={self.p} gives r={self.k / (2 * self.p):g}{hint}"
                )

    @property
    def r(self) -> int:
        """Rows taken from each tail of each covariate."""
        return self.k // (2 * self.p)


def _lowest(values: np.ndarray, r: int) -> np.ndarray:
    """Positions of the r smallest values; ties at the cut go to smaller positions."""
    if r >= values.size:
        return np.arange(values.size)
    cut = np.partition(values, r - 1)[r - 1]
    below = np.flatnonzero(values < cut)
    ties = np.flatnonzero(values == cut)[: r - below.size]
    return np.union1d(below, ties)


def _highest(values: np.ndarray, r: int) -> np.ndarray:
    if r >= values.size:
        return np.arange(values.size)
    cut = np.partition(values, values.size - r)[values.size - r]
    above = np.flatnonzero(values > cut)
    ties = np.flatnonzero(values == cut)[: r - above.size]
    return np.union1d(above, ties)


def select_iboss(data: Dataset, plan) -> SelectionResult:
    """Sequential extreme-value selection over covariates.

    For each covariate in turn, among rows not yet chosen, take the ``r``
    smallest and then the ``r`` largest values.  Each step is a linear-time
    partial selection rather than a sort.  Ties at a cut are broken toward
    the smaller row index.

    ``plan`` is a :class:`SelectionPlan` or the subdata size ``k``.
    """
    if not isinstance(plan, SelectionPlan):
        plan = SelectionPlan(int(plan), data.p)
    if plan.p != data.p:
        raise SelectionError(f"plan is for p={plan.p} but data has p={data.p}")
    if data.n < plan.k:
        raise SelectionError(f"N={data.n} is smaller than k={plan.k}")
    r = plan.r
    available = np.ones(data.n, dtype=bool)
    for j in range(data.p):
        cand = np.flatnonzero(available)
        vals = data.z[cand, j]
        lo = _lowest(vals, r)
        available[cand[lo]] = False
        rest = np.delete(np.arange(cand.size), lo)
        hi = rest[_highest(vals[rest], r)]
        available[cand[hi]] = False
    return SelectionResult(np.flatnonzero(~available), "iboss")


def select_random(data: Dataset, k: int, rng=None) -> SelectionResult:
    """Uniform sampling of ``k`` distinct rows."""
    k = int(k)
    if k < 1:
        raise SelectionError(f"k must be positive, got {k}")
    if data.n < k:
        raise SelectionError(f"N={data.n} is smaller than k={k}")
    gen = as_generator(rng if rng is not None else RngSpec())
    if k == data.n:
        idx = np.arange(data.n)
    else:
        idx = np.sort(gen.choice(data.n, size=k, replace=False))
    return SelectionResult(idx, "random")


def select_full(data: Dataset) -> SelectionResult:
    return SelectionResult(np.arange(data.n), "full")


def select(data: Dataset, method: str, k: int | None = None, rng=None) -> SelectionResult:
    if method == "iboss":
        return select_iboss(data, k)
    if method == "random":
        return select_random(data, k, rng)
    if method == "full":
        return select_full(data)
    raise SelectionError(f"unknown method {method!r}")
