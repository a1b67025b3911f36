"""Domain types shared by every other module.

The design vector ``x_i = (1, z_i)`` is never stored; :meth:`Dataset.design`
builds it on demand.  Parameter vectors follow one fixed ordering::

    (beta_1, ..., beta_G, sigma2_1, ..., sigma2_G, pi_1, ..., pi_{G-1})

which has length ``G * (p + 3) - 1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

SIGMA2_FLOOR = 1e-10
SIMPLEX_TOL = 1e-12

METHODS = ("iboss", "random", "full")


class InvalidParamsError(ValueError):
    """A ClrParams invariant does not hold."""


class CsvFormatError(ValueError):
    """Raised when a CSV input cannot be parsed into a Dataset."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates ``z`` (N x p, row-major) and responses ``y`` (length N)."""

    z: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...] = ()

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 1:
            raise ValueError(f"z must be a non-empty N x p matrix, got shape {z.shape}")
        if y.shape[0] != z.shape[0]:
            raise ValueError(f"y has {y.shape[0]} rows but z has {z.shape[0]}")
        if not np.all(np.isfinite(z)):
            i, j = np.argwhere(~np.isfinite(z))[0]
            raise ValueError(f"non-finite covariate at row {i}, column {j}")
        if not np.all(np.isfinite(y)):
            i = int(np.flatnonzero(~np.isfinite(y))[0])
            raise ValueError(f"non-finite response at row {i}")
        object.__setattr__(self, "z", _frozen(np.ascontiguousarray(z)))
        object.__setattr__(self, "y", _frozen(y))
        if not self.columns:
            object.__setattr__(self, "columns", tuple(f"z{j + 1}" for j in range(z.shape[1])))

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def p(self) -> int:
        return self.z.shape[1]

    def column(self, j: int) -> np.ndarray:
        """Contiguous copy of covariate column ``j``."""
        return np.ascontiguousarray(self.z[:, j])

    def design(self, indices=None) -> np.ndarray:
        """Design matrix with a leading intercept column, optionally row-subset."""
        z = self.z if indices is None else self.z[np.asarray(indices)]
        return np.hstack([np.ones((z.shape[0], 1)), z])

    def response(self, indices=None) -> np.ndarray:
        return self.y if indices is None else self.y[np.asarray(indices)]

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(self.z[idx], self.y[idx], self.columns)


@dataclass(frozen=True, eq=False)
class ClrParams:
    """Parameters of a G-cluster clusterwise linear regression.

    ``beta`` is G x (p+1) with the intercept first; ``sigma2`` and ``pi`` are
    length G.  Construction only checks shapes; value invariants are checked
    by :func:`validate_params`.
    """

    beta: np.ndarray
    sigma2: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        sigma2 = np.atleast_1d(np.asarray(self.sigma2, dtype=float)).ravel()
        pi = np.atleast_1d(np.asarray(self.pi, dtype=float)).ravel()
        g = beta.shape[0]
        if beta.shape[1] < 2:
            raise InvalidParamsError("dimension mismatch: beta needs an intercept and at least one slope")
        if sigma2.shape[0] != g or pi.shape[0] != g:
            raise InvalidParamsError(
                f"dimension mismatch: beta has {g} rows, sigma2 has {sigma2.shape[0]}, pi has {pi.shape[0]}"
            )
        object.__setattr__(self, "beta", _frozen(beta))
        object.__setattr__(self, "sigma2", _frozen(sigma2))
        object.__setattr__(self, "pi", _frozen(pi))

    @property
    def g(self) -> int:
        return self.beta.shape[0]

    @property
    def p(self) -> int:
        return self.beta.shape[1] - 1

    @property
    def dim(self) -> int:
        return param_dim(self.g, self.p)

    def permuted(self, perm: Sequence[int]) -> "ClrParams":
        """Reorder clusters so that new cluster ``g`` is old cluster ``perm[g]``."""
        perm = np.asarray(perm, dtype=int)
        return ClrParams(self.beta[perm], self.sigma2[perm], self.pi[perm])

    def to_dict(self) -> dict:
        return {
            "g": self.g,
            "beta": self.beta.tolist(),
            "sigma2": self.sigma2.tolist(),
            "pi": self.pi.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClrParams":
        return cls(np.array(d["beta"]), np.array(d["sigma2"]), np.array(d["pi"]))

    def __eq__(self, other):
        if not isinstance(other, ClrParams):
            return NotImplemented
        return (
            self.beta.shape == other.beta.shape
            and np.array_equal(self.beta, other.beta)
            and np.array_equal(self.sigma2, other.sigma2)
            and np.array_equal(self.pi, other.pi)
        )


def param_dim(g: int, p: int) -> int:
    return g * (p + 3) - 1


def validate_params(params: ClrParams, sigma2_floor: float = SIGMA2_FLOOR) -> ClrParams:
    if not (np.all(np.isfinite(params.beta)) and np.all(np.isfinite(params.sigma2))
            and np.all(np.isfinite(params.pi))):
        raise InvalidParamsError("parameters contain non-finite values")
    if np.any(params.pi <= 0):
        raise InvalidParamsError(f"π not positive: {params.pi.tolist()}")
    total = float(params.pi.sum())
    if abs(total - 1.0) > SIMPLEX_TOL:
        raise InvalidParamsError(f"π does not sum to 1 (sum = {total!r})")
    if np.any(params.sigma2 <= 0):
        raise InvalidParamsError(f"σ² not positive: {params.sigma2.tolist()}")
    if np.any(params.sigma2 < sigma2_floor):
        raise InvalidParamsError(f"σ² below floor {sigma2_floor}: {params.sigma2.tolist()}")
    return params


def theta_flatten(params: ClrParams) -> np.ndarray:
    return np.concatenate([params.beta.ravel(), params.sigma2, params.pi[:-1]])


def theta_unflatten(theta, g: int, p: int) -> ClrParams:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (param_dim(g, p),):
        raise InvalidParamsError(
            f"dimension mismatch: expected length {param_dim(g, p)} for G={g}, p={p}, got {theta.shape}"
        )
    nb = g * (p + 1)
    beta = theta[:nb].reshape(g, p + 1)
    sigma2 = theta[nb:nb + g]
    pi_head = theta[nb + g:]
    pi = np.append(pi_head, 1.0 - pi_head.sum())
    return ClrParams(beta, sigma2, pi)


def block_slices(g: int, p: int) -> dict[str, list[slice]]:
    """Index ranges of each parameter block inside a theta vector."""
    nb = g * (p + 1)
    return {
        "beta": [slice(c * (p + 1), (c + 1) * (p + 1)) for c in range(g)],
        "sigma2": [slice(nb + c, nb + c + 1) for c in range(g)],
        "pi": [slice(nb + g + c, nb + g + c + 1) for c in range(g - 1)],
    }


@dataclass(frozen=True, eq=False)
class SelectionResult:
    """Sorted row indices of a subdata set plus the method that chose them."""

    indices: np.ndarray
    method: str

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown selection method {self.method!r}")
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        if idx.size and np.any(np.diff(idx) <= 0):
            raise ValueError("indices must be strictly increasing")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def k(self) -> int:
        return int(self.indices.size)

    def __len__(self):
        return self.k

    def to_dict(self) -> dict:
        return {"method": self.method, "k": self.k, "indices": self.indices.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionResult":
        res = cls(np.asarray(d["indices"], dtype=np.int64), d["method"])
        if "k" in d and int(d["k"]) != res.k:
            raise ValueError(f"k={d['k']} does not match {res.k} indices")
        return res


@dataclass(frozen=True)
class RngSpec:
    """Seed plus stream id; each (seed, stream, *sub) triple is an independent stream.

    Uses the counter-based Philox generator so that streams derived for
    parallel replicates or restarts do not depend on scheduling order.
    """

    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")
        if int(self.stream) < 0:
            raise ValueError("stream id must be non-negative")

    def generator(self, *sub: int) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream), *map(int, sub)))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, stream: int) -> "RngSpec":
        return RngSpec(self.seed, stream)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSpec):
        return rng.generator()
    if rng is None or isinstance(rng, (int, np.integer)):
        return RngSpec(0 if rng is None else int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


def select_indices(data: Dataset, subset) -> np.ndarray | None:
    """Normalise a subset argument (None, SelectionResult or index array)."""
    if subset is None:
        return None
    if isinstance(subset, SelectionResult):
        idx = subset.indices
    else:
        idx = np.asarray(subset, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= data.n):
        raise IndexError(f"subset indices out of range [0, {data.n})")
    return idx


def read_csv(path, response: str = "y") -> Dataset:
    """Load a Dataset from a CSV file with a header row.

    The column named ``response`` is the response, every other column is a
    covariate in header order.  Parse failures report 1-based file row and
    column numbers.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        if response not in header:
            raise KeyError(f"{path}: response column {response!r} not found in header {header}")
        # fast path; fall back to a cell-by-cell scan only to locate the bad cell
        try:
            fh.seek(0)
            raw = np.loadtxt(fh, delimiter=",", skiprows=1, ndmin=2, dtype=float)
        except ValueError:
            raw = None
        if raw is None or raw.shape[1] != len(header):
            fh.seek(0)
            raw = _scan_csv(csv.reader(fh), len(header), path)
    if raw.shape[0] == 0:
        raise CsvFormatError(f"{path}: no data rows")
    bad = np.argwhere(~np.isfinite(raw))
    if bad.size:
        i, j = bad[0]
        raise CsvFormatError(f"{path}: non-finite value at row {i + 2}, column {j + 1} ({header[j]})")
    ycol = header.index(response)
    zcols = [j for j in range(len(header)) if j != ycol]
    if not zcols:
        raise CsvFormatError(f"{path}: no covariate columns besides {response!r}")
    return Dataset(raw[:, zcols], raw[:, ycol], tuple(header[j] for j in zcols))


def _scan_csv(reader, ncol: int, path: Path) -> np.ndarray:
    next(reader)
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != ncol:
            raise CsvFormatError(f"{path}: row {lineno} has {len(row)} fields, expected {ncol}")
        vals = []
        for col, cell in enumerate(row, start=1):
            try:
                vals.append(float(cell))
            except ValueError:
                raise CsvFormatError(
                    f"{path}: cannot parse {cell!r} as a float at row {lineno}, column {col}"
                ) from None
        rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, ncol)


def write_csv(path, data: Dataset, response: str = "y") -> None:
    header = list(data.columns) + [response]
    arr = np.column_stack([data.z, data.y])
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, arr, delimiter=",", fmt="%.17g")


def log_normal_pdf(y, mean, var):
    return -0.5 * (math.log(2 * math.pi) + np.log(var)) - 0.5 * (y - mean) ** 2 / var
