"""Test integrands with known integrals.

The six Genz families on the unit cube, the step function, the portfolio
loss indicator, and table-backed pool functions built from a CSV file.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
import pandas as pd
from scipy.special import ndtr

from .exceptions import NumericalError, StructuralError

logger = logging.getLogger(__name__)

GENZ_FAMILIES = ("cont", "copeak", "disc", "gaussian", "oscil", "prpeak")

# (numerator, power of d) for the default effective parameters a_i.
_DEFAULT_A = {
    "cont": (150.0, 3.0),
    "copeak": (600.0, 3.0),
    "disc": (10.0, 3.0),
    "gaussian": (100.0, 2.0),
    "oscil": (110.0, 2.5),
    "prpeak": (600.0, 3.0),
}

_MAX_SUBSET_DIM = 20


def default_genz_a(family: str, d: int) -> np.ndarray:
    num, power = _DEFAULT_A[family]
    return np.full(d, num / d**power)


@dataclass(frozen=True)
class GenzFunction:
    """A Genz test integrand on ``[0, 1]^d``.

    Parameters
    ----------
    family : str
        One of ``cont``, ``copeak``, ``disc``, ``gaussian``, ``oscil``, ``prpeak``.
    d : int
        Input dimension.
    a, u : array_like, optional
        Effective and shift parameters. ``u`` defaults to 0.5 everywhere and
        ``a`` to the per-family dimension scaling.
    """

    family: str
    d: int
    a: np.ndarray = None
    u: np.ndarray = None

    def __post_init__(self):
        if self.family not in GENZ_FAMILIES:
            raise StructuralError(f"unknown Genz family {self.family!r}")
        if self.d < 1:
            raise StructuralError("dimension must be positive")
        a = default_genz_a(self.family, self.d) if self.a is None else self.a
        u = np.full(self.d, 0.5) if self.u is None else self.u
        a = np.broadcast_to(np.asarray(a, dtype=float), (self.d,)).copy()
        u = np.broadcast_to(np.asarray(u, dtype=float), (self.d,)).copy()
        if np.any(a <= 0):
            raise StructuralError("Genz parameters a must be positive")
        if np.any((u < 0) | (u > 1)):
            raise StructuralError("Genz parameters u must lie in [0, 1]")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "u", u)

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a, u = self.a, self.u
        fam = self.family
        if fam == "cont":
            return np.exp(-np.abs(x - u) @ a)
        if fam == "copeak":
            return (1.0 + x @ a) ** (-(self.d + 1))
        if fam == "disc":
            k = min(2, self.d)
            # zero once any of the first min(2, d) coordinates passes its shift
            cut = np.any(x[:, :k] > u[:k], axis=1)
            return np.where(cut, 0.0, np.exp(x @ a))
        if fam == "gaussian":
            return np.exp(-((x - u) ** 2) @ (a**2))
        if fam == "oscil":
            return np.cos(2.0 * math.pi * u[0] + x @ a)
        return np.prod(1.0 / (a**-2.0 + (x - u) ** 2), axis=1)

    def true_integral(self) -> float:
        a, u, d = self.a, self.u, self.d
        fam = self.family
        if fam == "cont":
            return float(np.prod((2.0 - np.exp(-a * u) - np.exp(a * (u - 1.0))) / a))
        if fam == "disc":
            k = min(2, d)
            head = np.prod(np.expm1(a[:k] * np.minimum(1.0, u[:k])) / a[:k])
            tail = np.prod(np.expm1(a[k:]) / a[k:])
            return _finite(head * tail)
        if fam == "gaussian":
            terms = (ndtr(math.sqrt(2.0) * a * (1.0 - u)) - ndtr(-math.sqrt(2.0) * a * u)) / a
            return _finite(math.pi ** (d / 2.0) * np.prod(terms))
        if fam == "prpeak":
            return _finite(np.prod(a * (np.arctan(a * (1.0 - u)) - np.arctan(-a * u))))
        if fam == "copeak":
            return _copeak_integral(a)
        return _oscil_integral(a, u[0])


def _finite(value) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise NumericalError("integral is not finite")
    return value


def _subset_sums(a):
    """Yield ``(|I|, sum_{j in I} a_j, multiplicity)`` over subsets I.

    Equal parameters collapse to one term per subset size.
    """
    d = len(a)
    if all(x == a[0] for x in a):
        for k in range(d + 1):
            yield k, k * a[0], math.comb(d, k)
        return
    if d > _MAX_SUBSET_DIM:
        raise NumericalError(f"subset enumeration over d={d} > {_MAX_SUBSET_DIM} unequal parameters")
    for k in range(d + 1):
        for idx in itertools.combinations(range(d), k):
            yield k, mpmath.fsum(a[j] for j in idx), 1


def _copeak_integral(a_np) -> float:
    d = len(a_np)
    with mpmath.workdps(60):
        a = [mpmath.mpf(float(x)) for x in a_np]
        total_a = mpmath.fsum(a)
        acc = mpmath.mpf(0)
        for k, s, mult in _subset_sums(a):
            acc += mult * (-1) ** (k + d) / (1 + total_a - s)
        # d! * prod(a) in log space
        log_norm = mpmath.loggamma(d + 1) + mpmath.fsum(mpmath.log(x) for x in a)
        out = acc * mpmath.exp(-log_norm)
        return _finite(out)


def _oscil_integral(a_np, u1: float) -> float:
    d = len(a_np)
    h = {1: mpmath.sin, 2: lambda z: -mpmath.cos(z), 3: lambda z: -mpmath.sin(z),
         0: mpmath.cos}[d % 4]
    with mpmath.workdps(60):
        a = [mpmath.mpf(float(x)) for x in a_np]
        base = 2 * mpmath.pi * mpmath.mpf(float(u1)) + mpmath.fsum(a)
        acc = mpmath.mpf(0)
        for k, s, mult in _subset_sums(a):
            acc += mult * (-1) ** k * h(base - s)
        out = acc / mpmath.fprod(a)
        return _finite(out)


def genz_eval(spec: GenzFunction, x) -> np.ndarray:
    return spec(x)


def genz_true_integral(spec: GenzFunction) -> float:
    return spec.true_integral()


def step_function(x) -> np.ndarray:
    """Indicator of ``x_1 in (0.5, 1]``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return ((x[:, 0] > 0.5) & (x[:, 0] <= 1.0)).astype(float)


def _exceeds(loss, gamma):
    # losses are sums of decimal exposures; ties with gamma must not flip on rounding
    return loss > gamma + 1e-12 * max(1.0, abs(gamma))


@dataclass(frozen=True)
class Portfolio:
    """Credit portfolio with exponential financial strains.

    Obligor ``i`` defaults when its strain exceeds ``thresholds[i]``, costing
    ``exposures[i]``; the integrand is the indicator that the total loss
    exceeds ``gamma``.
    """

    d: int
    exposures: np.ndarray = None
    thresholds: np.ndarray = None
    gamma: float = 2.0

    def __post_init__(self):
        i = np.arange(1, self.d + 1, dtype=float)
        c = 0.2 * i if self.exposures is None else np.asarray(self.exposures, dtype=float)
        t = 0.5 * i if self.thresholds is None else np.asarray(self.thresholds, dtype=float)
        if c.shape != (self.d,) or t.shape != (self.d,):
            raise StructuralError("exposures and thresholds need one entry per obligor")
        if np.any(c <= 0):
            raise StructuralError("exposures must be positive")
        object.__setattr__(self, "exposures", c)
        object.__setattr__(self, "thresholds", t)

    def loss(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return (x > self.thresholds).astype(float) @ self.exposures

    def __call__(self, x) -> np.ndarray:
        return _exceeds(self.loss(x), self.gamma).astype(float)

    def true_probability(self, max_dim: int = 25) -> float:
        """Exact exceedance probability by enumerating default subsets."""
        if self.d > max_dim:
            raise NumericalError(
                f"exact enumeration over 2^{self.d} subsets is infeasible; use a Monte Carlo estimate")
        p_def = np.exp(-self.thresholds)
        log_p, log_q = np.log(p_def), np.log1p(-p_def)
        total = 0.0
        chunk = 1 << min(self.d, 20)
        bits = np.arange(self.d)
        for start in range(0, 1 << self.d, chunk):
            codes = np.arange(start, min(start + chunk, 1 << self.d))
            mask = ((codes[:, None] >> bits) & 1).astype(bool)
            loss = mask.astype(float) @ self.exposures
            hit = _exceeds(loss, self.gamma)
            if hit.any():
                lp = np.where(mask[hit], log_p, log_q).sum(axis=1)
                total += math.fsum(np.exp(lp))
        return total


def portfolio_eval(spec: Portfolio, x) -> np.ndarray:
    return spec(x)


def portfolio_true_probability(spec: Portfolio) -> float:
    return spec.true_probability()


@dataclass
class PoolFunction:
    """Binary response attached to a finite, encoded covariate table.

    Rows of ``X`` are the encoded individuals; calling the object on a
    pool index returns the recorded response, and :meth:`encode` maps raw
    records into the same feature space.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: list
    continuous: list
    categorical: dict = field(default_factory=dict)
    response_column: str = ""
    threshold: float = 0.0
    n_rejected: int = 0

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_pool(self) -> int:
        return self.X.shape[0]

    def truth(self) -> float:
        """Population proportion over the full pool."""
        return float(np.mean(self.y))

    def lookup(self, indices) -> np.ndarray:
        return self.y[np.asarray(indices, dtype=int)]

    def encode(self, frame: pd.DataFrame) -> np.ndarray:
        cols = []
        for name in self.continuous:
            cols.append(frame[name].to_numpy(dtype=float)[:, None])
        for name, levels in self.categorical.items():
            values = frame[name].astype(str).to_numpy()
            unknown = set(values) - set(levels)
            if unknown:
                raise StructuralError(f"unknown categories for {name!r}: {sorted(unknown)}")
            cols.append((values[:, None] == np.asarray(levels)[None, :]).astype(float))
        return np.hstack(cols) if cols else np.empty((len(frame), 0))


def ingest_pool(csv_path, response_column: str, threshold: float = 10.0,
                continuous=(), categorical=(), ordinal=()) -> PoolFunction:
    """Load and encode a survey pool.

    Categorical columns are one-hot encoded (one column per observed level),
    ordinal and continuous columns are kept as numbers, and the response is
    binarised as ``log(response) > threshold``. Rows with missing values in
    any used column are dropped and counted.
    """
    frame = pd.read_csv(csv_path, encoding="utf-8")
    numeric = list(continuous) + list(ordinal)
    used = numeric + list(categorical) + [response_column]
    missing = [c for c in used if c not in frame.columns]
    if missing:
        raise StructuralError(f"columns not in CSV: {missing}")
    complete = frame[used].notna().all(axis=1)
    n_rejected = int((~complete).sum())
    if n_rejected:
        logger.warning("dropped %d rows with missing values", n_rejected)
    frame = frame.loc[complete].reset_index(drop=True)

    levels = {c: sorted(frame[c].astype(str).unique()) for c in categorical}
    names = list(numeric) + [f"{c}={lv}" for c in categorical for lv in levels[c]]
    pool = PoolFunction(X=np.empty((0, 0)), y=np.empty(0), feature_names=names,
                        continuous=numeric, categorical=levels,
                        response_column=response_column, threshold=float(threshold),
                        n_rejected=n_rejected)
    pool.X = pool.encode(frame)

    resp = frame[response_column].to_numpy(dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(resp > 0, np.log(np.where(resp > 0, resp, 1.0)), -np.inf)
    pool.y = (logs > threshold).astype(float)
    return pool
