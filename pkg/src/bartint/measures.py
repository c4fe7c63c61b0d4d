"""Integration measures: product measures with exact box probabilities,
and empirical (pool) measures that are only accessible through samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .exceptions import StructuralError

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class Marginal:
    """One-dimensional marginal of a product measure.

    Subclasses provide an unnormalised ``_raw_cdf`` and ``_raw_pdf``; truncation
    to ``[lo, hi]`` is handled here by renormalising with the raw mass of the
    support.
    """

    kind = "marginal"

    def __init__(self, lo: float, hi: float):
        if not lo < hi:
            raise StructuralError(f"empty support [{lo}, {hi}]")
        self.lo = float(lo)
        self.hi = float(hi)
        self._cdf_lo = float(self._raw_cdf(np.asarray(self.lo)))
        self._mass = float(self._raw_cdf(np.asarray(self.hi))) - self._cdf_lo
        if not self._mass > 0:
            raise StructuralError("marginal has no mass on its support")

    def _raw_cdf(self, x):
        raise NotImplementedError

    def _raw_pdf(self, x):
        raise NotImplementedError

    def _raw_ppf(self, u):
        raise NotImplementedError

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        out = (self._raw_cdf(x) - self._cdf_lo) / self._mass
        return np.clip(out, 0.0, 1.0)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lo) & (x <= self.hi)
        dens = self._raw_pdf(np.where(inside, x, self.lo)) / self._mass
        return np.where(inside, dens, 0.0)

    def sample(self, rng: np.random.Generator, size: int):
        u = rng.random(size)
        x = self._raw_ppf(self._cdf_lo + u * self._mass)
        return np.clip(x, self.lo, self.hi)

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.to_dict().items() if k != "kind")
        return f"{type(self).__name__}({args})"


class Uniform(Marginal):
    kind = "uniform"

    def __init__(self, lo: float = 0.0, hi: float = 1.0):
        super().__init__(lo, hi)

    def _raw_cdf(self, x):
        return (x - self.lo) / (self.hi - self.lo)

    def _raw_pdf(self, x):
        return np.full_like(np.asarray(x, dtype=float), 1.0 / (self.hi - self.lo))

    def _raw_ppf(self, u):
        return self.lo + u * (self.hi - self.lo)

    def to_dict(self):
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi}


class Exponential(Marginal):
    """Exponential distribution with the given rate, optionally truncated."""

    kind = "exponential"

    def __init__(self, rate: float = 1.0, lo: float = 0.0, hi: float = math.inf):
        if rate <= 0:
            raise StructuralError("rate must be positive")
        if lo < 0:
            raise StructuralError("exponential support starts at 0")
        self.rate = float(rate)
        super().__init__(lo, hi)

    def _raw_cdf(self, x):
        return -np.expm1(-self.rate * np.asarray(x, dtype=float))

    def _raw_pdf(self, x):
        return self.rate * np.exp(-self.rate * np.asarray(x, dtype=float))

    def _raw_ppf(self, u):
        return -np.log1p(-u) / self.rate

    def to_dict(self):
        return {"kind": self.kind, "rate": self.rate, "lo": self.lo, "hi": self.hi}


class TruncatedGaussian(Marginal):
    kind = "truncated_gaussian"

    def __init__(self, mean: float = 0.0, sd: float = 1.0,
                 lo: float = -math.inf, hi: float = math.inf):
        if sd <= 0:
            raise StructuralError("sd must be positive")
        self.mean = float(mean)
        self.sd = float(sd)
        super().__init__(lo, hi)

    def _raw_cdf(self, x):
        return ndtr((np.asarray(x, dtype=float) - self.mean) / self.sd)

    def _raw_pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.sd
        return np.exp(-0.5 * z * z) / (_SQRT_2PI * self.sd)

    def _raw_ppf(self, u):
        return self.mean + self.sd * ndtri(u)

    def to_dict(self):
        return {"kind": self.kind, "mean": self.mean, "sd": self.sd,
                "lo": self.lo, "hi": self.hi}


_MARGINALS = {cls.kind: cls for cls in (Uniform, Exponential, TruncatedGaussian)}


def marginal_from_dict(spec: dict) -> Marginal:
    spec = dict(spec)
    kind = spec.pop("kind")
    try:
        cls = _MARGINALS[kind]
    except KeyError:
        raise StructuralError(f"unknown marginal kind {kind!r}") from None
    return cls(**spec)


@dataclass(frozen=True)
class Cell:
    """Axis-aligned box ``[lo_k, hi_k)``; the top of each interval is closed
    when it coincides with the support boundary."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).ravel()
        hi = np.asarray(self.hi, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise StructuralError("cell bounds differ in length")
        if np.any(lo > hi):
            raise StructuralError("cell has lo > hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    def contains(self, x, support: Cell | None = None) -> np.ndarray:
        """Membership test; ``support`` decides where upper bounds are closed."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        upper = x < self.hi
        if support is not None:
            upper |= (x == self.hi) & (self.hi == support.hi)
        return np.all((x >= self.lo) & upper, axis=1)


@dataclass(frozen=True)
class SampleSet:
    points: np.ndarray
    seed: int | None = None
    weights: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.points.shape[0]


class ProductMeasure:
    """Product of independent one-dimensional marginals."""

    is_product = True

    def __init__(self, marginals):
        self.marginals = tuple(marginals)
        if not self.marginals:
            raise StructuralError("a measure needs at least one dimension")

    @classmethod
    def uniform(cls, d: int, lo: float = 0.0, hi: float = 1.0) -> ProductMeasure:
        return cls([Uniform(lo, hi) for _ in range(d)])

    @classmethod
    def exponential(cls, d: int, rate: float = 1.0) -> ProductMeasure:
        return cls([Exponential(rate) for _ in range(d)])

    @classmethod
    def truncated_gaussian(cls, d: int, mean: float = 0.5, sd: float = 1.0,
                           lo: float = 0.0, hi: float = 1.0) -> ProductMeasure:
        return cls([TruncatedGaussian(mean, sd, lo, hi) for _ in range(d)])

    @property
    def dim(self) -> int:
        return len(self.marginals)

    def support(self) -> Cell:
        return Cell([m.lo for m in self.marginals], [m.hi for m in self.marginals])

    def cell_probability(self, cell: Cell) -> float:
        if cell.dim != self.dim:
            raise StructuralError(f"cell has dimension {cell.dim}, measure {self.dim}")
        prob = 1.0
        for m, lo, hi in zip(self.marginals, cell.lo, cell.hi):
            if lo < m.lo or hi > m.hi:
                raise StructuralError(f"interval [{lo}, {hi}] leaves support [{m.lo}, {m.hi}]")
            prob *= float(m.cdf(hi) - m.cdf(lo))
        return min(max(prob, 0.0), 1.0)

    def density(self, x) -> np.ndarray:
        """Product density at each row of ``x``; zero outside the support."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise StructuralError("point dimension does not match measure")
        out = np.ones(x.shape[0])
        for k, m in enumerate(self.marginals):
            out *= m.pdf(x[:, k])
        return out

    def sample(self, l: int, seed=None) -> SampleSet:
        if l < 1:
            raise ValueError("sample size must be at least 1")
        rng = _as_rng(seed)
        pts = np.column_stack([m.sample(rng, l) for m in self.marginals])
        return SampleSet(pts, seed if not isinstance(seed, np.random.Generator) else None)

    def cdf_grid(self, cutpoints) -> np.ndarray:
        """Marginal CDFs at ``[lo, c_1, ..., c_K, hi]`` per dimension, padded
        with 1.0 to a rectangle. Used for exact integration of trees."""
        width = max(len(c) for c in cutpoints) + 2
        grid = np.ones((self.dim, width))
        for k, (m, cuts) in enumerate(zip(self.marginals, cutpoints)):
            grid[k, 0] = 0.0
            grid[k, 1:len(cuts) + 1] = m.cdf(np.asarray(cuts, dtype=float))
        return grid

    def to_dict(self) -> dict:
        return {"kind": "product", "marginals": [m.to_dict() for m in self.marginals]}

    def __repr__(self):
        return f"ProductMeasure({list(self.marginals)!r})"


class EmpiricalMeasure:
    """Uniformly weighted empirical distribution of a finite pool of points.

    Only sample-based integration is possible; the density used by the
    acquisition function is the constant 1.
    """

    is_product = False

    def __init__(self, points):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def density(self, x) -> np.ndarray:
        return np.ones(np.atleast_2d(x).shape[0])

    def sample(self, l: int, seed=None) -> SampleSet:
        rng = _as_rng(seed)
        idx = rng.integers(0, self.points.shape[0], size=l)
        return SampleSet(self.points[idx], seed if not isinstance(seed, np.random.Generator) else None)

    def as_sample_set(self) -> SampleSet:
        return SampleSet(self.points)

    def cell_probability(self, cell: Cell) -> float:
        return float(np.mean(cell.contains(self.points)))

    def to_dict(self) -> dict:
        return {"kind": "empirical", "n_points": int(self.points.shape[0])}


def measure_from_dict(spec: dict, d: int | None = None) -> ProductMeasure:
    """Build a product measure from a config mapping.

    Accepts either ``{"kind": "product", "marginals": [...]}`` or a shorthand
    ``{"kind": "uniform" | "exponential" | "truncated_gaussian", ...}`` that is
    repeated over ``d`` dimensions.
    """
    spec = dict(spec)
    if spec.get("kind") == "product":
        return ProductMeasure([marginal_from_dict(m) for m in spec["marginals"]])
    dim = spec.pop("dim", d)
    if dim is None:
        raise StructuralError("measure shorthand needs a dimension")
    return ProductMeasure([marginal_from_dict(spec) for _ in range(int(dim))])
