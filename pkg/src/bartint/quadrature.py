"""Integral posteriors from BART draws, plus the Monte Carlo baseline and
the error metric used by the benchmarks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import StructuralError
from .measures import SampleSet
from .trees import SumOfTrees


@dataclass
class IntegralPosterior:
    """Per-draw integrals ``s_j`` and their mean and unbiased variance.

    ``variance`` is ``nan`` when a single draw is available.
    """

    values: np.ndarray
    mode: str = "exact"
    n_samples: int | None = None
    seed: int | None = None
    method: str = "bart_int"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size == 0:
            raise StructuralError("no draws to summarise")

    @property
    def m(self) -> int:
        return self.values.size

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def variance(self) -> float:
        if self.m < 2:
            return math.nan
        return float(np.var(self.values, ddof=1))

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance) if self.m >= 2 else math.nan

    def interval(self, level: float = 0.95) -> tuple[float, float]:
        """Central credible interval from the empirical quantiles of the draws."""
        tail = 0.5 * (1.0 - level)
        lo, hi = np.quantile(self.values, [tail, 1.0 - tail])
        return float(lo), float(hi)

    def effective_sample_size(self) -> float:
        return effective_sample_size(self.values)

    def to_dict(self, include_values: bool = False) -> dict:
        var = self.variance
        out = {
            "method": self.method,
            "mean": self.mean,
            "variance": None if math.isnan(var) else var,
            "m": self.m,
            "mode": self.mode,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "ess": self.effective_sample_size(),
        }
        if include_values:
            out["values"] = self.values.tolist()
        return out


def effective_sample_size(x) -> float:
    """Autocorrelation-based ESS with Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=float)
    m = x.size
    if m < 4 or np.var(x) == 0:
        return float(m)
    xc = x - x.mean()
    nfft = 1 << (2 * m - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acf = np.fft.irfft(f * np.conj(f), nfft)[:m]
    acf /= acf[0]
    total = 0.0
    for k in range(1, m - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair < 0:
            break
        total += pair
    tau = -1.0 + 2.0 * (1.0 + total)
    return float(m / max(tau, 1e-12))


def integrate_draw_exact(ens: SumOfTrees, measure) -> float:
    """Exact integral of one ensemble against a product measure, via its leaf cells."""
    if not getattr(measure, "is_product", False):
        raise StructuralError("exact integration needs a product measure; use sampled mode")
    support = measure.support()
    total = 0.0
    for tree in ens.trees:
        for cell, beta in tree.leaf_cells(support):
            total += beta * measure.cell_probability(cell)
    return float(ens.rescale.inverse(total))


def integrate_draw_sampled(ens: SumOfTrees, samples) -> float:
    points = samples.points if isinstance(samples, SampleSet) else samples
    return float(np.mean(ens.predict(points)))


def posterior_summary(draws, target, method: str = "bart_int") -> IntegralPosterior:
    """Integral posterior of retained draws.

    ``target`` is either a product measure (exact cell probabilities), a
    :class:`SampleSet` or an array of points (sample-based estimate), or a
    non-product measure exposing ``as_sample_set``.
    """
    if getattr(target, "is_product", False):
        return IntegralPosterior(draws.integrate_exact(target), mode="exact", method=method)
    if hasattr(target, "as_sample_set"):
        target = target.as_sample_set()
    if isinstance(target, SampleSet):
        if target.weights is not None:
            values = _weighted_integrals(draws, target.points, target.weights)
        else:
            values = draws.integrate_sampled(target.points)
        return IntegralPosterior(values, mode="sampled", n_samples=target.size,
                                 seed=target.seed, method=method)
    pts = np.atleast_2d(np.asarray(target, dtype=float))
    return IntegralPosterior(draws.integrate_sampled(pts), mode="sampled",
                             n_samples=pts.shape[0], method=method)


def _weighted_integrals(draws, points, weights, chunk: int = 4096) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (points.shape[0],) or np.any(w < 0) or not w.sum() > 0:
        raise StructuralError("weights must be non-negative, one per point, with positive sum")
    w = w / w.sum()
    out = np.zeros(draws.m)
    for start in range(0, points.shape[0], chunk):
        out += draws.predict_internal(points[start:start + chunk]) @ w[start:start + chunk]
    return draws.rescale.inverse(out)


def weighted_unique(points) -> SampleSet:
    """Collapse repeated rows into a weighted sample set with the same empirical measure."""
    uniq, counts = np.unique(np.atleast_2d(points), axis=0, return_counts=True)
    return SampleSet(uniq, weights=counts / counts.sum())


@dataclass(frozen=True)
class MonteCarloEstimate:
    estimate: float
    std_error: float
    n: int


def mc_integrate(f, measure, n: int, seed=None) -> MonteCarloEstimate:
    """Plain Monte Carlo: sample mean of ``f`` over ``n`` i.i.d. draws."""
    if n < 2:
        raise ValueError("need at least two samples")
    pts = measure.sample(n, seed).points
    vals = np.asarray(f(pts), dtype=float)
    return MonteCarloEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n)), n)


def mape(estimates, truth: float) -> float:
    """Mean absolute percentage error of repeated estimates (as a fraction)."""
    if truth == 0:
        raise ValueError("MAPE is undefined for a zero true value")
    est = np.asarray(estimates, dtype=float)
    return float(np.mean(np.abs(truth - est)) / abs(truth))
