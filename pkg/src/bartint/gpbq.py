"""Gaussian-process Bayesian quadrature with a Matern-3/2 kernel.

Kernel means are estimated by Monte Carlo from the integration measure, so
any measure that can be sampled is supported.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist, pdist

from .exceptions import NumericalError, StructuralError
from .measures import SampleSet

logger = logging.getLogger(__name__)

_SQRT3 = math.sqrt(3.0)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_CHUNK_ENTRIES = 4_000_000


def matern32(x, y, rho: float) -> np.ndarray:
    """Matern-3/2 kernel matrix between the rows of ``x`` and ``y``."""
    if rho <= 0:
        raise ValueError("lengthscale must be positive")
    r = cdist(np.atleast_2d(x), np.atleast_2d(y))
    s = _SQRT3 * r / rho
    return (1.0 + s) * np.exp(-s)


def _matern_from_dist(r, rho):
    s = _SQRT3 * r / rho
    return (1.0 + s) * np.exp(-s)


@dataclass(frozen=True)
class GpConfig:
    """GP prior and fitting options.

    ``noise`` is the observation noise variance. With ``lengthscale=None``
    the lengthscale is fitted by maximum marginal likelihood; with
    ``fit_noise=True`` the noise variance is fitted jointly.
    """

    lengthscale: float | None = None
    noise: float = 1e-6
    fit_noise: bool = False
    prior_mean: float = 0.0
    n_kernel_samples: int = 1_000_000
    grid_size: int = 31
    golden_iters: int = 40
    jitter_start: float = 1e-10
    jitter_max: float = 1e-4


def stable_cholesky(A, jitter_start: float = 1e-10, jitter_max: float = 1e-4):
    """Lower Cholesky factor of ``A + jitter*I``, escalating jitter tenfold on failure."""
    n = A.shape[0]
    jitter = jitter_start
    while jitter <= jitter_max * (1 + 1e-9):
        try:
            return cholesky(A + jitter * np.eye(n), lower=True), jitter
        except LinAlgError:
            jitter *= 10.0
    raise NumericalError("Cholesky factorisation failed at maximum jitter")


def log_marginal_likelihood(X, y, rho: float, noise: float, mean: float = 0.0,
                            jitter_start: float = 1e-10, jitter_max: float = 1e-4,
                            dist=None) -> float:
    X = np.atleast_2d(X)
    r = cdist(X, X) if dist is None else dist
    K = _matern_from_dist(r, rho) + noise * np.eye(X.shape[0])
    L, _ = stable_cholesky(K, jitter_start, jitter_max)
    resid = np.asarray(y, dtype=float) - mean
    a = solve_triangular(L, resid, lower=True)
    n = resid.size
    return float(-0.5 * a @ a - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2 * math.pi))


def _golden_max(fun, lo, hi, iters):
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    e = a + _GOLDEN * (b - a)
    fc, fe = fun(c), fun(e)
    for _ in range(iters):
        if fc >= fe:
            b, e, fe = e, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, e, fe
            e = a + _GOLDEN * (b - a)
            fe = fun(e)
    return (c, fc) if fc >= fe else (e, fe)


def _fit_rho(X, y, noise, cfg: GpConfig, dist, scale):
    def lml(log_rho):
        try:
            return log_marginal_likelihood(X, y, math.exp(log_rho), noise, cfg.prior_mean,
                                           cfg.jitter_start, cfg.jitter_max, dist)
        except NumericalError:
            return -math.inf

    grid = np.log(scale) + np.linspace(math.log(1e-2), math.log(1e1), cfg.grid_size)
    vals = np.array([lml(g) for g in grid])
    if not np.isfinite(vals).any():
        raise NumericalError("marginal likelihood is not finite anywhere on the grid")
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    best, fbest = _golden_max(lml, lo, hi, cfg.golden_iters)
    if vals[i] > fbest:
        best, fbest = grid[i], vals[i]
    return math.exp(best), fbest


def fit_lengthscale(X, y, cfg: GpConfig = GpConfig()) -> float:
    """Maximum-marginal-likelihood lengthscale at the configured noise.

    A log-spaced grid over ``[1e-2, 1e1]`` times the median pairwise distance
    is refined by golden-section search around the best grid point.
    """
    return fit_hyperparameters(X, y, replace(cfg, fit_noise=False))[0]


def fit_hyperparameters(X, y, cfg: GpConfig = GpConfig()) -> tuple[float, float]:
    """Lengthscale and noise variance; the noise is only searched when ``cfg.fit_noise``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] < 2:
        raise StructuralError("need at least two points to fit a lengthscale")
    scale = float(np.median(pdist(X)))
    if not scale > 0:
        raise NumericalError("design points coincide; the Gram matrix is degenerate")
    dist = cdist(X, X)
    if not cfg.fit_noise:
        rho, _ = _fit_rho(X, y, cfg.noise, cfg, dist, scale)
        return rho, cfg.noise
    best = (-math.inf, None, None)
    for noise in np.logspace(-6, 0, 13):
        rho, val = _fit_rho(X, y, noise, cfg, dist, scale)
        if val > best[0]:
            best = (val, rho, float(noise))
    return best[1], best[2]


class GaussianProcess:
    """Exact GP regression state with an incrementally extendable Cholesky factor."""

    def __init__(self, X, y, rho: float, noise: float = 1e-6, mean: float = 0.0,
                 jitter_start: float = 1e-10, jitter_max: float = 1e-4):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.y = np.asarray(y, dtype=float).ravel()
        self.rho, self.noise, self.mean = float(rho), float(noise), float(mean)
        K = matern32(self.X, self.X, self.rho) + self.noise * np.eye(self.n)
        self.L, self.jitter = stable_cholesky(K, jitter_start, jitter_max)
        self._solve()

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def _solve(self):
        self.alpha = cho_solve((self.L, True), self.y - self.mean)

    def add_point(self, x, y) -> None:
        """Extend the Cholesky factor by one row instead of refactorising."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k = matern32(self.X, x, self.rho).ravel()
        c = solve_triangular(self.L, k, lower=True)
        diag = 1.0 + self.noise + self.jitter - c @ c
        if not diag > 0:
            raise NumericalError("rank-one update lost positive definiteness")
        n = self.n
        L = np.zeros((n + 1, n + 1))
        L[:n, :n] = self.L
        L[n, :n] = c
        L[n, n] = math.sqrt(diag)
        self.L = L
        self.X = np.vstack([self.X, x])
        self.y = np.append(self.y, float(y))
        self._solve()

    def predict(self, Xs) -> tuple[np.ndarray, np.ndarray]:
        Ks = matern32(Xs, self.X, self.rho)
        mean = self.mean + Ks @ self.alpha
        v = solve_triangular(self.L, Ks.T, lower=True)
        var = np.maximum(1.0 - np.sum(v * v, axis=0), 0.0)
        return mean, var

    def quadrature_weights(self, z) -> np.ndarray:
        return cho_solve((self.L, True), z)


@dataclass
class BqPosterior:
    mean: float
    variance: float
    lengthscale: float
    noise: float
    kernel_mean_se: np.ndarray = field(repr=False)
    double_integral: float = math.nan
    n_samples: int = 0
    method: str = "gp_bq"

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    def interval(self, level: float = 0.95) -> tuple[float, float]:
        from scipy.stats import norm
        half = norm.ppf(0.5 + level / 2) * self.sd
        return self.mean - half, self.mean + half

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "mean": self.mean,
            "variance": self.variance,
            "lengthscale": self.lengthscale,
            "noise": self.noise,
            "n_samples": self.n_samples,
            "kernel_mean_se_max": float(np.max(self.kernel_mean_se)) if self.kernel_mean_se.size else 0.0,
        }


def kernel_means(X, points, rho: float):
    """Monte Carlo kernel means ``mean_i k(p_i, x)`` and their standard errors."""
    X = np.atleast_2d(X)
    l = points.shape[0]
    s1 = np.zeros(X.shape[0])
    s2 = np.zeros(X.shape[0])
    rows = max(1, _CHUNK_ENTRIES // X.shape[0])
    for start in range(0, l, rows):
        k = matern32(points[start:start + rows], X, rho)
        s1 += k.sum(axis=0)
        s2 += (k * k).sum(axis=0)
    z = s1 / l
    var = np.maximum(s2 / l - z * z, 0.0) * l / max(l - 1, 1)
    return z, np.sqrt(var / l)


def _double_integral(points, other, rho):
    total = 0.0
    rows = _CHUNK_ENTRIES
    for start in range(0, points.shape[0], rows):
        a = points[start:start + rows]
        b = other[start:start + rows]
        r = np.sqrt(np.sum((a - b) ** 2, axis=1))
        total += _matern_from_dist(r, rho).sum()
    return total / points.shape[0]


def _kernel_samples(target, l, seed):
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if isinstance(target, SampleSet):
        pts = target.points
        return pts, pts[rng.permutation(pts.shape[0])]
    if hasattr(target, "sample"):
        return target.sample(l, rng).points, target.sample(l, rng).points
    pts = np.atleast_2d(np.asarray(target, dtype=float))
    return pts, pts[rng.permutation(pts.shape[0])]


def bq_from_state(gp: GaussianProcess, points, other) -> BqPosterior:
    z, z_se = kernel_means(gp.X, points, gp.rho)
    kk = _double_integral(points, other, gp.rho)
    w = gp.quadrature_weights(z)
    mean = gp.mean + float(z @ cho_solve((gp.L, True), gp.y - gp.mean))
    var = kk - float(z @ w)
    if var < -1e-10:
        logger.warning("negative BQ variance %.3g from kernel-mean error; clamped to 0", var)
    return BqPosterior(mean, max(var, 0.0), gp.rho, gp.noise, z_se, kk, points.shape[0])


def bq_posterior(X, y, cfg: GpConfig, measure, seed=None) -> BqPosterior:
    """Gaussian posterior on the integral of ``f`` against ``measure``.

    ``measure`` may be anything with ``sample(l, seed)``, a
    :class:`SampleSet`, or an array of points standing in for the measure.
    The same kernel-mean sample set is shared across design points.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if cfg.lengthscale is None:
        rho, noise = fit_hyperparameters(X, y, cfg)
    else:
        rho, noise = cfg.lengthscale, cfg.noise
    gp = GaussianProcess(X, y, rho, noise, cfg.prior_mean, cfg.jitter_start, cfg.jitter_max)
    points, other = _kernel_samples(measure, cfg.n_kernel_samples, seed)
    return bq_from_state(gp, points, other)


def gp_predictive(X, y, cfg: GpConfig, x_star) -> tuple[np.ndarray, np.ndarray]:
    """Posterior predictive mean and variance of the latent function at ``x_star``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if cfg.lengthscale is None:
        rho, noise = fit_hyperparameters(X, y, cfg)
    else:
        rho, noise = cfg.lengthscale, cfg.noise
    gp = GaussianProcess(X, y, rho, noise, cfg.prior_mean, cfg.jitter_start, cfg.jitter_max)
    return gp.predict(np.atleast_2d(x_star))
