"""Sequential design: pick each new evaluation point where the integrand's
posterior uncertainty, weighted by the measure density, is largest."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, StructuralError
from .gpbq import GaussianProcess, GpConfig, _kernel_samples, bq_from_state, fit_hyperparameters
from .measures import SampleSet
from .prior import BartPriorConfig
from .quadrature import posterior_summary, weighted_unique
from .sampler import ChainConfig, PosteriorDraws, run_chain

logger = logging.getLogger(__name__)

METHODS = ("bart_int", "gp_bq")


def _density(measure, C) -> np.ndarray:
    if measure is None or not hasattr(measure, "density") or not getattr(measure, "is_product", False):
        return np.ones(C.shape[0])
    return np.asarray(measure.density(C), dtype=float)


def acquisition_bart(draws: PosteriorDraws, c, measure=None) -> np.ndarray:
    """Across-draw sample variance of ``f(c) * pi(c)`` for each row of ``c``.

    Without a product measure (pool mode) the density factor is 1.
    """
    C = np.atleast_2d(np.asarray(c, dtype=float))
    if draws.m < 2:
        raise StructuralError("the acquisition needs at least two posterior draws")
    pred = draws.predict_draws(C)
    return np.var(pred, axis=0, ddof=1) * _density(measure, C) ** 2


def acquisition_gp(gp: GaussianProcess, c, measure=None) -> np.ndarray:
    """GP predictive variance at ``c`` times the squared density."""
    C = np.atleast_2d(np.asarray(c, dtype=float))
    return gp.predict(C)[1] * _density(measure, C) ** 2


@dataclass
class IterationRecord:
    n: int
    point: list
    index: int | None
    score: float
    mean: float
    variance: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class DesignState:
    """Design points, per-iteration selections and integral posteriors.

    ``posteriors[0]`` belongs to the initial design; ``posteriors[i]`` to the
    fit after the ``i``-th acquired point.
    """

    X: np.ndarray
    y: np.ndarray
    n_ini: int
    method: str
    history: list = field(default_factory=list)
    posteriors: list = field(default_factory=list)
    pool_indices: list = field(default_factory=list)
    stopped_early: bool = False

    @property
    def iteration(self) -> int:
        return self.X.shape[0]

    @property
    def final(self):
        return self.posteriors[-1]

    def trajectory(self) -> list[dict]:
        out = [{"n": self.n_ini, "mean": self.posteriors[0].mean,
                "variance": _variance(self.posteriors[0]), "point": None, "score": None}]
        for rec in self.history:
            out.append({"n": rec.n, "mean": rec.mean, "variance": rec.variance,
                        "point": rec.point, "score": rec.score})
        return out


def _variance(post) -> float:
    v = post.variance
    return None if v != v else float(v)


@dataclass(frozen=True)
class DesignStreams:
    """Independent random streams of one design run.

    ``init`` draws the initial design, ``candidates`` the candidate sets and
    ``noise`` observation noise; model fits are seeded by :meth:`fit_rng`
    from the design size alone, so a refit on the same data is reproducible.
    """

    init: np.random.Generator
    candidates: np.random.Generator
    noise: np.random.Generator
    model_key: int

    @classmethod
    def from_seed(cls, seed) -> DesignStreams:
        init_ss, cand_ss, model_ss, noise_ss = np.random.SeedSequence(seed).spawn(4)
        return cls(np.random.default_rng(init_ss), np.random.default_rng(cand_ss),
                   np.random.default_rng(noise_ss), int(model_ss.generate_state(1)[0]))

    def fit_rng(self, n: int) -> np.random.Generator:
        return np.random.default_rng([self.model_key, int(n)])

    def kernel_rng(self) -> np.random.Generator:
        return np.random.default_rng([self.model_key, 0])


class _BartModel:
    def __init__(self, prior: BartPriorConfig, chain: ChainConfig, streams: DesignStreams):
        self.prior, self.chain, self.streams = prior, chain, streams

    def fit(self, X, y):
        self.draws = run_chain(X, y, self.prior, self.chain, seed=self.streams.fit_rng(len(y)))
        return self

    def scores(self, C, measure):
        return acquisition_bart(self.draws, C, measure)

    def integral(self, target):
        return posterior_summary(self.draws, target)


class _GpModel:
    def __init__(self, cfg: GpConfig, kernel_points, refit: bool):
        self.cfg, self.refit = cfg, refit
        self.points, self.other = kernel_points
        self.gp = None

    def fit(self, X, y):
        cfg = self.cfg
        if cfg.lengthscale is not None:
            rho, noise = cfg.lengthscale, cfg.noise
        elif self.gp is not None and not self.refit:
            rho, noise = self.gp.rho, self.gp.noise
        else:
            rho, noise = fit_hyperparameters(X, y, cfg)
        self.gp = GaussianProcess(X, y, rho, noise, cfg.prior_mean, cfg.jitter_start, cfg.jitter_max)
        return self

    def update(self, x, y):
        self.gp.add_point(x, y)
        return self

    def scores(self, C, measure):
        return acquisition_gp(self.gp, C, measure)

    def integral(self, target):
        return bq_from_state(self.gp, self.points, self.other)


def refit_or_update(model, X, y, new_x, new_y):
    """Refresh ``model`` after ``(new_x, new_y)`` was appended to ``(X, y)``.

    BART reruns its chain on the augmented data. The GP extends its
    Cholesky factor when its hyperparameters are held fixed and refits
    them otherwise.
    """
    if isinstance(model, _GpModel) and (model.cfg.lengthscale is not None or not model.refit):
        return model.update(new_x, new_y)
    return model.fit(X, y)


def _is_pool(target) -> bool:
    return hasattr(target, "lookup") and hasattr(target, "X")


def run_sequential(f, target, method: str, n_ini: int, n: int, S: int | None = None,
                   prior: BartPriorConfig | None = None, chain: ChainConfig | None = None,
                   gp: GpConfig | None = None, seed=None, noise_sd: float = 0.0,
                   candidates=None, initial=None, gp_refit: bool = True) -> DesignState:
    """Run the sequential design loop until ``n`` points are in the design.

    ``target`` is a product measure (fresh i.i.d. candidate sets of size
    ``S``, default ``100*d``) or a pool exposing ``X`` and ``lookup`` (survey
    mode). In pool mode ``candidates`` are the surveyable row indices
    (default: every row not in the initial design) and ``f`` may be ``None``
    to read responses from the pool. ``initial`` optionally fixes the
    starting design (points, or pool indices in pool mode).
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    if n <= n_ini or n_ini < 1:
        raise ConfigError("need 1 <= n_ini < n")
    if S is not None and S < 1:
        raise ConfigError("S must be at least 1")
    streams = DesignStreams.from_seed(seed)
    init_rng, cand_rng, noise_rng = streams.init, streams.candidates, streams.noise

    pool = _is_pool(target)
    if pool:
        n_pool = target.X.shape[0]
        if initial is None:
            init_idx = init_rng.choice(n_pool, size=n_ini, replace=False)
        else:
            init_idx = np.asarray(initial, dtype=np.int64)
        remaining = np.setdiff1d(np.arange(n_pool) if candidates is None
                                 else np.asarray(candidates, dtype=np.int64), init_idx)
        X = target.X[init_idx].astype(float)
        evaluate = (lambda idx: target.lookup(idx)) if f is None else (lambda idx: f(target.X[idx]))
        y = np.asarray(evaluate(init_idx), dtype=float)
        pool_points = np.asarray(target.X, dtype=float)
        integral_target = (weighted_unique(pool_points) if method == "bart_int"
                           else SampleSet(pool_points))
        measure = None
        used = list(int(i) for i in init_idx)
    else:
        measure = target
        d = measure.dim
        S = 100 * d if S is None else S
        X = measure.sample(n_ini, init_rng).points if initial is None else np.atleast_2d(initial)
        y = np.asarray(f(X), dtype=float)
        if noise_sd:
            y = y + noise_sd * noise_rng.standard_normal(y.size)
        integral_target = measure
        used = []

    if method == "bart_int":
        model = _BartModel(prior or BartPriorConfig(), chain or ChainConfig(), streams)
    else:
        cfg = gp or GpConfig()
        kernel_points = _kernel_samples(integral_target, cfg.n_kernel_samples, streams.kernel_rng())
        model = _GpModel(cfg, kernel_points, gp_refit)

    model.fit(X, y)
    state = DesignState(X, y, n_ini, method, pool_indices=used)
    state.posteriors.append(model.integral(integral_target))

    while state.iteration < n:
        if pool:
            if remaining.size == 0:
                logger.warning("candidate pool exhausted after %d points; stopping", state.iteration)
                state.stopped_early = True
                break
            if S is None or S >= remaining.size:
                pos = np.arange(remaining.size)
            else:
                pos = np.sort(cand_rng.choice(remaining.size, size=S, replace=False))
            C = target.X[remaining[pos]].astype(float)
        else:
            C = measure.sample(S, cand_rng).points
        scores = model.scores(C, measure)
        best = int(np.argmax(scores))
        x_new = C[best:best + 1]
        if pool:
            idx = int(remaining[pos[best]])
            remaining = np.delete(remaining, pos[best])
            y_new = float(np.asarray(evaluate(np.array([idx])), dtype=float)[0])
            state.pool_indices.append(idx)
        else:
            idx = None
            y_new = float(np.asarray(f(x_new), dtype=float).ravel()[0])
            if noise_sd:
                y_new += noise_sd * noise_rng.standard_normal()
        state.X = np.vstack([state.X, x_new])
        state.y = np.append(state.y, y_new)
        refit_or_update(model, state.X, state.y, x_new, y_new)
        post = model.integral(integral_target)
        state.posteriors.append(post)
        state.history.append(IterationRecord(state.iteration, x_new.ravel().tolist(), idx,
                                             float(scores[best]), float(post.mean), _variance(post)))
    return state
