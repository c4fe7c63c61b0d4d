"""Bayesian backfitting MCMC for sum-of-trees models.

Each sweep updates the trees in turn: a Metropolis-Hastings move on the
topology against the leaf-marginalised likelihood of the partial residuals,
then a conjugate draw of the leaf values; the sweep ends with a conjugate
draw of the noise scale. The compiled loops live in :mod:`bartint._kernels`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .exceptions import ConfigError, StructuralError
from .prior import BartPriorConfig, calibrate_sigma_prior, make_cutpoints
from .prior import _cut_indices
from .trees import LEAF, DecisionTree, RescaleTransform, SumOfTrees

MOVES = ("grow", "prune", "change", "swap")
DEFAULT_CAPACITY = 256


@dataclass(frozen=True)
class ChainConfig:
    """Burn-in, retention and proposal settings of one chain.

    ``n_keep`` draws are retained, one every ``thin`` sweeps after
    ``n_burn`` burn-in sweeps.
    """

    n_burn: int = 1000
    n_keep: int = 1000
    thin: int = 5
    move_probs: tuple = (0.25, 0.25, 0.40, 0.10)
    capacity: int = DEFAULT_CAPACITY

    def __post_init__(self):
        probs = np.asarray(self.move_probs, dtype=float)
        if probs.shape != (4,) or np.any(probs < 0) or not math.isclose(probs.sum(), 1.0):
            raise ConfigError("move_probs must be four non-negative numbers summing to 1")
        if self.n_burn < 0 or self.n_keep < 1 or self.thin < 1:
            raise ConfigError("need n_burn >= 0, n_keep >= 1 and thin >= 1")
        object.__setattr__(self, "move_probs", tuple(float(p) for p in probs))

    @property
    def move_cdf(self) -> np.ndarray:
        return np.cumsum(self.move_probs)


def bin_data(X, cutpoints) -> np.ndarray:
    """Number of cutpoints at or below each value, per column."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    xb = np.empty(X.shape, dtype=np.int64)
    for k, cuts in enumerate(cutpoints):
        xb[:, k] = np.searchsorted(cuts, X[:, k], side="right")
    return xb


def _pad_cuts(cutpoints):
    ncut = np.array([len(c) for c in cutpoints], dtype=np.int64)
    table = np.full((len(cutpoints), max(1, ncut.max())), np.nan)
    for k, cuts in enumerate(cutpoints):
        table[k, :len(cuts)] = cuts
    return table, ncut


def leaf_log_marginal(n, sum_r, sum_r2, sigma, sigma_beta):
    """Log of ``int prod_i N(r_i; b, sigma^2) N(b; 0, sigma_beta^2) db`` per leaf."""
    n = np.asarray(n, dtype=float)
    sum_r = np.asarray(sum_r, dtype=float)
    sum_r2 = np.asarray(sum_r2, dtype=float)
    if np.any(n < 1):
        raise StructuralError("leaf with no observations")
    if sigma <= 0 or sigma_beta < 0:
        raise ValueError("need sigma > 0 and sigma_beta >= 0")
    s2, b2 = sigma**2, sigma_beta**2
    denom = s2 + n * b2
    return (-0.5 * n * np.log(2 * np.pi * s2) + 0.5 * np.log(s2 / denom)
            + b2 * sum_r**2 / (2 * s2 * denom) - sum_r2 / (2 * s2))


def draw_sigma(residuals, nu: float, lam: float, rng: np.random.Generator) -> float:
    """Conjugate draw ``sigma^2 ~ (nu*lam + sum r^2) / chi2_{nu+n}``."""
    r = np.asarray(residuals, dtype=float)
    return math.sqrt((nu * lam + float(r @ r)) / rng.chisquare(nu + r.size))


class _TreeArrays:
    """A single tree laid out the way the compiled kernels expect."""

    def __init__(self, tree: DecisionTree, cutpoints, capacity: int):
        nn = tree.n_nodes
        cap = max(capacity, nn + 2)
        self.nn = nn
        self.var = np.full(cap, -1, dtype=np.int64)
        self.cut = np.full(cap, -1, dtype=np.int64)
        self.left = np.full(cap, -1, dtype=np.int64)
        self.right = np.full(cap, -1, dtype=np.int64)
        self.parent = np.full(cap, -1, dtype=np.int64)
        self.depth = np.zeros(cap, dtype=np.int64)
        self.value = np.zeros(cap)
        self.var[:nn] = tree.var
        self.cut[:nn] = _cut_indices(tree, cutpoints)
        self.cut[:nn][tree.var == LEAF] = -1
        self.left[:nn] = tree.left
        self.right[:nn] = tree.right
        self.parent[:nn] = tree.parents()
        self.depth[:nn] = tree.depths()
        self.value[:nn] = tree.value

    def to_tree(self, cutpoints) -> DecisionTree:
        nn = self.nn
        var = self.var[:nn].copy()
        cut = np.where(var >= 0, self.cut[:nn], -1)
        thr = np.array([cutpoints[k][c] if k >= 0 else np.nan for k, c in zip(var, cut)])
        return DecisionTree(var, thr, self.left[:nn].copy(), self.right[:nn].copy(),
                            self.value[:nn].copy(), cut)


def _mh_args(arrs, ws):
    return (arrs.var, arrs.cut, arrs.left, arrs.right, arrs.parent, arrs.depth, arrs.value)


def _ws_args(ws):
    return (ws.pvar, ws.pcut, ws.pleft, ws.pright, ws.pparent, ws.pdepth, ws.pvalue)


def _prior_args(prior: BartPriorConfig):
    max_depth = -1 if prior.max_depth is None else int(prior.max_depth)
    return float(prior.alpha), float(prior.beta), max_depth, int(prior.min_leaf_obs)


def mh_tree_update(tree: DecisionTree, residuals, X, cutpoints, sigma: float,
                   prior: BartPriorConfig, rng: np.random.Generator,
                   move_probs=(0.25, 0.25, 0.40, 0.10)):
    """One Metropolis-Hastings topology update of ``tree`` given partial residuals.

    Leaf values are integrated out for the acceptance ratio and left
    untouched (new leaves get 0); call :func:`draw_leaf_values` afterwards.

    Returns
    -------
    (DecisionTree, bool, str)
        The (possibly unchanged) tree, whether the proposal was accepted and
        the name of the proposed move.
    """
    resid = np.ascontiguousarray(residuals, dtype=float)
    xb = bin_data(X, cutpoints)
    _, ncut = _pad_cuts(cutpoints)
    arrs = _TreeArrays(tree, cutpoints, DEFAULT_CAPACITY)
    ws = K.Workspace(arrs.var.size, resid.size, ncut.size)
    leaf_of = np.array([K.route(arrs.var, arrs.cut, arrs.left, arrs.right, xb, i)
                        for i in range(resid.size)], dtype=np.int64)
    cdf = np.cumsum(ChainConfig(move_probs=move_probs).move_probs)
    alpha, beta, max_depth, min_leaf = _prior_args(prior)
    nn, move, acc = K.mh_step(
        *_mh_args(arrs, ws), arrs.nn, *_ws_args(ws), xb, ncut, resid, leaf_of, ws.pleaf_of,
        float(sigma) ** 2, prior.leaf_sd**2, alpha, beta, max_depth, min_leaf, cdf,
        ws.lo, ws.hi, ws.plo, ws.phi, ws.stack, ws.buf, ws.cnt, ws.sr, ws.pcnt, ws.psr, rng)
    arrs.nn = nn
    return arrs.to_tree(cutpoints), bool(acc), MOVES[move]


def draw_leaf_values(tree: DecisionTree, residuals, X, sigma: float, sigma_beta: float,
                     rng: np.random.Generator) -> DecisionTree:
    """Conjugate Gaussian draw of every leaf value given the residuals routed to it."""
    resid = np.asarray(residuals, dtype=float)
    leaf = tree.apply(X)
    out = tree.copy()
    s2, b2 = sigma**2, sigma_beta**2
    for i in tree.leaves:
        mask = leaf == i
        n, s = mask.sum(), resid[mask].sum()
        denom = s2 + n * b2
        out.value[i] = b2 * s / denom + math.sqrt(s2 * b2 / denom) * rng.standard_normal()
    out.value[tree.var != LEAF] = 0.0
    return out


def topology_code(tree: DecisionTree, cutpoints) -> int:
    """Integer identifying a tree's structure (split variables and cutpoints)."""
    base, stride = _code_base(cutpoints)
    cut = _cut_indices(tree, cutpoints)
    return int(K.topology_code(tree.var, cut, tree.left, tree.right, base, stride))


def _code_base(cutpoints):
    stride = max(1, max(len(c) for c in cutpoints))
    return 1 + len(cutpoints) * stride, stride


def sample_topologies(tree: DecisionTree, residuals, X, cutpoints, sigma: float,
                      prior: BartPriorConfig, n_steps: int, rng: np.random.Generator,
                      move_probs=(0.25, 0.25, 0.40, 0.10)) -> np.ndarray:
    """Run ``n_steps`` topology updates with fixed residuals and sigma.

    Returns the :func:`topology_code` of the tree after every step, which is
    what an enumeration check of the stationary distribution needs.
    """
    resid = np.ascontiguousarray(residuals, dtype=float)
    xb = bin_data(X, cutpoints)
    _, ncut = _pad_cuts(cutpoints)
    arrs = _TreeArrays(tree, cutpoints, DEFAULT_CAPACITY)
    ws = K.Workspace(arrs.var.size, resid.size, ncut.size)
    leaf_of = np.array([K.route(arrs.var, arrs.cut, arrs.left, arrs.right, xb, i)
                        for i in range(resid.size)], dtype=np.int64)
    cdf = np.cumsum(ChainConfig(move_probs=move_probs).move_probs)
    alpha, beta, max_depth, min_leaf = _prior_args(prior)
    base, stride = _code_base(cutpoints)
    codes, _ = K.mh_topology_chain(
        int(n_steps), *_mh_args(arrs, ws), arrs.nn, xb, ncut, resid, leaf_of,
        float(sigma) ** 2, prior.leaf_sd**2, alpha, beta, max_depth, min_leaf, cdf, base, stride,
        *_ws_args(ws), ws.pleaf_of, ws.lo, ws.hi, ws.plo, ws.phi, ws.stack, ws.buf,
        ws.cnt, ws.sr, ws.pcnt, ws.psr, rng)
    return codes


@dataclass
class PosteriorDraws:
    """Retained sum-of-trees draws stored as one flat node table.

    Tree ``t`` of draw ``j`` occupies nodes ``start[j, t] : start[j, t] +
    size[j, t]``; child indices are local to the tree. Leaf values are on
    the rescaled response scale and ``rescale`` maps them back.
    """

    var: np.ndarray
    cut: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    start: np.ndarray
    size: np.ndarray
    sigma: np.ndarray
    rescale: RescaleTransform
    cutpoints: list
    proposed: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=np.int64))
    accepted: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=np.int64))
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.start.shape[0]

    @property
    def n_trees(self) -> int:
        return self.start.shape[1]

    @property
    def dim(self) -> int:
        return len(self.cutpoints)

    def tree(self, j: int, t: int) -> DecisionTree:
        o, s = self.start[j, t], self.size[j, t]
        sl = slice(o, o + s)
        return DecisionTree(self.var[sl], self.threshold[sl], self.left[sl], self.right[sl],
                            self.value[sl], self.cut[sl])

    def ensemble(self, j: int) -> SumOfTrees:
        return SumOfTrees([self.tree(j, t) for t in range(self.n_trees)],
                          float(self.sigma[j]), self.rescale)

    def n_leaves(self) -> np.ndarray:
        """Leaf count of every tree, shape ``(m, n_trees)``."""
        is_leaf = (self.var == LEAF).astype(np.int64)
        csum = np.concatenate([[0], np.cumsum(is_leaf)])
        return csum[self.start + self.size] - csum[self.start]

    def predict_internal(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        out = np.empty((self.m, X.shape[0]))
        K.predict_flat(self.var, self.threshold, self.left, self.right, self.value,
                       self.start, X, out)
        return out

    def predict_draws(self, X) -> np.ndarray:
        """Per-draw predictions on the original scale, shape ``(m, len(X))``."""
        return self.rescale.inverse(self.predict_internal(X))

    def integrate_exact(self, measure) -> np.ndarray:
        if not getattr(measure, "is_product", False):
            raise StructuralError("exact integration needs a product measure; use sampled mode")
        if measure.dim != self.dim:
            raise StructuralError("measure dimension does not match the data")
        _, ncut = _pad_cuts(self.cutpoints)
        grid = measure.cdf_grid(self.cutpoints)
        out = np.empty(self.m)
        K.integrate_exact_flat(self.var, self.cut, self.left, self.right, self.value,
                               self.start, self.size, grid, ncut, out)
        return self.rescale.inverse(out)

    def integrate_sampled(self, points) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
        if X.shape[1] != self.dim:
            raise StructuralError("sample dimension does not match the data")
        out = np.empty(self.m)
        K.integrate_sampled_flat(self.var, self.threshold, self.left, self.right, self.value,
                                 self.start, X, out)
        return self.rescale.inverse(out)

    def acceptance_rates(self) -> dict:
        with np.errstate(invalid="ignore", divide="ignore"):
            rates = self.accepted / self.proposed
        return {name: float(r) for name, r in zip(MOVES, rates)}

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma.tolist(),
            "rescale": self.rescale.to_dict(),
            "acceptance": self.acceptance_rates(),
            "meta": self.meta,
            "draws": [self.ensemble(j).to_dict() for j in range(self.m)],
        }


def resolve_sigma_hat(prior: BartPriorConfig, z, rescale: RescaleTransform) -> float:
    """Noise-scale anchor on the rescaled scale."""
    if prior.sigma_hat is not None:
        return float(prior.sigma_hat)
    if z.size >= 2:
        sd = float(np.std(z, ddof=1))
        if sd > 0:
            return sd
    return 1.0


def run_chain(X, y, prior: BartPriorConfig | None = None, chain: ChainConfig | None = None,
              seed=None, cutpoints=None) -> PosteriorDraws:
    """Fit the sum-of-trees model to ``(X, y)`` and return the retained draws.

    All trees start as single leaves with value 0 and sigma starts at its
    calibration anchor. Deterministic for a fixed ``seed``.
    """
    prior = prior or BartPriorConfig()
    chain = chain or ChainConfig()
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    if y.size != n:
        raise StructuralError("X and y have different numbers of rows")
    if n < max(1, prior.min_leaf_obs):
        raise StructuralError(f"need at least {prior.min_leaf_obs} observations")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    rescale = RescaleTransform.fit(y)
    z = rescale.transform(y)
    cutpoints = make_cutpoints(X) if cutpoints is None else [np.asarray(c, float) for c in cutpoints]
    xb = bin_data(X, cutpoints)
    cut_table, ncut = _pad_cuts(cutpoints)
    sigma_hat = resolve_sigma_hat(prior, z, rescale)
    lam = calibrate_sigma_prior(prior.nu, prior.q, sigma_hat)
    sb2 = prior.leaf_sd**2
    alpha, beta, max_depth, min_leaf = _prior_args(prior)

    T, cap = prior.n_trees, chain.capacity
    var = np.full((T, cap), -1, dtype=np.int64)
    cut = np.full((T, cap), -1, dtype=np.int64)
    left = np.full((T, cap), -1, dtype=np.int64)
    right = np.full((T, cap), -1, dtype=np.int64)
    parent = np.full((T, cap), -1, dtype=np.int64)
    depth = np.zeros((T, cap), dtype=np.int64)
    value = np.zeros((T, cap))
    nnodes = np.ones(T, dtype=np.int64)
    leaf_of = np.zeros((T, n), dtype=np.int64)
    ws = K.Workspace(cap, n, d)
    proposed = np.zeros(4, dtype=np.int64)
    accepted = np.zeros(4, dtype=np.int64)
    move_cdf = chain.move_cdf

    def sweeps(count, sigma):
        return K.run_sweeps(
            count, var, cut, left, right, parent, depth, value, nnodes, leaf_of,
            xb, ncut, z, sigma, sb2, alpha, beta, max_depth, min_leaf, move_cdf,
            float(prior.nu), lam, True,
            ws.pvar, ws.pcut, ws.pleft, ws.pright, ws.pparent, ws.pdepth, ws.pvalue,
            ws.pleaf_of, ws.lo, ws.hi, ws.plo, ws.phi, ws.stack, ws.buf, ws.cnt, ws.sr,
            ws.pcnt, ws.psr, ws.resid, ws.fit, proposed, accepted, rng)

    sigma = sweeps(chain.n_burn, sigma_hat) if chain.n_burn else sigma_hat
    cols = np.arange(cap)
    parts = {k: [] for k in ("var", "cut", "left", "right", "value")}
    sizes = np.empty((chain.n_keep, T), dtype=np.int64)
    sigmas = np.empty(chain.n_keep)
    for j in range(chain.n_keep):
        sigma = sweeps(chain.thin, sigma)
        width = int(nnodes.max())
        mask = cols[None, :width] < nnodes[:, None]
        parts["var"].append(var[:, :width][mask])
        parts["cut"].append(cut[:, :width][mask])
        parts["left"].append(left[:, :width][mask])
        parts["right"].append(right[:, :width][mask])
        parts["value"].append(value[:, :width][mask])
        sizes[j] = nnodes
        sigmas[j] = sigma

    flat = {k: np.concatenate(v) for k, v in parts.items()}
    starts = np.concatenate([[0], np.cumsum(sizes.ravel())[:-1]]).reshape(sizes.shape)
    internal = flat["var"] >= 0
    threshold = np.full(flat["var"].size, np.nan)
    threshold[internal] = cut_table[flat["var"][internal], flat["cut"][internal]]
    flat["cut"][~internal] = -1
    return PosteriorDraws(
        var=flat["var"], cut=flat["cut"], threshold=threshold, left=flat["left"],
        right=flat["right"], value=flat["value"], start=starts, size=sizes,
        sigma=sigmas * rescale.width, rescale=rescale, cutpoints=cutpoints,
        proposed=proposed, accepted=accepted,
        meta={"sigma_hat": sigma_hat * rescale.width, "lambda": lam,
              "node_selection": "uniform over eligible nodes",
              "n_burn": chain.n_burn, "n_keep": chain.n_keep, "thin": chain.thin})
