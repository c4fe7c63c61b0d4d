"""The BART prior: tree-generating process, leaf-value prior and the
inverse chi-square prior on the noise scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .exceptions import ConfigError, NumericalError, StructuralError
from .trees import LEAF, DecisionTree


@dataclass(frozen=True)
class BartPriorConfig:
    """Hyperparameters of the sum-of-trees prior.

    ``sigma_hat`` is the calibration anchor for the noise prior, given on
    the rescaled response scale (responses mapped onto [-0.5, 0.5]) so that
    one value suits integrands of any amplitude; when ``None`` the sample
    standard deviation of the rescaled responses is used. ``sigma_beta`` defaults to
    ``0.25 / sqrt(n_trees)``. ``max_depth`` (``None`` for unbounded) makes
    nodes at that depth terminal with probability one.
    """

    n_trees: int = 200
    alpha: float = 0.95
    beta: float = 2.0
    sigma_beta: float | None = None
    nu: float = 3.0
    q: float = 0.90
    sigma_hat: float | None = None
    min_leaf_obs: int = 1
    max_depth: int | None = None

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be at least 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.beta < 0:
            raise ConfigError("beta must be non-negative")
        if not 0 < self.q < 1:
            raise ConfigError("q must lie in (0, 1)")
        if self.nu <= 0:
            raise ConfigError("nu must be positive")
        if self.min_leaf_obs < 1:
            raise ConfigError("min_leaf_obs must be at least 1")

    @property
    def leaf_sd(self) -> float:
        if self.sigma_beta is not None:
            return float(self.sigma_beta)
        return 0.25 / math.sqrt(self.n_trees)


def split_probability(depth: int, alpha: float = 0.95, beta: float = 2.0,
                      max_depth: int | None = None) -> float:
    """Prior probability that a node at ``depth`` is internal."""
    if depth < 0:
        raise ValueError("depth must be non-negative")
    if max_depth is not None and depth >= max_depth:
        return 0.0
    return alpha * (1.0 + depth) ** (-beta)


def calibrate_sigma_prior(nu: float, q: float, sigma_hat: float) -> float:
    """Scale ``lambda`` such that ``P(sigma < sigma_hat) = q`` under
    ``sigma^2 ~ nu * lambda / chi2_nu``."""
    if nu <= 0 or not 0 < q < 1 or sigma_hat <= 0:
        raise ValueError("need nu > 0, 0 < q < 1 and sigma_hat > 0")
    quant = chi2.ppf(1.0 - q, nu)
    lam = sigma_hat**2 * quant / nu
    if not (math.isfinite(lam) and lam > 0):
        raise NumericalError("chi-square quantile did not converge")
    return float(lam)


def make_cutpoints(X) -> list[np.ndarray]:
    """Midpoints between consecutive distinct observed values of each column."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cuts = []
    for k in range(X.shape[1]):
        u = np.unique(X[:, k])
        cuts.append(0.5 * (u[1:] + u[:-1]))
    return cuts


def _cut_indices(tree: DecisionTree, cutpoints) -> np.ndarray:
    cut = tree.cut.copy()
    for i in np.flatnonzero(tree.var != LEAF):
        if cut[i] >= 0:
            continue
        grid = cutpoints[tree.var[i]]
        j = int(np.searchsorted(grid, tree.threshold[i]))
        if j >= grid.size or grid[j] != tree.threshold[i]:
            raise StructuralError(f"node {i} threshold is not on the cutpoint grid")
        cut[i] = j
    return cut


def sample_tree_prior(cfg: BartPriorConfig, cutpoints, rng: np.random.Generator) -> DecisionTree:
    """Draw one tree (structure and leaf values) from the prior."""
    ncut = np.array([len(c) for c in cutpoints])
    d = ncut.size
    var, thr, cut, left, right, value = [], [], [], [], [], []

    def grow(depth, lo, hi):
        idx = len(var)
        var.append(LEAF), thr.append(np.nan), cut.append(-1)
        left.append(-1), right.append(-1), value.append(0.0)
        eligible = np.flatnonzero(hi > lo)
        ps = split_probability(depth, cfg.alpha, cfg.beta, cfg.max_depth)
        if eligible.size and rng.random() < ps:
            k = int(eligible[int(rng.random() * eligible.size)])
            c = int(lo[k] + int(rng.random() * (hi[k] - lo[k])))
            var[idx], cut[idx], thr[idx] = k, c, float(cutpoints[k][c])
            lhi, rlo = hi.copy(), lo.copy()
            lhi[k] = c
            rlo[k] = c + 1
            left[idx] = grow(depth + 1, lo, lhi)
            right[idx] = grow(depth + 1, rlo, hi)
        else:
            value[idx] = cfg.leaf_sd * rng.standard_normal()
        return idx

    grow(0, np.zeros(d, dtype=int), ncut.copy())
    return DecisionTree(var, thr, left, right, value, cut)


def log_prior_tree(cfg: BartPriorConfig, tree: DecisionTree, cutpoints) -> float:
    """Log prior probability of a tree structure (leaf values excluded)."""
    ncut = np.array([len(c) for c in cutpoints])
    if np.any(tree.var >= ncut.size):
        raise StructuralError("split variable outside the cutpoint grid")
    cut = _cut_indices(tree, cutpoints)
    total = 0.0
    stack = [(0, 0, np.zeros(ncut.size, dtype=int), ncut.copy())]
    while stack:
        i, depth, lo, hi = stack.pop()
        n_elig = int(np.sum(hi > lo))
        ps = split_probability(depth, cfg.alpha, cfg.beta, cfg.max_depth)
        k = tree.var[i]
        if k == LEAF:
            if n_elig > 0 and ps > 0:
                total += math.log1p(-ps)
            continue
        c = cut[i]
        if not lo[k] <= c < hi[k]:
            raise StructuralError(f"node {i} uses cutpoint {c} outside [{lo[k]}, {hi[k]})")
        if ps <= 0:
            raise StructuralError(f"node {i} splits beyond the maximum depth")
        total += math.log(ps) - math.log(n_elig) - math.log(hi[k] - lo[k])
        lhi, rlo = hi.copy(), lo.copy()
        lhi[k] = c
        rlo[k] = c + 1
        stack.append((tree.left[i], depth + 1, lo, lhi))
        stack.append((tree.right[i], depth + 1, rlo, hi))
    return total
