import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from bartint.exceptions import ConfigError, StructuralError
from bartint.prior import BartPriorConfig, make_cutpoints
from bartint.sampler import (ChainConfig, draw_leaf_values, draw_sigma, leaf_log_marginal,
                             mh_tree_update, run_chain, sample_topologies, topology_code)
from bartint.trees import DecisionTree
from enumeration_oracle import exact_posterior, shape, total_variation

R4 = np.array([-0.3, -0.1, 0.2, 0.35])


def _quad_log_marginal(r, sigma, sigma_beta):
    def integrand(b):
        return np.exp(norm.logpdf(r, b, sigma).sum() + norm.logpdf(b, 0, sigma_beta))
    centre = sigma_beta**2 * r.sum() / (sigma**2 + r.size * sigma_beta**2)
    val, _ = quad(integrand, centre - 40 * sigma_beta, centre + 40 * sigma_beta,
                  points=[centre], epsabs=0, epsrel=1e-12, limit=200)
    return math.log(val)


def test_leaf_marginal_single_zero_residual():
    s, b = 0.3, 0.5
    expected = -0.5 * math.log(2 * math.pi * s**2) + 0.5 * math.log(s**2 / (s**2 + b**2))
    assert leaf_log_marginal(1, 0.0, 0.0, s, b) == pytest.approx(expected, abs=1e-14)


def test_leaf_marginal_point_mass_limit():
    r = np.array([0.1, -0.4, 0.3])
    assert leaf_log_marginal(3, r.sum(), r @ r, 0.5, 0.0) == pytest.approx(norm.logpdf(r, 0, 0.5).sum())


def test_leaf_marginal_matches_quadrature():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 6))
        r = rng.normal(0, 0.5, n)
        sigma, sigma_beta = rng.uniform(0.3, 1.5), rng.uniform(0.1, 1.0)
        got = float(leaf_log_marginal(n, r.sum(), r @ r, sigma, sigma_beta))
        worst = max(worst, abs(got - _quad_log_marginal(r, sigma, sigma_beta)))
    assert worst < 1e-8


def test_leaf_marginal_rejects_empty_leaf():
    with pytest.raises(StructuralError):
        leaf_log_marginal(0, 0.0, 0.0, 1.0, 1.0)


class _FixedNormal:
    def __init__(self, z):
        self.z = z

    def standard_normal(self, *a):
        return self.z


def test_leaf_draw_conjugate_moments():
    s, b = 0.1, 0.25
    X = np.array([[0.1], [0.2], [0.3]])
    r = np.array([0.5, 0.3, 0.4])
    tree = DecisionTree.leaf()
    mean = draw_leaf_values(tree, r, X, s, b, _FixedNormal(0.0)).value[0]
    shifted = draw_leaf_values(tree, r, X, s, b, _FixedNormal(1.0)).value[0]
    denom = s**2 + 3 * b**2
    assert mean == pytest.approx(b**2 * 1.2 / denom, abs=1e-12)
    assert (shifted - mean) ** 2 == pytest.approx(s**2 * b**2 / denom, abs=1e-12)


def test_leaf_draw_limits():
    X = np.array([[0.1], [0.9]])
    r = np.array([0.2, -0.2])
    assert draw_leaf_values(DecisionTree.leaf(), r, X, 0.1, 1.0, _FixedNormal(0.0)).value[0] == 0.0
    flat = draw_leaf_values(DecisionTree.leaf(), np.array([1.0, 2.0]), X, 0.1, 1e6, _FixedNormal(0.0))
    assert flat.value[0] == pytest.approx(1.5, rel=1e-9)


def test_draw_sigma_mean():
    r = np.random.default_rng(1).normal(0, 0.4, 20)
    nu, lam = 3.0, 0.2
    rng = np.random.default_rng(2)
    s2 = np.array([draw_sigma(r, nu, lam, rng) ** 2 for _ in range(100_000)])
    expected = (nu * lam + r @ r) / (nu + r.size - 2)
    assert abs(s2.mean() - expected) < 3 * s2.std(ddof=1) / math.sqrt(s2.size)


def test_draw_sigma_edge_cases():
    rng = np.random.default_rng(3)
    prior_draws = np.array([draw_sigma([], 5.0, 1.0, rng) ** 2 for _ in range(50_000)])
    assert prior_draws.mean() == pytest.approx(5.0 / 3.0, rel=0.05)
    assert draw_sigma(np.zeros(100_000), 3.0, 0.1, rng) < 0.01


def test_change_to_same_rule_is_accepted():
    X = np.array([[0.2], [0.8]])
    stump = DecisionTree.from_nested((0, 0.5, 0.0, 0.0))
    rng = np.random.default_rng(0)
    for _ in range(20):
        tree, acc, move = mh_tree_update(stump, np.array([0.3, -0.2]), X, [np.array([0.5])], 0.2,
                                         BartPriorConfig(n_trees=1), rng, (0, 0, 1, 0))
        assert move == "change" and acc
        assert topology_code(tree, [np.array([0.5])]) == topology_code(stump, [np.array([0.5])])


def test_grow_with_empty_child_is_rejected():
    rng = np.random.default_rng(0)
    for _ in range(20):
        tree, acc, move = mh_tree_update(DecisionTree.leaf(), np.array([0.4]), np.array([[0.3]]),
                                         [np.array([0.5])], 0.2, BartPriorConfig(n_trees=1), rng,
                                         (1, 0, 0, 0))
        assert move == "grow" and not acc and tree.n_leaves == 1


X1 = np.array([[0.1], [0.4], [0.6], [0.9]])
X2 = np.array([[0.1, 0.8], [0.4, 0.2], [0.6, 0.6], [0.9, 0.3]])
SIGMA, SIGMA_BETA = 0.2, 0.3
TINY_PRIOR = BartPriorConfig(n_trees=1, sigma_beta=SIGMA_BETA, max_depth=2)


def _tv(X, moves, start=None, keep=None, seed=0, steps=1_000_000):
    cuts = make_cutpoints(X)
    exact = exact_posterior(X, R4, cuts, SIGMA, SIGMA_BETA, 0.95, 2.0, 2, keep=keep)
    start = DecisionTree.leaf() if start is None else start(cuts)
    codes = sample_topologies(start, R4, X, cuts, SIGMA, TINY_PRIOR, steps,
                              np.random.default_rng(seed), move_probs=moves)
    return total_variation(codes, exact)


@pytest.mark.slow
def test_grow_prune_stationary_distribution():
    assert _tv(X2, (0.5, 0.5, 0.0, 0.0)) < 0.02


@pytest.mark.slow
def test_full_mixture_stationary_distribution_2d():
    assert _tv(X2, (0.25, 0.25, 0.40, 0.10), seed=1) < 0.02


def _fixed_shape_start(cuts):
    return DecisionTree.from_nested((0, float(cuts[0][1]), (1, float(cuts[1][1]), 0.0, 0.0), 0.0))


@pytest.mark.slow
@pytest.mark.parametrize("moves", [(0, 0, 1, 0), (0, 0, 0.7, 0.3)])
def test_rule_moves_within_a_shape(moves):
    same_shape = ((None, None), None)
    tv = _tv(X2, moves, start=_fixed_shape_start, keep=lambda node: shape(node) == same_shape, seed=2)
    assert tv < 0.02


def test_chain_config_validation():
    with pytest.raises(ConfigError):
        ChainConfig(move_probs=(0.5, 0.5, 0.5, 0.0))
    with pytest.raises(ConfigError):
        ChainConfig(n_keep=0)


SMALL = dict(prior=BartPriorConfig(n_trees=20), chain=ChainConfig(n_burn=200, n_keep=200, thin=2))


def test_reproducible_draws():
    rng = np.random.default_rng(4)
    X = rng.random((40, 2))
    y = np.sin(4 * X[:, 0]) + X[:, 1]
    a = run_chain(X, y, seed=11, **SMALL)
    b = run_chain(X, y, seed=11, **SMALL)
    for name in ("var", "cut", "value", "start", "size", "sigma"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert a.m == 200


def test_acceptance_rates_are_strictly_inside_unit_interval():
    rng = np.random.default_rng(5)
    X = rng.random((60, 3))
    y = np.where(X[:, 0] > 0.5, 1.0, 0.0) + 0.5 * X[:, 1] + 0.1 * rng.standard_normal(60)
    rates = run_chain(X, y, seed=1, **SMALL).acceptance_rates()
    assert all(0.0 < rates[m] < 1.0 for m in ("grow", "prune", "change", "swap")), rates


def test_constant_target():
    X = np.random.default_rng(6).random((50, 1))
    draws = run_chain(X, np.full(50, 3.0), seed=2, **SMALL)
    pred = draws.predict_draws(np.linspace(0, 1, 10)[:, None])
    assert np.all(np.abs(pred.mean(axis=0) - 3.0) <= 3 * pred.std(axis=0) + 1e-12)


def test_linear_target_beats_single_leaf():
    rng = np.random.default_rng(7)
    X = rng.random((200, 1))
    y = 2 * X[:, 0] + 0.05 * rng.standard_normal(200)
    grid = np.linspace(0, 1, 101)[:, None]
    pred = run_chain(X, y, seed=3, **SMALL).predict_draws(grid).mean(axis=0)
    rmse = np.sqrt(np.mean((pred - 2 * grid[:, 0]) ** 2))
    baseline = np.sqrt(np.mean((y.mean() - 2 * grid[:, 0]) ** 2))
    assert rmse < baseline


def test_step_target_is_classified():
    X = np.random.default_rng(8).random((40, 1))
    y = (X[:, 0] > 0.5).astype(float)
    grid = np.linspace(0, 1, 401)
    grid = grid[np.abs(grid - 0.5) > 0.05][:, None]
    pred = run_chain(X, y, seed=4, **SMALL).predict_draws(grid).mean(axis=0)
    assert np.mean((pred > 0.5) == (grid[:, 0] > 0.5)) >= 0.95


def test_draws_are_valid_trees():
    X = np.random.default_rng(9).random((30, 2))
    draws = run_chain(X, X.sum(axis=1), seed=5, **SMALL)
    for j in (0, draws.m - 1):
        for t in range(draws.n_trees):
            draws.tree(j, t).validate()
    assert draws.n_leaves().shape == (draws.m, 20)


def test_too_few_observations():
    with pytest.raises(StructuralError):
        run_chain(np.zeros((1, 1)), [1.0], prior=BartPriorConfig(min_leaf_obs=2))
