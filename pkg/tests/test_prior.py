import math

import numpy as np
import pytest
from scipy.special import gammainc
from scipy.optimize import brentq

from bartint.exceptions import ConfigError, StructuralError
from bartint.prior import (BartPriorConfig, calibrate_sigma_prior, log_prior_tree, make_cutpoints,
                           sample_tree_prior, split_probability)
from bartint.trees import DecisionTree


def test_split_probability():
    assert split_probability(0) == 0.95
    assert split_probability(1) == pytest.approx(0.2375)
    assert split_probability(5, alpha=0.7, beta=0.0) == 0.7
    assert split_probability(3, max_depth=3) == 0.0


def test_defaults():
    cfg = BartPriorConfig()
    assert cfg.n_trees == 200 and (cfg.alpha, cfg.beta) == (0.95, 2.0)
    assert cfg.leaf_sd == pytest.approx(0.25 / math.sqrt(200))
    with pytest.raises(ConfigError):
        BartPriorConfig(alpha=1.0)


def test_lambda_against_root_finding():
    quant = brentq(lambda x: gammainc(1.5, x / 2) - 0.10, 1e-6, 50, xtol=1e-14)
    lam = calibrate_sigma_prior(3, 0.90, 1.0)
    assert lam == pytest.approx(quant / 3, rel=1e-9)
    assert lam == pytest.approx(0.1948, abs=1e-4)
    assert calibrate_sigma_prior(10_000, 0.5, 2.0) == pytest.approx(4.0, rel=1e-3)


def test_lambda_calibration_probability():
    lam = calibrate_sigma_prior(3, 0.9, 0.7)
    rng = np.random.default_rng(0)
    sigma2 = 3 * lam / rng.chisquare(3, 1_000_000)
    assert np.mean(sigma2 < 0.49) == pytest.approx(0.9, abs=0.005)


def test_cutpoints_are_midpoints():
    cuts = make_cutpoints([[0.0, 1.0], [1.0, 1.0], [3.0, 1.0]])
    np.testing.assert_array_equal(cuts[0], [0.5, 2.0])
    assert cuts[1].size == 0


def test_node_count_fixture():
    cuts = [np.linspace(0, 1, 2001)[1:-1]]
    cfg = BartPriorConfig(n_trees=1)
    rng = np.random.default_rng(42)
    counts = np.array([sample_tree_prior(cfg, cuts, rng).n_leaves for _ in range(100_000)])
    freq = [np.mean(counts == 1), np.mean(counts == 2), np.mean(counts == 3),
            np.mean(counts == 4), np.mean(counts >= 5)]
    np.testing.assert_allclose(freq, [0.05, 0.55, 0.28, 0.09, 0.03], atol=0.02)


def test_prior_degenerate_cases():
    rng = np.random.default_rng(1)
    cuts = [np.array([0.5])]
    cfg = BartPriorConfig(n_trees=1, alpha=1e-12)
    assert all(sample_tree_prior(cfg, cuts, rng).n_leaves == 1 for _ in range(200))
    empty = [np.array([])]
    assert sample_tree_prior(BartPriorConfig(), empty, rng).n_leaves == 1


def test_leaf_value_variance():
    cfg = BartPriorConfig(n_trees=50)
    rng = np.random.default_rng(3)
    cuts = [np.array([0.5])]
    trees = [sample_tree_prior(cfg, cuts, rng) for _ in range(20_000)]
    leaves = np.concatenate([t.value[t.leaves] for t in trees])
    se = cfg.leaf_sd**2 * math.sqrt(2 / leaves.size)
    assert abs(leaves.var() - cfg.leaf_sd**2) < 3 * se


def test_log_prior_small_examples():
    cfg = BartPriorConfig(n_trees=1)
    cuts = [np.array([0.25, 0.5, 0.75])]
    assert log_prior_tree(cfg, DecisionTree.leaf(), cuts) == pytest.approx(math.log(0.05))
    stump = DecisionTree.from_nested((0, 0.5, 0.0, 0.0))
    # each child has one cutpoint left to split on
    expected = math.log(0.95) + math.log(1 / 3) + 2 * math.log(1 - 0.2375)
    assert log_prior_tree(cfg, stump, cuts) == pytest.approx(expected)
    with pytest.raises(StructuralError):
        log_prior_tree(cfg, DecisionTree.from_nested((0, 0.6, 0.0, 0.0)), cuts)


def _all_trees(cuts, lo, hi, depth, max_depth):
    """Every nested-tuple tree on a 1-D grid, built independently of the package."""
    yield 0.0
    if depth >= max_depth:
        return
    for c in range(lo, hi):
        for left in _all_trees(cuts, lo, c, depth + 1, max_depth):
            for right in _all_trees(cuts, c + 1, hi, depth + 1, max_depth):
                yield (0, cuts[c], left, right)


def _oracle_log_prior(node, lo, hi, depth, alpha, beta, max_depth):
    ps = 0.0 if depth >= max_depth else alpha * (1 + depth) ** -beta
    if not isinstance(node, tuple):
        return math.log(1 - ps) if hi > lo else 0.0
    c = int(np.searchsorted(CUTS3, node[1]))
    return (math.log(ps) - math.log(hi - lo)
            + _oracle_log_prior(node[2], lo, c, depth + 1, alpha, beta, max_depth)
            + _oracle_log_prior(node[3], c + 1, hi, depth + 1, alpha, beta, max_depth))


CUTS3 = np.array([0.25, 0.5, 0.75])


@pytest.mark.parametrize("alpha,beta", [(0.95, 2.0), (0.6, 0.5)])
def test_prior_sums_to_one_over_enumeration(alpha, beta):
    cfg = BartPriorConfig(n_trees=1, alpha=alpha, beta=beta, max_depth=3)
    trees = list(_all_trees(CUTS3, 0, 3, 0, 3))
    total = 0.0
    for nested in trees:
        lp = log_prior_tree(cfg, DecisionTree.from_nested(nested), [CUTS3])
        assert lp == pytest.approx(_oracle_log_prior(nested, 0, 3, 0, alpha, beta, 3), abs=1e-12)
        total += math.exp(lp)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_sampler_frequencies_match_log_prior():
    cfg = BartPriorConfig(n_trees=1, alpha=0.9, beta=1.0)
    rng = np.random.default_rng(5)
    draws = 40_000
    seen = {}
    for _ in range(draws):
        t = sample_tree_prior(cfg, [CUTS3], rng)
        key = tuple(t.cut[t.var >= 0]) + tuple(t.var)
        seen.setdefault(key, [0, t])[0] += 1
    for count, t in seen.values():
        p = math.exp(log_prior_tree(cfg, t, [CUTS3]))
        assert abs(count / draws - p) < 4 * math.sqrt(p * (1 - p) / draws) + 1e-3
