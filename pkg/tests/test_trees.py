import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bartint.exceptions import StructuralError
from bartint.measures import Cell, ProductMeasure
from bartint.prior import BartPriorConfig, make_cutpoints, sample_tree_prior
from bartint.trees import DecisionTree, RescaleTransform, SumOfTrees, eval_ensemble, eval_tree, leaf_cells

UNIT2 = Cell(np.zeros(2), np.ones(2))


def test_stump_routing_and_ties():
    tree = DecisionTree.from_nested((0, 0.5, -1.0, 1.0))
    np.testing.assert_array_equal(eval_tree(tree, [[0.3, 0.9], [0.7, 0.1], [0.5, 0.0]]), [-1, 1, 1])


def test_stump_cells():
    cells = leaf_cells(DecisionTree.from_nested((0, 0.5, 0.0, 1.0)), Cell([0.0], [1.0]))
    assert [(c.lo[0], c.hi[0], v) for c, v in cells] == [(0.0, 0.5, 0.0), (0.5, 1.0, 1.0)]
    single = leaf_cells(DecisionTree.leaf(2.0), UNIT2)
    assert len(single) == 1
    np.testing.assert_array_equal(single[0][0].hi, [1, 1])


def test_quadrant_tree_matches_lookup():
    tree = DecisionTree.from_nested((0, 0.5, (1, 0.5, 1.0, 2.0), (1, 0.5, 3.0, 4.0)))
    x = np.random.default_rng(0).random((100, 2))
    expected = 1 + (x[:, 0] >= 0.5) * 2 + (x[:, 1] >= 0.5)
    np.testing.assert_array_equal(tree.predict(x), expected)


def _random_tree(seed, d=3):
    rng = np.random.default_rng(seed)
    cuts = make_cutpoints(rng.random((40, d)))
    cfg = BartPriorConfig(n_trees=1, alpha=0.95, beta=0.5, max_depth=4)
    return sample_tree_prior(cfg, cuts, rng)


@given(st.integers(0, 10_000))
def test_cells_agree_with_routing(seed):
    tree = _random_tree(seed)
    tree.validate()
    support = Cell(np.zeros(3), np.ones(3))
    cells = tree.leaf_cells(support)
    x = np.random.default_rng(seed + 1).random((1000, 3))
    hits = np.stack([c.contains(x, support) for c, _ in cells])
    assert np.all(hits.sum(axis=0) == 1)
    values = np.array([v for _, v in cells])
    np.testing.assert_array_equal(values[hits.argmax(axis=0)], tree.predict(x))
    mass = sum(ProductMeasure.uniform(3).cell_probability(c) for c, _ in cells)
    assert mass == pytest.approx(1.0, abs=1e-10)


def test_invalid_trees_rejected():
    bad = DecisionTree.from_nested((0, 0.5, (0, 0.7, 1.0, 2.0), 3.0))
    with pytest.raises(StructuralError):
        bad.leaf_cells(Cell([0.0], [1.0]))
    cyclic = DecisionTree([0, -1, -1], [0.5, np.nan, np.nan], [1, -1, -1], [1, -1, -1], [0, 0, 0])
    with pytest.raises(StructuralError):
        cyclic.validate()
    with pytest.raises(StructuralError):
        DecisionTree([0, -1], [0.5], [1, -1], [1, -1], [0, 0])


def test_serialisation_round_trip():
    ens = SumOfTrees([_random_tree(s) for s in range(5)], sigma=0.3, rescale=RescaleTransform(5.0, 10.0))
    back = SumOfTrees.from_dict(json.loads(ens.to_json()))
    x = np.random.default_rng(9).random((50, 3))
    np.testing.assert_array_equal(back.predict(x), ens.predict(x))
    assert back.sigma == 0.3


def test_ensemble_examples():
    T = 8
    ens = SumOfTrees([DecisionTree.leaf(1 / T) for _ in range(T)])
    assert eval_ensemble(ens, [[0.2]])[0] == pytest.approx(1.0, abs=1e-12)
    shifted = SumOfTrees([DecisionTree.leaf(0.1)], rescale=RescaleTransform(5.0, 10.0))
    assert shifted.predict([[0.0]])[0] == pytest.approx(6.0)
    trees = [_random_tree(s) for s in range(6)]
    x = np.random.default_rng(2).random((30, 3))
    np.testing.assert_allclose(SumOfTrees(trees).predict(x), sum(t.predict(x) for t in trees), atol=1e-12)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30))
def test_rescale_round_trip(ys):
    y = np.array(ys)
    r = RescaleTransform.fit(y)
    z = r.transform(y)
    assert np.all(z >= -0.5 - 1e-12) and np.all(z <= 0.5 + 1e-12)
    np.testing.assert_allclose(r.inverse(z), y, atol=1e-12 * max(1.0, np.abs(y).max()))
    if np.ptp(y) > 0:
        assert z.min() == pytest.approx(-0.5) and z.max() == pytest.approx(0.5)
