import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bartint.estimators import BARTRegressor, GPQuadrature
from bartint.integrands import step_function
from bartint.measures import ProductMeasure


def _data(n=40, seed=0):
    X = np.random.default_rng(seed).random((n, 1))
    return X, step_function(X)


def test_bart_regressor_fit_predict_integrate():
    X, y = _data()
    model = BARTRegressor(n_trees=20, n_burn=100, n_keep=50, thin=1, random_state=1).fit(X, y)
    assert model.predict(X).shape == (40,)
    assert model.predict_draws(X).shape == (50, 40)
    post = model.integrate(ProductMeasure.uniform(1))
    assert post.m == 50 and abs(post.mean - 0.5) < 0.1
    assert model.score(X, y) > 0.8


def test_bart_regressor_is_reproducible_and_clonable():
    X, y = _data()
    params = dict(n_trees=10, n_burn=50, n_keep=20, thin=1, random_state=3)
    a = BARTRegressor(**params).fit(X, y).predict(X)
    b = clone(BARTRegressor(**params)).fit(X, y).predict(X)
    np.testing.assert_array_equal(a, b)
    assert BARTRegressor(**params).get_params()["n_trees"] == 10


def test_unfitted_models_raise():
    with pytest.raises(NotFittedError):
        BARTRegressor().predict([[0.1]])
    with pytest.raises(NotFittedError):
        GPQuadrature().predict([[0.1]])


def test_gp_quadrature():
    X = np.linspace(0.05, 0.95, 10)[:, None]
    y = np.sin(3 * X[:, 0])
    model = GPQuadrature(n_kernel_samples=50_000, random_state=0).fit(X, y)
    assert model.lengthscale_ > 0 and model.noise_ == 1e-6
    mean, sd = model.predict(X, return_std=True)
    np.testing.assert_allclose(mean, y, atol=1e-3)
    assert np.all(sd < 1e-2)
    post = model.integrate(ProductMeasure.uniform(1))
    assert post.mean == pytest.approx((1 - np.cos(3)) / 3, abs=5e-3)
    before = model.predict_var([[0.52]])[0]
    model.add_point([0.52], np.sin(1.56))
    assert model.predict_var([[0.52]])[0] < before


def test_gp_quadrature_fixed_lengthscale():
    X = np.array([[0.2], [0.7]])
    model = GPQuadrature(lengthscale=0.3).fit(X, [1.0, 2.0])
    assert model.lengthscale_ == 0.3
