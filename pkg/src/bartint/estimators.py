"""scikit-learn style regressors wrapping the BART sampler and the GP."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .gpbq import GaussianProcess, GpConfig, bq_from_state, _kernel_samples, fit_hyperparameters
from .prior import BartPriorConfig
from .quadrature import IntegralPosterior, posterior_summary
from .sampler import ChainConfig, run_chain


class BARTRegressor(RegressorMixin, BaseEstimator):
    """Sum-of-trees regression by backfitting MCMC.

    ``predict`` returns the posterior mean; ``predict_draws`` and
    ``integrate`` expose the full set of retained draws.

    Examples
    --------
    >>> import numpy as np
    >>> X = np.linspace(0, 1, 30)[:, None]
    >>> model = BARTRegressor(n_trees=20, n_burn=50, n_keep=20, random_state=0)
    >>> model.fit(X, (X[:, 0] > 0.5).astype(float)).predict(X).shape
    (30,)
    """

    def __init__(self, n_trees=200, alpha=0.95, beta=2.0, sigma_beta=None, nu=3.0, q=0.90,
                 sigma_hat=None, n_burn=1000, n_keep=1000, thin=5,
                 move_probs=(0.25, 0.25, 0.40, 0.10), random_state=None):
        self.n_trees = n_trees
        self.alpha = alpha
        self.beta = beta
        self.sigma_beta = sigma_beta
        self.nu = nu
        self.q = q
        self.sigma_hat = sigma_hat
        self.n_burn = n_burn
        self.n_keep = n_keep
        self.thin = thin
        self.move_probs = move_probs
        self.random_state = random_state

    def _configs(self):
        prior = BartPriorConfig(n_trees=self.n_trees, alpha=self.alpha, beta=self.beta,
                                sigma_beta=self.sigma_beta, nu=self.nu, q=self.q,
                                sigma_hat=self.sigma_hat)
        chain = ChainConfig(n_burn=self.n_burn, n_keep=self.n_keep, thin=self.thin,
                            move_probs=tuple(self.move_probs))
        return prior, chain

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        prior, chain = self._configs()
        self.draws_ = run_chain(X, y, prior, chain, seed=self.random_state)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_draws(self, X) -> np.ndarray:
        check_is_fitted(self, "draws_")
        X = check_array(X)
        return self.draws_.predict_draws(X)

    def predict(self, X) -> np.ndarray:
        return self.predict_draws(X).mean(axis=0)

    def integrate(self, measure) -> IntegralPosterior:
        """Posterior on the integral of the regression function against ``measure``."""
        check_is_fitted(self, "draws_")
        return posterior_summary(self.draws_, measure)


class GPQuadrature(RegressorMixin, BaseEstimator):
    """GP regression with a Matern-3/2 kernel that also integrates.

    With ``lengthscale=None`` the lengthscale (and the noise variance when
    ``fit_noise``) is chosen by maximum marginal likelihood at ``fit`` time.
    """

    def __init__(self, lengthscale=None, noise=1e-6, fit_noise=False, prior_mean=0.0,
                 n_kernel_samples=1_000_000, random_state=None):
        self.lengthscale = lengthscale
        self.noise = noise
        self.fit_noise = fit_noise
        self.prior_mean = prior_mean
        self.n_kernel_samples = n_kernel_samples
        self.random_state = random_state

    def _config(self) -> GpConfig:
        return GpConfig(lengthscale=self.lengthscale, noise=self.noise, fit_noise=self.fit_noise,
                        prior_mean=self.prior_mean, n_kernel_samples=self.n_kernel_samples)

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        cfg = self._config()
        if cfg.lengthscale is None:
            rho, noise = fit_hyperparameters(X, y, cfg)
        else:
            rho, noise = cfg.lengthscale, cfg.noise
        self.gp_ = GaussianProcess(X, y, rho, noise, cfg.prior_mean,
                                   cfg.jitter_start, cfg.jitter_max)
        self.lengthscale_, self.noise_ = rho, noise
        self.n_features_in_ = X.shape[1]
        return self

    def add_point(self, x, y):
        """Append one observation by a rank-one Cholesky extension (hyperparameters kept)."""
        check_is_fitted(self, "gp_")
        self.gp_.add_point(np.asarray(x, dtype=float).reshape(1, -1), float(y))
        return self

    def predict(self, X, return_std: bool = False):
        check_is_fitted(self, "gp_")
        mean, var = self.gp_.predict(check_array(X))
        return (mean, np.sqrt(var)) if return_std else mean

    def predict_var(self, X) -> np.ndarray:
        check_is_fitted(self, "gp_")
        return self.gp_.predict(check_array(X))[1]

    def integrate(self, measure, seed=None):
        """BQ posterior; ``seed`` defaults to ``random_state``."""
        check_is_fitted(self, "gp_")
        seed = self.random_state if seed is None else seed
        points, other = _kernel_samples(measure, self.n_kernel_samples, seed)
        return bq_from_state(self.gp_, points, other)
