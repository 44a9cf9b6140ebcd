"""scikit-learn style wrappers around the filter and the stopping solver.

``PosteriorFilter`` is a transformer: rows of ``(u, dY)`` per observation cell
become rows of ``(a, z, xhat, v)``. ``StoppingRule`` is fitted by solving the
value function and predicts whether ``(s, x)`` lies in the stopping region.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import PolicyRange
from .prior import Gaussian, PriorMeasure, prior_from_dict
from .stopping import solve_value_function
from .widder import mean_and_var


def _as_prior(prior) -> PriorMeasure:
    if prior is None:
        return Gaussian(0.0, 1.0)
    if isinstance(prior, dict):
        return prior_from_dict(prior)
    return prior


class PosteriorFilter(TransformerMixin, BaseEstimator):
    """Exact Bayesian filter for ``dY = X u dt + dW``.

    Parameters
    ----------
    prior : PriorMeasure or dict, default Gaussian(0, 1)
    dt : float
        Length of each observation cell.
    """

    def __init__(self, prior=None, dt=1e-3):
        self.prior = prior
        self.dt = dt

    def fit(self, X=None, y=None):
        mu = _as_prior(self.prior)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        self.prior_ = mu
        self.mean_ = mu.mean()
        self.var_ = mu.variance()
        self.support_ = mu.support_interval()
        return self

    def transform(self, X):
        """``X[:, 0]`` are intensities in (0, 1], ``X[:, 1]`` observation increments.

        Returns an ``(n + 1, 4)`` array of ``(a, z, xhat, v)`` starting from the prior.
        """
        check_is_fitted(self, "prior_")
        X = check_array(X, ensure_min_samples=1)
        if X.shape[1] != 2:
            raise ValueError("expected two columns (u, dY)")
        u, dy = X[:, 0], X[:, 1]
        if np.any(u <= 0) or np.any(u > 1):
            raise PolicyRange("intensities must lie in (0, 1]")
        a = np.concatenate(([0.0], np.cumsum(u * u * self.dt)))
        z = np.concatenate(([0.0], np.cumsum(u * dy)))
        xhat, v = mean_and_var(self.prior_, a, z)
        return np.column_stack((a, z, xhat, v))


class StoppingRule(BaseEstimator):
    """Optimal stopping region for prior ``prior`` and cost rate ``c`` on the intensity clock."""

    def __init__(self, prior=None, c=0.25, s_max=2.0, nx=401, ns=1000):
        self.prior = prior
        self.c = c
        self.s_max = s_max
        self.nx = nx
        self.ns = ns

    def fit(self, X=None, y=None):
        mu = _as_prior(self.prior)
        self.solution_ = solve_value_function(mu, self.c, self.s_max, self.nx, self.ns)
        self.v0_ = self.solution_.v0
        return self

    def decision_function(self, X):
        """Interpolated value ``v(s, x)`` for rows ``(s, x)``; 0 inside the stopping region."""
        check_is_fitted(self, "solution_")
        X = check_array(X)
        return self.solution_.value_at(X[:, 0], X[:, 1])

    def predict(self, X):
        """True where stopping is optimal."""
        return self.decision_function(X) >= -self.solution_.eps_stop
