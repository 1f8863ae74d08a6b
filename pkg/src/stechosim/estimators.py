"""scikit-learn style wrappers around the decay and gradient fitters.

Only the fitters get the estimator interface; simulation objects are plain
functions and dataclasses.  ``X`` is a single column (echo time or gradient
strength) and ``y`` the measured magnitudes or ratios.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .analysis import fit_double_exponential, fit_quadratic_gradient


def _column(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"expected a single feature column, got {X.shape[1]}")
        X = X[:, 0]
    return X


class DoubleExponentialRegressor(RegressorMixin, BaseEstimator):
    """``y = A_s exp(-t/t_short) + A_l exp(-t/t_l)`` with ``t_short`` fixed.

    Parameters
    ----------
    t_short : float
        Fixed short time constant in seconds.

    Attributes
    ----------
    result_ : FitResult
    a_s_, a_l_, t_l_ : float
    tail_absent_ : bool
    """

    def __init__(self, t_short: float = 1.8e-3):
        self.t_short = t_short

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True)
        t = _column(X)
        order = np.argsort(t, kind="stable")
        self.result_ = fit_double_exponential(t[order], self.t_short, y=np.abs(y[order]))
        self.a_s_ = self.result_.a_s
        self.a_l_ = self.result_.a_l
        self.t_l_ = self.result_.t_l
        self.tail_absent_ = self.result_.tail_absent
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        X = validate_data(self, X, reset=False)
        t = _column(X)
        slow = 0.0 if np.isinf(self.t_l_) else 1.0 / self.t_l_
        return self.a_s_ * np.exp(-t / self.t_short) + self.a_l_ * np.exp(-slow * t)


class QuadraticGradientRegressor(RegressorMixin, BaseEstimator):
    """``ratio = a G**2 + b``.

    Attributes
    ----------
    a_, b_, r_squared_ : float
    """

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True)
        q = fit_quadratic_gradient(np.column_stack([_column(X), y]))
        self.a_, self.b_, self.r_squared_ = q.a, q.b, q.r_squared
        return self

    def predict(self, X):
        check_is_fitted(self, "a_")
        X = validate_data(self, X, reset=False)
        g = _column(X)
        return self.a_ * g * g + self.b_
