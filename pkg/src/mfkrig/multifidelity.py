"""Recursive autoregressive co-kriging over nested fidelity levels.

Level ``t`` is modelled as ``rho_{t-1} * C^{t-1}(x) + r_t(x)`` where ``r_t``
is an independent residual GP. Levels are fitted one after another; the
lower level enters the residual targets through its posterior mean only.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import NumericalError
from .gp import FitConfig, GPRegressor, optimize_hyperparameters

NESTING_TOL = 1e-12


@dataclass
class FidelityDataset:
    """Training data for one fidelity level.

    ``targets`` is ``(n, n_outputs)``; ``level`` is 1-based and ``cost`` is
    the evaluation cost of one point at this level.
    """

    level: int
    inputs: np.ndarray
    targets: np.ndarray
    cost: float = 1.0
    input_names: tuple = None
    output_names: tuple = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        t = np.asarray(self.targets, dtype=float)
        self.targets = t.reshape(-1, 1) if t.ndim == 1 else t
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ValueError("inputs and targets have different row counts")
        if not self.cost > 0:
            raise ValueError("cost must be positive")

    def __len__(self):
        return self.inputs.shape[0]


def _rows_in(A, B, tol=NESTING_TOL):
    """Boolean mask: which rows of ``A`` match some row of ``B`` within ``tol``."""
    if B.shape[0] == 0:
        return np.zeros(A.shape[0], dtype=bool)
    found = np.zeros(A.shape[0], dtype=bool)
    for start in range(0, A.shape[0], 256):
        chunk = A[start : start + 256]
        diff = np.abs(chunk[:, None, :] - B[None, :, :]).max(axis=2)
        found[start : start + 256] = (diff <= tol).any(axis=1)
    return found


def check_nesting(levels):
    """Rows of each level that are missing from the level below.

    Parameters
    ----------
    levels : list of FidelityDataset or list of ndarray
        Ordered from lowest to highest fidelity.

    Returns
    -------
    list of list of int
        One entry per level; empty lists mean the stack is nested.
    """
    X = [lv.inputs if isinstance(lv, FidelityDataset) else np.atleast_2d(lv) for lv in levels]
    report = [[]]
    for t in range(1, len(X)):
        present = _rows_in(X[t], X[t - 1])
        report.append(np.flatnonzero(~present).tolist())
    return report


class MultiFidelityGP(RegressorMixin, BaseEstimator):
    """Stack of residual GPs linked by scalar inter-level scalings.

    ``fit`` takes one input array and one target vector per level, ordered
    from lowest to highest fidelity; inputs must be nested
    (``X[t] ⊆ X[t-1]``). Parameters mirror :class:`~mfkrig.gp.GPRegressor`.

    Attributes
    ----------
    levels_ : list of GPRegressor
        ``levels_[0]`` models level 1 directly, ``levels_[t]`` is the
        residual GP of level ``t+1``.
    rho_ : ndarray, shape (n_levels - 1,)
        ``rho_[t-1]`` scales level ``t`` inside level ``t+1``.
    """

    def __init__(
        self,
        n_restarts=8,
        length_scale_bounds=(1e-2, 1e1),
        signal_variance_bounds=(1e-4, 1e1),
        nugget_bounds=(1e-10, 1e-1),
        nugget=None,
        gtol=1e-6,
        max_iter=200,
        random_state=0,
        warm_start=False,
        warm_restarts=1,
    ):
        self.n_restarts = n_restarts
        self.length_scale_bounds = length_scale_bounds
        self.signal_variance_bounds = signal_variance_bounds
        self.nugget_bounds = nugget_bounds
        self.nugget = nugget
        self.gtol = gtol
        self.max_iter = max_iter
        self.random_state = random_state
        self.warm_start = warm_start
        self.warm_restarts = warm_restarts

    @classmethod
    def from_config(cls, config, **kwargs):
        params = config.estimator_params()
        params["warm_restarts"] = config.warm_restarts
        params.update(kwargs)
        return cls(**params)

    def _fit_config(self):
        return FitConfig(
            n_restarts=self.n_restarts,
            length_scale_bounds=self.length_scale_bounds,
            signal_variance_bounds=self.signal_variance_bounds,
            nugget_bounds=self.nugget_bounds,
            nugget=self.nugget,
            gtol=self.gtol,
            max_iter=self.max_iter,
            seed=self.random_state,
        )

    @property
    def n_levels(self):
        check_is_fitted(self, "levels_")
        return len(self.levels_)

    def fit(self, X_levels, y_levels):
        """Fit all levels recursively.

        Parameters
        ----------
        X_levels : list of array_like, each (n_t, d)
        y_levels : list of array_like, each (n_t,)
        """
        if len(X_levels) == 0 or len(X_levels) != len(y_levels):
            raise ValueError("need one target vector per level and at least one level")
        X_levels = [check_array(X) for X in X_levels]
        y_levels = [np.asarray(y, dtype=float).ravel() for y in y_levels]
        d = X_levels[0].shape[1]
        for t, (X, y) in enumerate(zip(X_levels, y_levels), start=1):
            if X.shape[1] != d:
                raise ValueError(f"level {t} has {X.shape[1]} features, expected {d}")
            if X.shape[0] != y.size:
                raise ValueError(f"level {t}: inputs and targets differ in length")
            if X.shape[0] < 2:
                raise ValueError(f"level {t} needs at least two points")
            if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
                raise ValueError(f"level {t} contains non-finite values")
        violations = check_nesting(X_levels)
        bad = [t + 1 for t, rows in enumerate(violations) if rows]
        if bad:
            raise ValueError(f"datasets are not nested at level(s) {bad}")

        previous = None
        if self.warm_start and hasattr(self, "levels_") and len(self.levels_) == len(X_levels):
            previous = [(gp.hyperparameters_, rho) for gp, rho in zip(self.levels_, [0.0, *self.rho_])]
        config = self._fit_config()
        levels, rhos = [], []
        for t, (X, y) in enumerate(zip(X_levels, y_levels)):
            trend = None if t == 0 else self._mean_from(levels, rhos, X)
            initial = [previous[t]] if previous else []
            n_starts = self.warm_restarts if previous else None
            try:
                h, rho, _ = optimize_hyperparameters(
                    X, y, config, trend=trend, initial=initial, n_starts=n_starts,
                    seed=None if self.random_state is None else self.random_state + t,
                )
            except NumericalError as exc:
                raise NumericalError(f"level {t + 1}: {exc}", exc.jitter_levels) from exc
            target = y if trend is None else y - rho * trend
            levels.append(GPRegressor.from_hyperparameters(X, target, h, **self._gp_params()))
            if t > 0:
                rhos.append(rho)
        self.levels_ = levels
        self.rho_ = np.array(rhos, dtype=float)
        self.n_features_in_ = d
        return self

    def recondition(self, X_levels, y_levels):
        """Refit on new nested data keeping hyperparameters and ``rho_`` fixed.

        Returns a new model; ``self`` is left untouched.
        """
        check_is_fitted(self, "levels_")
        if len(X_levels) != self.n_levels or len(y_levels) != self.n_levels:
            raise ValueError(f"expected {self.n_levels} levels")
        X_levels = [check_array(X) for X in X_levels]
        bad = [t + 1 for t, rows in enumerate(check_nesting(X_levels)) if rows]
        if bad:
            raise ValueError(f"datasets are not nested at level(s) {bad}")
        new = type(self)(**self.get_params())
        levels = []
        for t, (X, y) in enumerate(zip(X_levels, y_levels)):
            y = np.asarray(y, dtype=float).ravel()
            if t > 0:
                y = y - self.rho_[t - 1] * self._mean_from(levels, self.rho_[: t - 1], X)
            h = self.levels_[t].hyperparameters_
            levels.append(GPRegressor.from_hyperparameters(X, y, h, **self._gp_params()))
        new.levels_ = levels
        new.rho_ = self.rho_.copy()
        new.n_features_in_ = self.n_features_in_
        return new

    def _gp_params(self):
        p = self._fit_config().estimator_params()
        return p

    @staticmethod
    def _mean_from(levels, rhos, X):
        mean = levels[0].predict(X)
        for gp, rho in zip(levels[1:], rhos):
            mean = rho * mean + gp.predict(X)
        return mean

    def _check_level(self, level):
        s = self.n_levels
        if level is None:
            return s
        if int(level) != level or not 1 <= level <= s:
            raise ValueError(f"level must be in [1, {s}], got {level!r}")
        return int(level)

    def predict_level(self, X, level=None):
        """Mean and variance at fidelity ``level`` (1-based, default top)."""
        level = self._check_level(level)
        mean, var = self.levels_[0]._mean_var(X)
        for t in range(1, level):
            rho = self.rho_[t - 1]
            m_r, v_r = self.levels_[t]._mean_var(X)
            mean = rho * mean + m_r
            var = rho**2 * var + v_r
        return mean, var

    def predict(self, X, return_std=False, level=None):
        mean, var = self.predict_level(X, level)
        if return_std:
            return mean, np.sqrt(var)
        return mean

    def predict_var(self, X, level=None):
        return self.predict_level(X, level)[1]

    def residual_variance(self, X, level):
        """Posterior variance of the level-``level`` residual GP alone."""
        level = self._check_level(level)
        return self.levels_[level - 1].predict_var(X)

    def predict_gradient(self, X, level=None):
        level = self._check_level(level)
        grad = self.levels_[0].predict_gradient(X)
        for t in range(1, level):
            grad = self.rho_[t - 1] * grad + self.levels_[t].predict_gradient(X)
        return grad

    def to_dict(self):
        check_is_fitted(self, "levels_")
        params = {k: list(v) if isinstance(v, tuple) else v for k, v in self.get_params().items()}
        return {
            "kind": "multi_fidelity_gp",
            "params": params,
            "rho": self.rho_.tolist(),
            "levels": [gp.to_dict() for gp in self.levels_],
        }

    @classmethod
    def from_dict(cls, d):
        params = {k: tuple(v) if isinstance(v, list) else v for k, v in d["params"].items()}
        model = cls(**params)
        model.levels_ = [GPRegressor.from_dict(g) for g in d["levels"]]
        model.rho_ = np.array(d["rho"], dtype=float)
        model.n_features_in_ = model.levels_[0].n_features_in_
        return model
