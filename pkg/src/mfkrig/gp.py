"""Single-fidelity Gaussian process regression.

Constant mean, anisotropic squared-exponential kernel and a nugget on the
diagonal. Hyperparameters are fitted by multi-start L-BFGS-B on the log
marginal likelihood, with positive parameters optimised in log space.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.stats import qmc
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import NumericalError

logger = logging.getLogger(__name__)

JITTER_LEVELS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
# Variance round-off tolerance, relative to the signal variance.
NEGATIVE_VARIANCE_TOL = 1e-10
_LOG_2PI = np.log(2.0 * np.pi)
# Residual targets c - rho*trend can vary more than c itself.
RESIDUAL_VARIANCE_HEADROOM = 10.0


@dataclass
class GpHyperparameters:
    """Constant mean, signal variance, per-dimension length scales, nugget."""

    mean: float
    signal_variance: float
    length_scales: np.ndarray
    nugget: float = 0.0

    def __post_init__(self):
        self.mean = float(self.mean)
        self.signal_variance = float(self.signal_variance)
        self.length_scales = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        self.nugget = float(self.nugget)
        if not self.signal_variance > 0:
            raise ValueError("signal variance must be positive")
        if np.any(~(self.length_scales > 0)):
            raise ValueError("length scales must be positive")
        if not self.nugget >= 0:
            raise ValueError("nugget must be nonnegative")

    @property
    def dim(self):
        return self.length_scales.size

    def to_dict(self):
        return {
            "mean": self.mean,
            "signal_variance": self.signal_variance,
            "length_scales": self.length_scales.tolist(),
            "nugget": self.nugget,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["mean"], d["signal_variance"], d["length_scales"], d["nugget"])


@dataclass
class FitConfig:
    """Hyperparameter search settings shared by all fitted models.

    Variance bounds are relative to the sample variance of the targets;
    the nugget lower bound is absolute. ``nugget=None`` fits the nugget,
    a number fixes it.
    """

    n_restarts: int = 8
    length_scale_bounds: tuple = (1e-2, 1e1)
    signal_variance_bounds: tuple = (1e-4, 1e1)
    nugget_bounds: tuple = (1e-10, 1e-1)
    nugget: float = None
    gtol: float = 1e-6
    max_iter: int = 200
    seed: int = 0
    warm_restarts: int = 1
    extra: dict = field(default_factory=dict, repr=False)

    def estimator_params(self):
        return {
            "n_restarts": self.n_restarts,
            "length_scale_bounds": tuple(self.length_scale_bounds),
            "signal_variance_bounds": tuple(self.signal_variance_bounds),
            "nugget_bounds": tuple(self.nugget_bounds),
            "nugget": self.nugget,
            "gtol": self.gtol,
            "max_iter": self.max_iter,
            "random_state": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        known = {k: d.pop(k) for k in list(d) if k in cls.__dataclass_fields__}
        for key in ("length_scale_bounds", "signal_variance_bounds", "nugget_bounds"):
            if key in known:
                known[key] = tuple(float(v) for v in known[key])
        return cls(**known, extra=d)


def kernel_matrix(X1, X2, signal_variance, length_scales):
    """Squared-exponential covariance ``s2 * exp(-0.5 * sum((x-x')^2 / l^2))``."""
    X1 = np.atleast_2d(X1)
    X2 = np.atleast_2d(X2)
    length_scales = np.asarray(length_scales, dtype=float)
    if X1.shape[1] != length_scales.size or X2.shape[1] != length_scales.size:
        raise ValueError("input dimension does not match the number of length scales")
    # Explicit differences rather than the expanded |a|^2 + |b|^2 - 2ab form:
    # exact zeros on the diagonal, and each row independent of the batch.
    d2 = np.empty((X1.shape[0], X2.shape[0]))
    step = max(1, 2_000_000 // max(1, X2.shape[0] * X1.shape[1]))
    for i in range(0, X1.shape[0], step):
        diff = (X1[i : i + step, None, :] - X2[None, :, :]) / length_scales
        d2[i : i + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return signal_variance * np.exp(-0.5 * d2)


def kernel(x, x2, h):
    """Covariance between two single points under hyperparameters ``h``."""
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.size != x2.size or x.size != h.dim:
        raise ValueError("point dimensions do not match the hyperparameters")
    r = (x - x2) / h.length_scales
    return h.signal_variance * float(np.exp(-0.5 * r @ r))


def cholesky_jitter(A, scale=1.0):
    """Lower Cholesky factor of ``A`` with escalating diagonal jitter.

    Returns ``(L, jitter)``. Jitter levels are multiplied by ``scale``.
    """
    try:
        return np.linalg.cholesky(A), 0.0
    except np.linalg.LinAlgError:
        pass
    tried = []
    eye = np.eye(A.shape[0])
    for level in JITTER_LEVELS:
        jitter = level * scale
        tried.append(jitter)
        try:
            return np.linalg.cholesky(A + jitter * eye), jitter
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        f"kernel matrix not positive definite after jitter {tried[-1]:.1e}",
        jitter_levels=tried,
    )


# ---------------------------------------------------------------------------
# log marginal likelihood
#
# Internal parameter vector:
#   [mean, (rho), log s2, log l_1..l_d, (log nugget)]
# ``rho`` is present when a trend vector multiplies the level below;
# ``log nugget`` is present when the nugget is fitted.


def _unpack(theta, d, has_trend, fit_nugget, fixed_nugget):
    i = 0
    mean = theta[i]
    i += 1
    rho = 0.0
    if has_trend:
        rho = theta[i]
        i += 1
    s2 = np.exp(theta[i])
    ls = np.exp(theta[i + 1 : i + 1 + d])
    i += 1 + d
    nugget = np.exp(theta[i]) if fit_nugget else fixed_nugget
    return mean, rho, s2, ls, nugget


def _lml_terms(theta, X, c, trend, fit_nugget, fixed_nugget, sq_by_dim, want_grad):
    n, d = X.shape
    has_trend = trend is not None
    mean, rho, s2, ls, nugget = _unpack(theta, d, has_trend, fit_nugget, fixed_nugget)
    d2 = np.tensordot(1.0 / ls**2, sq_by_dim, axes=1)
    K = s2 * np.exp(-0.5 * d2)
    Ky = K + nugget * np.eye(n)
    L, _ = cholesky_jitter(Ky, s2)
    r = c - mean
    if has_trend:
        r = r - rho * trend
    alpha = cho_solve((L, True), r)
    value = -np.sum(np.log(np.diag(L))) - 0.5 * r @ alpha - 0.5 * n * _LOG_2PI
    if not want_grad:
        return value, None
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n))
    grad = [alpha.sum()]
    if has_trend:
        grad.append(trend @ alpha)
    grad.append(0.5 * np.sum(W * K))
    WK = W * K
    for m in range(d):
        grad.append(0.5 * np.sum(WK * sq_by_dim[m]) / ls[m] ** 2)
    if fit_nugget:
        grad.append(0.5 * nugget * np.trace(W))
    return value, np.array(grad)


def _sq_by_dim(X):
    diff = X[:, None, :] - X[None, :, :]
    return np.moveaxis(diff**2, 2, 0)


def log_marginal_likelihood(X, c, h, eval_gradient=False):
    """Log marginal likelihood of targets ``c`` at inputs ``X``.

    With ``eval_gradient`` the gradient is returned with respect to
    ``[mean, log signal_variance, log l_1..l_d, log nugget]``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    c = np.asarray(c, dtype=float).ravel()
    theta = np.concatenate(
        [[h.mean, np.log(h.signal_variance)], np.log(h.length_scales), [np.log(h.nugget) if h.nugget > 0 else 0.0]]
    )
    fit_nugget = h.nugget > 0
    if not fit_nugget:
        theta = theta[:-1]
    value, grad = _lml_terms(theta, X, c, None, fit_nugget, h.nugget, _sq_by_dim(X), eval_gradient)
    if not eval_gradient:
        return value
    if not fit_nugget:
        grad = np.append(grad, 0.0)
    return value, grad


def _profiled_terms(u, c, F, fit_nugget, fixed_nugget, sq_by_dim, want_grad):
    """Log likelihood with the linear coefficients at their GLS optimum.

    ``u = [log s2, log l_1..l_d, (log nugget)]``; ``F`` holds the columns
    multiplying the linear coefficients (ones, then the trend if any).
    By the envelope theorem the kernel gradient is the partial gradient at
    the optimal coefficients.
    """
    n = c.size
    d = sq_by_dim.shape[0]
    s2 = np.exp(u[0])
    ls = np.exp(u[1 : 1 + d])
    nugget = np.exp(u[1 + d]) if fit_nugget else fixed_nugget
    d2 = np.tensordot(1.0 / ls**2, sq_by_dim, axes=1)
    K = s2 * np.exp(-0.5 * d2)
    L, _ = cholesky_jitter(K + nugget * np.eye(n), s2)
    KiF = cho_solve((L, True), F)
    Kic = cho_solve((L, True), c)
    beta = np.linalg.lstsq(F.T @ KiF, F.T @ Kic, rcond=None)[0]
    r = c - F @ beta
    alpha = Kic - KiF @ beta
    value = -np.sum(np.log(np.diag(L))) - 0.5 * r @ alpha - 0.5 * n * _LOG_2PI
    if not want_grad:
        return value, None, beta
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n))
    WK = W * K
    grad = [0.5 * np.sum(WK)]
    for m in range(d):
        grad.append(0.5 * np.sum(WK * sq_by_dim[m]) / ls[m] ** 2)
    if fit_nugget:
        grad.append(0.5 * nugget * np.trace(W))
    return value, np.array(grad), beta


def optimize_hyperparameters(X, c, config, trend=None, initial=(), n_starts=None, seed=None):
    """Maximise the log marginal likelihood over all hyperparameters.

    The constant mean (and ``rho`` when ``trend`` is given) enter the
    likelihood linearly and are set to their generalised-least-squares
    optimum for every kernel candidate, so the search runs over the log
    signal variance, log length scales and log nugget only.

    Parameters
    ----------
    X : ndarray, shape (n, d)
    c : ndarray, shape (n,)
    config : FitConfig
    trend : ndarray, shape (n,), optional
        Lower-level predictions; when given, a scale factor ``rho`` on it
        is fitted jointly.
    initial : sequence of (GpHyperparameters, rho) pairs
        Warm starts tried before the random ones.
    n_starts : int, optional
        Number of random starts; defaults to ``config.n_restarts``.

    Returns
    -------
    hyper : GpHyperparameters
    rho : float
    lml : float
    """
    n, d = X.shape
    has_trend = trend is not None
    fit_nugget = config.nugget is None
    fixed_nugget = 0.0 if fit_nugget else float(config.nugget)
    var = float(np.var(c))
    scale = var if var > 1e-300 else 1.0

    s2_lo, s2_hi = config.signal_variance_bounds
    if has_trend:
        s2_hi *= RESIDUAL_VARIANCE_HEADROOM
    log_bounds = [np.log([s2_lo * scale, s2_hi * scale])]
    log_bounds += [np.log(config.length_scale_bounds)] * d
    if fit_nugget:
        lo = config.nugget_bounds[0]
        hi = max(config.nugget_bounds[1] * scale, 10.0 * lo)
        log_bounds.append(np.log([lo, hi]))
    log_bounds = np.array(log_bounds)
    F = np.ones((n, 1)) if not has_trend else np.column_stack([np.ones(n), trend])
    sq = _sq_by_dim(X)

    def objective(u):
        try:
            value, grad, _ = _profiled_terms(u, c, F, fit_nugget, fixed_nugget, sq, True)
        except NumericalError:
            return 1e25, np.zeros_like(u)
        return -value, -grad

    starts = []
    for h, _rho in initial:
        u = [np.log(h.signal_variance)] + list(np.log(h.length_scales))
        if fit_nugget:
            u.append(np.log(max(h.nugget, config.nugget_bounds[0])))
        starts.append(np.clip(np.array(u), log_bounds[:, 0], log_bounds[:, 1]))
    n_random = config.n_restarts if n_starts is None else n_starts
    if n_random > 0:
        rng_seed = config.seed if seed is None else seed
        lhs = qmc.LatinHypercube(d=len(log_bounds), seed=rng_seed).random(n_random)
        starts.extend(log_bounds[:, 0] + lhs * (log_bounds[:, 1] - log_bounds[:, 0]))
    if not starts:
        raise ValueError("no starting points for hyperparameter optimisation")

    best = None
    for k, u0 in enumerate(starts):
        f0, _ = objective(u0)
        try:
            res = minimize(
                objective,
                u0,
                jac=True,
                method="L-BFGS-B",
                bounds=[tuple(b) for b in log_bounds],
                options={"maxiter": config.max_iter, "gtol": config.gtol},
            )
            u, f = res.x, res.fun
        except (ValueError, FloatingPointError) as exc:  # pragma: no cover
            logger.debug("restart %d failed: %s", k, exc)
            u, f = u0, f0
        if not f <= f0:
            u, f = u0, f0
        if f >= 1e25:
            continue
        # strict improvement keeps the lowest index on ties
        if best is None or f < best[1]:
            best = (u, f)
    if best is None:
        raise NumericalError("every restart failed to factorize the kernel matrix")
    u, _ = best
    value, _, beta = _profiled_terms(u, c, F, fit_nugget, fixed_nugget, sq, False)
    nugget = np.exp(u[1 + d]) if fit_nugget else fixed_nugget
    rho = beta[1] if has_trend else 0.0
    return GpHyperparameters(beta[0], np.exp(u[0]), np.exp(u[1 : 1 + d]), nugget), float(rho), float(value)


def _refine(A, L, r, x, steps=30):
    """Iterative refinement of ``A x = r`` preconditioned by a jittered factor ``L``.

    Removes the bias the jitter puts on the weights, so a zero-nugget model
    still interpolates its training targets. Stops once the residual no
    longer shrinks.
    """
    res = r - A @ x
    norm = np.abs(res).max()
    for _ in range(steps):
        cand = x + cho_solve((L, True), res)
        cand_res = r - A @ cand
        cand_norm = np.abs(cand_res).max()
        if not cand_norm < norm:
            break
        x, res, norm = cand, cand_res, cand_norm
    return x


class GPRegressor(RegressorMixin, BaseEstimator):
    """Gaussian process regressor with constant mean and ARD squared-exponential kernel.

    Parameters
    ----------
    n_restarts : int, default=8
        Latin-hypercube starting points for the likelihood search.
    length_scale_bounds : tuple, default=(1e-2, 1e1)
    signal_variance_bounds : tuple, default=(1e-4, 1e1)
        Relative to the target variance.
    nugget_bounds : tuple, default=(1e-10, 1e-1)
        Absolute lower bound, upper bound relative to the target variance.
    nugget : float or None, default=None
        Fixed nugget; ``None`` fits it.
    gtol : float, default=1e-6
    max_iter : int, default=200
    random_state : int, default=0
    hyperparameters : GpHyperparameters or None
        If given, ``fit`` skips the search and conditions on these values.

    Attributes
    ----------
    hyperparameters_ : GpHyperparameters
    alpha_ : ndarray, shape (n_samples,)
        ``(K + nugget I)^-1 (y - mean)``.
    L_ : ndarray
        Lower Cholesky factor of the regularised kernel matrix.
    jitter_ : float
        Extra diagonal added when the factorization needed it.
    log_marginal_likelihood_value_ : float
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
        hyperparameters=None,
    ):
        self.n_restarts = n_restarts
        self.length_scale_bounds = length_scale_bounds
        self.signal_variance_bounds = signal_variance_bounds
        self.nugget_bounds = nugget_bounds
        self.nugget = nugget
        self.gtol = gtol
        self.max_iter = max_iter
        self.random_state = random_state
        self.hyperparameters = hyperparameters

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

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if X.shape[0] < 2 and self.hyperparameters is None:
            raise ValueError("at least two training points are required to fit hyperparameters")
        if self.hyperparameters is None:
            h, _, _ = optimize_hyperparameters(X, y, self._fit_config())
        else:
            h = self.hyperparameters
            if h.dim != X.shape[1]:
                raise ValueError("hyperparameter dimension does not match X")
        self._condition(X, y, h)
        return self

    def _condition(self, X, y, h, jitter=None):
        self.X_train_ = np.array(X, dtype=float)
        self.y_train_ = np.array(y, dtype=float)
        self.n_features_in_ = X.shape[1]
        self.hyperparameters_ = h
        K = kernel_matrix(X, X, h.signal_variance, h.length_scales)
        Ky = K + h.nugget * np.eye(X.shape[0])
        if jitter is None:
            self.L_, self.jitter_ = cholesky_jitter(Ky, h.signal_variance)
        else:
            self.jitter_ = float(jitter)
            self.L_ = np.linalg.cholesky(Ky + self.jitter_ * np.eye(X.shape[0]))
        r = self.y_train_ - h.mean
        self.alpha_ = cho_solve((self.L_, True), r)
        if self.jitter_ > 0:
            self.alpha_ = _refine(Ky, self.L_, r, self.alpha_)
        self.log_marginal_likelihood_value_ = float(
            -np.sum(np.log(np.diag(self.L_))) - 0.5 * r @ self.alpha_ - 0.5 * X.shape[0] * _LOG_2PI
        )
        return self

    @classmethod
    def from_hyperparameters(cls, X, y, hyperparameters, jitter=None, **params):
        """Condition a GP on ``(X, y)`` with fixed hyperparameters."""
        model = cls(hyperparameters=hyperparameters, **params)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return model._condition(X, np.asarray(y, dtype=float).ravel(), hyperparameters, jitter)

    def _check_X(self, X):
        check_is_fitted(self, "alpha_")
        X = check_array(X, ensure_min_samples=0)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        return X

    def _cross(self, X):
        h = self.hyperparameters_
        return kernel_matrix(X, self.X_train_, h.signal_variance, h.length_scales)

    def predict(self, X, return_std=False):
        """Posterior mean (and standard deviation) at ``X``."""
        mean, var = self._mean_var(X, need_var=return_std)
        if return_std:
            return mean, np.sqrt(var)
        return mean

    def predict_var(self, X):
        """Posterior variance of the latent function at ``X``."""
        return self._mean_var(X, need_var=True)[1]

    def _mean_var(self, X, need_var=True):
        X = self._check_X(X)
        h = self.hyperparameters_
        Ks = self._cross(X)
        # row-wise sums keep predictions independent of the batch size
        mean = h.mean + np.sum(Ks * self.alpha_, axis=1)
        if not need_var:
            return mean, None
        v = solve_triangular(self.L_, Ks.T, lower=True)
        var = h.signal_variance - np.sum(v**2, axis=0)
        tol = NEGATIVE_VARIANCE_TOL * h.signal_variance
        if np.any(var < -tol):
            raise NumericalError(f"negative predictive variance {var.min():.3e}")
        var = np.clip(var, 0.0, h.signal_variance + h.nugget)
        return mean, var

    def predict_gradient(self, X):
        """Gradient of the posterior mean with respect to the inputs.

        Returns an array of shape ``(n_points, n_features)``.
        """
        X = self._check_X(X)
        h = self.hyperparameters_
        weighted = self._cross(X) * self.alpha_
        inv_l2 = 1.0 / h.length_scales**2
        # sum_n alpha_n k(x, x_n) (x_n - x) / l^2
        return (weighted @ self.X_train_ - weighted.sum(axis=1)[:, None] * X) * inv_l2

    def log_marginal_likelihood(self, hyperparameters=None, eval_gradient=False):
        check_is_fitted(self, "alpha_")
        h = self.hyperparameters_ if hyperparameters is None else hyperparameters
        return log_marginal_likelihood(self.X_train_, self.y_train_, h, eval_gradient)

    def to_dict(self):
        check_is_fitted(self, "alpha_")
        params = self.get_params()
        params.pop("hyperparameters")
        return {
            "kind": "gp",
            "params": {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()},
            "hyperparameters": self.hyperparameters_.to_dict(),
            "jitter": self.jitter_,
            "X": self.X_train_.tolist(),
            "y": self.y_train_.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        params = {k: tuple(v) if isinstance(v, list) else v for k, v in d["params"].items()}
        h = GpHyperparameters.from_dict(d["hyperparameters"])
        return cls.from_hyperparameters(d["X"], d["y"], h, jitter=d["jitter"], **params)
