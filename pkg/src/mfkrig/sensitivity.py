"""Active-subspace input reduction and Sobol variance decomposition."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DegenerateVarianceError
from .gp import GPRegressor

SOBOL_SLACK = 0.05


def _evaluator(surrogate):
    if hasattr(surrogate, "predict"):
        return surrogate.predict
    if callable(surrogate):
        return surrogate
    raise TypeError("surrogate must be callable or expose predict()")


def gradient_covariance(surrogate, n_samples=500, seed=0, dim=None):
    """Average outer product of surrogate gradients over the unit box.

    Parameters
    ----------
    surrogate : object with ``predict_gradient(X)``
    n_samples : int
        Number of uniform sample locations ``N1``; must be at least ``dim``.
    seed : int
    dim : int, optional
        Input dimension; read from ``surrogate.n_features_in_`` if omitted.

    Returns
    -------
    ndarray, shape (dim, dim)
    """
    if dim is None:
        dim = surrogate.n_features_in_
    if n_samples < dim:
        raise ValueError(f"need at least {dim} gradient samples, got {n_samples}")
    X = np.random.default_rng(seed).random((n_samples, dim))
    G = np.asarray(surrogate.predict_gradient(X), dtype=float)
    return G.T @ G / n_samples


@dataclass
class ActiveSubspaceResult:
    """Eigen-decomposition of a gradient covariance matrix.

    Eigenvalues are sorted in descending order; column ``k`` of
    ``eigenvectors`` belongs to ``eigenvalues[k]``.
    """

    covariance: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    n_active: int = None

    def captured_fraction(self, p=None):
        p = self.n_active if p is None else p
        total = self.eigenvalues.sum()
        if total <= 0:
            return 1.0 if p >= self.eigenvalues.size else 0.0
        return float(self.eigenvalues[:p].sum() / total)

    @property
    def cumulative_fraction(self):
        return np.array([self.captured_fraction(p) for p in range(1, self.eigenvalues.size + 1)])

    def components(self, p=None):
        p = self.n_active if p is None else p
        return self.eigenvectors[:, :p]


def eigendecompose(covariance, symmetry_tol=1e-8):
    """Descending eigenpairs; each eigenvector's largest-magnitude entry is positive."""
    C = np.asarray(covariance, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError("covariance must be a square matrix")
    scale = max(1.0, np.abs(C).max())
    if np.abs(C - C.T).max() > symmetry_tol * scale:
        raise ValueError("covariance matrix is not symmetric")
    C = 0.5 * (C + C.T)
    values, vectors = np.linalg.eigh(C)
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]
    if values.min() < -1e-10 * scale:
        raise ValueError("covariance matrix is not positive semi-definite")
    values = np.maximum(values, 0.0)
    pivot = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivot, np.arange(vectors.shape[1])])
    vectors = vectors * np.where(signs == 0, 1.0, signs)
    return ActiveSubspaceResult(C, values, vectors, n_active=C.shape[0])


def select_reduced_inputs(result, threshold=0.95, loading_cutoff=0.1, always_include=(-1,)):
    """Original coordinates that load on the retained active directions.

    The retained dimension ``p`` is the smallest with captured fraction at
    least ``threshold``. Coordinate ``m`` is kept when the sum of its squared
    loadings over the first ``p`` eigenvectors exceeds ``loading_cutoff``.
    Indices in ``always_include`` (default: the last coordinate, the wind
    angle) are kept regardless.

    Returns
    -------
    list of int
        Sorted coordinate indices. ``result.n_active`` is set to ``p``.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    d = result.eigenvalues.size
    if threshold >= 1.0:
        p = d
    else:
        cum = result.cumulative_fraction
        p = int(np.searchsorted(cum, threshold - 1e-12) + 1)
        p = min(p, d)
    result.n_active = p
    W = result.eigenvectors[:, :p]
    loadings = np.sum(W**2, axis=1)
    keep = set(np.flatnonzero(loadings > loading_cutoff).tolist())
    keep.update(k % d for k in always_include)
    return sorted(keep)


class ActiveSubspace(TransformerMixin, BaseEstimator):
    """Active subspace of a function sampled on the unit box.

    ``fit(X, y)`` trains a :class:`~mfkrig.gp.GPRegressor` on the samples,
    averages the outer products of its mean gradient at ``n_samples``
    uniform points and keeps the leading eigenvectors. ``transform``
    projects onto them; ``get_support`` gives the selected coordinates.
    A pre-fitted differentiable surrogate can be passed instead of
    training one.

    Parameters
    ----------
    n_samples : int, default=500
    threshold : float, default=0.95
    loading_cutoff : float, default=0.1
    always_include : tuple of int, default=(-1,)
    surrogate : object, optional
        Anything with ``predict_gradient``; ``y`` is ignored when given.
    gp_params : dict, optional
        Parameters for the bootstrap GP.
    random_state : int, default=0
    """

    def __init__(
        self,
        n_samples=500,
        threshold=0.95,
        loading_cutoff=0.1,
        always_include=(-1,),
        surrogate=None,
        gp_params=None,
        random_state=0,
    ):
        self.n_samples = n_samples
        self.threshold = threshold
        self.loading_cutoff = loading_cutoff
        self.always_include = always_include
        self.surrogate = surrogate
        self.gp_params = gp_params
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X)
        if self.surrogate is None:
            if y is None:
                raise ValueError("y is required when no surrogate is supplied")
            self.surrogate_ = GPRegressor(**(self.gp_params or {})).fit(X, y)
        else:
            self.surrogate_ = self.surrogate
        self.n_features_in_ = X.shape[1]
        cov = gradient_covariance(self.surrogate_, self.n_samples, self.random_state, X.shape[1])
        self.result_ = eigendecompose(cov)
        self.selected_ = select_reduced_inputs(
            self.result_, self.threshold, self.loading_cutoff, self.always_include
        )
        self.components_ = self.result_.components()
        self.eigenvalues_ = self.result_.eigenvalues
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X)
        return X @ self.components_

    def get_support(self, indices=False):
        check_is_fitted(self, "selected_")
        if indices:
            return np.array(self.selected_)
        mask = np.zeros(self.n_features_in_, dtype=bool)
        mask[self.selected_] = True
        return mask


@dataclass
class SobolResult:
    first_order: np.ndarray
    total: np.ndarray
    variance: float
    n_samples: int
    seed: int

    def ranking(self, exclude=()):
        """Coordinate indices by decreasing total index."""
        order = [k for k in np.argsort(-self.total, kind="stable") if k not in set(exclude)]
        return order


def sobol_indices(surrogate, dims, n_samples=4096, seed=0):
    """First-order and total Sobol indices by Jansen pick-freeze estimators.

    Inputs are uniform on ``[0, 1]^dims``. Two independent ``N x dims``
    matrices ``A`` and ``B`` and ``dims`` cross matrices (``A`` with column
    ``k`` taken from ``B``) cost ``(dims + 2) N`` evaluations.
    """
    if n_samples < 64:
        raise ValueError("at least 64 samples are required")
    f = _evaluator(surrogate)
    rng = np.random.default_rng(seed)
    A = rng.random((n_samples, dims))
    B = rng.random((n_samples, dims))
    cross = np.repeat(A[None, :, :], dims, axis=0)
    for k in range(dims):
        cross[k, :, k] = B[:, k]
    values = np.asarray(f(np.vstack([A, B, cross.reshape(-1, dims)])), dtype=float).ravel()
    fA = values[:n_samples]
    fB = values[n_samples : 2 * n_samples]
    fC = values[2 * n_samples :].reshape(dims, n_samples)
    var = float(np.var(np.concatenate([fA, fB])))
    spread = np.abs(np.concatenate([fA, fB])).max() if n_samples else 0.0
    if var <= 1e-24 * max(1.0, spread**2):
        raise DegenerateVarianceError("surrogate output has zero variance over the unit box")
    first = (var - 0.5 * np.mean((fB - fC) ** 2, axis=1)) / var
    total = 0.5 * np.mean((fA - fC) ** 2, axis=1) / var
    return SobolResult(first, total, var, n_samples, seed)


def response_surface(surrogate, axis_1, axis_2, resolution, fixed):
    """Mean predictions on a regular grid over two coordinates.

    Parameters
    ----------
    axis_1, axis_2 : int
        Varied coordinates (distinct).
    resolution : int or (int, int)
        Grid points along each axis, spanning ``[0, 1]``.
    fixed : array_like, shape (dim,)
        Values of every coordinate; entries on the two axes are ignored.

    Returns
    -------
    u, v : ndarray
        Axis coordinates.
    grid : ndarray, shape (len(u), len(v))
        ``grid[i, j]`` is the prediction at ``axis_1 = u[i]``, ``axis_2 = v[j]``.
    """
    if axis_1 == axis_2:
        raise ValueError("response-surface axes must differ")
    n1, n2 = (resolution, resolution) if np.isscalar(resolution) else resolution
    fixed = np.asarray(fixed, dtype=float)
    # a single grid point sits at the fixed value
    u = np.linspace(0.0, 1.0, n1) if n1 > 1 else fixed[[axis_1]]
    v = np.linspace(0.0, 1.0, n2) if n2 > 1 else fixed[[axis_2]]
    pts = np.tile(fixed, (n1 * n2, 1))
    pts[:, axis_1] = np.repeat(u, n2)
    pts[:, axis_2] = np.tile(v, n1)
    values = np.asarray(_evaluator(surrogate)(pts), dtype=float).reshape(n1, n2)
    return u, v, values
