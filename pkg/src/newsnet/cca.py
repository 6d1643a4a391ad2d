"""Closed-form linear CCA estimator.

Fits paired projection matrices that maximize cross-view correlation, via
whitening with symmetric-eigendecomposition inverse square roots and an
SVD of the whitened cross-covariance.  Doubles as the shallow retrieval
learner and as the independent oracle for the batch correlation loss in
:mod:`newsnet.losses`; the two implementations deliberately share no code.

Follows the scikit-learn estimator conventions: arrays are (n_samples,
n_features), fitted attributes carry a trailing underscore.
"""

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ConfigError, DataError, NumericalError


def _sym_inv_sqrt(cov, side):
    vals, vecs = np.linalg.eigh(cov)
    bad = np.min(vals)
    if bad <= 0.0:
        raise NumericalError(
            f"{side} covariance not positive definite after regularization "
            f"(min eigenvalue {bad:.3e})"
        )
    return vecs @ np.diag(vals ** -0.5) @ vecs.T


def _deterministic_signs(u, vt):
    lead = np.abs(u).argmax(axis=0)
    flip = np.sign(u[lead, np.arange(u.shape[1])])
    flip[flip == 0.0] = 1.0
    return u * flip, flip[:, None] * vt


class LinearCca(BaseEstimator):
    """Canonical correlation analysis between two data views.

    Parameters
    ----------
    n_components : int or None
        Number of canonical pairs to keep; defaults to min(d_x, d_y).
    reg_eps : float
        Ridge added to both view covariances before inversion.
    """

    def __init__(self, n_components=None, reg_eps=1e-6):
        self.n_components = n_components
        self.reg_eps = reg_eps

    def fit(self, X, Y):
        """Fit projections from paired samples X (n, d_x) and Y (n, d_y)."""
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if X.ndim != 2 or Y.ndim != 2:
            raise ConfigError("X and Y must be 2-d (n_samples, n_features)")
        if X.shape[0] != Y.shape[0]:
            raise DataError(
                f"views have different sample counts: {X.shape[0]} vs {Y.shape[0]}"
            )
        n = X.shape[0]
        if n < 3:
            raise DataError("CCA needs at least 3 paired samples")
        if self.reg_eps <= 0:
            raise ConfigError("reg_eps must be positive")
        k_max = min(X.shape[1], Y.shape[1])
        k = k_max if self.n_components is None else int(self.n_components)
        if not 1 <= k <= k_max:
            raise ConfigError(f"n_components must be in [1, {k_max}], got {k}")

        self.x_mean_ = X.mean(axis=0)
        self.y_mean_ = Y.mean(axis=0)
        xc = X - self.x_mean_
        yc = Y - self.y_mean_
        denom = n - 1.0
        cov_xx = xc.T @ xc / denom + self.reg_eps * np.eye(X.shape[1])
        cov_yy = yc.T @ yc / denom + self.reg_eps * np.eye(Y.shape[1])
        cov_xy = xc.T @ yc / denom

        isq_x = _sym_inv_sqrt(cov_xx, "text-view")
        isq_y = _sym_inv_sqrt(cov_yy, "image-view")
        u, sing, vt = np.linalg.svd(isq_x @ cov_xy @ isq_y, full_matrices=False)
        u, vt = _deterministic_signs(u, vt)

        self.correlations_ = np.clip(sing[:k], 0.0, 1.0)
        self.W_x_ = isq_x @ u[:, :k]
        self.W_y_ = isq_y @ vt[:k].T
        self.singular_values_ = sing
        return self

    def _check_fitted(self):
        if not hasattr(self, "W_x_"):
            raise ConfigError("LinearCca instance is not fitted yet")

    def transform(self, X, view="text"):
        """Project centered samples of one view into canonical space (n, k)."""
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        squeeze = X.ndim == 1
        if squeeze:
            X = X[None, :]
        if view == "text":
            w, mean = self.W_x_, self.x_mean_
        elif view == "image":
            w, mean = self.W_y_, self.y_mean_
        else:
            raise ConfigError(f"view must be 'text' or 'image', got {view!r}")
        if X.shape[1] != mean.shape[0]:
            raise DataError(
                f"{view} view expects {mean.shape[0]} features, got {X.shape[1]}"
            )
        out = (X - mean) @ w
        return out[0] if squeeze else out

    def total_correlation(self, k=None):
        """Sum of the top-k canonical correlations."""
        self._check_fitted()
        if k is None:
            return float(np.sum(self.correlations_))
        return float(np.sum(self.correlations_[:k]))
