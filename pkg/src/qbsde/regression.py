"""Least-squares conditional expectation on a total-degree polynomial basis.

Normal equations are assembled with ``np.einsum`` (no BLAS), so the result
does not depend on the BLAS thread count: the reduction order is fixed.
"""

import itertools
import warnings

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_2d_float
from .exceptions import RankDeficientWarning

RIDGE_PENALTY = 1e-10
# Relative eigenvalue floor below which the Gram matrix is treated as singular.
RANK_TOL = 1e-12


def monomial_exponents(n_features, degree):
    """Exponent tuples of all monomials of total degree <= ``degree``, constant first."""
    exps = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n_features), total):
            e = [0] * n_features
            for j in combo:
                e[j] += 1
            exps.append(tuple(e))
    return exps


def _design(Z, exponents):
    n, k = Z.shape
    top = max((max(e) for e in exponents if e), default=0)
    # powers[j][p] = Z[:, j] ** p by repeated multiplication
    powers = []
    for j in range(k):
        col = [None, Z[:, j]]
        for _ in range(2, top + 1):
            col.append(col[-1] * Z[:, j])
        powers.append(col)
    out = np.ones((n, len(exponents)))
    for c, e in enumerate(exponents):
        for j, p in enumerate(e):
            if p:
                out[:, c] *= powers[j][p]
    return out


class ConditionalExpectationRegressor(RegressorMixin, BaseEstimator):
    """Projection of targets onto polynomials of total degree <= ``degree`` in the state.

    State columns are standardized before the basis is built; columns that are
    constant across samples carry no information and are dropped, so a
    deterministic state reduces the fit to the sample mean.

    Parameters
    ----------
    degree : int
        Total polynomial degree of the basis.
    ridge : float
        Relative ridge penalty used when the Gram matrix is rank deficient.
    """

    def __init__(self, degree=2, ridge=RIDGE_PENALTY):
        self.degree = degree
        self.ridge = ridge

    def fit(self, X, y):
        X = as_2d_float(X, "X")
        y = np.asarray(y, dtype=np.float64)
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} samples but y has {y.shape[0]}")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains non-finite values")
        if isinstance(self.degree, bool) or int(self.degree) != self.degree or self.degree < 0:
            raise ValueError(f"degree must be a nonnegative integer, got {self.degree!r}")
        n = X.shape[0]
        self.n_features_in_ = X.shape[1]
        center = X.mean(axis=0)
        scale = X.std(axis=0)
        keep = scale > 1e-12 * np.maximum(1.0, np.abs(center))
        self.center_, self.scale_, self.keep_ = center, np.where(keep, scale, 1.0), keep
        self.exponents_ = monomial_exponents(int(keep.sum()), int(self.degree))
        phi = self._phi(X)
        p = phi.shape[1]
        if n < p + 1:
            raise ValueError(f"need at least {p + 1} samples for {p} basis functions, got {n}")
        gram = np.einsum("ni,nj->ij", phi, phi) / n
        rhs = np.einsum("ni,n...->i...", phi, y) / n
        eig = np.linalg.eigvalsh(gram)
        self.rank_deficient_ = bool(eig[0] <= RANK_TOL * eig[-1])
        if self.rank_deficient_:
            gram = gram + self.ridge * np.trace(gram) / p * np.eye(p)
        self.coef_ = np.linalg.solve(gram, rhs)
        self.fitted_ = self._apply(phi)
        self.residual_ = float(np.sqrt(np.mean(np.square(y - self.fitted_))))
        self._train = (phi, gram)
        return self

    def project(self, values):
        """In-sample projection of other targets onto the fitted basis.

        Reuses the training design and Gram matrix, so it equals refitting on
        the same ``X`` without recomputing the basis.
        """
        check_is_fitted(self, "coef_")
        phi, gram = self._train
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] != phi.shape[0]:
            raise ValueError(f"values have {values.shape[0]} rows, expected {phi.shape[0]}")
        coef = np.linalg.solve(gram, np.einsum("ni,n...->i...", phi, values) / phi.shape[0])
        if coef.ndim == 1:
            return np.einsum("np,p->n", phi, coef)
        return np.einsum("np,pk->nk", phi, coef)

    def _phi(self, X):
        Z = ((X - self.center_) / self.scale_)[:, self.keep_]
        return _design(Z, self.exponents_)

    def _apply(self, phi):
        if self.coef_.ndim == 1:
            return np.einsum("np,p->n", phi, self.coef_)
        return np.einsum("np,pk->nk", phi, self.coef_)

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = as_2d_float(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self._apply(self._phi(X))


def regress_condexp(targets, state, basis_degree=2):
    """Fitted conditional expectation of ``targets`` given ``state`` and the RMS residual.

    Emits :class:`RankDeficientWarning` when the ridge fallback was needed.
    """
    reg = ConditionalExpectationRegressor(degree=basis_degree).fit(state, targets)
    if reg.rank_deficient_:
        warnings.warn("rank-deficient regression; ridge penalty applied", RankDeficientWarning, stacklevel=2)
    return reg.fitted_, reg.residual_
