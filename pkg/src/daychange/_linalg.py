"""Symmetric positive-definite solves shared by the test statistics.

All quadratic forms in the package go through :class:`Precision`, which wraps
a single factorization of a covariance matrix.  Diagonal matrices take an
elementwise fast path; everything else uses one lower Cholesky factor.  No
explicit inverse is ever formed; failure of the factorization is the sole
positive-definiteness criterion (no eigenvalue thresholding).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import NotPositiveDefiniteError


def cholesky_factor(mat: np.ndarray, context: str = "") -> np.ndarray:
    """Lower Cholesky factor, raising a semantic error on failure."""
    try:
        return scipy.linalg.cholesky(mat, lower=True)
    except scipy.linalg.LinAlgError:
        min_eig = float(np.linalg.eigvalsh(mat)[0])
        where = f" in {context}" if context else ""
        raise NotPositiveDefiniteError(
            f"matrix{where} is not numerically positive-definite "
            f"(smallest eigenvalue {min_eig:.6g})",
            min_eigenvalue=min_eig,
        ) from None


def is_diagonal(mat: np.ndarray) -> bool:
    return np.count_nonzero(mat - np.diag(np.diagonal(mat))) == 0


class Precision:
    """Operator view of ``A = sigma^{-1}`` from one factorization."""

    def __init__(self, sigma: np.ndarray, context: str = ""):
        sigma = np.asarray(sigma, dtype=float)
        self.p = sigma.shape[0]
        if is_diagonal(sigma):
            d = np.diagonal(sigma).copy()
            if np.any(d <= 0.0):
                min_eig = float(d.min())
                raise NotPositiveDefiniteError(
                    f"diagonal matrix{' in ' + context if context else ''} has "
                    f"non-positive entry (smallest eigenvalue {min_eig:.6g})",
                    min_eigenvalue=min_eig,
                )
            self._diag = d
            self._chol = None
        else:
            self._diag = None
            self._chol = cholesky_factor(sigma, context)

    def solve(self, x: np.ndarray) -> np.ndarray:
        """A @ x for a vector or a p-by-n block of columns."""
        if self._diag is not None:
            if x.ndim == 1:
                return x / self._diag
            return x / self._diag[:, None]
        return scipy.linalg.cho_solve((self._chol, True), x)

    def quad(self, x: np.ndarray) -> float:
        """x^T A x."""
        if self._diag is not None:
            return float(np.sum(x * x / self._diag))
        z = scipy.linalg.solve_triangular(self._chol, x, lower=True)
        return float(np.dot(z, z))

    @property
    def trace_inv(self) -> float:
        """tr(A)."""
        if self._diag is not None:
            return float(np.sum(1.0 / self._diag))
        w = scipy.linalg.solve_triangular(
            self._chol, np.eye(self.p), lower=True
        )
        return float(np.sum(w * w))

    @property
    def trace_inv_sq(self) -> float:
        """tr(A^2)."""
        if self._diag is not None:
            return float(np.sum(1.0 / self._diag**2))
        w = scipy.linalg.solve_triangular(
            self._chol, np.eye(self.p), lower=True
        )
        a = w.T @ w
        return float(np.sum(a * a))


def as_precision(sigma, context: str = "") -> Precision:
    """Pass through an existing Precision or factor a matrix."""
    if isinstance(sigma, Precision):
        return sigma
    return Precision(sigma, context)
