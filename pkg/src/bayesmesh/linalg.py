"""Sparse kernels for the solver: thin QR of tall sparse matrices and CGLS.

Sparse storage and matrix-vector products are delegated to scipy.sparse CSR.
The thin QR is computed by the CholeskyQR2 scheme: R from the Cholesky factor
of the normal equations, refined once, with Q kept implicit as L R^-1.  Two
passes bring the orthogonality error down to machine level for the moderately
conditioned incidence systems appearing here, and the factorization is
deterministic for a fixed input.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp


class FactorizationError(Exception):
    """Raised when a matrix turns out to be numerically rank deficient."""


class NumericalError(Exception):
    """Raised when an iteration produces non-finite values."""


def spmv(A, x):
    """Sparse matrix-vector product with an explicit dimension check."""
    if A.shape[1] != np.shape(x)[0]:
        raise ValueError(f"dimension mismatch: {A.shape} @ {np.shape(x)}")
    return A @ np.asarray(x, dtype=float)


def spmv_t(A, y):
    """Transpose product A^T y with an explicit dimension check."""
    if A.shape[0] != np.shape(y)[0]:
        raise ValueError(f"dimension mismatch: {A.shape}^T @ {np.shape(y)}")
    return A.T @ np.asarray(y, dtype=float)


@dataclass
class ThinQR:
    """Implicit thin QR factorization A = Q R, Q = A R^-1.

    R is a dense upper triangular n x n factor; Q is never formed, all four
    application routines go through triangular solves and sparse products.
    """

    A: sp.csr_matrix
    R: np.ndarray

    @property
    def shape(self):
        return self.A.shape

    def r_solve(self, y):
        """R^-1 y."""
        return sla.solve_triangular(self.R, y, lower=False)

    def rt_solve(self, y):
        """R^-T y."""
        return sla.solve_triangular(self.R, y, lower=False, trans="T")

    def q(self, x):
        """Q x = A R^-1 x."""
        return self.A @ self.r_solve(x)

    def qt(self, y):
        """Q^T y = R^-T A^T y."""
        return self.rt_solve(self.A.T @ y)

    def q_matrix(self):
        """Dense Q, for diagnostics on small problems."""
        return np.asarray((self.A @ sla.solve_triangular(
            self.R, np.eye(self.R.shape[0]), lower=False)))


def sparse_qr_thin(A) -> ThinQR:
    """Thin QR of a tall full-column-rank sparse matrix via CholeskyQR2."""
    A = sp.csr_matrix(A, dtype=float)
    m, n = A.shape
    if m < n:
        raise ValueError("matrix must be tall (m >= n)")
    G = (A.T @ A).toarray()
    scale = np.sqrt(max(np.max(np.abs(np.diag(G))), np.finfo(float).tiny))
    try:
        R1 = sla.cholesky(G, lower=False)
    except sla.LinAlgError as exc:
        raise FactorizationError("rank-deficient matrix in thin QR") from exc
    if np.min(np.abs(np.diag(R1))) <= 1e-10 * scale:
        raise FactorizationError("rank-deficient matrix in thin QR")
    # second pass: G2 = (A R1^-1)^T (A R1^-1) = R1^-T G R1^-1
    T = sla.solve_triangular(R1, G.T, lower=False, trans="T")
    G2 = sla.solve_triangular(R1, T.T, lower=False, trans="T")
    G2 = 0.5 * (G2 + G2.T)
    R2 = sla.cholesky(G2, lower=False)
    R = R2 @ R1
    return ThinQR(A=A, R=np.ascontiguousarray(R))


@dataclass
class CglsResult:
    w: np.ndarray
    iterations: int
    stop_reason: str          # discrepancy | objective-increase | gradient | max-iter
    residual_norms: list = field(default_factory=list)
    objective_values: list = field(default_factory=list)


def cgls_solve(A_apply, At_apply, b, m, max_iter=200,
               objective_rule=True, gradient_tol=0.0) -> CglsResult:
    """CGLS on b = A w with the discrepancy / objective stopping rules.

    Starts from w = 0 and stops at the first iterate with ||b - A w||^2 < m
    (Morozov, data dimension m as the expected squared noise norm), or returns
    the previous iterate once the regularized objective ||b - A w||^2 + ||w||^2
    increases, or at max_iter.

    objective_rule=False disables the second rule (used when A is already an
    augmented regularized system whose residual is the full objective);
    gradient_tol > 0 additionally stops once ||A^T r|| falls below
    gradient_tol times its initial value.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    b = np.asarray(b, dtype=float)
    w = np.zeros_like(At_apply(b))
    r = b.copy()
    rn = float(np.linalg.norm(r))
    residual_norms = [rn]
    objective_values = [rn * rn]
    if rn * rn < m:
        return CglsResult(w, 0, "discrepancy", residual_norms, objective_values)

    s = At_apply(r)
    p = s.copy()
    gamma = float(s @ s)
    gamma0 = gamma
    for k in range(1, max_iter + 1):
        q = A_apply(p)
        qq = float(q @ q)
        if qq == 0.0:
            return CglsResult(w, k - 1, "objective-increase",
                              residual_norms, objective_values)
        alpha = gamma / qq
        w_new = w + alpha * p
        r_new = r - alpha * q
        if not (np.all(np.isfinite(w_new)) and np.all(np.isfinite(r_new))):
            raise NumericalError(f"non-finite CGLS iterate at iteration {k}")
        rn = float(np.linalg.norm(r_new))
        obj = rn * rn + float(w_new @ w_new)
        # discrepancy rule is checked first; the objective rule keeps w_k
        if rn * rn < m:
            residual_norms.append(rn)
            objective_values.append(obj)
            return CglsResult(w_new, k, "discrepancy",
                              residual_norms, objective_values)
        if objective_rule and obj > objective_values[-1]:
            return CglsResult(w, k - 1, "objective-increase",
                              residual_norms, objective_values)
        w, r = w_new, r_new
        residual_norms.append(rn)
        objective_values.append(obj)
        s = At_apply(r)
        gamma_new = float(s @ s)
        if gradient_tol > 0.0 and gamma_new <= gradient_tol ** 2 * gamma0:
            return CglsResult(w, k, "gradient", residual_norms, objective_values)
        if gamma == 0.0:
            # exact normal-equations solution reached on the previous step
            return CglsResult(w, k, "gradient", residual_norms, objective_values)
        beta = gamma_new / gamma
        gamma = gamma_new
        p = s + beta * p
    return CglsResult(w, max_iter, "max-iter", residual_norms, objective_values)
