"""SPD linear systems with reusable factorization and rotation-variant 3x3 SVD."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse

# Singular values below this magnitude are clamped (sign preserved) so that
# stress evaluation never divides by an exactly singular stretch.
SIGMA_CLAMP = 1e-10

# Global counter used by tests to assert "factor once, solve many".
FACTORIZE_COUNT = 0


class FactorizationError(Exception):
    """Raised when a matrix handed to factorize_spd is not positive definite."""


class Factorization:
    """Cholesky factorization handle; immutable, supports unlimited solves."""

    def __init__(self, A: np.ndarray):
        A = np.ascontiguousarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise FactorizationError(f"expected square matrix, got shape {A.shape}")
        try:
            self._chol = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise FactorizationError(f"matrix is not positive definite: {exc}") from exc
        self.n = A.shape[0]

    def solve(self, B: np.ndarray) -> np.ndarray:
        B = np.asarray(B, dtype=np.float64)
        if B.shape[0] != self.n:
            raise ValueError(f"rhs has {B.shape[0]} rows, factorization has dimension {self.n}")
        return scipy.linalg.cho_solve(self._chol, B, check_finite=False)


def factorize_spd(A) -> Factorization:
    """Factor a symmetric positive definite matrix (dense or scipy sparse).

    The factoring cost is paid once; the returned handle is reused for all
    subsequent solves of the scenario.
    """
    global FACTORIZE_COUNT
    if scipy.sparse.issparse(A):
        A = A.toarray()
    fact = Factorization(A)
    FACTORIZE_COUNT += 1
    return fact


def solve_prefactored(F: Factorization, B: np.ndarray) -> np.ndarray:
    """Solve A X = B column-by-column against a prefactorized matrix."""
    return F.solve(B)


@dataclass(frozen=True)
class RotVarSVD:
    """Rotation-variant SVD: U, V are proper rotations; any reflection sits in sigma[2]."""

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray


def svd_rv(F: np.ndarray) -> RotVarSVD:
    """Rotation-variant SVD of a single 3x3 matrix.

    Returns proper rotations U, V (det = +1) and stretches sigma with
    sigma[0] >= sigma[1] >= |sigma[2]|; det(F) < 0 yields sigma[2] < 0.
    """
    F = np.asarray(F, dtype=np.float64)
    if F.shape != (3, 3):
        raise ValueError(f"expected 3x3 matrix, got {F.shape}")
    if not np.all(np.isfinite(F)):
        raise ValueError("non-finite entries in input matrix")
    U, s, V = svd_rv_batch(F[None])
    return RotVarSVD(U[0], s[0], V[0])


def svd_rv_batch(F: np.ndarray):
    """Vectorized rotation-variant SVD of a stack of 3x3 matrices.

    Returns (U, sigma, V) with shapes (m,3,3), (m,3), (m,3,3).
    """
    F = np.asarray(F, dtype=np.float64)
    U, s, Vt = np.linalg.svd(F)
    V = np.swapaxes(Vt, -1, -2)

    # Push reflections into the last column / smallest singular value.
    detU = np.linalg.det(U)
    flipU = detU < 0
    U[flipU, :, 2] *= -1.0
    s[flipU, 2] *= -1.0
    detV = np.linalg.det(V)
    flipV = detV < 0
    V[flipV, :, 2] *= -1.0
    s[flipV, 2] *= -1.0

    # Clamp near-zero stretches in magnitude, keeping the sign.
    small = np.abs(s) < SIGMA_CLAMP
    if np.any(small):
        signs = np.where(s[small] < 0, -1.0, 1.0)
        s[small] = signs * SIGMA_CLAMP
    return U, s, V
