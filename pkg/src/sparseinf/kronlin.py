"""Dense linear algebra helpers that know about Kronecker structure.

Index conventions follow the column-stacking ``vec`` of a weight matrix
``W`` of shape ``(m, n)``: entry ``W[gamma, alpha]`` lands at position
``i = m * (alpha - 1) + gamma`` (1-based). With 0-based numpy indexing that is
``i = m * alpha + gamma``, i.e. ``vec(W) == W.T.ravel()``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import _accel


class PositiveDefinitenessViolation(np.linalg.LinAlgError):
    """Raised when a Cholesky factorisation meets a non-positive pivot.

    ``pivot`` is the 0-based row at which the recursion broke down.
    """

    def __init__(self, pivot: int, size: int):
        self.pivot = pivot
        self.size = size
        super().__init__(f"matrix is not positive definite: pivot {pivot} of {size} is not > 0")


class EigenDecompositionError(np.linalg.LinAlgError):
    def __init__(self, message: str, residual: float = float("nan")):
        self.residual = residual
        super().__init__(f"{message} (relative residual {residual:.3e})")


class EigPair(NamedTuple):
    vectors: np.ndarray
    values: np.ndarray


def _check_square(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


def sym_eig(M, psd: bool = False, psd_tol: float = 1e-10) -> EigPair:
    """Eigendecomposition of a symmetric matrix, eigenvalues in descending order.

    Ties keep the solver's original order, so repeated calls on the same
    input give the same basis. With ``psd=True``
    eigenvalues in ``[-psd_tol * scale, 0)`` are clamped to zero; anything more
    negative raises.
    """
    M = _check_square(M)
    if not np.array_equal(M, M.T):
        raise ValueError("sym_eig expects an exactly symmetric matrix")
    try:
        w, V = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK non-convergence
        raise EigenDecompositionError(f"eigh did not converge: {exc}") from exc
    order = np.argsort(-w, kind="stable")
    w = w[order]
    V = V[:, order]

    scale = max(np.linalg.norm(M), 1.0)
    resid = np.linalg.norm(V * w @ V.T - M) / scale
    if not resid <= 1e-8:
        raise EigenDecompositionError("eigendecomposition failed to reconstruct input", resid)
    if psd:
        floor = -psd_tol * scale
        if w[-1] < floor:
            raise ValueError(f"matrix is not PSD: smallest eigenvalue {w[-1]:.3e}")
        w = np.where(w < 0.0, 0.0, w)
    return EigPair(V, w)


def cholesky(M) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == M``.

    Raises:
        PositiveDefinitenessViolation: on the first non-positive pivot.
    """
    M = _check_square(M)
    Lf, bad = _accel.cholesky_kernel(np.ascontiguousarray(M))
    if bad >= 0:
        raise PositiveDefinitenessViolation(int(bad), M.shape[0])
    return Lf


def kron_row_index(alpha: int, gamma: int, m: int, n: int | None = None) -> int:
    """1-based row of ``U_A kron U_G`` built from A-row ``alpha`` and G-row ``gamma``."""
    if m < 1 or not 1 <= gamma <= m or alpha < 1 or (n is not None and alpha > n):
        raise ValueError(f"index out of range: alpha={alpha}, gamma={gamma}, m={m}, n={n}")
    return m * (alpha - 1) + gamma


def kron_row_inverse(i: int, m: int, n: int | None = None) -> tuple[int, int]:
    """Split a 1-based Kronecker index into its (A-side, G-side) 1-based pair.

    Uses ``beta = (i - 1) // m + 1`` so that ``zeta`` stays in ``1..m`` when
    ``m`` divides ``i``.
    """
    if m < 1 or i < 1 or (n is not None and i > n * m):
        raise ValueError(f"index out of range: i={i}, m={m}, n={n}")
    beta = (i - 1) // m + 1
    return beta, i - m * (beta - 1)


def kron_apply(U_left, U_right, x, transpose: bool = False) -> np.ndarray:
    """Apply ``(U_left kron U_right)`` or its transpose to ``x`` without forming it.

    ``U_left`` is ``(n, a)`` and ``U_right`` is ``(m, g)``. Without
    ``transpose`` the input has length ``a*g`` and the output ``n*m``; with
    ``transpose`` the other way round. Leading batch dimensions of ``x`` are
    carried through.
    """
    U_left = np.asarray(U_left, dtype=float)
    U_right = np.asarray(U_right, dtype=float)
    x = np.asarray(x, dtype=float)
    n, a = U_left.shape
    m, g = U_right.shape
    if transpose:
        rows, cols, Ul, Ur = n, m, U_left.T, U_right.T
    else:
        rows, cols, Ul, Ur = a, g, U_left, U_right
    if x.shape[-1] != rows * cols:
        raise ValueError(f"vector length {x.shape[-1]} does not match {rows}*{cols}")
    X = x.reshape(x.shape[:-1] + (rows, cols))
    # vec(U_r X U_l^T) in column-major terms is (U_l X^T U_r^T) in our row-major grid
    Y = Ul @ X @ Ur.T
    return Y.reshape(x.shape[:-1] + (-1,))
