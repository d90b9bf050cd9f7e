"""Sampling from the sparse information form at O(L^3) cost.

With ``V = D^{-1/2} (Ua kron Ug) diag(lam)^{1/2}`` the covariance is
``D^{-1/2} (I + V V^T)^{-1} D^{-1/2}``. The factor construction
``W = I + V C V^T`` with ``C = A^{-T} (B - I) A^{-1}`` (``A A^T = V^T V``,
``B B^T = A^T A + I``) gives ``W W^T = I + V V^T``, so
``F = D^{-1/2} W^{-T} = D^{-1/2} (I - V Lc^T V^T)`` with
``Lc = (C^{-1} + V^T V)^{-1}`` satisfies ``F F^T = Sigma``. (``C`` is not
symmetric, so ``W^{-1}`` in place of ``W^{-T}`` would be wrong.) Nothing of size
``N x N`` is ever formed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import _accel
from .kronlin import PositiveDefinitenessViolation, cholesky, kron_apply
from .sparse import SparseInfoForm


COND_FLOOR = 1e-12


@dataclass(frozen=True)
class SamplerState:
    Ua: np.ndarray
    Ug: np.ndarray
    lam: np.ndarray  # active eigenvalues only, length L'
    active: np.ndarray  # bool mask over the a*g grid
    free: np.ndarray  # bool mask over the N parameters
    theta_map: np.ndarray
    D: np.ndarray  # free entries used; fixed ones are ignored
    D_isqrt: np.ndarray  # 0 on fixed parameters
    V_s_gram: np.ndarray
    A_c: np.ndarray | None  # None when the eigen fallback was used
    B_c: np.ndarray  # chol(V^T V + I): Woodbury solves for variances
    B_f: np.ndarray | None  # chol(A_c^T A_c + I): the symmetric-factor construction
    C: np.ndarray | None
    Lc: np.ndarray
    P_c: np.ndarray
    provenance: dict

    @property
    def N(self) -> int:
        return self.D.shape[0]

    @property
    def L(self) -> int:
        return self.lam.shape[0]

    # -- low-rank maps restricted to free rows and active columns ------------

    def _U(self, z: np.ndarray) -> np.ndarray:
        full = np.zeros(z.shape[:-1] + (self.active.shape[0],))
        full[..., self.active] = z
        return kron_apply(self.Ua, self.Ug, full) * self.free

    def _Ut(self, x: np.ndarray) -> np.ndarray:
        return kron_apply(self.Ua, self.Ug, x * self.free, transpose=True)[..., self.active]


def _hash_arrays(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _cholesky_pieces(M, s):
    """Factor pieces through ``A = chol(V^T V)``; needs ``V`` of full column rank.

    The inner Cholesky ``B_f`` factorises ``A^T A + I``; only then does
    ``C = A^{-T} (B_f - I) A^{-1}`` satisfy ``C + C^T + C (V^T V) C^T = I``,
    i.e. ``W W^T = I + V V^T``. (``A^T A`` and ``A A^T = V^T V`` share their
    spectrum but are different matrices.)
    """
    L = s.shape[0]
    eye = np.eye(L)
    # chol(S M S) = S chol(M); factorising M keeps tiny eigenvalues from
    # wrecking the relative accuracy of A_c
    A_unit = cholesky(M)
    piv = np.diag(A_unit)
    if piv.min() ** 2 < COND_FLOOR * piv.max() ** 2:
        # numerically rank deficient: triangular inverses would lose all accuracy
        raise PositiveDefinitenessViolation(int(np.argmin(piv)), M.shape[0])
    A_c = s[:, None] * A_unit
    B_f = cholesky(A_c.T @ A_c + eye)
    # (C^{-1} + A A^T)^{-1} = A^{-T} (I - B_f^{-1}) A^{-1}; with A = S A_unit
    # the lam scaling cancels inside P_c = S Lc S.
    I_minus_Binv = eye - solve_triangular(B_f, eye, lower=True)
    Ainv_unit = solve_triangular(A_unit, eye, lower=True)
    P_c = Ainv_unit.T @ I_minus_Binv @ Ainv_unit
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        Lc = P_c / s[:, None] / s[None, :]
        Ainv = Ainv_unit / s[None, :]
        C = Ainv.T @ (B_f - eye) @ Ainv
    return P_c, A_c, B_f, C, Lc


def _eigen_pieces(gram, s):
    """Same factor when ``V`` is rank deficient (fewer free rows than columns).

    In the eigenbasis ``V^T V = Q diag(e) Q^T`` the inner matrix is diagonal,
    ``(1 - 1/sqrt(1 + e)) / e``; null directions of ``V`` never reach the
    output, so their entry (the limit 1/2) is immaterial.
    """
    e, Q = np.linalg.eigh(gram)
    e = np.maximum(e, 0.0)
    small = e < 1e-12
    safe = np.where(small, 1.0, e)
    phi = np.where(small, 0.5, (1.0 - 1.0 / np.sqrt(1.0 + safe)) / safe)
    Lc = (Q * phi) @ Q.T
    P_c = s[:, None] * Lc * s[None, :]
    return P_c, Lc


def build_sampler(form: SparseInfoForm, theta_map) -> SamplerState:
    """Precompute the L x L Woodbury pieces for a validated sparse form.

    Raises:
        ValueError: if a free ``D`` entry or an active eigenvalue is not positive.
        PositiveDefinitenessViolation: if ``V^T V + I`` fails to factorise.

    ``A = chol(V^T V)`` exists only when the low-rank basis restricted to the
    free rows has full column rank; otherwise the inner factor is built from
    an eigendecomposition of ``V^T V`` (recorded in ``provenance``).
    """
    theta_map = np.asarray(theta_map, dtype=float)
    if theta_map.shape != (form.N,):
        raise ValueError(f"theta_map must have length {form.N}")
    free = np.asarray(form.free, dtype=bool)
    active = np.asarray(form.active, dtype=bool)
    if np.any(form.D[free] <= 0.0):
        raise ValueError("D must be positive on free parameters; run check_validity first")
    lam = form.lam_L[active]
    if np.any(lam <= 0.0):
        raise ValueError("active eigenvalues must be positive; run check_validity first")

    D = np.where(free, form.D, 1.0)
    w = np.where(free, 1.0 / D, 0.0)
    # U^T D^{-1} U over free rows; V_s^T V_s is its diagonal rescaling by lam^{1/2}
    M = _accel.kron_gram(
        np.ascontiguousarray(form.Ua), np.ascontiguousarray(form.Ug), np.ascontiguousarray(w.reshape(form.n, form.m))
    )[np.ix_(active, active)]
    M = 0.5 * (M + M.T)
    s = np.sqrt(lam)
    gram = s[:, None] * M * s[None, :]
    L = lam.shape[0]
    eye = np.eye(L)
    B_c = cholesky(gram + eye)
    try:
        P_c, A_c, B_f, C, Lc = _cholesky_pieces(M, s)
        method = "cholesky"
    except PositiveDefinitenessViolation:
        P_c, Lc = _eigen_pieces(gram, s)
        A_c = B_f = C = None
        method = "eigen"

    provenance = {
        "form_hash": _hash_arrays(form.Ua, form.Ug, form.lam_L, form.D, active, free),
        "theta_map_hash": _hash_arrays(theta_map),
        "L": int(L),
        "N": int(form.N),
        "factorization": method,
    }
    return SamplerState(
        Ua=form.Ua,
        Ug=form.Ug,
        lam=lam,
        active=active,
        free=free,
        theta_map=theta_map,
        D=D,
        D_isqrt=np.where(free, 1.0 / np.sqrt(D), 0.0),
        V_s_gram=gram,
        A_c=A_c,
        B_c=B_c,
        B_f=B_f,
        C=C,
        Lc=Lc,
        P_c=P_c,
        provenance=provenance,
    )


def apply_factor(state: SamplerState, x) -> np.ndarray:
    """``F^c x`` for a vector (or batch of row vectors) of length N.

    ``W = I + V C V^T`` satisfies ``W W^T = I + V V^T`` but, because the
    Cholesky-built ``C`` is not symmetric, not ``W^T W``; the factor is
    therefore ``D^{-1/2} W^{-T} = D^{-1/2} (I - V Lc^T V^T)``. Row vectors
    times ``P_c`` apply exactly that transpose.
    """
    x_d = np.asarray(x, dtype=float) * state.D_isqrt
    z = state._Ut(x_d) @ state.P_c
    return x_d - state._U(z) / state.D


def draw(state: SamplerState, rng: np.random.Generator | None = None, noise=None, size: int | None = None) -> np.ndarray:
    """``theta_map + F^c X`` with X standard normal.

    Each draw consumes exactly N variates from ``rng`` (fixed parameters
    included, their variates are discarded). Pass ``noise`` to supply X
    directly. ``size`` returns a (size, N) batch.
    """
    if noise is None:
        if rng is None:
            raise ValueError("need an rng or explicit noise")
        shape = (state.N,) if size is None else (size, state.N)
        noise = rng.standard_normal(shape)
    return state.theta_map + apply_factor(state, noise)


def quad_form(state: SamplerState, J) -> np.ndarray:
    """``J^T Sigma J`` per row of ``J`` (shape (..., N)) via the B_c factor."""
    J = np.asarray(J, dtype=float)
    j = J * state.D_isqrt
    u = state._Ut(j * state.D_isqrt) * np.sqrt(state.lam)
    t = solve_triangular(state.B_c, np.atleast_2d(u).T, lower=True)
    out = np.sum(j * j, axis=-1) - np.sum(t * t, axis=0).reshape(np.shape(J)[:-1])
    return np.maximum(out, 0.0)


def marginal_var(state: SamplerState, block_rows: int | None = None) -> np.ndarray:
    """Diagonal of the covariance; fixed parameters get exactly zero.

    Rows of the low-rank basis are built one A-side index at a time, so the
    largest temporary is ``m x L``.
    """
    n, m = state.Ua.shape[0], state.Ug.shape[0]
    out = np.empty(n * m)
    s = np.sqrt(state.lam)
    for alpha in range(n):
        rows = np.kron(state.Ua[alpha][None, :], state.Ug)[:, state.active] * s  # (m, L)
        sl = slice(alpha * m, (alpha + 1) * m)
        d = state.D[sl]
        t = solve_triangular(state.B_c, (rows / np.sqrt(d)[:, None]).T, lower=True)
        out[sl] = (1.0 - np.sum(t * t, axis=0)) / d
    return np.where(state.free, np.maximum(out, 0.0), 0.0)


def marginal_std(state: SamplerState) -> np.ndarray:
    return np.sqrt(marginal_var(state))


def factor_matrix(state: SamplerState) -> np.ndarray:
    """Materialised ``F^c`` (N x N). Desk-scale oracle only."""
    return apply_factor(state, np.eye(state.N)).T
