"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment variable
``SPARSEINF_NO_NUMBA`` is unset (or ``0``), for the kernels where it beats the
numpy form. Both implementations are always
importable under ``*_numpy`` / ``*_numba`` names so they can be compared
against each other in tests and in ``benchmarks/bench_kernels.py``.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("SPARSEINF_NO_NUMBA", "0") in ("", "0")


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# diagonal of (UA x UG) diag(lam) (UA x UG)^T
# ---------------------------------------------------------------------------


def efb_diag_numpy(UA, UG, lam):
    """``lam`` is the (a, g) eigenvalue grid; returns the (n, m) diagonal grid."""
    return (UA * UA) @ lam @ (UG * UG).T


@_njit
def efb_diag_numba(UA, UG, lam):
    n, a = UA.shape
    m, g = UG.shape
    # tmp[beta, gamma] = sum_zeta lam[beta, zeta] UG[gamma, zeta]^2
    tmp = np.zeros((a, m))
    for beta in range(a):
        for gamma in range(m):
            s = 0.0
            for zeta in range(g):
                u = UG[gamma, zeta]
                s += lam[beta, zeta] * u * u
            tmp[beta, gamma] = s
    # out[alpha, gamma] = sum_beta UA[alpha, beta]^2 tmp[beta, gamma]
    out = np.zeros((n, m))
    for alpha in range(n):
        for beta in range(a):
            u = UA[alpha, beta] * UA[alpha, beta]
            if u == 0.0:
                continue
            for gamma in range(m):
                out[alpha, gamma] += u * tmp[beta, gamma]
    return out


# ---------------------------------------------------------------------------
# eigenbasis variances: mean_t (RA[t, beta] * RG[t, zeta])^2
# ---------------------------------------------------------------------------


def eig_variance_numpy(RA, RG):
    return (RA * RA).T @ (RG * RG) / RA.shape[0]


@_njit
def eig_variance_numba(RA, RG):
    T, a = RA.shape
    g = RG.shape[1]
    out = np.zeros((a, g))
    for t in range(T):
        for beta in range(a):
            ra = RA[t, beta] * RA[t, beta]
            for zeta in range(g):
                out[beta, zeta] += ra * RG[t, zeta] * RG[t, zeta]
    return out / T


# ---------------------------------------------------------------------------
# Gram of the weighted Kronecker columns:
#   sum_alpha outer(UA[alpha], UA[alpha]) kron (UG^T diag(w[alpha]) UG)
# ---------------------------------------------------------------------------


def kron_gram_numpy(UA, UG, w):
    a = UA.shape[1]
    g = UG.shape[1]
    out = np.zeros((a * g, a * g))
    for alpha in range(UA.shape[0]):
        wa = w[alpha]
        if not wa.any():
            continue
        H = (UG.T * wa) @ UG
        out += np.kron(np.outer(UA[alpha], UA[alpha]), H)
    return out


@_njit
def kron_gram_numba(UA, UG, w):
    n, a = UA.shape
    m, g = UG.shape
    L = a * g
    out = np.zeros((L, L))
    H = np.empty((g, g))
    for alpha in range(n):
        for z1 in range(g):
            for z2 in range(z1, g):
                s = 0.0
                for gamma in range(m):
                    s += w[alpha, gamma] * UG[gamma, z1] * UG[gamma, z2]
                H[z1, z2] = s
                H[z2, z1] = s
        for b1 in range(a):
            u1 = UA[alpha, b1]
            if u1 == 0.0:
                continue
            for b2 in range(a):
                c = u1 * UA[alpha, b2]
                for z1 in range(g):
                    r = b1 * g + z1
                    for z2 in range(g):
                        out[r, b2 * g + z2] += c * H[z1, z2]
    return out


# ---------------------------------------------------------------------------
# Cholesky with pivot reporting. Returns (factor, bad_pivot) where bad_pivot
# is -1 on success and the 0-based failing pivot otherwise.
# ---------------------------------------------------------------------------


def cholesky_numpy(M):
    try:
        return np.linalg.cholesky(M), -1
    except np.linalg.LinAlgError:
        pass
    n = M.shape[0]
    Lf = np.zeros_like(M)
    for j in range(n):
        d = M[j, j] - Lf[j, :j] @ Lf[j, :j]
        if not d > 0.0:
            return Lf, j
        Lf[j, j] = np.sqrt(d)
        Lf[j + 1 :, j] = (M[j + 1 :, j] - Lf[j + 1 :, :j] @ Lf[j, :j]) / Lf[j, j]
    # LAPACK refused but the plain recursion went through; trust the recursion
    return Lf, -1


@_njit
def cholesky_numba(M):
    n = M.shape[0]
    Lf = np.zeros_like(M)
    for j in range(n):
        d = M[j, j]
        for k in range(j):
            d -= Lf[j, k] * Lf[j, k]
        if not d > 0.0:
            return Lf, j
        ljj = np.sqrt(d)
        Lf[j, j] = ljj
        for i in range(j + 1, n):
            s = M[i, j]
            for k in range(j):
                s -= Lf[i, k] * Lf[j, k]
            Lf[i, j] = s / ljj
    return Lf, -1


# efb_diag and eig_variance are matrix products that BLAS already does better
# than any scalar loop (see benchmarks/bench_kernels.py), so only the
# Kronecker Gram accumulation switches backend.
efb_diag = efb_diag_numpy
eig_variance = eig_variance_numpy
kron_gram = kron_gram_numba if USE_NUMBA else kron_gram_numpy

# LAPACK beats the scalar loop at every size we care about; the jitted variant
# stays for the benchmark and the cross-check tests.
cholesky_kernel = cholesky_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
