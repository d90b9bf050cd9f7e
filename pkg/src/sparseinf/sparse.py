"""Kronecker-preserving spectral sparsification and the low-rank INF form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .fisher import KronEigenbasis, efb_diagonal

SPARSE_SCHEMA = 1
DEFAULT_CLIP = 1e-8
ZERO_RTOL = 1e-12

VALID = "valid"
REPAIRED = "repaired"
DEGENERATE = "degenerate"


@dataclass
class SparseInfoForm:
    """Low-rank information form ``(Ua kron Ug) diag(lam_L) (Ua kron Ug)^T + diag(D)``.

    ``kept_A`` / ``kept_G`` are 0-based column indices into ``UA`` / ``UG``.
    ``lam_L[p*g + q]`` belongs to column pair ``(kept_A[p], kept_G[q])``.
    ``active`` masks low-rank coordinates whose eigenvalue was dropped as
    zero; ``free`` masks parameters that are random (``False`` means the
    parameter is held at its MAP value).
    """

    Ua: np.ndarray
    Ug: np.ndarray
    lam_L: np.ndarray
    D: np.ndarray
    kept_A: np.ndarray
    kept_G: np.ndarray
    exact_diag: np.ndarray
    K_requested: int
    active: np.ndarray = field(default=None)
    free: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.active is None:
            self.active = np.ones(self.lam_L.shape[0], dtype=bool)
        if self.free is None:
            self.free = np.ones(self.D.shape[0], dtype=bool)
        if self.lam_L.shape[0] != self.Ua.shape[1] * self.Ug.shape[1]:
            raise ValueError("lam_L length must equal a*g")

    @property
    def n(self) -> int:
        return self.Ua.shape[0]

    @property
    def m(self) -> int:
        return self.Ug.shape[0]

    @property
    def N(self) -> int:
        return self.n * self.m

    @property
    def L(self) -> int:
        return self.lam_L.shape[0]

    def lowrank_diag(self) -> np.ndarray:
        return efb_diagonal(self.Ua, self.Ug, np.where(self.active, self.lam_L, 0.0))

    def lowrank_matrix(self) -> np.ndarray:
        """Materialised low-rank part. Desk-scale oracle only."""
        V = np.kron(self.Ua, self.Ug)
        return (V * np.where(self.active, self.lam_L, 0.0)) @ V.T

    def matrix(self) -> np.ndarray:
        """Materialised precision (low-rank part plus ``diag(D)``). Desk-scale oracle only."""
        return self.lowrank_matrix() + np.diag(self.D)

    def to_json(self) -> dict:
        return {
            "format": "sparseinf.SparseInfoForm",
            "schema_version": SPARSE_SCHEMA,
            "shapes": {"n": self.n, "m": self.m, "a": self.Ua.shape[1], "g": self.Ug.shape[1]},
            "K_requested": int(self.K_requested),
            "Ua": self.Ua.tolist(),
            "Ug": self.Ug.tolist(),
            "lam_L": self.lam_L.tolist(),
            "D": self.D.tolist(),
            "exact_diag": self.exact_diag.tolist(),
            "kept_A": self.kept_A.tolist(),
            "kept_G": self.kept_G.tolist(),
            "active": self.active.astype(int).tolist(),
            "free": self.free.astype(int).tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SparseInfoForm":
        if doc.get("format") != "sparseinf.SparseInfoForm" or doc.get("schema_version") != SPARSE_SCHEMA:
            raise ValueError("not a SparseInfoForm document of a supported version")
        f = lambda k: np.asarray(doc[k], dtype=float)  # noqa: E731
        form = cls(
            f("Ua").reshape(doc["shapes"]["n"], doc["shapes"]["a"]),
            f("Ug").reshape(doc["shapes"]["m"], doc["shapes"]["g"]),
            f("lam_L"),
            f("D"),
            np.asarray(doc["kept_A"], dtype=int),
            np.asarray(doc["kept_G"], dtype=int),
            f("exact_diag"),
            int(doc["K_requested"]),
            np.asarray(doc["active"], dtype=bool),
            np.asarray(doc["free"], dtype=bool),
        )
        return form

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "SparseInfoForm":
        return cls.from_json(json.loads(Path(path).read_text()))


def top_k_indices(lam, K: int) -> np.ndarray:
    """0-based indices of the K largest entries; ties go to the smaller index."""
    lam = np.asarray(lam, dtype=float)
    if not 1 <= K <= lam.shape[0]:
        raise ValueError(f"K={K} outside 1..{lam.shape[0]}")
    return np.argsort(-lam, kind="stable")[:K]


def spectral_sparsify(UA, UG, lam, K: int):
    """Keep the top-K eigenpairs while preserving the Kronecker structure.

    Every top-K index is split into its (A-side, G-side) pair; the union of
    A-sides and of G-sides selects columns of ``UA`` and ``UG``, and all
    eigenvalues on the resulting ``a x g`` grid are kept, so ``L = a*g >= K``.

    Returns ``(Ua, Ug, lam_L, kept_A, kept_G)`` with 0-based kept indices in
    ascending order.
    """
    UA = np.asarray(UA, dtype=float)
    UG = np.asarray(UG, dtype=float)
    n, m = UA.shape[1], UG.shape[1]
    lam = np.asarray(lam, dtype=float)
    if lam.shape[0] != n * m:
        raise ValueError("lam length must equal n*m")
    top = top_k_indices(lam, K)
    # 0-based form of beta = floor((i-1)/m) + 1, zeta = i - m(beta-1)
    kept_A = np.unique(top // m)
    kept_G = np.unique(top % m)
    grid = lam.reshape(n, m)
    lam_L = grid[np.ix_(kept_A, kept_G)].ravel()
    return UA[:, kept_A], UG[:, kept_G], lam_L, kept_A, kept_G


def assemble_inf(Ua, Ug, lam_L, kept_A, kept_G, exact_diag, K_requested: int | None = None) -> SparseInfoForm:
    """Attach the diagonal correction recomputed for the kept spectrum."""
    exact_diag = np.asarray(exact_diag, dtype=float)
    D = exact_diag - efb_diagonal(Ua, Ug, lam_L)
    K = int(K_requested) if K_requested is not None else len(lam_L)
    return SparseInfoForm(
        np.asarray(Ua, dtype=float),
        np.asarray(Ug, dtype=float),
        np.asarray(lam_L, dtype=float),
        D,
        np.asarray(kept_A, dtype=int),
        np.asarray(kept_G, dtype=int),
        exact_diag,
        K,
    )


def sparsify_eigenbasis(basis: KronEigenbasis, K: int | None = None) -> SparseInfoForm:
    """Algorithm-1 sparsification of a full eigenbasis; ``K=None`` keeps everything."""
    K = basis.N if K is None else int(K)
    Ua, Ug, lam_L, kA, kG = spectral_sparsify(basis.UA, basis.UG, basis.lam, K)
    return assemble_inf(Ua, Ug, lam_L, kA, kG, basis.exact_diag, K)


def rank_from_fraction(N: int, fraction: float) -> int:
    return int(min(N, max(1, round(fraction * N))))


def check_validity(
    form: SparseInfoForm, eps: float = DEFAULT_CLIP, zero_rtol: float = ZERO_RTOL
) -> tuple[str, SparseInfoForm]:
    """Check the sufficient condition for a non-degenerate posterior and repair it.

    ``valid``: every ``D_i > 0`` and no kept eigenvalue is zero.
    ``repaired``: zero eigenvalues are deactivated and ``D`` is clipped to
    ``eps`` where it was not positive.
    ``degenerate``: some exact diagonal entry is zero; those parameters carry
    no information and are marked as not free (held at the MAP value) in the
    returned form, with the rest repaired as above.

    An eigenvalue counts as zero when it is at most ``zero_rtol`` times the
    largest kept eigenvalue.
    """
    lam_max = float(form.lam_L.max()) if form.L else 0.0
    zero_lam = form.lam_L <= zero_rtol * lam_max
    dead = form.exact_diag <= 0.0
    free = form.free & ~dead
    bad_D = (form.D <= 0.0) & free
    if not zero_lam.any() and not bad_D.any() and not dead.any():
        return VALID, form
    active = form.active & ~zero_lam
    if not free.all():
        # columns living entirely on held parameters add nothing to the free block
        grid = free.reshape(form.n, form.m).astype(float)
        mass = ((form.Ua * form.Ua).T @ grid @ (form.Ug * form.Ug)).ravel()
        active &= mass > zero_rtol
    D = np.where(bad_D, eps, form.D)
    out = replace(form, D=D, active=active, free=free)
    return (DEGENERATE if dead.any() else REPAIRED), out
