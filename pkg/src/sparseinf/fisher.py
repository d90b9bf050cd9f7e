"""Layer-wise information-matrix estimators: exact block, Diag, KFAC, EFB and INF."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _accel
from .kronlin import sym_eig
from .net import LayerFactorBatch

EIGENBASIS_SCHEMA = 1
DEFAULT_EXACT_CAP = 4096


class OracleTooLarge(ValueError):
    pass


@dataclass
class KronFactors:
    A: np.ndarray
    G: np.ndarray

    def materialize(self) -> np.ndarray:
        return np.kron(self.A, self.G)


@dataclass
class KronEigenbasis:
    """EFB eigenbasis of one layer together with its exact diagonal.

    ``lam`` and the two diagonals are flat vectors of length ``n*m`` in
    Kronecker order (``beta * m + zeta``).
    """

    UA: np.ndarray
    UG: np.ndarray
    lam: np.ndarray
    exact_diag: np.ndarray
    D: np.ndarray
    count: int
    SA: np.ndarray | None = None
    SG: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.UA.shape[0]

    @property
    def m(self) -> int:
        return self.UG.shape[0]

    @property
    def N(self) -> int:
        return self.n * self.m

    def efb_matrix(self) -> np.ndarray:
        """Materialised ``(UA kron UG) diag(lam) (UA kron UG)^T`` (tests / desk scale only)."""
        V = np.kron(self.UA, self.UG)
        return (V * self.lam) @ V.T

    def inf_matrix(self) -> np.ndarray:
        return self.efb_matrix() + np.diag(self.D)

    def to_json(self) -> dict:
        doc = {
            "format": "sparseinf.KronEigenbasis",
            "schema_version": EIGENBASIS_SCHEMA,
            "shapes": {"n": self.n, "m": self.m},
            "count": int(self.count),
            "UA": self.UA.tolist(),
            "UG": self.UG.tolist(),
            "lam": self.lam.tolist(),
            "exact_diag": self.exact_diag.tolist(),
            "D": self.D.tolist(),
        }
        if self.SA is not None:
            doc["SA"] = self.SA.tolist()
            doc["SG"] = self.SG.tolist()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "KronEigenbasis":
        if doc.get("format") != "sparseinf.KronEigenbasis" or doc.get("schema_version") != EIGENBASIS_SCHEMA:
            raise ValueError("not a KronEigenbasis document of a supported version")
        arr = lambda k: np.asarray(doc[k], dtype=float)  # noqa: E731
        out = cls(arr("UA"), arr("UG"), arr("lam"), arr("exact_diag"), arr("D"), int(doc["count"]))
        if "SA" in doc:
            out.SA, out.SG = arr("SA"), arr("SG")
        n, m = doc["shapes"]["n"], doc["shapes"]["m"]
        if out.UA.shape != (n, n) or out.UG.shape != (m, m) or out.lam.shape != (n * m,):
            raise ValueError("array shapes disagree with header")
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "KronEigenbasis":
        return cls.from_json(json.loads(Path(path).read_text()))


class FactorAccumulator:
    """Chunk-mergeable sums for the Kronecker factors and the exact diagonal.

    Sums are plain float64 additions so merging chunks in any grouping gives
    the same result up to rounding.
    """

    def __init__(self, n: int, m: int):
        self.saa = np.zeros((n, n))
        self.sgg = np.zeros((m, m))
        self.sdiag = np.zeros((n, m))
        self.count = 0

    def update(self, batch: LayerFactorBatch) -> "FactorAccumulator":
        self.saa += batch.a.T @ batch.a
        self.sgg += batch.g.T @ batch.g
        self.sdiag += (batch.a * batch.a).T @ (batch.g * batch.g)
        self.count += batch.count
        return self

    def merge(self, other: "FactorAccumulator") -> "FactorAccumulator":
        out = FactorAccumulator(*self.sdiag.shape)
        out.saa = self.saa + other.saa
        out.sgg = self.sgg + other.sgg
        out.sdiag = self.sdiag + other.sdiag
        out.count = self.count + other.count
        return out

    def kfac(self) -> KronFactors:
        if self.count < 1:
            raise ValueError("no samples accumulated")
        A = self.saa / self.count
        G = self.sgg / self.count
        return KronFactors(0.5 * (A + A.T), 0.5 * (G + G.T))

    def diag(self) -> np.ndarray:
        return (self.sdiag / self.count).ravel()


def _require_samples(factors: LayerFactorBatch) -> None:
    if factors.count < 1:
        raise ValueError("need at least one sample")


def exact_block_im(factors: LayerFactorBatch, cap: int = DEFAULT_EXACT_CAP) -> np.ndarray:
    """Dense ``mean_t vec(g_t a_t^T) vec(g_t a_t^T)^T``. Oracle use only."""
    _require_samples(factors)
    N = factors.n * factors.m
    if N > cap:
        raise OracleTooLarge(f"exact block of size {N} exceeds cap {cap}")
    J = factors.grads()
    I = J.T @ J / factors.count
    return 0.5 * (I + I.T)


def kfac(factors: LayerFactorBatch) -> KronFactors:
    _require_samples(factors)
    return FactorAccumulator(factors.n, factors.m).update(factors).kfac()


def diag_fisher(factors: LayerFactorBatch) -> np.ndarray:
    """Mean squared per-sample gradient, in Kronecker order."""
    _require_samples(factors)
    return _accel.eig_variance(np.ascontiguousarray(factors.a), np.ascontiguousarray(factors.g)).ravel()


def efb(kron: KronFactors, factors: LayerFactorBatch):
    """Eigenvalue-corrected Kronecker eigenbasis.

    Returns ``(UA, UG, lam, SA, SG)`` where ``lam[beta*m + zeta]`` is the mean
    squared projection of the per-sample gradient on ``UA[:, beta] kron UG[:, zeta]``.
    Each per-sample gradient is rank one, so the projection factorises into
    ``(UA^T a) kron (UG^T g)`` and the basis is never formed.
    """
    SA_pair = sym_eig(kron.A, psd=True)
    SG_pair = sym_eig(kron.G, psd=True)
    UA, UG = SA_pair.vectors, SG_pair.vectors
    RA = np.ascontiguousarray(factors.a @ UA)
    RG = np.ascontiguousarray(factors.g @ UG)
    lam = _accel.eig_variance(RA, RG).ravel()
    return UA, UG, lam, SA_pair.values, SG_pair.values


def efb_diagonal(UA, UG, lam) -> np.ndarray:
    """``diag((UA kron UG) diag(lam) (UA kron UG)^T)`` without forming the product.

    Works for column subsets too: ``UA`` is (n, a), ``UG`` is (m, g) and
    ``lam`` has ``a*g`` entries.
    """
    UA = np.ascontiguousarray(UA, dtype=float)
    UG = np.ascontiguousarray(UG, dtype=float)
    grid = np.ascontiguousarray(np.asarray(lam, dtype=float).reshape(UA.shape[1], UG.shape[1]))
    return _accel.efb_diag(UA, UG, grid).ravel()


def diagonal_correction(exact_diag, efb_diag) -> np.ndarray:
    exact_diag = np.asarray(exact_diag, dtype=float)
    efb_diag = np.asarray(efb_diag, dtype=float)
    if exact_diag.shape != efb_diag.shape:
        raise ValueError("diagonals differ in length")
    return exact_diag - efb_diag


def build_eigenbasis(factors: LayerFactorBatch) -> KronEigenbasis:
    """KFAC -> EFB -> INF correction for one layer in one call."""
    acc = FactorAccumulator(factors.n, factors.m).update(factors)
    UA, UG, lam, SA, SG = efb(acc.kfac(), factors)
    exact = acc.diag()
    D = diagonal_correction(exact, efb_diagonal(UA, UG, lam))
    return KronEigenbasis(UA, UG, lam, exact, D, factors.count, SA, SG)
