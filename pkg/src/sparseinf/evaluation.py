"""Metrics and the executable checks for the estimator guarantees.

Everything that materialises an ``N x N`` matrix here is an oracle meant for
desk-scale layers only.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fisher, net
from .sparse import VALID, assemble_inf, check_validity, spectral_sparsify, top_k_indices

EQ_RTOL = 1e-10
INEQ_SLACK = 1e-12


# ---------------------------------------------------------------------------
# Frobenius errors
# ---------------------------------------------------------------------------


@dataclass
class FrobeniusReport:
    """Normalised diagonal / off-diagonal errors; ``None`` means undefined."""

    diag_err: float | None
    offdiag_err: float | None
    estimator: str = ""
    rank_fraction: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: float, den: float) -> float | None:
    return None if den == 0.0 else num / den


def frobenius_errors(I_exact, I_approx, estimator: str = "", rank_fraction: float | None = None) -> FrobeniusReport:
    """Each part's error divided by the same part's norm in the exact matrix.

    A part whose reference norm is zero is reported as undefined (``None``).
    """
    I_exact = np.asarray(I_exact, dtype=float)
    I_approx = np.asarray(I_approx, dtype=float)
    if I_exact.shape != I_approx.shape or I_exact.ndim != 2 or I_exact.shape[0] != I_exact.shape[1]:
        raise ValueError("need two square matrices of equal shape")
    E = I_exact - I_approx
    de, dr = np.diag(E), np.diag(I_exact)
    off_e = np.sqrt(max(np.sum(E * E) - np.sum(de * de), 0.0))
    off_r = np.sqrt(max(np.sum(I_exact * I_exact) - np.sum(dr * dr), 0.0))
    return FrobeniusReport(
        _ratio(float(np.linalg.norm(de)), float(np.linalg.norm(dr))),
        _ratio(float(off_e), float(off_r)),
        estimator,
        rank_fraction,
    )


# ---------------------------------------------------------------------------
# classification / regression metrics
# ---------------------------------------------------------------------------


@dataclass
class CalibrationBins:
    edges: np.ndarray
    count: np.ndarray
    accuracy: np.ndarray
    confidence: np.ndarray


def reliability_bins(probs, labels, n_bins: int = 15) -> CalibrationBins:
    """Equal-width bins over the max-class confidence; empty bins hold NaN."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    labels = np.asarray(labels).astype(int).ravel()
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if probs.shape[0] != labels.shape[0]:
        raise ValueError("probs and labels disagree in length")
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(float)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    # bins are (lo, hi]; confidence 0 lands in the first bin
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, n_bins - 1)
    count = np.bincount(idx, minlength=n_bins).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.bincount(idx, weights=correct, minlength=n_bins) / count
        cbar = np.bincount(idx, weights=conf, minlength=n_bins) / count
    return CalibrationBins(edges, count, acc, cbar)


def ece(probs, labels, n_bins: int = 15) -> float | None:
    """Expected calibration error; ``None`` for an empty input."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    if probs.size == 0 or np.asarray(labels).size == 0:
        return None
    b = reliability_bins(probs, labels, n_bins)
    nz = b.count > 0
    n = b.count.sum()
    return float(np.sum(b.count[nz] / n * np.abs(b.accuracy[nz] - b.confidence[nz])))


def normalized_entropy(probs) -> np.ndarray:
    """Per-row entropy divided by ``log(num_classes)``; ``0 log 0 = 0``."""
    p = np.atleast_2d(np.asarray(probs, dtype=float))
    C = p.shape[1]
    if C < 2:
        return np.zeros(p.shape[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=1) / math.log(C)


def regression_metrics(preds, targets, var) -> tuple[float, float]:
    """``(rmse, mean Gaussian test log-likelihood)`` with per-point variance."""
    preds = np.asarray(preds, dtype=float).ravel()
    targets = np.asarray(targets, dtype=float).ravel()
    var = np.broadcast_to(np.asarray(var, dtype=float).ravel(), preds.shape)
    if np.any(var <= 0):
        raise ValueError("predictive variance must be positive")
    r = preds - targets
    rmse = float(np.sqrt(np.mean(r * r)))
    ll = -0.5 * np.log(2 * np.pi * var) - 0.5 * r * r / var
    return rmse, float(np.mean(ll))


# ---------------------------------------------------------------------------
# guarantee checks
# ---------------------------------------------------------------------------

CHECKS = (
    "exact_diagonal",
    "inf_vs_efb",
    "inf_vs_kfac",
    "diagonal_error",
    "zero_tail",
    "valid_implies_pd",
    "rank_sandwich",
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class GuaranteeReport:
    trials: int
    passes: dict = field(default_factory=lambda: {c: 0 for c in CHECKS})
    runs: dict = field(default_factory=lambda: {c: 0 for c in CHECKS})
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def record(self, trial: int, layer: int, res: CheckResult) -> None:
        self.runs[res.name] += 1
        if res.passed:
            self.passes[res.name] += 1
        else:
            self.failures.append({"trial": trial, "layer": layer, "check": res.name, "detail": res.detail})

    def to_dict(self) -> dict:
        return {"trials": self.trials, "ok": self.ok, "passes": self.passes, "runs": self.runs, "failures": self.failures}


def _fro(M) -> float:
    return float(np.linalg.norm(M))


def _geq(big: float, small: float, scale: float) -> bool:
    return big >= small - INEQ_SLACK * max(scale, 1.0)


def _close(x, y, scale: float) -> bool:
    return float(np.max(np.abs(np.asarray(x) - np.asarray(y)), initial=0.0)) <= EQ_RTOL * max(scale, 1e-300)


def _lowrank(UA, UG, lam, idx) -> np.ndarray:
    V = np.kron(UA, UG)[:, idx]
    return (V * lam[idx]) @ V.T


def check_layer(factors: net.LayerFactorBatch, K: int, fault: bool = False) -> list[CheckResult]:
    """All guarantees on one layer's factors at sparsification rank ``K``."""
    I = fisher.exact_block_im(factors)
    nI = _fro(I)
    kron = fisher.kfac(factors)
    I_kfac = kron.materialize()
    basis = fisher.build_eigenbasis(factors)
    D = basis.D
    if fault:
        D = D + 10.0 * (np.max(np.abs(basis.exact_diag)) + 1.0)
    I_efb = basis.efb_matrix()
    I_inf = I_efb + np.diag(D)
    Ua, Ug, lam_L, kA, kG = spectral_sparsify(basis.UA, basis.UG, basis.lam, K)
    form = assemble_inf(Ua, Ug, lam_L, kA, kG, basis.exact_diag, K)
    if fault:
        form.D = form.D + (D - basis.D)
    I_hat = form.matrix()
    dI = np.diag(I)
    out = []

    ok = _close(np.diag(I_inf), dI, nI) and _close(np.diag(I_hat), dI, nI)
    out.append(CheckResult("exact_diagonal", ok, f"max diag gap {np.max(np.abs(np.diag(I_hat) - dI)):.3g}"))

    e_efb, e_inf, e_kfac = _fro(I - I_efb), _fro(I - I_inf), _fro(I - I_kfac)
    out.append(CheckResult("inf_vs_efb", _geq(e_efb, e_inf, nI), f"efb {e_efb:.6g} inf {e_inf:.6g}"))
    out.append(CheckResult("inf_vs_kfac", _geq(e_kfac, e_inf, nI), f"kfac {e_kfac:.6g} inf {e_inf:.6g}"))

    d_hat = _fro(dI - np.diag(I_hat))
    ok = (
        d_hat <= EQ_RTOL * max(_fro(dI), 1e-300)
        and _geq(_fro(dI - np.diag(I_efb)), d_hat, nI)
        and _geq(_fro(dI - np.diag(I_kfac)), d_hat, nI)
    )
    out.append(CheckResult("diagonal_error", ok, f"diag error {d_hat:.3g}"))

    # sufficient condition: a VALID verdict must give a positive definite precision
    verdict, _ = check_validity(form)
    if verdict == VALID:
        min_eig = float(np.linalg.eigvalsh(I_hat)[0])
        out.append(CheckResult("valid_implies_pd", min_eig > 0.0, f"min eigenvalue {min_eig:.3g}"))
    else:
        out.append(CheckResult("valid_implies_pd", True, f"condition not met ({verdict}); nothing to check"))

    # top-K >= Kronecker-preserving L >= top-L, all without diagonal correction
    if form.L > K:
        top_K = top_k_indices(basis.lam, K)
        top_L = top_k_indices(basis.lam, form.L)
        grid = np.zeros((basis.n, basis.m), dtype=bool)
        grid[np.ix_(kA, kG)] = True
        e_K = _fro(I - _lowrank(basis.UA, basis.UG, basis.lam, top_K))
        e_1L = _fro(I - _lowrank(basis.UA, basis.UG, basis.lam, np.flatnonzero(grid.ravel())))
        e_L = _fro(I - _lowrank(basis.UA, basis.UG, basis.lam, top_L))
        ok = _geq(e_K, e_1L, nI) and _geq(e_1L, e_L, nI)
        out.append(CheckResult("rank_sandwich", ok, f"topK {e_K:.6g} 1:L {e_1L:.6g} topL {e_L:.6g}"))
    return out


def zero_tail_factors(rng: np.random.Generator, n: int, m: int, T: int, ra: int, rg: int) -> net.LayerFactorBatch:
    """Factors whose activations / gradients live in the first ``ra`` / ``rg`` axes.

    The information matrix then has an exactly zero block, so every EFB
    eigenvalue outside the leading ``ra x rg`` grid vanishes.
    """
    a = np.zeros((T, n))
    g = np.zeros((T, m))
    a[:, :ra] = rng.standard_normal((T, ra))
    g[:, :rg] = rng.standard_normal((T, rg))
    return net.LayerFactorBatch(a, g)


def check_zero_tail(factors: net.LayerFactorBatch, fault: bool = False) -> CheckResult:
    """Keeping every non-zero eigenvalue: the low-rank INF error equals the full INF error."""
    I = fisher.exact_block_im(factors)
    nI = _fro(I)
    basis = fisher.build_eigenbasis(factors)
    tiny = basis.lam <= 1e-14 * basis.lam.max()
    lam = np.where(tiny, 0.0, basis.lam)
    K = int(np.count_nonzero(lam))
    Ua, Ug, lam_L, kA, kG = spectral_sparsify(basis.UA, basis.UG, lam, K)
    form = assemble_inf(Ua, Ug, lam_L, kA, kG, basis.exact_diag, K)
    D_full = basis.exact_diag - fisher.efb_diagonal(basis.UA, basis.UG, lam)
    if fault:
        form.D = form.D + 10.0 * (np.max(basis.exact_diag) + 1.0)
    I_efb = (np.kron(basis.UA, basis.UG) * lam) @ np.kron(basis.UA, basis.UG).T
    e_hat = _fro(I - form.matrix())
    e_full = _fro(I - (I_efb + np.diag(D_full)))
    e_efb = _fro(I - I_efb)
    ok = abs(e_hat - e_full) <= EQ_RTOL * max(nI, 1e-300) and _geq(e_efb, e_hat, nI)
    return CheckResult("zero_tail", ok, f"low-rank {e_hat:.6g} full {e_full:.6g} efb {e_efb:.6g}")


def random_trial_net(rng: np.random.Generator, max_width: int = 16):
    """A random small regression net (every layer at most ``max_width`` x ``max_width``)."""
    depth = int(rng.integers(1, 3))
    sizes = [int(rng.integers(1, max_width))] + [int(rng.integers(1, max_width + 1)) for _ in range(depth)]
    act = str(rng.choice(["relu", "tanh"]))
    spec = net.NetworkSpec(tuple(sizes), act, "mse")
    return spec, net.init_weights(spec, rng)


def verify_guarantees(trials: int, rng: np.random.Generator, batch_range=(8, 256), max_width: int = 16, fault: bool = False) -> GuaranteeReport:
    """Run every guarantee on ``trials`` random nets; failures become report entries."""
    report = GuaranteeReport(trials)
    for t in range(trials):
        spec, weights = random_trial_net(rng, max_width)
        T = int(rng.integers(batch_range[0], batch_range[1] + 1))
        X = rng.standard_normal((T, spec.layer_sizes[0]))
        factors = net.per_sample_factors(spec, weights, X, None, "model_sampled", rng)
        for li, f in enumerate(factors):
            N = f.n * f.m
            K = int(rng.integers(1, N + 1))
            for res in check_layer(f, K, fault):
                report.record(t, li, res)
        n, m = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        zt = zero_tail_factors(rng, n, m, T, int(rng.integers(1, n)), int(rng.integers(1, m)))
        report.record(t, -1, check_zero_tail(zt, fault))
    return report

