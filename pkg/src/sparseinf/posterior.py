"""Layer-wise Laplace posteriors, predictive distributions and acquisition."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import fisher, sampler
from .fisher import KronEigenbasis
from .kronlin import kron_apply
from .net import (
    LayerFactorBatch,
    NetworkSpec,
    forward,
    layer_theta,
    layer_weights,
    output_factors,
    per_sample_factors,
    softmax,
)
from .sparse import (
    DEGENERATE,
    VALID,
    SparseInfoForm,
    check_validity,
    rank_from_fraction,
    sparsify_eigenbasis,
)

ESTIMATORS = ("diag", "kfac_ritter", "kfac_exact", "efb", "inf")
POLICIES = ("deterministic_dims", "clip")


@dataclass
class PosteriorConfig:
    N_scale: float = 1.0
    tau: float = 0.0
    rank_K: int | str = "full"  # int, "full" or a percentage string such as "50%"
    K_mc: int = 100
    estimator: str = "inf"
    degenerate_policy: str = "deterministic_dims"
    clip_eps: float = 1e-8
    label_mode: str = "model_sampled"

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.degenerate_policy not in POLICIES:
            raise ValueError(f"unknown degenerate policy {self.degenerate_policy!r}")
        if not self.N_scale > 0 or self.tau < 0 or self.K_mc < 1:
            raise ValueError("need N_scale > 0, tau >= 0 and K_mc >= 1")

    def resolve_rank(self, N: int) -> int:
        r = self.rank_K
        if isinstance(r, str):
            if r == "full":
                return N
            if r.endswith("%"):
                return rank_from_fraction(N, float(r[:-1]) / 100.0)
            r = int(r)
        if not 1 <= r <= N:
            raise ValueError(f"rank {r} outside 1..{N}")
        return int(r)


# ---------------------------------------------------------------------------
# layer posteriors
# ---------------------------------------------------------------------------


class DiagPosterior:
    def __init__(self, theta_map, precision, fixed):
        self.theta_map = np.asarray(theta_map, dtype=float)
        self.precision = np.asarray(precision, dtype=float)
        self.fixed = np.asarray(fixed, dtype=bool)
        self._var = np.where(self.fixed, 0.0, 1.0 / np.where(self.fixed, 1.0, self.precision))

    @property
    def N(self) -> int:
        return self.theta_map.shape[0]

    def draw(self, rng=None, noise=None):
        if noise is None:
            noise = rng.standard_normal(self.N)
        return self.theta_map + np.sqrt(self._var) * noise

    def marginal_var(self):
        return self._var.copy()

    def quad_form(self, J):
        return np.sum(np.asarray(J) ** 2 * self._var, axis=-1)

    def covariance_matrix(self):
        return np.diag(self._var)


class EigenPosterior:
    """Precision ``(UA kron UG) diag(eig) (UA kron UG)^T``; shared by EFB and both KFAC variants.

    Eigen-directions flagged in ``fixed`` get zero variance.
    """

    def __init__(self, theta_map, UA, UG, eig, fixed):
        self.theta_map = np.asarray(theta_map, dtype=float)
        self.UA, self.UG = UA, UG
        self.eig = np.asarray(eig, dtype=float)
        self.fixed = np.asarray(fixed, dtype=bool)
        self._inv = np.where(self.fixed, 0.0, 1.0 / np.where(self.fixed, 1.0, self.eig))

    @property
    def N(self) -> int:
        return self.theta_map.shape[0]

    def draw(self, rng=None, noise=None):
        if noise is None:
            noise = rng.standard_normal(self.N)
        return self.theta_map + kron_apply(self.UA, self.UG, np.sqrt(self._inv) * noise)

    def marginal_var(self):
        return fisher.efb_diagonal(self.UA, self.UG, self._inv)

    def quad_form(self, J):
        r = kron_apply(self.UA, self.UG, J, transpose=True)
        return np.sum(r * r * self._inv, axis=-1)

    def precision_matrix(self):
        V = np.kron(self.UA, self.UG)
        return (V * self.eig) @ V.T

    def covariance_matrix(self):
        V = np.kron(self.UA, self.UG)
        return (V * self._inv) @ V.T


class InfPosterior:
    def __init__(self, form: SparseInfoForm, state: sampler.SamplerState, verdict: str):
        self.form = form
        self.state = state
        self.verdict = verdict

    @property
    def theta_map(self):
        return self.state.theta_map

    @property
    def N(self) -> int:
        return self.state.N

    def draw(self, rng=None, noise=None):
        return sampler.draw(self.state, rng=rng, noise=noise)

    def marginal_var(self):
        return sampler.marginal_var(self.state)

    def quad_form(self, J):
        return sampler.quad_form(self.state, J)

    def covariance_matrix(self):
        """Dense covariance over the free parameters (zeros elsewhere). Oracle only."""
        P = self.form.matrix()
        free = self.form.free
        out = np.zeros_like(P)
        out[np.ix_(free, free)] = np.linalg.inv(P[np.ix_(free, free)])
        return out


# ---------------------------------------------------------------------------
# hyperparameters
# ---------------------------------------------------------------------------


def apply_hyperparameters(estimate, N_scale: float, tau: float, estimator: str):
    """Scale an estimate by the pseudo-count and add the prior precision.

    ``estimate`` is a ``SparseInfoForm`` for ``inf``, a diagonal vector for
    ``diag`` and a ``KronEigenbasis`` for the eigenbasis families. Returns the
    scaled form, the precision vector, or the precision eigenvalues
    respectively.
    """
    if estimator == "inf":
        form: SparseInfoForm = estimate
        return replace(
            form,
            lam_L=N_scale * form.lam_L,
            D=N_scale * form.D + tau,
            exact_diag=N_scale * form.exact_diag + tau,
        )
    if estimator == "diag":
        return N_scale * np.asarray(estimate, dtype=float) + tau
    basis: KronEigenbasis = estimate
    if estimator == "efb":
        return N_scale * basis.lam + tau
    if estimator == "kfac_exact":
        return N_scale * np.kron(basis.SA, basis.SG) + tau
    if estimator == "kfac_ritter":
        return np.kron(np.sqrt(N_scale) * basis.SA + np.sqrt(tau), np.sqrt(N_scale) * basis.SG + np.sqrt(tau))
    raise ValueError(f"unknown estimator {estimator!r}")


def _nonpositive(values, policy, eps):
    bad = values <= 0.0
    if policy == "clip":
        return np.where(bad, eps, values), np.zeros_like(bad)
    return values, bad


def build_layer_posterior(factors: LayerFactorBatch, theta_map, config: PosteriorConfig):
    est = config.estimator
    if est == "diag":
        prec = apply_hyperparameters(fisher.diag_fisher(factors), config.N_scale, config.tau, "diag")
        prec, fixed = _nonpositive(prec, config.degenerate_policy, config.clip_eps)
        return DiagPosterior(theta_map, prec, fixed)
    basis = fisher.build_eigenbasis(factors)
    if est != "inf":
        eig = apply_hyperparameters(basis, config.N_scale, config.tau, est)
        eig, fixed = _nonpositive(eig, config.degenerate_policy, config.clip_eps)
        return EigenPosterior(theta_map, basis.UA, basis.UG, eig, fixed)
    form = sparsify_eigenbasis(basis, config.resolve_rank(basis.N))
    form = apply_hyperparameters(form, config.N_scale, config.tau, "inf")
    verdict, repaired = check_validity(form, config.clip_eps)
    if config.degenerate_policy == "clip":
        if verdict == DEGENERATE:
            dead = ~repaired.free
            repaired = replace(
                repaired, free=np.ones_like(repaired.free), D=np.where(dead & (repaired.D <= 0), config.clip_eps, repaired.D)
            )
        form = repaired
    elif verdict != VALID:
        # A non-positive correction means the low-rank part already claims more
        # than the exact diagonal there; clipping to eps would leave near-null
        # directions with essentially unbounded variance, so hold them instead.
        _, form = check_validity(replace(form, free=form.free & (form.D > 0.0)), config.clip_eps)
    return InfPosterior(form, sampler.build_sampler(form, theta_map), verdict)


@dataclass
class Posterior:
    spec: NetworkSpec
    weights: list[np.ndarray]
    layers: list
    config: PosteriorConfig
    sigma_alea: float = 0.0
    info: dict = field(default_factory=dict)

    def weights_from_thetas(self, thetas: Sequence[np.ndarray]) -> list[np.ndarray]:
        return [layer_weights(t, W.shape) for t, W in zip(thetas, self.weights)]


def residual_std(spec: NetworkSpec, weights, X, y) -> float:
    out, _ = forward(spec, weights, np.atleast_2d(X))
    r = np.atleast_2d(out) - np.asarray(y, dtype=float).reshape(np.atleast_2d(out).shape)
    return float(np.sqrt(np.mean(r * r)))


def build_posterior(
    spec: NetworkSpec,
    weights,
    X,
    y,
    config: PosteriorConfig,
    rng: np.random.Generator,
    factors: list[LayerFactorBatch] | None = None,
) -> Posterior:
    """Capture the Fisher factors at ``weights`` and build every layer's posterior."""
    if factors is None:
        factors = per_sample_factors(spec, weights, X, y, config.label_mode, rng)
    layers = [build_layer_posterior(f, layer_theta(W), config) for f, W in zip(factors, weights)]
    sigma = residual_std(spec, weights, X, y) if spec.loss == "mse" else 0.0
    info = {"layers": []}
    for lp in layers:
        entry = {"N": int(lp.N)}
        if isinstance(lp, InfPosterior):
            entry.update(L=int(lp.form.L), K=int(lp.form.K_requested), verdict=lp.verdict)
        info["layers"].append(entry)
    return Posterior(spec, [W.copy() for W in weights], layers, config, sigma, info)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


@dataclass
class Prediction:
    mean: np.ndarray
    var: np.ndarray | None = None
    probs: np.ndarray | None = None


def predict_mc(posterior: Posterior, X, K_mc: int | None = None, rng: np.random.Generator | None = None, zero_noise: bool = False) -> Prediction:
    """Monte-Carlo predictive with layer-wise independent draws.

    Sample ``t`` uses its own child stream, split further per layer, so the
    result does not depend on the order in which samples are evaluated.
    Regression reports the sample variance plus the aleatoric term.
    """
    K_mc = K_mc or posterior.config.K_mc
    X = np.atleast_2d(np.asarray(X, dtype=float))
    spec = posterior.spec
    streams = [None] * K_mc if zero_noise else rng.spawn(K_mc)
    outs = []
    for t in range(K_mc):
        if zero_noise:
            thetas = [lp.draw(noise=np.zeros(lp.N)) for lp in posterior.layers]
        else:
            layer_rngs = streams[t].spawn(len(posterior.layers))
            thetas = [lp.draw(r) for lp, r in zip(posterior.layers, layer_rngs)]
        out, _ = forward(spec, posterior.weights_from_thetas(thetas), X)
        outs.append(softmax(out) if spec.loss == "cross_entropy" else out)
    outs = np.stack(outs)
    mean = outs.mean(axis=0)
    if spec.loss == "cross_entropy":
        return Prediction(mean=mean, probs=mean)
    var = outs.var(axis=0) + posterior.sigma_alea**2
    return Prediction(mean=mean, var=var)


def predict_linearized(posterior: Posterior, X, sigma_alea: float | None = None) -> Prediction:
    """Gaussian predictive from a first-order expansion around the MAP weights.

    Variance per output is ``sigma_alea^2 + sum_layers J^T Sigma J`` with the
    Jacobian row ``J = vec(g a^T)`` of each layer.
    """
    spec = posterior.spec
    if spec.loss != "mse":
        raise ValueError("linearized prediction needs a regression head")
    sigma = posterior.sigma_alea if sigma_alea is None else sigma_alea
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mean, _ = forward(spec, posterior.weights, X)
    var = np.full(mean.shape, sigma**2)
    for k in range(mean.shape[1]):
        for lp, f in zip(posterior.layers, output_factors(spec, posterior.weights, X, k)):
            var[:, k] += lp.quad_form(f.grads())
    return Prediction(mean=mean, var=var)


def acquire(posterior: Posterior, pool) -> int:
    """Index of the pool point with the largest linearized predictive variance."""
    pool = np.atleast_2d(np.asarray(pool, dtype=float))
    if pool.shape[0] == 0:
        raise ValueError("empty pool")
    var = predict_linearized(posterior, pool).var.sum(axis=1)
    return int(np.argmax(var))


def log_uniform_pairs(rng: np.random.Generator, count: int, N_range, tau_range) -> np.ndarray:
    """``count`` random (N, tau) pairs drawn log-uniformly from the given ranges."""
    lo = np.log([N_range[0], tau_range[0]])
    hi = np.log([N_range[1], tau_range[1]])
    return np.exp(lo + (hi - lo) * rng.random((count, 2)))


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

POSTERIOR_SCHEMA = 1


def _layer_to_json(lp) -> dict:
    if isinstance(lp, DiagPosterior):
        return {"kind": "diag", "theta_map": lp.theta_map.tolist(), "precision": lp.precision.tolist(), "fixed": lp.fixed.astype(int).tolist()}
    if isinstance(lp, EigenPosterior):
        return {
            "kind": "eigen",
            "theta_map": lp.theta_map.tolist(),
            "UA": lp.UA.tolist(),
            "UG": lp.UG.tolist(),
            "eig": lp.eig.tolist(),
            "fixed": lp.fixed.astype(int).tolist(),
        }
    return {"kind": "inf", "theta_map": lp.theta_map.tolist(), "verdict": lp.verdict, "form": lp.form.to_json()}


def _layer_from_json(doc: dict):
    theta = np.asarray(doc["theta_map"], dtype=float)
    kind = doc["kind"]
    if kind == "diag":
        return DiagPosterior(theta, np.asarray(doc["precision"], dtype=float), np.asarray(doc["fixed"], dtype=bool))
    if kind == "eigen":
        arr = lambda k: np.asarray(doc[k], dtype=float)  # noqa: E731
        return EigenPosterior(theta, arr("UA"), arr("UG"), arr("eig"), np.asarray(doc["fixed"], dtype=bool))
    if kind == "inf":
        form = SparseInfoForm.from_json(doc["form"])
        return InfPosterior(form, sampler.build_sampler(form, theta), doc["verdict"])
    raise ValueError(f"unknown layer kind {kind!r}")


def posterior_to_json(post: Posterior) -> dict:
    return {
        "format": "sparseinf.Posterior",
        "schema_version": POSTERIOR_SCHEMA,
        "spec": post.spec.to_dict(),
        "weights": [W.tolist() for W in post.weights],
        "config": asdict(post.config),
        "sigma_alea": post.sigma_alea,
        "info": post.info,
        "layers": [_layer_to_json(lp) for lp in post.layers],
    }


def posterior_from_json(doc: dict) -> Posterior:
    """Rebuild a posterior; INF samplers are re-derived from the stored forms."""
    if doc.get("format") != "sparseinf.Posterior" or doc.get("schema_version") != POSTERIOR_SCHEMA:
        raise ValueError("not a Posterior document of a supported version")
    spec = NetworkSpec.from_dict(doc["spec"])
    weights = [np.asarray(W, dtype=float) for W in doc["weights"]]
    layers = [_layer_from_json(d) for d in doc["layers"]]
    return Posterior(spec, weights, layers, PosteriorConfig(**doc["config"]), float(doc["sigma_alea"]), doc["info"])
