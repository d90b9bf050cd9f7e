import json

import numpy as np
import pytest

from conftest import random_factors
from sparseinf import fisher, net, posterior
from sparseinf.active import toy_data
from sparseinf.posterior import (
    DiagPosterior,
    EigenPosterior,
    InfPosterior,
    PosteriorConfig,
    acquire,
    apply_hyperparameters,
    build_layer_posterior,
    build_posterior,
    log_uniform_pairs,
    predict_linearized,
    predict_mc,
)
from sparseinf.sparse import VALID, sparsify_eigenbasis


@pytest.fixture(scope="module")
def toy():
    rng = np.random.default_rng(0)
    X, y = toy_data(rng, 60)
    spec = net.NetworkSpec((1, 7, 1), "tanh")
    weights = net.train_map(spec, X / 4, y, net.TrainConfig(lr=1e-2, epochs=1500, seed=1)).weights
    return spec, weights, X / 4, y


def dense_layer_cov(lp):
    return lp.covariance_matrix()


# -- configuration -------------------------------------------------------------


def test_config_validation_and_rank():
    with pytest.raises(ValueError):
        PosteriorConfig(estimator="laplace")
    with pytest.raises(ValueError):
        PosteriorConfig(degenerate_policy="ignore")
    with pytest.raises(ValueError):
        PosteriorConfig(tau=-1.0)
    with pytest.raises(ValueError):
        PosteriorConfig(K_mc=0)
    assert PosteriorConfig().resolve_rank(12) == 12
    assert PosteriorConfig(rank_K="50%").resolve_rank(12) == 6
    assert PosteriorConfig(rank_K="5").resolve_rank(12) == 5
    assert PosteriorConfig(rank_K="1%").resolve_rank(12) == 1
    with pytest.raises(ValueError):
        PosteriorConfig(rank_K=13).resolve_rank(12)


# -- hyperparameters -----------------------------------------------------------


def test_unit_hyperparameters_leave_estimates_unchanged(rng):
    basis = fisher.build_eigenbasis(random_factors(rng, 3, 2, 10))
    form = sparsify_eigenbasis(basis)
    scaled = apply_hyperparameters(form, 1.0, 0.0, "inf")
    np.testing.assert_array_equal(scaled.lam_L, form.lam_L)
    np.testing.assert_array_equal(scaled.D, form.D)
    np.testing.assert_array_equal(apply_hyperparameters(basis.exact_diag, 1.0, 0.0, "diag"), basis.exact_diag)
    np.testing.assert_array_equal(apply_hyperparameters(basis, 1.0, 0.0, "efb"), basis.lam)


def test_diag_dead_direction_gets_prior_precision():
    prec = apply_hyperparameters(np.array([0.0, 2.0]), 10.0, 0.45, "diag")
    np.testing.assert_allclose(prec, [0.45, 20.45])


def test_okf_and_ritter_differ(rng):
    f = random_factors(rng, 3, 2, 20)
    basis = fisher.build_eigenbasis(f)
    kron = fisher.kfac(f)
    V = np.kron(basis.UA, basis.UG)
    N, tau = 3.0, 0.2
    okf = (V * apply_hyperparameters(basis, N, tau, "kfac_exact")) @ V.T
    ritter = (V * apply_hyperparameters(basis, N, tau, "kfac_ritter")) @ V.T
    expected = N * np.kron(kron.A, kron.G) + tau * np.eye(6)
    assert np.max(np.abs(okf - expected)) <= 1e-10 * np.max(np.abs(expected))
    r_expected = np.kron(np.sqrt(N) * kron.A + np.sqrt(tau) * np.eye(3), np.sqrt(N) * kron.G + np.sqrt(tau) * np.eye(2))
    assert np.max(np.abs(ritter - r_expected)) <= 1e-10 * np.max(np.abs(r_expected))
    assert np.linalg.norm(okf - ritter) > 1e-3


# -- layer posteriors against dense oracles ------------------------------------


@pytest.mark.parametrize("estimator", posterior.ESTIMATORS)
def test_layer_quad_form_matches_dense(rng, estimator):
    f = random_factors(rng, 4, 3, 40)
    cfg = PosteriorConfig(estimator=estimator, N_scale=2.0, tau=0.3, rank_K=5)
    lp = build_layer_posterior(f, rng.standard_normal(12), cfg)
    J = rng.standard_normal((5, 12))
    cov = dense_layer_cov(lp)
    np.testing.assert_allclose(lp.quad_form(J), np.einsum("ij,jk,ik->i", J, cov, J), rtol=1e-8)
    np.testing.assert_allclose(lp.marginal_var(), np.diag(cov), rtol=1e-8, atol=1e-14)


def test_full_rank_inf_equals_dense_fisher_laplace(toy):
    spec, weights, X, y = toy
    cfg = PosteriorConfig(estimator="inf", tau=2.0)
    post = build_posterior(spec, weights, X, y, cfg, np.random.default_rng(3))
    Xs = np.linspace(-1.5, 1.5, 9)[:, None]
    pred = predict_linearized(post, Xs)
    oracle = np.full(9, post.sigma_alea**2)
    for lp, f in zip(post.layers, net.output_factors(spec, weights, Xs)):
        assert isinstance(lp, InfPosterior)
        assert lp.verdict == VALID
        basis_prec = lp.form.matrix()
        J = f.grads()
        oracle += np.einsum("ij,jk,ik->i", J, np.linalg.inv(basis_prec), J)
    np.testing.assert_allclose(pred.var[:, 0], oracle, rtol=1e-6)


def test_deterministic_dims_hold_dead_parameters(rng):
    f = random_factors(rng, 4, 3, 30)
    f.g[:, 1] = 0.0  # a dead output unit: its parameters carry no information
    theta = rng.standard_normal(12)
    lp = build_layer_posterior(f, theta, PosteriorConfig())
    dead = np.kron(np.ones(4), [0.0, 1.0, 0.0]).astype(bool)
    assert lp.verdict == "degenerate"
    np.testing.assert_array_equal(lp.marginal_var()[dead], 0.0)
    np.testing.assert_array_equal(lp.draw(rng)[dead], theta[dead])
    J = np.zeros(12)
    J[dead] = 1.0
    assert lp.quad_form(J) == 0.0
    clip = build_layer_posterior(f, theta, PosteriorConfig(degenerate_policy="clip"))
    assert np.all(clip.marginal_var()[dead] > 0)


def test_diag_deterministic_dims(rng):
    f = random_factors(rng, 3, 2, 10)
    f.g[:, 0] = 0.0
    lp = build_layer_posterior(f, np.zeros(6), PosteriorConfig(estimator="diag"))
    assert isinstance(lp, DiagPosterior)
    np.testing.assert_array_equal(lp.marginal_var()[::2], 0.0)


@pytest.mark.parametrize("estimator", posterior.ESTIMATORS)
def test_marginal_std_non_increasing_in_tau(rng, estimator):
    f = random_factors(rng, 4, 3, 40)
    stds = []
    for tau in (0.05, 0.5, 5.0):
        # clip keeps the free set fixed; holding dims would change it with tau
        cfg = PosteriorConfig(estimator=estimator, tau=tau, rank_K="50%", degenerate_policy="clip")
        lp = build_layer_posterior(f, np.zeros(12), cfg)
        stds.append(np.sqrt(np.diag(dense_layer_cov(lp))))
    for lo, hi in zip(stds, stds[1:]):
        assert np.all(hi <= lo * (1 + 1e-10))


# -- predictive -----------------------------------------------------------------


def test_mc_zero_noise_is_deterministic_output(toy):
    spec, weights, X, y = toy
    post = build_posterior(spec, weights, X, y, PosteriorConfig(), np.random.default_rng(0))
    pred = predict_mc(post, X[:5], K_mc=1, zero_noise=True)
    np.testing.assert_allclose(pred.mean, net.forward(spec, weights, X[:5])[0], atol=1e-12)


def test_mc_mean_near_map_at_origin(toy):
    spec, weights, X, y = toy
    post = build_posterior(spec, weights, X, y, PosteriorConfig(N_scale=len(X), tau=1.0), np.random.default_rng(0))
    K = 400
    pred = predict_mc(post, np.zeros((1, 1)), K_mc=K, rng=np.random.default_rng(1))
    det = net.forward(spec, weights, np.zeros((1, 1)))[0][0, 0]
    se = np.sqrt((pred.var[0, 0] - post.sigma_alea**2) / K)
    assert abs(pred.mean[0, 0] - det) <= 3 * se


def test_mc_is_reproducible(toy):
    spec, weights, X, y = toy
    post = build_posterior(spec, weights, X, y, PosteriorConfig(rank_K="50%", tau=1.0), np.random.default_rng(0))
    a = predict_mc(post, X[:4], K_mc=10, rng=np.random.default_rng(5))
    b = predict_mc(post, X[:4], K_mc=10, rng=np.random.default_rng(5))
    np.testing.assert_array_equal(a.mean, b.mean)


def test_classification_probabilities_sum_to_one():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((30, 2))
    labels = (X[:, 0] > 0).astype(int) + (X[:, 1] > 0).astype(int)
    spec = net.NetworkSpec((2, 5, 3), "tanh", "cross_entropy")
    weights = net.train_map(spec, X, labels, net.TrainConfig(lr=1e-2, epochs=200, seed=0)).weights
    post = build_posterior(spec, weights, X, labels, PosteriorConfig(tau=1.0), rng)
    pred = predict_mc(post, X[:6], K_mc=20, rng=rng)
    np.testing.assert_allclose(pred.probs.sum(axis=1), 1.0, atol=1e-9)
    with pytest.raises(ValueError):
        predict_linearized(post, X[:2])


def test_linearized_with_huge_prior_is_aleatoric_only(toy):
    spec, weights, X, y = toy
    post = build_posterior(spec, weights, X, y, PosteriorConfig(tau=1e14), np.random.default_rng(0))
    pred = predict_linearized(post, X[:5], sigma_alea=0.7)
    np.testing.assert_allclose(pred.var, 0.49, rtol=1e-9)


def test_linearized_variance_grows_away_from_data(toy):
    spec, weights, X, y = toy
    post = build_posterior(spec, weights, X, y, PosteriorConfig(), np.random.default_rng(0))
    var = predict_linearized(post, np.array([[0.0], [6.0 / 4]])).var[:, 0]
    assert var[1] > var[0]


def test_acquire_examples(toy):
    spec, weights, X, y = toy
    post = build_posterior(spec, weights, X, y, PosteriorConfig(), np.random.default_rng(0))
    pool = np.array([[X[0, 0]], [5.0]])
    assert acquire(post, pool) == 1
    assert acquire(post, pool[:1]) == 0
    grid = np.linspace(-3, 3, 31)[:, None]
    base = predict_linearized(post, grid).var.sum(axis=1)
    post.sigma_alea += 10.0
    assert acquire(post, grid) == int(np.argmax(base))
    with pytest.raises(ValueError):
        acquire(post, np.zeros((0, 1)))


def test_posterior_json_roundtrip(toy):
    spec, weights, X, y = toy
    for est in posterior.ESTIMATORS:
        post = build_posterior(spec, weights, X, y, PosteriorConfig(estimator=est, rank_K="50%", tau=0.5), np.random.default_rng(0))
        doc = json.loads(json.dumps(posterior.posterior_to_json(post)))
        back = posterior.posterior_from_json(doc)
        for a, b in zip(post.layers, back.layers):
            np.testing.assert_allclose(a.marginal_var(), b.marginal_var(), rtol=1e-12, atol=1e-15)
    with pytest.raises(ValueError):
        posterior.posterior_from_json({**doc, "schema_version": 0})


def test_info_reports_rank_and_verdict(toy):
    spec, weights, X, y = toy
    post = build_posterior(spec, weights, X, y, PosteriorConfig(rank_K="25%"), np.random.default_rng(0))
    for entry in post.info["layers"]:
        assert entry["L"] >= entry["K"]
        assert entry["verdict"] in ("valid", "repaired", "degenerate")
    assert isinstance(post.layers[0], InfPosterior)


def test_eigen_posterior_types(rng):
    f = random_factors(rng, 3, 2, 10)
    for est in ("efb", "kfac_exact", "kfac_ritter"):
        assert isinstance(build_layer_posterior(f, np.zeros(6), PosteriorConfig(estimator=est, tau=0.1)), EigenPosterior)


def test_log_uniform_pairs_range(rng):
    pairs = log_uniform_pairs(rng, 200, (1, 1000), (1e-3, 10))
    assert pairs.shape == (200, 2)
    assert np.all((pairs[:, 0] >= 1) & (pairs[:, 0] <= 1000))
    assert np.all((pairs[:, 1] >= 1e-3) & (pairs[:, 1] <= 10))
    assert np.median(np.log10(pairs[:, 0])) == pytest.approx(1.5, abs=0.3)
