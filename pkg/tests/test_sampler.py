from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import orth, random_factors, rel_fro
from sparseinf import fisher, sampler
from sparseinf.kronlin import PositiveDefinitenessViolation
from sparseinf.posterior import apply_hyperparameters
from sparseinf.sparse import VALID, SparseInfoForm, check_validity, sparsify_eigenbasis


def make_form(rng, n, m, K=None, T=30, tau=0.1):
    """A validated form whose prior keeps every D entry at least ``tau``.

    A correction clipped to eps leaves the information-form covariance
    ill-conditioned (relative accuracy ~ machine eps / eps), so the dense
    oracle comparisons use a prior large enough to avoid clipping.
    """
    f = random_factors(rng, n, m, T)
    form = sparsify_eigenbasis(fisher.build_eigenbasis(f), K)
    form = apply_hyperparameters(form, 1.0, tau + max(0.0, -form.D.min()), "inf")
    verdict, form = check_validity(form)
    assert verdict == VALID
    return form


def synthetic_form(Ua, Ug, lam, D):
    a, g = Ua.shape[1], Ug.shape[1]
    return SparseInfoForm(Ua, Ug, np.asarray(lam, float), np.asarray(D, float), np.arange(a), np.arange(g), np.asarray(D, float), a * g)


def dense_cov(form):
    return np.linalg.inv(form.matrix())


def test_vanishing_lowrank_gives_identity_factor(rng):
    form = synthetic_form(orth(rng, 3)[:, :2], orth(rng, 2), np.full(4, 1e-30), np.ones(6))
    state = sampler.build_sampler(form, np.zeros(6))
    assert np.max(np.abs(state.P_c)) < 1e-25
    np.testing.assert_allclose(sampler.factor_matrix(state), np.eye(6), atol=1e-14)


def test_marginal_std_trivial_case(rng):
    form = synthetic_form(orth(rng, 3), orth(rng, 2), np.full(6, 1e-30), np.full(6, 4.0))
    state = sampler.build_sampler(form, np.zeros(6))
    np.testing.assert_allclose(sampler.marginal_std(state), 0.5, atol=1e-14)


@pytest.mark.parametrize("K", [None, 3, 1])
def test_factor_matches_dense_inverse_tiny(rng, K):
    form = make_form(rng, 3, 2, K)
    state = sampler.build_sampler(form, np.zeros(6))
    F = sampler.factor_matrix(state)
    assert rel_fro(F @ F.T, dense_cov(form)) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(1, 8), st.data())
def test_factor_matches_dense_inverse_random(n, m, data):
    seed = data.draw(st.integers(0, 2**32 - 1))
    K = data.draw(st.integers(1, n * m))
    form = make_form(np.random.default_rng(seed), n, m, K, T=int(n * m + 5))
    state = sampler.build_sampler(form, np.zeros(n * m))
    F = sampler.factor_matrix(state)
    cov = dense_cov(form)
    assert rel_fro(F @ F.T, cov) <= 1e-8
    np.testing.assert_allclose(sampler.marginal_var(state), np.diag(cov), rtol=1e-8, atol=1e-12 * np.max(np.diag(cov)))
    # the stored L x L pieces satisfy their defining identities
    eye = np.eye(state.L)
    assert np.linalg.norm(state.B_c @ state.B_c.T - (state.V_s_gram + eye)) <= 1e-10 * np.linalg.norm(state.V_s_gram + eye)
    if state.A_c is not None:
        assert np.linalg.norm(state.A_c @ state.A_c.T - state.V_s_gram) <= 1e-10 * max(np.linalg.norm(state.V_s_gram), 1e-300)
        AtA = state.A_c.T @ state.A_c + eye
        assert np.linalg.norm(state.B_f @ state.B_f.T - AtA) <= 1e-10 * np.linalg.norm(AtA)


def test_quad_form_matches_dense(rng):
    form = make_form(rng, 4, 3, 5)
    state = sampler.build_sampler(form, np.zeros(12))
    J = rng.standard_normal((7, 12))
    expected = np.einsum("ij,jk,ik->i", J, dense_cov(form), J)
    np.testing.assert_allclose(sampler.quad_form(state, J), expected, rtol=1e-8)
    assert sampler.quad_form(state, J[0]).shape == ()


def test_zero_noise_returns_map(rng):
    form = make_form(rng, 3, 2)
    theta = rng.standard_normal(6)
    state = sampler.build_sampler(form, theta)
    np.testing.assert_array_equal(sampler.draw(state, noise=np.zeros(6)), theta)


def test_draw_is_deterministic_and_consumes_N_variates(rng):
    form = make_form(rng, 3, 2)
    state = sampler.build_sampler(form, np.zeros(6))
    a = sampler.draw(state, np.random.default_rng(9))
    b = sampler.draw(state, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)
    r = np.random.default_rng(9)
    sampler.draw(state, r)
    np.testing.assert_array_equal(r.standard_normal(3), np.random.default_rng(9).standard_normal(9)[6:])
    batch = sampler.draw(state, np.random.default_rng(9), size=4)
    assert batch.shape == (4, 6)
    np.testing.assert_allclose(batch[0], a, rtol=1e-13, atol=1e-15)
    with pytest.raises(ValueError):
        sampler.draw(state)


def test_empirical_covariance_six_dims():
    rng = np.random.default_rng(0)
    form = make_form(rng, 3, 2, 3)
    state = sampler.build_sampler(form, np.zeros(6))
    X = sampler.draw(state, rng, size=200_000)
    assert rel_fro(np.cov(X.T), dense_cov(form)) <= 0.05


def test_product_factor_is_symmetric_but_factor_need_not_be(rng):
    form = make_form(rng, 3, 2)
    state = sampler.build_sampler(form, np.zeros(6))
    F = sampler.factor_matrix(state)
    S = F @ F.T
    np.testing.assert_allclose(S, S.T, atol=1e-12)
    # the Cholesky-based inner matrix is not symmetric, so neither is F
    assert state.provenance["factorization"] == "cholesky"
    assert np.linalg.norm(F - F.T) > 1e-6 * np.linalg.norm(F)


def test_inner_matrix_identity(rng):
    # W = I + V C V^T must satisfy W W^T = I + V V^T for the factor to be exact
    form = make_form(rng, 3, 3, 4)
    state = sampler.build_sampler(form, np.zeros(9))
    G = state.V_s_gram
    C = state.C
    np.testing.assert_allclose(C + C.T + C @ G @ C.T, np.eye(state.L), atol=1e-9)
    assert np.linalg.norm(C - C.T) > 1e-6 * np.linalg.norm(C)


def test_eigen_fallback_for_rank_deficient_free_rows(rng):
    form = make_form(rng, 3, 3)
    free = np.zeros(9, dtype=bool)
    free[[0, 4, 8]] = True  # 3 free rows, 9 active columns
    form = replace(form, free=free)
    theta = rng.standard_normal(9)
    state = sampler.build_sampler(form, theta)
    assert state.provenance["factorization"] == "eigen"
    assert state.A_c is None and state.C is None
    F = sampler.factor_matrix(state)
    P = form.matrix()[np.ix_(free, free)]
    cov = np.zeros((9, 9))
    cov[np.ix_(free, free)] = np.linalg.inv(P)
    assert rel_fro(F @ F.T, cov) <= 1e-8
    np.testing.assert_allclose(sampler.marginal_var(state), np.diag(cov), rtol=1e-8, atol=1e-15)
    d = sampler.draw(state, rng)
    np.testing.assert_array_equal(d[~free], theta[~free])


def test_eigen_fallback_factor_symmetric_for_unit_D(rng):
    Ua = orth(rng, 3)
    Ug = orth(rng, 2)
    form = synthetic_form(Ua, Ug, rng.random(6) + 0.5, np.ones(6))
    form = replace(form, free=np.array([True, False, True, False, True, False]))
    state = sampler.build_sampler(form, np.zeros(6))
    assert state.provenance["factorization"] == "eigen"
    F = sampler.factor_matrix(state)
    np.testing.assert_allclose(F, F.T, atol=1e-12)


def test_build_rejects_invalid_forms(rng):
    form = synthetic_form(orth(rng, 2), orth(rng, 2), np.ones(4), np.array([1.0, -1.0, 1.0, 1.0]))
    with pytest.raises(ValueError):
        sampler.build_sampler(form, np.zeros(4))
    form = synthetic_form(orth(rng, 2), orth(rng, 2), np.array([1.0, 0.0, 1.0, 1.0]), np.ones(4))
    with pytest.raises(ValueError):
        sampler.build_sampler(form, np.zeros(4))
    with pytest.raises(ValueError):
        sampler.build_sampler(replace(form, lam_L=np.ones(4)), np.zeros(3))


def test_provenance_hashes_track_inputs(rng):
    form = make_form(rng, 3, 2)
    s1 = sampler.build_sampler(form, np.zeros(6))
    s2 = sampler.build_sampler(form, np.ones(6))
    assert s1.provenance["form_hash"] == s2.provenance["form_hash"]
    assert s1.provenance["theta_map_hash"] != s2.provenance["theta_map_hash"]
    assert s1.provenance["L"] == form.L and s1.provenance["N"] == 6


def test_cholesky_violation_is_linalg_error():
    assert issubclass(PositiveDefinitenessViolation, np.linalg.LinAlgError)
