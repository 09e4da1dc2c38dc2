import dataclasses

import numpy as np
import pytest

from helpers import three_mode_dataset
from oracles import exact_state_marginals, ols, random_model
from shdpvar.errors import ConfigurationError, InvalidParameterError, NumericalError
from shdpvar.inference import (
    GibbsConfig,
    GibbsSampler,
    empirical_iw_scale,
    fit,
    label_accuracy,
    mniw_posterior,
    resample_hyperparameters,
    sample_mniw,
    sample_state_sequence,
    sample_table_counts,
    split_concentration,
    update_emissions,
    update_global_beta,
    update_transitions,
)
from shdpvar.model import (
    SHDPVARModel,
    StickyHDPState,
    VAREmission,
    decode_states,
    regressors,
    sample_trajectory,
)
from shdpvar.stats import is_spd, rng_stream


def var1_data(A, T, seed, noise=0.1):
    d = A.shape[0]
    model = SHDPVARModel(StickyHDPState([1.0], [[1.0]], 1.0, 1.0, 0.0), (VAREmission(A[None], noise * np.eye(d)),))
    return sample_trajectory(model, T, rng_stream(seed))[1].data


A_TRUE = np.array([[0.6, -0.3], [0.2, 0.8]])


# --- configuration ----------------------------------------------------------------

def test_config_defaults():
    cfg = GibbsConfig()
    assert (cfg.truncation, cfg.max_iters, cfg.burn_in) == (20, 500, 250)
    assert cfg.iw_scale_factor == 0.75 and cfg.iw_dof_offset == 2
    assert cfg.gamma_prior == (1.0, 0.01) and cfg.alpha_kappa_prior == (1.0, 0.01)
    assert cfg.rho_prior == (10.0, 1.0)
    np.testing.assert_array_equal(cfg.prior_K(2), 10 * np.eye(2))
    np.testing.assert_array_equal(cfg.prior_M(2), np.zeros((2, 2)))


@pytest.mark.parametrize("kw", [dict(burn_in=0), dict(burn_in=500), dict(truncation=0), dict(iw_scale_factor=0.0)])
def test_config_invariants(kw):
    with pytest.raises(ConfigurationError):
        GibbsConfig(**kw)


def test_intercept_defaults_to_order_zero_only():
    assert GibbsConfig(order=0).use_intercept
    assert not GibbsConfig(order=1).use_intercept
    assert GibbsConfig(order=1, intercept=True).regressor_dim(3) == 4


# --- empirical IW scale ------------------------------------------------------------

def test_iw_scale_of_white_noise():
    x = rng_stream(30).standard_normal((100_000, 3))
    np.testing.assert_allclose(empirical_iw_scale([x]), 0.75 * np.eye(3), atol=0.02)


def test_iw_scale_constant_data_is_singular():
    with pytest.raises(NumericalError):
        empirical_iw_scale([np.ones((50, 2))])


def test_iw_scale_homogeneity():
    x = rng_stream(31).standard_normal((500, 2))
    np.testing.assert_allclose(empirical_iw_scale([2 * x]), 4 * empirical_iw_scale([x]), rtol=1e-12)


def test_iw_scale_pools_sequences():
    x = rng_stream(32).standard_normal((400, 2))
    np.testing.assert_allclose(empirical_iw_scale([x[:150], x[150:]]), empirical_iw_scale([x]), rtol=1e-12)


# --- state sequences ---------------------------------------------------------------

def test_single_mode_states_are_zero():
    model = SHDPVARModel(StickyHDPState([1.0], [[1.0]], 1.0, 1.0, 0.0), (VAREmission(np.zeros((0, 1, 1)), [[1.0]]),))
    z = sample_state_sequence(model, rng_stream(0).normal(size=(20, 1)), rng_stream(1))
    assert np.all(z == 0)


def test_separated_means_are_recovered():
    ems = tuple(VAREmission(np.zeros((0, 2, 2)), np.eye(2), [m, m]) for m in (-10.0, 10.0))
    pi = np.array([[0.95, 0.05], [0.05, 0.95]])
    model = SHDPVARModel(StickyHDPState([0.5, 0.5], pi, 1.0, 1.0, 0.0), ems)
    z, seq = sample_trajectory(model, 2000, rng_stream(33))
    zhat = sample_state_sequence(model, seq, rng_stream(34))
    assert np.mean(zhat == z) >= 0.99


def test_state_marginals_match_enumeration():
    ems = tuple(VAREmission(np.zeros((0, 1, 1)), [[1.0]], [m]) for m in (-0.7, 0.9))
    pi = np.array([[0.8, 0.2], [0.3, 0.7]])
    model = SHDPVARModel(StickyHDPState([0.4, 0.6], pi, 1.0, 1.0, 0.0), ems)
    data = np.array([[0.1], [-1.0], [0.4], [1.5]])
    exact = exact_state_marginals(model, data)
    rng = rng_stream(35)
    draws = np.array([sample_state_sequence(model, data, rng) for _ in range(10_000)])
    freq = np.stack([(draws == k).mean(axis=0) for k in range(2)], axis=1)
    np.testing.assert_allclose(freq, exact, atol=0.01)


def test_state_marginals_match_enumeration_var1():
    rng = np.random.default_rng(36)
    model = random_model(rng, 2, 1, 1)
    data = rng.normal(size=(5, 1))
    exact = exact_state_marginals(model, data)
    r = rng_stream(37)
    draws = np.array([sample_state_sequence(model, data, r) for _ in range(10_000)])
    freq = np.stack([(draws == k).mean(axis=0) for k in range(2)], axis=1)
    np.testing.assert_allclose(freq, exact, atol=0.01)


# --- emissions ------------------------------------------------------------------------

def test_mniw_posterior_mean_is_close_to_ols_and_truth():
    data = var1_data(A_TRUE, 5001, 38)
    Y, X = data[1:], regressors(data, 1)
    post = mniw_posterior(Y, X, np.zeros((2, 2)), 10 * np.eye(2), 0.075 * np.eye(2), 4.0)
    assert np.linalg.norm(post.mean_A - ols(Y, X)) < 0.05
    assert np.linalg.norm(post.mean_A - A_TRUE) < 0.05


def test_mniw_posterior_closed_form():
    rng = np.random.default_rng(39)
    Y, X = rng.normal(size=(30, 2)), rng.normal(size=(30, 3))
    M, K, S0 = rng.normal(size=(2, 3)), np.diag([1.0, 2.0, 3.0]), np.eye(2)
    post = mniw_posterior(Y, X, M, K, S0, 5.0)
    Sxx = X.T @ X + K
    Mn = (Y.T @ X + M @ K) @ np.linalg.inv(Sxx)
    S = S0 + Y.T @ Y + M @ K @ M.T - Mn @ Sxx @ Mn.T
    np.testing.assert_allclose(post.M, Mn, atol=1e-10)
    np.testing.assert_allclose(post.S, S, atol=1e-9)
    assert post.nu == 35.0


def test_empty_mode_draws_from_prior():
    rng = rng_stream(40)
    M = np.array([[0.3, -0.2]])
    K = 10 * np.eye(2)
    Y = np.zeros((0, 1))
    X = np.zeros((0, 2))
    As = []
    for _ in range(5000):
        ems = update_emissions(Y, X, np.zeros(0, dtype=int), 1, M, K, 0.5 * np.eye(1), 5.0, rng, 2, False)
        As.append(ems[0].coeffs[:, 0, 0])
    np.testing.assert_allclose(np.mean(As, axis=0), M[0], atol=0.01)


def test_posterior_variance_shrinks_with_data():
    rng = rng_stream(41)
    data = var1_data(A_TRUE, 50_001, 42)
    variances = []
    for T in (500, 5000, 50_000):
        Y, X = data[1:T + 1], regressors(data[:T + 1], 1)
        post = mniw_posterior(Y, X, np.zeros((2, 2)), 10 * np.eye(2), 0.075 * np.eye(2), 4.0)
        draws = np.array([sample_mniw(post, rng)[0] for _ in range(2000)])
        variances.append(draws.var(axis=0))
    assert np.all(variances[1] < variances[0]) and np.all(variances[2] < variances[1])


def test_update_emissions_partition(rng):
    data = var1_data(A_TRUE, 401, 43)
    Y, X = data[1:], regressors(data, 1)
    z = (np.arange(400) >= 200).astype(int)
    ems = update_emissions(Y, X, z, 3, np.zeros((2, 2)), 10 * np.eye(2), 0.075 * np.eye(2), 4.0,
                           rng_stream(44), 1, False)
    assert len(ems) == 3
    assert all(is_spd(e.noise) for e in ems)
    for e in ems[:2]:
        assert np.linalg.norm(e.coeffs[0] - A_TRUE) < 0.3


# --- transitions -------------------------------------------------------------------------

def test_transitions_without_counts_average_to_beta():
    rng = rng_stream(45)
    beta = np.array([0.5, 0.3, 0.2])
    rows = np.array([update_transitions(np.zeros((3, 3)), beta, 5.0, 0.0, rng) for _ in range(10_000)])
    np.testing.assert_allclose(rows.mean(axis=0), np.tile(beta, (3, 1)), atol=0.01)


def test_huge_kappa_gives_identity():
    pi = update_transitions(np.ones((3, 3)), np.ones(3) / 3, 1.0, 1e9, rng_stream(46))
    np.testing.assert_allclose(pi, np.eye(3), atol=1e-6)


def test_adding_counts_raises_transition_mean():
    beta = np.ones(3) / 3
    base = np.zeros((3, 3))
    more = base.copy()
    more[0, 2] = 5
    m0 = np.mean([update_transitions(base, beta, 3.0, 1.0, rng_stream(47, i))[0, 2] for i in range(4000)])
    m1 = np.mean([update_transitions(more, beta, 3.0, 1.0, rng_stream(47, i))[0, 2] for i in range(4000)])
    assert m1 > m0


def test_negative_counts_rejected():
    with pytest.raises(InvalidParameterError):
        update_transitions(-np.ones((2, 2)), [0.5, 0.5], 1.0, 0.0, rng_stream(0))


def test_rows_stay_stochastic():
    rng = rng_stream(48)
    for _ in range(100):
        pi = update_transitions(rng.integers(0, 20, size=(5, 5)), rng.dirichlet(np.full(5, 0.01)), 0.1, 0.0, rng)
        np.testing.assert_allclose(pi.sum(axis=1), 1.0, atol=1e-10)


# --- global weights and tables -----------------------------------------------------------

def test_beta_without_data_is_uniform_on_average():
    rng = rng_stream(49)
    draws = np.array([update_global_beta(np.zeros((4, 4)), 4.0, rng) for _ in range(20_000)])
    np.testing.assert_allclose(draws.mean(axis=0), 0.25, atol=0.01)


def test_unvisited_mode_beta_mass():
    rng = rng_stream(50)
    gamma, L = 2.0, 4
    mbar = np.array([[3, 1, 0, 0], [2, 4, 0, 0], [0, 0, 0, 0], [1, 0, 0, 0]])
    draws = np.array([update_global_beta(mbar, gamma, rng) for _ in range(20_000)])
    expected = (gamma / L) / (gamma + mbar.sum())
    assert abs(draws[:, 3].mean() - expected) < 0.01


def test_override_counts_shrink_self_tables_as_rho_grows():
    counts = np.array([[40, 3, 1], [2, 30, 4], [1, 2, 25]])
    beta = np.array([0.5, 0.3, 0.2])
    means = []
    for rho in (0.1, 0.5, 0.9):
        alpha, kappa = split_concentration(10.0, rho)
        rng = rng_stream(51)
        diag = [np.trace(sample_table_counts(counts, beta, alpha, kappa, rho, rng)[2]) for _ in range(3000)]
        means.append(np.mean(diag))
    assert means[0] > means[1] > means[2]


def test_table_counts_bounds():
    counts = np.array([[5, 0], [3, 7]])
    m, w, mbar = sample_table_counts(counts, np.array([0.6, 0.4]), 2.0, 3.0, 0.6, rng_stream(52))
    assert np.all(m <= counts) and np.all(m[counts > 0] >= 1)
    assert np.all(w <= np.diag(m)) and np.all(mbar >= 0)


# --- hyperparameters ---------------------------------------------------------------------

def test_hyperparameters_without_data_follow_prior():
    cfg = GibbsConfig()
    rng = rng_stream(53)
    L = 4
    z = np.zeros((L, L), dtype=int)
    draws = np.array([resample_hyperparameters(z, z, np.zeros(L, dtype=int), np.zeros(L, dtype=int),
                                               (100.0, 100.0, 10 / 11), cfg, rng) for _ in range(20_000)])
    # Gamma(1, 0.01) has sd 100, so the standard error here is about 0.7
    assert abs(draws[:, 0].mean() - 100) < 4
    assert abs(draws[:, 1].mean() - 100) < 4
    assert abs(draws[:, 2].mean() - 10 / 11) < 0.01


def test_split_concentration_identity():
    for apk, rho in [(100.0, 10 / 11), (3.7, 0.0), (1e-3, 0.999)]:
        alpha, kappa = split_concentration(apk, rho)
        assert abs(alpha + kappa - apk) < 1e-12
        assert kappa / (alpha + kappa) == pytest.approx(rho, abs=1e-12)


# --- full fits ------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def three_mode_fit():
    z, seq = three_mode_dataset()
    model, diag = fit([seq], GibbsConfig(), rng_stream(2))
    return z, seq, model, diag


def test_fit_recovers_segmentation(three_mode_fit):
    z, seq, model, _ = three_mode_fit
    assert label_accuracy(z[1:], decode_states(model, seq)) >= 0.9


def test_fit_records_default_run(three_mode_fit):
    _, _, model, diag = three_mode_fit
    assert model.truncation == 20
    assert diag.iterations == 500 == len(diag.active_modes)
    assert 450 <= diag.selected_iteration < 500


def test_fit_trace_improves(three_mode_fit):
    diag = three_mode_fit[3]
    trace = np.asarray(diag.joint_loglik)
    assert np.all(np.isfinite(trace))
    assert trace[-100:].mean() > trace[:10].mean()


def test_fit_point_estimate_is_window_maximum(three_mode_fit):
    diag = three_mode_fit[3]
    window = np.asarray(diag.joint_loglik[450:])
    assert diag.selected_iteration == 450 + int(np.argmax(window))


def test_fit_is_deterministic(quick_gibbs):
    data = var1_data(A_TRUE, 300, 54)
    m1, d1 = fit([data], quick_gibbs, rng_stream(9))
    m2, d2 = fit([data], quick_gibbs, rng_stream(9))
    assert d1.joint_loglik == d2.joint_loglik
    np.testing.assert_array_equal(m1.hdp.pi, m2.hdp.pi)
    for e1, e2 in zip(m1.emissions, m2.emissions):
        np.testing.assert_array_equal(e1.coeffs, e2.coeffs)
        np.testing.assert_array_equal(e1.noise, e2.noise)


def test_sweeps_preserve_invariants(quick_gibbs):
    data = var1_data(A_TRUE, 200, 55)
    sampler = GibbsSampler([data[:120], data[120:]], quick_gibbs, rng_stream(56))
    for _ in range(15):
        sampler.sweep()
        assert abs(sampler.beta.sum() - 1) < 1e-10
        np.testing.assert_allclose(sampler.pi.sum(axis=1), 1.0, atol=1e-10)
        assert all(is_spd(e.noise) for e in sampler.emissions)
        assert sampler.kappa / (sampler.alpha + sampler.kappa) == pytest.approx(sampler.rho, abs=1e-12)
        sampler.current_model()


def test_fixed_hyperparameters(quick_gibbs):
    cfg = dataclasses.replace(quick_gibbs, resample_hypers=False)
    _, diag = fit([var1_data(A_TRUE, 200, 57)], cfg, rng_stream(3))
    assert len(set(diag.alpha)) == 1 and len(set(diag.gamma)) == 1
    assert diag.hyper_updates == 0


def test_fit_requires_rng(quick_gibbs):
    with pytest.raises(ConfigurationError):
        fit([np.zeros((10, 1))], quick_gibbs)


def test_label_accuracy_uses_best_matching():
    assert label_accuracy([0, 0, 1, 1, 2], [5, 5, 3, 3, 3]) == pytest.approx(0.8)
