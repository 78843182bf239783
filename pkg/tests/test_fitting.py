"""Tests for shared-frailty model specification, likelihoods, and fitting."""
from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from frailsim import fitting
from frailsim.exceptions import FitSetupError
from frailsim.fitting import (
    ModelParams,
    ModelSpec,
    all_model_ids,
    conditional_pieces,
    fit,
    gamma_marginal_loglik,
    information_criteria,
    lognormal_marginal_loglik,
    model_from_id,
    pack_params,
    unpack_params,
)
from frailsim.hazards import FrailtyFamily
from frailsim.quadrature import tanh_sinh
from frailsim.simulate import ClusteredDataset, generate_dataset, make_scenario


def test_model_id_catalog():
    ids = all_model_ids()
    assert len(ids) == 12
    assert ids[0] == "exp_gamma"
    for model_id in ids:
        spec = model_from_id(model_id)
        assert spec.id == model_id
    assert {model_from_id(i).baseline for i in ids} == {"exp", "wei", "gom", "rp"}
    assert {model_from_id(i).frailty for i in ids} == {
        FrailtyFamily.GAMMA, FrailtyFamily.LOG_NORMAL}


@pytest.mark.parametrize("bad", ["cox_gamma", "exp", "rp4_gamma", "exp_mixturenormal"])
def test_model_from_id_rejects_unknown(bad):
    with pytest.raises(ValueError):
        model_from_id(bad)


def test_model_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("rp", FrailtyFamily.GAMMA)  # df required
    with pytest.raises(ValueError):
        ModelSpec("exp", FrailtyFamily.GAMMA, df=3)  # df forbidden
    with pytest.raises(ValueError):
        ModelSpec("exp", FrailtyFamily.MIXTURE_NORMAL)  # not a fitting family
    with pytest.raises(ValueError):
        ModelSpec("rp", FrailtyFamily.GAMMA, df=4)


def _tiny_cluster():
    times = np.array([0.8, 2.1, 4.9])
    events = np.array([1, 0, 1], dtype=np.int8)
    treats = np.array([0, 1, 1], dtype=np.int8)
    data = ClusteredDataset(
        cluster=np.zeros(3, dtype=np.int64),
        time=times, event=events, treat=treats,
    )
    return data, times, events, treats


def _numeric_cluster_loglik(spec, params, times, events, treats, theta):
    """Marginalize the cluster likelihood over Gamma(1/theta, 1/theta)
    frailty by brute-force tanh-sinh integration."""
    pieces = [conditional_pieces(spec, params, float(t), float(x))
              for t, x in zip(times, treats)]
    hs = np.array([p[0] for p in pieces])
    Hs = np.array([p[1] for p in pieces])
    k = 1.0 / theta

    def integrand(a):
        dens = a ** (k - 1.0) * np.exp(-k * a) * k**k / math.gamma(k)
        lik = np.ones_like(a)
        for h_i, H_i, e_i in zip(hs, Hs, events):
            lik = lik * np.exp(-a * H_i) * np.where(e_i, a * h_i, 1.0)
        return dens * lik

    return math.log(tanh_sinh(integrand, 0.0, 60.0, tol=1e-13))


@pytest.mark.parametrize(
    "model_id,baseline_params,beta,theta",
    [
        ("exp_gamma", [0.4], -0.3, 0.6),
        ("wei_gamma", [0.5, 0.8], -0.5, 0.25),
        ("gom_gamma", [0.5, 0.2], 0.2, 1.1),
    ],
)
def test_gamma_closed_form_matches_numeric_marginal(
        model_id, baseline_params, beta, theta):
    spec = model_from_id(model_id)
    params = ModelParams(spec, np.array(baseline_params, dtype=float), beta, theta)
    data, times, events, treats = _tiny_cluster()
    closed = gamma_marginal_loglik(spec, params, data)
    numeric = _numeric_cluster_loglik(spec, params, times, events, treats, theta)
    assert abs(closed - numeric) <= 1e-8 * abs(numeric)


def test_gamma_loglik_defined_for_all_censored_cluster():
    # evaluation has no event-count precondition; only fitting does
    spec = model_from_id("exp_gamma")
    params = ModelParams(spec, np.array([0.5]), -0.5, 0.25)
    data = ClusteredDataset(
        cluster=np.zeros(4, dtype=np.int64),
        time=np.full(4, 5.0),
        event=np.zeros(4, dtype=np.int8),
        treat=np.array([0, 1, 0, 1], dtype=np.int8),
    )
    # survivor-only marginal: (1 + theta * sum H)^(-1/theta), summed over none dead
    H_total = 0.5 * 5.0 * (2.0 + 2.0 * math.exp(-0.5))
    want = -math.log1p(0.25 * H_total) / 0.25
    got = gamma_marginal_loglik(spec, params, data)
    assert abs(got - want) <= 1e-12 * abs(want)


def test_lognormal_loglik_stable_in_node_count():
    sc = make_scenario("wei", "lognormal", 0.75, 1, 20)
    data = generate_dataset(sc, 2024)
    params = ModelParams(model_from_id("wei_lognormal"),
                         np.array([0.5, 0.8]), -0.5, 0.75)
    lls = []
    for nodes in (15, 63):
        spec = dataclasses.replace(model_from_id("wei_lognormal"), gh_nodes=nodes)
        lls.append(lognormal_marginal_loglik(spec, params, data))
    assert abs(lls[0] - lls[1]) <= 1e-6 * abs(lls[1])


def test_pack_unpack_round_trip():
    spec = model_from_id("gom_gamma")
    params = ModelParams(spec, np.array([0.45, 0.15]), -0.4, 0.8)
    vec = pack_params(params)
    back = unpack_params(spec, vec)
    np.testing.assert_allclose(back.baseline, params.baseline, rtol=1e-14)
    assert abs(back.beta - params.beta) <= 1e-14
    assert abs(back.frailty_var - params.frailty_var) <= 1e-14


def test_conditional_pieces_exponential():
    spec = model_from_id("exp_gamma")
    params = ModelParams(spec, np.array([0.4]), -0.3, 0.6)
    h, H = conditional_pieces(spec, params, 2.0, 1.0)
    assert abs(h - 0.4 * math.exp(-0.3)) <= 1e-15
    assert abs(H - 0.8 * math.exp(-0.3)) <= 1e-15


def test_fit_recovers_exponential_gamma_truth():
    sc = make_scenario("exp", "gamma", 0.5, 400, 25)
    data = generate_dataset(sc, 20240111)
    res = fit(model_from_id("exp_gamma"), data)
    assert res.converged
    assert res.hessian_pd
    assert abs(res.beta_hat - sc.beta) <= 0.05
    assert abs(res.frailty_var_hat - 0.5) <= 0.1
    rate = res.params.natural_vector()[0]
    assert 0.45 <= rate <= 0.55
    assert np.all(res.se_natural > 0)
    assert np.all(np.isfinite(res.se_natural))
    assert res.n_obs == 400 * 25
    assert res.n_events == int(data.event.sum())


def test_fit_recovers_weibull_lognormal_truth():
    sc = make_scenario("wei", "lognormal", 0.5, 150, 20)
    data = generate_dataset(sc, 777)
    res = fit(model_from_id("wei_lognormal"), data)
    assert res.converged
    assert abs(res.beta_hat - sc.beta) <= 0.08
    assert abs(res.frailty_var_hat - 0.5) <= 0.25


def test_fit_loglik_matches_evaluation_path():
    sc = make_scenario("wei", "gamma", 0.75, 50, 12)
    data = generate_dataset(sc, 1234)
    res = fit(model_from_id("wei_gamma"), data)
    again = gamma_marginal_loglik(res.spec, res.params, data)
    assert abs(res.loglik - again) <= 1e-9 * abs(res.loglik)


def test_fit_warm_start_reaches_same_optimum():
    sc = make_scenario("exp", "gamma", 0.25, 60, 10)
    data = generate_dataset(sc, 55)
    cold = fit(model_from_id("exp_gamma"), data)
    warm = fit(model_from_id("exp_gamma"), data, start=cold.trans_raw)
    assert warm.converged
    assert abs(warm.loglik - cold.loglik) <= 1e-6 * abs(cold.loglik)
    assert abs(warm.beta_hat - cold.beta_hat) <= 1e-4


def test_fit_rp_spline_baseline_and_pieces():
    sc = make_scenario("wei", "gamma", 0.5, 100, 20)
    data = generate_dataset(sc, 5150)
    res = fit(model_from_id("rp3_gamma"), data)
    assert res.converged
    assert res.basis is not None
    assert abs(res.beta_hat - sc.beta) <= 0.15
    t = np.linspace(0.2, 5.0, 40)
    h, H = conditional_pieces(res.spec, res.params, t, 1.0)
    assert np.all(h > 0)
    assert np.all(np.diff(H) > 0)


def test_fit_rejects_zero_events():
    data = ClusteredDataset(
        cluster=np.arange(6, dtype=np.int64),
        time=np.full(6, 5.0),
        event=np.zeros(6, dtype=np.int8),
        treat=np.zeros(6, dtype=np.int8),
    )
    with pytest.raises(FitSetupError):
        fit(model_from_id("exp_gamma"), data)


def test_fit_rejects_collinear_spline_basis():
    times = np.array([1.0, 1.0 + 1e-9, 1.0 + 2e-9, 1.0 + 3e-9, 1.0 + 4e-9,
                      1.0 + 5e-9, 1.0 + 6e-9, 1.0 + 7e-9, 2.0, 3.0, 4.0, 5.0])
    data = ClusteredDataset(
        cluster=np.zeros(12, dtype=np.int64),
        time=times,
        event=np.ones(12, dtype=np.int8),
        treat=np.zeros(12, dtype=np.int8),
    )
    with pytest.raises(FitSetupError):
        fit(model_from_id("rp9_gamma"), data)


def test_information_criteria_formulas():
    sc = make_scenario("exp", "gamma", 0.25, 60, 10)
    data = generate_dataset(sc, 55)
    res = fit(model_from_id("exp_gamma"), data)
    aic, bic = information_criteria(res)
    k = res.n_params
    assert aic == 2 * k - 2 * res.loglik
    assert bic == k * math.log(res.n_obs) - 2 * res.loglik
    # clustered BIC variant: n = number of clusters
    _, bic_g = information_criteria(res, n_obs=60)
    assert bic_g == k * math.log(60) - 2 * res.loglik


def test_fit_result_properties_consistent():
    sc = make_scenario("exp", "gamma", 0.25, 60, 10)
    data = generate_dataset(sc, 55)
    res = fit(model_from_id("exp_gamma"), data)
    assert res.n_params == len(res.trans) == len(res.param_names)
    assert res.beta_hat == res.params.beta
    assert res.frailty_var_hat == res.params.frailty_var
    assert res.beta_se == res.se_natural[res.beta_index]
    assert res.condition_number >= 1.0
    assert res.cov_trans is not None
    np.testing.assert_allclose(res.cov_trans, res.cov_trans.T, atol=1e-12)
    # the natural-scale parameter vector round-trips through the transform
    back = res.params_from_trans(res.trans)
    np.testing.assert_allclose(
        back.natural_vector(), res.params.natural_vector(), rtol=1e-10)


def test_fit_with_nontrivial_gh_nodes_override():
    sc = make_scenario("exp", "lognormal", 0.5, 80, 8)
    data = generate_dataset(sc, 808)
    coarse = fit(model_from_id("exp_lognormal"), data)
    fine = fit(dataclasses.replace(model_from_id("exp_lognormal"), gh_nodes=31), data)
    assert coarse.converged and fine.converged
    # the adaptive rule makes node count nearly immaterial
    assert abs(coarse.beta_hat - fine.beta_hat) <= 1e-4
