import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quenched_asip import covariance as cv, driving, maps, observables as ob, simulate as sim, transfer as tr


def _centered(fam, sys, g, k):
    return cv.center_observable(g, tr.cocycle(fam, sys, k))


@pytest.fixture(scope="module")
def doubling_setup():
    fam = maps.MapFamily({"doubling": maps.doubling()})
    return fam, driving.constant("doubling")


def test_uncentered_rejected(doubling_setup):
    fam, sys = doubling_setup
    with pytest.raises(ValueError, match="not centered"):
        cv.sigma_scalar(fam, sys, ob.identity(), 0, k=256)


def test_vector_input_rejected(doubling_setup):
    fam, sys = doubling_setup
    g = _centered(fam, sys, ob.stack(ob.cosine(), ob.sine()), 256)
    with pytest.raises(ValueError, match="scalar"):
        cv.sigma_scalar(fam, sys, g, 0, k=256)


def test_center_with_density_mapping(doubling_setup):
    fam, sys = doubling_setup
    fd = tr.fiber_density(fam, sys, 0, 64)
    g = cv.center_observable(ob.identity(), {0: fd})
    assert g.mean(0) == pytest.approx(0.5)
    with pytest.raises(KeyError, match="fiber 1"):
        g.mean(1)


def test_cos_under_doubling(doubling_setup):
    fam, sys = doubling_setup
    s2, tail = cv.sigma_scalar(fam, sys, _centered(fam, sys, ob.cosine(), 4096), 0, N_max=64, k=4096)
    assert s2 == pytest.approx(0.5, abs=1e-12)
    assert tail <= 1e-3


# Indicators of dyadic intervals are grid-exact for the doubling Ulam chain, so their
# Green-Kubo sums follow from independent fair binary digits.
@pytest.mark.parametrize("a, b, expected", [(0.0, 0.5, 0.25), (0.0, 0.25, 5 / 16), (0.25, 0.75, 0.25)])
def test_dyadic_indicators(doubling_setup, a, b, expected):
    fam, sys = doubling_setup
    g = _centered(fam, sys, ob.indicator(a, b), 256)
    s2, _ = cv.sigma_scalar(fam, sys, g, 0, N_max=20, k=256)
    assert s2 == pytest.approx(expected, abs=1e-12)


def test_identity_under_doubling(doubling_setup):
    # Cov(x, T^n x) = 2^-n / 12, so the series sums to 1/4
    fam, sys = doubling_setup
    s2, _ = cv.sigma_scalar(fam, sys, _centered(fam, sys, ob.identity(), 4096), 0, N_max=64, k=4096)
    assert s2 == pytest.approx(0.25, abs=5e-4)


def test_coboundary_degenerate(doubling_setup):
    fam, sys = doubling_setup
    g = _centered(fam, sys, ob.coboundary(ob.cosine(), fam, sys), 4096)
    rep = cv.sigma_matrix(fam, sys, g, 0, k=4096)
    assert rep.sigma2[0, 0] <= 1e-6
    assert rep.degenerate and rep.degenerate_direction.tolist() == [1.0]


def test_sigma_matrix_two_components(doubling_setup):
    fam, sys = doubling_setup
    g = _centered(fam, sys, ob.stack(ob.cosine(), ob.sine()), 1024)
    rep = cv.sigma_matrix(fam, sys, g, 0, k=1024)
    assert np.allclose(rep.sigma2, 0.5 * np.eye(2), atol=1e-10)
    assert not rep.degenerate
    d = rep.to_dict()
    assert d["d"] == 2 and d["k"] == 1024 and len(d["per_direction"]) == 3


def test_sigma_matrix_degenerate_combination(doubling_setup):
    # (cos, cos) spans a one-dimensional subspace; (1, -1)/sqrt(2) is null
    fam, sys = doubling_setup
    g = _centered(fam, sys, ob.stack(ob.cosine(), ob.cosine()), 512)
    rep = cv.sigma_matrix(fam, sys, g, 0, k=512)
    assert np.allclose(rep.degenerate_direction, np.array([1.0, -1.0]) / np.sqrt(2))


def test_sigma_matrix_threads_agree(beta_family, iid_beta):
    g = _centered(beta_family, iid_beta, ob.stack(ob.identity(), ob.cosine()), 512)
    a = cv.sigma_matrix(beta_family, iid_beta, g, 0, N_max=32, k=512, window=64, threads=1)
    b = cv.sigma_matrix(beta_family, iid_beta, g, 0, N_max=32, k=512, window=64, threads=3)
    assert np.array_equal(a.sigma2, b.sigma2)


def test_polarization_random_directions(beta_family, iid_beta, rng):
    k = 512
    g = _centered(beta_family, iid_beta, ob.stack(ob.identity(), ob.cosine()), k)
    rep = cv.sigma_matrix(beta_family, iid_beta, g, 0, N_max=48, k=k, window=128)
    for v in rng.standard_normal((10, 2)):
        s2v, tail = cv.sigma_scalar(beta_family, iid_beta, g.dot(v), 0, N_max=48, k=k, window=128)
        assert abs(s2v - v @ rep.sigma2 @ v) <= 1e-10 * (1 + v @ v) + tail + rep.tail_bound * (v @ v)


def test_window_stationarity(beta_family):
    sys = driving.iid(["beta2", "beta3"], seed=3)
    g = _centered(beta_family, sys, ob.identity(), 1024)
    a = cv.sigma_estimate(beta_family, sys, g, 0, N_max=40, k=1024, window=1024)
    b = cv.sigma_estimate(beta_family, sys, g, 4000, N_max=40, k=1024, window=1024)
    assert abs(a.sigma2 - b.sigma2) <= 4 * np.hypot(a.window_stderr, b.window_stderr)


def test_finite_n_cos(doubling_setup):
    fam, sys = doubling_setup
    g = _centered(fam, sys, ob.cosine(), 1024)
    res = cv.finite_n_covariance(fam, sys, g, 0, [1, 2, 16, 100, 256], 1024)
    for n, M in zip(res.n_list, res.matrices):
        assert M[0, 0] / n == pytest.approx(0.5, abs=1e-12)
    assert res.c1 == pytest.approx(0.5, abs=1e-12)
    assert res.growth_exponent == pytest.approx(1.0, abs=1e-9)


def test_finite_n_dyadic_indicator_closed_form(doubling_setup):
    # Var(S_n) = n 3/16 + 2 (n-1) / 16 for the indicator of [0, 1/4)
    fam, sys = doubling_setup
    g = _centered(fam, sys, ob.indicator(0.0, 0.25), 64)
    ns = [1, 2, 3, 10, 50]
    res = cv.finite_n_covariance(fam, sys, g, 0, ns, 64)
    for n, M in zip(ns, res.matrices):
        assert M[0, 0] == pytest.approx(3 * n / 16 + 2 * (n - 1) / 16, abs=1e-12)


def test_finite_n_coboundary(doubling_setup):
    fam, sys = doubling_setup
    g = _centered(fam, sys, ob.coboundary(ob.cosine(), fam, sys), 2048)
    res = cv.finite_n_covariance(fam, sys, g, 0, [16, 64, 256], 2048)
    assert res.degenerate and max(M[0, 0] for M in res.matrices) < 1.5


def test_finite_n_matches_monte_carlo(beta_family, iid_beta):
    k, n = 4096, 64
    g = _centered(beta_family, iid_beta, ob.identity(), k)
    exact = cv.finite_n_covariance(beta_family, iid_beta, g, 5, [n], k).matrices[0][0, 0]
    paths = sim.birkhoff_paths(beta_family, iid_beta, g, 5, n, 20000, seed=11, k=k)
    mc = np.var(paths.at(n)[:, 0], ddof=1)
    assert abs(mc - exact) <= 4 * exact * np.sqrt(2 / 20000) + 0.002 * exact


def test_finite_n_over_n_approaches_sigma(beta_family, iid_beta):
    k = 1024
    g = _centered(beta_family, iid_beta, ob.identity(), k)
    est = cv.sigma_estimate(beta_family, iid_beta, g, 0, N_max=48, k=k, window=1024)
    res = cv.finite_n_covariance(beta_family, iid_beta, g, 0, [1024], k)
    assert res.matrices[0][0, 0] / 1024 == pytest.approx(est.sigma2, abs=0.05 * est.sigma2)


def test_uniform_corr_decay_identity(doubling_setup):
    fam, sys = doubling_setup
    g = _centered(fam, sys, ob.identity(), 4096)
    dec = cv.uniform_corr_decay(fam, sys, g, (0, 4), 12, 4096)
    assert dec.holds and dec.r == pytest.approx(0.5, abs=0.02)
    # the envelope dominates the exact profile 2^-l / 12
    assert 1 / 12 <= dec.C0 <= 1 / 6


def test_uniform_corr_decay_vanishing(doubling_setup):
    fam, sys = doubling_setup
    g = _centered(fam, sys, ob.stack(ob.cosine(), ob.sine()), 512)
    dec = cv.uniform_corr_decay(fam, sys, g, (0, 2), 6, 512)
    assert dec.holds and dec.to_dict()["holds"] is True


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=8, max_size=8), st.integers(0, 3))
def test_sigma_nonnegative_for_tables(values, fiber):
    fam = maps.MapFamily({"beta2": maps.beta_map(2), "beta3": maps.beta_map(3)})
    sys = driving.iid(["beta2", "beta3"], seed=1)
    g = _centered(fam, sys, ob.grid_table(values), 64)
    res = cv.finite_n_covariance(fam, sys, g, fiber, [1, 8, 32], 64)
    assert all(np.linalg.eigvalsh(M)[0] >= -1e-10 for M in res.matrices)
