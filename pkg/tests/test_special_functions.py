import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import (
    lower_gamma_series,
    mp_family,
    mp_varphi,
    trapezoid_varphi,
    upper_gamma_lentz,
)

from ampdetect.channel_model import CellConfig, derive_lsf_constants
from ampdetect.special_functions import (
    QuadratureSpec,
    build_denoiser_table,
    exact_ratio,
    g_integral,
    log1m_varphi_scaled,
    mean_g_squared,
    mu,
    nu,
    reg_lower_gamma,
    reg_upper_gamma,
    shrinkage_bound,
    table_for,
    varphi,
    xi,
)

DIST = derive_lsf_constants(CellConfig())
LAM = 0.05
TAU = 2e-6


def random_grid(n, seed):
    rng = np.random.default_rng(seed)
    tau = 10 ** rng.uniform(-7.5, -4.5, n)
    s = tau**2 * 10 ** rng.uniform(-3, 3, n)
    i = rng.integers(1, 5, n)
    return list(zip(s, i, tau))


@pytest.mark.parametrize("s,i,tau", random_grid(8, 1))
def test_families_against_mpmath(s, i, tau):
    assert nu(s, i, tau, DIST) == pytest.approx(mp_family("nu", s, i, tau, DIST), rel=1e-6)
    assert mu(s, i, tau, DIST) == pytest.approx(mp_family("mu", s, i, tau, DIST), rel=1e-6)
    assert xi(s, i, tau, LAM, DIST) == pytest.approx(mp_family("xi", s, i, tau, DIST, LAM), rel=1e-6)


def test_nu_at_zero_is_finite_positive():
    v = nu(0.0, 1, TAU, DIST)
    assert np.isfinite(v) and v > 0
    assert v == pytest.approx(mp_family("nu", 0.0, 1, TAU, DIST), rel=1e-6)


def test_families_decrease_in_s():
    s = np.geomspace(1e-3, 1e3, 60) * TAU**2
    for fam in (nu(s, 2, TAU, DIST), mu(s, 2, TAU, DIST), xi(s, 2, TAU, LAM, DIST)):
        assert np.all(np.diff(fam) < 0)


def test_xi_without_inactive_mass():
    # lam = 1 drops the point mass, leaving the bare integral
    assert xi(TAU**2, 1, TAU, 1.0, DIST) == pytest.approx(mp_family("xi", TAU**2, 1, TAU, DIST), rel=1e-6)


def test_ratio_tends_to_one_for_large_s():
    s = 1e4 * TAU**2
    assert nu(s, 1, TAU, DIST) / xi(s, 1, TAU, LAM, DIST) == pytest.approx(1.0, abs=1e-3)


def test_mu_below_nu():
    s = np.geomspace(1e-2, 1e2, 20) * TAU**2
    assert np.all(mu(s, 1, TAU, DIST) < nu(s, 1, TAU, DIST))


def test_invalid_arguments():
    with pytest.raises(ValueError):
        nu(1.0, 1, 0.0, DIST)
    with pytest.raises(ValueError):
        nu(-1.0, 1, TAU, DIST)
    with pytest.raises(ValueError):
        xi(1.0, 1, TAU, 0.0, DIST)


@settings(max_examples=30, deadline=None)
@given(logs=st.floats(-6, 6), i=st.integers(1, 4))
def test_ratio_in_unit_interval(logs, i):
    s = TAU**2 * 10**logs
    r = nu(s, i, TAU, DIST) / xi(s, i, TAU, LAM, DIST)
    assert 0 <= r < 1


def test_g_integral_of_density_moment():
    # window-restricted second moment via the generic integrator
    quad = QuadratureSpec(g_window=(1e-10, 1e-3))
    lo, hi = quad.window(DIST)

    def log_f(g):
        inside = (g >= lo) & (g <= hi)
        with np.errstate(divide="ignore"):
            return np.where(inside, DIST.log_pdf(g) + 2 * np.log(g), -np.inf)

    direct = float(np.exp(g_integral(log_f, DIST, quad))[0])
    assert direct == pytest.approx(mean_g_squared(DIST, quad), rel=1e-4)


# -- varphi --------------------------------------------------------------------------


def test_varphi_trapezoid_example():
    assert varphi(10.0, 1, 0.05) == pytest.approx(trapezoid_varphi(10.0, 1, 0.05), rel=1e-9)


@pytest.mark.parametrize("s,i,lam", [(0.3, 1, 0.05), (10.0, 2, 0.05), (200.0, 4, 0.01), (1e4, 1, 0.5)])
def test_varphi_against_mpmath(s, i, lam):
    assert varphi(s, i, lam) == pytest.approx(mp_varphi(s, i, lam), rel=1e-6)


def test_varphi_all_active():
    for i in (1, 2, 4):
        assert varphi(3.0, i, 1.0) == pytest.approx(math.gamma(i + 1), rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(logs=st.floats(-3, 5), i=st.integers(1, 4), lam=st.floats(1e-3, 0.999))
def test_varphi_bounded(logs, i, lam):
    v = varphi(10**logs, i, lam)
    assert 0 < v <= math.gamma(i + 1) * (1 + 1e-12)
    assert np.isfinite(log1m_varphi_scaled(10**logs, i, lam)[0])


# -- incomplete gamma -------------------------------------------------------------------


def test_lower_gamma_m1_closed_form():
    x = np.linspace(0, 20, 41)
    assert np.allclose(reg_lower_gamma(1, x), 1 - np.exp(-x), rtol=1e-14, atol=1e-16)


def test_lower_gamma_limits():
    assert reg_lower_gamma(3, 0.0) == 0.0
    assert reg_lower_gamma(3, np.inf) == 1.0


def test_lower_gamma_series_and_lentz():
    assert reg_lower_gamma(4, 4.0) == pytest.approx(lower_gamma_series(4, 4.0), rel=1e-12)
    assert reg_upper_gamma(4, 9.0) == pytest.approx(upper_gamma_lentz(4, 9.0), rel=1e-12)
    assert reg_lower_gamma(4, 4.0) + reg_upper_gamma(4, 4.0) == pytest.approx(1.0, rel=1e-15)


def test_lower_gamma_rejects_negative():
    with pytest.raises(ValueError):
        reg_lower_gamma(2, -1.0)


# -- tables --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def table():
    return build_denoiser_table(TAU, 1, DIST, LAM)


def test_table_matches_at_knots(table):
    assert np.allclose(table.ratio(table.grid[1:-1]), table.ratio_values[1:-1], rtol=1e-13, atol=0)
    assert table.ratio(0.0) == table.ratio_values[0]


def test_table_between_knots(table):
    x = np.log(table.grid[1:])
    mid = np.exp(0.5 * (x[:-1] + x[1:]))
    assert np.max(np.abs(table.ratio(mid) / exact_ratio(mid, TAU, 1, LAM, DIST)[0] - 1)) < 1e-4


def test_table_slope_matches_exact(table):
    s = np.geomspace(1e-2, 1e2, 50) * TAU**2
    _, fp = table.shrink(s)
    assert np.allclose(fp, exact_ratio(s, TAU, 1, LAM, DIST)[1], rtol=1e-4)


def test_table_clamps_beyond_range(table):
    f, fp = table.shrink(np.array([10 * table.s_max]))
    assert f[0] == table.ratio_values[-1] and fp[0] == 0.0


def test_table_values_in_unit_interval(table):
    assert np.all(table.ratio_values >= 0) and np.all(table.ratio_values < 1)
    # inside the quadrature window the ratio respects the window's shrinkage bound
    s = np.geomspace(1e-2, 1e2, 50) * TAU**2
    assert np.all(table.ratio(s) <= shrinkage_bound(TAU, DIST))


def test_blended_table_close_to_exact():
    tau = 1.2345e-6
    tb = table_for(tau, 2, DIST, LAM)
    s = np.geomspace(1e-3, 1e3, 500) * tau**2
    assert np.max(np.abs(tb.ratio(s) / exact_ratio(s, tau, 2, LAM, DIST)[0] - 1)) < 1e-4


def test_table_csv(table, tmp_path):
    path = tmp_path / "table.csv"
    table.to_csv(path)
    data = np.loadtxt(path, delimiter=",")
    assert np.array_equal(data[:, 0], table.grid) and np.array_equal(data[:, 1], table.ratio_values)
