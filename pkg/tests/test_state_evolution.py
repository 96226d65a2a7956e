import math

import numpy as np
import pytest

from ampdetect.channel_model import CellConfig, derive_lsf_constants
from ampdetect.special_functions import mean_g_squared
from ampdetect.state_evolution import (
    default_tau0,
    fixed_point,
    known_g_row_denoiser,
    mse_known_g,
    mse_mmv,
    mse_monte_carlo,
    mse_stat,
    se_recursion,
    stat_row_denoiser,
)

DIST = derive_lsf_constants(CellConfig())
LAM = 0.05
SIGMA_W2 = 10 ** -11.4 / 200  # 15 dBm with the pilot energy gain of L = 200

# path-loss exponent giving a finite second moment (tail ~ g^-5), for the zero-denoiser identity
LIGHT = derive_lsf_constants(CellConfig(pathloss_beta=10.0))


@pytest.mark.parametrize("mode,tau,m", [("stat_g", 2e-6, 1), ("known_g", 2e-6, 1), ("stat_g", 3e-7, 2),
                                        ("known_g", 1e-5, 2)])
def test_mse_against_monte_carlo(mode, tau, m):
    den = stat_row_denoiser(DIST, LAM, m) if mode == "stat_g" else known_g_row_denoiser(LAM, m)
    mc, se = mse_monte_carlo(den, tau, 1_000_000, 17, DIST, LAM, m)
    analytic = mse_mmv(tau, m, mode, DIST, LAM)
    assert abs(analytic - mc) < 3 * se
    assert analytic == pytest.approx(mc, rel=0.01)


def test_known_g_dominates_stat():
    for tau in np.geomspace(1e-8, 1e-4, 50):
        assert mse_known_g(tau, DIST, LAM) <= mse_stat(tau, DIST, LAM) * (1 + 1e-9)


def test_mse_decreases_with_antennas():
    for mode in ("stat_g", "known_g"):
        for tau in (3e-7, 2e-6, 1e-5):
            vals = [mse_mmv(tau, m, mode, DIST, LAM) for m in (1, 2, 4)]
            assert vals[0] > vals[1] > vals[2]


def test_single_antenna_reduction():
    for tau in (3e-7, 2e-6):
        assert mse_mmv(tau, 1, "stat_g", DIST, LAM) == mse_stat(tau, DIST, LAM)
        assert mse_mmv(tau, 1, "known_g", DIST, LAM) == mse_known_g(tau, DIST, LAM)
    with pytest.raises(ValueError):
        mse_mmv(1e-6, 1, "oracle", DIST, LAM)


def test_mse_vanishes_with_activity():
    tau = 2e-6
    vals = [mse_stat(tau, DIST, lam) for lam in (1e-2, 1e-3, 1e-4)]
    assert vals[0] > vals[1] > vals[2] > 0
    assert vals[2] < 0.2 * vals[1] < 0.04 * vals[0]
    assert mse_stat(tau, DIST, 0.0) == 0.0 and mse_known_g(tau, DIST, 0.0) == 0.0


def test_mse_below_signal_power_and_noise():
    eg2 = mean_g_squared(DIST)
    for tau in np.geomspace(1e-8, 1e-4, 12):
        v = mse_stat(tau, DIST, LAM)
        assert 0 < v <= LAM * eg2 and v <= tau**2


def test_known_activity_is_wiener():
    tau = 2e-6
    g = np.geomspace(1e-12, 1e-1, 400_001)
    wiener = np.trapezoid(DIST.pdf(g) * g**2 * tau**2 / (g**2 + tau**2) * g, np.log(g))
    assert mse_known_g(tau, DIST, 1.0) == pytest.approx(wiener, rel=1e-6)
    assert mse_stat(tau, DIST, 1.0) >= mse_known_g(tau, DIST, 1.0)


def test_zero_and_identity_denoisers():
    tau = 2e-6
    zero = mse_monte_carlo(lambda r, g, t: np.zeros_like(r), tau, 1_000_000, 3, LIGHT, LAM)
    assert abs(zero[0] - LAM * mean_g_squared(LIGHT)) < 3 * zero[1]
    ident = mse_monte_carlo(lambda r, g, t: r, tau, 1_000_000, 4, DIST, LAM, m=2)
    assert abs(ident[0] - tau**2) < 3 * ident[1]
    mmse = mse_stat(tau, LIGHT, LAM)
    assert mmse < zero[0] and mse_stat(tau, DIST, LAM) < ident[0]


def test_monte_carlo_rejects_empty():
    with pytest.raises(ValueError):
        mse_monte_carlo(lambda r, g, t: r, 1e-6, 0, 0, DIST, LAM)


# -- recursion -----------------------------------------------------------------------


def test_no_activity_converges_to_noise_in_one_step():
    tr = se_recursion(SIGMA_W2, 1000, 200, lambda t: 0.0, 1e-3)
    assert tr.taus[1] == math.sqrt(SIGMA_W2) and tr.fixed_point == math.sqrt(SIGMA_W2) and tr.converged


@pytest.mark.parametrize("mode", ["stat_g", "known_g"])
def test_fixed_point_residual(mode):
    tr = fixed_point(SIGMA_W2, 1000, 200, mode, DIST, LAM, rel_tol=1e-13)
    t = tr.fixed_point
    resid = abs(t**2 - SIGMA_W2 - 5.0 * mse_mmv(t, 1, mode, DIST, LAM))
    assert tr.converged and resid < 1e-10 * t**2
    assert np.all(tr.taus[1:] >= math.sqrt(SIGMA_W2))


def test_fixed_point_is_reached_from_below():
    sw = math.sqrt(SIGMA_W2)
    a = fixed_point(SIGMA_W2, 1000, 200, "stat_g", DIST, LAM).fixed_point
    b = fixed_point(SIGMA_W2, 1000, 200, "stat_g", DIST, LAM, tau0=1.01 * sw).fixed_point
    assert a == pytest.approx(b, rel=1e-6) and a > sw


def test_default_start_is_matched_filter_level():
    t0 = default_tau0(SIGMA_W2, 1000, 200, LAM, DIST)
    assert t0**2 == pytest.approx(SIGMA_W2 + 5 * LAM * mean_g_squared(DIST), rel=1e-12)


def test_nonconvergence_flag():
    tr = se_recursion(SIGMA_W2, 1000, 200, lambda t: mse_stat(t, DIST, LAM), 1e-3, max_iter=2)
    assert not tr.converged and len(tr.taus) == 3


def test_trace_csv(tmp_path):
    tr = fixed_point(SIGMA_W2, 1000, 200, "known_g", DIST, LAM, m=2)
    tr.to_csv(tmp_path / "se.csv")
    data = np.loadtxt(tmp_path / "se.csv", delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 1], tr.taus) and np.array_equal(data[:, 0], np.arange(len(tr.taus)))
