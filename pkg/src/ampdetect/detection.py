"""Activity decisions on AMP outputs and their analytic error rates.

Every log-likelihood ratio used here is increasing in the magnitude (or row
norm) of the matched-filter output, so a decision reduces to comparing that
statistic with a threshold ``l``.  Under the effective model the statistic of
an inactive user is ``tau * chi`` with ``2 chi^2 ~ chi-square(2M)``; an active
user with gain ``g`` has ``tau`` replaced by ``sqrt(g^2 + tau^2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .channel_model import LargeScaleDist
from .special_functions import (
    DEFAULT_QUAD,
    QuadratureSpec,
    g_integral,
    reg_lower_gamma,
    reg_upper_gamma,
)


@dataclass
class DetectionReport:
    thresholds: np.ndarray
    pf_analytic: np.ndarray
    pm_analytic: np.ndarray
    pf_empirical: np.ndarray
    pm_empirical: np.ndarray
    n_inactive: int
    n_active: int
    mode: str = "stat_g/smv"

    COLUMNS = ("l", "pf_analytic", "pm_analytic", "pf_emp", "pm_emp", "n_inactive", "n_active")
    UNITS = ("amplitude", "probability", "probability", "probability", "probability", "count", "count")

    def rows(self):
        n = len(self.thresholds)
        return np.column_stack([self.thresholds, self.pf_analytic, self.pm_analytic, self.pf_empirical,
                                self.pm_empirical, np.full(n, self.n_inactive), np.full(n, self.n_active)])

    def to_csv(self, path) -> None:
        header = ",".join(self.COLUMNS) + "\n" + ",".join(self.UNITS)
        np.savetxt(path, self.rows(), delimiter=",", header=header, comments="",
                   fmt=["%.17g"] * 5 + ["%d", "%d"])

    @classmethod
    def from_csv(cls, path, mode="") -> "DetectionReport":
        data = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=2))
        return cls(data[:, 0], data[:, 1], data[:, 2], data[:, 3], data[:, 4],
                   int(data[0, 5]), int(data[0, 6]), mode)


def decide(statistic, l):
    """Declare active where the magnitude statistic exceeds ``l``."""
    if np.any(np.asarray(l) < 0):
        raise ValueError("threshold must be nonnegative")
    return np.asarray(statistic) > l


# -- log-likelihood ratios -------------------------------------------------------


def llr_known_g_mmv(r_norm, g, tau, m):
    """``log[(tau^2/(g^2+tau^2))^m exp(Delta ||r||^2)]``."""
    g2 = np.asarray(g, dtype=float) ** 2
    t2 = tau * tau
    return g2 / (t2 * (g2 + t2)) * np.asarray(r_norm) ** 2 - m * np.log1p(g2 / t2)


def llr_known_g_smv(x_mag, g, tau):
    return llr_known_g_mmv(x_mag, g, tau, 1)


def llr_stat_mmv(r_norm, tau, m, dist: LargeScaleDist, quad: QuadratureSpec = DEFAULT_QUAD):
    """``log int p_G(g) (tau^2/(g^2+tau^2))^m exp(Delta(g) ||r||^2) dg``."""
    s = np.atleast_1d(np.asarray(r_norm, dtype=float)) ** 2
    t2 = tau * tau

    def log_f(g):
        g2 = g * g
        return (dist.log_pdf(g)[None, :] - m * np.log1p(g2 / t2)[None, :]
                + s[:, None] * (g2 / (t2 * (g2 + t2)))[None, :])

    # the exponent grows with g up to ||r||^2/tau^2, so widen the window to cover sqrt(s)
    out = g_integral(log_f, dist, quad, tau=max(math.sqrt(float(s.max())), tau))
    return out if np.ndim(r_norm) else float(out[0])


def llr_stat_smv(x_mag, tau, dist, quad=DEFAULT_QUAD):
    return llr_stat_mmv(x_mag, tau, 1, dist, quad)


def llr_ampmmv(x_row, g, tau):
    """LLR of parallel AMP-MMV from the per-antenna outputs of the last round."""
    x_row = np.atleast_2d(np.asarray(x_row))
    norm = np.sqrt(np.sum(np.abs(x_row) ** 2, axis=-1))
    return llr_known_g_mmv(norm, g, tau, x_row.shape[-1])


# -- analytic error probabilities -------------------------------------------------


def pf_analytic(l, tau, m=1):
    """False-alarm probability ``1 - P(m, l^2/tau^2)``."""
    x = (np.asarray(l, dtype=float) / tau) ** 2
    if m == 1:
        out = np.exp(-x)
        return out if out.ndim else float(out)
    return reg_upper_gamma(m, x)


def pm_analytic_known_g(l, g, tau, m=1):
    x = np.asarray(l, dtype=float) ** 2 / (np.asarray(g, dtype=float) ** 2 + tau * tau)
    if m == 1:
        out = -np.expm1(-x)
        return out if out.ndim else float(out)
    return reg_lower_gamma(m, x)


def pm_analytic_stat(l, tau, m, dist: LargeScaleDist, quad: QuadratureSpec = DEFAULT_QUAD):
    """Missed-detection probability averaged over ``p_G``."""
    ls = np.atleast_1d(np.asarray(l, dtype=float))
    t2 = tau * tau
    out = np.zeros(len(ls))
    pos = ls > 0
    if np.any(pos):
        def log_f(g):
            x = ls[pos, None] ** 2 / (g[None, :] ** 2 + t2)
            with np.errstate(divide="ignore"):
                return dist.log_pdf(g)[None, :] + np.log(special.gammainc(m, x))
        out[pos] = np.minimum(np.exp(g_integral(log_f, dist, quad, tau)), 1.0)
    return out if np.ndim(l) else float(out[0])


def pm_average_known_g(l, tau, m, dist, quad=DEFAULT_QUAD):
    """User-averaged missed detection with a common threshold and known gains.

    Over the gain distribution this is the same integral as
    :func:`pm_analytic_stat`.
    """
    return pm_analytic_stat(l, tau, m, dist, quad)


def threshold_for_pf(target_pf, tau, m=1):
    if not 0 < target_pf <= 1:
        raise ValueError("target_pf must lie in (0, 1]")
    if target_pf == 1:
        return 0.0
    if m == 1:
        return tau * math.sqrt(-math.log(target_pf))
    return tau * math.sqrt(float(special.gammainccinv(m, target_pf)))


def equal_error_threshold(tau, m=1, mode="stat_g", dist=None, g=None, quad=DEFAULT_QUAD):
    """Threshold where ``Pf(l) = Pm(l)``.

    ``mode`` is ``stat_g`` (gain averaged over ``dist``) or ``known_g`` with a
    single gain ``g``.
    """
    def pm(l):
        if mode == "stat_g":
            return pm_analytic_stat(l, tau, m, dist, quad)
        if mode == "known_g":
            return pm_analytic_known_g(l, g, tau, m)
        raise ValueError(f"unknown mode {mode!r}")

    def gap(logl):
        l = math.exp(logl)
        return pf_analytic(l, tau, m) - pm(l)

    lo, hi = math.log(tau) - 10.0, math.log(tau) + 10.0
    while gap(hi) > 0:
        hi += 5.0
    while gap(lo) < 0:
        lo -= 5.0
    return math.exp(optimize.brentq(gap, lo, hi, xtol=1e-14, rtol=1e-14))


def per_user_thresholds(tau, g, m=1):
    """Known-gain equal-error threshold for each user, for use with :func:`decide`.

    The default in known-gain mode is one common threshold for all users; this
    gives each user the point where its own ``Pf`` and ``Pm`` coincide.
    """
    g = np.atleast_1d(np.asarray(g, dtype=float))
    return np.array([equal_error_threshold(tau, m, "known_g", g=gi) for gi in g])


def empirical_rates(decisions, truth):
    """``(pf, pm, counts)``; a rate with an empty denominator is NaN."""
    decisions = np.asarray(decisions, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if decisions.shape != truth.shape:
        raise ValueError("decisions and truth must have the same shape")
    n_inactive = int((~truth).sum())
    n_active = int(truth.sum())
    fa = int((decisions & ~truth).sum())
    md = int((~decisions & truth).sum())
    pf = fa / n_inactive if n_inactive else float("nan")
    pm = md / n_active if n_active else float("nan")
    return pf, pm, {"false_alarms": fa, "misses": md, "n_inactive": n_inactive, "n_active": n_active}


def empirical_curve(statistic, truth, thresholds):
    """Empirical ``(pf, pm)`` at each threshold in one pass over sorted statistics."""
    statistic = np.asarray(statistic, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    off = np.sort(statistic[~truth])
    on = np.sort(statistic[truth])
    t = np.asarray(thresholds, dtype=float)
    fa = len(off) - np.searchsorted(off, t, side="right")
    md = np.searchsorted(on, t, side="right")
    with np.errstate(invalid="ignore", divide="ignore"):
        pf = np.where(len(off) > 0, fa / max(len(off), 1), np.nan)
        pm = np.where(len(on) > 0, md / max(len(on), 1), np.nan)
    return pf, pm, fa, md


def roc_thresholds(tau, m=1, n=200, pf_range=(1e-5, 1.0)):
    """Thresholds whose analytic ``Pf`` is log-spaced over ``pf_range``."""
    pfs = np.geomspace(pf_range[0], pf_range[1], n)
    return np.array([threshold_for_pf(p, tau, m) for p in pfs[::-1]])


def wilson_interval(k, n, z=1.959963984540054):
    """Wilson score interval for ``k`` successes in ``n`` trials."""
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = k / n
        denom = 1 + z * z / n
        centre = (p + z * z / (2 * n)) / denom
        half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return centre - half, centre + half
