"""Per-coordinate MMSE of the effective scalar/row channel and the SE recursion.

The effective model at noise level ``tau`` is ``r = x + tau v`` with
``x = a g h`` (``a ~ Bernoulli(lam)``, ``g ~ p_G``, ``h ~ CN(0, I_M)``) and
``v ~ CN(0, I_M)``.  MSE values are per complex coordinate.

Both analytic MSEs are written as ``E[Var(x | r)]`` split by the law of
total variance: the within-component part
``lam * int p_G(g) g^2 tau^2 / (g^2 + tau^2) dg`` and the spread of the
component means.  The latter is accumulated as a weighted variance, which
keeps it nonnegative and free of cancellation.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np
from scipy import special

from .channel_model import LargeScaleDist
from .smv_amp import known_g_shrink
from .special_functions import (
    DEFAULT_QUAD,
    QuadratureSpec,
    _family_log_integrand,
    _log_point_mass,
    _panel_nodes,
    g_integral,
    log1m_varphi_scaled,
    mean_g_squared,
    node_set,
    table_for,
)


class SeTrace(NamedTuple):
    taus: np.ndarray
    converged: bool
    fixed_point: float
    mode: str
    monotone: bool

    def to_csv(self, path) -> None:
        t = np.arange(len(self.taus))
        np.savetxt(path, np.column_stack([t, self.taus]), delimiter=",", fmt=["%d", "%.17g"],
                   header="t (iteration),tau_t (amplitude)", comments="")


def _wiener_term(tau, dist, lam, quad):
    t2 = tau * tau

    def log_f(g):
        return dist.log_pdf(g) + 2.0 * np.log(g) + math.log(t2) - np.log(g * g + t2)

    return lam * float(np.exp(g_integral(log_f, dist, quad, tau)[0]))


def mse_stat(tau, dist: LargeScaleDist, lam, quad: QuadratureSpec = DEFAULT_QUAD, m=1,
             v_span=(-40.0, 30.0)) -> float:
    """Per-coordinate MMSE when only the distribution of ``g`` is known.

    The spread term is ``lam a / Gamma(m+1) int s^m xi_m(s) Var_w(delta) ds``
    where ``Var_w`` is the variance of ``delta = g^2/(g^2+tau^2)`` under the
    posterior over ``g`` (inactive users carry ``delta = 0``).  The ``s``
    integral runs over ``v = ln(s / tau^2)``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if lam <= 0:
        return 0.0
    g_hi = quad.window(dist)[1]
    v_lo = v_span[0]
    v_hi = max(2.0 * math.log(g_hi / tau), 0.0) + v_span[1]
    v, wv = _panel_nodes(np.arange(v_lo, v_hi + 1.0, 1.0), 8)
    s = tau * tau * np.exp(v)

    rep = tau * tau * np.exp(np.arange(v_lo, v_hi + 4.0, 4.0))
    u, lw = node_set([("xi", m)], rep, tau, dist, quad)
    log_comp = _family_log_integrand("xi", m, s, u, tau, dist) + lw  # (ns, ng)
    log_pt = _log_point_mass(m, s, tau, lam, dist)
    logs = np.column_stack([log_pt, log_comp])
    log_xi = special.logsumexp(logs, axis=1)
    p = np.exp(logs - log_xi[:, None])
    g2 = np.exp(2.0 * u)
    delta = np.concatenate([[0.0], g2 / (g2 + tau * tau)])
    mean = p @ delta
    var = (p * (delta[None, :] - mean[:, None]) ** 2).sum(axis=1)
    log_int = math.log(lam * dist.a) - special.gammaln(m + 1) + (m + 1) * np.log(s) + log_xi
    spread = float(np.sum(wv * np.exp(log_int) * var))
    return _wiener_term(tau, dist, lam, quad) + spread


def mse_known_g(tau, dist: LargeScaleDist, lam, quad: QuadratureSpec = DEFAULT_QUAD, m=1) -> float:
    """Per-coordinate MMSE when each user's ``g`` is known.

    Spread term: ``lam int p_G g^4/(g^2+tau^2) (1 - phi_m(g^2/tau^2)/Gamma(m+1)) dg``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if lam <= 0:
        return 0.0
    t2 = tau * tau
    if lam >= 1.0:
        return _wiener_term(tau, dist, lam, quad)

    def log_f(g):
        return (dist.log_pdf(g) + 4.0 * np.log(g) - np.log(g * g + t2)
                + log1m_varphi_scaled(g * g / t2, m, lam))

    spread = lam * float(np.exp(g_integral(log_f, dist, quad, tau)[0]))
    return _wiener_term(tau, dist, lam, quad) + spread


def mse_mmv(tau, m, mode, dist, lam, quad=DEFAULT_QUAD) -> float:
    """Per-coordinate MMSE of the ``m``-antenna row denoiser (``mode`` is ``stat_g`` or ``known_g``)."""
    if mode == "stat_g":
        return mse_stat(tau, dist, lam, quad, m=m)
    if mode == "known_g":
        return mse_known_g(tau, dist, lam, quad, m=m)
    raise ValueError(f"unknown mode {mode!r}")


def default_tau0(noise_var, N, L, lam, dist, quad=DEFAULT_QUAD) -> float:
    """Matched-filter noise level ``sqrt(sigma_w^2 + (N/L) lam E[g^2])`` (``E`` over the window)."""
    return math.sqrt(noise_var + N / L * lam * mean_g_squared(dist, quad))


def se_recursion(noise_var, N, L, mse_fn: Callable[[float], float], tau0, rel_tol=1e-8,
                 max_iter=200, mode="") -> SeTrace:
    """Iterate ``tau_{t+1}^2 = sigma_w^2 + (N/L) MSE(tau_t)`` from ``tau0``."""
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    taus = [float(tau0)]
    converged = False
    for _ in range(max_iter):
        nxt = math.sqrt(noise_var + N / L * mse_fn(taus[-1]))
        taus.append(nxt)
        if abs(nxt - taus[-2]) <= rel_tol * taus[-2]:
            converged = True
            break
    taus = np.array(taus)
    steps = np.diff(taus[1:])
    monotone = bool(np.all(steps <= 0) or np.all(steps >= 0))
    return SeTrace(taus, converged, float(taus[-1]), mode, monotone)


def fixed_point(noise_var, N, L, mode, dist, lam, m=1, quad=DEFAULT_QUAD, tau0=None, rel_tol=1e-8) -> SeTrace:
    """Convenience wrapper: SE for the MMSE denoiser of the given mode."""
    if tau0 is None:
        tau0 = default_tau0(noise_var, N, L, lam, dist, quad)
    return se_recursion(noise_var, N, L, lambda t: mse_mmv(t, m, mode, dist, lam, quad), tau0,
                        rel_tol=rel_tol, mode=f"{mode}/M={m}")


# -- Monte Carlo oracle --------------------------------------------------------------


def sample_effective_channel(rng, draws, tau, dist, lam, m=1):
    """Draw ``(x, g, r)`` rows of the effective model; ``g`` is drawn for everyone."""
    active = rng.random(draws) < lam
    g = dist.sample(rng, draws)
    h = (rng.standard_normal((draws, m)) + 1j * rng.standard_normal((draws, m))) / math.sqrt(2.0)
    v = (rng.standard_normal((draws, m)) + 1j * rng.standard_normal((draws, m))) / math.sqrt(2.0)
    x = np.where(active[:, None], g[:, None] * h, 0.0)
    return x, g, x + tau * v


def stat_row_denoiser(dist, lam, m=1, quad=DEFAULT_QUAD):
    def eta(r, g, tau):
        f, _ = table_for(tau, m, dist, lam, quad).shrink(np.sum(np.abs(r) ** 2, axis=1))
        return r * f[:, None]
    return eta


def known_g_row_denoiser(lam, m=1):
    def eta(r, g, tau):
        f, _ = known_g_shrink(np.sum(np.abs(r) ** 2, axis=1), g, tau, lam, m)
        return r * f[:, None]
    return eta


def mse_monte_carlo(denoiser, tau, draws, seed, dist, lam, m=1, chunk=200_000):
    """Sample mean and standard error of ``||eta(r) - x||^2 / m``.

    ``denoiser(r, g, tau)`` maps ``(n, m)`` rows to ``(n, m)`` rows.
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    rng = np.random.default_rng(seed)
    total = total_sq = 0.0
    done = 0
    while done < draws:
        n = min(chunk, draws - done)
        x, g, r = sample_effective_channel(rng, n, tau, dist, lam, m)
        err = np.sum(np.abs(denoiser(r, g, tau) - x) ** 2, axis=1) / m
        total += err.sum()
        total_sq += (err**2).sum()
        done += n
    mean = total / draws
    var = max(total_sq / draws - mean**2, 0.0)
    return mean, math.sqrt(var / max(draws - 1, 1))
