"""Single-antenna AMP with MMSE and soft-threshold denoisers.

Every denoiser here has the form ``eta(x) = x * f(|x|^2)`` with real ``f``.
The Onsager term uses the Wirtinger derivative ``d eta / d x = f + s f'(s)``
with ``s = |x|^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import special

from .channel_model import LargeScaleDist
from .special_functions import (
    DEFAULT_QUAD,
    BlendedTable,
    DenoiserTable,
    QuadratureSpec,
    table_for,
)

KINDS = ("mmse_stat", "mmse_known_g", "soft_threshold", "identity")


@dataclass(frozen=True, eq=False)
class DenoiserKind:
    """Denoiser selection plus the prior information it needs.

    ``soft_threshold`` uses ``theta`` when given, otherwise ``kappa * tau_hat``.
    ``identity`` is a test hook (``eta(x) = x``).
    """

    tag: str
    lam: float = 0.05
    dist: LargeScaleDist | None = None
    lsf: np.ndarray | None = None
    theta: float | None = None
    kappa: float = 1.0
    quad: QuadratureSpec = field(default=DEFAULT_QUAD)

    def __post_init__(self):
        if self.tag not in KINDS:
            raise ValueError(f"unknown denoiser {self.tag!r}; expected one of {KINDS}")
        if self.tag == "mmse_stat" and self.dist is None:
            raise ValueError("mmse_stat needs the large-scale fading distribution")
        if self.tag == "mmse_known_g":
            if self.lsf is None or np.any(np.asarray(self.lsf) <= 0):
                raise ValueError("mmse_known_g needs positive large-scale gains")
        if self.tag == "soft_threshold":
            if self.theta is not None and self.theta <= 0:
                raise ValueError("theta must be positive")
            if self.kappa <= 0:
                raise ValueError("kappa must be positive")

    @classmethod
    def stat(cls, lam, dist, quad=DEFAULT_QUAD):
        return cls("mmse_stat", lam=lam, dist=dist, quad=quad)

    @classmethod
    def known_g(cls, lam, lsf):
        return cls("mmse_known_g", lam=lam, lsf=np.asarray(lsf, dtype=float))

    @classmethod
    def soft(cls, kappa=1.0, theta=None):
        return cls("soft_threshold", kappa=kappa, theta=theta)

    def threshold(self, tau):
        return self.theta if self.theta is not None else self.kappa * tau


class AmpState(NamedTuple):
    estimate: np.ndarray  # x_t, (N,)
    residual: np.ndarray  # z_t, (L,)
    tau_hat: float
    iter: int


class AmpResult(NamedTuple):
    state: AmpState
    taus: np.ndarray
    converged: bool


# -- shrinkage factors f(s) and f'(s) ------------------------------------------------


def known_g_shrink(s, g, tau, lam, m=1):
    """``(f, f')`` of the known-gain MMSE denoiser for ``m``-antenna rows.

    ``f = delta / (1 + (1-lam)/lam * ((g^2+tau^2)/tau^2)**m * exp(-Delta s))``
    with ``delta = g^2/(g^2+tau^2)`` and ``Delta = g^2/(tau^2 (g^2+tau^2))``,
    written as ``delta * expit(-logit)`` so nothing overflows.  ``lam`` may be
    an array (per-user activity beliefs).
    """
    s = np.asarray(s, dtype=float)
    g2 = np.asarray(g, dtype=float) ** 2
    t2 = tau * tau
    delta = g2 / (g2 + t2)
    big_delta = g2 / (t2 * (g2 + t2))
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore"):
        prior = np.log1p(-lam) - np.log(lam)
    logit = prior + m * np.log1p(g2 / t2) - big_delta * s
    p = special.expit(-logit)
    return delta * p, delta * big_delta * p * (1.0 - p)


def soft_shrink(s, theta):
    s = np.asarray(s, dtype=float)
    r = np.sqrt(s)
    on = r > theta
    safe = np.where(on, r, 1.0)
    f = np.where(on, 1.0 - theta / safe, 0.0)
    fp = np.where(on, 0.5 * theta / safe**3, 0.0)
    return f, fp


def shrink_factors(kind: DenoiserKind, s, tau, m=1, table: DenoiserTable | BlendedTable | None = None):
    """``(f, f')`` for squared norms ``s`` under ``kind`` at noise level ``tau``."""
    s = np.asarray(s, dtype=float)
    if kind.tag == "mmse_stat":
        if kind.lam == 0:
            # no user is ever active: the posterior mean is identically zero
            return np.zeros_like(s), np.zeros_like(s)
        if table is None:
            table = table_for(tau, m, kind.dist, kind.lam, kind.quad)
        return table.shrink(s)
    if kind.tag == "mmse_known_g":
        return known_g_shrink(s, kind.lsf, tau, kind.lam, m)
    if kind.tag == "soft_threshold":
        return soft_shrink(s, kind.threshold(tau))
    return np.ones_like(s), np.zeros_like(s)


# -- scalar denoisers --------------------------------------------------------------


def mmse_denoise_stat(x_tilde, tau, table: DenoiserTable | BlendedTable):
    """Posterior mean of ``x`` given ``x + tau v`` when only the statistics of ``g`` are known."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    x_tilde = np.asarray(x_tilde, dtype=complex)
    f, _ = table.shrink(np.abs(x_tilde) ** 2)
    return x_tilde * f


def mmse_denoise_known_g(x_tilde, g, tau, lam):
    if tau <= 0 or np.any(np.asarray(g) <= 0):
        raise ValueError("tau and g must be positive")
    x_tilde = np.asarray(x_tilde, dtype=complex)
    f, _ = known_g_shrink(np.abs(x_tilde) ** 2, g, tau, lam)
    return x_tilde * f


def soft_threshold(x_tilde, theta):
    if theta <= 0:
        raise ValueError("theta must be positive")
    x_tilde = np.asarray(x_tilde, dtype=complex)
    f, _ = soft_shrink(np.abs(x_tilde) ** 2, theta)
    return x_tilde * f


def denoise(kind: DenoiserKind, x_tilde, tau, table=None):
    x_tilde = np.asarray(x_tilde, dtype=complex)
    f, _ = shrink_factors(kind, np.abs(x_tilde) ** 2, tau, table=table)
    return x_tilde * f


def denoiser_divergence(kind: DenoiserKind, x_tilde, tau, table=None) -> float:
    """Average Wirtinger derivative ``<f(s) + s f'(s)>`` over the entries of ``x_tilde``."""
    s = np.abs(np.asarray(x_tilde)) ** 2
    f, fp = shrink_factors(kind, s, tau, table=table)
    return float(np.mean(f + s * fp))


# -- iteration -----------------------------------------------------------------------


def initial_state(S, y) -> AmpState:
    y = np.asarray(y, dtype=complex)
    N = S.shape[1]
    return AmpState(np.zeros(N, dtype=complex), y.copy(), float(np.linalg.norm(y) / math.sqrt(len(y))), 0)


def matched_filter(S, state: AmpState) -> np.ndarray:
    """Effective observation ``S^H z + x``: the signal plus roughly ``CN(0, tau^2)`` noise."""
    return S.conj().T @ state.residual + state.estimate


def amp_step(S, y, state: AmpState, kind: DenoiserKind) -> AmpState:
    L, N = S.shape
    if state.tau_hat == 0.0:
        # zero residual: the estimate already explains y exactly
        return state._replace(iter=state.iter + 1)
    x_tilde = matched_filter(S, state)
    s = np.abs(x_tilde) ** 2
    f, fp = shrink_factors(kind, s, state.tau_hat)
    x_new = x_tilde * f
    onsager = (N / L) * float(np.mean(f + s * fp))
    z_new = y - S @ x_new + onsager * state.residual
    tau_new = float(np.linalg.norm(z_new) / math.sqrt(L))
    return AmpState(x_new, z_new, tau_new, state.iter + 1)


def run_amp(S, y, kind: DenoiserKind, max_iter=50, rel_tol=1e-6, state: AmpState | None = None) -> AmpResult:
    """Iterate from ``x = 0, z = y`` until ``|tau_{t+1} - tau_t| / tau_t < rel_tol``.

    Returns the final state, the trace ``tau_0 .. tau_T`` and whether the
    tolerance was met before ``max_iter``.
    """
    S = np.asarray(S)
    state = initial_state(S, y) if state is None else state
    taus = [state.tau_hat]
    converged = False
    for _ in range(max_iter):
        new = amp_step(S, y, state, kind)
        taus.append(new.tau_hat)
        done = abs(new.tau_hat - state.tau_hat) <= rel_tol * state.tau_hat
        state = new
        if done:
            converged = True
            break
    return AmpResult(state, np.array(taus), converged)
