"""Multi-antenna recovery: AMP with a row denoiser and parallel AMP-MMV.

Rows are length-``M`` row vectors.  For ``eta(r) = r f(||r||^2)`` the row
Jacobian (``d eta = d r @ J``, Wirtinger) is ``J = f I + f' r^H r``; the
Onsager correction is ``(N/L) Z <J>`` with ``<J>`` averaged over rows.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import special

from .channel_model import LargeScaleDist
from .smv_amp import DenoiserKind, known_g_shrink, run_amp, shrink_factors
from .special_functions import DEFAULT_QUAD, node_set

EPS_PI = 1e-12


class VectorAmpState(NamedTuple):
    estimate: np.ndarray  # X_t, (N, M)
    residual: np.ndarray  # Z_t, (L, M)
    tau_hat: float
    iter: int
    sigma_hat: np.ndarray | None = None  # full residual covariance when tracked


class VampResult(NamedTuple):
    state: VectorAmpState
    taus: np.ndarray
    converged: bool


class MmvBeliefs(NamedTuple):
    pi_in: np.ndarray  # (N, M)
    pi_out: np.ndarray  # (N, M)


class AmpMmvResult(NamedTuple):
    estimate: np.ndarray  # (N, M)
    matched: np.ndarray  # (N, M) per-antenna x_tilde of the last round
    beliefs: MmvBeliefs
    taus: np.ndarray  # (I, M) final tau_hat of every stage
    tau_final: float
    converged: bool


def _row_sq(r):
    return np.sum(np.abs(r) ** 2, axis=-1)


# -- row denoisers -------------------------------------------------------------------


def vector_denoise_stat(r, tau, table):
    r = np.asarray(r, dtype=complex)
    f, _ = table.shrink(_row_sq(r))
    return r * np.asarray(f)[..., None]


def vector_denoise_known_g(r, g, tau, lam, m=None):
    r = np.asarray(r, dtype=complex)
    m = r.shape[-1] if m is None else m
    f, _ = known_g_shrink(_row_sq(r), g, tau, lam, m)
    return r * np.asarray(f)[..., None]


def row_jacobian_mean(r, f, fp):
    """Average over rows of ``f I + f' r^H r``."""
    n, m = r.shape
    outer = np.einsum("n,nk,nj->kj", fp, r.conj(), r) / n
    return np.mean(f) * np.eye(m) + outer


def _eig(sigma):
    sigma = np.asarray(sigma, dtype=complex)
    if not np.allclose(sigma, sigma.conj().T, rtol=1e-10, atol=1e-300):
        raise ValueError("covariance must be Hermitian")
    w, U = np.linalg.eigh(sigma)
    if np.any(w <= 0):
        raise ValueError("covariance must be positive definite")
    return w, U


def _general_components(sigma, lam, dist=None, g=None, quad=DEFAULT_QUAD, s_max=None):
    """Mixture components ``(log prior weight, g^2)`` for the general-covariance posterior.

    The first entry is the inactive component (``g = 0``).
    """
    w, _ = _eig(sigma)
    if g is not None:
        g2 = np.atleast_1d(np.asarray(g, dtype=float)) ** 2
        logw = np.log(lam) + np.zeros_like(g2)
    else:
        tau = math.sqrt(float(np.mean(w)))
        m = len(w)
        s_hi = s_max if s_max is not None else 40.0 * (quad.window(dist)[1] ** 2 + tau**2)
        rep = np.concatenate([[0.0], np.geomspace(1e-8 * tau**2, s_hi, 24)])
        u, lw = node_set([("xi", m), ("nu", m)], rep, tau, dist, quad)
        g2 = np.exp(2.0 * u)
        logw = math.log(lam) + dist.log_pdf(np.exp(u)) + u + lw
    with np.errstate(divide="ignore"):
        log0 = math.log1p(-lam) if lam < 1 else -np.inf
    return log0, logw, g2


def _general_posterior(v, sigma, log0, logw, g2):
    """Posterior component weights and per-component means for rows ``v`` (eigenbasis)."""
    w, U = _eig(sigma)
    vr = v @ U.conj()  # coordinates of each row in the eigenbasis: (U^H v^T)^T
    a2 = np.abs(vr) ** 2  # (n, m)
    dens = w[None, :] + g2[:, None]  # (K, m)
    log_act = logw[None, :] - a2 @ (1.0 / dens).T - np.sum(np.log(dens), axis=1)[None, :]
    log_in = log0 - a2 @ (1.0 / w) - np.sum(np.log(w))
    logs = np.column_stack([np.full(len(v), log_in) if np.ndim(log_in) == 0 else log_in, log_act])
    lz = special.logsumexp(logs, axis=1)
    p = np.exp(logs - lz[:, None])
    shrink = g2[:, None] / dens  # eigen-diagonal of A_k, (K, m)
    return p, vr, shrink, dens, U, w


def vector_denoise_general(r, sigma, lam, dist: LargeScaleDist | None = None, g=None,
                           quad=DEFAULT_QUAD, jacobian=False):
    """Posterior mean of rows observed in ``CN(0, sigma)`` noise.

    With ``g`` (scalar) the active prior is ``CN(0, g^2 I)``; otherwise ``g``
    is averaged over ``dist``.  With ``jacobian`` the row-averaged Wirtinger
    Jacobian (row convention) is returned as well.
    """
    r = np.atleast_2d(np.asarray(r, dtype=complex))
    if g is None and dist is None:
        raise ValueError("need either g or dist")
    log0, logw, g2 = _general_components(sigma, lam, dist, g, quad,
                                         s_max=max(float(_row_sq(r).max()), 1e-300) * 4)
    p, vr, shrink, dens, U, w = _general_posterior(r, sigma, log0, logw, g2)
    pa = p[:, 1:]
    means_e = pa @ shrink * vr  # posterior mean in eigen coordinates, (n, m)
    eta = means_e @ U.T
    if not jacobian:
        return eta
    # column convention in eigen coordinates:
    # J = sum_k p_k A_k - sum_k p_k (A_k v - eta)(v^H B_k), B_0 = Sigma^-1, A_0 = 0
    n, m = vr.shape
    comp_mean = shrink[None, :, :] * vr[:, None, :]  # (n, K, m)
    diff = np.concatenate([-means_e[:, None, :], comp_mean - means_e[:, None, :]], axis=1)
    inv = np.concatenate([(1.0 / w)[None, :], 1.0 / dens], axis=0)  # (K+1, m)
    left = diff * p[:, :, None]
    right = vr.conj()[:, None, :] * inv[None, :, :]
    jac_e = np.diag(np.mean(pa @ shrink, axis=0)) - np.einsum("nkj,nki->ji", left, right) / n
    jac_col = U @ jac_e @ U.conj().T
    return eta, jac_col.T


# -- vector AMP -----------------------------------------------------------------------


def _initial_vstate(S, Y, track=False):
    Y = np.asarray(Y, dtype=complex)
    L, M = Y.shape
    tau = float(np.linalg.norm(Y) / math.sqrt(L * M))
    sig = Y.conj().T @ Y / L if track else None
    return VectorAmpState(np.zeros((S.shape[1], M), dtype=complex), Y.copy(), tau, 0, sig)


def vamp_step(S, Y, state: VectorAmpState, kind: DenoiserKind, track_covariance=False) -> VectorAmpState:
    L, N = S.shape
    M = Y.shape[1]
    if state.tau_hat == 0.0:
        return state._replace(iter=state.iter + 1)
    R = S.conj().T @ state.residual + state.estimate
    if track_covariance:
        sig = state.sigma_hat if state.sigma_hat is not None else state.tau_hat**2 * np.eye(M)
        if kind.tag == "mmse_stat":
            X, J = vector_denoise_general(R, sig, kind.lam, dist=kind.dist, quad=kind.quad, jacobian=True)
        elif kind.tag == "mmse_known_g":
            X = np.empty_like(R)
            J = np.zeros((M, M), dtype=complex)
            for n in range(N):
                X[n], Jn = vector_denoise_general(R[n], sig, kind.lam, g=kind.lsf[n], jacobian=True)
                J += Jn / N
        else:
            raise ValueError("covariance tracking needs an MMSE denoiser")
    else:
        s = _row_sq(R)
        f, fp = shrink_factors(kind, s, state.tau_hat, m=M)
        X = R * f[:, None]
        J = row_jacobian_mean(R, f, fp)
    Z = Y - S @ X + (N / L) * state.residual @ J
    tau = float(np.linalg.norm(Z) / math.sqrt(L * M))
    sig = Z.conj().T @ Z / L if track_covariance else None
    return VectorAmpState(X, Z, tau, state.iter + 1, sig)


def run_vamp(S, Y, kind: DenoiserKind, max_iter=50, rel_tol=1e-6, track_covariance=False) -> VampResult:
    S = np.asarray(S)
    Y = np.atleast_2d(np.asarray(Y, dtype=complex))
    if Y.shape[0] != S.shape[0]:
        Y = Y.T
    state = _initial_vstate(S, Y, track_covariance)
    taus = [state.tau_hat]
    converged = False
    for _ in range(max_iter):
        new = vamp_step(S, Y, state, kind, track_covariance)
        taus.append(new.tau_hat)
        done = abs(new.tau_hat - state.tau_hat) <= rel_tol * state.tau_hat
        state = new
        if done:
            converged = True
            break
    return VampResult(state, np.array(taus), converged)


def row_statistic(S, state: VectorAmpState) -> np.ndarray:
    """Row norms of ``S^H Z + X``, the detection statistic."""
    return np.sqrt(_row_sq(S.conj().T @ state.residual + state.estimate))


# -- parallel AMP-MMV -------------------------------------------------------------------


def _clamp(p):
    return np.clip(p, EPS_PI, 1.0 - EPS_PI)


def ampmmv_into_phase(beliefs: MmvBeliefs, lam) -> np.ndarray:
    """Prior for each stage from the other stages' outgoing beliefs (leave-one-out product)."""
    po = _clamp(np.asarray(beliefs.pi_out, dtype=float))
    lp, lq = np.log(po), np.log1p(-po)
    on = lp.sum(axis=1, keepdims=True) - lp + (math.log(lam) if lam > 0 else -np.inf)
    off = lq.sum(axis=1, keepdims=True) - lq + math.log1p(-lam)
    return _clamp(special.expit(on - off))


def ampmmv_within_denoise(x_tilde, g, tau, pi_in):
    """Known-gain scalar MMSE denoiser with the activity prior replaced by ``pi_in``."""
    x_tilde = np.asarray(x_tilde, dtype=complex)
    f, _ = known_g_shrink(np.abs(x_tilde) ** 2, g, tau, pi_in)
    return x_tilde * f


def ampmmv_out_phase(x_tilde, g, tau) -> np.ndarray:
    """Activity belief from one stage: ``1 / (1 + (tau^2+g^2)/tau^2 exp(-Delta |x|^2))``."""
    g2 = np.asarray(g, dtype=float) ** 2
    t2 = tau * tau
    logit = g2 / (t2 * (g2 + t2)) * np.abs(x_tilde) ** 2 - np.log1p(g2 / t2)
    return _clamp(special.expit(logit))


def run_parallel_ampmmv(S, Y, g, lam, outer=5, inner=25) -> AmpMmvResult:
    """``outer`` rounds of into-phase, ``M`` independent ``inner``-step AMP runs, out-phase.

    Each stage restarts from ``x = 0, z = y_m``.  The returned ``tau_final``
    is the RMS of the last round's per-stage ``tau_hat``.
    """
    S = np.asarray(S)
    Y = np.atleast_2d(np.asarray(Y, dtype=complex))
    L, N = S.shape
    M = Y.shape[1]
    g = np.asarray(g, dtype=float)
    beliefs = MmvBeliefs(np.full((N, M), lam), np.full((N, M), 0.5))
    X = np.zeros((N, M), dtype=complex)
    matched = np.zeros((N, M), dtype=complex)
    taus = np.zeros((outer, M))
    converged = False
    for i in range(outer):
        pi_in = ampmmv_into_phase(beliefs, lam)
        pi_out = np.empty_like(pi_in)
        for m in range(M):
            kind = DenoiserKind("mmse_known_g", lam=pi_in[:, m], lsf=g)
            res = run_amp(S, Y[:, m], kind, max_iter=inner, rel_tol=0.0)
            st = res.state
            X[:, m] = st.estimate
            matched[:, m] = S.conj().T @ st.residual + st.estimate
            taus[i, m] = st.tau_hat
            pi_out[:, m] = ampmmv_out_phase(matched[:, m], g, st.tau_hat)
        converged = bool(np.max(np.abs(pi_out - beliefs.pi_out)) <= 1e-6)
        beliefs = MmvBeliefs(pi_in, pi_out)
    tau_final = float(np.sqrt(np.mean(taus[-1] ** 2))) if outer else float("nan")
    return AmpMmvResult(X, matched, beliefs, taus, tau_final, converged)
