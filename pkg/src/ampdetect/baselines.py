"""Reference sparse-recovery algorithms: CoSaMP and soft-threshold AMP."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .smv_amp import AmpResult, DenoiserKind, run_amp


class IllConditionedError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class CosampConfig:
    sparsity_k: int
    max_iter: int = 50
    ls_tol: float = 1e-10
    cond_limit: float = 1e12

    def __post_init__(self):
        if self.sparsity_k < 1:
            raise ValueError("sparsity_k must be >= 1")


def _lstsq(A, y, cfg):
    if A.shape[1] and np.linalg.cond(A) > cfg.cond_limit:
        raise IllConditionedError("least-squares subproblem is ill-conditioned")
    return np.linalg.lstsq(A, y, rcond=None)[0]


def cosamp(S, y, cfg: CosampConfig, return_support=False):
    """Compressive sampling matching pursuit.

    Each iteration merges the ``2k`` largest proxy entries ``|S^H r|`` into the
    current support, solves least squares there, prunes to the ``k`` largest
    coefficients and updates the residual.  An iteration that would increase
    the residual is rejected and the loop stops.
    """
    S = np.asarray(S)
    y = np.asarray(y, dtype=complex)
    L, N = S.shape
    k = cfg.sparsity_k
    if k > L or k >= N:
        raise ValueError(f"sparsity_k={k} must satisfy k <= L={L} and k < N={N}")
    x = np.zeros(N, dtype=complex)
    support = np.array([], dtype=int)
    resid = y.copy()
    rnorm = np.linalg.norm(resid)
    ynorm = np.linalg.norm(y)
    if ynorm == 0:
        return (x, support) if return_support else x
    for _ in range(cfg.max_iter):
        proxy = np.abs(S.conj().T @ resid)
        omega = np.argpartition(proxy, -2 * k)[-2 * k:] if 2 * k < N else np.arange(N)
        merged = np.union1d(omega, support)
        merged = merged[:L] if len(merged) > L else merged
        b = _lstsq(S[:, merged], y, cfg)
        keep = np.argpartition(np.abs(b), -k)[-k:]
        new_support = np.sort(merged[keep])
        coef = _lstsq(S[:, new_support], y, cfg)
        x_new = np.zeros(N, dtype=complex)
        x_new[new_support] = coef
        r_new = y - S @ x_new
        new_norm = np.linalg.norm(r_new)
        if new_norm > rnorm * (1 + 1e-12) and support.size:
            break
        x, support, resid = x_new, new_support, r_new
        converged = rnorm - new_norm <= cfg.ls_tol * ynorm
        rnorm = new_norm
        if converged or rnorm <= cfg.ls_tol * ynorm:
            break
    return (x, support) if return_support else x


def run_soft_amp(S, y, kappa=1.0, theta=None, max_iter=50, rel_tol=1e-6) -> AmpResult:
    """AMP with the soft-threshold denoiser, ``theta = kappa * tau_hat`` unless fixed."""
    return run_amp(S, y, DenoiserKind.soft(kappa=kappa, theta=theta), max_iter=max_iter, rel_tol=rel_tol)
