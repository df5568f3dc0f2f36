"""Kalman filtering and RTS smoothing for the LDS sub-chain with known inputs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import LOG_2PI, ModelParams, SequenceData, check_sequence, DimensionMismatchError


class DegenerateInnovationError(np.linalg.LinAlgError):
    """Innovation covariance ``C P C' + R`` is not invertible."""


def _sym(P):
    return 0.5 * (P + P.T)


def _solve_psd(S, B):
    """``S^{-1} B`` for symmetric PSD ``S``; pseudo-inverse when singular."""
    try:
        return np.linalg.solve(S, B)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(S, hermitian=True) @ B


@dataclass
class SmootherResult:
    """Filtered and (optionally) smoothed moments of ``x_t``.

    ``cross_covs[k]`` is ``Cov(x_{k+1}, x_k | Y)``. ``gains[k]`` is the
    smoother gain ``J_k`` linking ``x_k`` to ``x_{k+1}``.
    """

    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    predicted_means: np.ndarray
    predicted_covs: np.ndarray
    innovations: np.ndarray
    innovation_vars: np.ndarray
    log_likelihood: float
    means: Optional[np.ndarray] = None
    covs: Optional[np.ndarray] = None
    cross_covs: Optional[np.ndarray] = None
    gains: Optional[np.ndarray] = None

    @property
    def second_moments(self) -> np.ndarray:
        """``<x_t x_t'>`` for every t."""
        return self.covs + np.einsum("ti,tj->tij", self.means, self.means)

    @property
    def cross_moments(self) -> np.ndarray:
        """``<x_t x_{t-1}'>`` for t = 1..T-1."""
        return self.cross_covs + np.einsum("ti,tj->tij", self.means[1:], self.means[:-1])

    def conditional_covs(self) -> np.ndarray:
        """``Cov(x_t | x_{t+1}, Y)`` for t = 0..T-2 (backward chain factors)."""
        J = self.gains
        return np.array([
            _sym(self.filtered_covs[t] - J[t] @ self.predicted_covs[t + 1] @ J[t].T)
            for t in range(len(J))
        ]).reshape(-1, *self.filtered_covs.shape[1:])


def _check_inputs(params: ModelParams, y: SequenceData, u) -> np.ndarray:
    check_sequence(params, y)
    u = np.asarray(u, dtype=float)
    if u.ndim == 1 and params.state_dim == 1:
        u = u[:, None]
    if u.shape != (y.T, params.state_dim):
        raise DimensionMismatchError("u", f"expected shape {(y.T, params.state_dim)}, got {u.shape}")
    return u


def kalman_filter(params: ModelParams, y: SequenceData, u) -> SmootherResult:
    """Forward pass with deterministic inputs ``u`` (shape ``(T, N)``).

    The prior on ``x_0`` is ``N(u_0, Q)``; afterwards the prediction is
    ``A x + u_t`` with covariance ``A P A' + Q``. Covariance updates use the
    Joseph form. ``log_likelihood`` is ``log p(Y | U)``.
    """
    u = _check_inputs(params, y, u)
    A, C, Q, R = params.A, params.C, params.Q, params.R
    T, N, M = y.T, params.state_dim, params.obs_dim
    I = np.eye(N)

    mf = np.empty((T, N))
    Pf = np.empty((T, N, N))
    mp = np.empty((T, N))
    Pp = np.empty((T, N, N))
    innov = np.empty((T, M))
    Svar = np.empty((T, M, M))
    ll = 0.0

    m, P = u[0], Q
    for t in range(T):
        if t > 0:
            m = A @ mf[t - 1] + u[t]
            P = _sym(A @ Pf[t - 1] @ A.T + Q)
        mp[t], Pp[t] = m, P
        S = _sym(C @ P @ C.T + R)
        e = y.observations[t] - C @ m
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise DegenerateInnovationError(f"innovation covariance not positive definite at t={t}") from exc
        # K = P C' S^{-1}
        K = np.linalg.solve(S, C @ P).T
        mf[t] = m + K @ e
        IKC = I - K @ C
        Pf[t] = _sym(IKC @ P @ IKC.T + K @ R @ K.T)
        z = np.linalg.solve(L, e)
        ll -= 0.5 * (z @ z + 2.0 * np.sum(np.log(np.diag(L))) + M * LOG_2PI)
        innov[t], Svar[t] = e, S

    return SmootherResult(
        filtered_means=mf,
        filtered_covs=Pf,
        predicted_means=mp,
        predicted_covs=Pp,
        innovations=innov,
        innovation_vars=Svar,
        log_likelihood=float(ll),
    )


def rts_smooth(params: ModelParams, y: SequenceData, u) -> SmootherResult:
    """Kalman filter followed by the Rauch-Tung-Striebel backward pass.

    Adds smoothed means/covariances, lag-one cross-covariances
    ``Cov(x_t, x_{t-1}) = P_{t|T} J_{t-1}'`` and the smoother gains.
    """
    res = kalman_filter(params, y, u)
    A = params.A
    T, N = y.T, params.state_dim
    ms = res.filtered_means.copy()
    Ps = res.filtered_covs.copy()
    J = np.empty((max(T - 1, 0), N, N))
    V = np.empty((max(T - 1, 0), N, N))
    for t in range(T - 2, -1, -1):
        Pf = res.filtered_covs[t]
        J[t] = _solve_psd(res.predicted_covs[t + 1], A @ Pf).T
        ms[t] = res.filtered_means[t] + J[t] @ (ms[t + 1] - res.predicted_means[t + 1])
        Ps[t] = _sym(Pf + J[t] @ (Ps[t + 1] - res.predicted_covs[t + 1]) @ J[t].T)
        V[t] = Ps[t + 1] @ J[t].T
    res.means, res.covs, res.cross_covs, res.gains = ms, Ps, V, J
    return res
