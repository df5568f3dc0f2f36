"""Structured variational E-step for the mixed-state model.

The posterior is approximated by a product of an HMM over ``S`` (driven by
soft evidence ``log q_t``) and an LDS over ``X`` (driven by deterministic
inputs ``u_t``). Each half is the exact coordinate-ascent optimum given the
other, so the free-energy bound never decreases across sweeps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .hmm import HmmPosterior, forward_backward
from .lds import SmootherResult, rts_smooth
from .model import LOG_2PI, ModelParams, SequenceData, check_sequence, validate

logger = logging.getLogger(__name__)

Q_JITTER = 1e-10
DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 100


def _xlogy(x, y):
    """``x * log(y)`` with ``0 * log(0) = 0``."""
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    out = np.zeros(x.shape)
    nz = x != 0
    with np.errstate(divide="ignore"):
        out[nz] = x[nz] * np.log(y[nz])
    return out


def precision(Q: np.ndarray) -> np.ndarray:
    """``Q^{-1}``, regularised with ``1e-10 I`` when Q is nearly singular."""
    if np.linalg.eigvalsh(Q).min() < Q_JITTER:
        logger.warning("Q has eigenvalues below %g; adding %g*I before inversion", Q_JITTER, Q_JITTER)
        Q = Q + Q_JITTER * np.eye(Q.shape[0])
    return np.linalg.inv(Q)


# ---------------------------------------------------------------------------
# Sufficient statistics
# ---------------------------------------------------------------------------


@dataclass
class SufficientStats:
    """Expected sufficient statistics summed over time steps (and sequences).

    ``x_{-1}`` is taken as zero, so the ``prev`` sums only include t >= 1.
    """

    Sxx: np.ndarray          # sum_t <x_t x_t'>
    Sxx_prev: np.ndarray     # sum_{t>=1} <x_{t-1} x_{t-1}'>
    Sx_xprev: np.ndarray     # sum_{t>=1} <x_t x_{t-1}'>
    Sx_s: np.ndarray         # sum_t <x_t><s_t>'
    Sxprev_s: np.ndarray     # sum_{t>=1} <x_{t-1}><s_t>'
    Ss: np.ndarray           # sum_t <s_t>
    Sxi: np.ndarray          # sum_{t>=1} <s_t s_{t-1}'>
    Sgamma0: np.ndarray      # sum over sequences of <s_0>
    Syy: np.ndarray          # sum_t y_t y_t'
    Syx: np.ndarray          # sum_t y_t <x_t>'
    n_steps: int
    n_seq: int

    def __add__(self, other: "SufficientStats") -> "SufficientStats":
        kw = {k: getattr(self, k) + getattr(other, k) for k in self.__dataclass_fields__}
        return SufficientStats(**kw)

    @property
    def Szz(self) -> np.ndarray:
        """Second moment of the stacked regressor ``[x_{t-1}; s_t]``."""
        return np.block([[self.Sxx_prev, self.Sxprev_s], [self.Sxprev_s.T, np.diag(self.Ss)]])

    @property
    def Sxz(self) -> np.ndarray:
        return np.hstack([self.Sx_xprev, self.Sx_s])


@dataclass
class PosteriorStats:
    """Posterior moments from one E-step, plus the free-energy bound."""

    x_mean: np.ndarray             # (T, N)
    x_second_moment: np.ndarray    # (T, N, N)   <x_t x_t'>
    x_cross_moment: np.ndarray     # (T-1, N, N) <x_t x_{t-1}'>, t >= 1
    s_mean: np.ndarray             # (T, S)
    s_pair_mean: np.ndarray        # (T-1, S, S) <s_t s_{t-1}'>, t >= 1
    bound: float = float("nan")

    @classmethod
    def from_posteriors(cls, sm: SmootherResult, hp: HmmPosterior, bound=float("nan")) -> "PosteriorStats":
        return cls(
            x_mean=sm.means,
            x_second_moment=sm.second_moments,
            x_cross_moment=sm.cross_moments,
            s_mean=hp.gammas,
            s_pair_mean=hp.xis,
            bound=bound,
        )

    def sufficient(self, y: SequenceData) -> SufficientStats:
        m, g = self.x_mean, self.s_mean
        Y = y.observations
        return SufficientStats(
            Sxx=self.x_second_moment.sum(axis=0),
            Sxx_prev=self.x_second_moment[:-1].sum(axis=0),
            Sx_xprev=self.x_cross_moment.sum(axis=0),
            Sx_s=m.T @ g,
            Sxprev_s=m[:-1].T @ g[1:],
            Ss=g.sum(axis=0),
            Sxi=self.s_pair_mean.sum(axis=0),
            Sgamma0=g[0].copy(),
            Syy=Y.T @ Y,
            Syx=Y.T @ m,
            n_steps=y.T,
            n_seq=1,
        )


def accumulate(stats: list[PosteriorStats], data: list[SequenceData]) -> SufficientStats:
    """Sum sufficient statistics across independent sequences."""
    if not stats:
        raise ValueError("need at least one sequence")
    total = stats[0].sufficient(data[0])
    for st, y in zip(stats[1:], data[1:]):
        total = total + st.sufficient(y)
    return total


def expected_log_joint(params: ModelParams, ss: SufficientStats, Qinv=None) -> float:
    """``E_Q[log p(X, S, Y)]`` for a factorised Q summarised by ``ss``."""
    A, C, D, Q, R = params.A, params.C, params.D, params.Q, params.R
    N, M = params.state_dim, params.obs_dim
    n = ss.n_steps
    if Qinv is None:
        Qinv = precision(Q)
    W = np.hstack([A, D])
    Sxz = ss.Sxz
    dyn = ss.Sxx - W @ Sxz.T - Sxz @ W.T + W @ ss.Szz @ W.T
    obs = ss.Syy - C @ ss.Syx.T - ss.Syx @ C.T + C @ ss.Sxx @ C.T
    _, logdet_q = np.linalg.slogdet(Q)
    _, logdet_r = np.linalg.slogdet(R)
    val = -0.5 * np.sum(Qinv * dyn) - 0.5 * np.sum(np.linalg.inv(R) * obs)
    val -= 0.5 * n * (logdet_q + logdet_r + (N + M) * LOG_2PI)
    val += np.sum(_xlogy(ss.Sxi, params.Pi)) + np.sum(_xlogy(ss.Sgamma0, params.pi0))
    return float(val)


def lds_entropy(sm: SmootherResult) -> float:
    """Entropy of the Gaussian chain via ``q(x_{T-1}) prod_t q(x_t | x_{t+1})``."""
    N = sm.means.shape[1]
    covs = np.concatenate([sm.conditional_covs(), sm.covs[-1:]], axis=0)
    _, logdets = np.linalg.slogdet(covs)
    return float(0.5 * np.sum(logdets) + 0.5 * len(covs) * N * (1.0 + LOG_2PI))


def hmm_entropy(hp: HmmPosterior) -> float:
    """Entropy of the Markov chain via ``q(s_0) prod_t q(s_t | s_{t-1})``."""
    # H(s_t | s_{t-1}) = H(s_t, s_{t-1}) - H(s_{t-1}); avoids dividing underflowed marginals
    h = -np.sum(_xlogy(hp.gammas[0], hp.gammas[0]))
    if len(hp.xis):
        h += -np.sum(_xlogy(hp.xis, hp.xis)) + np.sum(_xlogy(hp.gammas[:-1], hp.gammas[:-1]))
    return float(h)


# ---------------------------------------------------------------------------
# Variational parameters and the fixed-point sweep
# ---------------------------------------------------------------------------


@dataclass
class VariationalState:
    """Variational parameters ``{log q_t, u_t}`` and the iteration record.

    ``x_mean`` holds the LDS means the next sweep starts from; supplying it
    in an ``init`` warm-starts :func:`e_step` from a previous posterior.
    ``log_q_trace`` and ``u_trace`` hold the per-sweep values; ``initial_u``
    is the input behind the starting means (``None`` for a warm start).
    """

    log_q: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None
    x_mean: Optional[np.ndarray] = None
    iterations: int = 0
    bound_trace: list = field(default_factory=list)
    converged: bool = False
    log_q_trace: list = field(default_factory=list)
    u_trace: list = field(default_factory=list)
    initial_u: Optional[np.ndarray] = None


def compute_u(D, s_mean) -> np.ndarray:
    """Deterministic LDS inputs ``u_t = D <s_t>``; returns ``(T, N)``."""
    return np.asarray(s_mean, dtype=float) @ np.asarray(D, dtype=float).T


def compute_log_q(params: ModelParams, x_mean, Qinv=None) -> np.ndarray:
    """Log soft evidence ``d_i' Q^{-1} (<x_t> - A <x_{t-1}> - d_i / 2)``, ``<x_{-1}> = 0``."""
    if Qinv is None:
        Qinv = precision(params.Q)
    x = np.asarray(x_mean, dtype=float)
    prev = np.vstack([np.zeros((1, x.shape[1])), x[:-1]])
    delta = x - prev @ params.A.T
    QD = Qinv @ params.D
    return delta @ QD - 0.5 * np.sum(params.D * QD, axis=0)[None, :]


def free_energy_bound(params: ModelParams, y: SequenceData, sm: SmootherResult, hp: HmmPosterior,
                      Qinv=None) -> float:
    """Lower bound ``E_Q[log p(X, S, Y)] + H(Q_x) + H(Q_s)`` on ``log p(Y)``.

    ``sm`` must be a full smoother result and ``hp`` the HMM posterior that
    together define the factorised Q.
    """
    st = PosteriorStats.from_posteriors(sm, hp)
    return expected_log_joint(params, st.sufficient(y), Qinv) + lds_entropy(sm) + hmm_entropy(hp)


def _initial_means(params, y, init: Optional[VariationalState]):
    """LDS means that the first sweep starts from, plus the inputs behind them."""
    T = y.T
    if init is not None and init.x_mean is not None:
        return np.asarray(init.x_mean, dtype=float), None
    if init is not None and init.u is not None:
        u0 = np.asarray(init.u, dtype=float)
    elif init is not None and init.log_q is not None:
        hp = forward_backward(params.Pi, params.pi0, init.log_q)
        u0 = compute_u(params.D, hp.gammas)
    else:
        u0 = np.tile(params.D @ params.pi0, (T, 1))
    return rts_smooth(params, y, u0).means, u0


def e_step(params: ModelParams, y: SequenceData, init: Optional[VariationalState] = None,
           tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> tuple[VariationalState, PosteriorStats]:
    """Fixed-point iteration between the HMM and LDS sub-chains.

    Each sweep computes ``log q`` from ``<x>``, runs forward-backward, sets
    ``u = D <s>`` and re-smooths. Stops once the relative bound change
    ``|dB| / (1 + |B|)`` drops below ``tol``, once ``u`` stops changing, or
    after ``max_iter`` sweeps. ``bound_trace[k]`` is the bound after sweep k+1.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    validate(params)
    check_sequence(params, y)
    Qinv = precision(params.Q)

    x_mean, u_prev = _initial_means(params, y, init)
    state = VariationalState(initial_u=u_prev)
    sm = hp = None
    for it in range(1, max_iter + 1):
        log_q = compute_log_q(params, x_mean, Qinv)
        hp = forward_backward(params.Pi, params.pi0, log_q)
        u = compute_u(params.D, hp.gammas)
        sm = rts_smooth(params, y, u)
        x_mean = sm.means
        bound = free_energy_bound(params, y, sm, hp, Qinv)

        state.bound_trace.append(bound)
        state.log_q_trace.append(log_q)
        state.u_trace.append(u)
        state.iterations = it
        state.log_q, state.u, state.x_mean = log_q, u, x_mean
        if len(state.bound_trace) > 1:
            prev = state.bound_trace[-2]
            if bound < prev - 1e-9 * (1.0 + abs(prev)):
                logger.warning("free-energy bound decreased from %.12g to %.12g", prev, bound)
            if abs(bound - prev) / (1.0 + abs(bound)) < tol:
                state.converged = True
        if u_prev is not None and np.max(np.abs(u - u_prev)) <= 1e-12 * (1.0 + np.max(np.abs(u))):
            state.converged = True
        if state.converged:
            break
        u_prev = u

    stats = PosteriorStats.from_posteriors(sm, hp, bound=state.bound_trace[-1])
    return state, stats
