"""Generalised EM: variational E-step plus closed-form M-step updates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import PARAM_NAMES, ModelParams, SequenceData, validate
from .parallel import pmap
from .variational import DEFAULT_TOL, SufficientStats, VariationalState, accumulate, e_step

logger = logging.getLogger(__name__)

EIG_FLOOR = 1e-10
MONOTONE_SLACK = 1e-6


class RankDeficiencyError(np.linalg.LinAlgError):
    def __init__(self, name: str, message: str = "normal-equation matrix is singular"):
        self.param = name
        super().__init__(f"{name}: {message}")


class MonotonicityError(RuntimeError):
    """The total free-energy bound decreased between EM iterations."""


@dataclass
class TrainConfig:
    e_tol: float = DEFAULT_TOL
    em_tol: float = 1e-4
    max_em_iter: int = 50
    e_max_iter: int = 100
    update_mask: dict = field(default_factory=lambda: {k: True for k in PARAM_NAMES})
    # None keeps the 1e-10 eigenvalue floor only
    min_obs_var: Optional[float] = None
    strict_monotone: bool = True

    def __post_init__(self):
        if self.e_tol <= 0 or self.em_tol <= 0:
            raise ValueError("tolerances must be positive")
        mask = {k: True for k in PARAM_NAMES}
        for k, v in self.update_mask.items():
            if k not in mask:
                raise ValueError(f"unknown parameter {k!r} in update_mask")
            mask[k] = bool(v)
        self.update_mask = mask

    @classmethod
    def freezing(cls, names, **kw) -> "TrainConfig":
        return cls(update_mask={k: k not in set(names) for k in PARAM_NAMES}, **kw)


def _floor_eigs(name, S, floor):
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    if w.min() < floor:
        logger.debug("%s update had eigenvalue %.3g; clipped to %.3g", name, w.min(), floor)
        S = (V * np.maximum(w, floor)) @ V.T
        S = 0.5 * (S + S.T)
    return S


def _solve_right(name, B, G):
    """``B G^{-1}`` for symmetric PSD ``G``, raising on singular ``G``."""
    if G.size == 0:
        return np.zeros((B.shape[0], 0))
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise RankDeficiencyError(name) from None
    if np.min(np.diag(L)) ** 2 < 1e-13 * np.max(np.diag(G)):
        raise RankDeficiencyError(name)
    return np.linalg.solve(L.T, np.linalg.solve(L, B.T)).T


def m_step(params: ModelParams, ss: SufficientStats, mask: Optional[dict] = None,
           eig_floor: float = EIG_FLOOR, min_obs_var: Optional[float] = None) -> ModelParams:
    """Closed-form maximisation of ``E_Q[log p(X, S, Y)]``.

    ``A`` and ``D`` are the joint least-squares solution regressing ``x_t`` on
    ``[x_{t-1}; s_t]``; ``Q`` is the residual covariance of that regression.
    Parameters with ``mask[name] == False`` keep their current values.
    States with no expected visits keep their ``D`` column and ``Pi`` column.
    """
    mask = TrainConfig(update_mask=mask or {}).update_mask
    A, C, D, Q, R, Pi, pi0 = (getattr(params, k).copy() for k in PARAM_NAMES)
    N = params.state_dim
    n = ss.n_steps
    active = ss.Ss > 1e-12
    if not active.all() and mask["D"]:
        logger.info("states %s have no expected visits; their D columns are kept", np.flatnonzero(~active))

    Szz, Sxz = ss.Szz, ss.Sxz
    if mask["A"] and mask["D"]:
        keep = np.concatenate([np.ones(N, dtype=bool), active])
        W = _solve_right("A,D", Sxz[:, keep], Szz[np.ix_(keep, keep)])
        A = W[:, :N]
        D[:, active] = W[:, N:]
    elif mask["A"]:
        A = _solve_right("A", ss.Sx_xprev - D @ ss.Sxprev_s.T, ss.Sxx_prev)
    elif mask["D"]:
        D[:, active] = (ss.Sx_s - A @ ss.Sxprev_s)[:, active] / ss.Ss[active]

    if mask["Q"]:
        W = np.hstack([A, D])
        resid = ss.Sxx - W @ Sxz.T - Sxz @ W.T + W @ Szz @ W.T
        Q = _floor_eigs("Q", resid / n, eig_floor)

    if mask["C"]:
        C = _solve_right("C", ss.Syx, ss.Sxx)
    if mask["R"]:
        resid = ss.Syy - C @ ss.Syx.T - ss.Syx @ C.T + C @ ss.Sxx @ C.T
        R = _floor_eigs("R", resid / n, max(eig_floor, min_obs_var or 0.0))

    if mask["Pi"]:
        visits = ss.Sxi.sum(axis=0)
        seen = visits > 1e-12
        if not seen.all():
            logger.info("Pi columns %s have no expected transitions; kept", np.flatnonzero(~seen))
        Pi[:, seen] = ss.Sxi[:, seen] / visits[seen]
    if mask["pi0"]:
        pi0 = ss.Sgamma0 / ss.n_seq

    return ModelParams(A=A, C=C, D=D, Q=Q, R=R, Pi=Pi, pi0=pi0)


@dataclass
class EStepBatch:
    states: list
    stats: list

    @property
    def total_bound(self) -> float:
        return float(sum(s.bound for s in self.stats))

    @property
    def iterations(self) -> list:
        return [s.iterations for s in self.states]


def _e_task(args):
    params, y, init, tol, max_iter = args
    return e_step(params, y, init=init, tol=tol, max_iter=max_iter)


def e_step_all(params: ModelParams, sequences, inits=None, tol=DEFAULT_TOL, max_iter=100) -> EStepBatch:
    inits = inits or [None] * len(sequences)
    out = pmap(_e_task, [(params, y, init, tol, max_iter) for y, init in zip(sequences, inits)])
    return EStepBatch(states=[o[0] for o in out], stats=[o[1] for o in out])


def em_train(sequences: list[SequenceData], init: ModelParams,
             cfg: Optional[TrainConfig] = None) -> tuple[ModelParams, list[float]]:
    """Alternate E-steps over all sequences with :func:`m_step`.

    E-steps after the first are warm-started from the previous LDS means,
    which keeps the total bound nondecreasing. Returns the parameters whose
    bound was recorded last and the per-iteration total bound.
    """
    cfg = cfg or TrainConfig()
    if not sequences:
        raise ValueError("need at least one sequence")
    validate(init)
    params = init
    history: list[float] = []
    inits = None
    for it in range(cfg.max_em_iter):
        batch = e_step_all(params, sequences, inits, cfg.e_tol, cfg.e_max_iter)
        total = batch.total_bound
        if history:
            prev = history[-1]
            if total < prev - MONOTONE_SLACK:
                msg = f"EM bound decreased from {prev:.12g} to {total:.12g} at iteration {it}"
                if cfg.strict_monotone:
                    raise MonotonicityError(msg)
                logger.warning(msg)
        history.append(total)
        if len(history) > 1 and abs(history[-1] - history[-2]) / (1.0 + abs(history[-1])) < cfg.em_tol:
            break
        if it == cfg.max_em_iter - 1:
            break
        ss = accumulate(batch.stats, sequences)
        params = m_step(params, ss, cfg.update_mask, min_obs_var=cfg.min_obs_var)
        inits = [VariationalState(x_mean=st.x_mean) for st in batch.stats]
    return params, history
