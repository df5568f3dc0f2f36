"""Exact inference in the discrete chain under per-step soft evidence.

Evidence is always supplied as log-potentials of shape ``(T, S)``; they need
not be normalised. ``Pi`` is column-stochastic, ``Pi[i, j] = Pr(i | j)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ZeroProbabilityError(ValueError):
    """Every discrete state is impossible at some time step."""


@dataclass
class HmmPosterior:
    """``gammas[t, i] = Pr(s_t = i)``; ``xis[k, i, j] = Pr(s_{k+1} = i, s_k = j)``."""

    gammas: np.ndarray
    xis: np.ndarray
    log_evidence: float


def _prepare(Pi, pi0, log_evidence):
    Pi = np.asarray(Pi, dtype=float)
    pi0 = np.asarray(pi0, dtype=float).ravel()
    ev = np.asarray(log_evidence, dtype=float)
    if ev.ndim == 1:
        ev = ev[:, None]
    if ev.shape[1] != Pi.shape[0] or pi0.shape[0] != Pi.shape[0]:
        raise ValueError(f"evidence has {ev.shape[1]} states, Pi has {Pi.shape[0]}, pi0 has {pi0.shape[0]}")
    if np.any(np.isnan(ev)) or np.any(ev == np.inf):
        raise ValueError("log evidence must be finite or -inf")
    return Pi, pi0, ev


_TINY = 1e-280


def _lse(M, axis):
    """``log sum exp`` along ``axis``; all ``-inf`` slices give ``-inf``."""
    mx = np.max(M, axis=axis, keepdims=True)
    mx = np.where(np.isneginf(mx), 0.0, mx)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(np.exp(M - mx), axis=axis)) + np.squeeze(mx, axis=axis)


def _log_matvec(P, lP, lv):
    """``log(P @ exp(lv))``, exact in log space for rows that would underflow."""
    m = np.max(lv)
    if np.isneginf(m):
        return np.full(P.shape[0], -np.inf)
    prod = P @ np.exp(lv - m)
    tiny = prod < _TINY
    with np.errstate(divide="ignore"):
        out = np.log(prod) + m
    if tiny.any():
        out[tiny] = _lse(lP[tiny] + lv[None, :], 1)
    return out


def forward_backward(Pi, pi0, log_evidence) -> HmmPosterior:
    """Forward-backward recursion carried out in log space.

    ``log_evidence`` is the log normaliser of
    ``pi0(s_0) prod Pi(s_t | s_{t-1}) prod exp(log_evidence[t, s_t])``.
    Working with logs keeps states that trail the leader by many hundreds of
    nats alive, which plain rescaling would flush to zero.
    """
    Pi, pi0, ev = _prepare(Pi, pi0, log_evidence)
    T, S = ev.shape
    with np.errstate(divide="ignore"):
        lPi, lpi0 = np.log(Pi), np.log(pi0)

    la = np.empty((T, S))
    la[0] = lpi0 + ev[0]
    for t in range(T):
        if t > 0:
            la[t] = ev[t] + _log_matvec(Pi, lPi, la[t - 1])
        if np.all(np.isneginf(la[t])):
            raise ZeroProbabilityError(f"all states impossible at t={t}")
    log_z = float(_lse(la[-1], 0))

    lb = np.zeros((T, S))
    for t in range(T - 2, -1, -1):
        lb[t] = _log_matvec(Pi.T, lPi.T, ev[t + 1] + lb[t + 1])

    lg = la + lb
    gammas = np.exp(lg - _lse(lg, 1)[:, None])
    lx = lPi[None] + (ev[1:] + lb[1:])[:, :, None] + la[:-1][:, None, :]
    xis = np.exp(lx - _lse(lx.reshape(T - 1, -1), 1)[:, None, None]) if T > 1 else np.empty((0, S, S))
    return HmmPosterior(gammas=gammas, xis=xis, log_evidence=log_z)


def viterbi(Pi, pi0, log_evidence) -> tuple[np.ndarray, float]:
    """Most probable path and its log joint score.

    Ties go to the lower state index, both for the final state and for each
    back-pointer.
    """
    Pi, pi0, ev = _prepare(Pi, pi0, log_evidence)
    T, S = ev.shape
    with np.errstate(divide="ignore"):
        log_Pi = np.log(Pi)
        delta = np.log(pi0) + ev[0]
    back = np.zeros((T, S), dtype=int)
    for t in range(1, T):
        scores = delta[None, :] + log_Pi  # scores[i, j]: from j into i
        back[t] = np.argmax(scores, axis=1)
        delta = scores[np.arange(S), back[t]] + ev[t]
    if np.all(np.isneginf(delta)):
        raise ZeroProbabilityError("no path has non-zero probability")
    path = np.empty(T, dtype=int)
    path[-1] = int(np.argmax(delta))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, float(delta[path[-1]])
