"""Non-variational reference methods.

* :func:`greedy_truncated_viterbi` keeps a single discrete path while
  Kalman filtering, picking the cheapest input at each step.
* :func:`exact_posterior` enumerates all ``S**T`` discrete paths.
* :func:`gradient_input_estimate` and :class:`GaussianHMM` form the
  decoupled classifier that models finite-difference accelerations with an
  HMM and ignores the LDS.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .hmm import forward_backward
from .lds import kalman_filter, rts_smooth
from .model import ModelParams, SequenceData, check_sequence, validate

DEFAULT_PATH_CAP = 4096


class CapacityError(ValueError):
    """Exhaustive enumeration would exceed the configured number of paths."""


# ---------------------------------------------------------------------------
# Greedy truncated Viterbi
# ---------------------------------------------------------------------------


@dataclass
class GreedyResult:
    path: np.ndarray
    total_cost: float
    u: np.ndarray
    step_costs: np.ndarray


def _costs(params, transition_cost, initial_cost):
    if transition_cost is None:
        transition_cost = -params.log_Pi
    if initial_cost is None:
        initial_cost = -params.log_pi0
    return np.asarray(transition_cost, dtype=float), np.asarray(initial_cost, dtype=float)


def greedy_truncated_viterbi(params: ModelParams, y: SequenceData, transition_cost=None,
                             initial_cost=None) -> GreedyResult:
    """Single forward pass retaining only the cheapest discrete path.

    At each step every candidate state ``i`` is scored by the innovation
    quadratic form ``e' S^{-1} e`` (``e = y_t - C(A x_{t-1|t-1} + d_i)``,
    ``S`` the innovation covariance) plus ``transition_cost[i, j]`` from the
    retained state ``j`` (``initial_cost[i]`` at t = 0). Defaults are
    ``-log Pi`` and ``-log pi0``. Log-determinant constants are omitted;
    they do not depend on the inputs. Ties go to the lower state index.
    """
    validate(params, allow_singular_q=True)
    check_sequence(params, y)
    trans, init = _costs(params, transition_cost, initial_cost)
    A, C, D, Q, R = params.A, params.C, params.D, params.Q, params.R
    T, N = y.T, params.state_dim

    path = np.empty(T, dtype=int)
    steps = np.empty(T)
    m = np.zeros(N)
    P = np.zeros((N, N))
    for t in range(T):
        P_pred = Q if t == 0 else A @ P @ A.T + Q
        base = np.zeros(N) if t == 0 else A @ m
        Svar = C @ P_pred @ C.T + R
        E = y.observations[t][None, :] - (base[None, :] + D.T) @ C.T   # (S, M) innovations
        quad = np.sum(E * np.linalg.solve(Svar, E.T).T, axis=1)
        arc = init if t == 0 else trans[:, path[t - 1]]
        total = quad + arc
        i = int(np.argmin(total))
        path[t], steps[t] = i, total[i]
        K = np.linalg.solve(Svar, C @ P_pred).T
        m = base + D[:, i] + K @ E[i]
        IKC = np.eye(N) - K @ C
        P = IKC @ P_pred @ IKC.T + K @ R @ K.T
        P = 0.5 * (P + P.T)
    return GreedyResult(path=path, total_cost=float(steps.sum()), u=D[:, path].T, step_costs=steps)


def path_cost(params: ModelParams, y: SequenceData, path, transition_cost=None, initial_cost=None) -> float:
    """Greedy-units cost of a full discrete path: innovation quadratics plus arc costs."""
    trans, init = _costs(params, transition_cost, initial_cost)
    path = np.asarray(path, dtype=int)
    kf = kalman_filter(params, y, params.D[:, path].T)
    quad = sum(float(e @ np.linalg.solve(S, e)) for e, S in zip(kf.innovations, kf.innovation_vars))
    return quad + float(init[path[0]]) + float(np.sum(trans[path[1:], path[:-1]]))


def trellis_table(params: ModelParams, y: SequenceData, transition_cost=None,
                  initial_cost=None) -> list[tuple[tuple[int, ...], float]]:
    """Cost of every discrete path, in lexicographic path order."""
    validate(params, allow_singular_q=True)
    S, T = params.num_states, y.T
    return [
        (p, path_cost(params, y, p, transition_cost, initial_cost))
        for p in itertools.product(range(S), repeat=T)
    ]


# ---------------------------------------------------------------------------
# Exact enumeration
# ---------------------------------------------------------------------------


@dataclass
class ExactPosterior:
    paths: np.ndarray          # (P, T) every discrete path
    log_weights: np.ndarray    # (P,) normalised log posterior of each path
    log_evidence: float        # log p(Y)
    s_mean: np.ndarray         # (T, S)
    x_mean: Optional[np.ndarray]  # (T, N) mixture mean, if requested

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def map_path(self) -> np.ndarray:
        return self.paths[int(np.argmax(self.log_weights))]


def exact_posterior(params: ModelParams, y: SequenceData, cap: int = DEFAULT_PATH_CAP,
                    smooth: bool = True) -> ExactPosterior:
    """Exact posterior by summing over all ``S**T`` discrete paths.

    Each path contributes ``p(path) p(Y | U = D path)``, the latter from a
    Kalman filter. With ``smooth`` the mixture mean of ``x_t`` is returned.
    """
    validate(params, allow_singular_q=True)
    check_sequence(params, y)
    S, T = params.num_states, y.T
    if S ** T > cap:
        raise CapacityError(f"{S}**{T} = {S ** T} paths exceeds cap {cap}")
    paths = np.array(list(itertools.product(range(S), repeat=T)), dtype=int)
    log_Pi, log_pi0 = params.log_Pi, params.log_pi0

    logw = np.empty(len(paths))
    xs = np.zeros((len(paths), T, params.state_dim)) if smooth else None
    for k, p in enumerate(paths):
        prior = log_pi0[p[0]] + np.sum(log_Pi[p[1:], p[:-1]])
        if np.isneginf(prior):
            logw[k] = -np.inf
            continue
        u = params.D[:, p].T
        if smooth:
            res = rts_smooth(params, y, u)
            xs[k] = res.means
        else:
            res = kalman_filter(params, y, u)
        logw[k] = prior + res.log_likelihood

    log_evidence = float(logsumexp(logw))
    logw = logw - log_evidence
    w = np.exp(logw)
    s_mean = np.zeros((T, S))
    for t in range(T):
        s_mean[t] = np.bincount(paths[:, t], weights=w, minlength=S)
    x_mean = np.einsum("p,ptn->tn", w, xs) if smooth else None
    return ExactPosterior(paths=paths, log_weights=logw, log_evidence=log_evidence, s_mean=s_mean, x_mean=x_mean)


# ---------------------------------------------------------------------------
# Worked two-state example with three observations
# ---------------------------------------------------------------------------


def three_step_instance(k: float = 0.0, R: Optional[float] = None, eps: float = 0.0):
    """Scalar random-walk instance with inputs {-1, +1} and observations (0, 0, -5).

    Returns ``(params, y, transition_cost, initial_cost)``. The costs are the
    linearised trellis costs: ``-eps`` for staying, ``+eps`` for switching,
    zero at t = 0. ``R`` defaults to 1 for ``k == 0`` (integer trellis costs)
    and 0.5 otherwise. The probabilistic ``Pi`` uses ``eps`` clipped to 0.5.
    """
    if R is None:
        R = 1.0 if k == 0 else 0.5
    e = min(max(eps, 0.0), 0.5)
    params = ModelParams(
        A=[[1.0]], C=[[1.0]], D=[[-1.0, 1.0]],
        Q=[[k * R]], R=[[R]],
        Pi=[[0.5 + e, 0.5 - e], [0.5 - e, 0.5 + e]],
        pi0=[0.5, 0.5],
    )
    y = SequenceData([[0.0], [0.0], [-5.0]])
    trans = np.array([[-eps, eps], [eps, -eps]])
    return params, y, trans, np.zeros(2)


# ---------------------------------------------------------------------------
# Decoupled gradient baseline
# ---------------------------------------------------------------------------


def gradient_input_estimate(positions, dt: float) -> np.ndarray:
    """Second derivative of positions by two central-difference passes.

    Interior points use ``(x_{t+1} - x_{t-1}) / (2 dt)`` for each pass, which
    is exact for cubics. The two samples at each end use second-order
    one-sided differences; compounded over two passes they are exact for
    quadratics and first-order accurate in general.
    """
    x = np.asarray(positions, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 5:
        raise ValueError(f"need at least 5 samples, got {x.shape[0]}")
    v = np.gradient(x, dt, axis=0, edge_order=2)
    return np.gradient(v, dt, axis=0, edge_order=2)


def _gaussian_logpdf(X, means, cov):
    """``log N(X[t]; means[i], cov)`` as a ``(T, S)`` array."""
    L = np.linalg.cholesky(cov)
    d = X.shape[1]
    diff = X[:, None, :] - means[None, :, :]
    z = np.linalg.solve(L, diff.reshape(-1, d).T).T.reshape(diff.shape)
    return -0.5 * np.sum(z * z, axis=2) - np.sum(np.log(np.diag(L))) - 0.5 * d * np.log(2 * np.pi)


def _clip_eigs(S, floor):
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    S = (V * np.maximum(w, floor)) @ V.T
    return 0.5 * (S + S.T)


@dataclass
class GaussianHMM:
    """HMM with Gaussian emissions whose covariance is shared across states."""

    means: np.ndarray   # (S, d)
    cov: np.ndarray     # (d, d)
    Pi: np.ndarray
    pi0: np.ndarray

    def log_likelihood(self, X) -> float:
        return forward_backward(self.Pi, self.pi0, _gaussian_logpdf(np.asarray(X), self.means, self.cov)).log_evidence

    @classmethod
    def fit(cls, sequences, num_states: int, n_iter: int = 30, tol: float = 1e-4,
            self_prob: float = 0.8, cov_floor: float = 1e-6) -> "GaussianHMM":
        """Baum-Welch on a left-to-right chain, initialised by uniform segmentation.

        Eigenvalues of the shared covariance are clipped at ``cov_floor``.
        """
        S = num_states
        seqs = [np.asarray(X, dtype=float) for X in sequences]
        d = seqs[0].shape[1]
        sums = np.zeros((S, d))
        counts = np.zeros(S)
        for X in seqs:
            seg = np.minimum((np.arange(len(X)) * S) // len(X), S - 1)
            np.add.at(sums, seg, X)
            counts += np.bincount(seg, minlength=S)
        means = sums / np.maximum(counts, 1)[:, None]
        allX = np.vstack(seqs)
        cov = _clip_eigs(np.cov(allX.T).reshape(d, d), cov_floor)
        model = cls(means=means, cov=cov, Pi=left_to_right(S, self_prob), pi0=np.eye(S)[0])

        prev = -np.inf
        for _ in range(n_iter):
            g_sum = np.zeros(S)
            gx = np.zeros((S, d))
            xi_sum = np.zeros((S, S))
            g0 = np.zeros(S)
            post = []
            total = 0.0
            for X in seqs:
                hp = forward_backward(model.Pi, model.pi0, _gaussian_logpdf(X, model.means, model.cov))
                total += hp.log_evidence
                g_sum += hp.gammas.sum(axis=0)
                gx += hp.gammas.T @ X
                xi_sum += hp.xis.sum(axis=0)
                g0 += hp.gammas[0]
                post.append(hp.gammas)
            visited = g_sum > 1e-12
            means = model.means.copy()
            means[visited] = gx[visited] / g_sum[visited, None]
            cov = np.zeros((d, d))
            for X, g in zip(seqs, post):
                diff = X[:, None, :] - means[None, :, :]
                cov += np.einsum("ts,tsi,tsj->ij", g, diff, diff)
            cov = _clip_eigs(cov / sum(len(X) for X in seqs), cov_floor)
            col = xi_sum.sum(axis=0)
            Pi = model.Pi.copy()
            Pi[:, col > 1e-12] = xi_sum[:, col > 1e-12] / col[col > 1e-12]
            model = cls(means=means, cov=cov, Pi=Pi, pi0=g0 / g0.sum())
            if abs(total - prev) <= tol * (1.0 + abs(total)):
                break
            prev = total
        return model


def left_to_right(S: int, self_prob: float) -> np.ndarray:
    """Column-stochastic chain allowing only a self-loop or a step to the next state."""
    Pi = np.zeros((S, S))
    for j in range(S):
        if j == S - 1:
            Pi[j, j] = 1.0
        else:
            Pi[j, j] = self_prob
            Pi[j + 1, j] = 1.0 - self_prob
    return Pi


@dataclass
class GradientClassifier:
    """Decoupled fixed-LDS/HMM classifier on finite-difference accelerations."""

    models: dict
    dt: float

    @classmethod
    def train(cls, dataset: dict, num_states: dict, dt: float, **fit_kw) -> "GradientClassifier":
        models = {
            name: GaussianHMM.fit([gradient_input_estimate(y.observations, dt) for y in seqs],
                                  num_states[name], **fit_kw)
            for name, seqs in dataset.items()
        }
        return cls(models=models, dt=dt)

    def scores(self, y: SequenceData) -> dict:
        u = gradient_input_estimate(y.observations, self.dt)
        return {name: m.log_likelihood(u) for name, m in self.models.items()}

    def classify(self, y: SequenceData) -> str:
        sc = self.scores(y)
        return max(sorted(sc), key=lambda k: sc[k])
