"""Mixed-state dynamic Bayesian network: an HMM whose outputs drive an LDS.

State-space form (input matrix fixed to the identity)::

    s_0 ~ pi0,          s_t | s_{t-1} ~ Pi[:, s_{t-1}]
    u_t = d_{s_t} + r_t,              r_t ~ N(0, Q)
    x_0 = u_0,          x_t = A x_{t-1} + u_t
    y_t = C x_t + w_t,                w_t ~ N(0, R)

Arrays indexed by time are stored with time on the leading axis, so a
length-T sequence of N-vectors is a ``(T, N)`` array.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)

SYMMETRY_TOL = 1e-10
STOCHASTIC_TOL = 1e-8


class ModelError(ValueError):
    """Base class for invalid model parameters or data."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


class DimensionMismatchError(ModelError):
    pass


class NonStochasticMatrixError(ModelError):
    pass


class NonPDCovarianceError(ModelError):
    pass


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ModelParams:
    """All learnable parameters of the coupled model.

    ``Pi[i, j]`` is ``Pr(s_{t+1} = i | s_t = j)`` so columns sum to one.
    Column ``D[:, i]`` is the input level produced by discrete state ``i``.
    Construction does not validate; call :func:`validate`.
    """

    A: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Pi: np.ndarray
    pi0: np.ndarray

    def __post_init__(self):
        for name in ("A", "C", "D", "Q", "R", "Pi"):
            arr = np.atleast_2d(np.array(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "pi0", _frozen(np.ravel(self.pi0)))

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.C.shape[0]

    @property
    def num_states(self) -> int:
        return self.Pi.shape[0]

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def allclose(self, other: "ModelParams", rtol=0.0, atol=0.0) -> bool:
        return all(
            getattr(self, k).shape == getattr(other, k).shape
            and np.allclose(getattr(self, k), getattr(other, k), rtol=rtol, atol=atol)
            for k in PARAM_NAMES
        )

    @property
    def log_Pi(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.Pi)

    @property
    def log_pi0(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.pi0)


PARAM_NAMES = ("A", "C", "D", "Q", "R", "Pi", "pi0")


@dataclass(frozen=True, eq=False)
class SequenceData:
    """One observation sequence ``y_0 .. y_{T-1}`` with optional ground truth."""

    observations: np.ndarray
    true_states: Optional[np.ndarray] = None
    true_x: Optional[np.ndarray] = None

    def __post_init__(self):
        obs = np.array(self.observations, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.ndim != 2 or obs.shape[0] < 1:
            raise DimensionMismatchError("observations", f"expected a (T, M) array with T >= 1, got shape {obs.shape}")
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)
        if self.true_states is not None:
            s = np.array(self.true_states, dtype=int).ravel()
            if s.shape[0] != obs.shape[0]:
                raise DimensionMismatchError("true_states", f"length {s.shape[0]} != T={obs.shape[0]}")
            s.setflags(write=False)
            object.__setattr__(self, "true_states", s)
        if self.true_x is not None:
            x = np.array(self.true_x, dtype=float)
            if x.ndim == 1:
                x = x[:, None]
            if x.shape[0] != obs.shape[0]:
                raise DimensionMismatchError("true_x", f"length {x.shape[0]} != T={obs.shape[0]}")
            x.setflags(write=False)
            object.__setattr__(self, "true_x", x)

    @property
    def T(self) -> int:
        return self.observations.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.observations.shape[1]


@dataclass(frozen=True, eq=False)
class LatentSample:
    discrete_path: np.ndarray
    continuous_path: np.ndarray
    inputs: np.ndarray


def _check_covariance(name: str, S: np.ndarray, allow_singular: bool = False):
    if not np.all(np.isfinite(S)):
        raise NonPDCovarianceError(name, "contains non-finite entries")
    if np.max(np.abs(S - S.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(S))):
        raise NonPDCovarianceError(name, "not symmetric")
    eig = np.linalg.eigvalsh(S)
    if allow_singular:
        if eig.min() < -SYMMETRY_TOL * max(1.0, eig.max()):
            raise NonPDCovarianceError(name, f"not positive semidefinite (min eigenvalue {eig.min():.3g})")
    elif eig.min() <= 0.0:
        raise NonPDCovarianceError(name, f"not positive definite (min eigenvalue {eig.min():.3g})")


def _check_stochastic(name: str, P: np.ndarray, axis: int):
    if not np.all(np.isfinite(P)) or np.any(P < 0):
        raise NonStochasticMatrixError(name, "entries must be finite and non-negative")
    sums = P.sum(axis=axis)
    if np.max(np.abs(sums - 1.0)) > STOCHASTIC_TOL:
        raise NonStochasticMatrixError(name, f"must sum to 1, got sums {np.round(sums, 10)}")


def validate(params: ModelParams, allow_singular_q: bool = False) -> None:
    """Raise a :class:`ModelError` subclass unless every parameter invariant holds.

    ``allow_singular_q`` relaxes Q to positive semidefinite, which only the
    filtering-based baselines can consume (the energy and variational code
    need Q^{-1}).
    """
    N = params.A.shape[0]
    S = params.Pi.shape[0]
    M = params.C.shape[0]
    expected = {
        "A": (N, N),
        "C": (M, N),
        "D": (N, S),
        "Q": (N, N),
        "R": (M, M),
        "Pi": (S, S),
        "pi0": (S,),
    }
    for name, shape in expected.items():
        got = getattr(params, name).shape
        if got != shape:
            raise DimensionMismatchError(name, f"expected shape {shape}, got {got}")
    for name in ("A", "C", "D"):
        if not np.all(np.isfinite(getattr(params, name))):
            raise DimensionMismatchError(name, "contains non-finite entries")
    _check_covariance("Q", params.Q, allow_singular=allow_singular_q)
    _check_covariance("R", params.R)
    _check_stochastic("Pi", params.Pi, axis=0)
    _check_stochastic("pi0", params.pi0, axis=0)


def check_sequence(params: ModelParams, y: SequenceData) -> None:
    if y.obs_dim != params.obs_dim:
        raise DimensionMismatchError("observations", f"dimension {y.obs_dim} != obs_dim {params.obs_dim}")


def sample(params: ModelParams, T: int, seed=None) -> tuple[SequenceData, LatentSample]:
    """Ancestral sample of length ``T``; deterministic given ``seed``."""
    validate(params, allow_singular_q=True)
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(seed)
    N, M, S = params.state_dim, params.obs_dim, params.num_states

    s = np.empty(T, dtype=int)
    s[0] = rng.choice(S, p=params.pi0)
    for t in range(1, T):
        s[t] = rng.choice(S, p=params.Pi[:, s[t - 1]])

    u = params.D[:, s].T + rng.multivariate_normal(np.zeros(N), params.Q, size=T, method="eigh")
    x = np.empty((T, N))
    x[0] = u[0]
    for t in range(1, T):
        x[t] = params.A @ x[t - 1] + u[t]
    y = x @ params.C.T + rng.multivariate_normal(np.zeros(M), params.R, size=T, method="eigh")

    latent = LatentSample(discrete_path=s, continuous_path=x, inputs=u)
    return SequenceData(y, true_states=s, true_x=x), latent


def _as_path(s, T: int, S: int) -> np.ndarray:
    s = np.asarray(s, dtype=int).ravel()
    if s.shape != (T,):
        raise DimensionMismatchError("s", f"expected {T} labels, got {s.shape[0]}")
    if np.any((s < 0) | (s >= S)):
        raise DimensionMismatchError("s", f"labels must lie in 0..{S - 1}")
    return s


def joint_energy(params: ModelParams, x, s, y: SequenceData) -> float:
    """Hamiltonian ``H(X, S, Y) = -log p(X, S, Y)``.

    Includes all normalising constants, so ``exp(-H)`` integrates to the
    evidence. A zero-probability discrete transition gives ``+inf``.
    """
    check_sequence(params, y)
    T = y.T
    x = np.asarray(x, dtype=float).reshape(T, params.state_dim)
    s = _as_path(s, T, params.num_states)
    N, M = params.state_dim, params.obs_dim

    prev = np.vstack([np.zeros((1, N)), x[:-1]])
    r = x - prev @ params.A.T - params.D[:, s].T
    w = y.observations - x @ params.C.T
    Qinv_r = np.linalg.solve(params.Q, r.T)
    Rinv_w = np.linalg.solve(params.R, w.T)
    _, logdet_q = np.linalg.slogdet(params.Q)
    _, logdet_r = np.linalg.slogdet(params.R)

    H = 0.5 * np.sum(r.T * Qinv_r) + 0.5 * np.sum(w.T * Rinv_w)
    H += 0.5 * T * (logdet_q + logdet_r) + 0.5 * (N + M) * T * LOG_2PI
    discrete = -params.log_pi0[s[0]] - np.sum(params.log_Pi[s[1:], s[:-1]])
    return float(H + discrete)
