"""Synthetic planar-gesture benchmark built on point-mass dynamics.

Each gesture class is a left-to-right HMM whose states hold piecewise-constant
planar accelerations. Trajectories are aligned so their first stroke points
along +x, scaled into the unit square, and optionally corrupted with i.i.d.
Gaussian observation noise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .baselines import GaussianHMM, GradientClassifier, gradient_input_estimate, left_to_right
from .learning import TrainConfig, em_train
from .model import ModelParams, SequenceData
from .parallel import pmap
from .variational import VariationalState, e_step

logger = logging.getLogger(__name__)

DT = 0.1
# observation-noise variance floor in unit-square coordinates
SENSOR_VAR = 1e-4
ALIGNMENT = "first-stroke-to-+x"


@dataclass(frozen=True)
class GestureSpec:
    class_name: str
    num_hmm_states: int
    stroke_accelerations: np.ndarray   # (num_hmm_states, 2)
    dwell: float = 5.0
    dt: float = DT

    def __post_init__(self):
        acc = np.array(self.stroke_accelerations, dtype=float).reshape(-1, 2)
        if self.num_hmm_states < 1 or acc.shape[0] != self.num_hmm_states:
            raise ValueError(f"{self.class_name}: need one acceleration per state ({self.num_hmm_states})")
        if self.dt <= 0 or self.dwell < 1:
            raise ValueError(f"{self.class_name}: dt must be > 0 and dwell >= 1")
        acc.setflags(write=False)
        object.__setattr__(self, "stroke_accelerations", acc)


def _strokes(*directions):
    """Each stroke accelerates along a direction then brakes to rest."""
    acc = []
    for d in directions:
        d = np.asarray(d, dtype=float)
        d = d / np.linalg.norm(d)
        acc += [d, -d]
    return np.array(acc)


def default_specs(dt: float = DT) -> list[GestureSpec]:
    """Four synthetic symbols with the state counts 8, 6, 4, 6.

    Every symbol starts with a stroke along +x, so alignment is close to the
    identity on clean data.
    """
    circle = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    return [
        GestureSpec("arrow", 8, _strokes((1, 0), (-1, 1), (1, -1), (-1, -1)), dt=dt),
        GestureSpec("erase", 6, _strokes((1, 0), (-1, 0), (1, 0)), dt=dt),
        GestureSpec("circle", 4, circle, dt=dt),
        GestureSpec("wiggle", 6, _strokes((1, 0), (0, -1), (1, 0)), dt=dt),
    ]


def point_mass_model(dt: float, q_scale: float, r_scale: float, S: int,
                     accelerations=None, self_prob: float = 0.75) -> ModelParams:
    """Planar constant-acceleration LDS driven by a left-to-right HMM.

    State is ``[px, py, vx, vy]``; each discrete state adds ``a_i * dt`` to
    the velocity. ``Q = q_scale I`` and ``R = r_scale I``.
    """
    if dt <= 0 or q_scale <= 0 or r_scale <= 0:
        raise ValueError("dt, q_scale and r_scale must be positive")
    A = np.eye(4)
    A[0, 2] = A[1, 3] = dt
    C = np.hstack([np.eye(2), np.zeros((2, 2))])
    D = np.zeros((4, S))
    if accelerations is not None:
        D[2:, :] = dt * np.asarray(accelerations, dtype=float).reshape(S, 2).T
    return ModelParams(A=A, C=C, D=D, Q=q_scale * np.eye(4), R=r_scale * np.eye(2),
                       Pi=left_to_right(S, self_prob), pi0=np.eye(S)[0])


def align_first_stroke(pos: np.ndarray, frac: float = 0.2) -> np.ndarray:
    """Rotate about the start so the first stroke points along +x.

    The first stroke direction is the displacement to the first sample that
    is at least ``frac`` of the maximum distance from the start.
    """
    rel = pos - pos[0]
    dist = np.linalg.norm(rel, axis=1)
    if dist.max() == 0:
        return pos.copy()
    k = int(np.argmax(dist >= frac * dist.max()))
    ang = np.arctan2(rel[k, 1], rel[k, 0])
    c, s = np.cos(-ang), np.sin(-ang)
    return rel @ np.array([[c, s], [-s, c]]) + pos[0]


def normalize_unit_square(pos: np.ndarray) -> np.ndarray:
    """Uniformly scale into ``[0, 1] x [0, 1]``, keeping the aspect ratio."""
    lo = pos.min(axis=0)
    extent = (pos.max(axis=0) - lo).max()
    return (pos - lo) / extent if extent > 0 else pos - lo


def sample_gesture(spec: GestureSpec, rng: np.random.Generator, q_scale: float = 4e-4):
    """Positions and state path for one raw (unaligned, unscaled) gesture.

    Process noise has variance ``q_scale`` on velocity and ``q_scale / 100``
    on position.
    """
    S = spec.num_hmm_states
    # shifted Poisson keeps every state visited for at least two steps
    dwell = 2 + rng.poisson(max(spec.dwell - 2.0, 0.0), size=S)
    states = np.repeat(np.arange(S), dwell)
    params = point_mass_model(spec.dt, q_scale, 1.0, S, spec.stroke_accelerations)
    T = len(states)
    sd = np.sqrt(q_scale * np.array([1e-2, 1e-2, 1.0, 1.0]))
    u = params.D[:, states].T + rng.normal(size=(T, 4)) * sd
    x = np.empty((T, 4))
    x[0] = u[0]
    for t in range(1, T):
        x[t] = params.A @ x[t - 1] + u[t]
    return x[:, :2], states


@dataclass
class GestureDataset:
    items: list                      # [(SequenceData, class_name)]
    specs: list
    metadata: dict = field(default_factory=dict)

    @property
    def class_names(self) -> list[str]:
        return [s.class_name for s in self.specs]

    def by_class(self, indices=None) -> dict:
        out = {name: [] for name in self.class_names}
        for i in (range(len(self.items)) if indices is None else indices):
            y, c = self.items[i]
            out[c].append(y)
        return out

    def with_noise(self, noise_sd: float, seed) -> "GestureDataset":
        rng = np.random.default_rng(seed)
        items = [
            (SequenceData(y.observations + rng.normal(scale=noise_sd, size=y.observations.shape),
                          true_states=y.true_states), c)
            for y, c in self.items
        ]
        return GestureDataset(items, self.specs, {**self.metadata, "noise_sd": noise_sd})


def generate_dataset(specs: Sequence[GestureSpec], per_class: int, noise_sd: float = 0.0,
                     seed=0, q_scale: float = 4e-4) -> GestureDataset:
    """``per_class`` aligned, unit-square trajectories per class.

    Clean trajectories and the added noise come from independent streams, so
    the same seed with a different ``noise_sd`` perturbs the same paths.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    traj_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(traj_seed)
    items = []
    for spec in specs:
        for _ in range(per_class):
            pos, states = sample_gesture(spec, rng, q_scale)
            pos = normalize_unit_square(align_first_stroke(pos))
            items.append((SequenceData(pos, true_states=states), spec.class_name))
    meta = {"alignment": ALIGNMENT, "per_class": per_class, "seed": seed, "q_scale": q_scale, "noise_sd": 0.0}
    ds = GestureDataset(items, list(specs), meta)
    if noise_sd > 0:
        ds = ds.with_noise(noise_sd, noise_seed)
    return ds


# ---------------------------------------------------------------------------
# Training and classification
# ---------------------------------------------------------------------------


def anchor_start(y: SequenceData) -> SequenceData:
    """Translate so the trajectory starts at the origin.

    The model starts from ``x_0 = u_0``, i.e. near the origin, whereas
    unit-square normalisation leaves the start anywhere in the square.
    """
    return SequenceData(y.observations - y.observations[0], true_states=y.true_states)


def default_train_config(**kw) -> TrainConfig:
    """A, C are known for point-mass dynamics; everything else is learned.

    R is floored at the sensor resolution so that models fitted to clean
    trajectories keep a usable observation-noise model.
    """
    kw.setdefault("max_em_iter", 15)
    kw.setdefault("em_tol", 1e-4)
    kw.setdefault("min_obs_var", SENSOR_VAR)
    return TrainConfig.freezing(["A", "C"], **kw)


def acceleration_floor(obs_var: float, dt: float) -> float:
    """Variance that i.i.d. position noise induces in two central-difference passes."""
    return 6.0 * obs_var / (16.0 * dt ** 4)


def initial_model(sequences, S: int, dt: float, obs_var: float = SENSOR_VAR) -> ModelParams:
    """Point-mass model seeded from an HMM fitted to finite-difference accelerations."""
    acc = [gradient_input_estimate(y.observations, dt) for y in sequences]
    hmm = GaussianHMM.fit(acc, S)
    base = point_mass_model(dt, 1.0, obs_var, S, hmm.means)
    vel_var = np.diag(hmm.cov) * dt ** 2
    Q = np.diag(np.concatenate([np.full(2, 1e-2 * vel_var.mean()), vel_var]))
    return base.replace(Q=Q, Pi=hmm.Pi, pi0=hmm.pi0)


def train_class_model(sequences, S: int, dt: float, cfg: Optional[TrainConfig] = None) -> ModelParams:
    cfg = cfg or default_train_config()
    sequences = [anchor_start(y) for y in sequences]
    init = initial_model(sequences, S, dt, max(cfg.min_obs_var or 0.0, 1e-6))
    params, _ = em_train(sequences, init, cfg)
    return params


def best_of_restarts(params: ModelParams, y: SequenceData, tol: float, max_iter: int):
    """E-step from two deterministic starts, keeping the higher bound.

    The default start smooths with the prior-mean input; the second feeds the
    chain flat evidence, so ``u_t`` follows the prior state marginals. On
    left-to-right chains the two often settle in different local optima, and
    the larger of two lower bounds is still a lower bound.
    """
    first = e_step(params, y, tol=tol, max_iter=max_iter)
    flat = VariationalState(log_q=np.zeros((y.observations.shape[0], params.num_states)))
    second = e_step(params, y, init=flat, tol=tol, max_iter=max_iter)
    return second if second[1].bound > first[1].bound else first


def classify(models: dict, y: SequenceData, cfg: Optional[TrainConfig] = None) -> tuple[str, dict]:
    """Predict the class whose variational bound is largest.

    Each bound is the best of :func:`best_of_restarts`. Ties go to the
    lexicographically smallest class name.
    """
    if not models:
        raise ValueError("need at least one model")
    cfg = cfg or default_train_config()
    y = anchor_start(y)
    bounds = {name: best_of_restarts(p, y, cfg.e_tol, cfg.e_max_iter)[1].bound for name, p in models.items()}
    best = max(sorted(bounds), key=lambda k: bounds[k])
    return best, bounds


# ---------------------------------------------------------------------------
# Rotation cross-validation
# ---------------------------------------------------------------------------


def fold_of(index: int, n: int, folds: int) -> int:
    """Fold of the ``index``-th example among ``n``; the remainder joins the last fold."""
    return min(index // (n // folds), folds - 1)


@dataclass
class CVResult:
    class_names: list
    errors: dict            # class -> mean error over folds
    variances: dict         # class -> variance of that mean
    overall_error: float
    overall_variance: float
    confusion: np.ndarray   # rows true class, columns predicted class
    fold_errors: dict       # class -> per-fold error rates
    predictions: list       # (index, true, predicted)
    fitted: list = field(default_factory=list)   # trainer output per fold


def _mean_var(rates):
    rates = np.asarray(rates, dtype=float)
    var = rates.var(ddof=1) / len(rates) if len(rates) > 1 else 0.0
    return float(rates.mean()), float(var)


def fold_assignment(labels: Sequence[str], folds: int) -> np.ndarray:
    """Per-class contiguous fold blocks, deterministic in (position within class, folds)."""
    labels = list(labels)
    out = np.empty(len(labels), dtype=int)
    for c in dict.fromkeys(labels):
        idx = [i for i, l in enumerate(labels) if l == c]
        for k, i in enumerate(idx):
            out[i] = fold_of(k, len(idx), folds)
    return out


def cross_validate(items, folds: int, trainer: Callable, classifier: Callable,
                   class_names: Optional[Sequence[str]] = None, test_items=None) -> CVResult:
    """Rotation error estimate with ``folds`` rotational sets.

    ``trainer(train_items)`` returns a fitted object and
    ``classifier(fitted, y)`` a class name. ``test_items`` (same order and
    labels as ``items``) lets training and testing use different versions of
    each example, e.g. clean training data and noisy test data.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    labels = [c for _, c in items]
    names = list(class_names) if class_names is not None else list(dict.fromkeys(labels))
    for c in names:
        n = labels.count(c)
        if n == 0:
            raise ValueError(f"class {c!r} has no examples")
        if n < folds:
            raise ValueError(f"class {c!r} has {n} examples, fewer than {folds} folds")
    test_items = items if test_items is None else test_items
    assign = fold_assignment(labels, folds)
    col = {c: i for i, c in enumerate(names)}
    confusion = np.zeros((len(names), len(names)), dtype=int)
    wrong = np.zeros((len(names), folds))
    count = np.zeros((len(names), folds))
    predictions = []
    fitted_all = []
    for f in range(folds):
        train = [items[i] for i in range(len(items)) if assign[i] != f]
        fitted = trainer(train)
        fitted_all.append(fitted)
        test_idx = [i for i in range(len(items)) if assign[i] == f]
        preds = pmap(_Classify(classifier, fitted), [test_items[i][0] for i in test_idx])
        for i, p in zip(test_idx, preds):
            t = labels[i]
            confusion[col[t], col[p]] += 1
            wrong[col[t], f] += p != t
            count[col[t], f] += 1
            predictions.append((i, t, p))
    fold_rates = wrong / count
    errors, variances = {}, {}
    for c in names:
        errors[c], variances[c] = _mean_var(fold_rates[col[c]])
    overall, overall_var = _mean_var(wrong.sum(axis=0) / count.sum(axis=0))
    return CVResult(names, errors, variances, overall, overall_var, confusion,
                    {c: fold_rates[col[c]].tolist() for c in names}, predictions, fitted_all)


class _Classify:
    """Picklable closure for process-pool classification."""

    def __init__(self, classifier, fitted):
        self.classifier, self.fitted = classifier, fitted

    def __call__(self, y):
        return self.classifier(self.fitted, y)


# ---------------------------------------------------------------------------
# End-to-end benchmark
# ---------------------------------------------------------------------------


def coupled_trainer(specs, cfg: Optional[TrainConfig] = None):
    S = {s.class_name: s.num_hmm_states for s in specs}
    dt = specs[0].dt

    def train(items):
        groups = {}
        for y, c in items:
            groups.setdefault(c, []).append(y)
        return {c: train_class_model(seqs, S[c], dt, cfg) for c, seqs in groups.items()}

    return train


def coupled_classifier(cfg: Optional[TrainConfig] = None):
    return _CoupledClassify(cfg or default_train_config())


class _CoupledClassify:
    def __init__(self, cfg):
        self.cfg = cfg

    def __call__(self, models, y):
        return classify(models, y, self.cfg)[0]


def gradient_trainer(specs, obs_var: float = SENSOR_VAR):
    """Decoupled baseline with the same sensor floor mapped to acceleration space."""
    S = {s.class_name: s.num_hmm_states for s in specs}
    dt = specs[0].dt

    def train(items):
        groups = {}
        for y, c in items:
            groups.setdefault(c, []).append(y)
        return GradientClassifier.train(groups, S, dt, cov_floor=acceleration_floor(obs_var, dt))

    return train


def gradient_classifier(model: GradientClassifier, y: SequenceData) -> str:
    return model.classify(y)


@dataclass
class BenchmarkResult:
    coupled: CVResult
    gradient: CVResult
    e_step_iterations: list
    metadata: dict


def run_benchmark(per_class: int = 50, noise_sd: float = 0.01, folds: int = 4, seed=0,
                  specs=None, cfg: Optional[TrainConfig] = None) -> BenchmarkResult:
    """Train on clean trajectories, test on their noisy versions, for both classifiers."""
    specs = specs or default_specs()
    cfg = cfg or default_train_config()
    clean = generate_dataset(specs, per_class, 0.0, seed)
    noisy = generate_dataset(specs, per_class, noise_sd, seed) if noise_sd > 0 else clean
    names = clean.class_names
    coupled = cross_validate(clean.items, folds, coupled_trainer(specs, cfg), coupled_classifier(cfg),
                             names, noisy.items)
    gradient = cross_validate(clean.items, folds, gradient_trainer(specs), gradient_classifier,
                              names, noisy.items)
    # iteration counts: first-fold models against their held-out noisy items
    assign = fold_assignment([c for _, c in clean.items], folds)
    models = coupled.fitted[0]
    iters = [
        e_step(models[c], anchor_start(noisy.items[i][0]), tol=cfg.e_tol, max_iter=cfg.e_max_iter)[0].iterations
        for i in np.flatnonzero(assign == 0) for c in names
    ]
    meta = {**noisy.metadata, "folds": folds, "per_class": per_class}
    return BenchmarkResult(coupled, gradient, iters, meta)
