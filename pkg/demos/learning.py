"""Learning a switching model with variational EM.

Starts from a perturbed copy of the generating model and prints the bound
history alongside the recovered input levels and transition matrix.

Run:  python3 demos/learning.py
"""

import numpy as np

from mixeddyn import TrainConfig, em_train, sample

from inference import make_model


def main():
    truth = make_model()
    seqs = [sample(truth, 400, seed=k)[0] for k in range(3)]
    rng = np.random.default_rng(0)
    init = truth.replace(
        D=truth.D + rng.normal(scale=0.4, size=truth.D.shape),
        Q=2.0 * truth.Q,
        R=3.0 * truth.R,
        Pi=np.full((2, 2), 0.5),
    )
    # C is fixed so the continuous state keeps its coordinates
    cfg = TrainConfig.freezing(["C"], max_em_iter=30, em_tol=1e-6)
    params, history = em_train(seqs, init, cfg)

    print("bound per EM iteration")
    print("  " + " ".join(f"{b:.1f}" for b in history))
    np.set_printoptions(precision=3, suppress=True)
    print("\ninput levels D (learned, then true)")
    print(params.D)
    print(truth.D)
    print("\ntransition matrix Pi (learned, then true)")
    print(params.Pi)
    print(np.asarray(truth.Pi))
    print(f"\nobservation noise diag R: learned {np.diag(params.R)}, true {np.diag(truth.R)}")


if __name__ == "__main__":
    main()
