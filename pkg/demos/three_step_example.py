"""A three-step scalar system where greedy decoding goes wrong.

The state follows x_t = x_{t-1} + u_t with inputs in {-1, +1} and is observed
directly. Observations are (0, 0, -5). A greedy decoder that keeps a single
path commits to +1 at the second step and pays for it later; exact
enumeration and the variational E-step both find -1 -1 -1.

Run:  python3 demos/three_step_example.py
"""

import numpy as np

from mixeddyn import exact_posterior, greedy_truncated_viterbi, three_step_instance, trellis_table
from mixeddyn.variational import VariationalState, e_step


def label(path, levels):
    return " ".join(f"{levels[i]:+g}" for i in path)


def main():
    # k = 0: no process noise, so each path has a closed-form quadratic cost
    p, y, trans, init = three_step_instance(k=0)
    levels = p.D[0]
    print("cost of every input path")
    for path, cost in trellis_table(p, y, trans, init):
        print(f"  {label(path, levels):>10}  {cost:g}")

    g = greedy_truncated_viterbi(p, y, trans, init)
    print(f"\ngreedy keeps one path: {label(g.path, levels)} with cost {g.total_cost:g}")

    # a switching penalty above 2 makes the greedy choice optimal again
    for eps in (0.0, 3.0):
        pe, ye, te, ie = three_step_instance(k=0, eps=eps)
        ge = greedy_truncated_viterbi(pe, ye, te, ie)
        print(f"  eps={eps:g}: greedy picks {label(ge.path, levels)}, cost {ge.total_cost:g}")

    # k = 1: unit process noise, so the posterior is a proper mixture
    p1, y1, _, _ = three_step_instance(k=1, R=0.5)
    ex = exact_posterior(p1, y1)
    print(f"\nexact MAP path with process noise: {label(ex.map_path, levels)}, "
          f"log p(Y) = {ex.log_evidence:.4f}")

    state, stats = e_step(p1, y1, init=VariationalState(log_q=np.zeros((3, 2))))
    print("variational sweeps from flat evidence")
    for k, (lq, u, b) in enumerate(zip(state.log_q_trace, state.u_trace, state.bound_trace), start=1):
        print(f"  sweep {k}: log q(-1) {np.round(lq[:, 0], 3)}  u {np.round(u[:, 0], 3)}  bound {b:.4f}")
    print(f"variational path: {label(np.argmax(stats.s_mean, axis=1), levels)} "
          f"(bound {stats.bound:.4f} <= log p(Y) {ex.log_evidence:.4f})")


if __name__ == "__main__":
    main()
