"""Command-line entry point: ``mixeddyn <subcommand> ...``.

Every subcommand accepts ``--seed`` and ``--out``. ``sample``, ``train``,
``classify`` and ``bench-gestures`` write files into the ``--out``
directory; ``infer`` and ``repro-sec4`` print to stdout and additionally
write files when ``--out`` is given. The worker count for parallel E-steps
is capped by the ``MIXEDDYN_THREADS`` environment variable (0 = one per CPU).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import io as mio
from .baselines import (DEFAULT_PATH_CAP, exact_posterior, greedy_truncated_viterbi, path_cost, three_step_instance,
                        trellis_table)
from .gestures import run_benchmark
from .learning import TrainConfig, em_train
from .model import PARAM_NAMES, sample
from .variational import DEFAULT_MAX_ITER, DEFAULT_TOL, VariationalState, e_step

_DEFAULTS = TrainConfig()


def _write(out: Optional[Path], name: str, text: str) -> None:
    if out is not None:
        mio.ensure_dir(out)
        (out / name).write_text(text, encoding="ascii")


def _table(header, rows) -> str:
    lines = ["\t".join(header)]
    lines += ["\t".join(str(c) if isinstance(c, (int, np.integer, str)) else mio.fmt(c) for c in r) for r in rows]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------


def cmd_sample(args) -> int:
    params = mio.load_model(args.model)
    y, lat = sample(params, args.length, seed=args.seed)
    out = Path(args.out)
    mio.ensure_dir(out)
    mio.save_sequence(y, out / "sequence.txt")
    N = params.state_dim
    header = ["t", "s"] + [f"x{n}" for n in range(N)] + [f"u{n}" for n in range(N)]
    rows = [[t, int(lat.discrete_path[t]), *lat.continuous_path[t], *lat.inputs[t]] for t in range(y.T)]
    _write(out, "latents.tsv", _table(header, rows))
    print(f"wrote {y.T} steps to {out / 'sequence.txt'} and {out / 'latents.tsv'}")
    return 0


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------


def cmd_infer(args) -> int:
    params = mio.load_model(args.model)
    y = mio.load_sequence(args.sequence)
    out = Path(args.out) if args.out else None
    S, N = params.num_states, params.state_dim
    if args.method == "variational":
        state, stats = e_step(params, y, tol=args.tol, max_iter=args.max_iter)
        header = ["t"] + [f"s_mean{i}" for i in range(S)] + [f"x_mean{n}" for n in range(N)] + \
                 [f"u{n}" for n in range(N)]
        rows = [[t, *stats.s_mean[t], *stats.x_mean[t], *state.u[t]] for t in range(y.T)]
        summary = [
            "method variational",
            f"bound {mio.fmt(stats.bound)}",
            f"iterations {state.iterations}",
            f"converged {int(state.converged)}",
            "path " + " ".join(str(int(i)) for i in np.argmax(stats.s_mean, axis=1)),
        ]
        if out is not None:
            mio.ensure_dir(out)
            mio.save_trace(state, out / "trace.tsv")
    elif args.method == "greedy":
        res = greedy_truncated_viterbi(params, y)
        header = ["t", "state", "step_cost"] + [f"u{n}" for n in range(N)]
        rows = [[t, int(res.path[t]), res.step_costs[t], *res.u[t]] for t in range(y.T)]
        summary = [
            "method greedy",
            f"cost {mio.fmt(res.total_cost)}",
            "path " + " ".join(str(int(i)) for i in res.path),
        ]
    else:
        ex = exact_posterior(params, y, cap=args.cap)
        header = ["t"] + [f"s_mean{i}" for i in range(S)] + [f"x_mean{n}" for n in range(N)]
        rows = [[t, *ex.s_mean[t], *ex.x_mean[t]] for t in range(y.T)]
        mp = ex.map_path
        summary = [
            "method exact",
            f"log_evidence {mio.fmt(ex.log_evidence)}",
            "map_path " + " ".join(str(int(i)) for i in mp),
            f"map_cost {mio.fmt(path_cost(params, y, mp))}",
        ]
    text = "\n".join(summary) + "\n"
    print(text, end="")
    _write(out, "summary.txt", text)
    _write(out, "posterior.tsv", _table(header, rows))
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _parse_freeze(text: Optional[str]) -> list[str]:
    if not text:
        return []
    names = [t.strip() for t in text.split(",") if t.strip()]
    bad = [n for n in names if n not in PARAM_NAMES]
    if bad:
        raise ValueError(f"--freeze: unknown parameter(s) {', '.join(bad)}; choose from {', '.join(PARAM_NAMES)}")
    return names


def cmd_train(args) -> int:
    entries = mio.load_dataset(args.manifest)
    if not entries:
        raise ValueError(f"{args.manifest}: manifest lists no sequences")
    init = mio.load_model(args.init)
    cfg = TrainConfig.freezing(_parse_freeze(args.freeze), e_tol=args.e_tol, em_tol=args.em_tol,
                               max_em_iter=args.max_em)
    params, history = em_train([e.sequence for e in entries], init, cfg)
    out = Path(args.out)
    mio.ensure_dir(out)
    mio.save_model(params, out / "model.txt")
    _write(out, "bound_history.tsv", _table(["iteration", "bound"], [[k + 1, b] for k, b in enumerate(history)]))
    print(f"trained on {len(entries)} sequences; {len(history)} EM iterations; final bound {mio.fmt(history[-1])}")
    return 0


# ---------------------------------------------------------------------------
# classify
# ---------------------------------------------------------------------------


def cmd_classify(args) -> int:
    model_dir = Path(args.models)
    files = sorted(model_dir.glob("*.txt"))
    if not files:
        raise ValueError(f"{model_dir}: no model files (*.txt)")
    models = {f.stem: mio.load_model(f) for f in files}
    names = sorted(models)
    entries = mio.load_dataset(args.manifest)
    unknown = sorted({e.class_name for e in entries} - set(names))
    if unknown:
        raise ValueError(f"manifest classes without a model file: {', '.join(unknown)}")

    col = {c: i for i, c in enumerate(names)}
    confusion = np.zeros((len(names), len(names)), dtype=int)
    folds = sorted({e.fold for e in entries})
    wrong = {(c, f): 0 for c in names for f in folds}
    count = {(c, f): 0 for c in names for f in folds}
    traces, rows = {}, []
    for e in entries:
        bounds = {}
        for c in names:
            state, stats = e_step(models[c], e.sequence, tol=_DEFAULTS.e_tol, max_iter=_DEFAULTS.e_max_iter)
            bounds[c] = stats.bound
            traces[f"{e.filename}:{c}"] = state.bound_trace
        pred = max(names, key=lambda c: bounds[c])   # names sorted: ties go to the first
        confusion[col[e.class_name], col[pred]] += 1
        wrong[e.class_name, e.fold] += pred != e.class_name
        count[e.class_name, e.fold] += 1
        rows.append([e.filename, e.class_name, pred, *[bounds[c] for c in names]])

    def mean_var(rates):
        rates = np.asarray(rates, dtype=float)
        return float(rates.mean()), float(rates.var(ddof=1) / len(rates)) if len(rates) > 1 else 0.0

    metrics = mio.Metrics(class_names=names, confusion=confusion, bound_traces=traces)
    for c in names:
        rates = [wrong[c, f] / count[c, f] for f in folds if count[c, f]]
        if rates:
            metrics.errors[c], metrics.variances[c] = mean_var(rates)
    overall = [sum(wrong[c, f] for c in names) / sum(count[c, f] for c in names) for f in folds]
    metrics.overall_error, metrics.overall_variance = mean_var(overall)

    out = Path(args.out)
    mio.ensure_dir(out)
    _write(out, "predictions.tsv", _table(["file", "true", "predicted"] + [f"bound_{c}" for c in names], rows))
    mio.save_report(metrics, out / "report.tsv")
    print(f"classified {len(entries)} sequences; overall error {metrics.overall_error:.4f}")
    return 0


# ---------------------------------------------------------------------------
# bench-gestures
# ---------------------------------------------------------------------------


def cmd_bench(args) -> int:
    res = run_benchmark(per_class=args.per_class, noise_sd=args.noise_sd, folds=args.folds, seed=args.seed)
    out = Path(args.out)
    mio.ensure_dir(out)
    mio.save_report(mio.Metrics.from_cv(res.coupled), out / "report_coupled.tsv")
    mio.save_report(mio.Metrics.from_cv(res.gradient), out / "report_gradient.tsv")
    it = np.asarray(res.e_step_iterations)
    lines = [
        f"per_class {args.per_class}",
        f"noise_sd {mio.fmt(args.noise_sd)}",
        f"folds {args.folds}",
        f"seed {args.seed}",
        f"coupled_error {mio.fmt(res.coupled.overall_error)}",
        f"coupled_variance {mio.fmt(res.coupled.overall_variance)}",
        f"gradient_error {mio.fmt(res.gradient.overall_error)}",
        f"gradient_variance {mio.fmt(res.gradient.overall_variance)}",
        f"e_step_iterations_median {mio.fmt(np.median(it))}",
    ]
    for c in res.coupled.class_names:
        lines.append(f"class {c} coupled {res.coupled.errors[c]:.4f} gradient {res.gradient.errors[c]:.4f}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    _write(out, "summary.txt", text)
    return 0


# ---------------------------------------------------------------------------
# repro-sec4
# ---------------------------------------------------------------------------


def _cost(v: float) -> str:
    return str(int(round(v))) if abs(v - round(v)) < 1e-9 else f"{v:.4f}"


def three_step_report(k: float, R: Optional[float], eps: float) -> str:
    """Trellis table, greedy and exact paths, and the variational trace for the scalar example."""
    params, y, trans, init = three_step_instance(k=k, R=R, eps=eps)
    levels = params.D[0]

    def lab(path):
        return " ".join(f"{levels[i]:+g}" for i in path)

    lines = [f"instance: k={k:g} R={params.R[0, 0]:g} eps={eps:g} Y=(0, 0, -5) inputs {{-1, +1}}", ""]
    lines.append("trellis path costs")
    table = trellis_table(params, y, trans, init)
    for p, c in table:
        lines.append(f"  {lab(p):>10}  {_cost(c)}")
    best_path, best = min(table, key=lambda pc: pc[1])
    lines.append(f"least-cost path: {lab(best_path)} cost {_cost(best)}")
    lines.append("")

    g = greedy_truncated_viterbi(params, y, trans, init)
    lines.append(f"greedy path: {lab(g.path)} cost {_cost(g.total_cost)}")
    ex = exact_posterior(params, y)
    mp = ex.map_path
    lines.append(f"exact MAP path: {lab(mp)} cost {_cost(path_cost(params, y, mp, trans, init))} "
                 f"log p(Y) {ex.log_evidence:.6f}")
    lines.append("")

    if params.Q[0, 0] <= 0:
        lines.append("variational trace: not available for k = 0 (Q = 0 has no inverse)")
        return "\n".join(lines) + "\n"
    T = y.T
    log_q0 = np.zeros((T, params.num_states))
    state, stats = e_step(params, y, init=VariationalState(log_q=log_q0))
    lines.append("variational trace from log q = 0 (row 0: initial values; row k: sweep k)")
    header = ["iter"] + [f"q_{t + 1}(-1)" for t in range(T)] + [f"u_{t + 1}" for t in range(T)] + ["bound"]
    lines.append("  ".join(f"{h:>8}" for h in header))
    rows = [(0, log_q0, state.initial_u, None)]
    rows += [(k + 1, lq, u, b) for k, (lq, u, b) in
             enumerate(zip(state.log_q_trace, state.u_trace, state.bound_trace))]
    for it, lq, u, b in rows:
        vals = [f"{v:8.3f}" for v in lq[:, 0]] + [f"{v:8.3f}" for v in u[:, 0]]
        vals.append(f"{'':>8}" if b is None else f"{b:8.4f}")
        lines.append("  ".join([f"{it:>8}"] + vals))
    path = np.argmax(stats.s_mean, axis=1)
    lines.append(f"variational path: {lab(path)} after {state.iterations} iterations")
    return "\n".join(lines) + "\n"


def cmd_repro(args) -> int:
    text = three_step_report(args.k, args.R, args.eps)
    print(text, end="")
    _write(Path(args.out) if args.out else None, "three_step.txt", text)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixeddyn", description="Mixed-state HMM/LDS inference and learning")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, out_required):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
        sp.add_argument("--out", required=out_required, default=None, help="output directory")
        sp.set_defaults(func=fn)
        return sp

    sp = add("sample", cmd_sample, "draw a sequence and its latents from a model file", True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--length", type=int, required=True)

    sp = add("infer", cmd_infer, "posterior summaries for one sequence", False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--sequence", required=True)
    sp.add_argument("--method", choices=["variational", "greedy", "exact"], default="variational")
    sp.add_argument("--tol", type=float, default=DEFAULT_TOL)
    sp.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    sp.add_argument("--cap", type=int, default=DEFAULT_PATH_CAP, help="path cap for --method exact")

    sp = add("train", cmd_train, "variational EM on the sequences of a manifest", True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--init", required=True)
    sp.add_argument("--e-tol", type=float, default=_DEFAULTS.e_tol)
    sp.add_argument("--em-tol", type=float, default=_DEFAULTS.em_tol)
    sp.add_argument("--max-em", type=int, default=_DEFAULTS.max_em_iter)
    sp.add_argument("--freeze", default="", help="comma-separated parameters to keep fixed, e.g. A,C")

    sp = add("classify", cmd_classify, "classify manifest sequences by largest bound", True)
    sp.add_argument("--models", required=True, help="directory of <class>.txt model files")
    sp.add_argument("--manifest", required=True)

    sp = add("bench-gestures", cmd_bench, "synthetic gesture benchmark with cross-validation", True)
    sp.add_argument("--per-class", type=int, default=50)
    sp.add_argument("--noise-sd", type=float, default=0.01)
    sp.add_argument("--folds", type=int, default=4)

    sp = add("repro-sec4", cmd_repro, "three-step scalar example: trellis, greedy, exact, variational", False)
    sp.add_argument("--k", type=float, default=0.0)
    sp.add_argument("--R", type=float, default=None)
    sp.add_argument("--eps", type=float, default=0.0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError, OSError, RuntimeError) as exc:
        print(f"mixeddyn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
