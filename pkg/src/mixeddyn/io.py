"""Plain-text serialization of models, sequences, datasets, traces and reports.

Every real number is written with 17 significant digits (``%.17g``), which
round-trips IEEE doubles exactly and does not depend on the process locale.

Model file::

    state_dim 1
    obs_dim 1
    num_states 2
    A
    1
    C
    1
    D
    -1 1
    ...
    pi0
    0.5 0.5

Blank lines and lines starting with ``#`` are ignored. Matrices are
row-major, one row per line; ``pi0`` is a single row.

Sequence file: a header ``T M``, then ``T`` rows of ``M`` reals, then an
optional line of ``T`` integer labels.

Dataset directory: one sequence file per example plus ``manifest.txt`` with
lines ``filename class_name fold_index``.

Report file: tab-separated tables, each introduced by ``# table: <name>``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .model import ModelParams, SequenceData

MODEL_FIELDS = ("state_dim", "obs_dim", "num_states", "A", "C", "D", "Q", "R", "Pi", "pi0")
MANIFEST_NAME = "manifest.txt"


class FormatError(ValueError):
    """Malformed text file; carries the path, line number and field."""

    def __init__(self, message: str, path=None, line: Optional[int] = None, field_name: Optional[str] = None):
        self.path, self.line, self.field = path, line, field_name
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if field_name is not None:
            where.append(f"field {field_name}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)


class FormatDimensionError(FormatError):
    """Header dimensions disagree with the data that follows."""


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def _row(values) -> str:
    return " ".join(fmt(v) for v in values)


def _lines(path) -> list[tuple[int, str]]:
    with open(path, "r", encoding="ascii") as fh:
        return [(i, ln.strip()) for i, ln in enumerate(fh, start=1)
                if ln.strip() and not ln.lstrip().startswith("#")]


def _floats(text: str, path, line: int, name: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split()]
    except ValueError:
        raise FormatError(f"cannot parse numbers from {text!r}", path, line, name) from None


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


def format_model(params: ModelParams) -> str:
    out = [
        f"state_dim {params.state_dim}",
        f"obs_dim {params.obs_dim}",
        f"num_states {params.num_states}",
    ]
    for name in ("A", "C", "D", "Q", "R", "Pi"):
        out.append(name)
        out += [_row(r) for r in getattr(params, name)]
    out.append("pi0")
    out.append(_row(params.pi0))
    return "\n".join(out) + "\n"


def save_model(params: ModelParams, path) -> None:
    Path(path).write_text(format_model(params), encoding="ascii")


def load_model(path) -> ModelParams:
    """Parse a model file; raises :class:`FormatError` naming the bad field."""
    lines = _lines(path)
    pos = 0

    def take(name):
        nonlocal pos
        if pos >= len(lines):
            raise FormatError("file ends before this field", path, None, name)
        item = lines[pos]
        pos += 1
        return item

    dims = {}
    for name in MODEL_FIELDS[:3]:
        ln, text = take(name)
        parts = text.split()
        if len(parts) != 2 or parts[0] != name:
            raise FormatError(f"expected '{name} <int>', got {text!r}", path, ln, name)
        try:
            dims[name] = int(parts[1])
        except ValueError:
            raise FormatError(f"not an integer: {parts[1]!r}", path, ln, name) from None
        if dims[name] < 1:
            raise FormatDimensionError("must be positive", path, ln, name)

    N, M, S = dims["state_dim"], dims["obs_dim"], dims["num_states"]
    shapes = {"A": (N, N), "C": (M, N), "D": (N, S), "Q": (N, N), "R": (M, M), "Pi": (S, S), "pi0": (1, S)}
    mats = {}
    for name in MODEL_FIELDS[3:]:
        ln, text = take(name)
        if text != name:
            raise FormatError(f"expected field header {name!r}, got {text!r}", path, ln, name)
        rows, cols = shapes[name]
        data = []
        for r in range(rows):
            if pos >= len(lines):
                raise FormatError(f"file ends after {r} of {rows} rows", path, None, name)
            rln, rtext = lines[pos]
            if rtext in MODEL_FIELDS:
                raise FormatDimensionError(f"found {r} rows, header implies {rows}", path, rln, name)
            pos += 1
            vals = _floats(rtext, path, rln, name)
            if len(vals) != cols:
                raise FormatDimensionError(f"row has {len(vals)} entries, header implies {cols}", path, rln, name)
            data.append(vals)
        mats[name] = np.array(data, dtype=float).reshape(rows, cols)
    if pos != len(lines):
        ln, text = lines[pos]
        raise FormatDimensionError(f"unexpected trailing content {text!r}", path, ln, "pi0")
    mats["pi0"] = mats["pi0"].ravel()
    return ModelParams(**mats)


# ---------------------------------------------------------------------------
# Sequences and datasets
# ---------------------------------------------------------------------------


def format_sequence(y: SequenceData) -> str:
    out = [f"{y.T} {y.obs_dim}"]
    out += [_row(r) for r in y.observations]
    if y.true_states is not None:
        out.append(" ".join(str(int(s)) for s in y.true_states))
    return "\n".join(out) + "\n"


def save_sequence(y: SequenceData, path) -> None:
    Path(path).write_text(format_sequence(y), encoding="ascii")


def load_sequence(path) -> SequenceData:
    lines = _lines(path)
    if not lines:
        raise FormatError("empty file", path, None, "header")
    ln, text = lines[0]
    try:
        T, M = (int(v) for v in text.split())
    except ValueError:
        raise FormatError(f"expected header 'T M', got {text!r}", path, ln, "header") from None
    if T < 1 or M < 1:
        raise FormatDimensionError("T and M must be positive", path, ln, "header")
    body = lines[1:]
    if len(body) < T:
        raise FormatDimensionError(f"found {len(body)} observation rows, header implies {T}", path, None,
                                   "observations")
    if len(body) > T + 1:
        raise FormatDimensionError(f"found {len(body) - T} lines after the observations, expected at most 1",
                                   path, body[T + 1][0], "labels")
    obs = []
    for rln, rtext in body[:T]:
        vals = _floats(rtext, path, rln, "observations")
        if len(vals) != M:
            raise FormatDimensionError(f"row has {len(vals)} entries, header implies {M}", path, rln,
                                       "observations")
        obs.append(vals)
    labels = None
    if len(body) == T + 1:
        rln, rtext = body[T]
        try:
            labels = [int(v) for v in rtext.split()]
        except ValueError:
            raise FormatError(f"labels must be integers, got {rtext!r}", path, rln, "labels") from None
        if len(labels) != T:
            raise FormatDimensionError(f"{len(labels)} labels for T={T}", path, rln, "labels")
    return SequenceData(np.array(obs, dtype=float).reshape(T, M), true_states=labels)


@dataclass
class DatasetEntry:
    sequence: SequenceData
    class_name: str
    fold: int
    filename: str = ""


def save_dataset(directory, entries: Iterable[tuple[SequenceData, str, int]]) -> list[str]:
    """Write one sequence file per example and the manifest; returns the file names."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names, manifest = [], []
    for k, (y, c, fold) in enumerate(entries):
        if not c or any(ch.isspace() for ch in c):
            raise ValueError(f"class name {c!r} must be non-empty without whitespace")
        name = f"seq_{k:05d}.txt"
        save_sequence(y, directory / name)
        names.append(name)
        manifest.append(f"{name} {c} {int(fold)}")
    (directory / MANIFEST_NAME).write_text("\n".join(manifest) + ("\n" if manifest else ""), encoding="ascii")
    return names


def read_manifest(path) -> list[tuple[str, str, int]]:
    out = []
    for ln, text in _lines(path):
        parts = text.split()
        if len(parts) != 3:
            raise FormatError(f"expected 'filename class_name fold_index', got {text!r}", path, ln, "manifest")
        try:
            fold = int(parts[2])
        except ValueError:
            raise FormatError(f"fold index {parts[2]!r} is not an integer", path, ln, "fold_index") from None
        out.append((parts[0], parts[1], fold))
    return out


def load_dataset(manifest_path) -> list[DatasetEntry]:
    """Read a manifest and the sequence files it lists (paths relative to the manifest)."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    base = manifest_path.parent
    return [DatasetEntry(load_sequence(base / name), c, fold, name) for name, c, fold in read_manifest(manifest_path)]


# ---------------------------------------------------------------------------
# Variational traces
# ---------------------------------------------------------------------------


def save_trace(state, path) -> None:
    """Bound per iteration, then the final ``log q`` and ``u`` per time step."""
    out = ["# table: bound_trace", "iteration\tbound"]
    out += [f"{k + 1}\t{fmt(b)}" for k, b in enumerate(state.bound_trace)]
    if state.log_q is not None:
        S = state.log_q.shape[1]
        N = state.u.shape[1]
        out += ["", "# table: final", "\t".join(["t"] + [f"log_q{i}" for i in range(S)] + [f"u{n}" for n in range(N)])]
        for t, (lq, u) in enumerate(zip(state.log_q, state.u)):
            out.append("\t".join([str(t)] + [fmt(v) for v in lq] + [fmt(v) for v in u]))
    Path(path).write_text("\n".join(out) + "\n", encoding="ascii")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class Metrics:
    """Classification metrics plus optional named bound traces."""

    class_names: list = field(default_factory=list)
    confusion: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=int))
    errors: dict = field(default_factory=dict)
    variances: dict = field(default_factory=dict)
    overall_error: Optional[float] = None
    overall_variance: Optional[float] = None
    bound_traces: dict = field(default_factory=dict)

    @classmethod
    def from_cv(cls, cv, bound_traces=None) -> "Metrics":
        return cls(list(cv.class_names), np.asarray(cv.confusion, dtype=int), dict(cv.errors),
                   dict(cv.variances), cv.overall_error, cv.overall_variance, dict(bound_traces or {}))


def _parse_table_value(tok: str, path, ln, name):
    try:
        return float(tok)
    except ValueError:
        raise FormatError(f"not a number: {tok!r}", path, ln, name) from None


def save_report(metrics: Metrics, path) -> None:
    """Tab-separated confusion, error and bound-trace tables.

    The confusion table has ``2 + K`` columns: class, number of test
    examples, and one count column per predicted class.
    """
    names = list(metrics.class_names)
    conf = np.asarray(metrics.confusion, dtype=int).reshape(len(names), len(names))
    out = ["# table: confusion", "\t".join(["class", "n"] + names)]
    for c, row in zip(names, conf):
        out.append("\t".join([c, str(int(row.sum()))] + [str(int(v)) for v in row]))
    out += ["", "# table: errors", "class\terror\tvariance"]
    for c in names:
        if c in metrics.errors:
            out.append(f"{c}\t{fmt(metrics.errors[c])}\t{fmt(metrics.variances.get(c, np.nan))}")
    if metrics.overall_error is not None:
        ov = np.nan if metrics.overall_variance is None else metrics.overall_variance
        out.append(f"overall\t{fmt(metrics.overall_error)}\t{fmt(ov)}")
    out += ["", "# table: bound_traces", "name\titeration\tbound"]
    for name, trace in metrics.bound_traces.items():
        out += [f"{name}\t{k + 1}\t{fmt(b)}" for k, b in enumerate(trace)]
    Path(path).write_text("\n".join(out) + "\n", encoding="ascii")


def load_report(path) -> Metrics:
    tables: dict[str, list] = {}
    current = None
    with open(path, "r", encoding="ascii") as fh:
        for ln, raw in enumerate(fh, start=1):
            text = raw.rstrip("\n")
            if text.startswith("# table:"):
                current = text.split(":", 1)[1].strip()
                tables[current] = []
            elif text.strip():
                if current is None:
                    raise FormatError("content before the first table marker", path, ln, None)
                tables[current].append((ln, text.split("\t")))
    for required in ("confusion", "errors", "bound_traces"):
        if required not in tables or not tables[required]:
            raise FormatError("missing table", path, None, required)

    header = tables["confusion"][0][1]
    names = header[2:]
    K = len(names)
    conf = np.zeros((K, K), dtype=int)
    for r, (ln, cells) in enumerate(tables["confusion"][1:]):
        if len(cells) != 2 + K or r >= K:
            raise FormatDimensionError(f"expected {2 + K} columns", path, ln, "confusion")
        conf[r] = [int(v) for v in cells[2:]]
    m = Metrics(class_names=names, confusion=conf)
    for ln, cells in tables["errors"][1:]:
        if len(cells) != 3:
            raise FormatDimensionError("expected 3 columns", path, ln, "errors")
        err, var = (_parse_table_value(v, path, ln, "errors") for v in cells[1:])
        if cells[0] == "overall":
            m.overall_error, m.overall_variance = err, var
        else:
            m.errors[cells[0]], m.variances[cells[0]] = err, var
    for ln, cells in tables["bound_traces"][1:]:
        if len(cells) != 3:
            raise FormatDimensionError("expected 3 columns", path, ln, "bound_traces")
        m.bound_traces.setdefault(cells[0], []).append(_parse_table_value(cells[2], path, ln, "bound_traces"))
    return m


# ---------------------------------------------------------------------------
# Seeds
# ---------------------------------------------------------------------------


def child_seeds(seed, n: int) -> list[np.random.SeedSequence]:
    """``n`` independent seed streams derived deterministically from ``seed``."""
    return np.random.SeedSequence(seed).spawn(n)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


__all__ = [
    "FormatError", "FormatDimensionError", "Metrics", "DatasetEntry", "MODEL_FIELDS", "MANIFEST_NAME",
    "format_model", "save_model", "load_model", "format_sequence", "save_sequence", "load_sequence",
    "save_dataset", "read_manifest", "load_dataset", "save_trace", "save_report", "load_report",
    "child_seeds", "ensure_dir", "fmt",
]
