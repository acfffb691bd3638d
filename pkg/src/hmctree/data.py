"""Datasets: CSV ingestion, unit-interval normalisation, synthetic CGM data."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

__all__ = [
    "IngestionError",
    "Normalization",
    "Dataset",
    "load_csv",
    "write_csv",
    "split",
    "synth_cgm",
    "cgm_mean",
    "CGM_TREE",
]

log = logging.getLogger(__name__)

Task = Literal["regression", "classification"]


class IngestionError(ValueError):
    """Malformed input file; the message names the offending row/column."""


@dataclass(frozen=True)
class Normalization:
    """Per-dimension affine map ``(x - offset) / scale`` onto [0, 1].

    Dimensions with zero range (``scale == 0``) map to 0.5.
    """

    offset: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, raw: np.ndarray, names: Sequence[str] | None = None) -> "Normalization":
        raw = np.asarray(raw, dtype=float)
        lo = raw.min(axis=0)
        hi = raw.max(axis=0)
        scale = hi - lo
        for d in np.flatnonzero(scale == 0):
            label = names[d] if names is not None else f"column {d}"
            log.warning("input %s is constant; normalising it to 0.5", label)
        return cls(lo, scale)

    @classmethod
    def identity(cls, n_features: int) -> "Normalization":
        return cls(np.zeros(n_features), np.ones(n_features))

    def apply(self, raw: np.ndarray) -> np.ndarray:
        """Normalise; values outside the fitted range are clipped to [0, 1]."""
        raw = np.asarray(raw, dtype=float)
        safe = np.where(self.scale > 0, self.scale, 1.0)
        out = (raw - self.offset) / safe
        out = np.where(self.scale > 0, out, 0.5)
        return np.clip(out, 0.0, 1.0)

    def invert(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.scale + self.offset

    def to_dict(self) -> dict:
        return {"offset": self.offset.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(np.asarray(d["offset"], dtype=float), np.asarray(d["scale"], dtype=float))


@dataclass(frozen=True)
class Dataset:
    """Normalised inputs ``X`` (N x n_x, in [0, 1]) and outputs ``y``.

    For classification ``y`` holds integer labels ``1..M`` and
    ``class_labels[m - 1]`` is the original label of class ``m``.
    """

    X: np.ndarray
    y: np.ndarray
    task: Task
    normalization: Normalization
    feature_names: tuple[str, ...] = ()
    output_name: str = "y"
    class_labels: tuple[str, ...] = ()
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be N x n_x and match y in length")
        if self.task == "classification" and self.y.size:
            labels = np.unique(self.y)
            if labels[0] < 1 or labels[-1] > self.n_classes:
                raise ValueError("classification labels must lie in 1..M")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        if self.task != "classification":
            return 0
        if self.class_labels:
            return len(self.class_labels)
        return int(self.y.max()) if self.y.size else 0

    def raw_inputs(self) -> np.ndarray:
        return self.normalization.invert(self.X)

    def manifest(self) -> dict:
        return {
            "task": self.task,
            "n": self.n,
            "n_features": self.n_features,
            "feature_names": list(self.feature_names),
            "output_name": self.output_name,
            "class_labels": list(self.class_labels),
            "normalization": self.normalization.to_dict(),
            "source": self.source,
        }


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------
def _read_rows(path: Path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise IngestionError(f"{path}: file not found") from None
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise IngestionError(f"{path}: empty file")
    if len(rows) == 1:
        raise IngestionError(f"{path}: header present but no data rows")
    return [c.strip() for c in rows[0]], rows[1:]


def load_csv(
    path,
    output: str | None = None,
    task: Task = "regression",
    inputs: Sequence[str] | None = None,
    normalization: Normalization | None = None,
    class_labels: Sequence[str] | None = None,
) -> Dataset:
    """Read a comma-separated file with a header row.

    ``output`` names the output column (default: the last column); ``inputs``
    selects input columns (default: every other column). The min-max map is
    fitted on this file unless ``normalization`` is given (use that to apply
    a training map to a test file). For classification, labels are mapped to
    ``1..M`` in order of first appearance unless ``class_labels`` fixes the
    order.
    """
    path = Path(path)
    header, body = _read_rows(path)
    out_name = output if output is not None else header[-1]
    if out_name not in header:
        raise IngestionError(f"{path}: missing output column {out_name!r}")
    in_names = list(inputs) if inputs is not None else [h for h in header if h != out_name]
    for name in in_names:
        if name not in header:
            raise IngestionError(f"{path}: missing input column {name!r}")
    if not in_names:
        raise IngestionError(f"{path}: no input columns")
    in_cols = [header.index(n) for n in in_names]
    out_col = header.index(out_name)

    raw = np.empty((len(body), len(in_cols)))
    out_cells: list[str] = []
    problems: list[str] = []
    for r, row in enumerate(body, start=2):  # header is line 1
        if len(row) != len(header):
            problems.append(f"row {r}: expected {len(header)} cells, found {len(row)}")
            continue
        for d, c in enumerate(in_cols):
            cell = row[c].strip()
            try:
                value = float(cell)
            except ValueError:
                problems.append(f"row {r}, column {header[c]!r}: non-numeric value {cell!r}")
                continue
            if not math.isfinite(value):
                problems.append(f"row {r}, column {header[c]!r}: non-finite value {cell!r}")
            raw[r - 2, d] = value
        out_cells.append(row[out_col].strip())
    if problems:
        raise IngestionError(f"{path}: invalid rows:\n  " + "\n  ".join(problems))

    if task == "classification":
        order = list(class_labels) if class_labels is not None else list(dict.fromkeys(out_cells))
        index = {lab: m + 1 for m, lab in enumerate(order)}
        unknown = sorted(set(out_cells) - index.keys())
        if unknown:
            raise IngestionError(f"{path}: labels {unknown} not among the declared classes")
        y = np.array([index[c] for c in out_cells], dtype=np.int64)
        labels = tuple(order)
    elif task == "regression":
        try:
            y = np.array([float(c) for c in out_cells])
        except ValueError:
            bad = next(i for i, c in enumerate(out_cells) if not _is_float(c))
            raise IngestionError(
                f"{path}: row {bad + 2}, column {out_name!r}: non-numeric output {out_cells[bad]!r}"
            ) from None
        labels = ()
    else:
        raise ValueError(f"unknown task {task!r}")

    norm = normalization if normalization is not None else Normalization.fit(raw, in_names)
    return Dataset(
        norm.apply(raw), y, task, norm, tuple(in_names), out_name, labels,
        {"kind": "csv", "path": str(path)},
    )


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def write_csv(data: Dataset, path, raw: bool = True) -> None:
    """Write inputs (original units when ``raw``) and the output column."""
    names = list(data.feature_names) or [f"x{d}" for d in range(data.n_features)]
    X = data.raw_inputs() if raw else data.X
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names + [data.output_name])
        for x, y in zip(X, data.y):
            if data.task == "classification":
                out = data.class_labels[int(y) - 1] if data.class_labels else int(y)
            else:
                out = repr(float(y))
            w.writerow([repr(float(v)) for v in x] + [out])


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------
def split(data: Dataset, fraction: float, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Shuffled partition; the normalisation is refitted on the first part."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    n_first = int(round(fraction * data.n))
    if n_first == 0 or n_first == data.n:
        raise ValueError(f"fraction {fraction} leaves an empty side for {data.n} rows")
    perm = rng.permutation(data.n)
    raw = data.raw_inputs()
    a, b = perm[:n_first], perm[n_first:]
    norm = Normalization.fit(raw[a], data.feature_names or None)

    def part(idx):
        return replace(data, X=norm.apply(raw[idx]), y=data.y[idx].copy(), normalization=norm)

    return part(a), part(b)


# ---------------------------------------------------------------------------
# synthetic CGM data
# ---------------------------------------------------------------------------
# (dimension, threshold, left subtree, right subtree) with float leaves
CGM_TREE = (1, 4.0, (0, 3.0, 1.0, (0, 7.0, 5.0, 8.0)), (0, 5.0, 8.0, 2.0))


def cgm_mean(raw: np.ndarray) -> np.ndarray:
    """Leaf mean of the generating tree at raw inputs ``(x0, x1)``; ``x < t`` goes left."""
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    out = np.empty(raw.shape[0])
    for i, x in enumerate(raw):
        node = CGM_TREE
        while isinstance(node, tuple):
            dim, thr, left, right = node
            node = left if x[dim] < thr else right
        out[i] = node
    return out


def synth_cgm(
    n_train: int = 800,
    n_test: int = 800,
    sigma: float = 0.2,
    rng: np.random.Generator | int | None = None,
    input_law: Literal["grid", "uniform"] = "grid",
) -> tuple[Dataset, Dataset]:
    """Draw train/test sets from the two-input CGM regression tree.

    ``input_law="grid"`` draws each input uniformly from the integers
    1..10; ``"uniform"`` draws from the continuous box [0, 10]^2. Outputs are
    the routed leaf mean plus Normal(0, sigma^2) noise. Inputs are normalised
    by the generator domain so both sets share one map.
    """
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(rng)
    if input_law == "grid":
        norm = Normalization(np.array([1.0, 1.0]), np.array([9.0, 9.0]))
    elif input_law == "uniform":
        norm = Normalization(np.array([0.0, 0.0]), np.array([10.0, 10.0]))
    else:
        raise ValueError(f"unknown input_law {input_law!r}")

    def draw(n):
        if input_law == "grid":
            raw = rng.integers(1, 11, size=(n, 2)).astype(float)
        else:
            raw = rng.uniform(0.0, 10.0, size=(n, 2))
        y = cgm_mean(raw) + sigma * rng.standard_normal(n)
        return raw, y

    source = {"kind": "synth-cgm", "sigma": sigma, "input_law": input_law}
    out = []
    for n in (n_train, n_test):
        raw, y = draw(n)
        out.append(Dataset(norm.apply(raw), y, "regression", norm, ("x0", "x1"), "y", (), dict(source)))
    return out[0], out[1]


def save_manifest(path, **sections) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(sections, fh, indent=2, sort_keys=True)
        fh.write("\n")
