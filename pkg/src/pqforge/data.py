"""Datasets: the jet-tagging HLF table from CSV, and seeded synthetic stand-ins."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import make_rng
from .errors import DataError

HLF_FEATURES = (
    "j_zlogz", "j_c1_b0_mmdt", "j_c1_b1_mmdt", "j_c1_b2_mmdt", "j_c2_b1_mmdt", "j_c2_b2_mmdt",
    "j_d2_b1_mmdt", "j_d2_b2_mmdt", "j_d2_a1_b1_mmdt", "j_d2_a1_b2_mmdt", "j_m2_b1_mmdt",
    "j_m2_b2_mmdt", "j_n2_b1_mmdt", "j_n2_b2_mmdt", "j_mass_mmdt", "j_multiplicity",
)
HLF_CLASSES = ("g", "q", "t", "w", "z")
LABEL_COLUMNS = ("class", "label", "y", "target")


@dataclass
class Split:
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


@dataclass
class Dataset:
    """Normalized features, integer labels and disjoint train/val index sets.

    ``X`` is already z-scored with ``mean``/``std`` taken from the train rows.
    """

    X: np.ndarray
    y: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    feature_names: tuple = ()
    class_names: tuple = ()

    @property
    def train(self) -> Split:
        return Split(self.X[self.train_idx], self.y[self.train_idx])

    @property
    def val(self) -> Split:
        return Split(self.X[self.val_idx], self.y[self.val_idx])

    @property
    def n_classes(self) -> int:
        return len(self.class_names) if self.class_names else int(self.y.max()) + 1

    def normalize(self, X_raw: np.ndarray) -> np.ndarray:
        return (np.asarray(X_raw, dtype=np.float64) - self.mean) / self.std

    def limit_train(self, n: int | None) -> "Dataset":
        """Keep only the first ``n`` training rows (the split order is already shuffled)."""
        if n is None or n >= len(self.train_idx):
            return self
        return Dataset(self.X, self.y, self.train_idx[:n], self.val_idx, self.mean, self.std,
                       self.feature_names, self.class_names)


def split_and_normalize(X: np.ndarray, y: np.ndarray, val_fraction: float = 0.2, seed: int = 0,
                        feature_names=(), class_names=()) -> Dataset:
    if not 0.0 < val_fraction < 1.0:
        raise DataError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    n = len(y)
    n_val = int(round(n * val_fraction))
    if n_val < 1 or n - n_val < 1:
        raise DataError(f"{n} rows cannot be split with val_fraction={val_fraction}")
    order = make_rng(seed, "split").permutation(n)
    val_idx, train_idx = np.sort(order[:n_val]), order[n_val:]
    X = np.asarray(X, dtype=np.float64)
    mean = X[train_idx].mean(axis=0)
    std = X[train_idx].std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return Dataset((X - mean) / std, np.asarray(y, dtype=np.int64), train_idx, val_idx, mean, std,
                   tuple(feature_names), tuple(class_names))


def _parse_float(cell: str, line: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"line {line}: column {column!r} is not numeric: {cell!r}") from None
    if not np.isfinite(value):
        raise DataError(f"line {line}: column {column!r} is not finite: {cell!r}")
    return value


def load_hlf_csv(path, val_fraction: float = 0.2, seed: int = 0, n_features: int = 16) -> Dataset:
    """Read ``n_features`` numeric columns plus one label column, shuffle, split and z-score.

    The label column is the one named ``class``/``label`` in the header, else
    the last column.  String labels map to ``0..C-1`` in sorted order;
    integer labels are used as they are.
    """
    X, y, names, classes = read_csv_table(path, n_features)
    return split_and_normalize(X, y, val_fraction, seed, names, classes)


def read_csv_table(path, n_features: int = 16, require_label: bool = True, encode: bool = True):
    """Raw ``(X, y, feature_names, class_names)`` from a CSV file.

    With ``require_label=False`` a file of exactly ``n_features`` columns is
    accepted and ``y`` is ``None``.  With ``encode=False`` labels come back as
    the original strings and ``class_names`` is empty.
    """
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise DataError(f"cannot open dataset {path}: {exc}") from None
    with handle:
        rows = list(csv.reader(handle))
    rows = [(n, r) for n, r in enumerate(rows, start=1) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: file is empty")
    first = rows[0][1]
    has_label = len(first) == n_features + 1 or require_label
    width = n_features + 1 if has_label else n_features
    data_cells = first[:-1] if has_label else first
    has_header = not all(_is_number(c) for c in data_cells)
    if has_header:
        header = [c.strip() for c in first]
        rows = rows[1:]
    else:
        header = [f"x{j}" for j in range(n_features)] + (["class"] if has_label else [])
    if len(header) != width:
        expected = f"{n_features} features + label" if require_label else f"{n_features} features, optionally + label"
        raise DataError(f"{path}: expected {width} columns ({expected}), found {len(header)}")
    lower = [h.lower() for h in header]
    label_col = None
    if has_label:
        label_col = next((lower.index(name) for name in LABEL_COLUMNS if name in lower), width - 1)
    feature_cols = [j for j in range(width) if j != label_col]
    X = np.empty((len(rows), n_features))
    labels = []
    for r, (line, row) in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: line {line}: expected {width} columns, found {len(row)}")
        X[r] = [_parse_float(row[j], line, header[j]) for j in feature_cols]
        if label_col is not None:
            labels.append(row[label_col].strip())
    if not len(rows):
        raise DataError(f"{path}: no data rows")
    names = tuple(header[j] for j in feature_cols)
    if label_col is None:
        return X, None, names, ()
    if not encode:
        return X, labels, names, ()
    y, class_names = _encode_labels(labels, path)
    return X, y, names, class_names


def encode_with_classes(labels: list, class_names, path="labels") -> np.ndarray:
    """Map label strings onto a fixed class list (integers index it directly)."""
    index = {str(c): j for j, c in enumerate(class_names)}
    out = np.empty(len(labels), dtype=np.int64)
    for r, v in enumerate(labels):
        if v in index:
            out[r] = index[v]
        elif _is_int(v) and 0 <= int(float(v)) < len(class_names):
            out[r] = int(float(v))
        else:
            raise DataError(f"{path}: row {r + 1}: label {v!r} is not one of {list(class_names)}")
    return out


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def _encode_labels(labels: list, path) -> tuple:
    if all(_is_int(v) for v in labels):
        y = np.asarray([int(float(v)) for v in labels], dtype=np.int64)
        if y.min() < 0:
            raise DataError(f"{path}: integer labels must be non-negative")
        return y, tuple(str(c) for c in range(int(y.max()) + 1))
    classes = tuple(sorted(set(labels)))
    index = {c: j for j, c in enumerate(classes)}
    return np.asarray([index[v] for v in labels], dtype=np.int64), classes


def _is_int(v: str) -> bool:
    try:
        return float(v) == int(float(v))
    except ValueError:
        return False


def synth_dataset(n: int, features: int = 16, classes: int = 5, seed: int = 0, val_fraction: float = 0.2,
                  separation: float = 0.7) -> Dataset:
    """Gaussian mixture with one unit-variance component per class and balanced labels.

    Class means are drawn from ``N(0, separation**2)``; the default puts a
    linear classifier near 90% accuracy for 16 features and 5 classes.
    """
    if n < classes * 10:
        raise DataError(f"need at least {classes * 10} samples for {classes} classes, got {n}")
    rng = make_rng(seed, "synth")
    means = rng.normal(0.0, separation, size=(classes, features))
    y = np.arange(n) % classes
    rng.shuffle(y)
    X = means[y] + rng.normal(size=(n, features))
    return split_and_normalize(X, y, val_fraction, seed, [f"x{j}" for j in range(features)],
                               tuple(str(c) for c in range(classes)))


def hlf_like_table(n: int = 1000, seed: int = 0):
    """Synthetic rows with the HLF column names and class letters.

    Features are a random nonlinear mix of a class-dependent latent vector,
    so the classes overlap roughly as much as the real jets do.  Only for
    smoke tests; it says nothing about the real benchmark.
    """
    rng = make_rng(seed, "hlf-like")
    classes = len(HLF_CLASSES)
    latent_means = rng.normal(0.0, 1.0, size=(classes, 6))
    mix = rng.normal(0.0, 1.0, size=(6, len(HLF_FEATURES)))
    y = np.arange(n) % classes
    rng.shuffle(y)
    z = latent_means[y] + rng.normal(0.0, 0.8, size=(n, 6))
    X = np.tanh(z @ mix / 2.0) * 3.0 + 0.3 * rng.normal(size=(n, len(HLF_FEATURES)))
    X[:, -1] = np.round(np.abs(X[:, -1]) * 10 + 20)  # multiplicity is a count
    return X, np.asarray(HLF_CLASSES)[y]


def write_hlf_fixture(path, n: int = 1000, seed: int = 0) -> Path:
    X, labels = hlf_like_table(n, seed)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(list(HLF_FEATURES) + ["class"])
        for row, label in zip(X, labels):
            writer.writerow([f"{v:.6g}" for v in row] + [label])
    return path


def load_data(path=None, val_fraction: float = 0.2, seed: int = 0, synthetic: int | None = None,
              n_features: int = 16) -> Dataset:
    """CSV when ``path`` is given, else a synthetic mixture of ``synthetic`` rows."""
    if path is not None:
        return load_hlf_csv(path, val_fraction, seed, n_features)
    return synth_dataset(synthetic or 5000, n_features, 5, seed, val_fraction)
