"""Synthetic 2D manifolds, semi-supervised splits and the CSV point format."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError

UNLABELED = -1

# second moon: unit half-circle centred here, opening upwards
LOWER_MOON_CENTER = (1.0, 0.5)


@dataclass
class LabeledSet:
    """Points with integer labels in ``[0, K)`` or ``UNLABELED``.

    ``true_labels`` keeps ground truth for points whose ``labels`` entry was
    hidden by a split.  Training code reads ``labels`` only; evaluation reads
    ``true_labels`` through :meth:`ground_truth`.
    """

    points: np.ndarray
    labels: np.ndarray
    true_labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.points.ndim != 2:
            raise ValueError(f"points must be an n x d matrix, got shape {self.points.shape}")
        if self.labels.shape != (self.points.shape[0],):
            raise ValueError("points and labels disagree on the number of rows")
        if np.any(self.labels < UNLABELED):
            raise ValueError("labels must be non-negative or UNLABELED (-1)")
        if self.true_labels is not None:
            self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
            if self.true_labels.shape != self.labels.shape:
                raise ValueError("true_labels must align with labels")

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def ground_truth(self) -> np.ndarray:
        return self.labels if self.true_labels is None else self.true_labels

    def subset(self, idx) -> "LabeledSet":
        idx = np.asarray(idx, dtype=np.int64)
        tl = None if self.true_labels is None else self.true_labels[idx]
        return LabeledSet(self.points[idx], self.labels[idx], tl)


def _check_even(n: int) -> None:
    if n <= 0 or n % 2:
        raise ValueError(f"n must be a positive even integer, got {n}")


def two_moons(n: int, noise_std: float, rng: np.random.Generator) -> LabeledSet:
    """Two interleaved unit half-circles, ``n // 2`` evenly spaced points each.

    Class 0 is the upper arc ``(cos t, sin t)``, class 1 the lower arc
    ``(1 - cos t, 0.5 - sin t)`` for ``t`` in ``[0, pi]``.
    """
    _check_even(n)
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    m = n // 2
    t = np.linspace(0.0, np.pi, m)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    cx, cy = LOWER_MOON_CENTER
    lower = np.column_stack([cx - np.cos(t), cy - np.sin(t)])
    points = np.vstack([upper, lower])
    if noise_std > 0:
        points = points + noise_std * rng.standard_normal(points.shape)
    labels = np.repeat([0, 1], m)
    return LabeledSet(points, labels)


def two_circles(n: int, noise_std: float, radius_ratio: float, rng: np.random.Generator) -> LabeledSet:
    """Concentric circles: outer radius 1 is class 0, inner radius ``radius_ratio`` class 1."""
    _check_even(n)
    if not 0.0 < radius_ratio < 1.0:
        raise ValueError("radius_ratio must lie in (0, 1)")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    m = n // 2
    t = np.linspace(0.0, 2.0 * np.pi, m, endpoint=False)
    ring = np.column_stack([np.cos(t), np.sin(t)])
    points = np.vstack([ring, radius_ratio * ring])
    if noise_std > 0:
        points = points + noise_std * rng.standard_normal(points.shape)
    return LabeledSet(points, np.repeat([0, 1], m))


def _arc_distance(points, center, angle_lo, angle_hi):
    d = points - np.asarray(center)
    r = np.hypot(d[:, 0], d[:, 1])
    ang = np.arctan2(d[:, 1], d[:, 0])
    inside = (ang >= angle_lo) & (ang <= angle_hi)
    radial = np.abs(r - 1.0)
    ends = [np.asarray(center) + np.array([np.cos(a), np.sin(a)]) for a in (angle_lo, angle_hi)]
    end_d = np.min([np.hypot(*(points - e).T) for e in ends], axis=0)
    return np.where(inside, radial, end_d)


def moons_distance(points: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the nearest noiseless moon arc."""
    points = np.asarray(points, dtype=np.float64)
    upper = _arc_distance(points, (0.0, 0.0), 0.0, np.pi)
    lower = _arc_distance(points, LOWER_MOON_CENTER, -np.pi, 0.0)
    return np.minimum(upper, lower)


def circles_distance(points: np.ndarray, radius_ratio: float) -> np.ndarray:
    r = np.hypot(points[:, 0], points[:, 1])
    return np.minimum(np.abs(r - 1.0), np.abs(r - radius_ratio))


@dataclass(frozen=True)
class SplitSpec:
    labels_per_class: int
    validation_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.labels_per_class <= 0:
            raise ValueError("labels_per_class must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")


def split_semi_supervised(data: LabeledSet, spec: SplitSpec, rng: np.random.Generator):
    """Partition ``data`` into (labeled, unlabeled, validation).

    The labeled part has exactly ``labels_per_class`` points of every class;
    ``validation_fraction`` of the remainder becomes the validation set and the
    rest is returned with labels hidden (``true_labels`` keeps them).
    """
    labels = data.ground_truth()
    if np.any(labels < 0):
        raise ValueError("cannot split a set that contains unlabeled points")
    classes = np.unique(labels)
    chosen = []
    for c in classes:
        members = np.flatnonzero(labels == c)
        if members.size < spec.labels_per_class:
            raise ValueError(
                f"class {c} has {members.size} members, need {spec.labels_per_class}")
        chosen.append(rng.permutation(members)[: spec.labels_per_class])
    labeled_idx = np.sort(np.concatenate(chosen))
    rest = np.setdiff1d(np.arange(len(data)), labeled_idx)
    rest = rng.permutation(rest)
    n_val = int(round(spec.validation_fraction * rest.size))
    val_idx = np.sort(rest[:n_val])
    unl_idx = np.sort(rest[n_val:])

    labeled = LabeledSet(data.points[labeled_idx], labels[labeled_idx])
    validation = LabeledSet(data.points[val_idx], labels[val_idx])
    unlabeled = LabeledSet(data.points[unl_idx], np.full(unl_idx.size, UNLABELED),
                           true_labels=labels[unl_idx])
    return labeled, unlabeled, validation


def save_csv(data: LabeledSet, path) -> None:
    """Write ``x0,...,x{d-1},label`` rows; floats keep 17 significant digits."""
    header = [f"x{j}" for j in range(data.dim)] + ["label"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row, lab in zip(data.points, data.labels):
            w.writerow([format(float(v), ".17g") for v in row] + [int(lab)])


def load_csv(path) -> LabeledSet:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: missing header") from None
        if not header or header[-1] != "label":
            bad = header[-1] if header else "<empty>"
            raise DatasetFormatError(f"{path}: last column must be 'label', found {bad!r}")
        d = len(header) - 1
        if d == 0:
            raise DatasetFormatError(f"{path}: header has no coordinate columns")
        for j, name in enumerate(header[:-1]):
            if name != f"x{j}":
                raise DatasetFormatError(f"{path}: column {j} should be 'x{j}', found {name!r}")
        pts, labs = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected {d + 1} fields, found {len(row)}")
            try:
                pts.append([float(v) for v in row[:-1]])
            except ValueError:
                raise DatasetFormatError(f"{path}:{lineno}: non-numeric coordinate") from None
            try:
                lab = int(row[-1])
            except ValueError:
                raise DatasetFormatError(f"{path}:{lineno}: label {row[-1]!r} is not an integer") from None
            if lab < UNLABELED:
                raise DatasetFormatError(f"{path}:{lineno}: label {lab} is invalid")
            labs.append(lab)
    points = np.array(pts, dtype=np.float64).reshape(len(pts), d)
    return LabeledSet(points, np.array(labs, dtype=np.int64))
