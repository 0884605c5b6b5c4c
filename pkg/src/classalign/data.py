"""Datasets, class-conditioned indices, label-shift profiles, and synthetic
two-domain generators with controlled covariate shift.

Each class is a Gaussian blob whose mean sits on a circle; the target
domain applies a rigid transform (rotation in the generating 2-plane,
optional scale, translation) to the source conditionals, so p(x|y)
differs between domains while the class structure is preserved.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SOURCE = "source"
TARGET = "target"
UNLABELED = -1

PROFILE_KINDS = ("balanced", "mild", "extreme", "rs_ut_source", "rs_ut_target")


@dataclass
class Dataset:
    """Feature matrix with per-example labels and a domain tag.

    Unlabeled examples carry label -1; a source dataset must be fully
    labeled, and a training-time target dataset is fully unlabeled.
    """

    features: np.ndarray
    labels: np.ndarray
    domain: str
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.labels) != len(self.features):
            raise ValueError(
                f"dataset: features {self.features.shape} vs labels {self.labels.shape}")
        if self.domain not in (SOURCE, TARGET):
            raise ValueError(f"unknown domain tag {self.domain!r}")
        if len(self.labels) and self.labels.max() >= self.num_classes:
            raise ValueError(
                f"label {self.labels.max()} outside [0, {self.num_classes})")
        if len(self.labels) and self.labels.min() < UNLABELED:
            raise ValueError(f"negative label {self.labels.min()} is not allowed")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]


class ClassIndex:
    """Label -> example-index table for class-conditioned lookup.

    Buckets partition exactly the labeled examples; unlabeled rows are not
    indexed. Rebuild wholesale when labels change (pseudo-label refresh).
    """

    def __init__(self, labels: np.ndarray, num_classes: int):
        labels = np.asarray(labels, dtype=np.int64)
        self.num_classes = num_classes
        self.buckets = [np.flatnonzero(labels == j) for j in range(num_classes)]

    def bucket(self, label: int) -> np.ndarray:
        return self.buckets[label]

    def nonempty_classes(self) -> np.ndarray:
        return np.array([j for j, b in enumerate(self.buckets) if len(b)], dtype=np.int64)

    def counts(self) -> np.ndarray:
        return np.array([len(b) for b in self.buckets], dtype=np.int64)


@dataclass
class LabelProfile:
    """Per-class example counts realizing one of the imbalance protocols."""

    kind: str
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if (self.counts <= 0).any():
            raise ValueError("profile counts must be positive")

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def reversed(self) -> "LabelProfile":
        return LabelProfile(self.kind, self.counts[::-1].copy())


def make_profile(kind: str, num_classes: int, max_count: int,
                 parameter: float | None = None) -> LabelProfile:
    """Build a label profile.

    balanced: every class gets max_count.
    mild: counts ramp linearly from max_count down to max_count / ratio
        (triangular shape; parameter = ratio, default 3).
    extreme: counts follow a Pareto rank law floor(max_count * (rank+1)^-alpha),
        clamped to at least 2 (parameter = alpha, default 1.5).
    rs_ut_target: the extreme profile; rs_ut_source: the same counts with the
        class order reversed, so source majorities are target minorities.
    """
    if kind not in PROFILE_KINDS:
        raise ValueError(f"unknown profile kind {kind!r}; expected one of {PROFILE_KINDS}")
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if max_count < num_classes:
        raise ValueError(f"max_count {max_count} must be >= num_classes {num_classes}")

    if kind == "balanced":
        counts = np.full(num_classes, max_count, dtype=np.int64)
    elif kind == "mild":
        ratio = 3.0 if parameter is None else float(parameter)
        if ratio < 1.0:
            raise ValueError(f"mild profile ratio must be >= 1, got {ratio}")
        low = max_count / ratio
        ramp = np.linspace(max_count, low, num_classes)
        counts = np.maximum(np.rint(ramp).astype(np.int64), 1)
    else:
        alpha = 1.5 if parameter is None else float(parameter)
        if alpha <= 0.0:
            raise ValueError(f"extreme profile alpha must be > 0, got {alpha}")
        ranks = np.arange(1, num_classes + 1, dtype=np.float64)
        counts = np.maximum(np.floor(max_count * ranks ** (-alpha)).astype(np.int64), 2)
        if kind == "rs_ut_source":
            counts = counts[::-1].copy()
    return LabelProfile(kind, counts)


@dataclass
class ShiftSpec:
    """Rigid covariate shift applied to the target conditionals.

    Points are generated in a 2-plane; the target transform is
    x -> scale * rotate(x, angle) + translation. An all-zero spec is the
    identity (null shift).
    """

    translation: tuple[float, float] = (0.0, 0.0)
    angle: float = 0.0  # radians, in the generating 2-plane
    scale: float = 1.0

    def __post_init__(self):
        vals = (*self.translation, self.angle, self.scale)
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"degenerate shift spec: {vals}")
        if self.scale <= 0:
            raise ValueError(f"shift scale must be > 0, got {self.scale}")

    def apply(self, points: np.ndarray) -> np.ndarray:
        c, s = np.cos(self.angle), np.sin(self.angle)
        rot = np.array([[c, -s], [s, c]])
        return self.scale * points @ rot.T + np.asarray(self.translation)

    @classmethod
    def identity(cls) -> "ShiftSpec":
        return cls()


@dataclass
class DomainPair:
    """Source dataset, unlabeled target dataset, and the hidden target labels.

    The hidden labels live outside the target dataset so that training code
    never sees them; they exist for evaluation and for the oracle sampler.
    """

    source: Dataset
    target: Dataset
    target_labels: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.target_labels = np.asarray(self.target_labels, dtype=np.int64)
        if len(self.target_labels) != len(self.target):
            raise ValueError("hidden target labels must cover the target dataset")


CIRCLE_RADIUS = 4.0
BLOB_SIGMA = 0.6


def generate_domain_pair(seed: int, num_classes: int, input_dim: int,
                         shift: ShiftSpec, source_profile: LabelProfile,
                         target_profile: LabelProfile,
                         radius: float = CIRCLE_RADIUS,
                         sigma: float = BLOB_SIGMA) -> DomainPair:
    """Sample a source/target pair of Gaussian-blob datasets.

    Class j's source blob is N(mean_j, sigma^2 I) with mean_j on a circle of
    the given radius; the target blob is the source blob pushed through the
    shift. When input_dim > 2 the 2-plane is embedded by a seeded random
    orthonormal map shared across domains.
    """
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if input_dim < 2:
        raise ValueError(f"input_dim must be >= 2, got {input_dim}")
    for name, profile in (("source", source_profile), ("target", target_profile)):
        if profile.num_classes != num_classes:
            raise ValueError(f"{name} profile covers {profile.num_classes} classes,"
                             f" expected {num_classes}")

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)

    def sample_domain(profile: LabelProfile, shifted: bool):
        points, labels = [], []
        for j in range(num_classes):
            n = int(profile.counts[j])
            blob = means[j] + sigma * rng.standard_normal((n, 2))
            if shifted:
                blob = shift.apply(blob)
            points.append(blob)
            labels.append(np.full(n, j, dtype=np.int64))
        return np.concatenate(points), np.concatenate(labels)

    xs, ys = sample_domain(source_profile, shifted=False)
    xt, yt = sample_domain(target_profile, shifted=True)

    if input_dim > 2:
        gauss = rng.standard_normal((input_dim, 2))
        embed, _ = np.linalg.qr(gauss)  # orthonormal columns
        xs = xs @ embed.T
        xt = xt @ embed.T

    params = {
        "seed": seed,
        "num_classes": num_classes,
        "input_dim": input_dim,
        "radius": radius,
        "sigma": sigma,
        "shift": {"translation": list(shift.translation), "angle": shift.angle,
                  "scale": shift.scale},
        "source_profile": {"kind": source_profile.kind,
                           "counts": source_profile.counts.tolist()},
        "target_profile": {"kind": target_profile.kind,
                           "counts": target_profile.counts.tolist()},
    }
    source = Dataset(xs, ys, SOURCE, num_classes)
    target = Dataset(xt, np.full(len(xt), UNLABELED), TARGET, num_classes)
    return DomainPair(source, target, yt, params)


# ---------------------------------------------------------------------------
# CSV round trip. Schema: header domain,label,f0,...,f{d-1}; floats printed
# with 17 significant digits so parsing recovers them exactly; unlabeled
# rows carry label -1.


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain", "label"] + [f"f{i}" for i in range(dataset.input_dim)])
        for x, y in zip(dataset.features, dataset.labels):
            writer.writerow([dataset.domain, int(y)] + [f"{v:.17g}" for v in x])


def load_dataset(path, num_classes: int | None = None) -> Dataset:
    path = Path(path)
    with path.open("r", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file, expected a dataset header")
    header = rows[0]
    if len(header) < 3 or header[:2] != ["domain", "label"]:
        raise ValueError(f"{path}: malformed header {header[:4]}")
    width = len(header) - 2
    if not rows[1:]:
        raise ValueError(f"{path}: no data rows")

    domains, labels, features = set(), [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width + 2:
            raise ValueError(f"{path}: row {lineno} has {len(row)} fields, expected {width + 2}")
        domains.add(row[0])
        try:
            label = int(row[1])
            feats = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise ValueError(f"{path}: row {lineno}: {exc}") from None
        if label < UNLABELED:
            raise ValueError(f"{path}: row {lineno}: label {label} below -1")
        if num_classes is not None and label >= num_classes:
            raise ValueError(
                f"{path}: row {lineno}: label {label} outside [0, {num_classes})")
        labels.append(label)
        features.append(feats)

    if len(domains) != 1:
        raise ValueError(f"{path}: mixed domain tags {sorted(domains)}")
    labels = np.array(labels, dtype=np.int64)
    inferred = num_classes if num_classes is not None else max(int(labels.max()) + 1, 2)
    return Dataset(np.array(features), labels, domains.pop(), inferred)


def save_labels(labels: np.ndarray, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"])
        for y in labels:
            writer.writerow([int(y)])


def load_labels(path) -> np.ndarray:
    path = Path(path)
    with path.open("r", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["label"]:
        raise ValueError(f"{path}: expected a label file with header 'label'")
    return np.array([int(r[0]) for r in rows[1:]], dtype=np.int64)


def write_pair(pair: DomainPair, out_dir) -> dict[str, str]:
    """Write source.csv, target.csv, target_labels.csv, and the sidecar manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "source": out / "source.csv",
        "target": out / "target.csv",
        "target_labels": out / "target_labels.csv",
        "manifest": out / "manifest.json",
    }
    save_dataset(pair.source, paths["source"])
    save_dataset(pair.target, paths["target"])
    save_labels(pair.target_labels, paths["target_labels"])
    paths["manifest"].write_text(json.dumps(pair.params, indent=2, sort_keys=True) + "\n")
    return {k: str(v) for k, v in paths.items()}


def load_pair(directory) -> DomainPair:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    num_classes = int(manifest["num_classes"])
    source = load_dataset(directory / "source.csv", num_classes)
    target = load_dataset(directory / "target.csv", num_classes)
    labels = load_labels(directory / "target_labels.csv")
    return DomainPair(source, target, labels, manifest)
