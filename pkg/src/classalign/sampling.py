"""Class-aligned minibatch construction driven by pseudo-labels.

The aligned sampler draws a set of classes from a pre-specified alignment
distribution, then fills both halves of the minibatch with examples of
exactly those classes: true labels index the source, cached pseudo-labels
index the target. Both halves therefore share one label multiset, which
is what removes class-misaligned divergence from the minibatch estimate.

Baseline samplers (uniform-random, source-balanced with a random target)
are provided for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ClassIndex, Dataset


class DegenerateCacheError(RuntimeError):
    """Raised when too few classes have nonempty target pseudo-buckets."""

    def __init__(self, live_classes: int, required: int, step: int | None = None):
        at = f" at step {step}" if step is not None else ""
        super().__init__(
            f"only {live_classes} classes have target examples under the current "
            f"pseudo-labels{at}, need at least {required}")
        self.live_classes = live_classes
        self.required = required
        self.step = step


@dataclass
class AlignmentDistribution:
    """Distribution p(y) over labels from which classes to align are drawn."""

    probabilities: np.ndarray

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        if (self.probabilities < 0).any():
            raise ValueError("alignment probabilities must be nonnegative")
        if abs(self.probabilities.sum() - 1.0) > 1e-12:
            raise ValueError(f"alignment probabilities sum to {self.probabilities.sum()}")

    @classmethod
    def uniform(cls, num_classes: int) -> "AlignmentDistribution":
        return cls(np.full(num_classes, 1.0 / num_classes))

    @property
    def num_classes(self) -> int:
        return len(self.probabilities)


@dataclass
class PseudoLabelCache:
    """Predicted labels for every target example, refreshed periodically."""

    labels: np.ndarray
    step: int = 0
    refresh_period: int = 20

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)

    def due(self, step: int) -> bool:
        return step % self.refresh_period == 0

    def accuracy_against(self, hidden_labels: np.ndarray) -> float:
        return float(np.mean(self.labels == np.asarray(hidden_labels)))


def refresh_pseudo_labels(model, target: Dataset, step: int,
                          refresh_period: int = 20) -> tuple[PseudoLabelCache, ClassIndex]:
    """Predict a label for every target example and rebuild the class index."""
    labels = model.predict_label(target.features)
    cache = PseudoLabelCache(labels, step=step, refresh_period=refresh_period)
    return cache, ClassIndex(labels, target.num_classes)


@dataclass
class AlignedMinibatch:
    """Paired source/target batch sharing one sampled label multiset.

    ``mask`` is a 0/1 vector over the label space with ones exactly at the
    sampled classes; baseline samplers emit an all-ones mask. ``degraded``
    marks batches where fewer classes than requested were available.
    """

    source_features: np.ndarray
    source_labels: np.ndarray
    target_features: np.ndarray
    target_pseudo_labels: np.ndarray
    classes: np.ndarray
    mask: np.ndarray
    degraded: bool = False
    source_indices: np.ndarray = field(default=None, repr=False)
    target_indices: np.ndarray = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return len(self.source_features)

    def source_diversity(self) -> int:
        return len(np.unique(self.source_labels))


def sample_classes(p_y: AlignmentDistribution, n: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Draw n distinct labels, sequentially proportional to the remaining mass."""
    probs = p_y.probabilities.copy()
    support = int(np.count_nonzero(probs))
    if n > support:
        raise ValueError(f"cannot draw {n} unique classes from a support of {support}")
    drawn = []
    for _ in range(n):
        drawn.append(int(rng.choice(len(probs), p=probs / probs.sum())))
        probs[drawn[-1]] = 0.0
    return np.array(drawn, dtype=np.int64)


def _draw_from_bucket(bucket: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    # keep batch geometry constant: fall back to replacement on small buckets
    replace = len(bucket) < k
    return rng.choice(bucket, size=k, replace=replace)


def build_aligned_minibatch(source: Dataset, source_index: ClassIndex,
                            target: Dataset, target_index: ClassIndex,
                            pseudo_labels: np.ndarray,
                            p_y: AlignmentDistribution, n_classes: int,
                            per_class: int, rng: np.random.Generator,
                            min_classes: int = 1) -> AlignedMinibatch:
    """Build one class-aligned minibatch of n_classes * per_class examples per side.

    Classes whose target pseudo-bucket is empty are rejected and redrawn from
    the remaining alignment mass. If fewer than n_classes live classes exist
    the batch is built over all of them and flagged degraded; below
    min_classes a DegenerateCacheError is raised instead of ever emitting a
    misaligned batch.
    """
    probs = p_y.probabilities.copy()
    chosen: list[int] = []
    while len(chosen) < n_classes:
        remaining = probs.sum()
        if remaining <= 0.0:
            break
        label = int(rng.choice(len(probs), p=probs / remaining))
        probs[label] = 0.0
        if len(target_index.bucket(label)) == 0:
            continue  # reject and redraw from the remaining mass
        if len(source_index.bucket(label)) == 0:
            raise ValueError(f"source bucket for class {label} is empty")
        chosen.append(label)

    if len(chosen) < min_classes:
        raise DegenerateCacheError(len(chosen), min_classes)
    degraded = len(chosen) < n_classes

    src_idx, tgt_idx = [], []
    for label in chosen:
        src_idx.append(_draw_from_bucket(source_index.bucket(label), per_class, rng))
        tgt_idx.append(_draw_from_bucket(target_index.bucket(label), per_class, rng))
    src_idx = np.concatenate(src_idx)
    tgt_idx = np.concatenate(tgt_idx)

    mask = np.zeros(p_y.num_classes, dtype=np.int8)
    mask[chosen] = 1
    return AlignedMinibatch(
        source_features=source.features[src_idx],
        source_labels=source.labels[src_idx],
        target_features=target.features[tgt_idx],
        target_pseudo_labels=np.asarray(pseudo_labels)[tgt_idx],
        classes=np.array(chosen, dtype=np.int64),
        mask=mask,
        degraded=degraded,
        source_indices=src_idx,
        target_indices=tgt_idx,
    )


def random_batch(dataset: Dataset, m: int, rng: np.random.Generator):
    """m examples drawn uniformly with replacement; returns (features, labels, indices)."""
    if len(dataset) == 0:
        raise ValueError("cannot sample from an empty dataset")
    idx = rng.integers(0, len(dataset), size=m)
    return dataset.features[idx], dataset.labels[idx], idx


def random_pair_batch(source: Dataset, target: Dataset, m: int,
                      rng: np.random.Generator) -> AlignedMinibatch:
    """Uniform-random batch for both domains with an all-ones mask."""
    xs, ys, si = random_batch(source, m, rng)
    xt, yt, ti = random_batch(target, m, rng)
    return AlignedMinibatch(xs, ys, xt, yt, classes=np.unique(ys),
                            mask=np.ones(source.num_classes, dtype=np.int8),
                            source_indices=si, target_indices=ti)


def source_balanced_batch(source: Dataset, source_index: ClassIndex,
                          target: Dataset, p_y: AlignmentDistribution,
                          n_classes: int, per_class: int,
                          rng: np.random.Generator) -> AlignedMinibatch:
    """Class-balanced source half, uniform-random target half, all-ones mask."""
    chosen = sample_classes(p_y, n_classes, rng)
    src_idx = np.concatenate(
        [_draw_from_bucket(source_index.bucket(int(c)), per_class, rng) for c in chosen])
    xt, yt, ti = random_batch(target, n_classes * per_class, rng)
    return AlignedMinibatch(
        source_features=source.features[src_idx],
        source_labels=source.labels[src_idx],
        target_features=xt,
        target_pseudo_labels=yt,
        classes=chosen,
        mask=np.ones(source.num_classes, dtype=np.int8),
        source_indices=src_idx,
        target_indices=ti,
    )


def expected_diversity(n: int, k: int) -> float:
    """Expected number of unique classes in k uniform draws over n classes."""
    return n * (1.0 - ((n - 1.0) / n) ** k)


def check_alignment_invariant(batch: AlignedMinibatch) -> None:
    """Assert the multiset-equality and mask invariants; raises on violation."""
    src = np.sort(batch.source_labels)
    tgt = np.sort(batch.target_pseudo_labels)
    if not np.array_equal(src, tgt):
        raise AssertionError(
            f"aligned batch invariant violated: source labels {src} vs "
            f"target pseudo-labels {tgt}")
    if len(batch.source_features) != len(batch.target_features):
        raise AssertionError("aligned batch halves differ in size")
    if int(batch.mask.sum()) != len(batch.classes):
        raise AssertionError(
            f"mask has {int(batch.mask.sum())} ones but {len(batch.classes)} classes")
