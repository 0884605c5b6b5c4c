"""Exact minibatch domain-divergence estimation over finite hypothesis classes.

The divergence of a batch pair is the supremum, over ordered hypothesis
pairs (h, h'), of the absolute difference between the two domains'
disagreement counts. Because the hypothesis class is finite and
enumerable, the supremum is computed exactly, and each value splits
exactly into a class-aligned part (examples whose labels appear in both
halves) and a class-misaligned part (examples whose labels appear in one
half only). Label-oracle hypotheses make the domain-discriminator
shortcut constructive: on a fully misaligned pair, thresholding on the
target-only label set against the constant hypothesis attains the
maximal value.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

DEFAULT_HYPOTHESIS_CAP = 512


@dataclass
class LabeledBatchPair:
    """Equal-size source/target batches with labels attached for analysis.

    Labels may be ground truth or pseudo-labels; the lab only needs a label
    column to partition on.
    """

    source_features: np.ndarray
    source_labels: np.ndarray
    target_features: np.ndarray
    target_labels: np.ndarray

    def __post_init__(self):
        self.source_labels = np.asarray(self.source_labels, dtype=np.int64)
        self.target_labels = np.asarray(self.target_labels, dtype=np.int64)
        if len(self.source_features) != len(self.target_features):
            raise ValueError(
                f"batch pair halves differ: {len(self.source_features)} vs "
                f"{len(self.target_features)}")
        if (self.source_labels < 0).any() or (self.target_labels < 0).any():
            raise ValueError("batch pair needs labels on every example")

    @property
    def batch_size(self) -> int:
        return len(self.source_features)


@dataclass
class LabelPartition:
    """Shared / source-only / target-only label sets and the example masks
    they induce on each half."""

    shared: np.ndarray
    source_only: np.ndarray
    target_only: np.ndarray
    source_aligned: np.ndarray    # boolean masks over examples
    source_misaligned: np.ndarray
    target_aligned: np.ndarray
    target_misaligned: np.ndarray


def partition(pair: LabeledBatchPair) -> LabelPartition:
    labels_s = np.unique(pair.source_labels)
    labels_t = np.unique(pair.target_labels)
    shared = np.intersect1d(labels_s, labels_t)
    src_aligned = np.isin(pair.source_labels, shared)
    tgt_aligned = np.isin(pair.target_labels, shared)
    return LabelPartition(
        shared=shared,
        source_only=np.setdiff1d(labels_s, shared),
        target_only=np.setdiff1d(labels_t, shared),
        source_aligned=src_aligned,
        source_misaligned=~src_aligned,
        target_aligned=tgt_aligned,
        target_misaligned=~tgt_aligned,
    )


class Hypothesis:
    """Binary predictor evaluated on (features, labels) columns of a batch.

    Most hypotheses only look at features; label-oracle hypotheses consult
    the label column, which operationalizes shortcut functions that infer
    domain from class membership without any trained model.
    """

    name = "hypothesis"

    def predict(self, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self):
        return self.name


class ConstantHypothesis(Hypothesis):
    def __init__(self, value: int):
        self.value = int(value)
        self.name = f"const[{self.value}]"

    def predict(self, features, labels):
        return np.full(len(features), self.value, dtype=np.uint8)


class ThresholdStump(Hypothesis):
    """1 when the chosen coordinate exceeds the threshold (or the reverse)."""

    def __init__(self, dim: int, threshold: float, above: bool = True):
        self.dim = dim
        self.threshold = float(threshold)
        self.above = above
        op = ">" if above else "<="
        self.name = f"stump[x{dim} {op} {threshold:.4g}]"

    def predict(self, features, labels):
        hit = features[:, self.dim] > self.threshold
        return (hit if self.above else ~hit).astype(np.uint8)


class LabelSetHypothesis(Hypothesis):
    """1 exactly when the example's label belongs to a fixed subset."""

    def __init__(self, label_subset: Iterable[int]):
        self.label_subset = np.array(sorted(set(int(v) for v in label_subset)),
                                     dtype=np.int64)
        self.name = f"labels{self.label_subset.tolist()}"

    def predict(self, features, labels):
        return np.isin(labels, self.label_subset).astype(np.uint8)


class FunctionHypothesis(Hypothesis):
    """Arbitrary user rule, e.g. a lookup table wrapped in a callable."""

    def __init__(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray], name: str):
        self.fn = fn
        self.name = name

    def predict(self, features, labels):
        return np.asarray(self.fn(features, labels), dtype=np.uint8)


class HypothesisClass:
    """Deterministically ordered finite set of hypotheses, capped so the
    exact pair enumeration stays tractable."""

    def __init__(self, hypotheses: list[Hypothesis], cap: int = DEFAULT_HYPOTHESIS_CAP):
        if len(hypotheses) > cap:
            raise ValueError(f"hypothesis class of {len(hypotheses)} exceeds cap {cap}")
        if not hypotheses:
            raise ValueError("hypothesis class is empty")
        self.hypotheses = list(hypotheses)

    def __len__(self):
        return len(self.hypotheses)

    def __getitem__(self, i):
        return self.hypotheses[i]

    def prediction_matrix(self, features, labels) -> np.ndarray:
        return np.stack([h.predict(features, labels) for h in self.hypotheses])


def threshold_stump_family(features: np.ndarray, per_dim: int = 8,
                           dims: Iterable[int] | None = None,
                           include_constants: bool = True,
                           cap: int = DEFAULT_HYPOTHESIS_CAP) -> HypothesisClass:
    """Axis-threshold stumps on per-dimension quantile grids of the data."""
    features = np.asarray(features)
    dims = range(features.shape[1]) if dims is None else dims
    hypotheses: list[Hypothesis] = []
    if include_constants:
        hypotheses += [ConstantHypothesis(0), ConstantHypothesis(1)]
    quantiles = np.linspace(0.0, 1.0, per_dim + 2)[1:-1]
    for dim in dims:
        for t in np.quantile(features[:, dim], quantiles):
            hypotheses.append(ThresholdStump(dim, t, above=True))
    return HypothesisClass(hypotheses, cap=cap)


def label_set_family(label_space: Iterable[int], max_subset_size: int | None = None,
                     cap: int = DEFAULT_HYPOTHESIS_CAP) -> HypothesisClass:
    """All label-subset oracles over a small label space (plus the constants,
    which are the empty and full subsets)."""
    labels = sorted(set(int(v) for v in label_space))
    top = len(labels) if max_subset_size is None else min(max_subset_size, len(labels))
    hypotheses: list[Hypothesis] = [ConstantHypothesis(0)]
    for size in range(1, top + 1):
        for subset in itertools.combinations(labels, size):
            hypotheses.append(LabelSetHypothesis(subset))
    return HypothesisClass(hypotheses, cap=cap)


@dataclass
class DivergenceReport:
    """Exact divergence of one batch pair with its decomposition."""

    divergence: int                 # unnormalized, the supremum itself
    normalized: float               # divided by the batch size
    aligned_term: int               # shared-label part at the maximizing pair
    misaligned_term: int            # one-sided-label part at the maximizing pair
    best_pair: tuple[int, int]
    best_pair_names: tuple[str, str]
    batch_size: int
    shared_labels: int
    source_only_labels: int
    target_only_labels: int

    def to_dict(self) -> dict:
        return {
            "divergence": self.divergence,
            "normalized": self.normalized,
            "aligned_term": self.aligned_term,
            "misaligned_term": self.misaligned_term,
            "best_pair": list(self.best_pair),
            "best_pair_names": list(self.best_pair_names),
            "batch_size": self.batch_size,
            "shared_labels": self.shared_labels,
            "source_only_labels": self.source_only_labels,
            "target_only_labels": self.target_only_labels,
        }


def divergence_terms(pair: LabeledBatchPair, part: LabelPartition,
                     h: Hypothesis, h_prime: Hypothesis) -> tuple[int, int]:
    """Aligned and misaligned disagreement-difference terms for one pair.

    aligned = (target disagreements on shared labels) - (source ditto);
    misaligned = the same difference on the one-sided labels. Their sum is
    the full batch-level difference for (h, h').
    """
    dis_s = h.predict(pair.source_features, pair.source_labels) \
        != h_prime.predict(pair.source_features, pair.source_labels)
    dis_t = h.predict(pair.target_features, pair.target_labels) \
        != h_prime.predict(pair.target_features, pair.target_labels)
    aligned = int(dis_t[part.target_aligned].sum()) - int(dis_s[part.source_aligned].sum())
    misaligned = (int(dis_t[part.target_misaligned].sum())
                  - int(dis_s[part.source_misaligned].sum()))
    return aligned, misaligned


def _pairwise_disagreements(predictions: np.ndarray) -> np.ndarray:
    # counts[i, j] = examples where hypothesis i and j differ; exact in
    # float64 because counts are small integers
    p = predictions.astype(np.float64)
    q = 1.0 - p
    return np.rint(p @ q.T + q @ p.T).astype(np.int64)


def empirical_divergence(pair: LabeledBatchPair,
                         hypothesis_class: HypothesisClass) -> DivergenceReport:
    """Exact supremum of |target disagreements - source disagreements| over
    all ordered hypothesis pairs, with the decomposition at the argmax.

    Ties resolve to the lexicographically smallest index pair.
    """
    preds_s = hypothesis_class.prediction_matrix(pair.source_features, pair.source_labels)
    preds_t = hypothesis_class.prediction_matrix(pair.target_features, pair.target_labels)
    diff = _pairwise_disagreements(preds_t) - _pairwise_disagreements(preds_s)
    absdiff = np.abs(diff)
    flat = int(np.argmax(absdiff))  # first occurrence, row-major: lexicographic
    i, j = divmod(flat, absdiff.shape[1])
    part = partition(pair)
    aligned, misaligned = divergence_terms(pair, part, hypothesis_class[i],
                                           hypothesis_class[j])
    value = int(absdiff[i, j])
    assert abs(aligned + misaligned) == value
    return DivergenceReport(
        divergence=value,
        normalized=value / pair.batch_size,
        aligned_term=aligned,
        misaligned_term=misaligned,
        best_pair=(i, j),
        best_pair_names=(hypothesis_class[i].name, hypothesis_class[j].name),
        batch_size=pair.batch_size,
        shared_labels=len(part.shared),
        source_only_labels=len(part.source_only),
        target_only_labels=len(part.target_only),
    )


def misaligned_supremum(pair: LabeledBatchPair,
                        hypothesis_class: HypothesisClass) -> int:
    """Largest |misaligned term| over all ordered hypothesis pairs."""
    part = partition(pair)
    best = 0
    for h, hp in itertools.product(hypothesis_class.hypotheses, repeat=2):
        _, misaligned = divergence_terms(pair, part, h, hp)
        best = max(best, abs(misaligned))
    return best


@dataclass
class SamplerComparison:
    """Divergence statistics of two samplers on matched batch draws."""

    random_divergences: np.ndarray
    aligned_divergences: np.ndarray
    random_misaligned: np.ndarray
    aligned_misaligned: np.ndarray

    @property
    def mean_random(self) -> float:
        return float(self.random_divergences.mean())

    @property
    def mean_aligned(self) -> float:
        return float(self.aligned_divergences.mean())


def shortcut_gap(random_pairs: list[LabeledBatchPair],
                 aligned_pairs: list[LabeledBatchPair],
                 hypothesis_class: HypothesisClass) -> SamplerComparison:
    """Compare the exact divergence of batches from two samplers.

    Under oracle labels an aligned pair has no one-sided labels, so its
    misaligned term is identically zero and the shortcut has nothing to
    exploit.
    """
    def run(pairs):
        reports = [empirical_divergence(p, hypothesis_class) for p in pairs]
        return (np.array([r.divergence for r in reports]),
                np.array([r.misaligned_term for r in reports]))

    rand_d, rand_m = run(random_pairs)
    alig_d, alig_m = run(aligned_pairs)
    return SamplerComparison(rand_d, alig_d, rand_m, alig_m)


def batch_pair_from_minibatch(batch, target_true_labels: np.ndarray) -> LabeledBatchPair:
    """Attach ground-truth target labels to a sampled minibatch for analysis."""
    labels = np.asarray(target_true_labels)[batch.target_indices]
    return LabeledBatchPair(batch.source_features, batch.source_labels,
                            batch.target_features, labels)
