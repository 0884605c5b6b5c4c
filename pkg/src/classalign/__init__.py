"""Class-conditioned minibatch alignment for unsupervised domain adaptation.

A numpy library for studying how minibatch composition shapes empirical
domain divergence: class-aligned sampling driven by pseudo-labels, masked
classifier-disparity and domain-adversarial objectives, and an exact
divergence lab that decomposes every minibatch estimate into its
class-aligned and class-misaligned parts.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, gradient_reversal, no_grad
from .data import (ClassIndex, Dataset, DomainPair, LabelProfile, ShiftSpec,
                   generate_domain_pair, load_dataset, load_pair, make_profile,
                   save_dataset, write_pair)
from .divergence import (DivergenceReport, HypothesisClass, LabeledBatchPair,
                         empirical_divergence, label_set_family, partition,
                         shortcut_gap, threshold_stump_family)
from .metrics import EvalMetrics, confusion_matrix, evaluate_predictions
from .nn import (AdaptationModel, ModelConfig, Sgd, SgdConfig, build_model,
                 load_checkpoint, save_checkpoint)
from .objectives import (PrototypeBank, TransferLossConfig, dann_loss,
                         explicit_prototype_loss, mdd_discrepancy,
                         source_classification_loss, total_step_loss)
from .sampling import (AlignedMinibatch, AlignmentDistribution,
                       DegenerateCacheError, PseudoLabelCache,
                       build_aligned_minibatch, expected_diversity,
                       random_batch, random_pair_batch, refresh_pseudo_labels,
                       sample_classes, source_balanced_batch)
from .training import (MetricsRecord, TrainConfig, TrainResult, ablate,
                       evaluate_model, grl_coefficient, train)

__all__ = [name for name in dir() if not name.startswith("_")]
