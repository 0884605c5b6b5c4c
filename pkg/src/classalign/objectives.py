"""Training objectives: supervised source loss, domain-adversarial loss,
masked classifier-disparity loss, and the explicit prototype baseline.

All adversarial objectives are wired for single-backward minimax: the
adversarial head (domain discriminator, or auxiliary classifier) descends
its own surrogate directly, while the gradient-reversal node between it
and the features hands the extractor the opposing pressure. One descent
step on the returned scalar therefore trains both sides of the game.

Masking restricts every softmax in the disparity loss to the classes
sampled for the current minibatch (excluded logits get no probability
mass), which removes the shortcut of encoding domain identity in classes
present on only one side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, gradient_reversal
from .nn import AdaptationModel, argmax_labels

OBJECTIVE_KINDS = ("dann", "mdd", "mdd_masked", "explicit_prototype")
PROTOTYPE_VARIANTS = ("basic", "moving_avg", "curriculum")


@dataclass
class TransferLossConfig:
    """Which transfer term to add to the source loss, and its knobs."""

    kind: str = "mdd_masked"
    eta: float = 1.0             # trade-off weight on the transfer term
    gamma: float = 4.0           # margin factor on the source disparity term
    prototype_variant: str = "basic"
    ema_decay: float = 0.7
    curriculum_start: float = 0.5
    curriculum_end: float = 0.9

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.gamma < 1:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        if self.prototype_variant not in PROTOTYPE_VARIANTS:
            raise ValueError(f"unknown prototype variant {self.prototype_variant!r}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must be in [0, 1), got {self.ema_decay}")
        for tau in (self.curriculum_start, self.curriculum_end):
            if not 0.0 <= tau <= 1.0:
                raise ValueError(f"curriculum threshold {tau} outside [0, 1]")


def source_classification_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy on the labeled source half."""
    return ad.cross_entropy(logits, labels)


def dann_loss(z_source: Tensor, z_target: Tensor, discriminator,
              coefficient: float) -> Tensor:
    """Binary domain-discrimination loss over both halves (source = 1).

    Features pass through gradient reversal before the discriminator, so
    minimizing the returned scalar trains the discriminator while the
    extractor is pushed to confuse it, scaled by the coefficient.
    """
    if z_source.shape[0] == 0 or z_target.shape[0] == 0:
        raise ValueError("dann_loss: both halves must be nonempty")
    logit_s = discriminator(gradient_reversal(z_source, coefficient))
    logit_t = discriminator(gradient_reversal(z_target, coefficient))
    bce_s = ad.binary_cross_entropy_with_logits(logit_s, np.ones(logit_s.shape))
    bce_t = ad.binary_cross_entropy_with_logits(logit_t, np.zeros(logit_t.shape))
    total = ad.tensor_sum(bce_s) + ad.tensor_sum(bce_t)
    return total / (z_source.shape[0] + z_target.shape[0])


def _support(mask: np.ndarray | None, num_classes: int) -> np.ndarray:
    if mask is None:
        return np.ones(num_classes, dtype=bool)
    support = np.asarray(mask).astype(bool)
    if support.shape != (num_classes,):
        raise ValueError(f"mask shape {support.shape} vs {num_classes} classes")
    if not support.any():
        raise ValueError("mask excludes every class")
    return support


def masked_argmax(logits: np.ndarray, support: np.ndarray) -> np.ndarray:
    masked = np.where(support, logits, -np.inf)
    return argmax_labels(masked)


def masked_probabilities(logits: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    """Softmax restricted to the mask's support; excluded classes get zero mass."""
    logits = np.asarray(logits, dtype=np.float64)
    support = _support(mask, logits.shape[1])
    shifted = np.where(support, logits, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.where(support, np.exp(shifted), 0.0)
    return e / e.sum(axis=1, keepdims=True)


def masked_log_prob_at(logits: Tensor, support: np.ndarray,
                       columns: np.ndarray) -> Tensor:
    """Per-row log probability of the given class under the masked softmax."""
    return ad.take_per_row(logits, columns) - ad.logsumexp(logits, mask=support)


def masked_log_complement_at(logits: Tensor, support: np.ndarray,
                             columns: np.ndarray) -> Tensor:
    """Per-row log(1 - p(class)) under the masked softmax, computed in logit
    space so probabilities saturating at 1 stay finite."""
    m = logits.shape[0]
    rest = np.broadcast_to(support, (m, len(support))).copy()
    rest[np.arange(m), columns] = False
    if not rest.any(axis=1).all():
        raise ValueError(
            "masked support smaller than two classes: complement term undefined")
    return ad.logsumexp(logits, mask=rest) - ad.logsumexp(logits, mask=support)


def mdd_discrepancy(class_logits_source: Tensor, aux_logits_source: Tensor,
                    class_logits_target: Tensor, aux_logits_target: Tensor,
                    gamma: float, mask: np.ndarray | None = None) -> Tensor:
    """Margin disparity between the auxiliary and main classifiers.

    Per-example anchors are the main classifier's (masked) argmax labels.
    The value is mean_target[-log(1 - p_aux(anchor))] plus gamma times
    mean_source[-log p_aux(anchor)]: the auxiliary head's surrogate for
    maximizing the domain disparity. Driving it down makes the head track
    the anchors on source while contradicting them on target; the
    extractor receives the opposite pressure through the reversal. An
    all-ones mask reproduces the unmasked value exactly.
    """
    num_classes = class_logits_source.shape[1]
    support = _support(mask, num_classes)
    anchor_s = masked_argmax(class_logits_source.values, support)
    anchor_t = masked_argmax(class_logits_target.values, support)
    source_term = -ad.mean(masked_log_prob_at(aux_logits_source, support, anchor_s))
    target_term = -ad.mean(masked_log_complement_at(aux_logits_target, support, anchor_t))
    return target_term + float(gamma) * source_term


class PrototypeBank:
    """Per-domain, per-class mean representations with EMA state."""

    def __init__(self, num_classes: int, feature_dim: int, ema_decay: float = 0.7):
        self.num_classes = num_classes
        self.ema_decay = ema_decay
        self.prototypes = {
            "source": np.zeros((num_classes, feature_dim)),
            "target": np.zeros((num_classes, feature_dim)),
        }
        self.seen = {
            "source": np.zeros(num_classes, dtype=bool),
            "target": np.zeros(num_classes, dtype=bool),
        }

    def ema_update(self, domain: str, label: int, batch_mean: Tensor) -> Tensor:
        """Fold a batch mean into the stored prototype; returns the updated
        prototype as a tensor whose gradient flows only through the batch."""
        if self.seen[domain][label]:
            old = self.prototypes[domain][label]
            updated = ad.add(self.ema_decay * old, (1.0 - self.ema_decay) * batch_mean)
        else:
            updated = batch_mean
        self.prototypes[domain][label] = updated.values
        self.seen[domain][label] = True
        return updated


def _class_mean(z: Tensor, rows: np.ndarray) -> Tensor:
    return ad.mean(z[rows], axis=0)


def explicit_prototype_loss(z_source: Tensor, labels_source: np.ndarray,
                            z_target: Tensor, pseudo_labels_target: np.ndarray,
                            variant: str = "basic",
                            bank: PrototypeBank | None = None,
                            target_confidence: np.ndarray | None = None,
                            threshold: float = 0.0) -> tuple[Tensor, list[int]]:
    """Squared Euclidean distance between per-class prototypes of the two halves.

    basic compares batch means; moving_avg compares EMA prototypes after
    folding in the batch; curriculum drops target examples whose confidence
    falls below the threshold. Returns (loss, shared class list); with no
    shared class the loss is zero and the list empty.
    """
    labels_source = np.asarray(labels_source)
    pseudo = np.asarray(pseudo_labels_target)
    if variant not in PROTOTYPE_VARIANTS:
        raise ValueError(f"unknown prototype variant {variant!r}")
    if variant == "moving_avg" and bank is None:
        raise ValueError("moving_avg variant needs a PrototypeBank")

    keep_t = np.ones(len(pseudo), dtype=bool)
    if variant == "curriculum":
        if target_confidence is None:
            raise ValueError("curriculum variant needs target confidences")
        keep_t = np.asarray(target_confidence) >= threshold

    shared = sorted(set(labels_source.tolist())
                    & set(pseudo[keep_t].tolist()))
    if not shared:
        return Tensor(0.0), []

    loss = Tensor(0.0)
    for label in shared:
        mean_s = _class_mean(z_source, np.flatnonzero(labels_source == label))
        mean_t = _class_mean(z_target, np.flatnonzero(keep_t & (pseudo == label)))
        if variant == "moving_avg":
            mean_s = bank.ema_update("source", label, mean_s)
            mean_t = bank.ema_update("target", label, mean_t)
        diff = mean_s - mean_t
        loss = loss + ad.tensor_sum(diff * diff)
    return loss, shared


@dataclass
class StepLoss:
    total: Tensor
    components: dict


def total_step_loss(model: AdaptationModel, batch, config: TransferLossConfig,
                    grl_coefficient: float, bank: PrototypeBank | None = None,
                    progress: float = 0.0) -> StepLoss:
    """One scalar realizing the minimax step for the configured objective.

    Descending it trains the extractor and main classifier on the source
    loss plus eta times the transfer term, while the adversarial part
    (discriminator, or auxiliary classifier) moves toward its own optimum
    through the reversal wiring.
    """
    z_s = model.features(batch.source_features)
    logits_s = model.classifier(z_s)
    src_loss = source_classification_loss(logits_s, batch.source_labels)
    components = {"source_loss": src_loss.item()}

    if config.eta == 0.0:
        return StepLoss(src_loss, components)

    z_t = model.features(batch.target_features)
    kind = config.kind
    if kind == "dann":
        transfer = dann_loss(z_s, z_t, model.discriminator, grl_coefficient)
        total = src_loss + config.eta * transfer
    elif kind in ("mdd", "mdd_masked"):
        mask = batch.mask if kind == "mdd_masked" else None
        aux_s = model.auxiliary(gradient_reversal(z_s, grl_coefficient))
        aux_t = model.auxiliary(gradient_reversal(z_t, grl_coefficient))
        logits_t = model.classifier(z_t)
        transfer = mdd_discrepancy(logits_s, aux_s, logits_t, aux_t,
                                   config.gamma, mask)
        # descending this surrogate trains the auxiliary head toward maximal
        # domain disparity (agree with the anchors on source, disagree on
        # target); the reversal hands the extractor the opposite pressure
        total = src_loss + config.eta * transfer
    else:
        pseudo = np.asarray(batch.target_pseudo_labels)
        if (pseudo < 0).any():  # batch from a sampler that carries no cache
            with ad.no_grad():
                pseudo = argmax_labels(model.classifier(z_t).values)
        confidence = None
        threshold = 0.0
        if config.prototype_variant == "curriculum":
            with ad.no_grad():
                confidence = ad.softmax(model.classifier(z_t)).values.max(axis=1)
            threshold = (config.curriculum_start
                         + (config.curriculum_end - config.curriculum_start)
                         * float(np.clip(progress, 0.0, 1.0)))
        transfer, shared = explicit_prototype_loss(
            z_s, batch.source_labels, z_t, pseudo,
            variant=config.prototype_variant, bank=bank,
            target_confidence=confidence, threshold=threshold)
        components["shared_classes"] = len(shared)
        total = src_loss + config.eta * transfer

    components["transfer_loss"] = transfer.item()
    return StepLoss(total, components)
