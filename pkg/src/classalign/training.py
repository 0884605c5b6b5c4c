"""Minimax training loop, schedules, evaluation, and ablation grids.

Training sees source labels only; the hidden target labels ride along in
the domain pair's evaluation channel and are read exclusively by
evaluation, the pseudo-label accuracy probe, and the oracle sampler.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .data import ClassIndex, DomainPair
from .divergence import (batch_pair_from_minibatch, empirical_divergence,
                         label_set_family)
from .metrics import EvalMetrics, evaluate_predictions
from .nn import AdaptationModel, ModelConfig, Sgd, SgdConfig
from .objectives import PrototypeBank, TransferLossConfig, total_step_loss
from .sampling import (AlignmentDistribution, DegenerateCacheError,
                       PseudoLabelCache, build_aligned_minibatch,
                       check_alignment_invariant, random_pair_batch,
                       refresh_pseudo_labels, source_balanced_batch)

SAMPLER_KINDS = ("random", "source_balanced", "aligned", "aligned_oracle")


class ConfigError(ValueError):
    """All validation failures of a training config, not just the first."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid config: " + "; ".join(problems))
        self.problems = problems


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, components: dict):
        super().__init__(f"non-finite loss at step {step}: {components}")
        self.step = step
        self.components = components


def grl_coefficient(step: int) -> float:
    """Adversarial strength schedule: 0 at step 0, saturating below 0.1."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    return 0.2 / (1.0 + np.exp(-step / 1000.0)) - 0.1


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent, named random stream derived from one master seed."""
    key = int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


@dataclass
class TrainConfig:
    steps: int = 5000
    sampler: str = "aligned"
    n_classes: int | None = None      # classes per batch; defaults to |label space|
    per_class: int = 1
    batch_size: int | None = None     # flat size for the random sampler
    refresh_period: int = 20
    eval_period: int = 500
    seed: int = 0
    min_classes: int = 1
    divergence_probe: bool = False
    objective: TransferLossConfig = field(default_factory=TransferLossConfig)
    optimizer: SgdConfig = field(default_factory=SgdConfig)
    hidden_dims: tuple[int, ...] = (128, 128)
    feature_dim: int = 64
    head_hidden_dim: int = 64

    def resolved(self, num_classes: int) -> "TrainConfig":
        cfg = replace(self)
        if cfg.n_classes is None:
            cfg.n_classes = num_classes
        if cfg.batch_size is None:
            cfg.batch_size = cfg.n_classes * cfg.per_class
        return cfg

    def validate(self, num_classes: int) -> list[str]:
        problems = []
        if self.steps <= 0:
            problems.append(f"steps must be positive, got {self.steps}")
        if self.sampler not in SAMPLER_KINDS:
            problems.append(f"unknown sampler {self.sampler!r}")
        if self.n_classes is not None and not 1 <= self.n_classes <= num_classes:
            problems.append(
                f"n_classes {self.n_classes} outside [1, {num_classes}]")
        if self.per_class <= 0:
            problems.append(f"per_class must be positive, got {self.per_class}")
        if self.batch_size is not None and self.batch_size <= 0:
            problems.append(f"batch_size must be positive, got {self.batch_size}")
        if self.refresh_period <= 0:
            problems.append(f"refresh_period must be positive, got {self.refresh_period}")
        if self.eval_period <= 0:
            problems.append(f"eval_period must be positive, got {self.eval_period}")
        if self.min_classes <= 0:
            problems.append(f"min_classes must be positive, got {self.min_classes}")
        if (self.objective.kind == "mdd_masked"
                and self.sampler not in ("aligned", "aligned_oracle")):
            # legal, but the mask degenerates to all-ones for baseline samplers
            pass
        return problems


@dataclass
class MetricsRecord:
    step: int
    grl: float
    source_accuracy: float
    target_accuracy: float
    target_per_class_accuracy: float
    target_macro_f1: float
    target_weighted_f1: float
    target_macro_precision: float
    target_weighted_precision: float
    target_macro_recall: float
    target_weighted_recall: float
    target_absent_classes: int
    pseudo_label_accuracy: float | None
    mean_batch_diversity: float
    degraded_batches: int
    mean_source_loss: float
    mean_transfer_loss: float | None
    mask_fallback_batches: int = 0
    bootstrap_batches: int = 0
    divergence_probe: dict | None = None

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class TrainResult:
    model: AdaptationModel
    records: list[MetricsRecord]
    config: TrainConfig

    @property
    def final(self) -> MetricsRecord:
        return self.records[-1]


def evaluate_model(model: AdaptationModel, features: np.ndarray,
                   labels: np.ndarray, num_classes: int) -> EvalMetrics:
    """Confusion-matrix metrics of the model's predictions on labeled data."""
    predictions = model.predict_label(features)
    return evaluate_predictions(labels, predictions, num_classes)


def _probe_divergence(pair: DomainPair, src_index, rng, p_y, cfg) -> dict:
    num_classes = pair.source.num_classes
    if 2 ** num_classes + 1 > 256:
        return {"skipped": f"label space of {num_classes} too large for the probe"}
    hclass = label_set_family(range(num_classes), cap=257)
    oracle_index = ClassIndex(pair.target_labels, num_classes)
    aligned = build_aligned_minibatch(
        pair.source, src_index, pair.target, oracle_index, pair.target_labels,
        p_y, cfg.n_classes, cfg.per_class, rng, min_classes=cfg.min_classes)
    random_b = random_pair_batch(pair.source, pair.target, aligned.size, rng)
    rep_a = empirical_divergence(
        batch_pair_from_minibatch(aligned, pair.target_labels), hclass)
    rep_r = empirical_divergence(
        batch_pair_from_minibatch(random_b, pair.target_labels), hclass)
    return {
        "random": {"divergence": rep_r.divergence,
                   "misaligned_term": rep_r.misaligned_term},
        "aligned_oracle": {"divergence": rep_a.divergence,
                           "misaligned_term": rep_a.misaligned_term},
    }


def train(config: TrainConfig, pair: DomainPair) -> TrainResult:
    """Run the minimax loop: refresh pseudo-labels on schedule, sample one
    batch per step, descend the total loss, and append metrics at the
    evaluation period. Deterministic given (config, datasets)."""
    num_classes = pair.source.num_classes
    problems = config.validate(num_classes)
    if problems:
        raise ConfigError(problems)
    cfg = config.resolved(num_classes)

    model = AdaptationModel(
        ModelConfig(input_dim=pair.source.input_dim, num_classes=num_classes,
                    hidden_dims=tuple(cfg.hidden_dims), feature_dim=cfg.feature_dim,
                    head_hidden_dim=cfg.head_hidden_dim),
        substream(cfg.seed, "init"))
    optimizer = Sgd(model.parameters(), cfg.optimizer)
    rng = substream(cfg.seed, "sampler")
    probe_rng = substream(cfg.seed, "probe")

    src_index = ClassIndex(pair.source.labels, num_classes)
    p_y = AlignmentDistribution.uniform(num_classes)
    bank = None
    if cfg.objective.kind == "explicit_prototype" and \
            cfg.objective.prototype_variant == "moving_avg":
        bank = PrototypeBank(num_classes, cfg.feature_dim, cfg.objective.ema_decay)

    cache: PseudoLabelCache | None = None
    tgt_index: ClassIndex | None = None
    pseudo_accuracy: float | None = None
    aligned_active = True
    if cfg.sampler == "aligned_oracle":
        # the one sanctioned reader of hidden labels on the training path
        cache = PseudoLabelCache(pair.target_labels, step=0,
                                 refresh_period=cfg.refresh_period)
        tgt_index = ClassIndex(pair.target_labels, num_classes)
        pseudo_accuracy = 1.0

    records: list[MetricsRecord] = []
    diversity_sum, degraded, src_loss_sum, transfer_sum = 0.0, 0, 0.0, 0.0
    transfer_seen, batch_count, mask_fallbacks, bootstrap_batches = 0, 0, 0, 0

    for step in range(cfg.steps):
        if cfg.sampler == "aligned" and step % cfg.refresh_period == 0:
            cache, tgt_index = refresh_pseudo_labels(model, pair.target, step,
                                                     cfg.refresh_period)
            pseudo_accuracy = cache.accuracy_against(pair.target_labels)
            # a cache that misses classes would drop them from the source
            # signal and entrench itself; until (and whenever not) it covers
            # the whole alignment support, fall back to the source-balanced
            # baseline, which for a weakly trained classifier is what
            # aligned sampling amounts to anyway
            support = int(np.count_nonzero(p_y.probabilities))
            aligned_active = (len(tgt_index.nonempty_classes()) >= support)

        if cfg.sampler == "random":
            batch = random_pair_batch(pair.source, pair.target, cfg.batch_size, rng)
        elif cfg.sampler == "source_balanced" or (
                cfg.sampler == "aligned" and not aligned_active):
            batch = source_balanced_batch(pair.source, src_index, pair.target,
                                          p_y, cfg.n_classes, cfg.per_class, rng)
            if cfg.sampler == "aligned":
                bootstrap_batches += 1
        else:
            try:
                batch = build_aligned_minibatch(
                    pair.source, src_index, pair.target, tgt_index, cache.labels,
                    p_y, cfg.n_classes, cfg.per_class, rng,
                    min_classes=cfg.min_classes)
            except DegenerateCacheError as err:
                raise DegenerateCacheError(err.live_classes, err.required,
                                           step=step) from None
            check_alignment_invariant(batch)

        coefficient = grl_coefficient(step)
        objective = cfg.objective
        if objective.kind == "mdd_masked" and int(batch.mask.sum()) < 2:
            # a single sampled class leaves the masked disparity undefined;
            # such a batch carries no alignment information, so it runs unmasked
            objective = replace(objective, kind="mdd")
            mask_fallbacks += 1
        step_loss = total_step_loss(model, batch, objective, coefficient,
                                    bank=bank, progress=step / cfg.steps)
        if not np.isfinite(step_loss.total.values):
            raise TrainingDiverged(step, step_loss.components)
        model.zero_grad()
        step_loss.total.backward()
        optimizer.step()

        batch_count += 1
        diversity_sum += batch.source_diversity()
        degraded += int(batch.degraded)
        src_loss_sum += step_loss.components["source_loss"]
        if "transfer_loss" in step_loss.components:
            transfer_sum += step_loss.components["transfer_loss"]
            transfer_seen += 1

        if (step + 1) % cfg.eval_period == 0 or step == cfg.steps - 1:
            source_eval = evaluate_model(model, pair.source.features,
                                         pair.source.labels, num_classes)
            target_eval = evaluate_model(model, pair.target.features,
                                         pair.target_labels, num_classes)
            probe = None
            if cfg.divergence_probe:
                probe = _probe_divergence(pair, src_index, probe_rng, p_y, cfg)
            records.append(MetricsRecord(
                step=step,
                grl=float(coefficient),
                source_accuracy=source_eval.accuracy,
                target_accuracy=target_eval.accuracy,
                target_per_class_accuracy=target_eval.per_class_average_accuracy,
                target_macro_f1=target_eval.macro_f1,
                target_weighted_f1=target_eval.weighted_f1,
                target_macro_precision=target_eval.macro_precision,
                target_weighted_precision=target_eval.weighted_precision,
                target_macro_recall=target_eval.macro_recall,
                target_weighted_recall=target_eval.weighted_recall,
                target_absent_classes=target_eval.absent_classes,
                pseudo_label_accuracy=pseudo_accuracy,
                mean_batch_diversity=diversity_sum / batch_count,
                degraded_batches=degraded,
                mean_source_loss=src_loss_sum / batch_count,
                mean_transfer_loss=(transfer_sum / transfer_seen
                                    if transfer_seen else None),
                mask_fallback_batches=mask_fallbacks,
                bootstrap_batches=bootstrap_batches,
                divergence_probe=probe,
            ))
            diversity_sum, degraded, src_loss_sum = 0.0, 0, 0.0
            transfer_sum, transfer_seen, batch_count = 0.0, 0, 0
            mask_fallbacks, bootstrap_batches = 0, 0

    return TrainResult(model, records, cfg)


# ---------------------------------------------------------------------------
# flat config representation (dotted keys) shared with the CLI


_FLAT_SIMPLE = ("steps", "sampler", "n_classes", "per_class", "batch_size",
                "refresh_period", "eval_period", "seed", "min_classes",
                "divergence_probe")
_FLAT_OBJECTIVE = ("kind", "eta", "gamma", "prototype_variant", "ema_decay",
                   "curriculum_start", "curriculum_end")
_FLAT_OPTIMIZER = ("learning_rate", "momentum", "weight_decay")
_FLAT_MODEL = ("hidden_dims", "feature_dim", "head_hidden_dim")


def config_to_flat(config: TrainConfig) -> dict:
    flat = {key: getattr(config, key) for key in _FLAT_SIMPLE}
    flat.update({f"objective.{k}": getattr(config.objective, k)
                 for k in _FLAT_OBJECTIVE})
    flat.update({f"optimizer.{k}": getattr(config.optimizer, k)
                 for k in _FLAT_OPTIMIZER})
    flat["model.hidden_dims"] = list(config.hidden_dims)
    flat["model.feature_dim"] = config.feature_dim
    flat["model.head_hidden_dim"] = config.head_hidden_dim
    return flat


def config_from_flat(flat: dict) -> TrainConfig:
    problems = []
    known = set(_FLAT_SIMPLE) | {f"objective.{k}" for k in _FLAT_OBJECTIVE} \
        | {f"optimizer.{k}" for k in _FLAT_OPTIMIZER} \
        | {f"model.{k}" for k in _FLAT_MODEL}
    for key in flat:
        if key not in known:
            problems.append(f"unknown config key {key!r}")
    if problems:
        raise ConfigError(problems)

    base = {k: flat[k] for k in _FLAT_SIMPLE if k in flat}
    objective = {k: flat[f"objective.{k}"] for k in _FLAT_OBJECTIVE
                 if f"objective.{k}" in flat}
    optimizer = {k: flat[f"optimizer.{k}"] for k in _FLAT_OPTIMIZER
                 if f"optimizer.{k}" in flat}
    try:
        config = TrainConfig(
            **base,
            objective=TransferLossConfig(**objective),
            optimizer=SgdConfig(**optimizer),
        )
    except ValueError as err:
        raise ConfigError([str(err)]) from None
    if "model.hidden_dims" in flat:
        config.hidden_dims = tuple(int(v) for v in flat["model.hidden_dims"])
    if "model.feature_dim" in flat:
        config.feature_dim = int(flat["model.feature_dim"])
    if "model.head_hidden_dim" in flat:
        config.head_hidden_dim = int(flat["model.head_hidden_dim"])
    return config


# ---------------------------------------------------------------------------
# ablation grids


@dataclass
class AblationRow:
    cell: dict
    seeds: list[int]
    per_class_accuracies: list[float]
    error: str | None = None

    @property
    def mean(self) -> float | None:
        return float(np.mean(self.per_class_accuracies)) \
            if self.per_class_accuracies else None

    @property
    def stderr(self) -> float | None:
        vals = self.per_class_accuracies
        if len(vals) < 2:
            return 0.0 if vals else None
        return float(np.std(vals, ddof=1) / np.sqrt(len(vals)))


def grid_cells(axes: dict[str, list]) -> list[dict]:
    """Cross product of flat-config axes, in deterministic order."""
    names = sorted(axes)
    return [dict(zip(names, combo))
            for combo in itertools.product(*(axes[n] for n in names))]


def ablate(base_config: TrainConfig, cells: list[dict], seeds: list[int],
           pair: DomainPair) -> list[AblationRow]:
    """Run train+evaluate per (cell, seed); a failing cell is recorded and
    the rest of the grid still runs."""
    base_flat = config_to_flat(base_config)
    rows = []
    for cell in cells:
        flat = dict(base_flat)
        flat.update(cell)
        accuracies, error = [], None
        for seed in seeds:
            flat["seed"] = seed
            try:
                result = train(config_from_flat(flat), pair)
                accuracies.append(result.final.target_per_class_accuracy)
            except Exception as exc:  # keep the grid alive, report the cell
                error = f"seed {seed}: {exc}"
                break
        rows.append(AblationRow(cell=dict(cell), seeds=list(seeds),
                                per_class_accuracies=accuracies, error=error))
    return rows


def ablation_csv(rows: list[AblationRow]) -> str:
    """Render ablation rows as CSV with one line per cell."""
    keys = sorted({k for row in rows for k in row.cell})
    lines = [",".join(keys + ["seed_count", "mean", "stderr", "error"])]
    for row in rows:
        mean = "" if row.mean is None else f"{row.mean:.6f}"
        stderr = "" if row.stderr is None else f"{row.stderr:.6f}"
        cells = [json.dumps(row.cell.get(k, ""), default=str) if
                 isinstance(row.cell.get(k, ""), (list, tuple))
                 else str(row.cell.get(k, "")) for k in keys]
        lines.append(",".join(cells + [str(len(row.per_class_accuracies)),
                                       mean, stderr, row.error or ""]))
    return "\n".join(lines) + "\n"
