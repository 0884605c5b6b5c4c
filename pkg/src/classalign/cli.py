"""Command line for reproducible runs: data generation, training,
evaluation, divergence probing, and ablation grids.

Every run writes its manifest (resolved config, seed, input digests,
output paths) before doing any work, flips it to complete at the end, and
can be re-executed from that manifest to reproduce the outputs byte for
byte. All paths are explicit flags; nothing is read from the environment.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import data, divergence, sampling
from .nn import load_checkpoint, save_checkpoint
from .training import (ConfigError, ablate, ablation_csv, config_from_flat,
                       config_to_flat, evaluate_model, grid_cells, substream,
                       train, TrainConfig)


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(path: Path, manifest: dict) -> None:
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _parse_shift(text: str) -> data.ShiftSpec:
    parts = [float(v) for v in text.split(",")]
    if len(parts) == 3:
        parts.append(1.0)
    if len(parts) != 4:
        raise ValueError(
            f"--shift expects 'tx,ty,angle[,scale]', got {text!r}")
    return data.ShiftSpec((parts[0], parts[1]), parts[2], parts[3])


def _parse_profile(text: str, num_classes: int, max_count: int) -> data.LabelProfile:
    kind, _, param = text.partition(":")
    parameter = float(param) if param else None
    return data.make_profile(kind, num_classes, max_count, parameter)


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.from_manifest:
        stored = json.loads(Path(args.from_manifest).read_text())
        config = stored["config"]
    else:
        if args.classes < 2:
            raise ValueError(f"--classes must be >= 2, got {args.classes}")
        config = {
            "seed": args.seed, "classes": args.classes, "dim": args.dim,
            "shift": args.shift, "source_profile": args.source_profile,
            "target_profile": args.target_profile, "max_count": args.max_count,
        }

    shift = _parse_shift(config["shift"])
    source_profile = _parse_profile(config["source_profile"], config["classes"],
                                    config["max_count"])
    target_profile = _parse_profile(config["target_profile"], config["classes"],
                                    config["max_count"])
    pair = data.generate_domain_pair(
        seed=config["seed"], num_classes=config["classes"], input_dim=config["dim"],
        shift=shift, source_profile=source_profile, target_profile=target_profile)

    manifest = {
        "tool": "classalign", "version": __version__, "command": "gen-data",
        "status": "incomplete", "config": config,
        "outputs": {"source": "source.csv", "target": "target.csv",
                    "target_labels": "target_labels.csv"},
    }
    manifest.update(pair.params)  # generator provenance, incl. num_classes
    manifest_path = out / "manifest.json"
    _write_manifest(manifest_path, manifest)

    data.save_dataset(pair.source, out / "source.csv")
    data.save_dataset(pair.target, out / "target.csv")
    data.save_labels(pair.target_labels, out / "target_labels.csv")

    manifest["digests"] = {name: _sha256(out / fname)
                           for name, fname in manifest["outputs"].items()}
    manifest["status"] = "complete"
    _write_manifest(manifest_path, manifest)
    print(f"wrote {out}/{{source,target,target_labels}}.csv "
          f"({len(pair.source)} source, {len(pair.target)} target examples)")
    return 0


# ---------------------------------------------------------------------------
# train


_FLAG_TO_KEY = {
    "steps": "steps", "seed": "seed", "sampler": "sampler",
    "n_classes": "n_classes", "per_class": "per_class", "batch_size": "batch_size",
    "refresh_period": "refresh_period", "eval_period": "eval_period",
    "eta": "objective.eta", "gamma": "objective.gamma",
    "prototype_variant": "objective.prototype_variant",
    "lr": "optimizer.learning_rate", "momentum": "optimizer.momentum",
    "weight_decay": "optimizer.weight_decay",
    "feature_dim": "model.feature_dim", "head_hidden_dim": "model.head_hidden_dim",
}


def _resolve_train_flat(args) -> dict:
    flat = config_to_flat(TrainConfig())
    if args.config:
        flat.update(json.loads(Path(args.config).read_text()))
    for flag, key in _FLAG_TO_KEY.items():
        value = getattr(args, flag, None)
        if value is not None:
            flat[key] = value
    if args.objective is not None:
        if args.objective == "mdd":
            flat["objective.kind"] = "mdd_masked" if args.mask == "on" else "mdd"
        else:
            flat["objective.kind"] = args.objective
    elif args.mask is not None and flat["objective.kind"] in ("mdd", "mdd_masked"):
        flat["objective.kind"] = "mdd_masked" if args.mask == "on" else "mdd"
    if args.hidden_dims is not None:
        flat["model.hidden_dims"] = [int(v) for v in args.hidden_dims.split(",")]
    if args.divergence_probe:
        flat["divergence_probe"] = True
    return flat


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.from_manifest:
        stored = json.loads(Path(args.from_manifest).read_text())
        flat, data_dir = stored["config"], stored["data"]
    else:
        if not args.data:
            raise ValueError("train needs --data (a gen-data output directory)")
        flat, data_dir = _resolve_train_flat(args), args.data

    config = config_from_flat(flat)  # enumerated validation happens here
    pair = data.load_pair(data_dir)
    problems = config.validate(pair.source.num_classes)
    if problems:
        raise ConfigError(problems)

    inputs = {name: _sha256(Path(data_dir) / f"{name}.csv")
              for name in ("source", "target", "target_labels")}
    if args.from_manifest and stored.get("inputs") != inputs:
        raise ValueError("input digests differ from the manifest; "
                         "the data directory changed")

    manifest_path = out / "manifest.json"
    manifest = {
        "tool": "classalign", "version": __version__, "command": "train",
        "status": "incomplete", "seed": flat["seed"], "config": flat,
        "data": str(data_dir), "inputs": inputs,
        "outputs": {"metrics": "metrics.jsonl", "summary": "summary.csv",
                    "checkpoint": "checkpoint.npz"},
    }
    _write_manifest(manifest_path, manifest)

    result = train(config, pair)

    metrics_path = out / "metrics.jsonl"
    metrics_path.write_text("".join(r.to_json() + "\n" for r in result.records))
    final = result.final.to_dict()
    final.pop("divergence_probe")
    summary_keys = sorted(final)
    (out / "summary.csv").write_text(
        ",".join(summary_keys) + "\n"
        + ",".join(json.dumps(final[k]) for k in summary_keys) + "\n")
    save_checkpoint(result.model, out / "checkpoint.npz")

    manifest["status"] = "complete"
    _write_manifest(manifest_path, manifest)
    print(f"final target accuracy {result.final.target_accuracy:.4f}, "
          f"per-class {result.final.target_per_class_accuracy:.4f} "
          f"-> {metrics_path}")
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = data.load_dataset(args.data, num_classes=model.num_classes)
    labels = data.load_labels(args.labels) if args.labels else dataset.labels
    if (labels < 0).any():
        raise ValueError("evaluation needs labels; pass --labels for target data")
    metrics = evaluate_model(model, dataset.features, labels, model.num_classes)
    payload = json.dumps(metrics.to_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(payload + "\n")
    print(payload)
    return 0


# ---------------------------------------------------------------------------
# divergence


def cmd_divergence(args) -> int:
    source = data.load_dataset(args.source)
    num_classes = source.num_classes if args.classes is None else args.classes
    source = data.load_dataset(args.source, num_classes)
    target = data.load_dataset(args.target, num_classes)
    labels = data.load_labels(args.labels)
    rng = substream(args.seed, "divergence")

    if args.hypotheses == "stumps":
        pool = np.vstack([source.features, target.features])
        hclass = divergence.threshold_stump_family(pool, per_dim=args.per_dim,
                                                   cap=args.cap)
    else:
        if 2 ** num_classes + 1 > args.cap:
            raise ValueError(
                f"label-set family over {num_classes} classes exceeds cap {args.cap}")
        hclass = divergence.label_set_family(range(num_classes), cap=args.cap)

    n = args.n_classes or num_classes
    src_index = data.ClassIndex(source.labels, num_classes)
    oracle_index = data.ClassIndex(labels, num_classes)
    p_y = sampling.AlignmentDistribution.uniform(num_classes)

    reports = []
    for _ in range(args.pairs):
        if args.sampler == "random":
            batch = sampling.random_pair_batch(source, target,
                                               n * args.per_class, rng)
        else:
            batch = sampling.build_aligned_minibatch(
                source, src_index, target, oracle_index, labels, p_y,
                n, args.per_class, rng)
        pair = divergence.batch_pair_from_minibatch(batch, labels)
        reports.append(divergence.empirical_divergence(pair, hclass).to_dict())

    payload = {
        "sampler": args.sampler, "pairs": args.pairs,
        "hypothesis_count": len(hclass),
        "mean_divergence": float(np.mean([r["divergence"] for r in reports])),
        "mean_misaligned_term": float(np.mean([abs(r["misaligned_term"])
                                               for r in reports])),
        "reports": reports,
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


# ---------------------------------------------------------------------------
# ablate


def cmd_ablate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = json.loads(Path(args.grid).read_text())
    base_flat = config_to_flat(TrainConfig())
    base_flat.update(grid.get("base", {}))
    cells = grid["cells"] if "cells" in grid else grid_cells(grid["axes"])
    seeds = grid.get("seeds", [0, 1, 2, 3, 4])
    pair = data.load_pair(args.data)

    manifest_path = out / "manifest.json"
    manifest = {
        "tool": "classalign", "version": __version__, "command": "ablate",
        "status": "incomplete", "grid": grid, "data": str(args.data),
        "outputs": {"table": "ablation.csv"},
    }
    _write_manifest(manifest_path, manifest)

    rows = ablate(config_from_flat(base_flat), cells, seeds, pair)
    (out / "ablation.csv").write_text(ablation_csv(rows))
    manifest["status"] = "complete"
    _write_manifest(manifest_path, manifest)
    for row in rows:
        mean = "failed" if row.mean is None else f"{row.mean:.4f}"
        print(f"{row.cell} -> {mean} (n={len(row.per_class_accuracies)})")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="classalign",
        description="class-conditioned domain alignment experiments")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic domain pair")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--classes", type=int, default=5)
    g.add_argument("--dim", type=int, default=2)
    g.add_argument("--shift", default="0,0,0,1",
                   help="target shift 'tx,ty,angle[,scale]'")
    g.add_argument("--source-profile", default="balanced",
                   help="kind[:parameter], e.g. balanced, mild:3, rs_ut_source")
    g.add_argument("--target-profile", default="balanced")
    g.add_argument("--max-count", type=int, default=100)
    g.add_argument("--from-manifest", default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="run one training configuration")
    t.add_argument("--data", default=None, help="gen-data output directory")
    t.add_argument("--config", default=None, help="flat dotted-key JSON config")
    t.add_argument("--from-manifest", default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--sampler", choices=("random", "source_balanced", "aligned",
                                         "aligned_oracle"))
    t.add_argument("--objective", choices=("dann", "mdd", "explicit_prototype"))
    t.add_argument("--mask", choices=("on", "off"))
    t.add_argument("--eta", type=float)
    t.add_argument("--gamma", type=float)
    t.add_argument("--prototype-variant", dest="prototype_variant",
                   choices=("basic", "moving_avg", "curriculum"))
    t.add_argument("--n-classes", dest="n_classes", type=int)
    t.add_argument("--per-class", dest="per_class", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--refresh-period", dest="refresh_period", type=int)
    t.add_argument("--eval-period", dest="eval_period", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--weight-decay", dest="weight_decay", type=float)
    t.add_argument("--hidden-dims", dest="hidden_dims",
                   help="comma list, e.g. 128,128")
    t.add_argument("--feature-dim", dest="feature_dim", type=int)
    t.add_argument("--head-hidden-dim", dest="head_hidden_dim", type=int)
    t.add_argument("--divergence-probe", dest="divergence_probe",
                   action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on labeled data")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--labels", default=None,
                   help="label CSV for unlabeled target data")
    e.add_argument("--out", default=None)
    e.set_defaults(fn=cmd_eval)

    d = sub.add_parser("divergence", help="exact divergence reports per batch pair")
    d.add_argument("--source", required=True)
    d.add_argument("--target", required=True)
    d.add_argument("--labels", required=True, help="true target labels CSV")
    d.add_argument("--sampler", choices=("random", "aligned_oracle"),
                   default="random")
    d.add_argument("--hypotheses", choices=("stumps", "label-sets"),
                   default="label-sets")
    d.add_argument("--pairs", type=int, default=20)
    d.add_argument("--classes", type=int, default=None)
    d.add_argument("--n-classes", dest="n_classes", type=int, default=None)
    d.add_argument("--per-class", dest="per_class", type=int, default=1)
    d.add_argument("--per-dim", dest="per_dim", type=int, default=8)
    d.add_argument("--cap", type=int, default=512)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", default=None)
    d.set_defaults(fn=cmd_divergence)

    a = sub.add_parser("ablate", help="run a grid of configurations")
    a.add_argument("--data", required=True)
    a.add_argument("--grid", required=True,
                   help="JSON with axes|cells, seeds, and base overrides")
    a.add_argument("--out", required=True)
    a.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        for problem in err.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 1
    except Exception as err:  # surface one clean line, nonzero exit
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
