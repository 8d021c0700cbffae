"""Command-line interface.

One executable, one subcommand per batch task: ``parse``, ``decompose``,
``split``, ``train``, ``eval``, ``attribute``, ``route-export``. Commands
never modify their inputs; training and the export commands render summary
figures next to their delimited outputs unless ``--no-figures`` is given.

Hyper-parameters come from an optional JSON config file (keys named after
the training-config fields; unknown keys are rejected) and are overridden by
the matching command-line flags. Log verbosity is controlled by the
``MOLMOE_LOG`` environment variable (DEBUG, INFO, WARNING, ERROR).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import ingest, load_checkpoint, save_checkpoint, write_reports
from .encoder import encode
from .recognition import attribute, select_motifs
from .training import (Dataset, Model, TrainConfig, evaluate, random_split,
                       scaffold_split, train)

log = logging.getLogger(__name__)

_CONFIG_FIELDS = {f.name: f for f in fields(TrainConfig)}

# maps CLI flag destinations onto TrainConfig fields
_FLAG_FIELDS = {
    "seed": "seed",
    "encoder": "encoder",
    "experts": "num_experts",
    "psi": "psi",
    "alpha": "alpha",
    "beta": "beta",
    "batch_size": "batch_size",
    "lr": "learning_rate",
    "weight_decay": "weight_decay",
    "split": "split",
    "epochs_rec": "epochs_recognition",
    "epochs_total": "epochs_total",
    "hidden_dim": "hidden_dim",
    "num_layers": "num_layers",
    "readout": "readout",
    "margin": "margin",
    "patience": "patience",
    "optimizer": "optimizer",
}


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--encoder", choices=["gcn", "gin"])
    p.add_argument("--experts", type=int, help="experts per bank")
    p.add_argument("--psi", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--split", choices=["scaffold", "random"])
    p.add_argument("--epochs-rec", type=int, dest="epochs_rec")
    p.add_argument("--epochs-total", type=int, dest="epochs_total")
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p.add_argument("--num-layers", type=int, dest="num_layers")
    p.add_argument("--readout", choices=["mean", "sum", "max"])
    p.add_argument("--margin", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--optimizer", choices=["sgd", "adam"])
    p.add_argument("--ablation", action="store_true",
                   help="single expert, beta=0, psi=1 (baseline comparison run)")


def build_config(args: argparse.Namespace) -> TrainConfig:
    values: dict = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_values = json.load(fh)
        unknown = set(file_values) - set(_CONFIG_FIELDS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    for flag, field_name in _FLAG_FIELDS.items():
        flag_value = getattr(args, flag, None)
        if flag_value is not None:
            values[field_name] = flag_value
    if "split_ratios" in values:
        values["split_ratios"] = tuple(values["split_ratios"])
    config = TrainConfig(**values)
    if getattr(args, "ablation", False):
        config = config.ablation()
    return config


def _load_model_and_data(args) -> tuple[Model, Dataset]:
    model, task_names = load_checkpoint(args.checkpoint)
    dataset = ingest(args.data)
    if dataset.num_tasks != model.num_tasks:
        raise ValueError(
            f"dataset has {dataset.num_tasks} tasks but checkpoint expects "
            f"{model.num_tasks}" + (f" ({task_names})" if task_names else ""))
    return model, dataset


def _out_path(out: str | None, default: str) -> Path:
    if out is None:
        return Path(default)
    path = Path(out)
    if path.is_dir():
        return path / default
    return path


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_parse(args) -> int:
    dataset = ingest(args.data)
    lines = ["smiles\tatoms\tbonds\taromatic_atoms\tring_bonds\tscaffold"]
    for rec in dataset.records:
        g = rec.graph
        lines.append("\t".join([
            rec.smiles, str(g.num_atoms), str(g.num_bonds),
            str(sum(a.is_aromatic for a in g.atoms)),
            str(sum(b.in_ring for b in g.bonds)),
            rec.scaffold_key or "-",
        ]))
    _emit(lines, args.out, "parse.tsv")
    return 0


def cmd_decompose(args) -> int:
    dataset = ingest(args.data)
    lines = ["smiles\tfragments\tatom_lists\trules"]
    for rec in dataset.records:
        atom_lists = "|".join(",".join(map(str, f.node_indices))
                              for f in rec.fragments)
        rules = "|".join(";".join(f.rule_ids) if f.rule_ids else "-"
                         for f in rec.fragments)
        lines.append("\t".join([rec.smiles, str(len(rec.fragments)),
                                atom_lists, rules]))
    _emit(lines, args.out, "decompose.tsv")
    return 0


def _emit(lines: list[str], out: str | None, default: str) -> None:
    text = "\n".join(lines) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        path = _out_path(out, default)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        log.info("wrote %s", path)


def cmd_split(args) -> int:
    dataset = ingest(args.data)
    ratios = (0.8, 0.1, 0.1)
    if args.split == "random":
        seeds = np.random.SeedSequence(args.seed).spawn(4)
        parts = random_split(len(dataset), ratios, np.random.default_rng(seeds[3]))
    else:
        parts = scaffold_split(dataset, ratios, args.seed)
    outdir = Path(args.out or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    for name, indices in zip(("train", "valid", "test"), parts):
        path = outdir / f"{name}.idx"
        path.write_text("".join(f"{i}\n" for i in indices))
        print(f"{name}: {len(indices)} molecules -> {path}")
    return 0


def cmd_train(args) -> int:
    config = build_config(args)
    dataset = ingest(args.data)
    result = train(dataset, config)
    outdir = Path(args.out or ".")
    outdir.mkdir(parents=True, exist_ok=True)

    records = [r.to_dict() for r in result.reports] + [result.summary]
    reports_path = outdir / "reports.jsonl"
    write_reports(reports_path, records)
    ckpt_path = outdir / "checkpoint.ckpt"
    save_checkpoint(result.model, ckpt_path, dataset.task_names)
    if not args.no_figures:
        from . import figures
        figures.render_loss_curves(records, outdir / "loss_curves.png")
        figures.render_auc_curve(records, outdir / "auc_curve.png",
                                 result.summary.get("test_auc"))
    print(json.dumps(result.summary, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    model, dataset = _load_model_and_data(args)
    indices = _select_indices(args, dataset)
    mean_auc, per_task = evaluate(model, dataset, indices, return_per_task=True)
    for name, auc in zip(dataset.task_names, per_task):
        print(f"{name}\t{'n/a' if np.isnan(auc) else f'{auc:.4f}'}")
    print(f"mean\t{mean_auc:.4f}")
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        write_reports(outdir / "eval.jsonl", [{
            "record": "eval",
            "mean_auc": mean_auc,
            "per_task": {n: (None if np.isnan(a) else float(a))
                         for n, a in zip(dataset.task_names, per_task)},
            "molecules": len(indices),
        }])
        if not args.no_figures:
            from . import figures
            figures.render_per_task_auc(dataset.task_names, per_task,
                                        outdir / "per_task_auc.png")
    return 0


def _select_indices(args, dataset: Dataset) -> list[int]:
    if getattr(args, "indices", None):
        text = Path(args.indices).read_text().split()
        return [int(t) for t in text]
    return list(range(len(dataset)))


def cmd_attribute(args) -> int:
    model, dataset = _load_model_and_data(args)
    records = []
    skipped = 0
    with ad.no_grad():
        for rec in dataset.records:
            if np.isnan(rec.labels).all():
                log.warning("skipping %s: no observed labels", rec.smiles)
                skipped += 1
                continue
            hv, h = encode(rec.graph, model.config.encoder_config(),
                           model.encoder_params)
            scores = attribute(rec.graph, rec.fragments, hv, h,
                               model.head_params, rec.labels,
                               model.config.readout)
            assignment = select_motifs(scores, rec.fragments, model.config.psi)
            records.append({
                "smiles": rec.smiles,
                "fragments": [list(f.node_indices) for f in rec.fragments],
                "fragment_scores": [s.aggregate for s in scores],
                "positive_nodes": list(assignment.positive_nodes),
                "negative_nodes": list(assignment.negative_nodes),
                "degenerate": assignment.degenerate,
            })
    path = _out_path(args.out, "attributions.jsonl")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_reports(path, records)
    if not args.no_figures:
        from . import figures
        figures.render_attribution_histogram(
            records, path.with_name("attribution_scores.png"))
    print(f"wrote {len(records)} records to {path}"
          + (f" ({skipped} skipped)" if skipped else ""))
    return 0


def cmd_route_export(args) -> int:
    model, dataset = _load_model_and_data(args)
    records = []
    with ad.no_grad():
        for rec in dataset.records:
            pred, _ = model.predict_record(rec)
            entry = {
                "smiles": rec.smiles,
                "r_pos": pred.r_pos.data.tolist(),
                "r_neg": pred.r_neg.data.tolist(),
                "expert_pair": [int(np.argmax(pred.r_pos.data)),
                                int(np.argmax(pred.r_neg.data))],
                "labels": [None if np.isnan(v) else float(v)
                           for v in rec.labels],
            }
            if args.include_embedding:
                _, h = encode(rec.graph, model.config.encoder_config(),
                              model.encoder_params)
                entry["embedding"] = h.data.tolist()
            records.append(entry)
    path = _out_path(args.out, "routing.jsonl")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_reports(path, records)
    if not args.no_figures:
        from . import figures
        figures.render_routing_usage(records,
                                     path.with_name("routing_usage.png"))
    print(f"wrote {len(records)} records to {path}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="molmoe",
        description="Motif-aware mixture-of-experts molecular property models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="echo per-molecule graph statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("decompose", help="list fragments per molecule")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_decompose)

    p = sub.add_parser("split", help="emit train/valid/test index files")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["scaffold", "random"], default="scaffold")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("train", help="run two-phase training")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--indices", help="file of row indices to score")
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("attribute", help="export fragment attributions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_attribute)

    p = sub.add_parser("route-export", help="export routing scores")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--include-embedding", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_route_export)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("MOLMOE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as err:  # one-line diagnostic, nonzero exit
        print(f"error: {err}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
