"""Dataset ingestion, checkpoint persistence, and report records.

Datasets are delimited text tables (comma by default, tab accepted) with a
header; one column must be named ``smiles`` (any case) and every other
column is a task with values 0, 1, or empty for missing. Rows whose SMILES
does not parse, and rows with no observed label, are dropped and counted.

Checkpoints are a single self-describing binary container:

    bytes 0-3    magic ``MMOE``
    bytes 4-7    format version, little-endian uint32
    bytes 8-15   header length, little-endian uint64
    header       canonical JSON: config, task names, phase, rng state,
                 frozen motif assignments, and the tensor index
                 (name + shape, in serialization order)
    payload      raw float64 tensor blocks, concatenated in index order

Loading validates the magic, version, and payload length, so truncated or
corrupt files fail with a diagnostic instead of garbage parameters.

Training reports are line-delimited JSON records, one per epoch, closed by a
single summary record.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .brics import brics_decompose
from .graph import featurize
from .recognition import MotifAssignment
from .scaffold import murcko_scaffold
from .smiles import SmilesParseError, parse_smiles
from .training import Dataset, Model, MoleculeRecord, TrainConfig

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MMOE"
CHECKPOINT_VERSION = 1


class DataFormatError(ValueError):
    pass


class CheckpointError(RuntimeError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class IntegrityError(CheckpointError):
    pass


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def _sniff_delimiter(header_line: str) -> str:
    return "\t" if "\t" in header_line else ","


def _parse_label(cell: str, path: str, row: int) -> float:
    cell = cell.strip()
    if not cell:
        return np.nan
    try:
        value = float(cell)
    except ValueError:
        raise DataFormatError(
            f"{path}: row {row}: label {cell!r} is not 0, 1, or empty") from None
    if value not in (0.0, 1.0):
        raise DataFormatError(
            f"{path}: row {row}: label {cell!r} is not 0, 1, or empty")
    return value


def ingest(path: str | Path) -> Dataset:
    """Load a delimited SMILES/label table into a featurized dataset.

    Scaffold keys and fragments are computed eagerly so that downstream
    phases never touch the chemistry layer again.
    """
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        raise DataFormatError(f"{path}: empty file")
    delimiter = _sniff_delimiter(text.splitlines()[0])
    rows = list(csv.reader(text.splitlines(), delimiter=delimiter))
    header = [h.strip() for h in rows[0]]
    smiles_cols = [i for i, h in enumerate(header) if h.lower() == "smiles"]
    if not smiles_cols:
        raise DataFormatError(f"{path}: no 'smiles' column in header {header}")
    smiles_col = smiles_cols[0]
    task_names = [h for i, h in enumerate(header) if i != smiles_col]
    if not task_names:
        raise DataFormatError(f"{path}: no task columns besides 'smiles'")

    records: list[MoleculeRecord] = []
    dropped_parse = 0
    dropped_unlabeled = 0
    parse_warnings = 0
    for row_num, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataFormatError(
                f"{path}: row {row_num}: expected {len(header)} columns, "
                f"got {len(row)}")
        smiles = row[smiles_col].strip()
        labels = np.array([
            _parse_label(c, str(path), row_num)
            for i, c in enumerate(row) if i != smiles_col
        ])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                graph = featurize(parse_smiles(smiles))
            except SmilesParseError as err:
                log.debug("dropping row %d (%r): %s", row_num, smiles, err)
                dropped_parse += 1
                continue
            parse_warnings += len(caught)
        if np.isnan(labels).all():
            dropped_unlabeled += 1
            continue
        records.append(MoleculeRecord(
            graph=graph,
            labels=labels,
            scaffold_key=murcko_scaffold(graph),
            fragments=brics_decompose(graph),
            smiles=smiles,
        ))
    summary = {
        "kept": len(records),
        "dropped_parse": dropped_parse,
        "dropped_unlabeled": dropped_unlabeled,
        "parse_warnings": parse_warnings,
        "tasks": len(task_names),
    }
    log.info("ingest %s: kept %d, dropped %d unparseable, %d unlabeled "
             "(%d tasks)", path, summary["kept"], dropped_parse,
             dropped_unlabeled, len(task_names))
    dataset = Dataset(records, task_names)
    dataset.ingest_summary = summary
    return dataset


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _assignment_to_dict(a: MotifAssignment) -> dict:
    return {
        "positive_fragments": list(a.positive_fragments),
        "negative_fragments": list(a.negative_fragments),
        "positive_nodes": list(a.positive_nodes),
        "negative_nodes": list(a.negative_nodes),
        "degenerate": a.degenerate,
    }


def _assignment_from_dict(d: dict) -> MotifAssignment:
    return MotifAssignment(
        tuple(d["positive_fragments"]), tuple(d["negative_fragments"]),
        tuple(d["positive_nodes"]), tuple(d["negative_nodes"]),
        d["degenerate"])


def save_checkpoint(model: Model, path: str | Path,
                    task_names: list[str] | None = None) -> None:
    params = model.all_params()
    names = sorted(params)
    header = {
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in vars(model.config).items()},
        "num_tasks": model.num_tasks,
        "task_names": task_names,
        "phase": model.phase,
        "rng_state": model.rng_state,
        "assignments": {str(i): _assignment_to_dict(a)
                        for i, a in sorted(model.frozen_assignments.items())},
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(CHECKPOINT_VERSION.to_bytes(4, "little"))
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(params[name].data).tobytes())


def load_checkpoint(path: str | Path) -> tuple[Model, list[str] | None]:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != CHECKPOINT_MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint file")
    version = int.from_bytes(raw[4:8], "little")
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: checkpoint version {version} is not supported "
            f"(expected {CHECKPOINT_VERSION})")
    header_len = int.from_bytes(raw[8:16], "little")
    if len(raw) < 16 + header_len:
        raise IntegrityError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise IntegrityError(f"{path}: corrupt header: {err}") from None

    expected = sum(int(np.prod(t["shape"])) for t in header["tensors"]) * 8
    payload = raw[16 + header_len:]
    if len(payload) != expected:
        raise IntegrityError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}")

    config_dict = dict(header["config"])
    if "split_ratios" in config_dict:
        config_dict["split_ratios"] = tuple(config_dict["split_ratios"])
    config = TrainConfig(**config_dict)

    tensors: dict[str, Tensor] = {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        block = np.frombuffer(payload, dtype=np.float64, count=count,
                              offset=offset).reshape(shape).copy()
        tensors[entry["name"]] = Tensor(block, requires_grad=True)
        offset += count * 8

    encoder_params = {n[len("encoder."):]: t for n, t in tensors.items()
                      if n.startswith("encoder.")}
    moe_params = {n[len("moe."):]: t for n, t in tensors.items()
                  if n.startswith("moe.")}
    head_params = {n: t for n, t in tensors.items() if n.startswith("head.")}
    model = Model(
        config=config,
        num_tasks=header["num_tasks"],
        encoder_params=encoder_params,
        head_params=head_params,
        moe_params=moe_params,
        frozen_assignments={int(i): _assignment_from_dict(a)
                            for i, a in header["assignments"].items()},
        phase=header["phase"],
        rng_state=header.get("rng_state"),
    )
    return model, header.get("task_names")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def write_reports(path: str | Path, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_reports(path: str | Path) -> list[dict]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
