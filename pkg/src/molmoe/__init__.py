"""Motif-aware mixture-of-experts models for molecular property prediction.

The pipeline: SMILES are parsed into molecular graphs, fragmented at
retrosynthetically meaningful bonds, and encoded with a message-passing
network. Fragment attributions select each molecule's positive and negative
motifs, and a dual-router mixture of experts turns the two motif embeddings
into task predictions.
"""

from .autodiff import Tensor, backward, no_grad, stop_gradient
from .brics import Fragment, brics_decompose, rule_table
from .canon import canonical_key
from .encoder import EncoderConfig, encode, init_encoder_params, readout_masked
from .graph import Atom, Bond, MolecularGraph, featurize
from .moe import (MoEConfig, MoEPrediction, importance_loss, init_moe_params,
                  predict, route_negative, route_positive, total_loss)
from .recognition import (AttributionScore, MotifAssignment, attribute,
                          margin_loss, select_motifs)
from .scaffold import murcko_scaffold
from .smiles import SmilesParseError, SmilesWarning, parse_smiles
from .training import (Dataset, LossReport, Model, MoleculeRecord,
                       TrainConfig, TrainResult, evaluate, roc_auc,
                       scaffold_split, task_loss, train)

__version__ = "0.1.0"

__all__ = [
    "Atom", "AttributionScore", "Bond", "Dataset", "EncoderConfig",
    "Fragment", "LossReport", "MoEConfig", "MoEPrediction", "Model",
    "MolecularGraph", "MoleculeRecord", "MotifAssignment", "SmilesParseError",
    "SmilesWarning", "Tensor", "TrainConfig", "TrainResult", "attribute",
    "backward", "brics_decompose", "canonical_key", "encode", "evaluate",
    "featurize", "importance_loss", "init_encoder_params", "init_moe_params",
    "margin_loss", "murcko_scaffold", "no_grad", "parse_smiles", "predict",
    "readout_masked", "roc_auc", "route_negative", "route_positive",
    "rule_table", "scaffold_split", "select_motifs", "stop_gradient",
    "task_loss", "total_loss", "train",
]
