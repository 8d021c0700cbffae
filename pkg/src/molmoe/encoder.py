"""Message-passing encoders producing node and graph embeddings.

Two layer variants share the same skeleton: atom features are first projected
to the hidden width, then each layer mixes every node with its neighbors,
where a per-layer bond projection folds edge features into the incoming
messages. A readout pools the final node embeddings into one graph vector;
the masked variant pools only the selected rows, which keeps masked
embeddings on the same scale as the full one under mean pooling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import ATOM_FEATURE_DIM, BOND_FEATURE_DIM, MolecularGraph


class ConfigurationError(ValueError):
    """Parameters and configuration disagree."""


@dataclass(frozen=True)
class EncoderConfig:
    variant: str = "gcn"  # "gcn" or "gin"
    num_layers: int = 5
    hidden_dim: int = 300
    readout: str = "mean"  # "mean", "sum" or "max"

    def __post_init__(self):
        if self.variant not in ("gcn", "gin"):
            raise ConfigurationError(f"unknown encoder variant {self.variant!r}")
        if self.num_layers < 1 or self.hidden_dim < 1:
            raise ConfigurationError("num_layers and hidden_dim must be >= 1")
        if self.readout not in ("mean", "sum", "max"):
            raise ConfigurationError(f"unknown readout {self.readout!r}")


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int,
           shape: tuple[int, ...]) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


def init_encoder_params(cfg: EncoderConfig,
                        rng: np.random.Generator) -> dict[str, Tensor]:
    d = cfg.hidden_dim
    params: dict[str, Tensor] = {
        "input.weight": glorot(rng, ATOM_FEATURE_DIM, d, (ATOM_FEATURE_DIM, d)),
        "input.bias": Tensor(np.zeros(d), requires_grad=True),
    }
    for layer in range(cfg.num_layers):
        p = f"layer{layer}"
        params[f"{p}.bond.weight"] = glorot(rng, BOND_FEATURE_DIM, d,
                                            (BOND_FEATURE_DIM, d))
        if cfg.variant == "gcn":
            params[f"{p}.weight"] = glorot(rng, d, d, (d, d))
            params[f"{p}.bias"] = Tensor(np.zeros(d), requires_grad=True)
        else:
            params[f"{p}.mlp1.weight"] = glorot(rng, d, d, (d, d))
            params[f"{p}.mlp1.bias"] = Tensor(np.zeros(d), requires_grad=True)
            params[f"{p}.mlp2.weight"] = glorot(rng, d, d, (d, d))
            params[f"{p}.mlp2.bias"] = Tensor(np.zeros(d), requires_grad=True)
            params[f"{p}.eps"] = Tensor(0.0, requires_grad=True)
    return params


def _check_params(cfg: EncoderConfig, params: dict[str, Tensor]) -> None:
    want = f"layer{cfg.num_layers - 1}.bond.weight"
    if want not in params:
        raise ConfigurationError(f"missing parameter {want!r} for {cfg}")
    if params["input.weight"].shape[1] != cfg.hidden_dim:
        raise ConfigurationError(
            f"hidden_dim {cfg.hidden_dim} does not match parameter shape "
            f"{params['input.weight'].shape}")


class _GraphIndex:
    """Constant per-graph arrays for vectorized message passing."""

    __slots__ = ("src", "dst", "edge_bond", "inv_neighbor_count", "n")

    def __init__(self, g: MolecularGraph):
        src, dst, eb = [], [], []
        for bi, b in enumerate(g.bonds):
            src.append(b.u); dst.append(b.v); eb.append(bi)
            src.append(b.v); dst.append(b.u); eb.append(bi)
        self.n = g.num_atoms
        self.src = np.asarray(src, dtype=np.intp)
        self.dst = np.asarray(dst, dtype=np.intp)
        self.edge_bond = np.asarray(eb, dtype=np.intp)
        counts = np.bincount(self.dst, minlength=self.n) + 1.0  # self loop
        self.inv_neighbor_count = 1.0 / counts


def _graph_index(g: MolecularGraph) -> _GraphIndex:
    # cached on the graph instance; rebuilding per encode call would dominate
    # the cost of training loops over small molecules
    idx = getattr(g, "_mp_index", None)
    if idx is None:
        idx = _GraphIndex(g)
        g._mp_index = idx
    return idx


def encode(g: MolecularGraph, cfg: EncoderConfig,
           params: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Return (node embeddings ``(N, d)``, graph embedding ``(d,)``)."""
    if g.atom_features is None or g.bond_features is None:
        raise ValueError("encode() needs a featurized graph")
    _check_params(cfg, params)
    idx = _graph_index(g)
    n = g.num_atoms

    x = Tensor(g.atom_features)
    h = ad.add(ad.matmul(x, params["input.weight"]), params["input.bias"])
    bond_x = Tensor(g.bond_features)

    for layer in range(cfg.num_layers):
        p = f"layer{layer}"
        bond_proj = ad.matmul(bond_x, params[f"{p}.bond.weight"])
        if g.num_bonds:
            msgs = ad.add(ad.gather_rows(h, idx.src),
                          ad.gather_rows(bond_proj, idx.edge_bond))
            neigh = ad.scatter_add_rows(msgs, idx.dst, n)
            agg = ad.add(h, neigh)
        else:
            agg = h
        if cfg.variant == "gcn":
            scaled = ad.mul(agg, Tensor(idx.inv_neighbor_count[:, None] *
                                        np.ones((1, cfg.hidden_dim))))
            h = ad.relu(ad.add(ad.matmul(scaled, params[f"{p}.weight"]),
                               params[f"{p}.bias"]))
        else:
            eps_scale = ad.add(params[f"{p}.eps"], Tensor(1.0))
            pre = ad.add(ad.mul(h, eps_scale),
                         neigh if g.num_bonds else Tensor(np.zeros((n, cfg.hidden_dim))))
            hidden = ad.relu(ad.add(ad.matmul(pre, params[f"{p}.mlp1.weight"]),
                                    params[f"{p}.mlp1.bias"]))
            h = ad.add(ad.matmul(hidden, params[f"{p}.mlp2.weight"]),
                       params[f"{p}.mlp2.bias"])

    return h, readout_masked(h, np.ones(n), cfg.readout)


def readout_masked(node_embeddings: Tensor, mask, readout: str = "mean") -> Tensor:
    """Pool only the rows where ``mask`` is 1; mean divides by their count."""
    mask = np.asarray(mask)
    if mask.shape[0] != node_embeddings.shape[0]:
        raise ad.ShapeError(
            f"mask length {mask.shape[0]} != node count {node_embeddings.shape[0]}")
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise ValueError("readout_masked: mask selects no nodes")
    selected = ad.gather_rows(node_embeddings, rows)
    if readout == "mean":
        return ad.mean(selected, axis=0)
    if readout == "sum":
        return ad.sum(selected, axis=0)
    if readout == "max":
        return ad.amax(selected, axis=0)
    raise ConfigurationError(f"unknown readout {readout!r}")
