"""Fragment attribution, motif selection, and the recognition-phase losses.

Each fragment is scored by how much predicting from its masked readout moves
the task logits relative to predicting from the whole molecule, with the sign
oriented so that a positive score always supports the observed label. The
top scoring fragments form the positive motif, the bottom the negative
motif, and a margin term pushes the whole-graph embedding to look more like
its positive motif than its negative one.

Scores use pre-sigmoid logits. Signs flip exactly with the label, so the
per-task score is antisymmetric under label flips. When labels are not
available (inference on unlabeled molecules) scoring falls back to the
positive direction for every task: fragments that push logits up rank first.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import ceil

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .brics import Fragment
from .encoder import EncoderConfig, encode, glorot, readout_masked
from .graph import MolecularGraph

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RecognitionConfig:
    psi: float = 0.2          # fraction of fragments per motif
    margin: float = 0.5       # margin in the triplet term
    alpha: float = 0.1        # weight of the margin term
    max_epochs: int = 100
    patience: int = 3         # epochs of unchanged assignments before stopping

    def __post_init__(self):
        if not 0.0 < self.psi <= 1.0:
            raise ValueError(f"psi must lie in (0, 1], got {self.psi}")
        if self.margin <= 0:
            raise ValueError(f"margin must be positive, got {self.margin}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")


@dataclass
class AttributionScore:
    fragment_index: int
    per_task: np.ndarray      # NaN where the task label is unobserved
    aggregate: float          # mean over observed tasks


@dataclass(frozen=True)
class MotifAssignment:
    positive_fragments: tuple[int, ...]
    negative_fragments: tuple[int, ...]
    positive_nodes: tuple[int, ...]
    negative_nodes: tuple[int, ...]
    degenerate: bool = False  # single-fragment molecule: both motifs == whole


def init_head_params(hidden_dim: int, num_tasks: int,
                     rng: np.random.Generator) -> dict[str, Tensor]:
    """One-hidden-layer MLP head mapping a graph embedding to task logits."""
    d = hidden_dim
    return {
        "head.hidden.weight": glorot(rng, d, d, (d, d)),
        "head.hidden.bias": Tensor(np.zeros(d), requires_grad=True),
        "head.out.weight": glorot(rng, d, num_tasks, (d, num_tasks)),
        "head.out.bias": Tensor(np.zeros(num_tasks), requires_grad=True),
    }


def head_logits(h: Tensor, head_params: dict[str, Tensor]) -> Tensor:
    hidden = ad.relu(ad.add(ad.matmul(h, head_params["head.hidden.weight"]),
                            head_params["head.hidden.bias"]))
    return ad.add(ad.matmul(hidden, head_params["head.out.weight"]),
                  head_params["head.out.bias"])


def fragment_mask(fragment: Fragment, num_atoms: int) -> np.ndarray:
    mask = np.zeros(num_atoms)
    mask[list(fragment.node_indices)] = 1.0
    return mask


def attribute(g: MolecularGraph, fragments: list[Fragment],
              node_embeddings: Tensor, graph_embedding: Tensor,
              head_params: dict[str, Tensor], labels: np.ndarray | None,
              readout: str = "mean") -> list[AttributionScore]:
    """Score each fragment's signed contribution to every observed task.

    ``labels`` holds 0/1 with NaN for unobserved entries; ``None`` means no
    labels at all, in which case every task is scored in the positive
    direction. With labels present, at least one entry must be observed.
    """
    full = head_logits(graph_embedding, head_params).numpy()
    num_tasks = full.shape[0]
    if labels is not None:
        observed = ~np.isnan(labels)
        if not observed.any():
            raise ValueError("attribute() needs at least one observed label")
        signs = np.where(labels == 1.0, 1.0, -1.0)
    else:
        observed = np.ones(num_tasks, dtype=bool)
        signs = np.ones(num_tasks)

    scores = []
    n = g.num_atoms
    for j, frag in enumerate(fragments):
        sub = readout_masked(node_embeddings, fragment_mask(frag, n), readout)
        delta = head_logits(sub, head_params).numpy() - full
        per_task = np.where(observed, signs * delta, np.nan)
        aggregate = float(np.mean(per_task[observed]))
        scores.append(AttributionScore(j, per_task, aggregate))
    return scores


def select_motifs(scores: list[AttributionScore], fragments: list[Fragment],
                  psi: float) -> MotifAssignment:
    """Union of the ceil(psi*S) best and worst fragments; ties favor lower index."""
    count = len(scores)
    if count == 0:
        raise ValueError("select_motifs: no fragments scored")
    k = max(1, ceil(psi * count))
    by_high = sorted(range(count), key=lambda j: (-scores[j].aggregate, j))
    by_low = sorted(range(count), key=lambda j: (scores[j].aggregate, j))
    pos = tuple(sorted(by_high[:k]))
    neg = tuple(sorted(by_low[:k]))
    pos_nodes = tuple(sorted({i for j in pos for i in fragments[j].node_indices}))
    neg_nodes = tuple(sorted({i for j in neg for i in fragments[j].node_indices}))
    return MotifAssignment(pos, neg, pos_nodes, neg_nodes,
                           degenerate=(count == 1))


def motif_embeddings(node_embeddings: Tensor, assignment: MotifAssignment,
                     readout: str = "mean") -> tuple[Tensor, Tensor]:
    n = node_embeddings.shape[0]
    pos_mask = np.zeros(n)
    pos_mask[list(assignment.positive_nodes)] = 1.0
    neg_mask = np.zeros(n)
    neg_mask[list(assignment.negative_nodes)] = 1.0
    return (readout_masked(node_embeddings, pos_mask, readout),
            readout_masked(node_embeddings, neg_mask, readout))


def margin_loss(graph_embeddings: list[Tensor], positive: list[Tensor],
                negative: list[Tensor], margin: float) -> Tensor:
    """Mean of -max(sim(H, H+) - sim(H, H-) + margin, 0) over the batch.

    Similarity is the sigmoid of the dot product, so each term lies in
    [-(1+margin), 0] and equal motifs give exactly -margin.
    """
    if not graph_embeddings:
        raise ValueError("margin_loss: empty batch")
    total: Tensor | None = None
    eps = Tensor(margin)
    for h, hp, hn in zip(graph_embeddings, positive, negative):
        sim_pos = ad.sigmoid(ad.dot(h, hp))
        sim_neg = ad.sigmoid(ad.dot(h, hn))
        term = ad.neg(ad.max_with_zero(ad.add(ad.sub(sim_pos, sim_neg), eps)))
        total = term if total is None else ad.add(total, term)
    return ad.div(total, Tensor(float(len(graph_embeddings))))


@dataclass
class RecognitionState:
    """Tracks per-molecule assignments across epochs for the stability stop."""

    assignments: dict[int, MotifAssignment] = field(default_factory=dict)
    unchanged_epochs: int = 0

    def update_epoch(self, new: dict[int, MotifAssignment]) -> bool:
        """Record this epoch's assignments; True if identical to last epoch."""
        same = (self.assignments.keys() == new.keys()
                and all(self.assignments[i] == new[i] for i in new))
        self.assignments = new
        if same:
            self.unchanged_epochs += 1
        else:
            self.unchanged_epochs = 0
        return same


def recognition_forward(g: MolecularGraph, fragments: list[Fragment],
                        labels: np.ndarray | None, cfg: EncoderConfig,
                        encoder_params: dict[str, Tensor],
                        head_params: dict[str, Tensor],
                        psi: float) -> tuple[MotifAssignment, Tensor, Tensor, Tensor, Tensor]:
    """Select motifs (no gradient) then re-encode with gradients.

    Returns (assignment, graph embedding, positive motif embedding,
    negative motif embedding, task logits).
    """
    hv, h = encode(g, cfg, encoder_params)
    with ad.no_grad():
        scores = attribute(g, fragments, hv, h, head_params, labels,
                           cfg.readout)
        assignment = select_motifs(scores, fragments, psi)
    h_pos, h_neg = motif_embeddings(hv, assignment, cfg.readout)
    logits = head_logits(h, head_params)
    return assignment, h, h_pos, h_neg, logits
