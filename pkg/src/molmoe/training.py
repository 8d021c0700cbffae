"""Two-phase training: motif recognition, then mixture-of-experts fitting.

Phase 1 optimizes the encoder and a small prediction head with the task loss
plus the weighted margin term, re-selecting each molecule's positive and
negative motifs every epoch; it ends early once assignments have been stable
for a patience window. The assignments of the training molecules are then
frozen. Phase 2 trains the encoder and the expert head with the task loss
plus the weighted importance term.

Motif selection needs labels (the attribution sign is label-conditioned), so
held-out and new molecules are routed through the label-free selection rule
instead: fragments are ranked by how much they push logits up. The
recognition head is kept (frozen) after phase 1 exactly for this purpose.

All randomness derives from one seed; evaluation paths draw no random
numbers, so a trained model scores deterministically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .brics import Fragment
from .encoder import EncoderConfig, encode, init_encoder_params
from .graph import MolecularGraph
from .moe import (MoEConfig, MoEPrediction, importance_loss, init_moe_params,
                  predict, total_loss)
from .recognition import (MotifAssignment, RecognitionState, attribute,
                          head_logits, init_head_params, margin_loss,
                          motif_embeddings, recognition_forward, select_motifs)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class MoleculeRecord:
    graph: MolecularGraph
    labels: np.ndarray         # float vector, NaN marks a missing label
    scaffold_key: str
    fragments: list[Fragment]
    smiles: str


@dataclass
class Dataset:
    records: list[MoleculeRecord]
    task_names: list[str]
    ingest_summary: dict | None = None

    @property
    def num_tasks(self) -> int:
        return len(self.task_names)

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    encoder: str = "gcn"
    num_layers: int = 5
    hidden_dim: int = 300
    readout: str = "mean"
    batch_size: int = 256
    learning_rate: float = 0.001
    weight_decay: float = 1e-5
    num_experts: int = 5
    alpha: float = 0.1
    beta: float = 0.1
    psi: float = 0.2
    margin: float = 0.5
    epochs_recognition: int = 100
    epochs_total: int = 200
    patience: int = 3
    importance_threshold: float = 0.1
    temperature: float = 0.1
    split: str = "scaffold"
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    optimizer: str = "sgd"

    # search grids used by the experiments this code base serves
    BATCH_SIZE_GRID = (128, 256, 512)
    LEARNING_RATE_GRID = (0.0005, 0.001, 0.005)
    WEIGHT_DECAY_GRID = (0.0, 1e-5, 1e-4)
    NUM_EXPERTS_GRID = (1, 3, 5, 7, 9)
    LOSS_BALANCE_GRID = (0.01, 0.1, 1.0, 5.0)
    PSI_GRID = (0.1, 0.2, 0.3)

    def __post_init__(self):
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {self.split_ratios}")
        if self.split not in ("scaffold", "random"):
            raise ValueError(f"unknown split {self.split!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1 or self.epochs_recognition < 0 or self.epochs_total < 0:
            raise ValueError("batch_size must be >= 1 and epoch counts >= 0")

    def ablation(self) -> "TrainConfig":
        """Single expert, no importance loss, whole molecule as both motifs."""
        return replace(self, num_experts=1, beta=0.0, psi=1.0)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.encoder, self.num_layers, self.hidden_dim,
                             self.readout)

    def moe_config(self, num_tasks: int) -> MoEConfig:
        return MoEConfig(self.num_experts, self.hidden_dim, num_tasks,
                         self.temperature, self.importance_threshold)


@dataclass
class LossReport:
    epoch: int
    phase: int
    l_task: float
    l_margin: float | None = None
    l_rec: float | None = None
    l_imp: float | None = None
    l_total: float | None = None
    auc_valid: float | None = None

    def to_dict(self) -> dict:
        out = {"record": "epoch", "epoch": self.epoch, "phase": self.phase,
               "l_task": float(self.l_task)}
        for key in ("l_margin", "l_rec", "l_imp", "l_total", "auc_valid"):
            value = getattr(self, key)
            if value is not None:
                out[key] = float(value)
        return out


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def random_split(n: int, ratios: Sequence[float],
                 rng: np.random.Generator) -> tuple[list[int], list[int], list[int]]:
    order = rng.permutation(n).tolist()
    n_train = int(round(ratios[0] * n))
    n_valid = int(round(ratios[1] * n))
    return (sorted(order[:n_train]),
            sorted(order[n_train:n_train + n_valid]),
            sorted(order[n_train + n_valid:]))


def scaffold_split(dataset: Dataset, ratios: Sequence[float],
                   seed: int) -> tuple[list[int], list[int], list[int]]:
    """Whole scaffold groups go greedily to train, then valid, then test.

    Groups are taken largest first (ties by key), so no scaffold ever spans
    two splits. Fewer than three scaffold groups falls back to a random
    split, with a warning.
    """
    groups: dict[str, list[int]] = {}
    for i, rec in enumerate(dataset.records):
        groups.setdefault(rec.scaffold_key, []).append(i)
    if len(groups) < 3:
        log.warning("only %d scaffold group(s); falling back to random split",
                    len(groups))
        return random_split(len(dataset), ratios, np.random.default_rng(seed))
    ordered = sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[0]))
    n = len(dataset)
    target_train = ratios[0] * n
    target_valid = ratios[1] * n
    train: list[int] = []
    valid: list[int] = []
    test: list[int] = []
    for _, members in ordered:
        if len(train) < target_train:
            train.extend(members)
        elif len(valid) < target_valid:
            valid.extend(members)
        else:
            test.extend(members)
    return sorted(train), sorted(valid), sorted(test)


# ---------------------------------------------------------------------------
# Losses and metrics
# ---------------------------------------------------------------------------

def task_loss(logits: list[Tensor], labels: list[np.ndarray]) -> Tensor:
    """Mean binary cross-entropy (from logits) over observed label entries."""
    total: Tensor | None = None
    count = 0
    for z, y in zip(logits, labels):
        observed = ~np.isnan(y)
        if not observed.any():
            continue
        mask = Tensor(observed.astype(float))
        target = Tensor(np.where(observed, y, 0.0))
        # stable BCE: softplus(z) - y*z, masked to observed entries
        entry = ad.sub(ad.softplus(z), ad.mul(target, z))
        contrib = ad.sum(ad.mul(entry, mask))
        total = contrib if total is None else ad.add(total, contrib)
        count += int(observed.sum())
    if total is None or count == 0:
        raise ValueError("task_loss: batch has no observed labels")
    return ad.div(total, Tensor(float(count)))


def _binary_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with half credit for ties."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_auc(scores: np.ndarray, labels: np.ndarray,
            return_per_task: bool = False):
    """Mean AUC over tasks that have both classes; others are skipped.

    ``scores`` and ``labels`` are (B, T); missing labels are NaN and their
    entries are ignored.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    labels = np.atleast_2d(np.asarray(labels, dtype=float))
    if scores.ndim == 2 and scores.shape[0] == 1 and labels.shape[0] != 1:
        scores, labels = scores.T, labels.T
    per_task = np.full(labels.shape[1], np.nan)
    skipped = 0
    for t in range(labels.shape[1]):
        observed = ~np.isnan(labels[:, t])
        y = labels[observed, t]
        if observed.sum() == 0 or y.min() == y.max():
            skipped += 1
            continue
        per_task[t] = _binary_auc(scores[observed, t], y)
    valid = ~np.isnan(per_task)
    if not valid.any():
        raise ValueError("roc_auc: no task has both classes")
    if skipped:
        log.info("roc_auc: skipped %d single-class task(s)", skipped)
    mean = float(per_task[valid].mean())
    return (mean, per_task) if return_per_task else mean


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

class SGD:
    """Plain gradient descent with decoupled weight decay."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 weight_decay: float = 0.0):
        self.params = dict(sorted(params.items()))
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self) -> None:
        for p in self.params.values():
            if p.grad is None:
                continue
            p.data = p.data - self.lr * p.grad
            if self.weight_decay:
                p.data = p.data - self.lr * self.weight_decay * p.data

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


class Adam:
    """Adam with decoupled weight decay; available behind the config flag."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 weight_decay: float = 0.0, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(sorted(params.items()))
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            m_hat = self.m[name] / (1 - self.b1 ** self.t)
            v_hat = self.v[name] / (1 - self.b2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay:
                p.data = p.data - self.lr * self.weight_decay * p.data

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def _make_optimizer(kind: str, params: dict[str, Tensor], lr: float,
                    weight_decay: float):
    cls = SGD if kind == "sgd" else Adam
    return cls(params, lr, weight_decay)


# ---------------------------------------------------------------------------
# The model bundle
# ---------------------------------------------------------------------------

@dataclass
class Model:
    config: TrainConfig
    num_tasks: int
    encoder_params: dict[str, Tensor]
    head_params: dict[str, Tensor]
    moe_params: dict[str, Tensor]
    frozen_assignments: dict[int, MotifAssignment] = field(default_factory=dict)
    phase: int = 0
    rng_state: dict | None = None  # routing-noise generator state at save time

    @classmethod
    def initialize(cls, config: TrainConfig, num_tasks: int,
                   rng: np.random.Generator) -> "Model":
        enc_cfg = config.encoder_config()
        return cls(
            config=config,
            num_tasks=num_tasks,
            encoder_params=init_encoder_params(enc_cfg, rng),
            head_params=init_head_params(config.hidden_dim, num_tasks, rng),
            moe_params=init_moe_params(config.moe_config(num_tasks), rng),
        )

    def all_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for group, prefix in ((self.encoder_params, "encoder."),
                              (self.head_params, ""),
                              (self.moe_params, "moe.")):
            for name, p in group.items():
                out[prefix + name] = p
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.all_params().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, p in self.all_params().items():
            p.data = snap[name].copy()

    def select_unlabeled(self, record: MoleculeRecord) -> MotifAssignment:
        """Label-free motif selection for held-out or new molecules."""
        with ad.no_grad():
            hv, h = encode(record.graph, self.config.encoder_config(),
                           self.encoder_params)
            scores = attribute(record.graph, record.fragments, hv, h,
                               self.head_params, labels=None,
                               readout=self.config.readout)
            return select_motifs(scores, record.fragments, self.config.psi)

    def predict_record(self, record: MoleculeRecord,
                       assignment: MotifAssignment | None = None,
                       rng: np.random.Generator | None = None,
                       ) -> tuple[MoEPrediction, MotifAssignment]:
        if assignment is None:
            assignment = self.select_unlabeled(record)
        hv, _ = encode(record.graph, self.config.encoder_config(),
                       self.encoder_params)
        h_pos, h_neg = motif_embeddings(hv, assignment, self.config.readout)
        pred = predict(h_pos, h_neg, self.moe_params,
                       self.config.moe_config(self.num_tasks), rng)
        return pred, assignment

    def predict_scores(self, dataset: Dataset, indices: Sequence[int]) -> np.ndarray:
        """Sigmoid task scores, (len(indices), T); deterministic, no noise."""
        out = np.zeros((len(indices), self.num_tasks))
        with ad.no_grad():
            for row, i in enumerate(indices):
                pred, _ = self.predict_record(dataset.records[i])
                out[row] = 1.0 / (1.0 + np.exp(-pred.y_logits.data))
        return out


def evaluate(model: Model, dataset: Dataset, indices: Sequence[int],
             return_per_task: bool = False):
    scores = model.predict_scores(dataset, indices)
    labels = np.stack([dataset.records[i].labels for i in indices])
    return roc_auc(scores, labels, return_per_task)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: Model
    reports: list[LossReport]
    summary: dict
    splits: tuple[list[int], list[int], list[int]]


def _batches(order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield order[start:start + size]


def _check_finite(value: float, context: str) -> None:
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite loss in {context}: {value}")


def compute_labeled_assignments(model: Model, dataset: Dataset,
                                indices: Sequence[int]) -> dict[int, MotifAssignment]:
    out: dict[int, MotifAssignment] = {}
    with ad.no_grad():
        for i in indices:
            rec = dataset.records[i]
            hv, h = encode(rec.graph, model.config.encoder_config(),
                           model.encoder_params)
            scores = attribute(rec.graph, rec.fragments, hv, h,
                               model.head_params, rec.labels,
                               model.config.readout)
            out[i] = select_motifs(scores, rec.fragments, model.config.psi)
    return out


class _Trainer:
    def __init__(self, dataset: Dataset, config: TrainConfig):
        self.dataset = dataset
        self.config = config
        seeds = np.random.SeedSequence(config.seed).spawn(4)
        self.rng_shuffle = np.random.default_rng(seeds[1])
        self.rng_noise = np.random.default_rng(seeds[2])
        if config.split == "scaffold":
            self.splits = scaffold_split(dataset, config.split_ratios,
                                         config.seed)
        else:
            self.splits = random_split(len(dataset), config.split_ratios,
                                       np.random.default_rng(seeds[3]))
        if not self.splits[0]:
            raise ValueError("empty training split")
        self.model = Model.initialize(config, dataset.num_tasks,
                                      np.random.default_rng(seeds[0]))
        self.reports: list[LossReport] = []
        self.last_good = self.model.snapshot()
        self.stopped_early = False
        self.best_auc = -np.inf
        self.best_snap = self.model.snapshot()
        self.rec_state = RecognitionState()

    def run_phase1(self) -> None:
        config, model = self.config, self.model
        train_idx, valid_idx, _ = self.splits
        enc_cfg = config.encoder_config()
        params = {**{f"encoder.{k}": v for k, v in model.encoder_params.items()},
                  **model.head_params}
        optimizer = _make_optimizer(config.optimizer, params,
                                    config.learning_rate, config.weight_decay)
        model.phase = 1
        for epoch in range(config.epochs_recognition):
            order = self.rng_shuffle.permutation(train_idx)
            assignments: dict[int, MotifAssignment] = {}
            sums = np.zeros(3)
            for batch in _batches(order, config.batch_size):
                h_list, hp_list, hn_list, logit_list, label_list = [], [], [], [], []
                for i in batch:
                    rec = self.dataset.records[i]
                    assignment, h, hp, hn, logits = recognition_forward(
                        rec.graph, rec.fragments, rec.labels, enc_cfg,
                        model.encoder_params, model.head_params, config.psi)
                    assignments[int(i)] = assignment
                    h_list.append(h); hp_list.append(hp); hn_list.append(hn)
                    logit_list.append(logits); label_list.append(rec.labels)
                l_task = task_loss(logit_list, label_list)
                l_margin = margin_loss(h_list, hp_list, hn_list, config.margin)
                l_rec = ad.add(l_task, ad.mul(Tensor(config.alpha), l_margin))
                _check_finite(l_rec.item(), f"recognition epoch {epoch}")
                ad.backward(l_rec)
                optimizer.step()
                optimizer.zero_grad()
                sums += len(batch) * np.array(
                    [l_task.item(), l_margin.item(), l_rec.item()])
            means = sums / len(train_idx)
            self.reports.append(LossReport(
                epoch=epoch, phase=1, l_task=means[0], l_margin=means[1],
                l_rec=means[2],
                auc_valid=_safe_phase1_auc(model, self.dataset, valid_idx)))
            self.last_good = model.snapshot()
            self.rec_state.update_epoch(assignments)
            if self.rec_state.unchanged_epochs >= config.patience:
                log.info("recognition assignments stable for %d epochs; "
                         "stopping at epoch %d", config.patience, epoch)
                self.stopped_early = True
                break

    def freeze_assignments(self) -> None:
        if self.rec_state.assignments:
            self.model.frozen_assignments = dict(self.rec_state.assignments)
        else:  # zero recognition epochs: select once with the fresh head
            self.model.frozen_assignments = compute_labeled_assignments(
                self.model, self.dataset, self.splits[0])
        self.model.phase = 2

    def run_phase2(self) -> None:
        config, model = self.config, self.model
        train_idx, valid_idx, _ = self.splits
        moe_cfg = config.moe_config(self.dataset.num_tasks)
        params = {**{f"encoder.{k}": v for k, v in model.encoder_params.items()},
                  **{f"moe.{k}": v for k, v in model.moe_params.items()}}
        optimizer = _make_optimizer(config.optimizer, params,
                                    config.learning_rate, config.weight_decay)
        for epoch in range(config.epochs_total):
            order = self.rng_shuffle.permutation(train_idx)
            sums = np.zeros(3)
            for batch in _batches(order, config.batch_size):
                logit_list, label_list, r_pos_list, r_neg_list = [], [], [], []
                for i in batch:
                    rec = self.dataset.records[i]
                    pred, _ = model.predict_record(
                        rec, model.frozen_assignments[int(i)], self.rng_noise)
                    logit_list.append(pred.y_logits)
                    label_list.append(rec.labels)
                    r_pos_list.append(pred.r_pos)
                    r_neg_list.append(pred.r_neg)
                l_task = task_loss(logit_list, label_list)
                l_imp = importance_loss(r_pos_list, r_neg_list,
                                        moe_cfg.importance_threshold)
                l_total = total_loss(l_task, l_imp, config.beta)
                _check_finite(l_total.item(), f"expert epoch {epoch}")
                ad.backward(l_total)
                optimizer.step()
                optimizer.zero_grad()
                sums += len(batch) * np.array(
                    [l_task.item(), l_imp.item(), l_total.item()])
            means = sums / len(train_idx)
            auc_valid = None
            if valid_idx:
                try:
                    auc_valid = evaluate(model, self.dataset, valid_idx)
                except ValueError:
                    auc_valid = None
            self.reports.append(LossReport(
                epoch=epoch, phase=2, l_task=means[0], l_imp=means[1],
                l_total=means[2], auc_valid=auc_valid))
            self.last_good = model.snapshot()
            if auc_valid is not None and auc_valid > self.best_auc:
                self.best_auc = auc_valid
                self.best_snap = model.snapshot()


def train(dataset: Dataset, config: TrainConfig) -> TrainResult:
    """Run both phases and return the best-validation model plus reports.

    A non-finite loss aborts training; the model is rolled back to the last
    epoch that completed and the summary carries the diagnostic.
    """
    trainer = _Trainer(dataset, config)
    diverged: str | None = None
    try:
        trainer.run_phase1()
        trainer.freeze_assignments()
        trainer.run_phase2()
    except TrainingDiverged as err:
        log.error("aborting: %s", err)
        diverged = str(err)
        trainer.model.restore(trainer.last_good)

    model = trainer.model
    if diverged is None:
        if np.isfinite(trainer.best_auc):
            model.restore(trainer.best_snap)
        else:
            model.restore(trainer.last_good)

    model.rng_state = trainer.rng_noise.bit_generator.state
    train_idx, valid_idx, test_idx = trainer.splits
    reports = trainer.reports
    summary: dict = {
        "record": "summary",
        "seed": config.seed,
        "phase1_epochs": sum(1 for r in reports if r.phase == 1),
        "phase1_early_stop": trainer.stopped_early,
        "phase2_epochs": sum(1 for r in reports if r.phase == 2),
        "best_valid_auc": trainer.best_auc if np.isfinite(trainer.best_auc) else None,
        "split_sizes": [len(train_idx), len(valid_idx), len(test_idx)],
    }
    if diverged is not None:
        summary["aborted"] = diverged
    if test_idx and model.phase == 2:
        try:
            summary["test_auc"] = evaluate(model, dataset, test_idx)
        except ValueError:
            summary["test_auc"] = None
    return TrainResult(model, reports, summary, trainer.splits)


def _safe_phase1_auc(model: Model, dataset: Dataset,
                     indices: Sequence[int]) -> float | None:
    """Validation AUC from the recognition head during phase 1."""
    if not indices:
        return None
    scores = np.zeros((len(indices), dataset.num_tasks))
    with ad.no_grad():
        for row, i in enumerate(indices):
            rec = dataset.records[i]
            _, h = encode(rec.graph, model.config.encoder_config(),
                          model.encoder_params)
            z = head_logits(h, model.head_params).data
            scores[row] = 1.0 / (1.0 + np.exp(-z))
    labels = np.stack([dataset.records[i].labels for i in indices])
    try:
        return roc_auc(scores, labels)
    except ValueError:
        return None
