"""Dual-router mixture-of-experts prediction head.

Positive and negative motif embeddings feed two separate banks of linear
experts. A softmax router weighs the positive bank from the projected
positive embedding alone; the negative bank's router sees the projected
positive and negative embeddings jointly, which lets the model discount a
harmful motif instead of merely averaging it in. Task logits are a learned
linear combination of the two weighted expert outputs, initialized to their
plain average.

Router logits are divided by a fixed temperature and, during training only,
perturbed with Gaussian noise before the softmax; evaluation is noise-free
and therefore deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import ConfigurationError, glorot


@dataclass(frozen=True)
class MoEConfig:
    num_experts: int = 5      # per bank
    hidden_dim: int = 300
    num_tasks: int = 1
    temperature: float = 0.1
    importance_threshold: float = 0.1  # cv^2 below this gets no gradient

    def __post_init__(self):
        if self.num_experts < 1:
            raise ConfigurationError("need at least one expert per bank")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be positive")

    @property
    def noise_scale(self) -> float:
        # commensurate with routing-score granularity
        return 1.0 / self.num_experts


def init_moe_params(cfg: MoEConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    d, t, k = cfg.hidden_dim, cfg.num_tasks, cfg.num_experts
    params: dict[str, Tensor] = {}
    for kind in ("pos", "neg"):
        for i in range(k):
            params[f"expert.{kind}.{i}.weight"] = glorot(rng, d, t, (d, t))
    params["router.pos.proj.weight"] = glorot(rng, d, d, (d, d))
    params["router.pos.proj.bias"] = Tensor(np.zeros(d), requires_grad=True)
    params["router.pos.map"] = glorot(rng, d, k, (k, d))
    params["router.neg.proj.weight"] = glorot(rng, d, d, (d, d))
    params["router.neg.proj.bias"] = Tensor(np.zeros(d), requires_grad=True)
    params["router.neg.map"] = glorot(rng, 2 * d, k, (k, 2 * d))
    # combiner starts as the average of the two logit streams
    eye = np.eye(t)
    params["combiner.weight"] = Tensor(
        np.concatenate([0.5 * eye, 0.5 * eye], axis=0), requires_grad=True)
    params["combiner.bias"] = Tensor(np.zeros(t), requires_grad=True)
    return params


def expert_forward(params: dict[str, Tensor], kind: str, h_sub: Tensor,
                   num_experts: int) -> list[Tensor]:
    """Per-expert task logits ``h_sub @ W_k`` for one bank."""
    key = f"expert.{kind}.0.weight"
    if params[key].shape[0] != h_sub.shape[0]:
        raise ConfigurationError(
            f"embedding width {h_sub.shape[0]} does not match expert shape "
            f"{params[key].shape}")
    return [ad.matmul(h_sub, params[f"expert.{kind}.{i}.weight"])
            for i in range(num_experts)]


def _route(z: Tensor, routing_matrix: Tensor, cfg: MoEConfig,
           rng: np.random.Generator | None) -> Tensor:
    logits = ad.div(ad.matmul(routing_matrix, z), Tensor(cfg.temperature))
    if rng is not None:
        noise = rng.normal(0.0, cfg.noise_scale, cfg.num_experts)
        logits = ad.add(logits, Tensor(noise))
    return ad.softmax(logits, axis=0)


def route_positive(h_pos: Tensor, params: dict[str, Tensor], cfg: MoEConfig,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Routing distribution over the positive bank; ``rng`` enables noise."""
    z = ad.add(ad.matmul(h_pos, params["router.pos.proj.weight"]),
               params["router.pos.proj.bias"])
    return _route(z, params["router.pos.map"], cfg, rng)


def route_negative(h_pos: Tensor, h_neg: Tensor, params: dict[str, Tensor],
                   cfg: MoEConfig,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Joint routing for the negative bank from both projected motifs."""
    z_pos = ad.add(ad.matmul(h_pos, params["router.neg.proj.weight"]),
                   params["router.neg.proj.bias"])
    z_neg = ad.add(ad.matmul(h_neg, params["router.neg.proj.weight"]),
                   params["router.neg.proj.bias"])
    z = ad.concat([z_pos, z_neg], axis=0)
    return _route(z, params["router.neg.map"], cfg, rng)


@dataclass
class MoEPrediction:
    o_pos: Tensor             # (T,) weighted positive-bank logits
    o_neg: Tensor             # (T,) weighted negative-bank logits
    y_logits: Tensor          # (T,) combined task logits
    r_pos: Tensor             # (K,) routing scores, positive bank
    r_neg: Tensor             # (K,) routing scores, negative bank


def _combine(experts: list[Tensor], routing: Tensor) -> Tensor:
    stacked = ad.concat([ad.reshape(e, (1, e.shape[0])) for e in experts],
                        axis=0)
    return ad.matmul(routing, stacked)


def predict(h_pos: Tensor, h_neg: Tensor, params: dict[str, Tensor],
            cfg: MoEConfig,
            rng: np.random.Generator | None = None) -> MoEPrediction:
    """Full head forward pass. Pass ``rng`` only during training."""
    r_pos = route_positive(h_pos, params, cfg, rng)
    r_neg = route_negative(h_pos, h_neg, params, cfg, rng)
    e_pos = expert_forward(params, "pos", h_pos, cfg.num_experts)
    e_neg = expert_forward(params, "neg", h_neg, cfg.num_experts)
    o_pos = _combine(e_pos, r_pos)
    o_neg = _combine(e_neg, r_neg)
    y = ad.add(ad.matmul(ad.concat([o_pos, o_neg], axis=0),
                         params["combiner.weight"]),
               params["combiner.bias"])
    return MoEPrediction(o_pos, o_neg, y, r_pos, r_neg)


def _cv_squared(importance: Tensor) -> Tensor:
    m = ad.mean(importance)
    deviation = ad.sub(importance, m)
    variance = ad.mean(ad.mul(deviation, deviation))  # population variance
    return ad.div(variance, ad.mul(m, m))


def importance_loss(batch_r_pos: list[Tensor], batch_r_neg: list[Tensor],
                    threshold: float) -> Tensor:
    """Squared coefficient of variation of summed routing scores, per bank.

    Banks whose cv^2 falls below ``threshold`` contribute their value but no
    gradient. Softmax positivity makes a zero mean importance impossible.
    """
    total: Tensor | None = None
    for batch in (batch_r_pos, batch_r_neg):
        if not batch:
            raise ValueError("importance_loss: empty batch")
        importance = batch[0]
        for r in batch[1:]:
            importance = ad.add(importance, r)
        assert importance.data.min() > 0.0
        cv2 = _cv_squared(importance)
        if cv2.item() < threshold:
            cv2 = ad.stop_gradient(cv2)
        total = cv2 if total is None else ad.add(total, cv2)
    return total


def total_loss(task_loss: Tensor, imp_loss: Tensor, beta: float) -> Tensor:
    return ad.add(task_loss, ad.mul(Tensor(beta), imp_loss))
