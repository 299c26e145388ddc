"""Single-stage and two-stage fine-tuning of the feature-vector scorer.

Stage 1 trains with InfoNCE on hard-negative groups for a fixed number of
steps. Distillation training (stage 2, or single-stage) minimizes RankNet or
the discounted rank MSE on teacher-ranked lists and early-stops on mean
validation nDCG@10, returning the best checkpoint seen rather than the last.
All shuffling derives from (seed, epoch), so runs are bit-reproducible.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import losses, scorer
from .core import Qrels, QueryId, ScoredList, TrainingGroup, canonical_order, validate_id
from .distill_data import DistillDataset, FeaturesFn
from .evaluation import ndcg_at_k

logger = logging.getLogger(__name__)

LOSS_INFONCE = "infonce"
LOSS_RANKNET = "ranknet"
LOSS_ADR_MSE = "adr-mse"
DISTILL_LOSSES = (LOSS_RANKNET, LOSS_ADR_MSE)

STOP_MAX_STEPS = "max_steps"
STOP_EARLY = "early_stopped"

IMPROVEMENT_TOLERANCE = 1e-9


class TrainingError(RuntimeError):
    """Training aborted (for example, a non-finite loss)."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training stage.

    The default learning rate of 1e-2 is sized for the tiny feature-vector
    scorer; large-model setups typically run orders of magnitude lower, so
    treat it as a per-scorer knob, not a universal constant.
    """

    loss: str
    max_steps: int
    batch_size: int = 32
    learning_rate: float = 1e-2
    weight_decay: float = 0.01
    alpha: float = 1.0
    patience_steps: int = 100
    validation_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.loss not in (LOSS_INFONCE,) + DISTILL_LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience_steps < 1:
            raise ValueError("patience_steps must be >= 1")
        if self.validation_every < 1:
            raise ValueError("validation_every must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be >= 0")


@dataclass
class TrainReport:
    """What happened during one training stage."""

    steps_executed: int
    stop_reason: str
    loss_curve: list[tuple[int, float]]
    best_validation_ndcg10: float | None = None
    step_of_best: int | None = None
    validation_curve: list[tuple[int, float]] = field(default_factory=list)

    def metrics_lines(self) -> list[str]:
        """Line-delimited metrics: one JSON object per step or validation point."""
        by_step: dict[int, dict] = {}
        for step, value in self.loss_curve:
            by_step.setdefault(step, {"step": step})["loss"] = value
        for step, value in self.validation_curve:
            by_step.setdefault(step, {"step": step})["validation_ndcg10"] = value
        return [json.dumps(by_step[s], separators=(",", ":")) for s in sorted(by_step)]


@dataclass(frozen=True)
class RerankPool:
    """One query's candidates with their features, ready to re-score."""

    query: QueryId
    docs: tuple[str, ...]
    features: np.ndarray

    def __post_init__(self):
        validate_id(self.query, "query id")
        object.__setattr__(self, "docs", tuple(self.docs))
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != len(self.docs):
            raise ValueError("features must be (len(docs), F)")
        object.__setattr__(self, "features", feats)


@dataclass(frozen=True)
class ValidationSet:
    """Held-out candidates plus judgments for early stopping."""

    pools: tuple[RerankPool, ...]
    qrels: Qrels

    def __post_init__(self):
        object.__setattr__(self, "pools", tuple(self.pools))
        if not self.pools:
            raise ValueError("validation set must contain at least one pool")


def rerank(model: scorer.ScorerModel, pool: RerankPool) -> ScoredList:
    """Score a pool and return it in canonical ranked order."""
    scores = scorer.score_batch(model, pool.features)
    return ScoredList(pool.query, canonical_order(zip(pool.docs, scores)))


def mean_validation_ndcg(
    model: scorer.ScorerModel, validation: ValidationSet, k: int = 10
) -> float:
    values = [ndcg_at_k(rerank(model, pool), validation.qrels, k) for pool in validation.pools]
    return float(np.mean(values))


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(epoch,)))
    return rng.permutation(n)


def _batches(seed: int, n: int, batch_size: int):
    """Yield index batches forever: shuffled epochs of consecutive chunks."""
    epoch = 0
    while True:
        order = _epoch_order(seed, epoch, n)
        for start in range(0, n, batch_size):
            yield order[start : start + batch_size]
        epoch += 1


def train_stage1(
    model: scorer.ScorerModel,
    groups: Sequence[TrainingGroup],
    features_for: FeaturesFn,
    cfg: TrainConfig,
) -> tuple[scorer.ScorerModel, TrainReport]:
    """InfoNCE training on hard-negative groups for exactly max_steps steps.

    The batch loss is the arithmetic mean of per-group losses; one AdamW
    step runs per batch. There is no early stopping in this stage.
    """
    if cfg.loss != LOSS_INFONCE:
        raise ValueError(f"train_stage1 requires loss={LOSS_INFONCE!r}, got {cfg.loss!r}")
    if not groups:
        raise ValueError("train_stage1 requires at least one training group")
    feats = [np.asarray(features_for(g.query, g.members), dtype=np.float64) for g in groups]
    state = scorer.AdamWState.create(
        model.num_params, cfg.learning_rate, weight_decay=cfg.weight_decay
    )
    loss_curve: list[tuple[int, float]] = []
    batches = _batches(cfg.seed, len(groups), cfg.batch_size)
    for step in range(1, cfg.max_steps + 1):
        batch = next(batches)
        total = 0.0
        grad = np.zeros(model.num_params)
        for i in batch:
            out = losses.infonce(scorer.score_batch(model, feats[i]), positive_index=0)
            total += out.value
            grad += scorer.grad_batch(model, feats[i], out.grad)
        batch_loss = total / len(batch)
        if not np.isfinite(batch_loss):
            raise TrainingError(f"non-finite loss {batch_loss} at step {step}")
        model, state = scorer.adamw_step(model, state, grad / len(batch))
        loss_curve.append((step, batch_loss))
    report = TrainReport(
        steps_executed=cfg.max_steps, stop_reason=STOP_MAX_STEPS, loss_curve=loss_curve
    )
    return model, report


def _distill_loss_fn(cfg: TrainConfig) -> Callable[[np.ndarray], losses.LossOutput]:
    if cfg.loss == LOSS_RANKNET:
        return losses.ranknet
    approx = losses.ApproxConfig(alpha=cfg.alpha)
    return lambda s: losses.adr_mse(s, approx)


def train_distill(
    model: scorer.ScorerModel,
    dataset: DistillDataset,
    validation: ValidationSet,
    cfg: TrainConfig,
) -> tuple[scorer.ScorerModel, TrainReport]:
    """Listwise distillation training with nDCG@10 early stopping.

    Validates before the first step and every validation_every steps;
    improvement means strictly greater (beyond a 1e-9 tolerance). Stops when
    no improvement has been seen for patience_steps optimizer steps, or at
    max_steps. Returns the checkpoint with the best validation score.
    """
    if cfg.loss not in DISTILL_LOSSES:
        raise ValueError(f"train_distill requires a distillation loss, got {cfg.loss!r}")
    if not dataset:
        raise ValueError("train_distill requires a non-empty dataset")
    loss_fn = _distill_loss_fn(cfg)
    state = scorer.AdamWState.create(
        model.num_params, cfg.learning_rate, weight_decay=cfg.weight_decay
    )
    loss_curve: list[tuple[int, float]] = []
    validation_curve: list[tuple[int, float]] = []
    best_score = -np.inf
    best_params = model.params.copy()
    step_of_best = 0
    stop_reason = STOP_MAX_STEPS
    steps_executed = 0

    def validate(step: int, current: scorer.ScorerModel) -> None:
        nonlocal best_score, best_params, step_of_best
        value = mean_validation_ndcg(current, validation)
        validation_curve.append((step, value))
        if value > best_score + IMPROVEMENT_TOLERANCE:
            best_score = value
            best_params = current.params.copy()
            step_of_best = step

    validate(0, model)
    batches = _batches(cfg.seed, len(dataset), cfg.batch_size)
    for step in range(1, cfg.max_steps + 1):
        batch = next(batches)
        total = 0.0
        grad = np.zeros(model.num_params)
        for i in batch:
            rec = dataset[i]
            out = loss_fn(scorer.score_batch(model, rec.features))
            total += out.value
            grad += scorer.grad_batch(model, rec.features, out.grad)
        batch_loss = total / len(batch)
        if not np.isfinite(batch_loss):
            raise TrainingError(f"non-finite loss {batch_loss} at step {step}")
        model, state = scorer.adamw_step(model, state, grad / len(batch))
        loss_curve.append((step, batch_loss))
        steps_executed = step
        if step % cfg.validation_every == 0:
            validate(step, model)
            if step - step_of_best >= cfg.patience_steps:
                stop_reason = STOP_EARLY
                break
    if stop_reason == STOP_MAX_STEPS and steps_executed % cfg.validation_every != 0:
        validate(steps_executed, model)
    best_model = replace(model, params=best_params)
    report = TrainReport(
        steps_executed=steps_executed,
        stop_reason=stop_reason,
        loss_curve=loss_curve,
        best_validation_ndcg10=float(best_score),
        step_of_best=step_of_best,
        validation_curve=validation_curve,
    )
    return best_model, report


def train_two_stage(
    model: scorer.ScorerModel,
    groups: Sequence[TrainingGroup],
    features_for: FeaturesFn,
    dataset: DistillDataset,
    validation: ValidationSet,
    stage1_cfg: TrainConfig,
    distill_cfg: TrainConfig,
) -> tuple[scorer.ScorerModel, tuple[TrainReport, TrainReport]]:
    """Stage 1 (InfoNCE on labels) followed by distillation fine-tuning."""
    model, report1 = train_stage1(model, groups, features_for, stage1_cfg)
    model, report2 = train_distill(model, dataset, validation, distill_cfg)
    return model, (report1, report2)
