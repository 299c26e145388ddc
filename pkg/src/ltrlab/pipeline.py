"""Pipeline plumbing shared by the CLI and experiment harnesses.

Splits worlds into train/validation/test query sets, builds re-ranking
pools, evaluates checkpoints, and runs the depth x query-count ablation
grid over distillation datasets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import scorer, trainer
from .core import Qrels, QueryId, ScoredList
from .distill_data import DistillDataset, SyntheticWorld
from .evaluation import ndcg_at_k
from .trainer import RerankPool, TrainConfig, ValidationSet

logger = logging.getLogger(__name__)


def split_query_ids(
    query_ids: Sequence[QueryId], fractions: Mapping[str, float]
) -> dict[str, tuple[QueryId, ...]]:
    """Deterministic contiguous split of queries into named fractions.

    Fractions must be positive and sum to at most 1 (within rounding).
    Queries are independent draws in the synthetic world, so contiguous
    slices are already unbiased.
    """
    total = sum(fractions.values())
    if total > 1.0 + 1e-9:
        raise ValueError(f"split fractions sum to {total} > 1")
    if any(f <= 0 for f in fractions.values()):
        raise ValueError("split fractions must be positive")
    out: dict[str, tuple[QueryId, ...]] = {}
    start = 0
    for name, frac in fractions.items():
        count = int(round(frac * len(query_ids)))
        out[name] = tuple(query_ids[start : start + count])
        start += count
    return out


def restrict_run(
    run: Mapping[QueryId, ScoredList], queries: Sequence[QueryId]
) -> dict[QueryId, ScoredList]:
    return {q: run[q] for q in queries if q in run}


def build_rerank_pools(
    world: SyntheticWorld,
    run: Mapping[QueryId, ScoredList],
    queries: Sequence[QueryId],
    depth: int,
) -> list[RerankPool]:
    """Top-`depth` candidates of each query's run with their features."""
    pools = []
    for qid in queries:
        docs = run[qid].docs[:depth]
        pools.append(RerankPool(qid, docs, world.features_for(qid, docs)))
    return pools


def make_validation(
    world: SyntheticWorld, retriever: str, queries: Sequence[QueryId], depth: int
) -> ValidationSet:
    run = world.first_stage_run(retriever)
    pools = build_rerank_pools(world, run, queries, depth)
    return ValidationSet(tuple(pools), world.qrels().restrict(queries))


def evaluate_model(
    model: scorer.ScorerModel,
    pools: Sequence[RerankPool],
    qrels: Qrels,
    k: int = 10,
) -> dict[QueryId, float]:
    """Per-query nDCG@k of the model re-ranking each pool."""
    return {pool.query: ndcg_at_k(trainer.rerank(model, pool), qrels, k) for pool in pools}


def rerank_run(
    model: scorer.ScorerModel, pools: Sequence[RerankPool]
) -> dict[QueryId, ScoredList]:
    return {pool.query: trainer.rerank(model, pool) for pool in pools}


@dataclass(frozen=True)
class AblationCell:
    """One grid point of the data ablation."""

    depth: int
    query_fraction: float
    num_queries: int
    mean_ndcg10: float
    steps_executed: int


def subsample_queries(dataset: DistillDataset, fraction: float, seed: int) -> DistillDataset:
    """Seeded uniform subsample of a fraction of the dataset's queries."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"query fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return list(dataset)
    count = max(1, int(round(fraction * len(dataset))))
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(len(dataset),)))
    chosen = sorted(rng.choice(len(dataset), size=count, replace=False))
    return [dataset[i] for i in chosen]


def ablation_grid(
    datasets_by_depth: Mapping[int, DistillDataset],
    fractions: Sequence[float],
    base_model: scorer.ScorerModel,
    validation: ValidationSet,
    cfg: TrainConfig,
    subsample_seed: int = 0,
) -> list[AblationCell]:
    """Train one model per (depth, fraction) cell and record validation nDCG@10.

    Every cell starts from the same initial model and training config, so
    cells differ only in their training data.
    """
    cells: list[AblationCell] = []
    for depth in sorted(datasets_by_depth):
        for fraction in fractions:
            data = subsample_queries(datasets_by_depth[depth], fraction, subsample_seed)
            model, report = trainer.train_distill(base_model, data, validation, cfg)
            cells.append(
                AblationCell(
                    depth=depth,
                    query_fraction=fraction,
                    num_queries=len(data),
                    mean_ndcg10=float(report.best_validation_ndcg10),
                    steps_executed=report.steps_executed,
                )
            )
            logger.info(
                "ablation depth=%d fraction=%.2f queries=%d ndcg@10=%.4f",
                depth,
                fraction,
                len(data),
                cells[-1].mean_ndcg10,
            )
    return cells
