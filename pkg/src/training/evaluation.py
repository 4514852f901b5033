"""
Ranking evaluation, per-bucket breakdowns and frozen zero-shot transfer.
"""

import logging
import math
import time
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from src.exceptions import AlignmentError, ConfigError, InvalidAlignmentError
from src.kg.core import G1, G2, AlignmentTask, KnowledgeGraph, SeedAlignment, one_hop_relations
from src.models.models import BREAKDOWNS, CANDIDATE_POOLS, DIRECTIONS, HITS_CUTOFFS, Metrics
from src.network.model import EntityAlignmentModel, TaskContext, check_compatible

logger = logging.getLogger(__name__)

DIRECTION_TAGS = (("g1_to_g2", G1), ("g2_to_g1", G2))


def rank_targets(scores: np.ndarray, candidates: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """1-based rank of each target within its score row.

    Ties are broken by candidate id ascending, so a target only loses to an
    equal score held by a smaller id.
    """
    scores = np.asarray(scores)
    candidates = np.asarray(candidates)
    positions = np.array([np.flatnonzero(candidates == t)[0] if np.any(candidates == t) else -1 for t in targets])
    if np.any(positions < 0):
        missing = int(np.asarray(targets)[int(np.argmax(positions < 0))])
        raise InvalidAlignmentError(f"true counterpart {missing} is not among the candidates")
    target_scores = scores[np.arange(len(targets)), positions][:, None]
    higher = (scores > target_scores).sum(axis=1)
    tied_before = ((scores == target_scores) & (candidates[None, :] < np.asarray(targets)[:, None])).sum(axis=1)
    return 1 + higher + tied_before


def metrics_from_ranks(ranks: Sequence[int], direction: str = "g1_to_g2", candidate_pool: str = "test",
                       num_degenerate: int = 0, cutoffs: Iterable[int] = HITS_CUTOFFS) -> Metrics:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        return Metrics(direction=direction, candidate_pool=candidate_pool,
                       hits_at={k: 0.0 for k in cutoffs})
    return Metrics(
        mrr=float(np.mean(1.0 / ranks)),
        hits_at={k: float(np.mean(ranks <= k)) for k in cutoffs},
        num_queries=int(ranks.size),
        num_degenerate_queries=int(num_degenerate),
        direction=direction,
        candidate_pool=candidate_pool,
    )


def mean_metrics(forward: Metrics, backward: Metrics) -> Metrics:
    """Average of the two directional evaluations"""
    return Metrics(
        mrr=(forward.mrr + backward.mrr) / 2,
        hits_at={k: (forward.hits_at[k] + backward.hits_at[k]) / 2 for k in forward.hits_at},
        num_queries=forward.num_queries + backward.num_queries,
        num_degenerate_queries=forward.num_degenerate_queries + backward.num_degenerate_queries,
        direction="mean",
        candidate_pool=forward.candidate_pool,
        wall_clock_seconds=forward.wall_clock_seconds + backward.wall_clock_seconds,
        per_direction={forward.direction: forward, backward.direction: backward},
    )


def candidate_pool(task: AlignmentTask, pairs: SeedAlignment, tag: str, pool: str) -> np.ndarray:
    """Opposite-side candidates for queries from graph ``tag``"""
    if pool not in CANDIDATE_POOLS:
        raise ConfigError(f"unknown candidate pool {pool!r}")
    if pool == "all":
        other = task.g2 if tag == G1 else task.g1
        return np.arange(other.num_entities, dtype=np.int64)
    side = pairs.right if tag == G1 else pairs.left
    return np.unique(side)


def rank_direction(model: EntityAlignmentModel, ctx: TaskContext, pairs: SeedAlignment, tag: str,
                   pool: str = "test", k: Optional[int] = None, batch_size: Optional[int] = None,
                   progress: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Ranks of the true counterparts for queries rooted in graph ``tag``, with
    a per-query flag for queries that found no anchors"""
    candidates = candidate_pool(ctx.task, pairs, tag, pool)
    queries = pairs.left if tag == G1 else pairs.right
    targets = pairs.right if tag == G1 else pairs.left
    batch_size = batch_size or model.config.batch_size
    cand_index = torch.as_tensor(candidates)

    ranks: List[np.ndarray] = []
    degenerate: List[bool] = []
    starts = range(0, len(queries), batch_size)
    for start in tqdm(starts, desc=f"rank {tag}", disable=not progress, leave=False):
        chunk = queries[start:start + batch_size]
        emb, activations = model.encode_queries(ctx, [(tag, int(e)) for e in chunk], k=k)
        own = emb.h1 if tag == G1 else emb.h2
        other = emb.h2 if tag == G1 else emb.h1
        rows = torch.arange(len(chunk))
        scores = model.matcher(own[rows, torch.as_tensor(chunk)], other[:, cand_index])
        ranks.append(rank_targets(scores.cpu().numpy(), candidates, targets[start:start + batch_size]))
        degenerate.extend(a.degenerate for a in activations)
    if not ranks:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool)
    return np.concatenate(ranks), np.asarray(degenerate, dtype=bool)


def directional_ranks(model: EntityAlignmentModel, task: AlignmentTask, pairs: Optional[SeedAlignment],
                      direction: str, candidates: str, anchors: Optional[SeedAlignment], k: Optional[int],
                      context: Optional[TaskContext], progress: bool) -> Dict[str, Tuple[np.ndarray, np.ndarray, float]]:
    """(ranks, degenerate flags, seconds) per requested direction name"""
    if direction not in DIRECTIONS:
        raise ConfigError(f"unknown direction {direction!r}")
    pairs = task.test_pairs if pairs is None else pairs
    if len(pairs) == 0:
        raise InvalidAlignmentError("no evaluation pairs")
    pairs.validate(task.g1, task.g2)
    check_compatible(model, model.config.ablation if context is None else context.ablation)
    ctx = context or model.context(task, anchors)

    was_training = model.training
    model.eval()
    results = {}
    try:
        with torch.no_grad():
            for name, tag in DIRECTION_TAGS:
                if direction not in (name, "mean"):
                    continue
                started = time.perf_counter()
                ranks, degenerate = rank_direction(model, ctx, pairs, tag, candidates, k, progress=progress)
                results[name] = (ranks, degenerate, time.perf_counter() - started)
    finally:
        model.train(was_training)
    return results


def evaluate(model: EntityAlignmentModel, task: AlignmentTask, pairs: Optional[SeedAlignment] = None,
             direction: str = "g1_to_g2", candidates: str = "test", anchors: Optional[SeedAlignment] = None,
             k: Optional[int] = None, context: Optional[TaskContext] = None,
             progress: bool = False) -> Metrics:
    """MRR and Hits@{1,5,10} of ``pairs`` (default: the test split)"""
    ranked = directional_ranks(model, task, pairs, direction, candidates, anchors, k, context, progress)
    results = {}
    for name, (ranks, degenerate, seconds) in ranked.items():
        metrics = metrics_from_ranks(ranks, name, candidates, int(degenerate.sum()))
        metrics.wall_clock_seconds = seconds
        results[name] = metrics

    if direction == "mean":
        return mean_metrics(results["g1_to_g2"], results["g2_to_g1"])
    return results[direction]


def query_statistic(g: KnowledgeGraph, entities: np.ndarray, by: str = "degree") -> np.ndarray:
    """Per-entity structural statistic used to stratify queries.

    ``degree`` counts the facts touching the entity (either end);
    ``relations`` counts the distinct original relations among them.
    """
    entities = np.asarray(entities, dtype=np.int64)
    if by == "degree":
        return g.in_degree()[entities]
    if by == "relations":
        base = g.num_original_relations
        return np.array([len({r % base for r in one_hop_relations(g, int(e))}) for e in entities], dtype=np.int64)
    raise ConfigError(f"unknown breakdown {by!r}; choose from {', '.join(BREAKDOWNS)}")


def bucket_edges(values: np.ndarray, edges: Optional[Sequence[int]] = None) -> np.ndarray:
    """Lower bounds of the buckets: the given edges, or 0, 1, 2, 4, 8, ... up to the maximum"""
    if edges is not None:
        edges = np.unique(np.asarray(list(edges), dtype=np.int64))
        if edges.size == 0:
            raise ConfigError("at least one bucket edge is needed")
        return edges
    top = max(int(np.max(values)) if len(values) else 1, 1)
    return np.array([0] + [2 ** i for i in range(int(math.log2(top)) + 1)], dtype=np.int64)


def bucket_labels(edges: np.ndarray) -> List[str]:
    labels = []
    for i, low in enumerate(edges):
        if i + 1 == len(edges):
            labels.append(f"{low}+")
        elif edges[i + 1] - 1 == low:
            labels.append(f"{low}")
        else:
            labels.append(f"{low}-{edges[i + 1] - 1}")
    return labels


def stratified_evaluation(model: EntityAlignmentModel, task: AlignmentTask, pairs: Optional[SeedAlignment] = None,
                          by: str = "degree", edges: Optional[Sequence[int]] = None,
                          direction: str = "g1_to_g2", candidates: str = "test",
                          anchors: Optional[SeedAlignment] = None, k: Optional[int] = None,
                          context: Optional[TaskContext] = None, progress: bool = False) -> pd.DataFrame:
    """Metrics per bucket of a query statistic, indexed by bucket label.

    Every query is ranked once against the full candidate pool of ``pairs``;
    buckets only split the resulting ranks. Values below the first edge fall
    into the first bucket and empty buckets are left out.
    """
    if by not in BREAKDOWNS:
        raise ConfigError(f"unknown breakdown {by!r}; choose from {', '.join(BREAKDOWNS)}")
    pairs = task.test_pairs if pairs is None else pairs
    ranked = directional_ranks(model, task, pairs, direction, candidates, anchors, k, context, progress)

    values, ranks, degenerate = [], [], []
    for name, tag in DIRECTION_TAGS:
        if name not in ranked:
            continue
        queries = pairs.left if tag == G1 else pairs.right
        values.append(query_statistic(task.graph(tag), queries, by))
        ranks.append(ranked[name][0])
        degenerate.append(ranked[name][1])
    values, ranks, degenerate = np.concatenate(values), np.concatenate(ranks), np.concatenate(degenerate)

    lower = bucket_edges(values, edges)
    labels = bucket_labels(lower)
    which = np.clip(np.searchsorted(lower, values, side="right") - 1, 0, None)
    rows = []
    for bucket, label in enumerate(labels):
        chosen = which == bucket
        if not chosen.any():
            continue
        metrics = metrics_from_ranks(ranks[chosen], direction, candidates, int(degenerate[chosen].sum()))
        row = {"bucket": label, "lower": int(lower[bucket]), "num_queries": metrics.num_queries,
               "mrr": metrics.mrr}
        for cutoff in HITS_CUTOFFS:
            row[f"hits@{cutoff}"] = metrics.hits_at[cutoff]
        row["num_degenerate_queries"] = metrics.num_degenerate_queries
        rows.append(row)
    frame = pd.DataFrame(rows).set_index("bucket")
    logger.info("%s breakdown over %d queries in %d buckets", by, len(values), len(frame))
    return frame


def transfer(model: EntityAlignmentModel, unseen_task: AlignmentTask, direction: str = "g1_to_g2",
             candidates: str = "test", k: Optional[int] = None, progress: bool = False) -> Metrics:
    """Frozen evaluation on another task, anchored by that task's train split"""
    if len(unseen_task.train_seeds) == 0:
        logger.warning("unseen task has no anchors; every query will be degenerate")
    before = model.checksum()
    metrics = evaluate(model, unseen_task, unseen_task.test_pairs, direction, candidates,
                       anchors=unseen_task.train_seeds, k=k, progress=progress)
    if model.checksum() != before:
        raise AlignmentError("model parameters changed during transfer")
    logger.info("transfer: MRR %.4f over %d queries (%d degenerate)",
                metrics.mrr, metrics.num_queries, metrics.num_degenerate_queries)
    return metrics
