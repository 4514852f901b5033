"""
Anchor-hop sweep: one run per k, collected into a table.
"""

import logging
from dataclasses import replace
from typing import Iterable, Optional

import pandas as pd

from src.exceptions import ConfigError
from src.kg.core import AlignmentTask
from src.models.models import HITS_CUTOFFS, Metrics, TrainConfig
from src.network.model import EntityAlignmentModel
from src.training.evaluation import evaluate, transfer
from src.training.trainer import train

logger = logging.getLogger(__name__)

SWEEP_MODES = ("train", "transfer")


def metrics_row(k: int, metrics: Metrics) -> dict:
    row = {"k": k, "mrr": metrics.mrr}
    for cutoff in HITS_CUTOFFS:
        row[f"hits@{cutoff}"] = metrics.hits_at.get(cutoff, 0.0)
    row["num_queries"] = metrics.num_queries
    row["num_degenerate_queries"] = metrics.num_degenerate_queries
    return row


def hop_sweep(task: AlignmentTask, config: TrainConfig, k_values: Iterable[int], mode: str = "train",
              model: Optional[EntityAlignmentModel] = None, progress: bool = False) -> pd.DataFrame:
    """Metrics on the test split for each anchor hop k, indexed by k.

    In ``train`` mode a fresh model is trained per k; in ``transfer`` mode the
    given frozen model is evaluated with each k.
    """
    k_values = sorted(set(int(k) for k in k_values))
    if not k_values:
        raise ConfigError("hop sweep needs at least one k")
    if any(k < 1 for k in k_values):
        raise ConfigError("anchor hops must be at least 1")
    if mode not in SWEEP_MODES:
        raise ConfigError(f"unknown sweep mode {mode!r}")
    if mode == "transfer" and model is None:
        raise ConfigError("transfer sweeps need a trained model")

    rows = []
    for k in k_values:
        if mode == "train":
            run_config = replace(config, anchor_hop=k)
            trained = train(task, run_config, progress=progress).model
            metrics = evaluate(trained, task, task.test_pairs, config.direction, config.eval_candidates)
        else:
            metrics = transfer(model, task, config.direction, config.eval_candidates, k=k)
        logger.info("k=%d: MRR %.4f", k, metrics.mrr)
        rows.append(metrics_row(k, metrics))
    return pd.DataFrame(rows).set_index("k")
