"""
Pre-training and finetuning loop.

One epoch visits the shuffled train pairs in batches; each pair contributes a
G1-rooted and a G2-rooted pass to the symmetric cross-entropy loss. The
parameters of the epoch with the best validation MRR are returned.
"""

import copy
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from src.exceptions import ConfigError, DivergenceError, NonFiniteError, TrainingContractError
from src.kg.core import G1, G2, AlignmentTask, SeedAlignment
from src.models.models import TrainConfig
from src.network.matcher import bidirectional_loss, sample_candidates
from src.network.model import EntityAlignmentModel, TaskContext
from src.training.evaluation import evaluate

logger = logging.getLogger(__name__)

# Fields that fix parameter shapes; a checkpoint cannot be finetuned under different values
ARCHITECTURE_FIELDS = ("dim", "rel_layers", "ent_layers", "rel_aggregation", "ablation", "dtype")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    valid_mrr: float
    seconds: float


@dataclass
class TrainResult:
    model: EntityAlignmentModel
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_mrr: float = 0.0
    stopped_early: bool = False

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(r) for r in self.history]).set_index("epoch") if self.history \
            else pd.DataFrame(columns=["loss", "valid_mrr", "seconds"])


class EarlyStopMonitor:
    """
    Tracks the best validation score and a copy of the matching parameters.

    early_stop_check() returns True once ``max_round`` consecutive epochs
    failed to beat the best score.
    """

    def __init__(self, max_round: int = 10, higher_better: bool = True):
        self.max_round = max_round
        self.higher_better = higher_better
        self.num_round = 0
        self.epoch_count = 0
        self.best_epoch = 0
        self.last_best = None
        self.best_state: Optional[Dict[str, torch.Tensor]] = None

    def early_stop_check(self, curr_val: float, model: Optional[torch.nn.Module] = None) -> bool:
        if not self.higher_better:
            curr_val *= -1
        self.epoch_count += 1
        if self.last_best is None or curr_val > self.last_best:
            self.last_best = curr_val
            self.num_round = 0
            self.best_epoch = self.epoch_count
            if model is not None:
                self.best_state = copy.deepcopy(model.state_dict())
        else:
            self.num_round += 1
        return self.num_round >= self.max_round


def seed_everything(config: TrainConfig) -> Tuple[np.random.Generator, torch.Generator]:
    torch.manual_seed(config.rng_seed)
    if config.num_threads:
        torch.set_num_threads(config.num_threads)
    generator = torch.Generator().manual_seed(config.rng_seed)
    return np.random.default_rng(config.rng_seed), generator


def batch_loss(model: EntityAlignmentModel, ctx: TaskContext, pairs: Sequence[Tuple[int, int]],
               generator: Optional[torch.Generator] = None, exclude_own_anchor: Optional[bool] = None,
               return_terms: bool = False):
    """Bidirectional loss of one batch of aligned pairs"""
    cfg = model.config
    exclude_own_anchor = cfg.exclude_query_anchor if exclude_own_anchor is None else exclude_own_anchor
    pairs = [(int(s), int(t)) for s, t in pairs]
    queries = [(G1, s) for s, _ in pairs] + [(G2, t) for _, t in pairs]
    excludes = [p if exclude_own_anchor else None for p in pairs] * 2
    emb, _ = model.encode_queries(ctx, queries, excludes)

    batch = len(pairs)
    forward, backward = emb[slice(0, batch)], emb[slice(batch, 2 * batch)]
    generator = generator or torch.Generator().manual_seed(cfg.rng_seed)
    cand2 = sample_candidates(ctx.task.g2.num_entities, [t for _, t in pairs], cfg.negative_sample_size, generator)
    cand1 = sample_candidates(ctx.task.g1.num_entities, [s for s, _ in pairs], cfg.negative_sample_size, generator)
    return bidirectional_loss(pairs, forward, backward, cand1, cand2, model.matcher, return_terms=return_terms)


class Trainer:
    def __init__(self, task: AlignmentTask, config: TrainConfig, model: Optional[EntityAlignmentModel] = None,
                 progress: bool = True):
        config.validate()
        if len(task.train_seeds) == 0 or len(task.valid_pairs) == 0:
            raise TrainingContractError("training needs non-empty train and validation pairs")
        self.task = task
        self.config = config
        self.progress = progress
        self.rng, self.generator = seed_everything(config)
        self.model = model if model is not None else EntityAlignmentModel(config)
        self.context = self.model.context(task, task.train_seeds)
        self.optimizer = torch.optim.AdamW(self.model.parameters(), lr=config.lr,
                                           weight_decay=config.weight_decay)
        self.valid_pairs = self._validation_sample()

    def _validation_sample(self) -> SeedAlignment:
        pairs = self.task.valid_pairs
        cap = self.config.valid_candidate_cap
        if len(pairs) <= cap:
            return pairs
        chosen = np.sort(self.rng.choice(len(pairs), size=cap, replace=False))
        logger.info("validation capped at %d of %d pairs", cap, len(pairs))
        return SeedAlignment(tuple(pairs.pairs[i] for i in chosen))

    def train_epoch(self, epoch: int) -> float:
        self.model.train()
        seeds = self.task.train_seeds.pairs
        order = self.rng.permutation(len(seeds))
        size = self.config.batch_size
        batches = [order[i:i + size] for i in range(0, len(order), size)]
        total, count = 0.0, 0
        bar = tqdm(batches, desc=f"epoch {epoch}", disable=not self.progress, leave=False)
        for number, batch in enumerate(bar):
            pairs = [seeds[i] for i in batch]
            self.optimizer.zero_grad()
            try:
                loss = batch_loss(self.model, self.context, pairs, self.generator)
            except NonFiniteError as e:
                raise DivergenceError(f"diverged at epoch {epoch}, batch {number}: {e}") from e
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss {loss.item()} at epoch {epoch}, batch {number}")
            loss.backward()
            self.optimizer.step()
            total += loss.item() * len(pairs)
            count += len(pairs)
            bar.set_postfix(loss=f"{loss.item():.4f}")
        return total / max(count, 1)

    def validate(self) -> float:
        metrics = evaluate(self.model, self.task, self.valid_pairs, "g1_to_g2", "test", context=self.context)
        return metrics.mrr

    def fit(self) -> TrainResult:
        cfg = self.config
        monitor = EarlyStopMonitor(max_round=cfg.patience)
        result = TrainResult(model=self.model)
        logger.info("training %d parameters on %d pairs (%s)", self.model.num_parameters(),
                    len(self.task.train_seeds), cfg.ablation)
        for epoch in range(1, cfg.max_epochs + 1):
            started = time.perf_counter()
            loss = self.train_epoch(epoch)
            valid_mrr = self.validate()
            stop = monitor.early_stop_check(valid_mrr, self.model)
            result.history.append(EpochRecord(epoch, loss, valid_mrr, time.perf_counter() - started))
            logger.info("epoch %d: loss %.4f, valid MRR %.4f (best %.4f at epoch %d)",
                        epoch, loss, valid_mrr, monitor.last_best, monitor.best_epoch)
            if stop:
                logger.info("no improvement over %d epochs, stopping", monitor.max_round)
                result.stopped_early = True
                break

        if monitor.best_state is not None:
            self.model.load_state_dict(monitor.best_state)
        self.model.eval()
        result.best_epoch = monitor.best_epoch
        result.best_valid_mrr = float(monitor.last_best or 0.0)
        logger.info("restored parameters of epoch %d", result.best_epoch)
        return result


def train(task: AlignmentTask, config: TrainConfig, progress: bool = True) -> TrainResult:
    return Trainer(task, config, progress=progress).fit()


def finetune(model: EntityAlignmentModel, task: AlignmentTask, config: Optional[TrainConfig] = None,
             progress: bool = True) -> TrainResult:
    """Continue training a loaded model; optimizer moments start from zero"""
    config = config or model.config
    for name in ARCHITECTURE_FIELDS:
        if getattr(config, name) != getattr(model.config, name):
            raise ConfigError(f"cannot finetune with {name}={getattr(config, name)!r}; "
                              f"the checkpoint was trained with {getattr(model.config, name)!r}")
    model.config = replace(config)
    return Trainer(task, model.config, model=model, progress=progress).fit()
