"""
Finite-difference verification of the analytic gradients.

Every parameter entry is nudged by +/- epsilon in double precision and the
central difference of the full bidirectional loss is compared with autograd.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import torch

from src.exceptions import ConfigError, GradientCheckError
from src.kg.core import AlignmentTask, SeedAlignment, build_graph
from src.models.models import TrainConfig
from src.network.model import EntityAlignmentModel
from src.training.trainer import batch_loss, seed_everything

logger = logging.getLogger(__name__)

GRAD_FLOOR = 1e-8


def canonical_tiny_task(seed: int = 0) -> AlignmentTask:
    """Two 12-entity graphs over 3 relations with 4 seed pairs.

    G2 is a relabelled copy of G1 with a renamed relation vocabulary, one
    fact dropped and one fact added, so the two sides never coincide exactly.
    """
    rng = np.random.default_rng(seed)
    n, r = 12, 3
    ring = [(i, i % r, (i + 1) % n) for i in range(n)]
    extra = [(int(h), int(rel), int(t)) for h, rel, t in zip(rng.integers(0, n, 8), rng.integers(0, r, 8),
                                                            rng.integers(0, n, 8)) if h != t]
    facts1 = ring + extra

    perm = rng.permutation(n)
    rename = np.array([2, 0, 1])
    facts2 = [(int(perm[h]), int(rename[rel]), int(perm[t])) for h, rel, t in facts1[1:]]
    facts2.append((int(perm[0]), int(rename[1]), int(perm[n // 2])))

    g1 = build_graph(facts1, n, r)
    g2 = build_graph(facts2, n, r)
    order = rng.permutation(n)
    pairs = [(int(e), int(perm[e])) for e in order]
    return AlignmentTask(
        g1=g1, g2=g2,
        train_seeds=SeedAlignment.from_pairs(pairs[:4]),
        valid_pairs=SeedAlignment.from_pairs(pairs[4:6]),
        test_pairs=SeedAlignment.from_pairs(pairs[6:]),
    )


def tiny_config(**overrides) -> TrainConfig:
    values = dict(dim=4, rel_layers=2, ent_layers=2, dtype="float64", negative_sample_size=0)
    values.update(overrides)
    return TrainConfig(**values).validate()


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> torch.Tensor:
    """|g_a - g_n| / max(|g_a|, |g_n|, 1e-8), defined as 0 when both are below the floor"""
    scale = torch.maximum(analytic.abs(), numeric.abs())
    error = (analytic - numeric).abs() / scale.clamp_min(GRAD_FLOOR)
    return torch.where(scale < GRAD_FLOOR, torch.zeros_like(error), error)


@dataclass
class GradientCheckReport:
    group_errors: Dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-3
    epsilon: float = 1e-4
    loss: float = 0.0
    num_parameters: int = 0

    @property
    def max_error(self) -> float:
        return max(self.group_errors.values()) if self.group_errors else 0.0

    @property
    def worst_group(self) -> str:
        return max(self.group_errors, key=self.group_errors.get) if self.group_errors else ""

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def to_key_value(self) -> str:
        lines = [f"grad.{name}={error:.3e}" for name, error in self.group_errors.items()]
        lines += [f"max_relative_error={self.max_error:.3e}", f"tolerance={self.tolerance:g}",
                  f"result={'PASS' if self.passed else 'FAIL'}"]
        return "\n".join(lines)


def gradient_check(task: Optional[AlignmentTask] = None, config: Optional[TrainConfig] = None,
                   epsilon: float = 1e-4, tolerance: float = 1e-3,
                   raise_on_failure: bool = False) -> GradientCheckReport:
    task = task or canonical_tiny_task()
    config = config or tiny_config()
    if config.dtype != "float64":
        raise ConfigError("gradient checks run in float64")
    if epsilon <= 0 or tolerance <= 0:
        raise ConfigError("epsilon and tolerance must be positive")

    seed_everything(config)
    model = EntityAlignmentModel(config)
    ctx = model.context(task, task.train_seeds)
    pairs = task.train_seeds.pairs

    def loss_value() -> torch.Tensor:
        return batch_loss(model, ctx, pairs)

    model.zero_grad()
    loss = loss_value()
    loss.backward()

    report = GradientCheckReport(tolerance=tolerance, epsilon=epsilon, loss=float(loss.item()),
                                 num_parameters=model.num_parameters())
    with torch.no_grad():
        for name, param in model.parameter_groups():
            analytic = param.grad.detach().clone().view(-1) if param.grad is not None \
                else torch.zeros(param.numel(), dtype=param.dtype)
            numeric = torch.zeros_like(analytic)
            flat = param.data.view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + epsilon
                plus = loss_value().item()
                flat[i] = original - epsilon
                minus = loss_value().item()
                flat[i] = original
                numeric[i] = (plus - minus) / (2 * epsilon)
            report.group_errors[name] = float(relative_error(analytic, numeric).max())
            logger.debug("%s: max relative error %.3e", name, report.group_errors[name])

    logger.info("gradient check over %d parameters: max relative error %.3e in %s",
                report.num_parameters, report.max_error, report.worst_group)
    if raise_on_failure and not report.passed:
        raise GradientCheckError(
            f"gradient of {report.worst_group} off by {report.max_error:.3e} (tolerance {tolerance:g})")
    return report
