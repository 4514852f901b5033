"""
Synthetic KG pairs with a known alignment.

The base graph has uniformly random endpoints and relations. The second graph
is an entity-relabelled copy, optionally under a fresh relation vocabulary,
and each side drops facts independently.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.exceptions import ConfigError
from src.kg.core import AlignmentTask, SeedAlignment, build_graph
from src.models.models import SynthSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SyntheticTruth:
    """Hidden bijections behind a generated task"""

    entity_map: np.ndarray  # G1 entity -> G2 entity
    relation_map: np.ndarray  # G1 relation -> G2 relation


def sample_base_facts(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.num_entities
    count = max(1, int(rng.poisson(n * spec.avg_degree / 2)))
    heads = rng.integers(0, n, count)
    tails = (heads + rng.integers(1, n, count)) % n  # no self loops
    rels = rng.integers(0, spec.num_relations, count)
    return np.unique(np.stack([heads, rels, tails], axis=1), axis=0)


def _keep(facts: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    if rate <= 0:
        return facts
    kept = facts[rng.random(facts.shape[0]) >= rate]
    if kept.shape[0] == 0:
        raise ConfigError(f"edge drop rate {rate} removed every fact")
    return kept


def generate_synthetic(spec: SynthSpec, return_truth: bool = False):
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    n, r = spec.num_entities, spec.num_relations

    base = sample_base_facts(spec, rng)
    degree = np.bincount(np.concatenate([base[:, 0], base[:, 2]]), minlength=n)
    isolated = float(np.mean(degree == 0))
    if isolated > 0.5:
        raise ConfigError(f"{isolated:.0%} of the synthetic entities are isolated; raise avg_degree")

    entity_map = rng.permutation(n)
    relation_map = rng.permutation(r) if spec.relation_renaming else np.arange(r)

    facts1 = _keep(base, spec.edge_drop_rate_g1, rng)
    facts2 = _keep(base, spec.edge_drop_rate_g2, rng)
    facts2 = np.stack([entity_map[facts2[:, 0]], relation_map[facts2[:, 1]], entity_map[facts2[:, 2]]], axis=1)

    order = rng.permutation(n)
    pairs = [(int(e), int(entity_map[e])) for e in order]
    n_train = min(n - 1, max(1, int(round(spec.seed_fraction * n))))
    rest = n - n_train
    n_valid = min(rest - 1, max(1, int(round(rest / 7)))) if rest > 1 else 0

    g1_names = tuple(f"g1/e{i}" for i in range(n))
    g2_names = tuple(f"g2/e{i}" for i in range(n))
    rel_prefix = "g2/s" if spec.relation_renaming else "g1/r"
    task = AlignmentTask(
        g1=build_graph(facts1, n, r),
        g2=build_graph(facts2, n, r),
        train_seeds=SeedAlignment.from_pairs(pairs[:n_train]),
        valid_pairs=SeedAlignment.from_pairs(pairs[n_train:n_train + n_valid]),
        test_pairs=SeedAlignment.from_pairs(pairs[n_train + n_valid:]),
        names=(g1_names, g2_names, tuple(f"g1/r{i}" for i in range(r)), tuple(f"{rel_prefix}{i}" for i in range(r))),
    )
    logger.info("synthetic task: %s", task.summary())
    if return_truth:
        return task, SyntheticTruth(entity_map=entity_map, relation_map=relation_map)
    return task


def synthetic_pair(seed: int, **overrides) -> Tuple[AlignmentTask, SyntheticTruth]:
    return generate_synthetic(SynthSpec(rng_seed=seed, **overrides), return_truth=True)
