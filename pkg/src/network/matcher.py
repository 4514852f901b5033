"""
Interaction matcher and the bidirectional alignment objective.

A candidate t is scored against the query s by projecting the joint vector
[|h_s - h_t| ⊕ h_t] onto ``w_final``. The dot-product scorer replaces it in
the no_interaction ablation.
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from src.exceptions import NonFiniteError, ShapeMismatchError, TrainingContractError
from src.kg.core import G1, Query
from src.network.entgnn import EntityEmbeddings

logger = logging.getLogger(__name__)

Candidates = Union[Sequence[int], np.ndarray, torch.Tensor]


def interaction_features(h_s: torch.Tensor, h_t: torch.Tensor) -> torch.Tensor:
    """[|h_s - h_t| ⊕ h_t]; h_s broadcasts against h_t"""
    return torch.cat([(h_s - h_t).abs(), h_t], dim=-1)


def interaction_score(h_s: torch.Tensor, h_t: torch.Tensor, w_final: torch.Tensor) -> torch.Tensor:
    if h_s.shape[-1] != h_t.shape[-1] or w_final.shape[-1] != 2 * h_t.shape[-1]:
        raise ShapeMismatchError(
            f"cannot score {tuple(h_s.shape)} against {tuple(h_t.shape)} with w_final {tuple(w_final.shape)}")
    return interaction_features(h_s, h_t) @ w_final


def dot_score(h_s: torch.Tensor, h_t: torch.Tensor) -> torch.Tensor:
    if h_s.shape[-1] != h_t.shape[-1]:
        raise ShapeMismatchError(f"cannot score {tuple(h_s.shape)} against {tuple(h_t.shape)}")
    return (h_s * h_t).sum(dim=-1)


class Matcher(nn.Module):
    """S(e_s, e_t); ``interaction=False`` is the dot-product ablation"""

    def __init__(self, dim: int, interaction: bool = True):
        super().__init__()
        self.dim = dim
        self.interaction = interaction
        if interaction:
            self.w_final = nn.Parameter(torch.empty(2 * dim))
            bound = 1.0 / math.sqrt(2 * dim)
            nn.init.uniform_(self.w_final, -bound, bound)

    def forward(self, h_s: torch.Tensor, h_t: torch.Tensor) -> torch.Tensor:
        """Scores of query rows ``h_s`` (..., d) against candidates ``h_t`` (..., C, d)"""
        if h_s.dim() == h_t.dim() - 1:
            h_s = h_s.unsqueeze(-2)
        if self.interaction:
            return interaction_score(h_s, h_t, self.w_final)
        return dot_score(h_s, h_t)


@dataclass
class ScoredCandidates:
    query: Query
    candidates: np.ndarray  # opposite-graph entity ids in scoring order
    scores: torch.Tensor

    def score_of(self, entity: int) -> float:
        position = np.flatnonzero(self.candidates == entity)
        if position.size == 0:
            raise TrainingContractError(f"entity {entity} is not a candidate of query {self.query}")
        return float(self.scores[int(position[0])])

    def rank_of(self, entity: int) -> int:
        """1-based rank; equal scores are ordered by candidate id"""
        target = self.score_of(entity)
        scores = self.scores.detach().cpu().numpy()
        higher = int((scores > target).sum())
        tied_before = int(((scores == target) & (self.candidates < entity)).sum())
        return 1 + higher + tied_before


def _candidate_ids(candidates: Candidates) -> np.ndarray:
    if isinstance(candidates, torch.Tensor):
        candidates = candidates.cpu().numpy()
    return np.asarray(candidates, dtype=np.int64).reshape(-1)


def score_candidates(emb: EntityEmbeddings, query: Query, candidates: Candidates,
                     matcher: Matcher) -> ScoredCandidates:
    """Score every candidate of the opposite graph against the query row"""
    ids = _candidate_ids(candidates)
    if ids.size == 0:
        raise TrainingContractError(f"empty candidate set for query {query}")
    tag, entity = query
    own = emb.h1 if tag == G1 else emb.h2
    other = emb.h2 if tag == G1 else emb.h1
    if own.dim() != 2:
        raise ShapeMismatchError("score_candidates expects embeddings of a single query")
    if ids.min() < 0 or ids.max() >= other.shape[0]:
        raise ShapeMismatchError(f"candidate ids outside [0, {other.shape[0]})")
    scores = matcher(own[entity], other[torch.as_tensor(ids)])
    if not torch.isfinite(scores).all():
        raise NonFiniteError(f"non-finite scores for query {query}")
    return ScoredCandidates(query=query, candidates=ids, scores=scores)


def _target_positions(candidates: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Column of each target in its candidate row; (B, C) candidates"""
    hits = candidates == targets.unsqueeze(1)
    missing = ~hits.any(dim=1)
    if missing.any():
        row = int(torch.nonzero(missing)[0])
        raise TrainingContractError(f"true target {int(targets[row])} is not in the candidate set of pair {row}")
    return hits.int().argmax(dim=1)


def _as_rows(candidates: Candidates, batch: int) -> torch.Tensor:
    """Shared (C,) or per-pair (B, C) candidate ids as a (B, C) tensor"""
    ids = candidates if isinstance(candidates, torch.Tensor) else torch.as_tensor(np.asarray(candidates))
    ids = ids.long()
    if ids.dim() == 1:
        ids = ids.unsqueeze(0).expand(batch, -1)
    if ids.dim() != 2 or ids.shape[0] != batch or ids.shape[1] == 0:
        raise TrainingContractError("candidate sets must be non-empty, shared or one per pair")
    return ids


def directional_loss(queries: torch.Tensor, candidates: torch.Tensor, positions: torch.Tensor,
                     matcher: Matcher) -> torch.Tensor:
    """Mean cross-entropy of the true column; queries (B, d), candidates (B, C, d)"""
    scores = matcher(queries, candidates)
    return F.cross_entropy(scores, positions)


def bidirectional_loss(pairs: Sequence[Tuple[int, int]], forward: EntityEmbeddings, backward: EntityEmbeddings,
                       cand1: Candidates, cand2: Candidates, matcher: Matcher,
                       return_terms: bool = False):
    """L = L_{1->2} + L_{2->1} over a batch of aligned pairs.

    Args:
        pairs: (e_s, e_t) aligned pairs
        forward: batched embeddings (B, ., d) from the G1-rooted passes
        backward: batched embeddings from the G2-rooted passes
        cand1, cand2: candidate ids over E1 / E2, shared (C,) or per pair (B, C)
        return_terms: also return the two directional terms
    """
    if len(pairs) == 0:
        raise TrainingContractError("empty training batch")
    batch = len(pairs)
    if forward.h1.dim() != 3 or forward.h1.shape[0] != batch or backward.h1.shape[0] != batch:
        raise ShapeMismatchError(f"expected batched embeddings for {batch} pairs")
    rows = torch.arange(batch)
    sources = torch.as_tensor([s for s, _ in pairs], dtype=torch.long)
    targets = torch.as_tensor([t for _, t in pairs], dtype=torch.long)

    ids2 = _as_rows(cand2, batch)
    ids1 = _as_rows(cand1, batch)
    pos2 = _target_positions(ids2, targets)
    pos1 = _target_positions(ids1, sources)

    forward_term = directional_loss(forward.h1[rows, sources], forward.h2[rows.unsqueeze(1), ids2], pos2, matcher)
    backward_term = directional_loss(backward.h2[rows, targets], backward.h1[rows.unsqueeze(1), ids1], pos1, matcher)
    total = forward_term + backward_term
    if return_terms:
        return total, forward_term, backward_term
    return total


def sample_candidates(num_entities: int, targets: Sequence[int], negatives: int,
                      generator: torch.Generator) -> torch.Tensor:
    """Per-pair candidate rows: the target plus ``negatives`` distinct others.

    With ``negatives`` of 0 or at least ``num_entities - 1`` the full entity
    set is returned as one shared row.
    """
    if negatives <= 0 or negatives >= num_entities - 1:
        return torch.arange(num_entities)
    rows = []
    for t in targets:
        draw = torch.randperm(num_entities - 1, generator=generator)[:negatives]
        draw = draw + (draw >= int(t)).long()
        rows.append(torch.cat([torch.as_tensor([int(t)]), draw]))
    return torch.stack(rows)
