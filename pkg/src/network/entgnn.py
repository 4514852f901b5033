"""
EntGNN: anchor-conditioned entity encoder.

Both knowledge graphs are encoded by the same layers. A query activates the
seed anchors inside its k-hop neighbourhood and their counterparts on the
other side; messages are translations h_j + r_ji weighted by a softmax over
each entity's incoming edges.
"""

import logging
import math
from dataclasses import dataclass
from typing import FrozenSet, NamedTuple, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from src.exceptions import ConfigError, NonFiniteError, ShapeMismatchError
from src.kg.core import G1, G2, AlignmentTask, KnowledgeGraph, Query, SeedAlignment, khop_mask

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnchorActivation:
    query: Query
    k: int  # hop count that produced the active sets (after fallback)
    requested_k: int
    active_g1: FrozenSet[int]
    active_g2: FrozenSet[int]

    @property
    def degenerate(self) -> bool:
        return not self.active_g1 and not self.active_g2


@dataclass
class EntityEmbeddings:
    """Final-layer entity states; a leading batch dimension is optional"""

    h1: torch.Tensor
    h2: torch.Tensor

    def side(self, tag: str) -> torch.Tensor:
        return self.h1 if tag == G1 else self.h2

    def __getitem__(self, b) -> "EntityEmbeddings":
        return EntityEmbeddings(self.h1[b], self.h2[b])


class EdgeIndex(NamedTuple):
    """Augmented edges of one graph with merged relation-node ids"""

    src: torch.Tensor
    dst: torch.Tensor
    rel: torch.Tensor
    num_nodes: int

    @classmethod
    def from_graph(cls, g: KnowledgeGraph, rel_offset: int = 0) -> "EdgeIndex":
        return cls(
            src=torch.as_tensor(g.heads, dtype=torch.long),
            dst=torch.as_tensor(g.tails, dtype=torch.long),
            rel=torch.as_tensor(g.rels, dtype=torch.long) + rel_offset,
            num_nodes=g.num_entities,
        )


def activate_anchors(task: AlignmentTask, seeds: SeedAlignment, query: Query, k: int,
                     fallback: bool = True, fallback_cap: int = 4,
                     exclude: Optional[Tuple[int, int]] = None) -> AnchorActivation:
    """Seed entities within k hops of the query, mirrored onto the other graph.

    When nothing is found and ``fallback`` is on, k grows by one until anchors
    appear or ``fallback_cap`` is reached. ``exclude`` drops one seed pair
    (the supervised pair during training).
    """
    task.check_query(query)
    if k < 1:
        raise ConfigError(f"anchor hop must be at least 1, got {k}")
    tag, entity = query
    left, right = seeds.left, seeds.right
    if exclude is not None and len(seeds):
        keep = ~((left == exclude[0]) & (right == exclude[1]))
        left, right = left[keep], right[keep]
    own, other = (left, right) if tag == G1 else (right, left)

    hops = k
    while True:
        mask = khop_mask(task.graph(tag), entity, hops)
        hit = mask[own] if own.size else np.zeros(0, dtype=bool)
        if hit.any() or not fallback or hops >= fallback_cap:
            break
        hops += 1

    own_active = frozenset(int(x) for x in own[hit])
    other_active = frozenset(int(x) for x in other[hit])
    if not own_active:
        logger.debug("query %s has no anchors within %d hops", query, hops)
    if tag == G1:
        return AnchorActivation(query, hops, k, own_active, other_active)
    return AnchorActivation(query, hops, k, other_active, own_active)


def init_entity_features(task: AlignmentTask, activation: AnchorActivation, dim: int,
                         dtype: Optional[torch.dtype] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """Layer-0 features: all-ones rows on active anchors of both graphs"""
    dtype = dtype or torch.get_default_dtype()
    x1 = torch.zeros(task.g1.num_entities, dim, dtype=dtype)
    x2 = torch.zeros(task.g2.num_entities, dim, dtype=dtype)
    x1[torch.as_tensor(sorted(activation.active_g1), dtype=torch.long)] = 1.0
    x2[torch.as_tensor(sorted(activation.active_g2), dtype=torch.long)] = 1.0
    return x1, x2


def segment_softmax(logits: torch.Tensor, index: torch.Tensor, num_segments: int,
                    mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Softmax of (batch, edges) logits over edges sharing the same target"""
    if mask is not None:
        logits = logits.masked_fill(~mask, float("-inf"))
    expanded = index.unsqueeze(0).expand_as(logits)
    peak = logits.new_full((logits.shape[0], num_segments), float("-inf"))
    peak = peak.scatter_reduce(1, expanded, logits, reduce="amax", include_self=True).detach()
    peak = torch.where(torch.isfinite(peak), peak, torch.zeros_like(peak))
    weights = torch.exp(logits - peak[:, index])
    total = weights.new_zeros(peak.shape).index_add(1, index, weights)
    return weights / total[:, index].clamp_min(torch.finfo(weights.dtype).tiny)


class EntGNNLayer(nn.Module):
    def __init__(self, dim: int, leaky_slope: float = 0.2, eps: float = 1e-5):
        super().__init__()
        self.dim = dim
        self.leaky_slope = leaky_slope
        self.W_ent = nn.Linear(dim, dim, bias=False)
        self.W_s = nn.Linear(dim, dim, bias=False)
        self.W_r = nn.Linear(dim, dim, bias=False)
        self.a = nn.Parameter(torch.empty(2 * dim))
        self.norm = nn.LayerNorm(dim, eps=eps)
        self.reset_parameters()

    def reset_parameters(self):
        for linear in (self.W_ent, self.W_s, self.W_r):
            nn.init.xavier_uniform_(linear.weight)
        bound = 1.0 / math.sqrt(self.dim)
        nn.init.uniform_(self.a, -bound, bound)
        self.norm.reset_parameters()

    def attention(self, h: torch.Tensor, rel_edges: torch.Tensor, index: EdgeIndex,
                  mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """beta (batch, edges); rows of one target sum to one"""
        h_src = h[:, index.src]
        logits = self.W_s(h_src) @ self.a[:self.dim] + self.W_r(rel_edges) @ self.a[self.dim:]
        logits = F.leaky_relu(logits, negative_slope=self.leaky_slope)
        return segment_softmax(logits, index.dst, index.num_nodes, mask)

    def pre_norm(self, h: torch.Tensor, rel_edges: torch.Tensor, index: EdgeIndex,
                 mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        beta = self.attention(h, rel_edges, index, mask)
        messages = beta.unsqueeze(-1) * (h[:, index.src] + rel_edges)
        aggregated = h.new_zeros(h.shape).index_add(1, index.dst, messages)
        return h + F.leaky_relu(self.W_ent(aggregated), negative_slope=self.leaky_slope)

    def forward(self, h, rel_edges, index: EdgeIndex, mask=None) -> torch.Tensor:
        return self.norm(self.pre_norm(h, rel_edges, index, mask))


class EntGNN(nn.Module):
    def __init__(self, dim: int, num_layers: int, leaky_slope: float = 0.2):
        super().__init__()
        self.dim = dim
        self.num_layers = num_layers
        self.layers = nn.ModuleList(EntGNNLayer(dim, leaky_slope) for _ in range(num_layers))

    def propagate(self, x: torch.Tensor, index: EdgeIndex, relations: torch.Tensor,
                  tag: str = G1, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Run every layer over one graph.

        Args:
            x: (batch, entities, dim) layer-0 features
            index: augmented edges with merged relation-node ids
            relations: (batch, relation nodes, dim) R_global
            mask: optional (batch, edges) bool, False removes the edge
        """
        if x.dim() != 3 or x.shape[1] != index.num_nodes or x.shape[2] != self.dim:
            raise ShapeMismatchError(f"entity features {tuple(x.shape)} do not match graph {tag}")
        if relations.dim() != 3 or relations.shape[0] != x.shape[0] or relations.shape[2] != self.dim:
            raise ShapeMismatchError(f"relation embeddings {tuple(relations.shape)} do not match batch")
        weight_dtype = self.layers[0].a.dtype if self.num_layers else x.dtype
        if x.dtype != weight_dtype or relations.dtype != weight_dtype:
            raise ShapeMismatchError(f"inputs of graph {tag} are {x.dtype}/{relations.dtype} "
                                     f"but the encoder runs in {weight_dtype}")
        if index.rel.numel() and int(index.rel.max()) >= relations.shape[1]:
            raise ShapeMismatchError(f"relation ids of graph {tag} exceed {relations.shape[1]} relation nodes")
        rel_edges = relations[:, index.rel]
        h = x
        for depth, layer in enumerate(self.layers):
            h = layer(h, rel_edges, index, mask)
            if not torch.isfinite(h).all():
                raise NonFiniteError(f"non-finite entity embeddings after EntGNN layer {depth} on {tag}")
        return h

    def forward(self, index1: EdgeIndex, index2: EdgeIndex, x1: torch.Tensor, x2: torch.Tensor,
                relations: torch.Tensor) -> EntityEmbeddings:
        unbatched = x1.dim() == 2
        if unbatched:
            x1, x2, relations = x1.unsqueeze(0), x2.unsqueeze(0), relations.unsqueeze(0)
        h1 = self.propagate(x1, index1, relations, G1)
        h2 = self.propagate(x2, index2, relations, G2)
        if unbatched:
            return EntityEmbeddings(h1[0], h2[0])
        return EntityEmbeddings(h1, h2)
