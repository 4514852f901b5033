"""
RelGNN: query-conditioned encoder over the merged relation graph.

Each layer adds a per-edge-type prototype to the neighbour state, weighs it
with a sigmoid gate and pools the projected messages into the target relation.
Pooling is a mean over incoming edges by default; `sum` keeps the raw total,
which grows with the in-degree of the merged relation graph at every layer.
All tensors carry a leading batch dimension (one row block per query).
"""

import logging
import math
from typing import Iterable, NamedTuple, Optional, Sequence, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.exceptions import ConfigError, NonFiniteError, ShapeMismatchError
from src.kg.relgraph import NUM_EDGE_TYPES, MergedRelationGraph
from src.models.models import REL_AGGREGATIONS

logger = logging.getLogger(__name__)


class RelationGraphIndex(NamedTuple):
    src: torch.Tensor
    dst: torch.Tensor
    types: torch.Tensor
    num_nodes: int

    @classmethod
    def from_graph(cls, graph: MergedRelationGraph) -> "RelationGraphIndex":
        return cls(
            src=torch.as_tensor(graph.src, dtype=torch.long),
            dst=torch.as_tensor(graph.dst, dtype=torch.long),
            types=torch.as_tensor(graph.types, dtype=torch.long),
            num_nodes=graph.num_rel_nodes,
        )


def init_relation_features(num_rel_nodes: int,
                           active_relations: Union[Iterable[int], Sequence[Iterable[int]]],
                           dim: int, batched: bool = False, dtype: Optional[torch.dtype] = None) -> torch.Tensor:
    """Layer-0 relation states: all-ones rows for active relations, zeros elsewhere.

    With ``batched=True`` ``active_relations`` is one set per query and the
    result has shape (batch, num_rel_nodes, dim). ``dtype`` defaults to the
    torch default dtype.
    """
    groups = list(active_relations) if batched else [active_relations]
    init = torch.zeros(len(groups), num_rel_nodes, dim, dtype=dtype or torch.get_default_dtype())
    for row, active in enumerate(groups):
        index = torch.as_tensor(sorted(int(r) for r in active), dtype=torch.long)
        if index.numel() and (index.min() < 0 or index.max() >= num_rel_nodes):
            raise ShapeMismatchError(f"active relation outside [0, {num_rel_nodes})")
        init[row, index] = 1.0
    return init if batched else init[0]


class RelGNNLayer(nn.Module):
    def __init__(self, dim: int, leaky_slope: float = 0.2, aggregation: str = "mean"):
        super().__init__()
        if aggregation not in REL_AGGREGATIONS:
            raise ConfigError(f"unknown relation aggregation {aggregation!r}")
        self.dim = dim
        self.leaky_slope = leaky_slope
        self.aggregation = aggregation
        self.W_rel = nn.Linear(dim, dim, bias=False)
        self.W_msg = nn.Linear(dim, dim, bias=False)
        self.W_alpha = nn.Parameter(torch.empty(2 * dim))
        self.reset_parameters()

    def reset_parameters(self):
        bound = 1.0 / math.sqrt(self.dim)
        nn.init.xavier_uniform_(self.W_rel.weight)
        nn.init.xavier_uniform_(self.W_msg.weight)
        nn.init.uniform_(self.W_alpha, -bound, bound)

    def attention(self, r: torch.Tensor, prototypes: torch.Tensor, index: RelationGraphIndex):
        """Gate values alpha (batch, edges) and prototype-shifted neighbour states"""
        r_tilde = r[:, index.src] + prototypes[index.types]
        logits = r_tilde @ self.W_alpha[:self.dim] + r[:, index.dst] @ self.W_alpha[self.dim:]
        return torch.sigmoid(logits), r_tilde

    def forward(self, r: torch.Tensor, prototypes: torch.Tensor, index: RelationGraphIndex) -> torch.Tensor:
        alpha, r_tilde = self.attention(r, prototypes, index)
        messages = alpha.unsqueeze(-1) * self.W_msg(r_tilde)
        aggregated = r.new_zeros(r.shape).index_add(1, index.dst, messages)
        if self.aggregation == "mean":
            degree = torch.bincount(index.dst, minlength=index.num_nodes).clamp_min(1)
            aggregated = aggregated / degree.to(r.dtype).unsqueeze(-1)
        return F.leaky_relu(self.W_rel(r) + aggregated, negative_slope=self.leaky_slope)


class RelGNN(nn.Module):
    """Stack of RelGNN layers sharing one prototype per edge type"""

    def __init__(self, dim: int, num_layers: int, leaky_slope: float = 0.2, aggregation: str = "mean"):
        super().__init__()
        self.dim = dim
        self.num_layers = num_layers
        self.prototypes = nn.Parameter(torch.empty(NUM_EDGE_TYPES, dim))
        self.layers = nn.ModuleList(RelGNNLayer(dim, leaky_slope, aggregation) for _ in range(num_layers))
        bound = 1.0 / math.sqrt(dim)
        nn.init.uniform_(self.prototypes, -bound, bound)

    def forward(self, index: RelationGraphIndex, init: torch.Tensor) -> torch.Tensor:
        unbatched = init.dim() == 2
        r = init.unsqueeze(0) if unbatched else init
        if r.dim() != 3 or r.shape[1] != index.num_nodes or r.shape[2] != self.dim:
            raise ShapeMismatchError(
                f"relation init of shape {tuple(init.shape)} does not match "
                f"{index.num_nodes} relation nodes of dimension {self.dim}")
        if r.dtype != self.prototypes.dtype:
            raise ShapeMismatchError(f"relation init is {r.dtype} but the encoder runs in {self.prototypes.dtype}")
        for depth, layer in enumerate(self.layers):
            r = layer(r, self.prototypes, index)
            if not torch.isfinite(r).all():
                raise NonFiniteError(f"non-finite relation embeddings after RelGNN layer {depth}")
        return r[0] if unbatched else r
