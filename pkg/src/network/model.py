"""
Entity alignment model: RelGNN, EntGNN and the matcher composed per query.

``TaskContext`` holds everything derived from a task and its anchor set
(relation graph, edge indices, the joint graph of the no_parallel mode), so
one trained model can be pointed at any task without touching parameters.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from src.exceptions import ConfigError, ShapeMismatchError
from src.kg.core import G1, AlignmentTask, Query, SeedAlignment, one_hop_relations
from src.kg.relgraph import MergedRelationGraph, relation_graph_for
from src.models.models import TrainConfig
from src.network.entgnn import (AnchorActivation, EdgeIndex, EntGNN, EntityEmbeddings,
                                activate_anchors, init_entity_features)
from src.network.matcher import Matcher
from src.network.relgnn import RelationGraphIndex, RelGNN, init_relation_features

logger = logging.getLogger(__name__)

MODEL_VERSION = "eafm-1"

TORCH_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TaskContext:
    """Graph structures of one task under one anchor set and run mode"""

    task: AlignmentTask
    anchors: SeedAlignment
    ablation: str
    relation_graph: MergedRelationGraph
    rel_index: RelationGraphIndex
    index1: EdgeIndex
    index2: EdgeIndex
    joint_index: Optional[EdgeIndex] = None
    sameas_start: int = 0  # first sameAs edge inside joint_index

    @classmethod
    def build(cls, task: AlignmentTask, anchors: Optional[SeedAlignment] = None, ablation: str = "none",
              include_inverses: bool = True) -> "TaskContext":
        anchors = task.train_seeds if anchors is None else anchors
        graph = relation_graph_for(task, anchors, ablation, include_inverses)
        index1 = EdgeIndex.from_graph(task.g1)
        index2 = EdgeIndex.from_graph(task.g2, rel_offset=graph.g2_offset())
        context = cls(task=task, anchors=anchors, ablation=ablation, relation_graph=graph,
                      rel_index=RelationGraphIndex.from_graph(graph), index1=index1, index2=index2)
        if ablation == "no_parallel":
            context.joint_index, context.sameas_start = _joint_index(task, anchors, graph, index1, index2)
        logger.debug("task context (%s): %d relation nodes, %d relation edges",
                     ablation, graph.num_rel_nodes, graph.num_edges)
        return context

    def active_relations(self, query: Query) -> List[int]:
        tag, entity = query
        rels = one_hop_relations(self.task.graph(tag), entity)
        return [self.relation_graph.relation_node(tag, r) for r in rels]

    def joint_entity(self, query: Query) -> int:
        tag, entity = query
        return entity if tag == G1 else self.task.g1.num_entities + entity

    def sameas_mask(self, excludes: Sequence[Optional[Tuple[int, int]]]) -> Optional[torch.Tensor]:
        """(batch, edges) mask removing the sameAs edges of each excluded pair"""
        if not any(ex is not None for ex in excludes):
            return None
        index = self.joint_index
        num_edges = index.src.shape[0]
        mask = torch.ones(len(excludes), num_edges, dtype=torch.bool)
        seeds = list(self.anchors)
        position = {pair: i for i, pair in enumerate(seeds)}
        for row, ex in enumerate(excludes):
            if ex is None or tuple(ex) not in position:
                continue
            i = position[tuple(ex)]
            # forward edge at start + i, reverse edge at start + |seeds| + i
            mask[row, self.sameas_start + i] = False
            mask[row, self.sameas_start + len(seeds) + i] = False
        return mask


def _joint_index(task: AlignmentTask, anchors: SeedAlignment, graph: MergedRelationGraph,
                 index1: EdgeIndex, index2: EdgeIndex) -> Tuple[EdgeIndex, int]:
    """Both graphs as one: G2 entities shifted by |E1|, joined by sameAs edges"""
    shift = task.g1.num_entities
    same_as = graph.g1_relations + graph.g2_relations
    u = torch.as_tensor(anchors.left, dtype=torch.long)
    v = torch.as_tensor(anchors.right, dtype=torch.long) + shift
    src = torch.cat([index1.src, index2.src + shift, u, v])
    dst = torch.cat([index1.dst, index2.dst + shift, v, u])
    rel = torch.cat([index1.rel, index2.rel,
                     torch.full_like(u, same_as), torch.full_like(u, same_as + 1)])
    start = int(index1.src.shape[0] + index2.src.shape[0])
    return EdgeIndex(src=src, dst=dst, rel=rel, num_nodes=shift + task.g2.num_entities), start


class EntityAlignmentModel(nn.Module):
    """Transferable parameters: RelGNN, EntGNN and the matcher"""

    def __init__(self, config: TrainConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.version = MODEL_VERSION
        self.relgnn = RelGNN(config.dim, config.rel_layers, config.leaky_slope, config.rel_aggregation)
        self.entgnn = EntGNN(config.dim, config.ent_layers, config.leaky_slope)
        self.matcher = Matcher(config.dim, interaction=config.ablation != "no_interaction")
        self.to(TORCH_DTYPES[config.dtype])

    @property
    def dtype(self) -> torch.dtype:
        return TORCH_DTYPES[self.config.dtype]

    def context(self, task: AlignmentTask, anchors: Optional[SeedAlignment] = None,
                ablation: Optional[str] = None) -> TaskContext:
        return TaskContext.build(task, anchors, ablation or self.config.ablation,
                                 self.config.relgraph_include_inverses)

    def activate(self, ctx: TaskContext, query: Query, k: Optional[int] = None,
                 exclude: Optional[Tuple[int, int]] = None) -> AnchorActivation:
        cfg = self.config
        return activate_anchors(ctx.task, ctx.anchors, query, k or cfg.anchor_hop,
                                fallback=cfg.anchor_fallback, fallback_cap=cfg.anchor_fallback_cap,
                                exclude=exclude)

    def encode_queries(self, ctx: TaskContext, queries: Sequence[Query],
                       excludes: Optional[Sequence[Optional[Tuple[int, int]]]] = None,
                       k: Optional[int] = None) -> Tuple[EntityEmbeddings, List[AnchorActivation]]:
        """Batched forward pass; row b of the result is conditioned on queries[b]"""
        if not queries:
            raise ShapeMismatchError("no queries to encode")
        excludes = list(excludes) if excludes is not None else [None] * len(queries)
        if len(excludes) != len(queries):
            raise ShapeMismatchError("one exclusion entry is needed per query")
        dim, dtype = self.config.dim, self.dtype

        rel_init = init_relation_features(ctx.relation_graph.num_rel_nodes,
                                          [ctx.active_relations(q) for q in queries],
                                          dim, batched=True, dtype=dtype)
        relations = self.relgnn(ctx.rel_index, rel_init)

        if ctx.ablation == "no_parallel":
            return self._encode_joint(ctx, queries, excludes, relations, k)

        activations = [self.activate(ctx, q, k, ex) for q, ex in zip(queries, excludes)]
        features = [init_entity_features(ctx.task, act, dim, dtype) for act in activations]
        x1 = torch.stack([f[0] for f in features])
        x2 = torch.stack([f[1] for f in features])
        return self.entgnn(ctx.index1, ctx.index2, x1, x2, relations), activations

    def _encode_joint(self, ctx, queries, excludes, relations, k):
        for q in queries:
            ctx.task.check_query(q)
        n1 = ctx.task.g1.num_entities
        x = torch.zeros(len(queries), ctx.joint_index.num_nodes, self.config.dim, dtype=self.dtype)
        for row, q in enumerate(queries):
            x[row, ctx.joint_entity(q)] = 1.0
        h = self.entgnn.propagate(x, ctx.joint_index, relations, "joint graph", ctx.sameas_mask(excludes))
        hops = k or self.config.anchor_hop
        activations = [AnchorActivation(q, hops, hops, frozenset([q[1]]) if q[0] == G1 else frozenset(),
                                        frozenset() if q[0] == G1 else frozenset([q[1]])) for q in queries]
        return EntityEmbeddings(h[:, :n1], h[:, n1:]), activations

    def parameter_groups(self) -> List[Tuple[str, torch.Tensor]]:
        """Named parameters in a fixed declaration order"""
        return list(self.named_parameters())

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name, param in self.parameter_groups():
            digest.update(name.encode("utf-8"))
            digest.update(param.detach().cpu().contiguous().numpy().tobytes())
        return digest.hexdigest()

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def check_compatible(model: EntityAlignmentModel, ablation: str) -> None:
    interaction = ablation != "no_interaction"
    if model.matcher.interaction != interaction:
        raise ConfigError(f"model trained with ablation {model.config.ablation!r} cannot score in {ablation!r} mode")


def forward_query(model: EntityAlignmentModel, task: AlignmentTask, query: Query, k: Optional[int] = None,
                  ablation: Optional[str] = None, context: Optional[TaskContext] = None):
    """Single-query forward pass returning unbatched embeddings and the activation"""
    ablation = ablation or model.config.ablation
    check_compatible(model, ablation)
    ctx = context or model.context(task, ablation=ablation)
    with torch.no_grad():
        emb, activations = model.encode_queries(ctx, [query], k=k)
    return emb[0], activations[0]


def anchor_summary(activations: Sequence[AnchorActivation]) -> dict:
    sizes = np.array([len(a.active_g1) for a in activations]) if activations else np.zeros(0)
    return {
        "queries": len(activations),
        "degenerate": sum(a.degenerate for a in activations),
        "mean_anchors": float(sizes.mean()) if sizes.size else 0.0,
        "expanded": sum(a.k > a.requested_k for a in activations),
    }
