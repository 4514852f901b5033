"""
Merged Relation Graph

Builds the relation-level graph over the relations of both knowledge graphs.
Seed pairs collapse into shared unified entities, so relations of G1 and G2
become adjacent whenever they meet at an anchor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Optional, Set, Tuple

import numpy as np
import torch

from src.exceptions import InvalidAlignmentError
from src.kg.core import G1, G2, AlignmentTask, SeedAlignment

logger = logging.getLogger(__name__)

SAME_AS = "sameAs"


class EdgeType(IntEnum):
    HH = 0
    HT = 1
    TH = 2
    TT = 3
    INV = 4


NUM_EDGE_TYPES = len(EdgeType)


@dataclass(frozen=True, eq=False)
class UnifiedEntitySpace:
    """G1 entities keep their ids; unmatched G2 entities follow in ascending order"""

    g1_ids: np.ndarray
    g2_ids: np.ndarray
    num_unified: int

    def unified(self, tag: str, entity: int) -> int:
        ids = self.g1_ids if tag == G1 else self.g2_ids
        return int(ids[entity])


@dataclass(frozen=True, eq=False)
class MergedRelationGraph:
    """Typed relation graph.

    Nodes ``[0, g1_relations)`` are G1 relations (inverse-augmented), the next
    ``g2_relations`` nodes are G2 relations, and ``extra_nodes`` (the sameAs
    pair in ablation modes) come last. ``edges`` holds unique, lexicographically
    sorted (src, dst, type) rows.
    """

    num_rel_nodes: int
    edges: np.ndarray
    g1_relations: int
    g2_relations: int
    extra_nodes: Tuple[str, ...] = ()

    @property
    def src(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def dst(self) -> np.ndarray:
        return self.edges[:, 1]

    @property
    def types(self) -> np.ndarray:
        return self.edges[:, 2]

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    def g2_offset(self) -> int:
        return self.g1_relations

    def relation_node(self, tag: str, rel: int) -> int:
        return rel if tag == G1 else self.g1_relations + rel

    def edge_set(self) -> Set[Tuple[int, int, int]]:
        return {(int(s), int(d), int(t)) for s, d, t in self.edges}

    def write_edge_list(self, path) -> str:
        """Debug dump: one ``src<TAB>dst<TAB>type`` line per edge"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            for s, d, t in self.edges:
                handle.write(f"{int(s)}\t{int(d)}\t{EdgeType(int(t)).name}\n")
        return str(path)


def unify_entities(task: AlignmentTask, seeds: SeedAlignment) -> UnifiedEntitySpace:
    """Collapse each seed pair into one unified entity"""
    n1, n2 = task.g1.num_entities, task.g2.num_entities
    try:
        seeds.validate(task.g1, task.g2)
    except InvalidAlignmentError as e:
        raise InvalidAlignmentError(f"cannot unify entity spaces: {e}") from e

    g1_ids = np.arange(n1, dtype=np.int64)
    g2_ids = np.full(n2, -1, dtype=np.int64)
    if len(seeds):
        g2_ids[seeds.right] = seeds.left
    unmatched = np.flatnonzero(g2_ids < 0)
    g2_ids[unmatched] = n1 + np.arange(unmatched.size, dtype=np.int64)
    for array in (g1_ids, g2_ids):
        array.setflags(write=False)
    return UnifiedEntitySpace(g1_ids=g1_ids, g2_ids=g2_ids, num_unified=n1 + int(unmatched.size))


def _incidence(entities: np.ndarray, rels: np.ndarray, num_entities: int, num_rel_nodes: int) -> torch.Tensor:
    pairs = np.unique(np.stack([entities, rels], axis=1), axis=0)
    return torch.sparse_coo_tensor(
        torch.from_numpy(pairs.T.copy()),
        torch.ones(pairs.shape[0], dtype=torch.float64),
        (num_entities, num_rel_nodes),
    ).coalesce()


def _cooccurrence(left: torch.Tensor, right: torch.Tensor, edge_type: EdgeType) -> np.ndarray:
    product = torch.sparse.mm(left.t().coalesce(), right).coalesce()
    index = product.indices().numpy()
    index = index[:, index[0] != index[1]]
    typed = np.empty((index.shape[1], 3), dtype=np.int64)
    typed[:, 0] = index[0]
    typed[:, 1] = index[1]
    typed[:, 2] = int(edge_type)
    return typed


def _assemble(heads: np.ndarray, rels: np.ndarray, tails: np.ndarray, num_entities: int,
              num_rel_nodes: int, inverse_pairs: np.ndarray) -> np.ndarray:
    """Five-type edge array from unified (head, rel-node, tail) triples"""
    blocks = []
    if heads.size:
        H = _incidence(heads, rels, num_entities, num_rel_nodes)
        T = _incidence(tails, rels, num_entities, num_rel_nodes)
        blocks.append(_cooccurrence(H, H, EdgeType.HH))
        blocks.append(_cooccurrence(H, T, EdgeType.HT))
        blocks.append(_cooccurrence(T, H, EdgeType.TH))
        blocks.append(_cooccurrence(T, T, EdgeType.TT))
    inv = np.concatenate([inverse_pairs, inverse_pairs[:, ::-1]], axis=0)
    blocks.append(np.concatenate([inv, np.full((inv.shape[0], 1), int(EdgeType.INV), dtype=np.int64)], axis=1))
    edges = np.unique(np.concatenate(blocks, axis=0), axis=0)
    edges.setflags(write=False)
    return edges


def _inverse_pairs(num_original: int, offset: int) -> np.ndarray:
    r = np.arange(num_original, dtype=np.int64) + offset
    return np.stack([r, r + num_original], axis=1)


def _scanned(task: AlignmentTask, include_inverses: bool):
    """Per-graph (heads, rels, tails) used by the co-occurrence scan"""
    out = []
    for g in (task.g1, task.g2):
        keep = np.ones(g.num_triples, dtype=bool) if include_inverses else g.rels < g.num_original_relations
        out.append((g.heads[keep], g.rels[keep], g.tails[keep]))
    return out


def build_relation_graph(task: AlignmentTask, unified: UnifiedEntitySpace,
                         include_inverses: bool = True) -> MergedRelationGraph:
    """Merged relation graph over R1 ∪ R2 through the unified entity space"""
    g1, g2 = task.g1, task.g2
    if unified.g1_ids.shape[0] != g1.num_entities or unified.g2_ids.shape[0] != g2.num_entities:
        raise InvalidAlignmentError("unified entity space does not match the task graphs")
    r1, r2 = g1.num_relations, g2.num_relations
    (h1, rel1, t1), (h2, rel2, t2) = _scanned(task, include_inverses)

    heads = np.concatenate([unified.g1_ids[h1], unified.g2_ids[h2]])
    rels = np.concatenate([rel1, rel2 + r1])
    tails = np.concatenate([unified.g1_ids[t1], unified.g2_ids[t2]])
    inverse_pairs = np.concatenate([_inverse_pairs(g1.num_original_relations, 0),
                                    _inverse_pairs(g2.num_original_relations, r1)])

    edges = _assemble(heads, rels, tails, unified.num_unified, r1 + r2, inverse_pairs)
    graph = MergedRelationGraph(num_rel_nodes=r1 + r2, edges=edges, g1_relations=r1, g2_relations=r2)
    logger.debug("merged relation graph: %d nodes, %d edges", graph.num_rel_nodes, graph.num_edges)
    return graph


def build_sameas_relation_graph(task: AlignmentTask, seeds: SeedAlignment,
                                include_inverses: bool = True) -> MergedRelationGraph:
    """Relation graph over the disjoint union bridged only by ``sameAs`` triples.

    G2 entities are shifted by |E1| instead of being merged; each seed (u, v)
    contributes (u, sameAs, v) and its inverse, and the same five-type scan
    runs over the union of facts.
    """
    g1, g2 = task.g1, task.g2
    seeds.validate(g1, g2)
    r1, r2 = g1.num_relations, g2.num_relations
    same_as = r1 + r2
    (h1, rel1, t1), (h2, rel2, t2) = _scanned(task, include_inverses)
    shift = g1.num_entities

    u, v = seeds.left, seeds.right + shift
    bridge_h = np.concatenate([u, v]) if include_inverses else u
    bridge_r = np.concatenate([np.full(len(u), same_as), np.full(len(u), same_as + 1)]) if include_inverses \
        else np.full(len(u), same_as)
    bridge_t = np.concatenate([v, u]) if include_inverses else v

    heads = np.concatenate([h1, h2 + shift, bridge_h]).astype(np.int64)
    rels = np.concatenate([rel1, rel2 + r1, bridge_r]).astype(np.int64)
    tails = np.concatenate([t1, t2 + shift, bridge_t]).astype(np.int64)
    inverse_pairs = np.concatenate([_inverse_pairs(g1.num_original_relations, 0),
                                    _inverse_pairs(g2.num_original_relations, r1),
                                    np.array([[same_as, same_as + 1]], dtype=np.int64)])

    edges = _assemble(heads, rels, tails, g1.num_entities + g2.num_entities, r1 + r2 + 2, inverse_pairs)
    return MergedRelationGraph(num_rel_nodes=r1 + r2 + 2, edges=edges, g1_relations=r1, g2_relations=r2,
                               extra_nodes=(SAME_AS, f"{SAME_AS}_inv"))


def build_bridged_relation_graph(task: AlignmentTask, unified: UnifiedEntitySpace, seeds: SeedAlignment,
                                 include_inverses: bool = True) -> MergedRelationGraph:
    """Merged relation graph plus the two ``sameAs`` nodes.

    Used by query-rooted propagation, which walks explicit sameAs edges and so
    needs embeddings for them. Seed triples are mapped through the unified
    space, where they become self-loops on the anchor.
    """
    base = build_relation_graph(task, unified, include_inverses)
    same_as = base.num_rel_nodes
    anchors = unified.g1_ids[seeds.left] if len(seeds) else np.empty(0, dtype=np.int64)
    g1, g2 = task.g1, task.g2
    r1 = g1.num_relations
    (h1, rel1, t1), (h2, rel2, t2) = _scanned(task, include_inverses)

    heads = np.concatenate([unified.g1_ids[h1], unified.g2_ids[h2], anchors, anchors])
    rels = np.concatenate([rel1, rel2 + r1, np.full(len(anchors), same_as), np.full(len(anchors), same_as + 1)])
    tails = np.concatenate([unified.g1_ids[t1], unified.g2_ids[t2], anchors, anchors])
    inverse_pairs = np.concatenate([_inverse_pairs(g1.num_original_relations, 0),
                                    _inverse_pairs(g2.num_original_relations, r1),
                                    np.array([[same_as, same_as + 1]], dtype=np.int64)])
    edges = _assemble(heads.astype(np.int64), rels.astype(np.int64), tails.astype(np.int64),
                      unified.num_unified, same_as + 2, inverse_pairs)
    return MergedRelationGraph(num_rel_nodes=same_as + 2, edges=edges, g1_relations=base.g1_relations,
                               g2_relations=base.g2_relations, extra_nodes=(SAME_AS, f"{SAME_AS}_inv"))


def relation_graph_for(task: AlignmentTask, seeds: Optional[SeedAlignment] = None, ablation: str = "none",
                       include_inverses: bool = True) -> MergedRelationGraph:
    """Relation graph construction used by each run mode"""
    seeds = task.train_seeds if seeds is None else seeds
    if ablation == "no_relgraph":
        return build_sameas_relation_graph(task, seeds, include_inverses)
    unified = unify_entities(task, seeds)
    if ablation == "no_parallel":
        return build_bridged_relation_graph(task, unified, seeds, include_inverses)
    return build_relation_graph(task, unified, include_inverses)
