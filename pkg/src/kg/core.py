"""
Knowledge Graph Core

Immutable in-memory knowledge graphs with inverse augmentation, seed
alignments and the alignment task container. Every downstream module reads
graphs through the indices built here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.exceptions import InvalidAlignmentError, InvalidGraphError

logger = logging.getLogger(__name__)

G1 = "g1"
G2 = "g2"

Query = Tuple[str, int]


@dataclass(frozen=True)
class Triple:
    head: int
    rel: int
    tail: int


def _gather_ranges(offsets: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Concatenate the CSR slices offsets[n]:offsets[n+1] for every n in nodes"""
    starts = offsets[nodes]
    lengths = offsets[nodes + 1] - starts
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    shift = np.repeat(starts - (np.cumsum(lengths) - lengths), lengths)
    return shift + np.arange(total, dtype=np.int64)


class KnowledgeGraph:
    """One inverse-augmented knowledge graph.

    Relation ids ``[0, num_original_relations)`` are the original relations and
    ``r + num_original_relations`` is the inverse of ``r``. Triples are stored
    as three parallel int64 arrays; ``out_index``/``in_index`` are CSR views
    (offsets per entity plus a permutation of triple positions).
    """

    def __init__(self, heads: np.ndarray, rels: np.ndarray, tails: np.ndarray,
                 num_entities: int, num_original_relations: int):
        self.heads = heads
        self.rels = rels
        self.tails = tails
        self.num_entities = int(num_entities)
        self.num_original_relations = int(num_original_relations)
        self.num_relations = 2 * self.num_original_relations

        self._out_order = np.lexsort((tails, rels, heads))
        self._out_offsets = np.zeros(self.num_entities + 1, dtype=np.int64)
        np.cumsum(np.bincount(heads, minlength=self.num_entities), out=self._out_offsets[1:])

        self._in_order = np.lexsort((heads, rels, tails))
        self._in_offsets = np.zeros(self.num_entities + 1, dtype=np.int64)
        np.cumsum(np.bincount(tails, minlength=self.num_entities), out=self._in_offsets[1:])

        for array in (self.heads, self.rels, self.tails, self._out_order, self._in_order,
                      self._out_offsets, self._in_offsets):
            array.setflags(write=False)

    @property
    def num_triples(self) -> int:
        return int(self.heads.shape[0])

    @property
    def triples(self) -> Tuple[Triple, ...]:
        return tuple(Triple(int(h), int(r), int(t))
                     for h, r, t in zip(self.heads, self.rels, self.tails))

    def triple_array(self) -> np.ndarray:
        """(num_triples, 3) array of (head, rel, tail)"""
        return np.stack([self.heads, self.rels, self.tails], axis=1)

    def inverse(self, rel: int) -> int:
        if rel < self.num_original_relations:
            return rel + self.num_original_relations
        return rel - self.num_original_relations

    def check_entity(self, e: int) -> None:
        if not 0 <= int(e) < self.num_entities:
            raise InvalidGraphError(f"entity {e} out of range [0, {self.num_entities})")

    def out_index(self, e: int) -> List[Tuple[int, int]]:
        """(rel, tail) pairs of triples headed by ``e``"""
        self.check_entity(e)
        positions = self._out_order[self._out_offsets[e]:self._out_offsets[e + 1]]
        return [(int(self.rels[p]), int(self.tails[p])) for p in positions]

    def in_index(self, e: int) -> List[Tuple[int, int]]:
        """(rel, head) pairs of triples whose tail is ``e``"""
        self.check_entity(e)
        positions = self._in_order[self._in_offsets[e]:self._in_offsets[e + 1]]
        return [(int(self.rels[p]), int(self.heads[p])) for p in positions]

    def neighbors(self, nodes: np.ndarray) -> np.ndarray:
        """Tails of all out-edges of ``nodes``; undirected because of augmentation"""
        positions = self._out_order[_gather_ranges(self._out_offsets, nodes)]
        return self.tails[positions]

    def in_degree(self) -> np.ndarray:
        return np.diff(self._in_offsets)

    def __repr__(self) -> str:
        return (f"KnowledgeGraph(num_entities={self.num_entities}, "
                f"num_relations={self.num_relations}, num_triples={self.num_triples})")


def build_graph(raw_triples: Iterable[Sequence[int]], num_entities: int, num_relations: int) -> KnowledgeGraph:
    """Deduplicate, inverse-augment and index a triple set.

    Args:
        raw_triples: (head, rel, tail) records over original relations
        num_entities: entity count of the graph
        num_relations: count of original (non-inverse) relations

    Returns:
        KnowledgeGraph with ``2 * num_relations`` relations
    """
    arr = np.asarray(list(raw_triples) if not isinstance(raw_triples, np.ndarray) else raw_triples,
                     dtype=np.int64)
    if arr.size == 0:
        raise InvalidGraphError("empty triple set")
    arr = arr.reshape(-1, 3)
    if num_entities <= 0 or num_relations <= 0:
        raise InvalidGraphError(f"invalid graph size: {num_entities} entities, {num_relations} relations")

    bad = ((arr[:, 0] < 0) | (arr[:, 0] >= num_entities)
           | (arr[:, 2] < 0) | (arr[:, 2] >= num_entities)
           | (arr[:, 1] < 0) | (arr[:, 1] >= num_relations))
    if bad.any():
        h, r, t = (int(x) for x in arr[int(np.argmax(bad))])
        raise InvalidGraphError(
            f"triple ({h}, {r}, {t}) out of range for {num_entities} entities and {num_relations} relations")

    arr = np.unique(arr, axis=0)
    inverse = arr[:, [2, 1, 0]].copy()
    inverse[:, 1] += num_relations
    full = np.concatenate([arr, inverse], axis=0)

    graph = KnowledgeGraph(
        heads=np.ascontiguousarray(full[:, 0]),
        rels=np.ascontiguousarray(full[:, 1]),
        tails=np.ascontiguousarray(full[:, 2]),
        num_entities=num_entities,
        num_original_relations=num_relations,
    )
    logger.debug("built %r from %d unique facts", graph, arr.shape[0])
    return graph


def khop_mask(g: KnowledgeGraph, e: int, k: int) -> np.ndarray:
    """Boolean mask over entities within ``k`` undirected hops of ``e``"""
    g.check_entity(e)
    if k < 0:
        raise InvalidGraphError(f"hop count must be non-negative, got {k}")
    visited = np.zeros(g.num_entities, dtype=bool)
    visited[e] = True
    frontier = np.array([e], dtype=np.int64)
    for _ in range(k):
        if frontier.size == 0:
            break
        reached = g.neighbors(frontier)
        reached = np.unique(reached[~visited[reached]])
        visited[reached] = True
        frontier = reached
    return visited


def khop_entities(g: KnowledgeGraph, e: int, k: int) -> FrozenSet[int]:
    return frozenset(int(x) for x in np.flatnonzero(khop_mask(g, e, k)))


def one_hop_relations(g: KnowledgeGraph, e: int) -> FrozenSet[int]:
    """Relations on every augmented edge touching ``e`` (outgoing and incoming)"""
    g.check_entity(e)
    out_rels = [rel for rel, _ in g.out_index(e)]
    in_rels = [rel for rel, _ in g.in_index(e)]
    return frozenset(out_rels) | frozenset(in_rels)


@dataclass(frozen=True)
class SeedAlignment:
    """One-to-one entity pairs (G1 id, G2 id)"""

    pairs: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        left = [u for u, _ in self.pairs]
        right = [v for _, v in self.pairs]
        if len(set(left)) != len(left) or len(set(right)) != len(right):
            raise InvalidAlignmentError("alignment is not one-to-one: an entity appears in two pairs")

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[int]]) -> "SeedAlignment":
        return cls(tuple((int(u), int(v)) for u, v in pairs))

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[Tuple[int, int]]:
        return iter(self.pairs)

    @property
    def left(self) -> np.ndarray:
        return np.asarray([u for u, _ in self.pairs], dtype=np.int64)

    @property
    def right(self) -> np.ndarray:
        return np.asarray([v for _, v in self.pairs], dtype=np.int64)

    def transposed(self) -> "SeedAlignment":
        return SeedAlignment(tuple((v, u) for u, v in self.pairs))

    def validate(self, g1: KnowledgeGraph, g2: KnowledgeGraph) -> None:
        for u, v in self.pairs:
            if not 0 <= u < g1.num_entities or not 0 <= v < g2.num_entities:
                raise InvalidAlignmentError(f"pair ({u}, {v}) references an entity outside its graph")


@dataclass(frozen=True)
class AlignmentTask:
    g1: KnowledgeGraph
    g2: KnowledgeGraph
    train_seeds: SeedAlignment
    valid_pairs: SeedAlignment = field(default_factory=SeedAlignment)
    test_pairs: SeedAlignment = field(default_factory=SeedAlignment)
    # optional external identifiers: (entities g1, entities g2, relations g1, relations g2)
    names: Optional[Tuple[Tuple[str, ...], Tuple[str, ...], Tuple[str, ...], Tuple[str, ...]]] = None

    def __post_init__(self):
        splits = {"train": self.train_seeds, "valid": self.valid_pairs, "test": self.test_pairs}
        for split in splits.values():
            split.validate(self.g1, self.g2)
        names = list(splits)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                left = set(splits[a].left.tolist()) & set(splits[b].left.tolist())
                right = set(splits[a].right.tolist()) & set(splits[b].right.tolist())
                if left or right:
                    raise InvalidAlignmentError(f"{a} and {b} pairs overlap")

    def graph(self, tag: str) -> KnowledgeGraph:
        if tag == G1:
            return self.g1
        if tag == G2:
            return self.g2
        raise InvalidGraphError(f"unknown graph tag {tag!r}")

    def check_query(self, query: Query) -> None:
        tag, entity = query
        self.graph(tag).check_entity(entity)

    def with_anchors(self, seeds: SeedAlignment) -> "AlignmentTask":
        return AlignmentTask(self.g1, self.g2, seeds, self.valid_pairs, self.test_pairs, self.names)

    def swapped(self) -> "AlignmentTask":
        """Same task with the roles of G1 and G2 exchanged"""
        names = None
        if self.names is not None:
            e1, e2, r1, r2 = self.names
            names = (e2, e1, r2, r1)
        return AlignmentTask(self.g2, self.g1, self.train_seeds.transposed(),
                             self.valid_pairs.transposed(), self.test_pairs.transposed(), names)

    def summary(self) -> dict:
        return {
            "entities_g1": self.g1.num_entities,
            "entities_g2": self.g2.num_entities,
            "relations_g1": self.g1.num_original_relations,
            "relations_g2": self.g2.num_original_relations,
            "triples_g1": self.g1.num_triples // 2,
            "triples_g2": self.g2.num_triples // 2,
            "train_pairs": len(self.train_seeds),
            "valid_pairs": len(self.valid_pairs),
            "test_pairs": len(self.test_pairs),
        }
