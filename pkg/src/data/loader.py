"""
OpenEA-style dataset ingestion and task dumps.

Input files are UTF-8, tab-separated, one record per line without header:
``rel_triples_1`` / ``rel_triples_2`` hold ``head<TAB>rel<TAB>tail`` and
``ent_links`` holds ``e1<TAB>e2``. Identifiers are opaque strings that get
dense ids in first-occurrence order.
"""

import logging
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from src.exceptions import DatasetFormatError, InvalidAlignmentError
from src.kg.core import AlignmentTask, SeedAlignment, build_graph
from src.models.models import DatasetManifest

logger = logging.getLogger(__name__)


class IdDictionary:
    """Opaque string identifiers to dense ids, in first-occurrence order"""

    def __init__(self, names: Optional[List[str]] = None, frozen: bool = False):
        self.names: List[str] = []
        self.ids: Dict[str, int] = {}
        self.frozen = frozen
        for name in names or []:
            self.ids[name] = len(self.names)
            self.names.append(name)

    def __len__(self) -> int:
        return len(self.names)

    def add(self, name: str) -> int:
        if name not in self.ids:
            if self.frozen:
                raise KeyError(name)
            self.ids[name] = len(self.names)
            self.names.append(name)
        return self.ids[name]

    @classmethod
    def read(cls, path) -> "IdDictionary":
        """``id<TAB>name`` lines; ids must run 0..n-1 in file order"""
        names = []
        for number, fields in _records(path, 2):
            if fields[0] != str(len(names)):
                raise DatasetFormatError(f"expected id {len(names)}, found {fields[0]!r}", path, number)
            names.append(fields[1])
        if len(set(names)) != len(names):
            raise DatasetFormatError("identifier listed twice", path)
        return cls(names, frozen=True)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            for i, name in enumerate(self.names):
                handle.write(f"{i}\t{name}\n")


def _records(path, width: int) -> Iterator[Tuple[int, List[str]]]:
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError("file not found", path)
    try:
        with open(path, "r", encoding="utf-8") as handle:
            for number, line in enumerate(handle, start=1):
                line = line.rstrip("\n").rstrip("\r")
                if not line.strip():
                    continue
                fields = line.split("\t")
                if len(fields) != width or any(not f for f in fields):
                    raise DatasetFormatError(f"expected {width} tab-separated fields, found {len(fields)}",
                                             path, number)
                yield number, fields
    except UnicodeDecodeError as e:
        raise DatasetFormatError(f"not valid UTF-8 ({e.reason})", path) from e


def _read_triples(path, entities: IdDictionary, relations: IdDictionary) -> np.ndarray:
    rows = []
    for number, (head, rel, tail) in _records(path, 3):
        try:
            rows.append((entities.add(head), relations.add(rel), entities.add(tail)))
        except KeyError as e:
            raise DatasetFormatError(f"identifier {e.args[0]!r} missing from the id dictionary", path, number)
    return np.asarray(rows, dtype=np.int64).reshape(-1, 3)


def _read_links(path, ents1: IdDictionary, ents2: IdDictionary) -> List[Tuple[int, int]]:
    pairs, seen1, seen2 = [], set(), set()
    for number, (left, right) in _records(path, 2):
        try:
            u, v = ents1.add(left), ents2.add(right)
        except KeyError as e:
            raise DatasetFormatError(f"identifier {e.args[0]!r} missing from the id dictionary", path, number)
        if u in seen1 or v in seen2:
            raise DatasetFormatError(f"entity of link ({left}, {right}) is already aligned", path, number)
        seen1.add(u)
        seen2.add(v)
        pairs.append((u, v))
    return pairs


def split_pairs(pairs: List[Tuple[int, int]], seed: int,
                ratios: Tuple[float, float, float] = (0.2, 0.1, 0.7)):
    """Deterministic train/valid/test split; at least one pair goes to train"""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    n = len(pairs)
    n_train = min(n, max(1, int(round(ratios[0] * n)))) if n else 0
    n_valid = min(n - n_train, int(round(ratios[1] * n)))
    shuffled = [pairs[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:n_train + n_valid], shuffled[n_train + n_valid:]


def load_task(manifest: DatasetManifest) -> AlignmentTask:
    if manifest.has_dictionaries():
        ents1, ents2 = IdDictionary.read(manifest.ent_ids_1), IdDictionary.read(manifest.ent_ids_2)
        rels1, rels2 = IdDictionary.read(manifest.rel_ids_1), IdDictionary.read(manifest.rel_ids_2)
    else:
        ents1, ents2, rels1, rels2 = IdDictionary(), IdDictionary(), IdDictionary(), IdDictionary()

    triples1 = _read_triples(manifest.rel_triples_1, ents1, rels1)
    triples2 = _read_triples(manifest.rel_triples_2, ents2, rels2)
    links = _read_links(manifest.ent_links, ents1, ents2)
    for path, triples in ((manifest.rel_triples_1, triples1), (manifest.rel_triples_2, triples2)):
        if triples.shape[0] == 0:
            raise DatasetFormatError("no triples", path)

    if manifest.has_splits():
        linked = set(links)
        splits = []
        for path in (manifest.train_links, manifest.valid_links, manifest.test_links):
            split = _read_links(path, ents1, ents2)
            stray = [p for p in split if p not in linked]
            if stray:
                raise DatasetFormatError(f"pair {stray[0]} is not listed in {manifest.ent_links}", path)
            splits.append(split)
        train, valid, test = splits
    else:
        # split over name order so a reordered links file yields the same split
        ordered = sorted(links, key=lambda p: (ents1.names[p[0]], ents2.names[p[1]]))
        train, valid, test = split_pairs(ordered, manifest.split_seed, manifest.split_ratios)

    g1 = build_graph(triples1, len(ents1), len(rels1))
    g2 = build_graph(triples2, len(ents2), len(rels2))
    try:
        task = AlignmentTask(
            g1=g1, g2=g2,
            train_seeds=SeedAlignment.from_pairs(train),
            valid_pairs=SeedAlignment.from_pairs(valid),
            test_pairs=SeedAlignment.from_pairs(test),
            names=(tuple(ents1.names), tuple(ents2.names), tuple(rels1.names), tuple(rels2.names)),
        )
    except InvalidAlignmentError as e:
        raise DatasetFormatError(str(e), manifest.ent_links) from e
    logger.info("loaded task: %s", task.summary())
    return task


def load_task_directory(directory, split_seed: int = 0) -> AlignmentTask:
    return load_task(DatasetManifest.from_directory(directory, split_seed))


def task_names(task: AlignmentTask):
    """External identifiers, or ``e<id>``/``r<id>`` placeholders"""
    if task.names is not None:
        return task.names
    return (tuple(f"e{i}" for i in range(task.g1.num_entities)),
            tuple(f"e{i}" for i in range(task.g2.num_entities)),
            tuple(f"r{i}" for i in range(task.g1.num_original_relations)),
            tuple(f"r{i}" for i in range(task.g2.num_original_relations)))


def dump_task(task: AlignmentTask, directory) -> Path:
    """Write the task in the layout load_task reads back, dictionaries included"""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    e1, e2, r1, r2 = task_names(task)

    for suffix, graph, ents, rels in (("1", task.g1, e1, r1), ("2", task.g2, e2, r2)):
        facts = graph.triple_array()
        facts = facts[facts[:, 1] < graph.num_original_relations]
        with open(root / f"rel_triples_{suffix}", "w", encoding="utf-8") as handle:
            for h, r, t in facts:
                handle.write(f"{ents[h]}\t{rels[r]}\t{ents[t]}\n")
        IdDictionary(list(ents)).write(root / f"ent_ids_{suffix}")
        IdDictionary(list(rels)).write(root / f"rel_ids_{suffix}")

    splits = {"train_links": task.train_seeds, "valid_links": task.valid_pairs, "test_links": task.test_pairs}
    with open(root / "ent_links", "w", encoding="utf-8") as links:
        for name, pairs in splits.items():
            with open(root / name, "w", encoding="utf-8") as handle:
                for u, v in pairs:
                    handle.write(f"{e1[u]}\t{e2[v]}\n")
                    links.write(f"{e1[u]}\t{e2[v]}\n")
    logger.info("wrote task to %s", root)
    return root


def canonical_form(task: AlignmentTask) -> dict:
    """Id-free view of a task: facts and splits spelled with external identifiers"""
    e1, e2, r1, r2 = task_names(task)

    def facts(graph, ents, rels):
        arr = graph.triple_array()
        arr = arr[arr[:, 1] < graph.num_original_relations]
        return frozenset((ents[h], rels[r], ents[t]) for h, r, t in arr)

    def pairs(alignment):
        return frozenset((e1[u], e2[v]) for u, v in alignment)

    return {
        "facts_1": facts(task.g1, e1, r1),
        "facts_2": facts(task.g2, e2, r2),
        "entities_1": frozenset(e1),
        "entities_2": frozenset(e2),
        "train": pairs(task.train_seeds),
        "valid": pairs(task.valid_pairs),
        "test": pairs(task.test_pairs),
    }
