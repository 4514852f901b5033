from dataclasses import dataclass, field, fields, asdict
from datetime import datetime
from pathlib import Path
from typing import Optional, Dict, Any
import uuid

from src.exceptions import ConfigError

ABLATIONS = ("none", "no_relgraph", "no_parallel", "no_interaction")
DIRECTIONS = ("g1_to_g2", "g2_to_g1", "mean")
CANDIDATE_POOLS = ("test", "all")
DTYPES = ("float32", "float64")
REL_AGGREGATIONS = ("mean", "sum")
BREAKDOWNS = ("degree", "relations")
HITS_CUTOFFS = (1, 5, 10)


@dataclass
class TrainConfig:
    # Model size
    dim: int = 32  # hidden dimension d
    rel_layers: int = 6  # RelGNN depth
    ent_layers: int = 6  # EntGNN depth
    leaky_slope: float = 0.2
    rel_aggregation: str = "mean"  # RelGNN pooling over incoming relation edges

    # Anchor activation
    anchor_hop: int = 2  # k
    anchor_fallback: bool = True
    anchor_fallback_cap: int = 4
    exclude_query_anchor: bool = True  # mask the supervised pair out of its own anchors
    relgraph_include_inverses: bool = True

    # Optimisation
    lr: float = 5e-4
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10  # epochs without validation MRR improvement
    weight_decay: float = 0.01
    negative_sample_size: int = 0  # 0 = softmax over the full opposite entity set
    rng_seed: int = 0
    ablation: str = "none"

    # Evaluation
    direction: str = "g1_to_g2"
    eval_candidates: str = "test"
    valid_candidate_cap: int = 1000

    # Runtime
    dtype: str = "float32"
    num_threads: int = 0  # 0 keeps the torch default

    def validate(self) -> "TrainConfig":
        """Reject inconsistent settings; returns self for chaining"""
        positive = ["dim", "rel_layers", "ent_layers", "anchor_hop", "batch_size", "max_epochs",
                    "patience", "valid_candidate_cap", "anchor_fallback_cap"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr < 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if self.weight_decay < 0 or self.negative_sample_size < 0 or self.num_threads < 0:
            raise ConfigError("weight_decay, negative_sample_size and num_threads must be non-negative")
        if self.leaky_slope < 0:
            raise ConfigError(f"leaky_slope must be non-negative, got {self.leaky_slope}")
        if self.patience > self.max_epochs:
            raise ConfigError(f"patience ({self.patience}) exceeds max_epochs ({self.max_epochs})")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {', '.join(ABLATIONS)}")
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"unknown direction {self.direction!r}")
        if self.eval_candidates not in CANDIDATE_POOLS:
            raise ConfigError(f"unknown candidate pool {self.eval_candidates!r}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"unknown dtype {self.dtype!r}")
        if self.rel_aggregation not in REL_AGGREGATIONS:
            raise ConfigError(f"unknown relation aggregation {self.rel_aggregation!r}; choose mean or sum")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        coerced = {}
        for name, value in values.items():
            default = getattr(cls, name)
            try:
                if isinstance(default, bool):
                    coerced[name] = value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes", "on")
                else:
                    coerced[name] = type(default)(value)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"invalid value for {name}: {value!r}") from e
        return cls(**coerced)


@dataclass
class Metrics:
    mrr: float = 0.0
    hits_at: Dict[int, float] = field(default_factory=dict)
    num_queries: int = 0
    num_degenerate_queries: int = 0
    direction: str = "g1_to_g2"
    candidate_pool: str = "test"
    wall_clock_seconds: float = 0.0

    # Per-direction breakdown, filled when direction == "mean"
    per_direction: Dict[str, "Metrics"] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "direction": self.direction,
            "candidate_pool": self.candidate_pool,
            "mrr": self.mrr,
            "num_queries": self.num_queries,
            "num_degenerate_queries": self.num_degenerate_queries,
            "wall_clock_seconds": self.wall_clock_seconds,
        }
        for k in sorted(self.hits_at):
            data[f"hits@{k}"] = self.hits_at[k]
        for name, sub in self.per_direction.items():
            for key, value in sub.to_dict().items():
                if key not in ("direction", "candidate_pool", "wall_clock_seconds"):
                    data[f"{name}.{key}"] = value
        return data

    def to_key_value(self, prefix: str = "") -> str:
        """Machine-parseable ``key=value`` lines"""
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, float):
                value = f"{value:.6f}"
            lines.append(f"{prefix}{key}={value}")
        return "\n".join(lines)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Metrics":
        hits = {int(key.split("@")[1]): float(value) for key, value in data.items()
                if key.startswith("hits@")}
        per_direction: Dict[str, Dict[str, Any]] = {}
        for key, value in data.items():
            if "." in key:
                name, sub_key = key.split(".", 1)
                per_direction.setdefault(name, {})[sub_key] = value
        return cls(
            mrr=float(data.get("mrr", 0.0)),
            hits_at=hits,
            num_queries=int(data.get("num_queries", 0)),
            num_degenerate_queries=int(data.get("num_degenerate_queries", 0)),
            direction=data.get("direction", "g1_to_g2"),
            candidate_pool=data.get("candidate_pool", "test"),
            wall_clock_seconds=float(data.get("wall_clock_seconds", 0.0)),
            per_direction={name: cls.from_dict({**sub, "direction": name}) for name, sub in per_direction.items()},
        )


@dataclass
class SynthSpec:
    num_entities: int = 300
    num_relations: int = 10
    avg_degree: float = 4.0
    edge_drop_rate_g1: float = 0.0
    edge_drop_rate_g2: float = 0.0
    relation_renaming: bool = True  # fresh relation vocabulary for the second graph
    seed_fraction: float = 0.3
    rng_seed: int = 0

    def validate(self) -> "SynthSpec":
        if self.num_entities < 2 or self.num_relations < 1 or self.avg_degree <= 0:
            raise ConfigError("synthetic graphs need at least 2 entities, 1 relation and positive degree")
        for name in ("edge_drop_rate_g1", "edge_drop_rate_g2"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.seed_fraction < 1.0:
            raise ConfigError("seed_fraction must lie in (0, 1)")
        return self


@dataclass
class DatasetManifest:
    rel_triples_1: Path = Path("rel_triples_1")
    rel_triples_2: Path = Path("rel_triples_2")
    ent_links: Path = Path("ent_links")

    # Optional pre-split link files
    train_links: Optional[Path] = None
    valid_links: Optional[Path] = None
    test_links: Optional[Path] = None

    # Optional id dictionaries (``id<TAB>name``), written by dump_task
    ent_ids_1: Optional[Path] = None
    ent_ids_2: Optional[Path] = None
    rel_ids_1: Optional[Path] = None
    rel_ids_2: Optional[Path] = None

    split_seed: int = 0
    split_ratios: tuple = (0.2, 0.1, 0.7)

    @classmethod
    def from_directory(cls, directory, split_seed: int = 0) -> "DatasetManifest":
        """OpenEA layout: rel_triples_1/2, ent_links and optional fold link files"""
        root = Path(directory)
        manifest = cls(
            rel_triples_1=root / "rel_triples_1",
            rel_triples_2=root / "rel_triples_2",
            ent_links=root / "ent_links",
            split_seed=split_seed,
        )
        for folder in (root, root / "721_5fold" / "1"):
            names = [folder / "train_links", folder / "valid_links", folder / "test_links"]
            if all(p.exists() for p in names):
                manifest.train_links, manifest.valid_links, manifest.test_links = names
                break
        dictionaries = [root / name for name in ("ent_ids_1", "ent_ids_2", "rel_ids_1", "rel_ids_2")]
        if all(p.exists() for p in dictionaries):
            manifest.ent_ids_1, manifest.ent_ids_2, manifest.rel_ids_1, manifest.rel_ids_2 = dictionaries
        return manifest

    def has_splits(self) -> bool:
        return all(p is not None for p in (self.train_links, self.valid_links, self.test_links))

    def has_dictionaries(self) -> bool:
        return all(p is not None for p in (self.ent_ids_1, self.ent_ids_2, self.rel_ids_1, self.rel_ids_2))


@dataclass
class RunRecord:
    id: Optional[int] = None
    run_id: str = ""
    command: str = ""
    task_path: str = ""
    ablation: str = "none"
    anchor_hop: int = 2
    config: Dict[str, Any] = None
    metrics: Dict[str, Any] = None
    checkpoint_path: str = ""
    notes: str = ""
    created_at: Optional[datetime] = None

    def __post_init__(self):
        if self.config is None:
            self.config = {}
        if self.metrics is None:
            self.metrics = {}
        if not self.run_id:
            self.run_id = str(uuid.uuid4())
