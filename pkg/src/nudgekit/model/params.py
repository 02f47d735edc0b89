"""Model parameters: embedding tables, projections, layer weights.

Entity rows are kept in sorted-entity order for a given snapshot; relation
rows cover exactly the relation types present in that snapshot. All arrays
are float64 and initialization is a pure function of the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
import numpy as np

from ..entities import EntityId, EntityKind, Relation
from ..graph import GraphSnapshot

KNOWLEDGE_AWARE = "knowledge_aware"
GRAPH_ATTENTION = "graph_attention"
SUM_LINEAR = "sum_linear"
CONCAT_LINEAR = "concat_linear"
SCOPE_ALL = "all_neighbors"
SCOPE_PER_RELATION = "per_relation"

CHECKPOINT_VERSION = 1

DEFAULT_POSITIVE_RELATIONS = (
    Relation.OPENED.value,
    Relation.RATED_USEFUL.value,
    Relation.RATED_NOT_USEFUL.value,
)


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class HyperParams:
    entity_dim: int = 32
    relation_dim: int = 32
    layer_dims: tuple[int, ...] = (32, 16)
    attention: str = KNOWLEDGE_AWARE
    aggregator: str = SUM_LINEAR
    attention_scope: str = SCOPE_ALL
    leaky_slope: float = 0.2
    learning_rate: float = 0.5
    l2_weight: float = 1e-5
    num_negatives: int = 1
    max_epochs: int = 200
    tolerance: float = 1e-4
    seed: int = 0
    positive_relations: tuple[str, ...] = DEFAULT_POSITIVE_RELATIONS

    def __post_init__(self) -> None:
        if self.entity_dim < 1 or self.relation_dim < 1:
            raise ModelError("embedding dimensions must be >= 1")
        if not self.layer_dims or any(d < 1 for d in self.layer_dims):
            raise ModelError("layer_dims must be non-empty with all dims >= 1")
        if self.attention not in (KNOWLEDGE_AWARE, GRAPH_ATTENTION):
            raise ModelError(f"unknown attention mechanism {self.attention!r}")
        if self.aggregator not in (SUM_LINEAR, CONCAT_LINEAR):
            raise ModelError(f"unknown aggregator {self.aggregator!r}")
        if self.attention_scope not in (SCOPE_ALL, SCOPE_PER_RELATION):
            raise ModelError(f"unknown attention scope {self.attention_scope!r}")

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims)

    def layer_weight_shapes(self) -> list[tuple[int, int]]:
        """(out_dim, in_dim) per layer; concat doubles the input width."""
        shapes = []
        prev = self.entity_dim
        for out in self.layer_dims:
            width = 2 * prev if self.aggregator == CONCAT_LINEAR else prev
            shapes.append((out, width))
            prev = out
        return shapes


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def xavier_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Uniform(-b, b) with fan_in = fan_out = the vector's dimension."""
    b = xavier_bound(dim, dim)
    return rng.uniform(-b, b, size=dim)


def xavier_matrix(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Uniform Xavier for weight tensors; fans from the trailing two axes."""
    fan_out, fan_in = shape[-2], shape[-1]
    b = xavier_bound(fan_in, fan_out)
    return rng.uniform(-b, b, size=shape)


@dataclass(frozen=True)
class ModelState:
    hp: HyperParams
    entity_ids: tuple[EntityId, ...]
    relation_names: tuple[str, ...]
    entity_emb: np.ndarray  # (N, d)
    relation_emb: np.ndarray  # (R, k)
    relation_proj: np.ndarray  # (R, k, d)
    layer_weights: tuple[np.ndarray, ...]  # (out, in) per layer
    gat_proj: np.ndarray  # (d, d)
    gat_attn: np.ndarray  # (2d,)
    _entity_row: dict[EntityId, int] = field(init=False, repr=False, compare=False)
    _relation_row: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "_entity_row", {e: i for i, e in enumerate(self.entity_ids)}
        )
        object.__setattr__(
            self, "_relation_row", {r: i for i, r in enumerate(self.relation_names)}
        )

    def entity_row(self, entity: EntityId) -> int:
        try:
            return self._entity_row[entity]
        except KeyError:
            raise ModelError(f"no embedding for entity {entity}") from None

    def has_entity(self, entity: EntityId) -> bool:
        return entity in self._entity_row

    def relation_row(self, name: str) -> int:
        try:
            return self._relation_row[name]
        except KeyError:
            raise ModelError(f"no embedding for relation {name!r}") from None

    def embedding_of(self, entity: EntityId) -> np.ndarray:
        return self.entity_emb[self.entity_row(entity)]

    def copy(self) -> "ModelState":
        return replace(
            self,
            entity_emb=self.entity_emb.copy(),
            relation_emb=self.relation_emb.copy(),
            relation_proj=self.relation_proj.copy(),
            layer_weights=tuple(w.copy() for w in self.layer_weights),
            gat_proj=self.gat_proj.copy(),
            gat_attn=self.gat_attn.copy(),
        )

    def assert_finite(self) -> None:
        for name, arr in self.named_arrays().items():
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"non-finite values in {name}")

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {
            "entity_emb": self.entity_emb,
            "relation_emb": self.relation_emb,
            "relation_proj": self.relation_proj,
            "gat_proj": self.gat_proj,
            "gat_attn": self.gat_attn,
        }
        for i, w in enumerate(self.layer_weights):
            out[f"layer_{i}"] = w
        return out


def _snapshot_vocab(snapshot: GraphSnapshot) -> tuple[list[EntityId], list[str]]:
    entity_ids = sorted(snapshot.entities)
    relation_names = sorted({t.relation.value for t in snapshot.triplets})
    return entity_ids, relation_names


def init_embeddings(snapshot: GraphSnapshot, hp: HyperParams) -> ModelState:
    """Fresh Xavier-initialized state covering the snapshot's vocabulary."""
    if not snapshot.entities:
        raise ModelError("cannot initialize a model over an empty snapshot")
    entity_ids, relation_names = _snapshot_vocab(snapshot)
    rng = np.random.default_rng(hp.seed)
    d, k = hp.entity_dim, hp.relation_dim
    n, r = len(entity_ids), len(relation_names)

    entity_emb = rng.uniform(-xavier_bound(d, d), xavier_bound(d, d), size=(n, d))
    relation_emb = rng.uniform(-xavier_bound(k, k), xavier_bound(k, k), size=(r, k))
    relation_proj = rng.uniform(-xavier_bound(d, k), xavier_bound(d, k), size=(r, k, d))
    layer_weights = tuple(xavier_matrix(rng, shape) for shape in hp.layer_weight_shapes())
    gat_proj = xavier_matrix(rng, (d, d))
    gat_attn = xavier_vector(rng, 2 * d)
    return ModelState(
        hp=hp,
        entity_ids=tuple(entity_ids),
        relation_names=tuple(relation_names),
        entity_emb=entity_emb,
        relation_emb=relation_emb,
        relation_proj=relation_proj,
        layer_weights=layer_weights,
        gat_proj=gat_proj,
        gat_attn=gat_attn,
    )


def warm_start(prev: ModelState, new_snapshot: GraphSnapshot, hp: HyperParams) -> ModelState:
    """Carry learned rows into the new snapshot's vocabulary.

    Entities/relations present in `prev` keep their values verbatim; new
    ones get Xavier draws (seeded by hp.seed and the snapshot day, so each
    day's cold-start rows are reproducible); dropped ones are discarded.
    Layer weights and attention parameters always carry over.
    """
    if (hp.entity_dim, hp.relation_dim) != (prev.hp.entity_dim, prev.hp.relation_dim):
        raise ModelError(
            "warm start requires matching embedding dims: "
            f"prev d={prev.hp.entity_dim}/k={prev.hp.relation_dim}, "
            f"new d={hp.entity_dim}/k={hp.relation_dim}"
        )
    if hp.layer_weight_shapes() != prev.hp.layer_weight_shapes():
        raise ModelError("warm start requires matching layer shapes")

    entity_ids, relation_names = _snapshot_vocab(new_snapshot)
    rng = np.random.default_rng([hp.seed, new_snapshot.time])
    d, k = hp.entity_dim, hp.relation_dim

    entity_emb = np.empty((len(entity_ids), d))
    for i, ent in enumerate(entity_ids):
        if prev.has_entity(ent):
            entity_emb[i] = prev.entity_emb[prev.entity_row(ent)]
        else:
            entity_emb[i] = xavier_vector(rng, d)

    relation_emb = np.empty((len(relation_names), k))
    relation_proj = np.empty((len(relation_names), k, d))
    for i, name in enumerate(relation_names):
        if name in prev.relation_names:
            j = prev.relation_row(name)
            relation_emb[i] = prev.relation_emb[j]
            relation_proj[i] = prev.relation_proj[j]
        else:
            relation_emb[i] = xavier_vector(rng, k)
            relation_proj[i] = xavier_matrix(rng, (k, d))

    return ModelState(
        hp=hp,
        entity_ids=tuple(entity_ids),
        relation_names=tuple(relation_names),
        entity_emb=entity_emb,
        relation_emb=relation_emb,
        relation_proj=relation_proj,
        layer_weights=tuple(w.copy() for w in prev.layer_weights),
        gat_proj=prev.gat_proj.copy(),
        gat_attn=prev.gat_attn.copy(),
    )


def save_checkpoint(state: ModelState, path) -> None:
    """Write a bit-exact, versioned checkpoint (npz arrays + JSON header)."""
    hp = state.hp
    header = {
        "version": CHECKPOINT_VERSION,
        "hyperparams": {
            "entity_dim": hp.entity_dim,
            "relation_dim": hp.relation_dim,
            "layer_dims": list(hp.layer_dims),
            "attention": hp.attention,
            "aggregator": hp.aggregator,
            "attention_scope": hp.attention_scope,
            "leaky_slope": hp.leaky_slope,
            "learning_rate": hp.learning_rate,
            "l2_weight": hp.l2_weight,
            "num_negatives": hp.num_negatives,
            "max_epochs": hp.max_epochs,
            "tolerance": hp.tolerance,
            "seed": hp.seed,
            "positive_relations": list(hp.positive_relations),
        },
        "entities": [[e.kind.value, e.local_id] for e in state.entity_ids],
        "relations": list(state.relation_names),
        "num_layers": len(state.layer_weights),
    }
    arrays = {
        "entity_emb": state.entity_emb,
        "relation_emb": state.relation_emb,
        "relation_proj": state.relation_proj,
        "gat_proj": state.gat_proj,
        "gat_attn": state.gat_attn,
    }
    for i, w in enumerate(state.layer_weights):
        arrays[f"layer_{i}"] = w
    arrays["header"] = np.frombuffer(
        json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> ModelState:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode("utf-8"))
        if header["version"] != CHECKPOINT_VERSION:
            raise ModelError(f"unsupported checkpoint version {header['version']}")
        hp_dict = dict(header["hyperparams"])
        hp_dict["layer_dims"] = tuple(hp_dict["layer_dims"])
        hp_dict["positive_relations"] = tuple(hp_dict["positive_relations"])
        hp = HyperParams(**hp_dict)
        entity_ids = tuple(
            EntityId(EntityKind(kind), local_id) for kind, local_id in header["entities"]
        )
        layer_weights = tuple(data[f"layer_{i}"] for i in range(header["num_layers"]))
        return ModelState(
            hp=hp,
            entity_ids=entity_ids,
            relation_names=tuple(header["relations"]),
            entity_emb=data["entity_emb"],
            relation_emb=data["relation_emb"],
            relation_proj=data["relation_proj"],
            layer_weights=layer_weights,
            gat_proj=data["gat_proj"],
            gat_attn=data["gat_attn"],
        )


def states_equal(a: ModelState, b: ModelState) -> bool:
    if a.entity_ids != b.entity_ids or a.relation_names != b.relation_names:
        return False
    an, bn = a.named_arrays(), b.named_arrays()
    return set(an) == set(bn) and all(np.array_equal(an[k], bn[k]) for k in an)
