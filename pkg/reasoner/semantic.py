"""
Semantic component: the background graph of recent snapshots and the
auxiliary-element-aware GCN that turns it into time-indexed entity embeddings.
"""

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .dataset import Dataset
from .errors import ConfigError
from .models import Pair, RunConfig
from .tensor import ParameterSet, Tensor

logger = logging.getLogger(__name__)

# (base predicate, inverse flag, pairs): a fact without its timestamp
StrippedFact = tuple[int, bool, tuple[Pair, ...]]


@dataclass
class BackgroundGraph:
    """Timestamp-stripped union of the facts in snapshots t−m .. t−1."""
    time: int
    window: int
    edges: list[StrippedFact] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.edges)


def build_background_graph(ds: Dataset, t: int, m: int) -> BackgroundGraph:
    """Collapse the window's facts to a set; a window reaching before the data just yields fewer edges."""
    if m < 1:
        raise ConfigError(f"history window must be at least 1, got {m}")
    unique: set[StrippedFact] = set()
    for tau in range(t - m, t):
        for fact in ds.snapshots.get(tau, ()):
            unique.add(fact.stripped())
    # canonical order keeps message passing bit-reproducible
    return BackgroundGraph(time=t, window=m, edges=sorted(unique))


@dataclass
class GcnParams:
    """Embedding tables and GCN weights.

    ``entity`` has one row per training-time entity plus a final row shared by
    every unseen entity. ``lift`` maps entity vectors to the predicate width
    and ``drop`` maps aggregated messages back; ``layers`` holds
    (W_neighbor, W_self) per message-passing layer and is empty when the GCN
    is bypassed.
    """
    entity: Tensor
    predicate: Tensor
    role: Tensor
    lift: Tensor
    aux: Tensor
    layers: list[tuple[Tensor, Tensor]] = field(default_factory=list)
    drop: Tensor | None = None
    mix_weight: float = 0.7
    aggregation: str = "mean"
    activation: str = "tanh"
    num_base_predicates: int = 0

    def __post_init__(self):
        if not 0.0 < self.mix_weight < 1.0:
            raise ConfigError(f"mix_weight must lie strictly inside (0, 1), got {self.mix_weight}")
        if self.aggregation not in ("mean", "sum"):
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")

    @property
    def entity_dim(self) -> int:
        return self.entity.shape[1]

    @property
    def predicate_dim(self) -> int:
        return self.predicate.shape[1]

    @property
    def unseen_row(self) -> int:
        return self.entity.shape[0] - 1

    def psi(self, x: Tensor) -> Tensor:
        return T.tanh(x) if self.activation == "tanh" else x

    @classmethod
    def create(cls, params: ParameterSet, ds: Dataset, config: RunConfig,
               num_entity_rows: int | None = None) -> "GcnParams":
        """Register the tables on ``params``; ``num_entity_rows`` pins the entity table to a trained size."""
        de, dp = config.entity_dim, config.predicate_dim
        rows = num_entity_rows if num_entity_rows is not None else ds.num_entities + 1
        entity = params.create("embedding.entity", (rows, de), fan_in=de)
        predicate = params.create("embedding.predicate", (ds.num_predicate_rows, dp), fan_in=dp)
        role = params.create("embedding.role", (max(ds.num_roles, 1), dp), fan_in=dp)
        lift = params.create("semantic.lift", (de, dp))
        aux = params.create("semantic.aux", (dp, dp))
        layers = []
        drop = None
        if not config.no_sc:
            for k in range(config.gcn_layers):
                layers.append((
                    params.create(f"semantic.layer{k}.neighbor", (dp, dp)),
                    params.create(f"semantic.layer{k}.self", (de, de)),
                ))
            drop = params.create("semantic.drop", (dp, de))
        return cls(entity, predicate, role, lift, aux, layers, drop,
                   mix_weight=config.mix_weight, aggregation=config.gcn_aggregation,
                   num_base_predicates=ds.num_base_predicates)

    def entity_rows(self, ds: Dataset) -> np.ndarray:
        """Embedding row of every entity id; unseen entities share the last row."""
        rows = np.full(ds.num_entities, self.unseen_row, dtype=np.int64)
        for entity in ds.seen_entities:
            if entity < self.unseen_row:
                rows[entity] = entity
        return rows

    def base_entities(self, ds: Dataset) -> Tensor:
        """Per-entity base embeddings (no message passing)."""
        return T.gather(self.entity, self.entity_rows(ds))


def aux_embeddings(pair_lists: Sequence[Sequence[Pair]], entities: Tensor, params: GcnParams) -> Tensor:
    """Auxiliary embedding of each pair list: ψ(W₃ Σ (ρ + lift·h_e)). Returns len(pair_lists) × predicate_dim."""
    count = len(pair_lists)
    seg, roles, ents = [], [], []
    for i, pairs in enumerate(pair_lists):
        for role, entity in sorted(pairs):
            seg.append(i)
            roles.append(role)
            ents.append(entity)
    if not seg:
        return params.psi(Tensor(np.zeros((count, params.predicate_dim))))
    x = T.gather(params.role, roles) + T.gather(entities, ents) @ params.lift
    summed = T.segment_sum(x, seg, count)
    return params.psi(summed @ params.aux)


def aux_embedding(pairs: Sequence[Pair], entities: Tensor, params: GcnParams) -> Tensor:
    """Auxiliary embedding of one pair list as a 1 × predicate_dim row."""
    return aux_embeddings([pairs], entities, params)


def augmented_predicate(r_emb, h_aux, w: float) -> Tensor:
    """Convex combination w·r + (1 − w)·h_aux."""
    if not 0.0 < w < 1.0:
        raise ConfigError(f"mixing weight must lie strictly inside (0, 1), got {w}")
    return T.add(T.mul(r_emb, w), T.mul(h_aux, 1.0 - w))


def encode(bg: BackgroundGraph, params: GcnParams, ds: Dataset) -> Tensor:
    """Run the GCN over the background graph and return the |E| × entity_dim table H_t.

    Messages flow from an edge's second core entity to its first; inverse
    facts in the graph carry the reverse direction. Entities without
    incident edges keep their base embedding.
    """
    h = params.base_entities(ds)
    if not bg.edges or not params.layers:
        return h

    num_entities = ds.num_entities
    targets = np.array([pairs[0][1] for _, _, pairs in bg.edges], dtype=np.int64)
    sources = np.array([pairs[1][1] for _, _, pairs in bg.edges], dtype=np.int64)
    pred_rows = [p + (params.num_base_predicates if inv else 0) for p, inv, _ in bg.edges]
    aux_lists = [pairs[2:] for _, _, pairs in bg.edges]

    degree = np.bincount(targets, minlength=num_entities).astype(np.float64)
    has_edges = (degree > 0).astype(np.float64)[:, None]
    if params.aggregation == "mean":
        norm = (1.0 / degree[targets])[:, None]
    else:
        norm = np.ones((len(targets), 1))
    keep = Tensor(1.0 - has_edges)
    update = Tensor(has_edges)
    r_edges = T.gather(params.predicate, pred_rows)

    for w_neighbor, w_self in params.layers:
        r_hat = augmented_predicate(r_edges, aux_embeddings(aux_lists, h, params), params.mix_weight)
        messages = (r_hat + T.gather(h, sources) @ params.lift) @ w_neighbor
        aggregated = T.segment_sum(messages * norm, targets, num_entities) @ params.drop
        layer_out = params.psi(aggregated + h @ w_self)
        h = layer_out * update + h * keep
    return h
