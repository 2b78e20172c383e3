"""
Data models for the reasoner.
Uses dataclasses for type safety and validation.
"""

from dataclasses import dataclass, field, fields, asdict
from enum import Enum
from typing import Any, Optional


# A role–entity pair: (role id, entity id)
Pair = tuple[int, int]


@dataclass(frozen=True)
class Fact:
    """One n-tuple: predicate, ordered role–entity pairs and a timestamp tick.

    ``pairs[0]`` and ``pairs[1]`` are the core pairs, the rest are auxiliary.
    ``predicate`` is always the base predicate id; ``inverse`` marks the
    orientation produced by swapping the two core pairs.
    """
    predicate: int
    pairs: tuple[Pair, ...]
    timestamp: int
    inverse: bool = False

    @property
    def subject(self) -> int:
        return self.pairs[0][1]

    @property
    def object(self) -> int:
        return self.pairs[1][1]

    @property
    def aux(self) -> tuple[Pair, ...]:
        return self.pairs[2:]

    def inverted(self) -> "Fact":
        """Swap the core pairs (roles travel with their entities)."""
        pairs = (self.pairs[1], self.pairs[0]) + self.pairs[2:]
        return Fact(self.predicate, pairs, self.timestamp, not self.inverse)

    def stripped(self) -> tuple[int, bool, tuple[Pair, ...]]:
        """The fact without its timestamp."""
        return (self.predicate, self.inverse, self.pairs)


@dataclass(frozen=True)
class Query:
    """A fact with one core entity masked."""
    source: Fact
    answer: int
    query_time: int
    masked_core_position: int = 1

    @property
    def entity(self) -> int:
        """The known core entity the search starts from."""
        return self.source.pairs[1 - self.masked_core_position][1]

    @property
    def predicate(self) -> int:
        return self.source.predicate

    @property
    def inverse(self) -> bool:
        return self.source.inverse

    @property
    def aux(self) -> tuple[Pair, ...]:
        return self.source.aux


class ActionKind(Enum):
    """Types of actions available to the agent."""
    FACT = "fact"
    SELF_LOOP = "self_loop"


@dataclass(frozen=True)
class Action:
    """An outgoing historical fact, or the self-loop."""
    kind: ActionKind
    fact: Optional[Fact] = None

    @classmethod
    def self_loop(cls) -> "Action":
        return cls(ActionKind.SELF_LOOP)

    @classmethod
    def from_fact(cls, fact: Fact) -> "Action":
        return cls(ActionKind.FACT, fact)

    @property
    def is_self_loop(self) -> bool:
        return self.kind is ActionKind.SELF_LOOP


@dataclass(frozen=True)
class State:
    """Agent position: current entity, current time, the query and the step index."""
    entity: int
    time: int
    query: Query
    step: int = 0

    @classmethod
    def initial(cls, query: Query) -> "State":
        return cls(entity=query.entity, time=query.query_time, query=query, step=0)


@dataclass
class GateWeights:
    """Mixture weights of the predicate, core and whole-fact policies for one step."""
    predicate: float = 0.0
    core: float = 0.0
    fact: float = 0.0

    def as_list(self) -> list[float]:
        return [self.predicate, self.core, self.fact]


@dataclass
class StepRecord:
    """One step of a trajectory."""
    state: State
    action: Action
    log_prob: Any  # Tensor during training, float during inference
    entropy: Any = None
    gate: GateWeights = field(default_factory=GateWeights)


@dataclass
class Trajectory:
    """A length-L walk and its terminal reward."""
    query: Query
    steps: list[StepRecord] = field(default_factory=list)
    final_state: Optional[State] = None
    reward: float = 0.0

    @property
    def final_entity(self) -> int:
        if self.final_state is None:
            return self.query.entity
        return self.final_state.entity

    def __len__(self) -> int:
        return len(self.steps)


@dataclass
class PathStep:
    """A step of a scored inference path."""
    action: Action
    gate: GateWeights


@dataclass
class RankedCandidates:
    """Beam search output for one query."""
    query: Query
    scores: dict[int, float] = field(default_factory=dict)
    paths: dict[int, list[PathStep]] = field(default_factory=dict)

    def ranking(self) -> list[int]:
        """Entities ordered by score (descending), ties broken by entity id."""
        return sorted(self.scores, key=lambda e: (-self.scores[e], e))


@dataclass
class QueryOutcome:
    """Evaluation outcome of one query."""
    query: Query
    rank: int
    reached: bool
    predicted: Optional[int] = None
    score: Optional[float] = None
    path: list[PathStep] = field(default_factory=list)


@dataclass
class EvalResult:
    """Time-aware filtered ranking metrics."""
    outcomes: list[QueryOutcome] = field(default_factory=list)
    mrr: float = 0.0
    hits: dict[int, float] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def ranks(self) -> list[int]:
        return [o.rank for o in self.outcomes]

    def to_dict(self) -> dict[str, Any]:
        return {
            "queries": len(self.outcomes),
            "mrr": self.mrr,
            "hits1": self.hits.get(1, 0.0),
            "hits3": self.hits.get(3, 0.0),
            "hits10": self.hits.get(10, 0.0),
            "ranks": self.ranks,
            "config": self.config,
        }


class CoreOrder(Enum):
    """How a rule head orders the body's core entities."""
    SAME = "same"
    SWAPPED = "swapped"


class AuxMode(Enum):
    """Whether head auxiliary pairs copy the body's place or are random."""
    SIGNAL = "signal"
    NOISE = "noise"


@dataclass
class RuleSpec:
    """A planted temporal rule: body(x, y, τ) ⇒ head(x, y, τ + gap) with some confidence."""
    body: str
    head: str
    gap: int = 1
    confidence: float = 1.0
    core_order: CoreOrder = CoreOrder.SAME
    aux_mode: AuxMode = AuxMode.NOISE

    def to_dict(self) -> dict[str, Any]:
        return {
            "body": self.body,
            "head": self.head,
            "gap": self.gap,
            "confidence": self.confidence,
            "core_order": self.core_order.value,
            "aux_mode": self.aux_mode.value,
        }


@dataclass
class SynthConfig:
    """Configuration of the synthetic corpus generator."""
    num_entities: int = 50
    num_noise_predicates: int = 3
    num_roles: int = 4
    num_timestamps: int = 200
    facts_per_snapshot: int = 10
    max_aux_pairs: int = 2
    decoys_per_body: int = 0
    test_fraction: float = 0.1
    valid_fraction: float = 0.1
    rules: list[RuleSpec] = field(default_factory=list)
    seed: int = 0


def _option(default, help_text: str, **kwargs):
    return field(default=default, metadata={"help": help_text}, **kwargs)


@dataclass
class RunConfig:
    """Every knob of a training / evaluation run. Each key has a default."""
    dataset: str = _option("", "dataset directory in the canonical JSON-lines format")
    output_dir: str = _option("runs/default", "directory for checkpoints, metrics and explanations")
    seed: int = _option(0, "seed for initialization, sampling and shuffling")
    predicate_dim: int = _option(100, "predicate and role embedding width (100 in the reference setup)")
    entity_dim: int = _option(80, "entity embedding width (80 in the reference setup)")
    time_dim: int = _option(20, "time-interval encoding width (20 in the reference setup)")
    lstm_hidden: int = _option(100, "history LSTM output width (100 in the reference setup)")
    lstm_layers: int = _option(2, "stacked history LSTM layers (2 in the reference setup)")
    mlp_hidden: int = _option(100, "hidden width of each policy's two-layer scorer")
    max_steps: int = _option(3, "reasoning path length L (3 in the reference setup)")
    history_window: int = _option(5, "background snapshots m (5 for ICEWS-like, 1 for wiki-like data)")
    gcn_layers: int = _option(2, "message-passing layers of the auxiliary-aware GCN")
    mix_weight: float = _option(0.7, "weight of the predicate embedding in the augmented predicate, in (0, 1)")
    gcn_aggregation: str = _option("mean", "neighbor aggregation: mean or sum")
    action_cap: int = _option(64, "most recent outgoing facts kept per state")
    max_time_gap: int = _option(0, "time-prior buckets; 0 means 4 × history_window")
    dirichlet_alpha: float = _option(1.0, "Dirichlet smoothing of the time prior")
    beam_size: int = _option(64, "beam width at evaluation")
    valid_beam_size: int = _option(64, "beam width for validation during training")
    score_aggregation: str = _option("max", "per-entity beam score: max or logsumexp")
    mixture_space: str = _option("probability", "mix branch outputs as probabilities or logits")
    optimizer: str = _option("adam", "adam or sgd")
    learning_rate: float = _option(1e-3, "optimizer step size")
    batch_size: int = _option(64, "queries per REINFORCE update")
    epochs: int = _option(30, "training epochs")
    entropy_coef: float = _option(0.01, "entropy bonus β")
    max_grad_norm: float = _option(40.0, "global gradient norm clip, 0 disables")
    eval_every: int = _option(1, "validate every N epochs")
    threads: int = _option(0, "worker threads for rollouts and evaluation, 0 means all cores")
    no_sc: bool = _option(False, "ablation: bypass the GCN, use base entity embeddings")
    no_pp: bool = _option(False, "ablation: drop the predicate-focused policy")
    no_cp: bool = _option(False, "ablation: drop the core-element-focused policy")
    no_fp: bool = _option(False, "ablation: drop the whole-fact-focused policy")
    uniform_gate: bool = _option(False, "ablation: equal weight for every active policy")

    @property
    def time_gap_buckets(self) -> int:
        return self.max_time_gap or 4 * self.history_window

    @property
    def active_branches(self) -> list[str]:
        """Active policy branches in canonical P, C, F order."""
        flags = (("P", self.no_pp), ("C", self.no_cp), ("F", self.no_fp))
        return [name for name, dropped in flags if not dropped]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def help_for(cls, key: str) -> str:
        for f in fields(cls):
            if f.name == key:
                return f.metadata.get("help", "")
        return ""
