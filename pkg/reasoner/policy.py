"""
Mixture policy: a time encoder, three low-level policies that score actions
from predicate-only, core-element and whole-fact information, and a gate that
mixes their distributions.
"""

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .dataset import Dataset
from .errors import ConfigError, NumericError, PolicyError, ShapeError
from .models import Action, Fact, GateWeights, Query, RunConfig, State
from .semantic import GcnParams, aux_embeddings, build_background_graph, encode
from .tensor import LSTMWeights, ParameterSet, Tensor

logger = logging.getLogger(__name__)

BRANCHES = ("P", "C", "F")
LOG_FLOOR = 1e-12

# per-layer (h, c) of one branch's LSTM stack
LstmState = list[tuple[Tensor, Tensor]]


@dataclass
class TimeEncoder:
    """Φ(Δt) = cos(Δt·w_t + b_t)."""
    weight: Tensor
    bias: Tensor

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, gaps) -> Tensor:
        column = np.asarray(gaps, dtype=np.float64).reshape(-1, 1)
        return T.cos(Tensor(column) @ self.weight + self.bias)


def time_encode(t_query, tau, enc: TimeEncoder) -> Tensor:
    """Encode the interval between ``tau`` and the query time (scalars or aligned arrays), one row per tau."""
    return enc(t_query - np.asarray(tau, dtype=np.int64))


def action_width(branch: str, config: RunConfig) -> int:
    dp, de, dt = config.predicate_dim, config.entity_dim, config.time_dim
    return {"P": dp + dt, "C": dp + de + dt, "F": dp + de + dp + dt}[branch]


def info_width(branch: str, config: RunConfig) -> int:
    dp, de = config.predicate_dim, config.entity_dim
    return {"P": dp, "C": dp + de, "F": dp + de + dp}[branch]


@dataclass
class PolicyBranch:
    """One low-level policy: an LSTM stack over its own action embeddings and a two-layer scorer."""
    kind: str
    lstm: list[LSTMWeights]
    w1: Tensor
    w2: Tensor

    @property
    def hidden_size(self) -> int:
        return self.lstm[-1].hidden_size

    @classmethod
    def create(cls, kind: str, params: ParameterSet, config: RunConfig) -> "PolicyBranch":
        hidden = config.lstm_hidden
        width = action_width(kind, config)
        layers = []
        for k in range(config.lstm_layers):
            in_size = width if k == 0 else hidden
            layers.append(LSTMWeights(
                params.create(f"policy.{kind}.lstm{k}.weight", (in_size + hidden, 4 * hidden), fan_in=hidden),
                params.create(f"policy.{kind}.lstm{k}.bias", (1, 4 * hidden), fan_in=hidden),
            ))
        w1 = params.create(f"policy.{kind}.w1", (hidden + info_width(kind, config), config.mlp_hidden))
        w2 = params.create(f"policy.{kind}.w2", (config.mlp_hidden, width))
        return cls(kind, layers, w1, w2)


@dataclass
class QueryContext:
    """Query-side embeddings against one H_t, one row per lane."""
    queries: list[Query]
    entities: Tensor
    r_q: Tensor
    h_eq: Tensor
    h_aux_q: Tensor

    @property
    def num_lanes(self) -> int:
        return len(self.queries)

    def info(self, branch: str) -> Tensor:
        if branch == "P":
            return self.r_q
        if branch == "C":
            return T.concat([self.r_q, self.h_eq], axis=1)
        return T.concat([self.r_q, self.h_eq, self.h_aux_q], axis=1)

    def select(self, lanes: Sequence[int]) -> "QueryContext":
        """A context whose lane j is lane ``lanes[j]`` of this one."""
        return QueryContext(
            [self.queries[i] for i in lanes], self.entities,
            T.gather(self.r_q, lanes), T.gather(self.h_eq, lanes), T.gather(self.h_aux_q, lanes),
        )


@dataclass
class ActionFeatures:
    """Per-action embedding pieces shared by the branches (one row per action)."""
    predicate: Tensor
    entity: Tensor
    aux: Tensor
    time: Tensor

    def for_branch(self, branch: str) -> Tensor:
        if branch == "P":
            return T.concat([self.predicate, self.time], axis=1)
        if branch == "C":
            return T.concat([self.predicate, self.entity, self.time], axis=1)
        return T.concat([self.predicate, self.entity, self.aux, self.time], axis=1)


@dataclass
class StepOutput:
    """One decision for every lane: the action rows of all lanes stacked in lane order.

    ``probs`` and the branch distributions are 1 × N rows; ``lanes`` names the
    lane of each row and ``offsets[i]:offsets[i + 1]`` are the rows of lane i.
    """
    actions: list[Action]
    lanes: np.ndarray
    offsets: np.ndarray
    probs: Tensor
    gate: Tensor
    branch_probs: dict[str, Tensor] = field(default_factory=dict)
    embeddings: dict[str, Tensor] = field(default_factory=dict)

    def lane_rows(self, lane: int = 0) -> slice:
        return slice(int(self.offsets[lane]), int(self.offsets[lane + 1]))

    def lane_probs(self, lane: int = 0) -> np.ndarray:
        return self.probs.data[0, self.lane_rows(lane)]

    def gate_weights(self, branches: Sequence[str], lane: int = 0) -> GateWeights:
        values = dict(zip(branches, self.gate.data[lane].tolist()))
        return GateWeights(values.get("P", 0.0), values.get("C", 0.0), values.get("F", 0.0))


def history_step(branch: PolicyBranch, prev: LstmState | None, action_embedding: Tensor) -> LstmState:
    """Feed one action embedding per lane through the branch's LSTM stack; ``prev=None`` starts from zeros."""
    hidden = branch.hidden_size
    out: LstmState = []
    x = action_embedding
    for k, layer in enumerate(branch.lstm):
        if prev is None:
            h_prev = c_prev = Tensor(np.zeros((x.shape[0], hidden)))
        else:
            h_prev, c_prev = prev[k]
        h, c = T.lstm_cell(x, h_prev, c_prev, layer)
        out.append((h, c))
        x = h
    return out


def segment_log_softmax(logits: Tensor, lanes: np.ndarray, num_lanes: int) -> Tensor:
    """log-softmax of an N × 1 column taken separately within each lane."""
    if logits.shape[0] == 0:
        raise ShapeError("cannot score an empty action list")
    if np.isnan(logits.data).any():
        raise NumericError("action logits contain NaN")
    top = np.full(num_lanes, -np.inf)
    np.maximum.at(top, lanes, logits.data[:, 0])
    if not np.all(np.isfinite(top)):
        raise ShapeError("every lane needs at least one action")
    z = logits - Tensor(top[lanes][:, None])
    total = T.segment_sum(T.exp(z), lanes, num_lanes)
    return z - T.gather(T.log(total), lanes)


def branch_logits(branch: PolicyBranch, h_l: Tensor, info_q: Tensor, action_embeddings: Tensor,
                  lanes: np.ndarray) -> Tensor:
    """Row n scores a_n · W₂ ReLU(W₁ [h; info]) of its lane (N × 1)."""
    v = T.relu(T.concat([h_l, info_q], axis=1) @ branch.w1) @ branch.w2
    return T.sum(action_embeddings * T.gather(v, lanes), axis=1, keepdims=True)


def score_branch(branch: PolicyBranch, h_l: Tensor, info_q: Tensor, action_embeddings: Tensor) -> Tensor:
    """softmax(A · W₂ ReLU(W₁ [h; info])) over the action rows of a single lane (1 × N)."""
    if action_embeddings.shape[0] == 0:
        raise ShapeError("cannot score an empty action list")
    lanes = np.zeros(action_embeddings.shape[0], dtype=np.int64)
    logits = branch_logits(branch, h_l, info_q, action_embeddings, lanes)
    return T.transpose(T.exp(segment_log_softmax(logits, lanes, 1)))


def mixture(branch_probs: Sequence[Tensor], gate: Tensor, lanes: np.ndarray | None = None) -> Tensor:
    """Gate-weighted convex combination of N × 1 branch columns; row n uses its lane's gate row."""
    lengths = {p.shape[0] for p in branch_probs}
    if len(lengths) != 1:
        raise ShapeError(f"branch distributions have different lengths: {sorted(lengths)}")
    if gate.shape[-1] != len(branch_probs):
        raise ShapeError(f"gate has {gate.shape[-1]} weights for {len(branch_probs)} branches")
    if lanes is None:
        lanes = np.zeros(lengths.pop(), dtype=np.int64)
    weights = T.gather(gate, lanes)
    return T.sum(weights * T.concat(list(branch_probs), axis=1), axis=1, keepdims=True)


def sample_action(final_probs, rng: np.random.Generator) -> int:
    """Draw an index from a categorical distribution."""
    probs = np.asarray(getattr(final_probs, "data", final_probs), dtype=np.float64).reshape(-1)
    if probs.size == 0 or not np.all(np.isfinite(probs)) or np.any(probs < 0):
        raise PolicyError(f"cannot sample from distribution {probs.tolist()}")
    cumulative = np.cumsum(probs)
    u = rng.random() * cumulative[-1]
    return int(min(np.searchsorted(cumulative, u, side="right"), probs.size - 1))


def argmax_action(final_probs) -> int:
    """Most probable index; the lowest index wins ties."""
    probs = np.asarray(getattr(final_probs, "data", final_probs), dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(probs)):
        raise PolicyError(f"non-finite probabilities {probs.tolist()}")
    return int(np.argmax(probs))


def log_prob(probs: Tensor, index: int) -> Tensor:
    return T.log(probs[:, index:index + 1] + LOG_FLOOR)


def entropy(probs: Tensor) -> Tensor:
    return -T.sum(probs * T.log(probs + LOG_FLOOR))


class MixturePolicy:
    """The full agent: GCN tables, time encoder, active branches and gate.

    Every forward method works on lanes: independent decisions (the beams of
    one query, or the queries of one time group) scored in one pass.
    """

    def __init__(self, config: RunConfig, params: ParameterSet, gcn: GcnParams, time: TimeEncoder,
                 branches: dict[str, PolicyBranch], gate: Tensor | None):
        self.config = config
        self.params = params
        self.gcn = gcn
        self.time = time
        self.branches = branches
        self.gate = gate

    @classmethod
    def build(cls, config: RunConfig, ds: Dataset, seed: int | None = None,
              num_entity_rows: int | None = None) -> "MixturePolicy":
        """Create every parameter for ``ds`` in a fixed order so a seed fixes the initialization."""
        active = config.active_branches
        if not active:
            raise ConfigError("every policy branch is dropped; keep at least one of P, C, F")
        params = ParameterSet(config.seed if seed is None else seed)
        gcn = GcnParams.create(params, ds, config, num_entity_rows)
        time = TimeEncoder(
            params.create("time.weight", (1, config.time_dim)),
            params.create("time.bias", (1, config.time_dim)),
        )
        branches = {kind: PolicyBranch.create(kind, params, config) for kind in active}
        gate = None
        if len(active) > 1 and not config.uniform_gate:
            context = 2 * config.predicate_dim + config.entity_dim
            gate = params.create("policy.gate", (len(active) * config.lstm_hidden + context, len(active)))
        logger.debug("policy built: branches=%s, %d parameter tensors", active, len(params))
        return cls(config, params, gcn, time, branches, gate)

    @property
    def active(self) -> list[str]:
        return list(self.branches)

    def encode_snapshot(self, ds: Dataset, t: int) -> Tensor:
        """Entity embeddings H_t for queries at time ``t``."""
        if self.config.no_sc:
            return self.gcn.base_entities(ds)
        bg = build_background_graph(ds, t, self.config.history_window)
        return encode(bg, self.gcn, ds)

    def _predicate_row(self, predicate: int, inverse: bool) -> int:
        return predicate + (self.gcn.num_base_predicates if inverse else 0)

    @property
    def self_loop_row(self) -> int:
        return 2 * self.gcn.num_base_predicates

    def query_contexts(self, queries: Sequence[Query], entities: Tensor) -> QueryContext:
        rows = [self._predicate_row(q.predicate, q.inverse) for q in queries]
        return QueryContext(
            list(queries), entities,
            T.gather(self.gcn.predicate, rows),
            T.gather(entities, [q.entity for q in queries]),
            aux_embeddings([q.aux for q in queries], entities, self.gcn),
        )

    def query_context(self, query: Query, entities: Tensor) -> QueryContext:
        return self.query_contexts([query], entities)

    def _row_features(self, rows: Sequence[tuple[State, Action]], entities: Tensor) -> ActionFeatures:
        """Embedding pieces of each (state, action) row; the self-loop uses the reserved predicate, the current entity and no aux."""
        pred_rows, ents, aux_lists, taus, query_times = [], [], [], [], []
        for state, action in rows:
            query_times.append(state.query.query_time)
            if action.is_self_loop:
                pred_rows.append(self.self_loop_row)
                ents.append(state.entity)
                aux_lists.append(())
                taus.append(state.time)
            else:
                fact: Fact = action.fact
                pred_rows.append(self._predicate_row(fact.predicate, fact.inverse))
                ents.append(fact.object)
                aux_lists.append(fact.aux)
                taus.append(fact.timestamp)
        return ActionFeatures(
            predicate=T.gather(self.gcn.predicate, pred_rows),
            entity=T.gather(entities, ents),
            aux=aux_embeddings(aux_lists, entities, self.gcn),
            time=time_encode(np.asarray(query_times), taus, self.time),
        )

    def action_features(self, state: State, actions: Sequence[Action], ctx: QueryContext) -> ActionFeatures:
        return self._row_features([(state, a) for a in actions], ctx.entities)

    def embed_action(self, action: Action, branch: str, state: State, ctx: QueryContext) -> Tensor:
        return self.action_features(state, [action], ctx).for_branch(branch)

    def start_embedding(self, branch: str, ctx: QueryContext) -> Tensor:
        """The synthetic start action a₀ of every lane: the query's own elements with Δt = 0."""
        phi = self.time(np.zeros(ctx.num_lanes))
        if branch == "P":
            return T.concat([ctx.r_q, phi], axis=1)
        if branch == "C":
            return T.concat([ctx.r_q, ctx.h_eq, phi], axis=1)
        return T.concat([ctx.r_q, ctx.h_eq, ctx.h_aux_q, phi], axis=1)

    def start(self, ctx: QueryContext) -> dict[str, LstmState]:
        return {kind: history_step(branch, None, self.start_embedding(kind, ctx))
                for kind, branch in self.branches.items()}

    def gate_weights(self, history: dict[str, LstmState], ctx: QueryContext) -> Tensor:
        """Lanes × branches mixture weights."""
        k = len(self.branches)
        if self.gate is None:
            return Tensor(np.full((ctx.num_lanes, k), 1.0 / k))
        parts = [history[kind][-1][0] for kind in self.branches]
        parts += [ctx.r_q, ctx.h_eq, ctx.h_aux_q]
        return T.softmax(T.concat(parts, axis=1) @ self.gate, axis=-1)

    def step_lanes(self, states: Sequence[State], action_lists: Sequence[Sequence[Action]],
                   history: dict[str, LstmState], ctx: QueryContext) -> StepOutput:
        """Score the actions of every lane with every active branch and mix them through each lane's gate."""
        if len(states) != ctx.num_lanes or len(action_lists) != ctx.num_lanes:
            raise ShapeError(f"{len(states)} states and {len(action_lists)} action lists "
                             f"for {ctx.num_lanes} lanes")
        counts = [len(actions) for actions in action_lists]
        if 0 in counts:
            raise ShapeError("cannot score an empty action list")
        lanes = np.repeat(np.arange(ctx.num_lanes), counts)
        rows = [(state, a) for state, actions in zip(states, action_lists) for a in actions]
        features = self._row_features(rows, ctx.entities)
        gate = self.gate_weights(history, ctx)

        probs, logits, embeddings = {}, [], {}
        for kind, branch in self.branches.items():
            emb = features.for_branch(kind)
            column = branch_logits(branch, history[kind][-1][0], ctx.info(kind), emb, lanes)
            probs[kind] = T.exp(segment_log_softmax(column, lanes, ctx.num_lanes))
            logits.append(column)
            embeddings[kind] = emb
        if self.config.mixture_space == "logit":
            mixed = T.sum(T.gather(gate, lanes) * T.concat(logits, axis=1), axis=1, keepdims=True)
            final = T.exp(segment_log_softmax(mixed, lanes, ctx.num_lanes))
        else:
            final = mixture(list(probs.values()), gate, lanes)
        return StepOutput(
            actions=[a for _, a in rows],
            lanes=lanes,
            offsets=np.concatenate([[0], np.cumsum(counts)]),
            probs=T.transpose(final),
            gate=gate,
            branch_probs={kind: T.transpose(p) for kind, p in probs.items()},
            embeddings=embeddings,
        )

    def step(self, state: State, actions: list[Action], history: dict[str, LstmState],
             ctx: QueryContext) -> StepOutput:
        """Single-lane ``step_lanes``."""
        return self.step_lanes([state], [actions], history, ctx)

    def advance(self, history: dict[str, LstmState], out: StepOutput,
                rows: int | Sequence[int]) -> dict[str, LstmState]:
        """h_{l+1} = LSTM(h_l, a_l): new lane j continues the lane of row ``rows[j]`` with that action."""
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        parents = out.lanes[rows]
        nxt = {}
        for kind, branch in self.branches.items():
            prev = [(T.gather(h, parents), T.gather(c, parents)) for h, c in history[kind]]
            nxt[kind] = history_step(branch, prev, T.gather(out.embeddings[kind], rows))
        return nxt
