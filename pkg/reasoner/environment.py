"""
The search environment: restricted action sets, deterministic transitions
and the time-shaped terminal reward.
"""

import itertools
import logging
from typing import Any, Iterable

import numpy as np

from .dataset import Dataset
from .errors import ActionError
from .models import Action, Query, State

logger = logging.getLogger(__name__)


class TimePrior:
    """Per-predicate categorical distribution over time-gap buckets 1..max_gap.

    Rows are indexed by predicate embedding row (base, inverse, self-loop);
    each row is the posterior mean of Dirichlet(alpha + counts).
    """

    def __init__(self, probs: np.ndarray, alpha: float, num_base_predicates: int):
        self.probs = np.asarray(probs, dtype=np.float64)
        self.alpha = alpha
        self.num_base_predicates = num_base_predicates

    @property
    def max_gap(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def from_counts(cls, counts: np.ndarray, alpha: float, num_base_predicates: int) -> "TimePrior":
        counts = np.asarray(counts, dtype=np.float64)
        smoothed = counts + alpha
        totals = smoothed.sum(axis=1, keepdims=True)
        uniform = np.full_like(smoothed, 1.0 / counts.shape[1])
        # rows with no evidence and no smoothing fall back to uniform
        probs = np.divide(smoothed, totals, out=uniform, where=totals > 0)
        return cls(probs, alpha, num_base_predicates)

    @classmethod
    def uniform(cls, num_rows: int, max_gap: int, alpha: float, num_base_predicates: int) -> "TimePrior":
        return cls.from_counts(np.zeros((num_rows, max_gap)), alpha, num_base_predicates)

    def bucket(self, gap: int) -> int:
        """Clamp a gap to [1, max_gap]."""
        return min(max(gap, 1), self.max_gap)

    def probability(self, query: Query, gap: int) -> float:
        row = query.predicate + (self.num_base_predicates if query.inverse else 0)
        return float(self.probs[row, self.bucket(gap) - 1])

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "num_base_predicates": self.num_base_predicates,
            "probs": self.probs.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TimePrior":
        return cls(np.array(data["probs"], dtype=np.float64), data["alpha"], data["num_base_predicates"])


def valid_actions(state: State, ds: Dataset, cap: int) -> list[Action]:
    """Outgoing facts of the current entity no later than the current time and
    strictly before the query time, most recent first, capped, plus the self-loop."""
    query_time = state.query.query_time
    recent = (f for f in ds.facts_adjacent(state.entity, state.time) if f.timestamp < query_time)
    actions = [Action.from_fact(f) for f in itertools.islice(recent, cap)]
    actions.append(Action.self_loop())
    return actions


def is_valid_action(state: State, action: Action) -> bool:
    if action.is_self_loop:
        return True
    fact = action.fact
    return (fact is not None
            and fact.subject == state.entity
            and fact.timestamp <= state.time
            and fact.timestamp < state.query.query_time)


def transition(state: State, action: Action) -> State:
    """Move along a fact to its other core entity at the fact's time; the self-loop stays put."""
    if not is_valid_action(state, action):
        raise ActionError(f"action {action} is not valid in state (entity={state.entity}, time={state.time})")
    if action.is_self_loop:
        return State(state.entity, state.time, state.query, state.step + 1)
    fact = action.fact
    # a reflexive fact keeps the entity and only moves time
    return State(fact.object, fact.timestamp, state.query, state.step + 1)


def fit_time_prior(train_queries: Iterable[Query], ds: Dataset, max_gap: int,
                   alpha: float = 1.0) -> TimePrior:
    """Estimate how far back answer entities were last active, per query predicate.

    For each query, every distinct gap t − τ (clamped to ``max_gap``) at which
    the answer is a core entity of some fact before t counts once. ``ds`` should
    index both orientations so both core positions are visible.
    """
    counts = np.zeros((ds.num_predicate_rows, max_gap))
    seen = 0
    for query in train_queries:
        seen += 1
        row = ds.predicate_index(query.source)
        t = query.query_time
        buckets = set()
        for fact in ds.facts_adjacent(query.answer, t - 1):
            gap = min(t - fact.timestamp, max_gap)
            buckets.add(gap)
            if gap == max_gap:
                break
        for gap in buckets:
            counts[row, gap - 1] += 1
    logger.debug("time prior fitted on %d queries, %d gap observations", seen, int(counts.sum()))
    return TimePrior.from_counts(counts, alpha, ds.num_base_predicates)


def terminal_reward(final: State, prior: TimePrior, max_steps: int | None = None) -> float:
    """0 for a wrong entity, else 1 + p(Δt) with Δt = t − τ_L clamped to [1, max_gap]."""
    if max_steps is not None and final.step != max_steps:
        raise ActionError(f"reward requested at step {final.step}, expected {max_steps}")
    query = final.query
    if final.entity != query.answer:
        return 0.0
    return 1.0 + prior.probability(query, query.query_time - final.time)
