"""
Beam-search inference, time-aware filtered evaluation and explanation records.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .dataset import Dataset
from .environment import is_valid_action, transition, valid_actions
from .errors import ActionError, ConfigError
from .models import EvalResult, PathStep, Query, QueryOutcome, RankedCandidates, State
from .policy import LOG_FLOOR, MixturePolicy
from .tensor import Tensor

logger = logging.getLogger(__name__)

HITS_AT = (1, 3, 10)
SUBSETS = ("all", "seen", "unseen")


def worker_count(threads: int) -> int:
    """0 means one worker per core."""
    return threads if threads > 0 else (os.cpu_count() or 1)


@dataclass
class _Beam:
    score: float
    state: State
    path: list[PathStep] = field(default_factory=list)


def beam_search(query: Query, ds: Dataset, entities: Tensor, policy: MixturePolicy,
                beam_size: int, max_steps: int, aggregation: str = "max") -> RankedCandidates:
    """Keep the ``beam_size`` best partial paths by cumulative log-probability for ``max_steps`` steps.

    Candidates are ordered by score, then beam index, then action index, so
    ``beam_size=1`` follows the greedy argmax path. Each end entity scores the
    max (or logsumexp) over the beams that reach it. All beams of a step are
    scored in one batched policy pass.
    """
    if beam_size < 1:
        raise ConfigError(f"beam size must be at least 1, got {beam_size}")
    query_ctx = policy.query_context(query, entities)
    beams = [_Beam(0.0, State.initial(query))]
    history = policy.start(query_ctx)
    branches = policy.active

    for step in range(max_steps):
        ctx = query_ctx.select([0] * len(beams))
        action_lists = [valid_actions(beam.state, ds, policy.config.action_cap) for beam in beams]
        out = policy.step_lanes([beam.state for beam in beams], action_lists, history, ctx)
        prior = np.array([beam.score for beam in beams])
        scores = prior[out.lanes] + np.log(out.probs.data[0] + LOG_FLOOR)
        # rows are stacked beam-major, so a stable sort keeps (beam, action) order among ties
        kept = np.argsort(-scores, kind="stable")[:beam_size]

        next_beams = []
        for row in kept:
            parent, action = beams[out.lanes[row]], out.actions[row]
            next_beams.append(_Beam(
                float(scores[row]),
                transition(parent.state, action),
                parent.path + [PathStep(action, out.gate_weights(branches, out.lanes[row]))],
            ))
        beams = next_beams
        if step < max_steps - 1:
            history = policy.advance(history, out, kept)

    ranked = RankedCandidates(query)
    per_entity: dict[int, list[float]] = {}
    for beam in beams:
        entity = beam.state.entity
        per_entity.setdefault(entity, []).append(beam.score)
        if entity not in ranked.paths:
            # beams are sorted, so the first one reaching an entity is its best path
            ranked.paths[entity] = beam.path
    for entity, scores in per_entity.items():
        if aggregation == "logsumexp":
            top = max(scores)
            ranked.scores[entity] = top + math.log(sum(math.exp(s - top) for s in scores))
        else:
            ranked.scores[entity] = max(scores)
    return ranked


def filtered_rank(query: Query, ranked: RankedCandidates, ds: Dataset) -> int:
    """Rank of the answer after removing other entities that are true at the query's timestamp.

    An answer no beam reached ranks |E|.
    """
    if query.answer not in ranked.scores:
        return ds.num_entities
    co_true = ds.true_answers(query) - {query.answer}
    position = 0
    for entity in ranked.ranking():
        if entity in co_true:
            continue
        position += 1
        if entity == query.answer:
            break
    return position


def ranking_metrics(ranks: Sequence[int]) -> tuple[float, dict[int, float]]:
    """MRR and Hits@1/3/10 of a list of ranks."""
    if not ranks:
        return 0.0, {k: 0.0 for k in HITS_AT}
    ranks = np.asarray(ranks, dtype=np.float64)
    mrr = float(np.mean(1.0 / ranks))
    hits = {k: float(np.mean(ranks <= k)) for k in HITS_AT}
    return mrr, hits


def select_queries(queries: Iterable[Query], ds: Dataset, subset: str = "all",
                   predicates: Iterable[str] | None = None) -> list[Query]:
    """Restrict queries to seen or unseen ones and/or to the named base predicates.

    A query is unseen when its start entity or its answer never occurs in training.
    """
    if subset not in SUBSETS:
        raise ConfigError(f"unknown subset {subset!r}; expected one of {', '.join(SUBSETS)}")
    wanted = set(predicates) if predicates else None
    selected = []
    for query in queries:
        if wanted is not None and ds.predicate_name(query.predicate) not in wanted:
            continue
        seen = ds.is_seen(query.entity) and ds.is_seen(query.answer)
        if subset == "seen" and not seen or subset == "unseen" and seen:
            continue
        selected.append(query)
    return selected


def evaluate(queries: Sequence[Query], ds: Dataset, policy: MixturePolicy, beam_size: int,
             max_steps: int | None = None, threads: int = 1, aggregation: str | None = None,
             config: dict[str, Any] | None = None) -> EvalResult:
    """Beam-search every query and aggregate time-aware filtered ranks."""
    max_steps = max_steps or policy.config.max_steps
    aggregation = aggregation or policy.config.score_aggregation
    # one H_t per distinct query time, computed before the parallel map
    encodings = {t: policy.encode_snapshot(ds, t) for t in sorted({q.query_time for q in queries})}

    def run(query: Query) -> QueryOutcome:
        ranked = beam_search(query, ds, encodings[query.query_time], policy, beam_size, max_steps, aggregation)
        rank = filtered_rank(query, ranked, ds)
        order = ranked.ranking()
        predicted = order[0] if order else None
        return QueryOutcome(
            query=query,
            rank=rank,
            reached=query.answer in ranked.scores,
            predicted=predicted,
            score=ranked.scores.get(predicted) if predicted is not None else None,
            path=ranked.paths.get(query.answer, ranked.paths.get(predicted, [])),
        )

    workers = worker_count(threads)
    if workers > 1 and len(queries) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, queries))
    else:
        outcomes = [run(q) for q in queries]

    mrr, hits = ranking_metrics([o.rank for o in outcomes])
    unreached = sum(1 for o in outcomes if not o.reached)
    if unreached:
        logger.debug("%d of %d answers were not reached by any beam", unreached, len(outcomes))
    return EvalResult(outcomes=outcomes, mrr=mrr, hits=hits, config=dict(config or {}))


def _fact_record(ds: Dataset, fact) -> dict[str, Any]:
    return {
        "predicate": ds.predicate_name(fact.predicate, fact.inverse),
        "inverse": fact.inverse,
        "pairs": [[ds.roles.token_of(r), ds.entities.token_of(e)] for r, e in fact.pairs],
        "t": ds.time_scale.to_raw(fact.timestamp),
    }


def explain(query: Query, ranked: RankedCandidates, ds: Dataset) -> dict[str, Any]:
    """Explanation record of the best-scoring path.

    Every step is replayed through the environment first; a path that does not
    replay raises ``ActionError``.
    """
    order = ranked.ranking()
    predicted = order[0] if order else None
    path = ranked.paths.get(predicted, [])

    state = State.initial(query)
    steps = []
    for path_step in path:
        if not is_valid_action(state, path_step.action):
            raise ActionError(f"explanation path leaves the action space at step {state.step}")
        state = transition(state, path_step.action)
        step = {"self_loop": path_step.action.is_self_loop}
        if not path_step.action.is_self_loop:
            step["fact"] = _fact_record(ds, path_step.action.fact)
        step["gate"] = {"P": path_step.gate.predicate, "C": path_step.gate.core, "F": path_step.gate.fact}
        steps.append(step)

    rank = filtered_rank(query, ranked, ds) if ranked.scores else ds.num_entities
    return {
        "query": _fact_record(ds, query.source),
        "answer": ds.entities.token_of(query.answer),
        "predicted": ds.entities.token_of(predicted) if predicted is not None else None,
        "rank": rank,
        "score": ranked.scores.get(predicted) if predicted is not None else None,
        "path": steps,
    }
