"""
REINFORCE training: sampled rollouts, the policy-gradient update and the epoch loop.
"""

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .dataset import Dataset, add_inverse_facts, extract_queries, load_dataset
from .environment import TimePrior, fit_time_prior, terminal_reward, transition, valid_actions
from .errors import TrainingError
from .inference import evaluate, worker_count
from .models import EvalResult, Query, RunConfig, State, StepRecord, Trajectory
from .optim import Optimizer, build_optimizer, clip_grad_norm
from .policy import MixturePolicy, entropy, log_prob, sample_action
from .tensor import Tape, Tensor

logger = logging.getLogger(__name__)


def rollout_group(queries: Sequence[Query], ds: Dataset, entities: Tensor, policy: MixturePolicy,
                  rngs: Sequence[np.random.Generator], max_steps: int, prior: TimePrior) -> list[Trajectory]:
    """Sample one length-``max_steps`` walk per query, all scored in one batched pass per step.

    ``rngs[i]`` drives the walk of ``queries[i]`` alone, so each walk matches
    ``rollout`` of that query with the same generator. Self-loops pad walks
    that stop early.
    """
    if len(rngs) != len(queries):
        raise TrainingError(f"{len(rngs)} generators for {len(queries)} queries")
    ctx = policy.query_contexts(queries, entities)
    history = policy.start(ctx)
    states = [State.initial(q) for q in queries]
    trajectories = [Trajectory(q) for q in queries]
    for step in range(max_steps):
        action_lists = [valid_actions(s, ds, policy.config.action_cap) for s in states]
        out = policy.step_lanes(states, action_lists, history, ctx)
        picked = []
        for lane, (trajectory, rng) in enumerate(zip(trajectories, rngs)):
            index = sample_action(out.lane_probs(lane), rng)
            rows = out.lane_rows(lane)
            row = rows.start + index
            trajectory.steps.append(StepRecord(
                state=states[lane],
                action=out.actions[row],
                log_prob=log_prob(out.probs, row),
                entropy=entropy(out.probs[:, rows]),
                gate=out.gate_weights(policy.active, lane),
            ))
            states[lane] = transition(states[lane], out.actions[row])
            picked.append(row)
        if step < max_steps - 1:
            history = policy.advance(history, out, picked)
    for trajectory, state in zip(trajectories, states):
        trajectory.final_state = state
        trajectory.reward = terminal_reward(state, prior, max_steps)
    return trajectories


def rollout(query: Query, ds: Dataset, entities: Tensor, policy: MixturePolicy,
            rng: np.random.Generator, max_steps: int, prior: TimePrior) -> Trajectory:
    """Sample a length-``max_steps`` walk for a single query."""
    return rollout_group([query], ds, entities, policy, [rng], max_steps, prior)[0]


@dataclass
class TrajectoryGroup:
    """Rollouts sharing one query time, recorded on their own tape."""
    time: int
    tape: Tape
    trajectories: list[Trajectory] = field(default_factory=list)


def reinforce_loss(trajectories: Sequence[Trajectory], baseline: float, entropy_coef: float,
                   batch_size: int) -> Tensor:
    """−(1/n) Σ (R − b)·Σ_l log π(a_l|s_l) − β·(1/n) Σ Σ_l H(π_l) over ``trajectories``.

    ``batch_size`` is n of the whole batch so per-group losses add up to the batch loss.
    """
    terms = []
    for trajectory in trajectories:
        advantage = trajectory.reward - baseline
        sum_log_prob = trajectory.steps[0].log_prob
        sum_entropy = trajectory.steps[0].entropy
        for record in trajectory.steps[1:]:
            sum_log_prob = sum_log_prob + record.log_prob
            sum_entropy = sum_entropy + record.entropy
        terms.append(T.sum(sum_log_prob) * (-advantage / batch_size)
                     + sum_entropy * (-entropy_coef / batch_size))
    loss = terms[0]
    for term in terms[1:]:
        loss = loss + term
    return loss


def reinforce_update(groups: Sequence[TrajectoryGroup], optimizer: Optimizer, entropy_coef: float,
                     max_grad_norm: float = 0.0, baseline: float | None = None,
                     pool: ThreadPoolExecutor | None = None) -> float:
    """One policy-gradient step over a batch and return the batch loss.

    The baseline defaults to the batch-mean reward. Each group's loss is
    replayed on its own tape; gradients are summed in ascending query-time
    order before clipping and the optimizer step.
    """
    trajectories = [tr for g in groups for tr in g.trajectories]
    if not trajectories:
        raise TrainingError("reinforce_update needs a non-empty batch")
    rewards = np.array([tr.reward for tr in trajectories])
    b = float(rewards.mean()) if baseline is None else baseline
    n = len(trajectories)

    def backward(group: TrajectoryGroup) -> tuple[float, dict[Tensor, np.ndarray]]:
        with group.tape:
            loss = reinforce_loss(group.trajectories, b, entropy_coef, n)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(
                f"non-finite loss {value} at query time {group.time}: "
                f"rewards={[tr.reward for tr in group.trajectories]}, baseline={b}, "
                f"log_probs={[[float(s.log_prob.item()) for s in tr.steps] for tr in group.trajectories]}"
            )
        return value, group.tape.backward(loss)

    ordered = sorted(groups, key=lambda g: g.time)
    results = list(pool.map(backward, ordered)) if pool is not None else [backward(g) for g in ordered]

    params = optimizer.params
    total_loss = 0.0
    grads: dict[str, np.ndarray] = {name: np.zeros_like(t.data) for name, t in params.items()}
    for value, grad_map in results:
        total_loss += value
        for name, grad in params.gradients(grad_map).items():
            grads[name] += grad
    norm = clip_grad_norm(grads, max_grad_norm)
    optimizer.step(grads)
    logger.debug("batch of %d: loss=%.6f mean_reward=%.4f grad_norm=%.4f", n, total_loss, b, norm)
    return total_loss


def query_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Sampling stream of one query in one epoch, independent of scheduling."""
    return np.random.default_rng([seed, epoch, index])


def run_batch(batch: Sequence[tuple[int, Query]], ds: Dataset, policy: MixturePolicy, prior: TimePrior,
              epoch: int, pool: ThreadPoolExecutor | None = None) -> list[TrajectoryGroup]:
    """Roll out a batch of (index, query) pairs, grouped by query time."""
    config = policy.config
    by_time: dict[int, list[tuple[int, Query]]] = {}
    for index, query in batch:
        by_time.setdefault(query.query_time, []).append((index, query))

    def run_group(t: int) -> TrajectoryGroup:
        group = TrajectoryGroup(t, Tape())
        members = by_time[t]
        with group.tape:
            entities = policy.encode_snapshot(ds, t)
            rngs = [query_rng(config.seed, epoch, index) for index, _ in members]
            group.trajectories = rollout_group([q for _, q in members], ds, entities, policy, rngs,
                                               config.max_steps, prior)
        return group

    times = sorted(by_time)
    if pool is not None:
        return list(pool.map(run_group, times))
    return [run_group(t) for t in times]


def time_batches(indexed: Sequence[tuple[int, Query]], batch_size: int,
                 rng: np.random.Generator) -> list[list[tuple[int, Query]]]:
    """Shuffle (index, query) pairs into batches that keep queries of one time together.

    Query times are visited in random order and queries within a time are
    shuffled. A time with more than ``batch_size`` queries is split into
    chunks; consecutive chunks share a batch while they fit.
    """
    if batch_size < 1:
        raise TrainingError(f"batch size must be at least 1, got {batch_size}")
    by_time: dict[int, list[tuple[int, Query]]] = {}
    for item in indexed:
        by_time.setdefault(item[1].query_time, []).append(item)

    batches: list[list[tuple[int, Query]]] = []
    current: list[tuple[int, Query]] = []
    for t in rng.permutation(sorted(by_time)):
        members = by_time[int(t)]
        members = [members[i] for i in rng.permutation(len(members))]
        for start in range(0, len(members), batch_size):
            chunk = members[start:start + batch_size]
            if len(current) + len(chunk) > batch_size:
                batches.append(current)
                current = []
            current.extend(chunk)
    if current:
        batches.append(current)
    return batches


@dataclass
class TrainResult:
    """Outcome of a training run."""
    policy: MixturePolicy
    prior: TimePrior
    history: list[dict[str, Any]] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_mrr: float = 0.0


def _metrics_record(epoch: int, train_loss: float | None, result: EvalResult) -> dict[str, Any]:
    return {
        "epoch": epoch,
        "train_loss": train_loss,
        "valid_mrr": result.mrr,
        "valid_hits1": result.hits.get(1, 0.0),
        "valid_hits3": result.hits.get(3, 0.0),
        "valid_hits10": result.hits.get(10, 0.0),
    }


def train(config: RunConfig, ds: Dataset | None = None) -> TrainResult:
    """Train, validate every ``eval_every`` epochs and keep the best checkpoint by validation MRR.

    Writes ``checkpoint.json``, ``metrics.jsonl`` (one record per evaluated
    epoch, with wall-clock seconds) and ``metrics.json`` (the same records
    without timing, plus the config) to ``config.output_dir``.
    """
    ds = add_inverse_facts(ds if ds is not None else load_dataset(config.dataset))
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_queries = extract_queries(ds.splits["train"])
    valid_queries = extract_queries(ds.splits["valid"])
    if not train_queries:
        raise TrainingError("the training split is empty")
    prior = fit_time_prior(train_queries, ds, config.time_gap_buckets, config.dirichlet_alpha)
    policy = MixturePolicy.build(config, ds)
    optimizer = build_optimizer(config.optimizer, policy.params, config.learning_rate)
    workers = worker_count(config.threads)
    echo = config.to_dict()

    result = TrainResult(policy, prior)
    checkpoint_path = out_dir / "checkpoint.json"
    started = time.perf_counter()

    def validate(epoch: int, train_loss: float | None) -> None:
        evaluated = evaluate(valid_queries, ds, policy, config.valid_beam_size, config.max_steps,
                             threads=config.threads, config=echo)
        record = _metrics_record(epoch, train_loss, evaluated)
        result.history.append(record)
        with open(out_dir / "metrics.jsonl", "a", encoding="utf-8") as f:
            f.write(json.dumps({**record, "wallclock_s": round(time.perf_counter() - started, 3)}) + "\n")
        logger.info("epoch %d: loss=%s valid_mrr=%.4f hits@1=%.4f", epoch,
                    "n/a" if train_loss is None else f"{train_loss:.4f}", evaluated.mrr, evaluated.hits[1])
        if epoch == 0 or evaluated.mrr > result.best_valid_mrr or not valid_queries:
            result.best_epoch = epoch
            result.best_valid_mrr = evaluated.mrr
            save_checkpoint(checkpoint_path, policy, prior,
                            {"epoch": epoch, "valid_mrr": evaluated.mrr, "seed": config.seed})

    (out_dir / "metrics.jsonl").write_text("", encoding="utf-8")
    indexed = list(enumerate(train_queries))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        use_pool = pool if workers > 1 else None
        validate(0, None)
        for epoch in range(1, config.epochs + 1):
            batches = time_batches(indexed, config.batch_size, np.random.default_rng([config.seed, epoch]))
            epoch_loss = 0.0
            for batch in batches:
                groups = run_batch(batch, ds, policy, prior, epoch, use_pool)
                epoch_loss += reinforce_update(groups, optimizer, config.entropy_coef,
                                               config.max_grad_norm, pool=use_pool)
            mean_loss = epoch_loss / max(len(batches), 1)
            if epoch % config.eval_every == 0 or epoch == config.epochs:
                validate(epoch, mean_loss)
            else:
                logger.info("epoch %d: loss=%.4f", epoch, mean_loss)

    summary = {
        "config": echo,
        "best_epoch": result.best_epoch,
        "best_valid_mrr": result.best_valid_mrr,
        "epochs": result.history,
    }
    with open(out_dir / "metrics.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
    logger.info("training finished: best epoch %d, valid MRR %.4f", result.best_epoch, result.best_valid_mrr)
    return result
