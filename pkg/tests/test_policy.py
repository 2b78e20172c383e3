"""
Tests for the time encoder, the low-level policies, the gate and the mixture.
"""

import dataclasses
import math

import numpy as np
import pytest

from reasoner import tensor as T
from reasoner.dataset import extract_queries
from reasoner.environment import valid_actions
from reasoner.errors import ConfigError, PolicyError, ShapeError
from reasoner.models import Action, State
from reasoner.policy import (
    MixturePolicy, PolicyBranch, TimeEncoder, action_width, argmax_action, entropy, info_width,
    log_prob, mixture, sample_action, score_branch, time_encode,
)
from reasoner.tensor import ParameterSet, Tensor


@pytest.fixture
def first_step(toy_dataset, small_config):
    """A built policy, the first test query, its start state and action list."""
    policy = MixturePolicy.build(small_config, toy_dataset)
    query = extract_queries(toy_dataset.splits["test"])[0]
    state = State.initial(query)
    actions = valid_actions(state, toy_dataset, small_config.action_cap)
    return policy, query, state, actions


def run_step(policy, ds, query, state, actions, entities=None):
    entities = policy.encode_snapshot(ds, query.query_time) if entities is None else entities
    ctx = policy.query_context(query, entities)
    history = policy.start(ctx)
    return policy.step(state, actions, history, ctx), history, ctx


class TestTimeEncoding:
    """Tests for Φ(Δt)."""

    def test_zero_gap_is_cos_of_bias(self):
        """Δt = 0 encodes to cos(b)."""
        enc = TimeEncoder(Tensor([[1.0, 2.0]]), Tensor([[0.0, 0.5]]))
        out = time_encode(10, 10, enc)
        assert np.allclose(out.data, [[1.0, math.cos(0.5)]])

    def test_row_per_timestamp(self):
        """Several taus give one row each."""
        enc = TimeEncoder(Tensor([[1.0, 2.0]]), Tensor([[0.0, 0.0]]))
        out = time_encode(10, [7, 10], enc)
        assert out.shape == (2, 2)
        assert np.allclose(out.data, [[math.cos(3.0), math.cos(6.0)], [1.0, 1.0]])


class TestBranchScoring:
    """Tests for the low-level policies."""

    def test_widths(self, small_config):
        """Action rows are [r;Φ], [r;h;Φ] and [r;h;aux;Φ]."""
        assert [action_width(b, small_config) for b in "PCF"] == [12, 18, 26]
        assert [info_width(b, small_config) for b in "PCF"] == [8, 14, 22]

    def test_single_action_is_certain(self, small_config):
        """One action gets probability exactly 1."""
        branch = PolicyBranch.create("C", ParameterSet(0), small_config)
        rng = np.random.default_rng(0)
        probs = score_branch(branch, Tensor(rng.normal(size=(1, 8))), Tensor(rng.normal(size=(1, 14))),
                             Tensor(rng.normal(size=(1, 18))))
        assert probs.data.tolist() == [[1.0]]

    def test_duplicate_rows_tie(self, small_config):
        """Identical action embeddings get identical probabilities."""
        branch = PolicyBranch.create("P", ParameterSet(0), small_config)
        rng = np.random.default_rng(1)
        row = rng.normal(size=(1, 12))
        actions = Tensor(np.vstack([row, rng.normal(size=(1, 12)), row]))
        probs = score_branch(branch, Tensor(rng.normal(size=(1, 8))), Tensor(rng.normal(size=(1, 8))), actions)
        assert probs.data[0, 0] == probs.data[0, 2]
        assert probs.data.sum() == pytest.approx(1.0)

    def test_empty_actions_rejected(self, small_config):
        """Scoring nothing is a shape error."""
        branch = PolicyBranch.create("P", ParameterSet(0), small_config)
        with pytest.raises(ShapeError):
            score_branch(branch, Tensor(np.zeros((1, 8))), Tensor(np.zeros((1, 8))), Tensor(np.zeros((0, 12))))


class TestMixture:
    """Tests for gate-weighted mixing."""

    def test_convex_combination(self):
        """The mixture sums to 1 and lies between the branch extremes."""
        rng = np.random.default_rng(2)
        branch_probs = [T.transpose(T.softmax(Tensor(rng.normal(size=(1, 5))))) for _ in range(3)]
        gate = T.softmax(Tensor(rng.normal(size=(1, 3))))
        mixed = mixture(branch_probs, gate).data[:, 0]
        stacked = np.hstack([p.data for p in branch_probs])
        assert mixed.sum() == pytest.approx(1.0)
        assert np.all(mixed >= stacked.min(axis=1) - 1e-15)
        assert np.all(mixed <= stacked.max(axis=1) + 1e-15)

    def test_rows_use_their_lane_gate(self):
        """Each row mixes with the gate row of its own lane."""
        columns = [Tensor([[1.0], [0.0], [0.25]]), Tensor([[0.0], [1.0], [0.75]])]
        gate = Tensor([[0.9, 0.1], [0.2, 0.8]])
        mixed = mixture(columns, gate, np.array([0, 0, 1]))
        assert np.allclose(mixed.data[:, 0], [0.9, 0.1, 0.2 * 0.25 + 0.8 * 0.75])

    def test_length_mismatch(self):
        """Branches scoring different action counts are rejected."""
        with pytest.raises(ShapeError):
            mixture([Tensor([[0.5], [0.5]]), Tensor([[1.0]])], Tensor([[0.5, 0.5]]))

    def test_gate_size_mismatch(self):
        """The gate needs one weight per branch."""
        with pytest.raises(ShapeError):
            mixture([Tensor([[1.0]]), Tensor([[1.0]])], Tensor([[1.0]]))


class TestSampling:
    """Tests for action selection."""

    def test_same_seed_same_draws(self):
        """Two generators with one seed draw the same indices."""
        probs = np.array([0.1, 0.2, 0.3, 0.4])
        a = np.random.default_rng(9)
        b = np.random.default_rng(9)
        assert [sample_action(probs, a) for _ in range(50)] == [sample_action(probs, b) for _ in range(50)]

    def test_frequencies(self):
        """[0.2, 0.8] is sampled in proportion."""
        rng = np.random.default_rng(4)
        draws = [sample_action(np.array([0.2, 0.8]), rng) for _ in range(10_000)]
        assert np.mean(draws) == pytest.approx(0.8, abs=0.02)

    def test_invalid_distribution(self):
        """NaNs and negative weights cannot be sampled."""
        rng = np.random.default_rng(0)
        with pytest.raises(PolicyError):
            sample_action(np.array([np.nan, 1.0]), rng)
        with pytest.raises(PolicyError):
            sample_action(np.array([-0.1, 1.1]), rng)

    def test_argmax_ties(self):
        """The lowest index wins a tie."""
        assert argmax_action(np.array([0.2, 0.4, 0.4])) == 1

    def test_log_prob_and_entropy(self):
        """log π reads one entry and entropy of a uniform distribution is log N."""
        probs = Tensor([[0.25, 0.75]])
        assert log_prob(probs, 1).item() == pytest.approx(math.log(0.75))
        assert entropy(Tensor([[0.25] * 4])).item() == pytest.approx(math.log(4))


class TestMixturePolicy:
    """Tests for the assembled policy."""

    def test_step_distribution(self, toy_dataset, first_step):
        """One probability per valid action, summing to 1, and gate weights over three branches."""
        policy, query, state, actions = first_step
        out, _, _ = run_step(policy, toy_dataset, query, state, actions)
        assert len(actions) == 5
        assert out.probs.shape == (1, 5)
        assert out.probs.data.sum() == pytest.approx(1.0)
        assert sum(out.gate_weights(policy.active).as_list()) == pytest.approx(1.0)

    def test_self_loop_only(self, toy_dataset, first_step):
        """A lone self-loop is chosen with probability 1."""
        policy, query, state, _ = first_step
        out, _, _ = run_step(policy, toy_dataset, query, state, [Action.self_loop()])
        assert out.probs.data[0, 0] == pytest.approx(1.0)

    def test_logit_space_mixture(self, toy_dataset, first_step, small_config):
        """Mixing in logit space still yields a distribution."""
        _, query, state, actions = first_step
        policy = MixturePolicy.build(dataclasses.replace(small_config, mixture_space="logit"), toy_dataset)
        out, _, _ = run_step(policy, toy_dataset, query, state, actions)
        assert out.probs.data.sum() == pytest.approx(1.0)

    def test_uniform_gate(self, toy_dataset, first_step, small_config):
        """The uniform-gate ablation has no gate weights and splits evenly."""
        _, query, state, actions = first_step
        policy = MixturePolicy.build(dataclasses.replace(small_config, uniform_gate=True), toy_dataset)
        assert "policy.gate" not in policy.params
        out, _, _ = run_step(policy, toy_dataset, query, state, actions)
        assert out.gate.data.tolist() == [[1 / 3, 1 / 3, 1 / 3]]

    def test_predicate_branch_ignores_entities(self, toy_dataset, first_step, small_config):
        """The predicate-only policy is blind to entity embeddings."""
        _, query, state, actions = first_step
        config = dataclasses.replace(small_config, no_cp=True, no_fp=True)
        policy = MixturePolicy.build(config, toy_dataset)
        rng = np.random.default_rng(5)
        shape = (toy_dataset.num_entities, config.entity_dim)
        a, _, _ = run_step(policy, toy_dataset, query, state, actions, Tensor(rng.normal(size=shape)))
        b, _, _ = run_step(policy, toy_dataset, query, state, actions, Tensor(rng.normal(size=shape)))
        assert np.array_equal(a.probs.data, b.probs.data)

    def test_dropped_branch_has_no_parameters(self, toy_dataset, small_config):
        """Dropping the whole-fact policy removes its weights and shrinks the gate."""
        policy = MixturePolicy.build(dataclasses.replace(small_config, no_fp=True), toy_dataset)
        assert policy.active == ["P", "C"]
        assert not any(name.startswith("policy.F.") for name in policy.params)
        assert policy.params["policy.gate"].shape == (2 * 8 + 8 + 6 + 8, 2)

    def test_single_branch_has_no_gate(self, toy_dataset, small_config):
        """With one branch left the gate is fixed to 1."""
        policy = MixturePolicy.build(dataclasses.replace(small_config, no_pp=True, no_cp=True), toy_dataset)
        assert policy.gate is None

    def test_all_dropped(self, toy_dataset, small_config):
        """Dropping every branch is a configuration error."""
        config = dataclasses.replace(small_config, no_pp=True, no_cp=True, no_fp=True)
        with pytest.raises(ConfigError):
            MixturePolicy.build(config, toy_dataset)

    def test_seed_fixes_initialization(self, toy_dataset, small_config):
        """Two builds with one seed have identical parameters."""
        a = MixturePolicy.build(small_config, toy_dataset).params.state_dict()
        b = MixturePolicy.build(small_config, toy_dataset).params.state_dict()
        assert a.keys() == b.keys()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_embed_action_matches_step_rows(self, toy_dataset, first_step, small_config):
        """One action embeds to the same row the step scored it with."""
        policy, query, state, actions = first_step
        out, _, ctx = run_step(policy, toy_dataset, query, state, actions)
        for kind in "PCF":
            row = policy.embed_action(actions[1], kind, state, ctx)
            assert row.shape == (1, action_width(kind, small_config))
            assert np.allclose(row.data[0], out.embeddings[kind].data[1], rtol=0, atol=1e-12)

    def test_advance_extends_history(self, toy_dataset, first_step, small_config):
        """Advancing feeds the chosen action to every branch's LSTM stack."""
        policy, query, state, actions = first_step
        out, history, _ = run_step(policy, toy_dataset, query, state, actions)
        nxt = policy.advance(history, out, 2)
        assert set(nxt) == {"P", "C", "F"}
        assert len(nxt["F"]) == small_config.lstm_layers
        assert nxt["C"][-1][0].shape == (1, small_config.lstm_hidden)
        assert not np.array_equal(nxt["C"][-1][0].data, history["C"][-1][0].data)

    def test_end_to_end_gradients(self, toy_dataset, first_step, gradcheck):
        """log π of one action differentiates correctly back to the embeddings and gate."""
        policy, query, state, actions = first_step

        def loss():
            out, history, ctx = run_step(policy, toy_dataset, query, state, actions)
            nxt = policy.advance(history, out, 1)
            gate = policy.gate_weights(nxt, ctx)
            return -(log_prob(out.probs, 1) + T.sum(gate * Tensor([[0.3, -0.2, 0.5]])))

        names = ["policy.gate", "time.weight", "policy.C.w1", "policy.F.lstm0.weight",
                 "embedding.predicate", "embedding.entity", "semantic.layer0.neighbor"]
        assert gradcheck(loss, [policy.params[n] for n in names], samples=4) < 1e-4


class TestLanes:
    """Tests for scoring several decisions in one pass."""

    @pytest.fixture
    def lanes(self, toy_dataset, small_config):
        policy = MixturePolicy.build(small_config, toy_dataset)
        queries = extract_queries(toy_dataset.splits["test"])[:3]
        entities = policy.encode_snapshot(toy_dataset, queries[0].query_time)
        states = [State.initial(q) for q in queries]
        action_lists = [valid_actions(s, toy_dataset, small_config.action_cap) for s in states]
        return policy, queries, entities, states, action_lists

    def test_matches_single_lane_steps(self, toy_dataset, lanes):
        """Stacked lanes give each lane the distribution and gate it gets alone."""
        policy, queries, entities, states, action_lists = lanes
        ctx = policy.query_contexts(queries, entities)
        out = policy.step_lanes(states, action_lists, policy.start(ctx), ctx)
        assert out.probs.shape == (1, sum(len(a) for a in action_lists))
        for lane, (query, state, actions) in enumerate(zip(queries, states, action_lists)):
            single, _, _ = run_step(policy, toy_dataset, query, state, actions, entities)
            assert out.actions[out.lane_rows(lane)] == actions
            assert np.allclose(out.lane_probs(lane), single.probs.data[0], rtol=0, atol=1e-12)
            assert np.allclose(out.gate.data[lane], single.gate.data[0], rtol=0, atol=1e-12)

    def test_advance_follows_parent_lanes(self, toy_dataset, lanes):
        """Advancing picks each new lane's parent history and action embedding."""
        policy, queries, entities, states, action_lists = lanes
        ctx = policy.query_contexts(queries, entities)
        history = policy.start(ctx)
        out = policy.step_lanes(states, action_lists, history, ctx)
        rows = [out.lane_rows(2).start, out.lane_rows(0).start + 1]
        nxt = policy.advance(history, out, rows)
        for j, (lane, index) in enumerate([(2, 0), (0, 1)]):
            single, single_history, _ = run_step(policy, toy_dataset, queries[lane], states[lane],
                                                 action_lists[lane], entities)
            expected = policy.advance(single_history, single, index)
            assert np.allclose(nxt["F"][-1][0].data[j], expected["F"][-1][0].data[0], rtol=0, atol=1e-12)

    def test_select_tiles_one_query(self, toy_dataset, lanes):
        """Selecting lane 0 three times repeats its query rows."""
        policy, queries, entities, _, _ = lanes
        ctx = policy.query_contexts(queries, entities).select([0, 0, 0])
        assert ctx.queries == [queries[0]] * 3
        assert np.array_equal(ctx.h_aux_q.data, np.repeat(ctx.h_aux_q.data[:1], 3, axis=0))

    def test_lane_without_actions(self, lanes):
        """Every lane needs at least one action."""
        policy, queries, entities, states, action_lists = lanes
        ctx = policy.query_contexts(queries, entities)
        with pytest.raises(ShapeError):
            policy.step_lanes(states, [action_lists[0], [], action_lists[2]], policy.start(ctx), ctx)
