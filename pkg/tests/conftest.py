"""
Shared fixtures for testing the reasoner.
"""

import numpy as np
import pytest

from reasoner.dataset import Dataset, TimeScale, Vocabulary, add_inverse_facts
from reasoner.models import AuxMode, CoreOrder, Fact, RuleSpec, RunConfig, SynthConfig
from reasoner.synth import generate
from reasoner.tensor import Tape


ENTITIES = ["Alice", "Bob", "Carol", "Dave", "Erin", "Frank"]
PREDICATES = ["Consult", "Negotiate", "Sign"]
ROLES = ["subject", "object", "place"]


def make_fact(predicate: str, subject: str, obj: str, t: int, place: str | None = None) -> Fact:
    """Build a fact over the toy vocabularies."""
    pairs = ((0, ENTITIES.index(subject)), (1, ENTITIES.index(obj)))
    if place is not None:
        pairs += ((2, ENTITIES.index(place)),)
    return Fact(PREDICATES.index(predicate), pairs, t)


def make_dataset(splits: dict[str, list[Fact]], with_inverse: bool = False) -> Dataset:
    ds = Dataset(Vocabulary(ENTITIES), Vocabulary(PREDICATES), Vocabulary(ROLES), splits, TimeScale())
    return add_inverse_facts(ds) if with_inverse else ds


@pytest.fixture
def toy_splits() -> dict[str, list[Fact]]:
    """Six entities, three predicates, timestamps 0..5."""
    return {
        "train": [
            make_fact("Consult", "Alice", "Bob", 0, place="Erin"),
            make_fact("Negotiate", "Bob", "Carol", 1),
            make_fact("Consult", "Alice", "Carol", 1, place="Frank"),
            make_fact("Sign", "Carol", "Dave", 2),
            make_fact("Negotiate", "Alice", "Dave", 2, place="Erin"),
            make_fact("Consult", "Dave", "Erin", 3),
        ],
        "valid": [
            make_fact("Sign", "Alice", "Bob", 4),
        ],
        "test": [
            make_fact("Sign", "Alice", "Carol", 5, place="Erin"),
            make_fact("Consult", "Bob", "Alice", 5),
        ],
    }


@pytest.fixture
def toy_dataset(toy_splits) -> Dataset:
    """The toy graph indexed in both orientations."""
    return make_dataset(toy_splits, with_inverse=True)


@pytest.fixture
def small_config() -> RunConfig:
    """A dim-8 configuration that runs in milliseconds."""
    return RunConfig(
        predicate_dim=8,
        entity_dim=6,
        time_dim=4,
        lstm_hidden=8,
        lstm_layers=2,
        mlp_hidden=8,
        max_steps=3,
        history_window=2,
        gcn_layers=1,
        beam_size=16,
        valid_beam_size=8,
        batch_size=4,
        epochs=1,
        threads=1,
        seed=7,
    )


@pytest.fixture
def signal_synth_config() -> SynthConfig:
    """A small corpus with one certain rule whose head copies the body's place."""
    return SynthConfig(
        num_entities=12,
        num_noise_predicates=2,
        num_roles=3,
        num_timestamps=30,
        facts_per_snapshot=4,
        max_aux_pairs=1,
        decoys_per_body=1,
        test_fraction=0.1,
        valid_fraction=0.1,
        rules=[RuleSpec("Negotiate", "Sign", gap=1, confidence=1.0,
                        core_order=CoreOrder.SAME, aux_mode=AuxMode.SIGNAL)],
        seed=3,
    )


@pytest.fixture
def synth_corpus(tmp_path, signal_synth_config):
    """The small signal corpus written to disk; yields (directory, dataset)."""
    out = tmp_path / "corpus"
    ds = generate(signal_synth_config, out)
    return out, ds


@pytest.fixture
def gradcheck():
    """Central finite differences against tape gradients.

    ``check(loss_fn, tensors, samples=None)`` returns the largest relative
    error over the checked entries; ``samples`` caps entries per tensor.
    """
    def check(loss_fn, tensors, samples: int | None = None, h: float = 1e-6) -> float:
        with Tape() as tape:
            loss = loss_fn()
        grads = tape.backward(loss)
        rng = np.random.default_rng(0)
        worst = 0.0
        for tensor in tensors:
            analytic = grads.get(tensor, np.zeros_like(tensor.data))
            indices = list(np.ndindex(tensor.shape))
            if samples is not None and len(indices) > samples:
                picks = rng.choice(len(indices), size=samples, replace=False)
                indices = [indices[i] for i in sorted(picks)]
            for idx in indices:
                original = tensor.data[idx]
                tensor.data[idx] = original + h
                plus = loss_fn().item()
                tensor.data[idx] = original - h
                minus = loss_fn().item()
                tensor.data[idx] = original
                numeric = (plus - minus) / (2 * h)
                error = abs(analytic[idx] - numeric) / max(abs(analytic[idx]) + abs(numeric), 1e-5)
                worst = max(worst, error)
        return worst

    return check
