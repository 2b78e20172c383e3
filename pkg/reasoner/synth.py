"""
Synthetic N-TKG corpora with planted temporal rules, and the rule oracle that
ranks answers from the planted ground truth.
"""

import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset, TimeScale, Vocabulary, load_dataset, serialize
from .errors import DatasetError
from .models import AuxMode, CoreOrder, Fact, Pair, Query, RuleSpec, SynthConfig

logger = logging.getLogger(__name__)

CORE_ROLES = ("subject", "object")
PLACE_ROLE = "place"
PLACE = 2  # role id of PLACE_ROLE
RULES_FILE = "rules.json"


def role_names(num_roles: int) -> list[str]:
    names = list(CORE_ROLES)
    if num_roles > 2:
        names.append(PLACE_ROLE)
    names += [f"role_{k}" for k in range(3, num_roles)]
    return names


def predicate_names(cfg: SynthConfig) -> tuple[list[str], list[str]]:
    """(all predicates, predicates drawn for snapshot slots): noise predicates then rule predicates."""
    names = [f"noise_{i}" for i in range(cfg.num_noise_predicates)]
    slot_names = list(names)
    for rule in cfg.rules:
        if rule.body not in names:
            names.append(rule.body)
        if rule.body not in slot_names:
            slot_names.append(rule.body)
    for rule in cfg.rules:
        if rule.head not in names:
            names.append(rule.head)
    return names, slot_names


class _Generator:
    """One generation pass; all randomness comes from a single seeded stream."""

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.entities = Vocabulary(f"E{i}" for i in range(cfg.num_entities))
        self.roles = Vocabulary(role_names(cfg.num_roles))
        names, slot_names = predicate_names(cfg)
        self.predicates = Vocabulary(names)
        self.slot_predicates = [self.predicates.id_of(n) for n in slot_names]
        self.rules_by_body: dict[int, list[RuleSpec]] = {}
        for rule in cfg.rules:
            self.rules_by_body.setdefault(self.predicates.id_of(rule.body), []).append(rule)
        self.firings = 0
        self.decoys = 0

    def entity(self) -> int:
        return int(self.rng.integers(self.cfg.num_entities))

    def core_pair(self) -> tuple[int, int]:
        subject = self.entity()
        obj = self.entity()
        while obj == subject:
            obj = self.entity()
        return subject, obj

    def aux_pairs(self, with_place: bool) -> tuple[Pair, ...]:
        pairs: list[Pair] = []
        if with_place:
            pairs.append((PLACE, self.entity()))
        aux_roles = len(self.roles) - 2
        if aux_roles > 0:
            for _ in range(int(self.rng.integers(self.cfg.max_aux_pairs + 1))):
                pairs.append((2 + int(self.rng.integers(aux_roles)), self.entity()))
        return tuple(pairs)

    def needs_place(self, predicate: int) -> bool:
        return any(r.aux_mode is AuxMode.SIGNAL for r in self.rules_by_body.get(predicate, ()))

    def fact(self, predicate: int, subject: int, obj: int, aux: tuple[Pair, ...], t: int) -> Fact:
        return Fact(predicate, ((0, subject), (1, obj)) + aux, t)

    def head_fact(self, rule: RuleSpec, body: Fact) -> Fact:
        subject, obj = body.subject, body.object
        if rule.core_order is CoreOrder.SWAPPED:
            subject, obj = obj, subject
        if rule.aux_mode is AuxMode.SIGNAL:
            aux = tuple(p for p in body.aux if p[0] == PLACE)
        else:
            aux = self.aux_pairs(with_place=False)
        return self.fact(self.predicates.id_of(rule.head), subject, obj, aux, body.timestamp + rule.gap)

    def decoy(self, body: Fact) -> Fact:
        """A non-firing body fact from the same subject with another object and another place."""
        place = next((e for r, e in body.aux if r == PLACE), None)
        obj = self.entity()
        while obj in (body.subject, body.object):
            obj = self.entity()
        other_place = self.entity()
        while other_place == place:
            other_place = self.entity()
        return self.fact(body.predicate, body.subject, obj, ((PLACE, other_place),), body.timestamp)

    def run(self) -> list[Fact]:
        cfg = self.cfg
        snapshots: list[list[Fact]] = [[] for _ in range(cfg.num_timestamps)]
        for t in range(cfg.num_timestamps):
            for _ in range(cfg.facts_per_snapshot):
                predicate = self.slot_predicates[int(self.rng.integers(len(self.slot_predicates)))]
                subject, obj = self.core_pair()
                body = self.fact(predicate, subject, obj, self.aux_pairs(self.needs_place(predicate)), t)
                snapshots[t].append(body)
                for rule in self.rules_by_body.get(predicate, ()):
                    fired = self.rng.random() < rule.confidence
                    if fired and t + rule.gap < cfg.num_timestamps:
                        snapshots[t + rule.gap].append(self.head_fact(rule, body))
                        self.firings += 1
                if self.needs_place(predicate):
                    for _ in range(cfg.decoys_per_body):
                        snapshots[t].append(self.decoy(body))
                        self.decoys += 1
        return [fact for snapshot in snapshots for fact in snapshot]


def split_by_time(facts: Sequence[Fact], num_timestamps: int, valid_fraction: float,
                  test_fraction: float) -> dict[str, list[Fact]]:
    """The last test_fraction of ticks is test, the preceding valid_fraction is valid."""
    num_test = int(round(num_timestamps * test_fraction))
    num_valid = int(round(num_timestamps * valid_fraction))
    test_start = num_timestamps - num_test
    valid_start = test_start - num_valid
    splits: dict[str, list[Fact]] = {"train": [], "valid": [], "test": []}
    for fact in facts:
        if fact.timestamp >= test_start:
            splits["test"].append(fact)
        elif fact.timestamp >= valid_start:
            splits["valid"].append(fact)
        else:
            splits["train"].append(fact)
    return splits


def generate(cfg: SynthConfig, out_dir: str | Path | None = None) -> Dataset:
    """Generate a corpus; with ``out_dir`` also write it with its ``rules.json``."""
    gen = _Generator(cfg)
    facts = gen.run()
    splits = split_by_time(facts, cfg.num_timestamps, cfg.valid_fraction, cfg.test_fraction)
    metadata = {
        "generator": "synthetic",
        "seed": cfg.seed,
        "facts": len(facts),
        "rule_firings": gen.firings,
        "decoys": gen.decoys,
    }
    ds = Dataset(gen.entities, gen.predicates, gen.roles, splits, TimeScale(), metadata=metadata)
    logger.info("generated %d facts (%d rule firings, %d decoys) over %d timestamps",
                len(facts), gen.firings, gen.decoys, cfg.num_timestamps)
    if out_dir is not None:
        out_dir = Path(out_dir)
        serialize(ds, out_dir)
        save_rules(cfg.rules, out_dir / RULES_FILE)
    return ds


def save_rules(rules: Sequence[RuleSpec], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"rules": [r.to_dict() for r in rules]}, f, indent=2)


def load_rules(path: str | Path) -> list[RuleSpec]:
    path = Path(path)
    if path.is_dir():
        path = path / RULES_FILE
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return [
            RuleSpec(r["body"], r["head"], r["gap"], r["confidence"],
                     CoreOrder(r["core_order"]), AuxMode(r["aux_mode"]))
            for r in data["rules"]
        ]
    except (OSError, KeyError, ValueError) as exc:
        raise DatasetError(f"cannot read rules: {exc}", str(path)) from exc


def load_corpus(path: str | Path) -> tuple[Dataset, list[RuleSpec]]:
    return load_dataset(path), load_rules(path)


def oracle_scores(query: Query, ds: Dataset, rules: Sequence[RuleSpec]) -> dict[int, float]:
    """Apply each rule whose head is the query predicate backwards from the query.

    A body fact implies an answer with the rule's confidence; in aux-signal
    mode a body whose place differs from the query's place counts for half.
    """
    head_name = ds.predicates.token_of(query.predicate)
    # position of the known entity in the base-orientation head fact
    known_pos = 1 if query.inverse else 0
    query_places = {e for r, e in query.aux if r == PLACE}
    scores: dict[int, float] = {}
    for rule in rules:
        if rule.head != head_name or rule.body not in ds.predicates:
            continue
        body_id = ds.predicates.id_of(rule.body)
        body_known = known_pos if rule.core_order is CoreOrder.SAME else 1 - known_pos
        body_answer = 1 - body_known
        for fact in ds.snapshots.get(query.query_time - rule.gap, ()):
            if fact.predicate != body_id or fact.inverse or fact.pairs[body_known][1] != query.entity:
                continue
            weight = rule.confidence
            if rule.aux_mode is AuxMode.SIGNAL and query_places:
                body_places = {e for r, e in fact.aux if r == PLACE}
                if not body_places & query_places:
                    weight *= 0.5
            answer = fact.pairs[body_answer][1]
            scores[answer] = scores.get(answer, 0.0) + weight
    return scores


def oracle_predict(query: Query, ds: Dataset, rules: Sequence[RuleSpec]) -> list[int]:
    """Every entity id, implied ones first by score, then the rest by id."""
    scores = oracle_scores(query, ds, rules)
    implied = sorted(scores, key=lambda e: (-scores[e], e))
    rest = [e for e in range(ds.num_entities) if e not in scores]
    return implied + rest
