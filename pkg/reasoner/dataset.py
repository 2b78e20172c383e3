"""
N-tuple temporal knowledge graph datasets.

Canonical on-disk layout of a dataset directory:

    entities.txt, predicates.txt, roles.txt   one token per line, line number = id
    train.jsonl, valid.jsonl, test.jsonl      one fact per line:
        {"p": "Consult", "pairs": [["Consulter", "America"], ["Consulted", "Japan"]], "t": 3120}
    meta.json                                  optional free-form metadata
"""

import bisect
import copy
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DatasetError
from .models import Fact, Query

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
INVERSE_SUFFIX = "⁻¹"
SELF_LOOP_NAME = "<self-loop>"
VOCAB_FILES = {"entities": "entities.txt", "predicates": "predicates.txt", "roles": "roles.txt"}


class Vocabulary:
    """Bidirectional mapping between tokens and dense ids."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._tokens: list[str] = []
        self._index: dict[str, int] = {}
        for token in tokens:
            self.add(token)

    def add(self, token: str) -> int:
        """Return the id of ``token``, assigning the next free id if it is new."""
        existing = self._index.get(token)
        if existing is not None:
            return existing
        self._index[token] = len(self._tokens)
        self._tokens.append(token)
        return self._index[token]

    def id_of(self, token: str) -> int:
        return self._index[token]

    def token_of(self, idx: int) -> str:
        return self._tokens[idx]

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __len__(self) -> int:
        return len(self._tokens)

    def __iter__(self) -> Iterator[str]:
        return iter(self._tokens)

    def copy(self) -> "Vocabulary":
        return Vocabulary(self._tokens)

    @classmethod
    def load(cls, path: Path) -> "Vocabulary":
        if not path.exists():
            raise DatasetError("missing vocabulary file", str(path))
        vocab = cls()
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                token = line.rstrip("\n")
                if not token:
                    raise DatasetError("empty token", str(path), line_no)
                if token in vocab:
                    raise DatasetError(f"duplicate token {token!r}", str(path), line_no)
                vocab.add(token)
        return vocab

    def save(self, path: Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for token in self._tokens:
                f.write(token + "\n")


@dataclass(frozen=True)
class TimeScale:
    """Maps raw timestamps to consecutive integer ticks: tick = (raw − origin) / granularity."""
    origin: int = 0
    granularity: int = 1

    def to_tick(self, raw: int) -> int:
        return (raw - self.origin) // self.granularity

    def to_raw(self, tick: int) -> int:
        return self.origin + tick * self.granularity

    @classmethod
    def fit(cls, raw_times: Iterable[int]) -> "TimeScale":
        distinct = sorted(set(raw_times))
        if not distinct:
            return cls()
        origin = distinct[0]
        granularity = 0
        for t in distinct[1:]:
            granularity = math.gcd(granularity, t - origin)
        return cls(origin=origin, granularity=granularity or 1)


class Dataset:
    """Vocabularies, split fact lists, snapshots and the adjacency index.

    Immutable after construction; every index is safe for concurrent readers.
    """

    def __init__(self, entities: Vocabulary, predicates: Vocabulary, roles: Vocabulary,
                 splits: dict[str, list[Fact]], time_scale: TimeScale | None = None,
                 with_inverse: bool = False, metadata: dict | None = None):
        self.entities = entities
        self.predicates = predicates
        self.roles = roles
        self.splits = {name: list(splits.get(name, [])) for name in SPLITS}
        self.time_scale = time_scale or TimeScale()
        self.with_inverse = with_inverse
        self.metadata = dict(metadata or {})

        self.snapshots: dict[int, list[Fact]] = defaultdict(list)
        self._adjacency: dict[int, tuple[list[int], list[Fact]]] = {}
        self._answers: dict[tuple, set[int]] = defaultdict(set)
        self._build_indexes()
        self.seen_entities = frozenset(
            entity for fact in self.splits["train"] for _, entity in fact.pairs
        )

    def _build_indexes(self) -> None:
        by_entity: dict[int, list[tuple[int, int, Fact]]] = defaultdict(list)
        order = 0
        for split in SPLITS:
            for fact in self.splits[split]:
                oriented = (fact, fact.inverted()) if self.with_inverse else (fact,)
                for f in oriented:
                    self.snapshots[f.timestamp].append(f)
                    by_entity[f.subject].append((-f.timestamp, order, f))
                    order += 1
                # the filter index always knows both orientations
                for f in (fact, fact.inverted()):
                    self._answers[self._answer_key(f)].add(f.object)
        self.snapshots = dict(sorted(self.snapshots.items()))
        for entity, rows in by_entity.items():
            rows.sort(key=lambda r: (r[0], r[1]))
            self._adjacency[entity] = ([r[0] for r in rows], [r[2] for r in rows])

    @staticmethod
    def _answer_key(fact: Fact) -> tuple:
        # everything except the entity at core position 1
        return (fact.timestamp, fact.predicate, fact.inverse,
                fact.pairs[0], fact.pairs[1][0], fact.pairs[2:])

    # Sizes and names

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_base_predicates(self) -> int:
        return len(self.predicates)

    @property
    def num_predicates(self) -> int:
        """Predicates in use, counting inverse predicates after augmentation."""
        return self.num_base_predicates * (2 if self.with_inverse else 1)

    @property
    def num_predicate_rows(self) -> int:
        """Embedding rows: base, inverse and the reserved self-loop predicate."""
        return 2 * self.num_base_predicates + 1

    @property
    def self_loop_predicate(self) -> int:
        return 2 * self.num_base_predicates

    @property
    def num_roles(self) -> int:
        return len(self.roles)

    @property
    def timestamps(self) -> list[int]:
        return list(self.snapshots)

    def predicate_index(self, fact: Fact) -> int:
        """Embedding row of a fact's (possibly inverse) predicate."""
        return fact.predicate + (self.num_base_predicates if fact.inverse else 0)

    def predicate_name(self, predicate: int, inverse: bool = False) -> str:
        name = self.predicates.token_of(predicate)
        return name + INVERSE_SUFFIX if inverse else name

    # Queries over the graph

    def facts_adjacent(self, entity: int, tau_max: int) -> Iterator[Fact]:
        """Facts whose first core entity is ``entity`` with timestamp ≤ ``tau_max``, most recent first."""
        entry = self._adjacency.get(entity)
        if entry is None:
            return iter(())
        neg_times, facts = entry
        start = bisect.bisect_left(neg_times, -tau_max)
        return iter(facts[start:])

    def all_facts(self) -> Iterator[Fact]:
        """Every indexed fact (both orientations after augmentation)."""
        for facts in self.snapshots.values():
            yield from facts

    def true_answers(self, query: Query) -> set[int]:
        """Entities completing the query's masked position at the query's exact timestamp."""
        return self._answers.get(self._answer_key(query.source), set())

    def is_seen(self, entity: int) -> bool:
        return entity in self.seen_entities

    def stats(self) -> dict:
        """Table-style dataset counts."""
        return {
            "predicates": self.num_base_predicates,
            "entities": self.num_entities,
            "roles": self.num_roles,
            "train": len(self.splits["train"]),
            "valid": len(self.splits["valid"]),
            "test": len(self.splits["test"]),
            "timestamps": len(self.snapshots),
            "granularity": self.time_scale.granularity,
        }

    # Query files

    def read_facts(self, path: str | Path) -> list[Fact]:
        """Read a JSON-lines file of facts against this dataset's vocabularies."""
        return self._read_ticks(Path(path), self.entities, allow_new_entities=False)

    def with_query_facts(self, path: str | Path) -> tuple["Dataset", list[Fact]]:
        """Read a query file that may name entities this dataset has never seen.

        Unknown names receive fresh ids in a derived dataset whose entity
        vocabulary extends this one; the facts and indexes are shared and this
        dataset is left unchanged. New entities never appear in training and
        share the unseen embedding row.
        """
        entities = self.entities.copy()
        facts = self._read_ticks(Path(path), entities, allow_new_entities=True)
        if len(entities) == len(self.entities):
            return self, facts
        derived = copy.copy(self)
        derived.entities = entities
        logger.info("query file %s names %d new entities", path, len(entities) - len(self.entities))
        return derived, facts

    def _read_ticks(self, path: Path, entities: Vocabulary, allow_new_entities: bool) -> list[Fact]:
        records = _read_jsonl(path, entities, self.predicates, self.roles, allow_new_entities)
        facts = []
        for line_no, raw_fact in records:
            tick, remainder = divmod(raw_fact.timestamp - self.time_scale.origin, self.time_scale.granularity)
            if tick < 0 or remainder:
                raise DatasetError(f"timestamp {raw_fact.timestamp} is off the dataset's time grid",
                                   str(path), line_no)
            facts.append(Fact(raw_fact.predicate, raw_fact.pairs, tick, raw_fact.inverse))
        return facts

    def fact_to_record(self, fact: Fact) -> dict:
        """Inverse of parsing: names and raw timestamps, base orientation."""
        base = fact.inverted() if fact.inverse else fact
        return {
            "p": self.predicates.token_of(base.predicate),
            "pairs": [[self.roles.token_of(r), self.entities.token_of(e)] for r, e in base.pairs],
            "t": self.time_scale.to_raw(base.timestamp),
        }


def _parse_record(record: dict, entities: Vocabulary, predicates: Vocabulary, roles: Vocabulary,
                  allow_new_entities: bool) -> Fact:
    if not isinstance(record, dict) or not {"p", "pairs", "t"} <= set(record):
        raise ValueError("expected an object with keys 'p', 'pairs' and 't'")
    pairs_raw = record["pairs"]
    if not isinstance(pairs_raw, list) or len(pairs_raw) < 2:
        raise ValueError("fewer than two core pairs")
    timestamp = record["t"]
    if not isinstance(timestamp, int) or isinstance(timestamp, bool) or timestamp < 0:
        raise ValueError(f"timestamp must be a non-negative integer, got {timestamp!r}")
    if record["p"] not in predicates:
        raise ValueError(f"unknown predicate {record['p']!r}")

    pairs = []
    for pair in pairs_raw:
        if not isinstance(pair, list) or len(pair) != 2:
            raise ValueError(f"malformed role–entity pair {pair!r}")
        role, entity = pair
        if role not in roles:
            raise ValueError(f"unknown role {role!r}")
        if entity not in entities:
            if not allow_new_entities:
                raise ValueError(f"unknown entity {entity!r}")
            entities.add(entity)
        pairs.append((roles.id_of(role), entities.id_of(entity)))
    return Fact(predicates.id_of(record["p"]), tuple(pairs), timestamp)


def _read_jsonl(path: Path, entities: Vocabulary, predicates: Vocabulary, roles: Vocabulary,
                allow_new_entities: bool = False) -> list[tuple[int, Fact]]:
    """Parse a fact file; timestamps stay raw. Returns (line number, fact) pairs."""
    if not path.exists():
        raise DatasetError("missing fact file", str(path))
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                out.append((line_no, _parse_record(record, entities, predicates, roles, allow_new_entities)))
            except json.JSONDecodeError as exc:
                raise DatasetError(f"malformed line: {exc.msg}", str(path), line_no) from exc
            except ValueError as exc:
                raise DatasetError(str(exc), str(path), line_no) from exc
    return out


def load_dataset(path: str | Path) -> Dataset:
    """Load a canonical dataset directory and index it."""
    root = Path(path)
    if not root.is_dir():
        raise DatasetError("dataset directory not found", str(root))

    entities = Vocabulary.load(root / VOCAB_FILES["entities"])
    predicates = Vocabulary.load(root / VOCAB_FILES["predicates"])
    roles = Vocabulary.load(root / VOCAB_FILES["roles"])

    raw_splits = {}
    for split in SPLITS:
        records = _read_jsonl(root / f"{split}.jsonl", entities, predicates, roles)
        raw_splits[split] = [fact for _, fact in records]

    scale = TimeScale.fit(f.timestamp for facts in raw_splits.values() for f in facts)
    splits = {
        name: [Fact(f.predicate, f.pairs, scale.to_tick(f.timestamp)) for f in facts]
        for name, facts in raw_splits.items()
    }

    metadata = {}
    meta_path = root / "meta.json"
    if meta_path.exists():
        with open(meta_path, "r", encoding="utf-8") as f:
            metadata = json.load(f)

    ds = Dataset(entities, predicates, roles, splits, scale, metadata=metadata)
    logger.info("loaded %s: %s", root, ds.stats())
    return ds


def serialize(ds: Dataset, path: str | Path) -> None:
    """Write a dataset back in the canonical format (base facts, raw timestamps)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    ds.entities.save(root / VOCAB_FILES["entities"])
    ds.predicates.save(root / VOCAB_FILES["predicates"])
    ds.roles.save(root / VOCAB_FILES["roles"])
    for split in SPLITS:
        with open(root / f"{split}.jsonl", "w", encoding="utf-8") as f:
            for fact in ds.splits[split]:
                f.write(json.dumps(ds.fact_to_record(fact), ensure_ascii=False) + "\n")
    if ds.metadata:
        with open(root / "meta.json", "w", encoding="utf-8") as f:
            json.dump(ds.metadata, f, ensure_ascii=False, indent=2)


def add_inverse_facts(ds: Dataset) -> Dataset:
    """Index every fact in both orientations. Idempotent."""
    if ds.with_inverse:
        return ds
    return Dataset(ds.entities, ds.predicates, ds.roles, ds.splits, ds.time_scale,
                   with_inverse=True, metadata=ds.metadata)


def extract_queries(split: list[Fact]) -> list[Query]:
    """Two queries per fact: predict the object, and predict the subject via the inverse."""
    queries = []
    for fact in split:
        if len(fact.pairs) < 2:
            raise DatasetError("fewer than two core pairs")
        for source in (fact, fact.inverted()):
            queries.append(Query(source=source, answer=source.object, query_time=source.timestamp))
    return queries


def convert_tsv(src: str | Path, dst: str | Path) -> Dataset:
    """Convert tab-separated corpora into the canonical format.

    Each line of ``train``/``valid``/``test`` (``.txt`` or ``.tsv``) reads
    ``predicate  role1  entity1  role2  entity2  [role  entity]...  timestamp``.
    """
    src, dst = Path(src), Path(dst)
    entities, predicates, roles = Vocabulary(), Vocabulary(), Vocabulary()
    raw_splits: dict[str, list[Fact]] = {}

    for split in SPLITS:
        candidates = [src / f"{split}.txt", src / f"{split}.tsv"]
        file_path = next((p for p in candidates if p.exists()), None)
        if file_path is None:
            raise DatasetError(f"missing {split} file (.txt or .tsv)", str(src))
        facts = []
        with open(file_path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                fields = line.rstrip("\n").split("\t")
                if fields == [""]:
                    continue
                if len(fields) < 6 or len(fields) % 2 != 0:
                    raise DatasetError("expected predicate, role–entity pairs and a timestamp; "
                                       "fewer than two core pairs or an unpaired field",
                                       str(file_path), line_no)
                try:
                    timestamp = int(fields[-1])
                except ValueError as exc:
                    raise DatasetError(f"bad timestamp {fields[-1]!r}", str(file_path), line_no) from exc
                body = fields[1:-1]
                pairs = tuple(
                    (roles.add(body[i]), entities.add(body[i + 1]))
                    for i in range(0, len(body), 2)
                )
                facts.append(Fact(predicates.add(fields[0]), pairs, timestamp))
        raw_splits[split] = facts

    scale = TimeScale.fit(f.timestamp for facts in raw_splits.values() for f in facts)
    splits = {
        name: [Fact(f.predicate, f.pairs, scale.to_tick(f.timestamp)) for f in facts]
        for name, facts in raw_splits.items()
    }
    ds = Dataset(entities, predicates, roles, splits, scale)
    serialize(ds, dst)
    logger.info("converted %s -> %s: %s", src, dst, ds.stats())
    return ds
