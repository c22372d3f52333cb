"""Data model for bag-level relation extraction corpora with per-sentence noise labels.

A bag groups every sentence that mentions the same (head, tail) entity pair and
carries a single relation label.  Each sentence additionally records whether its
context actually expresses the bag relation (z = 1 valid, z = 0 noisy, None when
the status is unknown, e.g. for imported data).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

ORIGIN_ORIGINAL = "original"
ORIGIN_SYNTH_VALID = "synth_valid"
ORIGIN_SYNTH_NOISY = "synth_noisy"
ORIGINS = (ORIGIN_ORIGINAL, ORIGIN_SYNTH_VALID, ORIGIN_SYNTH_NOISY)

SPLIT_TAGS = ("train", "dev", "test")

_FORMAT_VERSION = 1


class CorpusError(ValueError):
    """Invalid corpus structure or contents."""


class FormatError(CorpusError):
    """Malformed dataset file; message carries the offending line number."""


@dataclass(frozen=True)
class Relation:
    id: int
    name: str

    def __post_init__(self):
        if self.id < 0:
            raise CorpusError(f"relation id must be >= 0, got {self.id}")
        if not self.name:
            raise CorpusError("relation name must be non-empty")


@dataclass(frozen=True)
class Entity:
    id: int
    surface_tokens: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "surface_tokens", tuple(self.surface_tokens))
        if self.id < 0:
            raise CorpusError(f"entity id must be >= 0, got {self.id}")
        if not self.surface_tokens:
            raise CorpusError(f"entity {self.id} has an empty surface")


@dataclass(frozen=True)
class Vocab:
    """Token id space; token strings are kept when known (generated corpora)."""

    size: int
    tokens: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.tokens is not None:
            object.__setattr__(self, "tokens", tuple(self.tokens))
            if len(self.tokens) != self.size:
                raise CorpusError(
                    f"vocab size {self.size} does not match {len(self.tokens)} token strings"
                )
        if self.size <= 0:
            raise CorpusError("vocab must be non-empty")


@dataclass(frozen=True)
class Sentence:
    """One mention-pair sentence; spans are half-open [start, end) token offsets."""

    tokens: tuple[int, ...]
    head_span: tuple[int, int]
    tail_span: tuple[int, int]
    relation: int
    z: int | None
    origin: str
    source_id: int | None = None  # seed-sentence index that donated the context

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "head_span", tuple(self.head_span))
        object.__setattr__(self, "tail_span", tuple(self.tail_span))
        if not self.tokens:
            raise CorpusError("sentence has no tokens")
        if any(t < 0 for t in self.tokens):
            raise CorpusError("token ids must be >= 0")
        for name, (s, e) in (("head", self.head_span), ("tail", self.tail_span)):
            if not (0 <= s < e <= len(self.tokens)):
                raise CorpusError(
                    f"{name} span [{s}, {e}) out of bounds for {len(self.tokens)} tokens"
                )
        hs, he = self.head_span
        ts, te = self.tail_span
        if hs < te and ts < he:
            raise CorpusError("head and tail spans overlap")
        if self.z not in (0, 1, None):
            raise CorpusError(f"z must be 0, 1 or None, got {self.z!r}")
        if self.origin not in ORIGINS:
            raise CorpusError(f"unknown origin {self.origin!r}")
        if self.z == 1 and self.origin == ORIGIN_SYNTH_NOISY:
            raise CorpusError("z=1 sentence cannot have origin synth_noisy")
        if self.z == 0 and self.origin != ORIGIN_SYNTH_NOISY:
            raise CorpusError(f"z=0 sentence must have origin synth_noisy, got {self.origin!r}")

    @property
    def mention_free_tokens(self) -> tuple[int, ...]:
        """Context tokens: everything outside the two mention spans, in order."""
        spans = sorted([self.head_span, self.tail_span])
        (s1, e1), (s2, e2) = spans
        return self.tokens[:s1] + self.tokens[e1:s2] + self.tokens[e2:]


@dataclass(frozen=True)
class Bag:
    id: int
    head: int
    tail: int
    relation: int
    sentences: tuple[Sentence, ...]

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if not self.sentences:
            raise CorpusError(f"bag {self.id} has no sentences")
        for s in self.sentences:
            if s.relation != self.relation:
                raise CorpusError(
                    f"bag {self.id} labeled {self.relation} contains a sentence labeled {s.relation}"
                )

    @property
    def size(self) -> int:
        return len(self.sentences)


@dataclass(frozen=True)
class Dataset:
    bags: tuple[Bag, ...]
    vocab: Vocab
    relations: tuple[Relation, ...]
    split_tag: str
    generator_seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "bags", tuple(self.bags))
        object.__setattr__(self, "relations", tuple(self.relations))
        if self.split_tag not in SPLIT_TAGS:
            raise CorpusError(f"split_tag must be one of {SPLIT_TAGS}, got {self.split_tag!r}")
        rel_ids = [r.id for r in self.relations]
        if len(self.relations) < 2:
            raise CorpusError("need at least 2 relations")
        if sorted(rel_ids) != list(range(len(rel_ids))):
            raise CorpusError("relation ids must be dense 0..K-1 and unique")
        known = set(rel_ids)
        seen_bags = set()
        for bag in self.bags:
            if bag.id in seen_bags:
                raise CorpusError(f"duplicate bag id {bag.id}")
            seen_bags.add(bag.id)
            if bag.relation not in known:
                raise CorpusError(f"bag {bag.id} references unknown relation {bag.relation}")
            for s in bag.sentences:
                if any(t >= self.vocab.size for t in s.tokens):
                    raise CorpusError(f"bag {bag.id} has a token outside the vocab range")

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def sentences(self):
        for bag in self.bags:
            yield from bag.sentences


def noise_ratio(dataset: Dataset) -> Fraction:
    """Exact fraction of noisy sentences over all sentences in the dataset."""
    noisy = total = 0
    for s in dataset.sentences():
        if s.z is None:
            raise CorpusError("noise_ratio needs z labels; found unlabeled noise status")
        total += 1
        noisy += s.z == 0
    if total == 0:
        raise CorpusError("empty dataset")
    return Fraction(noisy, total)


def is_disturbing(bag: Bag) -> bool:
    """A bag is disturbing when its sentences are all noisy or all valid."""
    zs = {s.z for s in bag.sentences}
    if None in zs:
        raise CorpusError(f"bag {bag.id} has unlabeled noise status")
    return zs == {0} or zs == {1}


def disturbing_ratio(dataset: Dataset) -> Fraction:
    """Exact fraction of disturbing bags over all bags."""
    if not dataset.bags:
        raise CorpusError("empty dataset")
    return Fraction(sum(is_disturbing(b) for b in dataset.bags), len(dataset.bags))


def _canonical(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write one header line plus one line-delimited record per sentence."""
    path = Path(path)
    lines = [
        _canonical(
            {
                "header": {
                    "version": _FORMAT_VERSION,
                    "vocab_size": dataset.vocab.size,
                    "vocab_tokens": list(dataset.vocab.tokens) if dataset.vocab.tokens else None,
                    "relations": [[r.id, r.name] for r in dataset.relations],
                    "split_tag": dataset.split_tag,
                    "generator_seed": dataset.generator_seed,
                }
            }
        )
    ]
    for bag in dataset.bags:
        for s in bag.sentences:
            lines.append(
                _canonical(
                    {
                        "bag_id": bag.id,
                        "head_id": bag.head,
                        "tail_id": bag.tail,
                        "relation_id": bag.relation,
                        "tokens": list(s.tokens),
                        "head_span": list(s.head_span),
                        "tail_span": list(s.tail_span),
                        "z": s.z,
                        "origin": s.origin,
                        "source_id": s.source_id,
                    }
                )
            )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


_RECORD_FIELDS = {
    "bag_id", "head_id", "tail_id", "relation_id",
    "tokens", "head_span", "tail_span", "z", "origin", "source_id",
}


def read_dataset(path: str | Path) -> Dataset:
    """Parse a dataset file; malformed lines raise FormatError with the line number."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: no bags (empty file)")

    def parse(i: int, text: str) -> dict:
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: line {i}: invalid record: {exc}") from None
        if not isinstance(rec, dict):
            raise FormatError(f"{path}: line {i}: record must be an object")
        return rec

    head = parse(1, lines[0])
    if "header" not in head:
        raise FormatError(f"{path}: line 1: missing header record")
    h = head["header"]
    try:
        vocab = Vocab(h["vocab_size"], h.get("vocab_tokens"))
        relations = tuple(Relation(rid, name) for rid, name in h["relations"])
        split_tag = h["split_tag"]
        generator_seed = h.get("generator_seed")
    except (KeyError, TypeError, CorpusError) as exc:
        raise FormatError(f"{path}: line 1: bad header: {exc}") from None

    # Bags are reconstructed by grouping records on bag_id in first-appearance order.
    order: list[int] = []
    members: dict[int, list[Sentence]] = {}
    bag_meta: dict[int, tuple[int, int, int]] = {}
    for i, text in enumerate(lines[1:], start=2):
        if not text.strip():
            raise FormatError(f"{path}: line {i}: blank line")
        rec = parse(i, text)
        missing = _RECORD_FIELDS - rec.keys()
        if missing:
            raise FormatError(f"{path}: line {i}: missing fields {sorted(missing)}")
        try:
            sent = Sentence(
                tokens=rec["tokens"],
                head_span=rec["head_span"],
                tail_span=rec["tail_span"],
                relation=rec["relation_id"],
                z=rec["z"],
                origin=rec["origin"],
                source_id=rec["source_id"],
            )
        except (CorpusError, TypeError) as exc:
            raise FormatError(f"{path}: line {i}: {exc}") from None
        bid = rec["bag_id"]
        meta = (rec["head_id"], rec["tail_id"], rec["relation_id"])
        if bid not in members:
            order.append(bid)
            members[bid] = []
            bag_meta[bid] = meta
        elif bag_meta[bid] != meta:
            raise FormatError(
                f"{path}: line {i}: bag {bid} records disagree on head/tail/relation"
            )
        members[bid].append(sent)

    if not order:
        raise FormatError(f"{path}: no bags")
    try:
        bags = tuple(
            Bag(bid, bag_meta[bid][0], bag_meta[bid][1], bag_meta[bid][2], members[bid])
            for bid in order
        )
        return Dataset(bags, vocab, relations, split_tag, generator_seed)
    except CorpusError as exc:
        raise FormatError(f"{path}: {exc}") from None
