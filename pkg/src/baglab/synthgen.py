"""Synthetic corpus and noise-pattern generator.

Sentences are built from relation-specific templates around fresh entity pairs,
so context tokens identify the relation (unless the ambiguity knob routes a
sentence through a shared template pool) and each entity pair belongs to exactly
one relation.  Noisy sentences are synthesized by replacing the entity mentions
of a donor sentence from another relation, keeping its context verbatim; a
sentence is valid (z=1) iff its context donor has the bag's relation.

Noise patterns are specified by an exact noise ratio NR (noisy sentences over
all sentences) and disturbing ratio DR (bags that are all-noisy or all-valid
over all bags).  Balancing both requires the all-noisy share of disturbing bags
to equal NR, so realizable bag counts are constrained; plan_pattern checks this
up front.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm

from .corpus import (
    ORIGIN_ORIGINAL,
    ORIGIN_SYNTH_NOISY,
    ORIGIN_SYNTH_VALID,
    Bag,
    CorpusError,
    Dataset,
    Entity,
    Relation,
    Sentence,
    Vocab,
)
from .kgembed import KnowledgeGraph

# bag size per supported noise ratio: round(NR * size) must be an integer count
_BAG_SIZES = {
    Fraction(1, 3): 3,
    Fraction(1, 2): 2,
    Fraction(2, 3): 3,
}
_DR_VALUES = (Fraction(0), Fraction(1, 2), Fraction(1))


class GenerationError(ValueError):
    """Unrealizable plan or invalid generator arguments."""


def as_fraction(x) -> Fraction:
    """Coerce int/str/Fraction/float to an exact Fraction; floats snap to small denominators."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(x).limit_denominator(64)
    raise GenerationError(f"cannot interpret {x!r} as a fraction")


@dataclass(frozen=True)
class SeedSentence:
    tokens: tuple[int, ...]
    head_span: tuple[int, int]
    tail_span: tuple[int, int]
    relation: int
    head_entity: int
    tail_entity: int

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "head_span", tuple(self.head_span))
        object.__setattr__(self, "tail_span", tuple(self.tail_span))

    @property
    def mention_free_tokens(self) -> tuple[int, ...]:
        spans = sorted([self.head_span, self.tail_span])
        return (
            self.tokens[: spans[0][0]]
            + self.tokens[spans[0][1]: spans[1][0]]
            + self.tokens[spans[1][1]:]
        )


@dataclass(frozen=True)
class SeedCorpus:
    """Human-written stand-in corpus: one sentence per unique entity pair."""

    sentences: tuple[SeedSentence, ...]
    entities: tuple[Entity, ...]
    entity_pair_map: dict[tuple[int, int], int]
    relations: tuple[Relation, ...]
    vocab: Vocab

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        object.__setattr__(self, "entities", tuple(self.entities))

    def entity(self, entity_id: int) -> Entity:
        return self.entities[entity_id]

    def by_relation(self) -> dict[int, list[int]]:
        idx: dict[int, list[int]] = {r.id: [] for r in self.relations}
        for i, s in enumerate(self.sentences):
            idx[s.relation].append(i)
        return idx


@dataclass(frozen=True)
class SplitSpec:
    """Per-relation seed split fractions; defaults mirror a 500/100/100 layout."""

    train: Fraction = Fraction(5, 7)
    test: Fraction = Fraction(1, 7)
    dev: Fraction = Fraction(1, 7)
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("train", "test", "dev"):
            object.__setattr__(self, name, as_fraction(getattr(self, name)))
            if getattr(self, name) <= 0:
                raise GenerationError(f"{name} fraction must be positive")
        if self.train + self.test + self.dev > 1:
            raise GenerationError("split fractions must sum to at most 1")


@dataclass(frozen=True)
class NoisePatternPlan:
    target_nr: Fraction
    target_dr: Fraction
    n_bags: int
    bag_size: int
    n_disturbing: int
    n_all_noisy: int
    n_all_valid: int
    noisy_per_regular: int  # noisy sentences in each non-disturbing bag


def plan_pattern(target_nr, target_dr, n_bags: int) -> NoisePatternPlan:
    """Resolve exact bag composition counts for a noise pattern, or fail loudly.

    The all-noisy share of disturbing bags must equal NR to keep the overall
    sentence-level ratio at NR, so n_bags*DR and n_bags*DR*NR must be integers.
    """
    nr, dr = as_fraction(target_nr), as_fraction(target_dr)
    if nr not in _BAG_SIZES:
        raise GenerationError(f"unsupported noise ratio {nr}; expected one of {sorted(_BAG_SIZES)}")
    if dr not in _DR_VALUES:
        raise GenerationError(f"unsupported disturbing ratio {dr}; expected one of {list(_DR_VALUES)}")
    if n_bags <= 0:
        raise GenerationError("n_bags must be positive")
    bag_size = _BAG_SIZES[nr]
    n_disturbing = dr * n_bags
    n_all_noisy = nr * n_disturbing
    if n_disturbing.denominator != 1 or n_all_noisy.denominator != 1:
        step = lcm(dr.denominator, (dr * nr).denominator)
        nearest = max(step, round(n_bags / step) * step)
        raise GenerationError(
            f"pattern NR={nr} DR={dr} is not realizable with {n_bags} bags; "
            f"nearest feasible n_bags is {nearest}"
        )
    n_disturbing, n_all_noisy = int(n_disturbing), int(n_all_noisy)
    return NoisePatternPlan(
        target_nr=nr,
        target_dr=dr,
        n_bags=n_bags,
        bag_size=bag_size,
        n_disturbing=n_disturbing,
        n_all_noisy=n_all_noisy,
        n_all_valid=n_disturbing - n_all_noisy,
        noisy_per_regular=int(nr * bag_size),
    )


@dataclass
class _VocabBuilder:
    tokens: list[str] = field(default_factory=list)

    def add(self, name: str) -> int:
        self.tokens.append(name)
        return len(self.tokens) - 1


@dataclass(frozen=True)
class _Template:
    pre: tuple[int, ...]
    mid: tuple[int, ...]
    post: tuple[int, ...]


def _make_template(vb: _VocabBuilder, prefix: str, rng: random.Random) -> _Template:
    pre = tuple(vb.add(f"{prefix}a{i}") for i in range(rng.randint(1, 2)))
    mid = tuple(vb.add(f"{prefix}b{i}") for i in range(rng.randint(1, 2)))
    post = tuple(vb.add(f"{prefix}c{i}") for i in range(rng.randint(0, 1)))
    return _Template(pre, mid, post)


def generate_seed_corpus(
    k_relations: int,
    pairs_per_relation: int,
    template_count: int,
    ambiguity: float = 0.0,
    rng_seed: int = 0,
) -> SeedCorpus:
    """One sentence per fresh entity pair; pairs_per_relation sentences per relation."""
    if k_relations < 2:
        raise GenerationError("need at least 2 relations")
    if pairs_per_relation < 3:
        raise GenerationError("need at least 3 pairs per relation")
    if template_count < 1:
        raise GenerationError("need at least 1 template per relation")
    if not (0.0 <= ambiguity < 1.0):
        raise GenerationError(f"ambiguity must be in [0, 1), got {ambiguity}")

    rng = random.Random(rng_seed)
    vb = _VocabBuilder()
    shared = [_make_template(vb, f"sh{j}", rng) for j in range(template_count)]
    by_rel = {
        r: [_make_template(vb, f"r{r}t{j}", rng) for j in range(template_count)]
        for r in range(k_relations)
    }
    # argument-type tokens shared by every head (resp. tail) of a relation:
    # they are what lets mention features predict the relation for unseen pairs.
    # Two adjacent relations share one type pool, so mentions narrow the label
    # to a pair of candidates without fully determining it (context breaks the
    # tie); without that collision every model saturates and noise effects on
    # the context pathway become invisible.
    n_pools = (k_relations + 1) // 2
    head_pool = [vb.add(f"th{p}") for p in range(n_pools)]
    tail_pool = [vb.add(f"tt{p}") for p in range(n_pools)]
    head_type = {r: head_pool[r // 2] for r in range(k_relations)}
    tail_type = {r: tail_pool[r // 2] for r in range(k_relations)}

    entities: list[Entity] = []

    def new_entity(type_token: int) -> Entity:
        eid = len(entities)
        surface = [type_token, vb.add(f"e{eid}")]
        if rng.random() < 0.3:
            surface.append(vb.add(f"e{eid}b"))
        ent = Entity(eid, tuple(surface))
        entities.append(ent)
        return ent

    sentences: list[SeedSentence] = []
    pair_map: dict[tuple[int, int], int] = {}
    for r in range(k_relations):
        for _ in range(pairs_per_relation):
            head, tail = new_entity(head_type[r]), new_entity(tail_type[r])
            pool = shared if rng.random() < ambiguity else by_rel[r]
            tmpl = pool[rng.randrange(len(pool))]
            # one filler token per sentence keeps every context sequence unique,
            # which is what makes cross-split context disjointness hold
            filler = vb.add(f"f{len(sentences)}")
            head_first = rng.random() < 0.5
            first, second = (head, tail) if head_first else (tail, head)
            tokens: list[int] = list(tmpl.pre)
            first_span = (len(tokens), len(tokens) + len(first.surface_tokens))
            tokens += first.surface_tokens
            tokens += tmpl.mid
            second_span = (len(tokens), len(tokens) + len(second.surface_tokens))
            tokens += second.surface_tokens
            tokens += tmpl.post
            tokens.append(filler)
            head_span, tail_span = (
                (first_span, second_span) if head_first else (second_span, first_span)
            )
            sentences.append(
                SeedSentence(tuple(tokens), head_span, tail_span, r, head.id, tail.id)
            )
            pair_map[(head.id, tail.id)] = r

    relations = tuple(Relation(r, f"R{r}") for r in range(k_relations))
    vocab = Vocab(len(vb.tokens), tuple(vb.tokens))
    return SeedCorpus(tuple(sentences), tuple(entities), pair_map, relations, vocab)


def _apportion(n: int, fractions: list[Fraction]) -> list[int]:
    """Largest-remainder apportionment of n items into len(fractions) parts."""
    quotas = [f * n for f in fractions]
    counts = [int(q) for q in quotas]
    target = int(sum(quotas))
    remainders = sorted(
        range(len(quotas)), key=lambda i: (quotas[i] - counts[i], -i), reverse=True
    )
    for i in remainders[: target - sum(counts)]:
        counts[i] += 1
    return counts


def split_seed(seed: SeedCorpus, spec: SplitSpec = SplitSpec()) -> dict[str, SeedCorpus]:
    """Partition seed sentences per relation into train/test/dev sub-corpora."""
    rng = random.Random(spec.rng_seed)
    parts: dict[str, list[int]] = {"train": [], "test": [], "dev": []}
    for r, indices in sorted(seed.by_relation().items()):
        order = indices[:]
        rng.shuffle(order)
        n_train, n_test, n_dev = _apportion(len(order), [spec.train, spec.test, spec.dev])
        if min(n_train, n_test, n_dev) < 1:
            raise GenerationError(
                f"relation {r} has too few seed sentences ({len(order)}) for the split"
            )
        parts["train"] += order[:n_train]
        parts["test"] += order[n_train : n_train + n_test]
        parts["dev"] += order[n_train + n_test : n_train + n_test + n_dev]

    out = {}
    for tag, indices in parts.items():
        indices.sort()
        sents = tuple(seed.sentences[i] for i in indices)
        pm = {(s.head_entity, s.tail_entity): s.relation for s in sents}
        out[tag] = SeedCorpus(sents, seed.entities, pm, seed.relations, seed.vocab)
    return out


def synthesize_sentence(
    source: SeedSentence,
    target_pair: tuple[Entity, Entity],
    bag_relation: int,
    source_id: int | None = None,
) -> Sentence:
    """Swap the donor's mentions for the target pair, keeping the context verbatim."""
    head, tail = target_pair
    if not head.surface_tokens or not tail.surface_tokens:
        raise GenerationError("target entity has an empty surface")
    spans = sorted(
        [(source.head_span, head.surface_tokens), (source.tail_span, tail.surface_tokens)]
    )
    (s1, e1), surf1 = spans[0]
    (s2, e2), surf2 = spans[1]
    tokens = (
        source.tokens[:s1]
        + surf1
        + source.tokens[e1:s2]
        + surf2
        + source.tokens[e2:]
    )
    first_span = (s1, s1 + len(surf1))
    shift = len(surf1) - (e1 - s1)
    second_span = (s2 + shift, s2 + shift + len(surf2))
    head_first = source.head_span[0] < source.tail_span[0]
    head_span, tail_span = (
        (first_span, second_span) if head_first else (second_span, first_span)
    )
    z = 1 if source.relation == bag_relation else 0
    return Sentence(
        tokens=tokens,
        head_span=head_span,
        tail_span=tail_span,
        relation=bag_relation,
        z=z,
        origin=ORIGIN_SYNTH_VALID if z == 1 else ORIGIN_SYNTH_NOISY,
        source_id=source_id,
    )


def _original_sentence(seed: SeedCorpus, index: int) -> Sentence:
    s = seed.sentences[index]
    return Sentence(
        tokens=s.tokens,
        head_span=s.head_span,
        tail_span=s.tail_span,
        relation=s.relation,
        z=1,
        origin=ORIGIN_ORIGINAL,
        source_id=None,
    )


def build_training_set(seed: SeedCorpus, plan: NoisePatternPlan, rng_seed: int = 0) -> Dataset:
    """One bag per seed tuple, composed to hit the plan's NR and DR exactly.

    Non-disturbing bags keep the original sentence and top up with synthesized
    valid/noisy sentences; all-noisy disturbing bags drop the original entirely.
    Donor sampling is without replacement within a bag, so no bag holds duplicate
    sentences.
    """
    n = len(seed.sentences)
    if plan.n_bags != n:
        raise GenerationError(
            f"plan expects {plan.n_bags} bags but the seed partition has {n} tuples"
        )
    rng = random.Random(rng_seed)
    by_rel = seed.by_relation()
    all_idx = list(range(n))
    other_rel = {
        r: [i for i in all_idx if seed.sentences[i].relation != r] for r in by_rel
    }

    order = all_idx[:]
    rng.shuffle(order)
    all_noisy = set(order[: plan.n_all_noisy])
    all_valid = set(order[plan.n_all_noisy : plan.n_disturbing])

    bags = []
    for i in all_idx:
        s = seed.sentences[i]
        pair = (seed.entity(s.head_entity), seed.entity(s.tail_entity))
        y = s.relation
        if i in all_noisy:
            keep_original, n_synth_valid, n_noisy = False, 0, plan.bag_size
        elif i in all_valid:
            keep_original, n_synth_valid, n_noisy = True, plan.bag_size - 1, 0
        else:
            n_noisy = plan.noisy_per_regular
            keep_original, n_synth_valid = True, plan.bag_size - 1 - n_noisy
        valid_pool = [j for j in by_rel[y] if j != i]
        if n_synth_valid > len(valid_pool):
            raise GenerationError(
                f"relation {y} has too few seed sentences to synthesize "
                f"{n_synth_valid} valid sentences"
            )
        sentences = []
        if keep_original:
            sentences.append(_original_sentence(seed, i))
        for j in rng.sample(valid_pool, n_synth_valid):
            sentences.append(synthesize_sentence(seed.sentences[j], pair, y, source_id=j))
        for j in rng.sample(other_rel[y], n_noisy):
            sentences.append(synthesize_sentence(seed.sentences[j], pair, y, source_id=j))
        bags.append(Bag(i, s.head_entity, s.tail_entity, y, tuple(sentences)))

    return Dataset(tuple(bags), seed.vocab, seed.relations, "train", generator_seed=rng_seed)


def build_eval_set(seed: SeedCorpus, rng_seed: int = 0, split_tag: str = "test") -> Dataset:
    """Evaluation sets pair each original with one synthesized noisy sentence (NR=1/2, DR=0)."""
    rng = random.Random(rng_seed)
    by_rel = seed.by_relation()
    n = len(seed.sentences)
    other_rel = {
        r: [i for i in range(n) if seed.sentences[i].relation != r] for r in by_rel
    }
    bags = []
    for i, s in enumerate(seed.sentences):
        pair = (seed.entity(s.head_entity), seed.entity(s.tail_entity))
        j = rng.choice(other_rel[s.relation])
        noisy = synthesize_sentence(seed.sentences[j], pair, s.relation, source_id=j)
        bags.append(
            Bag(i, s.head_entity, s.tail_entity, s.relation,
                (_original_sentence(seed, i), noisy))
        )
    return Dataset(tuple(bags), seed.vocab, seed.relations, split_tag, generator_seed=rng_seed)


def subsample_bags(dataset: Dataset, fraction: float, rng_seed: int = 0) -> Dataset:
    """Uniform bag-level sample; nested across fractions for a fixed seed.

    Selection takes a prefix of one seeded permutation, so the 2% sample is a
    subset of the 10% sample and fraction 1.0 is the identity.
    """
    n = len(dataset.bags)
    count = int(round(fraction * n))
    if not (0 < count <= n):
        raise GenerationError(f"fraction {fraction} selects {count} of {n} bags")
    rng = random.Random(rng_seed)
    perm = list(range(n))
    rng.shuffle(perm)
    chosen = set(perm[:count])
    bags = tuple(b for i, b in enumerate(dataset.bags) if i in chosen)
    return Dataset(bags, dataset.vocab, dataset.relations, dataset.split_tag,
                   dataset.generator_seed)


def build_kg(seed: SeedCorpus, distractor_ratio: float = 0.0, rng_seed: int = 0) -> KnowledgeGraph:
    """One triple per entity pair labeled with its relation, plus random distractors."""
    if distractor_ratio < 0:
        raise GenerationError("distractor_ratio must be >= 0")
    base = [(h, r, t) for (h, t), r in seed.entity_pair_map.items()]
    seen = set(base)
    rng = random.Random(rng_seed)
    ent_ids = [e.id for e in seed.entities]
    rel_ids = [r.id for r in seed.relations]
    n_distract = round(distractor_ratio * len(base))
    distractors: list[tuple[int, int, int]] = []
    attempts = 0
    while len(distractors) < n_distract:
        attempts += 1
        if attempts > 100 * max(1, n_distract):
            raise GenerationError("could not place distractor triples without duplicates")
        h, t = rng.choice(ent_ids), rng.choice(ent_ids)
        r = rng.choice(rel_ids)
        if h == t or (h, r, t) in seen:
            continue
        seen.add((h, r, t))
        distractors.append((h, r, t))
    return KnowledgeGraph(tuple(ent_ids), tuple(rel_ids), tuple(base + distractors))


def randomize_kg(kg: KnowledgeGraph, rng_seed: int = 0) -> KnowledgeGraph:
    """Replace every triple's relation with a different random one, keeping scale."""
    if len(kg.relations) < 2:
        raise GenerationError("randomize needs at least 2 KG relations")
    rng = random.Random(rng_seed)
    used: set[tuple[int, int, int]] = set()
    out = []
    for h, r, t in kg.triples:
        options = [c for c in kg.relations if c != r and (h, c, t) not in used]
        if not options:
            raise GenerationError(f"no free relation left to corrupt triple ({h},{r},{t})")
        r_new = rng.choice(options)
        used.add((h, r_new, t))
        out.append((h, r_new, t))
    return KnowledgeGraph(kg.entities, kg.relations, tuple(out))
