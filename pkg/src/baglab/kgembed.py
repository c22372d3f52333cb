"""Translation-based knowledge-graph embeddings used as frozen side features.

Triples (h, r, t) are scored by -||e_h + e_r - e_t||_p; training minimizes a
margin ranking loss against filtered uniformly-corrupted negatives.  Entity
vectors are renormalized to unit length after every epoch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

Triple = tuple[int, int, int]


class KGError(ValueError):
    """Invalid knowledge graph or embedding lookup."""


class DivergenceError(RuntimeError):
    """Training produced non-finite values; message records the epoch."""


@dataclass(frozen=True)
class KnowledgeGraph:
    entities: tuple[int, ...]
    relations: tuple[int, ...]
    triples: tuple[Triple, ...]

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "relations", tuple(self.relations))
        object.__setattr__(self, "triples", tuple(tuple(t) for t in self.triples))
        ents, rels = set(self.entities), set(self.relations)
        if len(ents) != len(self.entities):
            raise KGError("duplicate entity ids")
        if len(rels) != len(self.relations):
            raise KGError("duplicate relation ids")
        seen = set()
        for h, r, t in self.triples:
            if h not in ents or t not in ents:
                raise KGError(f"triple ({h},{r},{t}) references unknown entity")
            if r not in rels:
                raise KGError(f"triple ({h},{r},{t}) references unknown relation")
            if (h, r, t) in seen:
                raise KGError(f"duplicate triple ({h},{r},{t})")
            seen.add((h, r, t))


@dataclass(frozen=True)
class TransEConfig:
    dim: int = 32
    margin: float = 1.0
    learning_rate: float = 0.05
    epochs: int = 200
    negatives: int = 1
    norm: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if self.dim <= 0 or self.epochs < 0 or self.negatives < 1:
            raise KGError("invalid TransE configuration")
        if self.norm not in (1, 2):
            raise KGError(f"norm order must be 1 or 2, got {self.norm}")


@dataclass
class EmbeddingTable:
    """Trained vectors plus the id-order manifest; treated as read-only."""

    entity_ids: tuple[int, ...]
    relation_ids: tuple[int, ...]
    entity_vecs: np.ndarray
    relation_vecs: np.ndarray
    norm: int = 2

    def __post_init__(self):
        self.entity_ids = tuple(self.entity_ids)
        self.relation_ids = tuple(self.relation_ids)
        if self.entity_vecs.shape[0] != len(self.entity_ids):
            raise KGError("entity manifest does not match vector count")
        if self.relation_vecs.shape[0] != len(self.relation_ids):
            raise KGError("relation manifest does not match vector count")
        if self.entity_vecs.shape[1] != self.relation_vecs.shape[1]:
            raise KGError("entity and relation dims differ")
        self._ent_row = {e: i for i, e in enumerate(self.entity_ids)}
        self._rel_row = {r: i for i, r in enumerate(self.relation_ids)}

    @property
    def dim(self) -> int:
        return self.entity_vecs.shape[1]

    def entity_vec(self, entity_id: int) -> np.ndarray:
        try:
            return self.entity_vecs[self._ent_row[entity_id]]
        except KeyError:
            raise KGError(f"unknown entity id {entity_id}") from None

    def relation_vec(self, relation_id: int) -> np.ndarray:
        try:
            return self.relation_vecs[self._rel_row[relation_id]]
        except KeyError:
            raise KGError(f"unknown relation id {relation_id}") from None


def _freeze(table: EmbeddingTable) -> EmbeddingTable:
    table.entity_vecs.setflags(write=False)
    table.relation_vecs.setflags(write=False)
    return table


def init_embeddings(kg: KnowledgeGraph, cfg: TransEConfig) -> EmbeddingTable:
    """Seeded uniform init with all rows renormalized to unit length."""
    rng = np.random.default_rng(cfg.rng_seed)
    bound = 6.0 / np.sqrt(cfg.dim)
    ent = rng.uniform(-bound, bound, size=(len(kg.entities), cfg.dim))
    rel = rng.uniform(-bound, bound, size=(len(kg.relations), cfg.dim))
    ent /= np.linalg.norm(ent, axis=1, keepdims=True)
    rel /= np.linalg.norm(rel, axis=1, keepdims=True)
    return EmbeddingTable(kg.entities, kg.relations, ent, rel, cfg.norm)


def transe_score(triple: Triple, emb: EmbeddingTable) -> float:
    """Higher is more plausible; 0 is the optimum (h + r lands exactly on t)."""
    h, r, t = triple
    diff = emb.entity_vec(h) + emb.relation_vec(r) - emb.entity_vec(t)
    return -float(np.linalg.norm(diff, ord=emb.norm))


def latent_relation(head: int, tail: int, emb: EmbeddingTable) -> np.ndarray:
    """Pair-specific relation feature e_h - e_t; the zero vector when head == tail."""
    return emb.entity_vec(head) - emb.entity_vec(tail)


def train_transe(kg: KnowledgeGraph, cfg: TransEConfig = TransEConfig()) -> EmbeddingTable:
    """Margin-ranking SGD; deterministic for a given seed; epochs=0 returns the init."""
    if not kg.triples:
        raise KGError("cannot train on a graph with no triples")
    table = init_embeddings(kg, cfg)
    ent, rel = table.entity_vecs, table.relation_vecs
    ent_row, rel_row = table._ent_row, table._rel_row
    known = set(kg.triples)
    n_ent = len(kg.entities)
    rng = np.random.default_rng(cfg.rng_seed + 1)

    def run_epoch():
        for idx in rng.permutation(len(kg.triples)):
            h, r, t = kg.triples[idx]
            hi, ri, ti = ent_row[h], rel_row[r], ent_row[t]
            for _ in range(cfg.negatives):
                corrupt_head = bool(rng.integers(2))
                # filtered sampling: never draw a corruption that is itself a true triple
                for _ in range(200):
                    cand = kg.entities[rng.integers(n_ent)]
                    neg = (cand, r, t) if corrupt_head else (h, r, cand)
                    if neg not in known:
                        break
                else:
                    continue
                ni = ent_row[cand]
                pos_diff = ent[hi] + rel[ri] - ent[ti]
                if corrupt_head:
                    neg_diff = ent[ni] + rel[ri] - ent[ti]
                else:
                    neg_diff = ent[hi] + rel[ri] - ent[ni]
                d_pos = np.linalg.norm(pos_diff, ord=cfg.norm)
                d_neg = np.linalg.norm(neg_diff, ord=cfg.norm)
                if cfg.margin + d_pos - d_neg <= 0.0:
                    continue
                if cfg.norm == 2:
                    u_pos = pos_diff / d_pos if d_pos > 0 else np.zeros_like(pos_diff)
                    u_neg = neg_diff / d_neg if d_neg > 0 else np.zeros_like(neg_diff)
                else:
                    u_pos, u_neg = np.sign(pos_diff), np.sign(neg_diff)
                lr = cfg.learning_rate
                ent[hi] -= lr * u_pos
                rel[ri] -= lr * u_pos
                ent[ti] += lr * u_pos
                if corrupt_head:
                    ent[ni] += lr * u_neg
                    ent[ti] -= lr * u_neg
                else:
                    ent[hi] += lr * u_neg
                    ent[ni] -= lr * u_neg
                rel[ri] += lr * u_neg

    for epoch in range(cfg.epochs):
        # overflow inside an update is exactly the divergence the per-epoch
        # finiteness check reports; don't let numpy warn about it first
        with np.errstate(over="ignore", invalid="ignore"):
            run_epoch()
            norms = np.linalg.norm(ent, axis=1, keepdims=True)
        if not np.all(np.isfinite(norms)) or np.any(norms == 0):
            raise DivergenceError(f"non-finite entity vectors at epoch {epoch}")
        ent /= norms
        if not np.all(np.isfinite(rel)):
            raise DivergenceError(f"non-finite relation vectors at epoch {epoch}")
    return _freeze(table)


def filtered_tail_ranks(
    kg_or_triples,
    emb: EmbeddingTable,
    known: set[Triple] | None = None,
) -> np.ndarray:
    """Rank of each true tail among all entities, filtering other known true tails.

    Rank 1 is best; candidates scoring strictly higher than the true tail count
    against it, ties do not.  `known` defaults to the ranked triples themselves.
    """
    if isinstance(kg_or_triples, KnowledgeGraph):
        triples = kg_or_triples.triples
    else:
        triples = tuple(kg_or_triples)
    if known is None:
        known = set(triples)
    ent_ids = np.array(emb.entity_ids)
    ranks = []
    for h, r, t in triples:
        trans = emb.entity_vec(h) + emb.relation_vec(r)
        scores = -np.linalg.norm(trans[None, :] - emb.entity_vecs, ord=emb.norm, axis=1)
        true_score = scores[emb._ent_row[t]]
        mask = np.array(
            [c == t or (h, r, int(c)) not in known for c in ent_ids], dtype=bool
        )
        ranks.append(1 + int(np.sum(scores[mask] > true_score)))
    return np.array(ranks)


def write_kg(kg: KnowledgeGraph, path: str | Path) -> None:
    """Triple file: a count header comment, then one `h r t` line per triple."""
    path = Path(path)
    lines = [f"# entities={len(kg.entities)} relations={len(kg.relations)}"]
    lines += [f"{h} {r} {t}" for h, r, t in kg.triples]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_kg(path: str | Path) -> KnowledgeGraph:
    path = Path(path)
    entities: set[int] = set()
    relations: set[int] = set()
    triples: list[Triple] = []
    n_ent = n_rel = None
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if line.startswith("#"):
            parts = dict(p.split("=") for p in line[1:].split())
            n_ent, n_rel = int(parts["entities"]), int(parts["relations"])
            continue
        try:
            h, r, t = (int(x) for x in line.split())
        except ValueError:
            raise KGError(f"{path}: line {i}: expected `h r t` integers") from None
        entities.update((h, t))
        relations.add(r)
        triples.append((h, r, t))
    # the header preserves dense id ranges even when some id has no triple left
    if n_ent is not None and len(entities) < n_ent:
        entities.update(range(n_ent))
    if n_rel is not None and len(relations) < n_rel:
        relations.update(range(n_rel))
    return KnowledgeGraph(tuple(sorted(entities)), tuple(sorted(relations)), tuple(triples))


def save_embeddings(emb: EmbeddingTable, path: str | Path) -> None:
    np.savez(
        path,
        entity_ids=np.array(emb.entity_ids, dtype=np.int64),
        relation_ids=np.array(emb.relation_ids, dtype=np.int64),
        entity_vecs=emb.entity_vecs,
        relation_vecs=emb.relation_vecs,
        meta=np.frombuffer(json.dumps({"norm": emb.norm}).encode(), dtype=np.uint8),
    )


def load_embeddings(path: str | Path) -> EmbeddingTable:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        return _freeze(
            EmbeddingTable(
                tuple(int(e) for e in data["entity_ids"]),
                tuple(int(r) for r in data["relation_ids"]),
                data["entity_vecs"].copy(),
                data["relation_vecs"].copy(),
                norm=meta["norm"],
            )
        )


class TransEEmbedder(BaseEstimator):
    """Estimator wrapper around train_transe; fit(kg) stores embeddings_."""

    def __init__(self, dim=32, margin=1.0, learning_rate=0.05, epochs=200,
                 negatives=1, norm=2, random_state=0):
        self.dim = dim
        self.margin = margin
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.negatives = negatives
        self.norm = norm
        self.random_state = random_state

    def _config(self) -> TransEConfig:
        return TransEConfig(
            dim=self.dim,
            margin=self.margin,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            negatives=self.negatives,
            norm=self.norm,
            rng_seed=self.random_state,
        )

    def fit(self, kg: KnowledgeGraph, y=None):
        self.embeddings_ = train_transe(kg, self._config())
        return self

    def score_triples(self, triples) -> np.ndarray:
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "embeddings_")
        return np.array([transe_score(t, self.embeddings_) for t in triples])
