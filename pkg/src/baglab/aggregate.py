"""Bag-level aggregation: selective attention, KG-query attention, gates, means.

Weight routes over a bag's sentence representations s'_i:

  att:  omega_i = v_k . s'_i with v_k the classifier row of the query relation
        (gold label when training, each candidate relation in turn at inference),
        alpha = softmax(omega).
  ka:   omega_i = (e_h - e_t) . tanh(W_s s'_i + b_s), alpha = softmax(omega);
        the query is relation-free, so inference needs no label.
  gate: g_i = sigmoid(w_g . s'_i + b_g), used unnormalized.
  mean: uniform 1/m.

Bag logits pool convex weights before the classifier; because the map is
affine, weighting per-sentence logits instead gives the same result, and both
code paths are exposed so that identity stays testable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Bag
from .encoder import EncoderParams, encode
from .kgembed import EmbeddingTable, latent_relation

AGGREGATORS = ("mean", "att", "ka", "gate")


class AggregateError(ValueError):
    """Invalid aggregation inputs or configuration."""


@dataclass(frozen=True)
class AggregatorKind:
    aggregator: str = "att"
    use_ce: bool = False  # concatenate e_h - e_t onto every sentence representation

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise AggregateError(f"unknown aggregator {self.aggregator!r}")

    @property
    def needs_embeddings(self) -> bool:
        return self.use_ce or self.aggregator == "ka"

    @property
    def has_attention(self) -> bool:
        """Whether per-sentence weights exist that attention accuracy can grade."""
        return self.aggregator in ("att", "ka", "gate")

    def slug(self) -> str:
        return self.aggregator + ("+ce" if self.use_ce else "")


@dataclass
class ClassifierParams:
    """Relation classifier plus the optional attention/gate parameter blocks."""

    weight: np.ndarray                 # (K, D): rows double as att query vectors
    bias: np.ndarray                   # (K,)
    att_map: np.ndarray | None = None  # (d_e, D) for ka
    att_bias: np.ndarray | None = None
    gate_weight: np.ndarray | None = None  # (D,)
    gate_bias: np.ndarray | None = None    # scalar, kept as shape () array

    @property
    def n_relations(self) -> int:
        return self.weight.shape[0]

    @property
    def rep_dim(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def init(
        cls,
        n_relations: int,
        rep_dim: int,
        kind: AggregatorKind,
        rng: np.random.Generator,
        kg_dim: int | None = None,
    ) -> "ClassifierParams":
        params = cls(
            weight=rng.normal(0.0, 0.05, size=(n_relations, rep_dim)),
            bias=np.zeros(n_relations),
        )
        if kind.aggregator == "ka":
            if kg_dim is None:
                raise AggregateError("ka aggregator needs the KG embedding dim")
            params.att_map = rng.normal(0.0, 1.0 / np.sqrt(rep_dim), size=(kg_dim, rep_dim))
            params.att_bias = np.zeros(kg_dim)
        if kind.aggregator == "gate":
            params.gate_weight = rng.normal(0.0, 0.05, size=rep_dim)
            params.gate_bias = np.zeros(())
        return params


@dataclass
class ModelParams:
    encoder: EncoderParams
    cls: ClassifierParams
    emb: EmbeddingTable | None = None


@dataclass
class BagScore:
    """Per-relation scores plus the attention trace used for attention accuracy.

    For att the stored probabilities are the diagonal of the per-query softmax
    matrix (relation k scored by its own query), so they need not sum to one;
    every row of per_query_probs is a normalized distribution.  For the other
    aggregators probs is itself the single normalized distribution.
    """

    probs: np.ndarray                      # (K,)
    weights: np.ndarray | None             # att: (K, m); ka/gate: (m,); mean: None
    per_query_probs: np.ndarray | None = None  # att only: (K, K)

    def gold_query_weights(self, relation: int) -> np.ndarray | None:
        if self.weights is None:
            return None
        return self.weights[relation] if self.weights.ndim == 2 else self.weights


def softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x)
    e = np.exp(shifted)
    return e / e.sum()


def ce_augment(s_prime: np.ndarray, head: int, tail: int, emb: EmbeddingTable) -> np.ndarray:
    """Append the pair's latent-relation feature to a sentence representation."""
    if emb is None:
        raise AggregateError("ce augmentation needs an embedding table")
    return np.concatenate([s_prime, latent_relation(head, tail, emb)])


def _stack(reps) -> np.ndarray:
    mat = np.asarray(reps, dtype=float)
    if mat.ndim != 2 or mat.shape[0] == 0:
        raise AggregateError("reps must be a non-empty list of equal-length vectors")
    if not np.isfinite(mat).all():
        raise AggregateError("sentence representations contain non-finite values")
    return mat


def att_weights(reps, query_relation: int, cls: ClassifierParams) -> np.ndarray:
    mat = _stack(reps)
    if not (0 <= query_relation < cls.n_relations):
        raise AggregateError(f"query relation {query_relation} out of range")
    return softmax(mat @ cls.weight[query_relation])


def ka_weights(reps, head: int, tail: int, emb: EmbeddingTable, cls: ClassifierParams) -> np.ndarray:
    if cls.att_map is None or cls.att_bias is None:
        raise AggregateError("classifier lacks ka attention parameters")
    mat = _stack(reps)
    query = latent_relation(head, tail, emb)
    hidden = np.tanh(mat @ cls.att_map.T + cls.att_bias)
    return softmax(hidden @ query)


def gate_weights(reps, cls: ClassifierParams) -> np.ndarray:
    if cls.gate_weight is None or cls.gate_bias is None:
        raise AggregateError("classifier lacks gate parameters")
    mat = _stack(reps)
    return 1.0 / (1.0 + np.exp(-(mat @ cls.gate_weight + cls.gate_bias)))


def sentence_logits(rep: np.ndarray, cls: ClassifierParams) -> np.ndarray:
    return cls.weight @ rep + cls.bias


def bag_logits(reps, weights: np.ndarray, cls: ClassifierParams, per_sentence: bool = False) -> np.ndarray:
    """Pool-then-classify by default; per_sentence weights the sentence logits instead.

    The two paths agree for convex weights because the bias is applied once
    either way; gate weights are not convex, so pooling is their canonical path.
    """
    mat = _stack(reps)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (mat.shape[0],):
        raise AggregateError("one weight per sentence required")
    if per_sentence:
        logits = mat @ cls.weight.T + cls.bias
        return weights @ logits
    pooled = weights @ mat
    return cls.weight @ pooled + cls.bias


def bag_representations(bag: Bag, model: ModelParams, kind: AggregatorKind) -> list[np.ndarray]:
    reps = [encode(s, model.encoder).s_prime for s in bag.sentences]
    if kind.use_ce:
        reps = [ce_augment(r, bag.head, bag.tail, model.emb) for r in reps]
    return reps


def score_bag(bag: Bag, model: ModelParams, kind: AggregatorKind) -> BagScore:
    """Inference-time scoring; att queries every candidate relation in turn."""
    if kind.needs_embeddings and model.emb is None:
        raise AggregateError(f"{kind.slug()} model needs an embedding table")
    reps = bag_representations(bag, model, kind)
    cls = model.cls
    K = cls.n_relations
    if kind.aggregator == "mean":
        per_sent = np.stack([softmax(sentence_logits(r, cls)) for r in reps])
        return BagScore(probs=per_sent.mean(axis=0), weights=None)
    if kind.aggregator == "att":
        weights = np.stack([att_weights(reps, k, cls) for k in range(K)])
        per_query = np.stack(
            [softmax(bag_logits(reps, weights[k], cls)) for k in range(K)]
        )
        return BagScore(
            probs=np.diag(per_query).copy(),
            weights=weights,
            per_query_probs=per_query,
        )
    if kind.aggregator == "ka":
        w = ka_weights(reps, bag.head, bag.tail, model.emb, cls)
    else:
        w = gate_weights(reps, cls)
    return BagScore(probs=softmax(bag_logits(reps, w, cls)), weights=w)
