"""Compact trainable sentence encoder with exact analytic gradients.

Four marker tokens are inserted around the head and tail mention spans.  The
representation concatenates the two mention means, each shifted by a nonlinear
projection of the context mean:

    m_h = mean of head mention token embeddings      (markers excluded)
    m_t = mean of tail mention token embeddings
    c   = mean of all non-mention token embeddings   (markers included)
    u   = tanh(U c)
    s'  = [m_h + u ; m_t + u]

Mean pooling makes the result invariant to context token order, so the forward
pass works on index multisets instead of materializing the marked sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Sentence

N_MARKERS = 4  # head-start, head-end, tail-start, tail-end


class EncoderError(ValueError):
    """Invalid encoder input or missing forward cache."""


@dataclass
class EncoderParams:
    """Token embedding table with marker rows reserved at the tail, plus the context map."""

    token_embeddings: np.ndarray  # (n_vocab + N_MARKERS, dim)
    context_map: np.ndarray       # (dim, dim)
    n_vocab: int

    def __post_init__(self):
        if self.token_embeddings.shape[0] != self.n_vocab + N_MARKERS:
            raise EncoderError(
                f"embedding table must have n_vocab + {N_MARKERS} rows, got "
                f"{self.token_embeddings.shape[0]} for n_vocab={self.n_vocab}"
            )
        if self.context_map.shape != (self.dim, self.dim):
            raise EncoderError("context map must be (dim, dim)")

    @property
    def dim(self) -> int:
        return self.token_embeddings.shape[1]

    @property
    def rep_dim(self) -> int:
        return 2 * self.dim

    @property
    def marker_ids(self) -> tuple[int, ...]:
        return tuple(range(self.n_vocab, self.n_vocab + N_MARKERS))

    @classmethod
    def init(cls, n_vocab: int, dim: int, rng: np.random.Generator | int = 0) -> "EncoderParams":
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        tok = rng.normal(0.0, 0.1, size=(n_vocab + N_MARKERS, dim))
        ctx = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, dim))
        return cls(tok, ctx, n_vocab)


@dataclass
class IndexedSentence:
    """Embedding-row index arrays for one sentence; the hot-path input."""

    head: np.ndarray
    tail: np.ndarray
    context: np.ndarray  # non-mention tokens plus the four markers


@dataclass
class SentenceRep:
    """Forward result plus the cache encode_backward needs."""

    s_prime: np.ndarray
    index: IndexedSentence | None = None
    context_mean: np.ndarray | None = None
    u: np.ndarray | None = None


@dataclass
class EncoderGrads:
    token_embeddings: np.ndarray
    context_map: np.ndarray


def index_sentence(sentence: Sentence, params: EncoderParams) -> IndexedSentence:
    hs, he = sentence.head_span
    ts, te = sentence.tail_span
    context = sentence.mention_free_tokens
    if not context:
        raise EncoderError("no context tokens (sentence is only mentions)")
    if max(sentence.tokens) >= params.n_vocab:
        raise EncoderError(
            f"token id {max(sentence.tokens)} outside vocab of size {params.n_vocab}"
        )
    return IndexedSentence(
        head=np.array(sentence.tokens[hs:he], dtype=np.intp),
        tail=np.array(sentence.tokens[ts:te], dtype=np.intp),
        context=np.array(context + params.marker_ids, dtype=np.intp),
    )


def forward_indexed(ix: IndexedSentence, params: EncoderParams) -> SentenceRep:
    emb = params.token_embeddings
    m_h = emb[ix.head].mean(axis=0)
    m_t = emb[ix.tail].mean(axis=0)
    c = emb[ix.context].mean(axis=0)
    u = np.tanh(params.context_map @ c)
    return SentenceRep(
        s_prime=np.concatenate([m_h + u, m_t + u]),
        index=ix,
        context_mean=c,
        u=u,
    )


def encode(sentence: Sentence, params: EncoderParams) -> SentenceRep:
    return forward_indexed(index_sentence(sentence, params), params)


def accumulate_backward(
    rep: SentenceRep,
    params: EncoderParams,
    upstream_grad: np.ndarray,
    grad_tokens: np.ndarray,
    grad_context_map: np.ndarray,
) -> None:
    """Add this sentence's parameter gradients into shared accumulators."""
    if rep.index is None or rep.u is None or rep.context_mean is None:
        raise EncoderError("missing forward cache; rep must come from encode()")
    d = params.dim
    g = np.asarray(upstream_grad, dtype=float)
    if g.shape != (2 * d,):
        raise EncoderError(f"upstream gradient must have shape ({2 * d},)")
    ix = rep.index
    g_head, g_tail = g[:d], g[d:]
    np.add.at(grad_tokens, ix.head, g_head / len(ix.head))
    np.add.at(grad_tokens, ix.tail, g_tail / len(ix.tail))
    d_pre = (g_head + g_tail) * (1.0 - rep.u ** 2)
    grad_context_map += np.outer(d_pre, rep.context_mean)
    d_c = params.context_map.T @ d_pre
    np.add.at(
        grad_tokens,
        ix.context,
        np.broadcast_to(d_c / len(ix.context), (len(ix.context), d)),
    )


def encode_backward(rep: SentenceRep, params: EncoderParams, upstream_grad: np.ndarray) -> EncoderGrads:
    """Exact gradients of upstream_grad . s_prime w.r.t. the encoder parameters."""
    grads = EncoderGrads(
        token_embeddings=np.zeros_like(params.token_embeddings),
        context_map=np.zeros_like(params.context_map),
    )
    accumulate_backward(rep, params, upstream_grad, grads.token_embeddings, grads.context_map)
    return grads


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def rel_error(a: float, b: float, guard: float = 1e-3) -> float:
    """|a-b| over max(|a|,|b|,guard); the guard keeps FD noise on near-zero
    coordinates from inflating the ratio."""
    return abs(a - b) / max(abs(a), abs(b), guard)


def grad_check(
    params: EncoderParams,
    sentence: Sentence,
    tolerance: float = 1e-4,
    rng_seed: int = 0,
    epsilon: float = 1e-4,
    n_coords: int = 60,
) -> GradCheckReport:
    """Central finite differences over a random parameter subset vs analytic gradients."""
    rng = np.random.default_rng(rng_seed)
    probe = rng.normal(size=params.rep_dim)

    def loss() -> float:
        return float(probe @ encode(sentence, params).s_prime)

    analytic = encode_backward(encode(sentence, params), params, probe)

    touched_rows = sorted(set(sentence.tokens) | set(params.marker_ids))
    coords: list[tuple[np.ndarray, np.ndarray, int, int]] = []
    for _ in range(n_coords):
        if rng.random() < 0.5:
            i = touched_rows[rng.integers(len(touched_rows))]
            j = int(rng.integers(params.dim))
            coords.append((params.token_embeddings, analytic.token_embeddings, i, j))
        else:
            i = int(rng.integers(params.dim))
            j = int(rng.integers(params.dim))
            coords.append((params.context_map, analytic.context_map, i, j))

    worst = 0.0
    for array, grad, i, j in coords:
        orig = array[i, j]
        array[i, j] = orig + epsilon
        up = loss()
        array[i, j] = orig - epsilon
        down = loss()
        array[i, j] = orig
        fd = (up - down) / (2.0 * epsilon)
        worst = max(worst, rel_error(float(grad[i, j]), fd))
    return GradCheckReport(max_rel_error=worst, n_checked=len(coords), tolerance=tolerance)
