"""Training loops: bag-level loss through the aggregator, or per-sentence loss.

Bag mode minimizes -log P(y|B) where the bag distribution comes from the
configured aggregator with the gold-label query; gradients flow through the
attention weights.  Sentence mode minimizes -log P(y|s) summed over every
sentence under its bag's label and never touches attention parameters.  The
fixed-alpha variant bypasses learned weights entirely, routing alpha to the
valid sentence and 1 - alpha to the noisy one of each size-2 bag.

All gradients are hand-derived; finite differences are the reference in tests.
Model selection tracks dev PR-AUC at a configurable cadence and keeps the
best-scoring epoch's parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import encoder as enc
from .aggregate import AggregatorKind, ClassifierParams, ModelParams, ce_augment, softmax
from .corpus import Dataset
from .evaluate import pr_auc, predict_records
from .kgembed import EmbeddingTable, latent_relation


class TrainError(ValueError):
    """Invalid training configuration or data."""


class DivergenceError(RuntimeError):
    """Loss became non-finite; message records the epoch."""


@dataclass(frozen=True)
class TrainConfig:
    aggregator: str = "att"
    use_ce: bool = False
    loss_mode: str = "bag"  # bag | sentence
    fixed_alpha: float | None = None
    embed_dim: int = 64
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 60
    batch_size: int = 16
    rng_seed: int = 0
    dev_every: int = 5

    def __post_init__(self):
        if self.loss_mode not in ("bag", "sentence"):
            raise TrainError(f"loss_mode must be bag or sentence, got {self.loss_mode!r}")
        if self.fixed_alpha is not None:
            if self.loss_mode != "bag":
                raise TrainError("fixed_alpha requires bag loss")
            if not (0.0 <= self.fixed_alpha <= 1.0):
                raise TrainError(f"fixed_alpha must be in [0, 1], got {self.fixed_alpha}")
        if self.epochs < 0 or self.batch_size < 1 or self.embed_dim < 1:
            raise TrainError("invalid training configuration")
        if self.dev_every < 1:
            raise TrainError("dev_every must be >= 1")

    @property
    def kind(self) -> AggregatorKind:
        return AggregatorKind(self.aggregator, self.use_ce)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    dev_auc: float | None


@dataclass
class ModelCheckpoint:
    params: ModelParams
    kind: AggregatorKind
    step: int
    seed: int
    history: tuple[EpochLog, ...] = ()


def _param_arrays(model: ModelParams) -> dict[str, np.ndarray]:
    out = {
        "tok": model.encoder.token_embeddings,
        "ctx": model.encoder.context_map,
        "weight": model.cls.weight,
        "bias": model.cls.bias,
    }
    if model.cls.att_map is not None:
        out["att_map"] = model.cls.att_map
        out["att_bias"] = model.cls.att_bias
    if model.cls.gate_weight is not None:
        out["gate_weight"] = model.cls.gate_weight
        out["gate_bias"] = model.cls.gate_bias
    return out


class _Adam:
    """Adaptive moment estimation over a named dict of arrays."""

    def __init__(self, arrays: dict[str, np.ndarray], cfg: TrainConfig):
        self.arrays = arrays
        self.lr = cfg.learning_rate
        self.b1, self.b2, self.eps = cfg.beta1, cfg.beta2, cfg.eps
        self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        correct1 = 1.0 - self.b1 ** self.t
        correct2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m = self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            v = self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            self.arrays[k] -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)


@dataclass
class _PreparedBag:
    indexed: list[enc.IndexedSentence]
    relation: int
    z: tuple[int | None, ...]
    ce_feature: np.ndarray | None      # e_h - e_t appended under use_ce
    ka_query: np.ndarray | None        # e_h - e_t attention query for ka


def _prepare(dataset: Dataset, model: ModelParams, kind: AggregatorKind) -> list[_PreparedBag]:
    bags = []
    for bag in dataset.bags:
        feature = query = None
        if kind.needs_embeddings:
            r_ht = latent_relation(bag.head, bag.tail, model.emb)
            feature = r_ht if kind.use_ce else None
            query = r_ht if kind.aggregator == "ka" else None
        bags.append(
            _PreparedBag(
                indexed=[enc.index_sentence(s, model.encoder) for s in bag.sentences],
                relation=bag.relation,
                z=tuple(s.z for s in bag.sentences),
                ce_feature=feature,
                ka_query=query,
            )
        )
    return bags


def _encode_bag(pb: _PreparedBag, model: ModelParams):
    reps = [enc.forward_indexed(ix, model.encoder) for ix in pb.indexed]
    xs = [r.s_prime for r in reps]
    if pb.ce_feature is not None:
        xs = [np.concatenate([x, pb.ce_feature]) for x in xs]
    return reps, np.stack(xs)


def _bag_weights(pb: _PreparedBag, model: ModelParams, kind: AggregatorKind,
                 xs: np.ndarray, fixed_alpha: float | None):
    """Training-time weights plus the cache the backward pass needs."""
    m = xs.shape[0]
    if fixed_alpha is not None:
        alpha = np.array([fixed_alpha if z == 1 else 1.0 - fixed_alpha for z in pb.z])
        return alpha, None
    if kind.aggregator == "mean" or (kind.aggregator == "att" and m == 1):
        return np.full(m, 1.0 / m), None
    if kind.aggregator == "att":
        omega = xs @ model.cls.weight[pb.relation]
        return softmax(omega), None
    if kind.aggregator == "ka":
        hidden = np.tanh(xs @ model.cls.att_map.T + model.cls.att_bias)
        return softmax(hidden @ pb.ka_query), hidden
    # gate: unnormalized sigmoid weights
    g = 1.0 / (1.0 + np.exp(-(xs @ model.cls.gate_weight + model.cls.gate_bias)))
    return g, None


def _bag_loss(pb: _PreparedBag, model: ModelParams, kind: AggregatorKind,
              fixed_alpha: float | None) -> float:
    _, xs = _encode_bag(pb, model)
    w, _ = _bag_weights(pb, model, kind, xs, fixed_alpha)
    logits = model.cls.weight @ (w @ xs) + model.cls.bias
    return float(np.logaddexp.reduce(logits) - logits[pb.relation])


def _sentence_loss(pb: _PreparedBag, model: ModelParams) -> float:
    _, xs = _encode_bag(pb, model)
    logits = xs @ model.cls.weight.T + model.cls.bias
    lse = np.logaddexp.reduce(logits, axis=1)
    return float(np.sum(lse - logits[:, pb.relation]))


def _bag_backward(pb: _PreparedBag, model: ModelParams, kind: AggregatorKind,
                  fixed_alpha: float | None, grads: dict[str, np.ndarray]) -> float:
    reps, xs = _encode_bag(pb, model)
    cls = model.cls
    y = pb.relation
    w, ka_hidden = _bag_weights(pb, model, kind, xs, fixed_alpha)

    pooled = w @ xs
    logits = cls.weight @ pooled + cls.bias
    loss = float(np.logaddexp.reduce(logits) - logits[y])
    d_logits = softmax(logits)
    d_logits[y] -= 1.0

    grads["weight"] += np.outer(d_logits, pooled)
    grads["bias"] += d_logits
    d_pooled = cls.weight.T @ d_logits
    d_xs = w[:, None] * d_pooled[None, :]

    # a singleton softmax is constant, so att/ka weight gradients vanish at m=1;
    # gate weights are per-sentence sigmoids and always carry gradient
    learned = fixed_alpha is None and xs.shape[0] > 1
    if learned and kind.aggregator == "att":
        d_alpha = xs @ d_pooled
        d_omega = w * (d_alpha - float(w @ d_alpha))
        grads["weight"][y] += d_omega @ xs
        d_xs += np.outer(d_omega, cls.weight[y])
    elif learned and kind.aggregator == "ka":
        d_alpha = xs @ d_pooled
        d_omega = w * (d_alpha - float(w @ d_alpha))
        d_hidden = np.outer(d_omega, pb.ka_query)
        d_pre = d_hidden * (1.0 - ka_hidden ** 2)
        grads["att_map"] += d_pre.T @ xs
        grads["att_bias"] += d_pre.sum(axis=0)
        d_xs += d_pre @ cls.att_map
    elif fixed_alpha is None and kind.aggregator == "gate":
        d_g = xs @ d_pooled
        d_a = d_g * w * (1.0 - w)
        grads["gate_weight"] += d_a @ xs
        grads["gate_bias"] += d_a.sum()
        d_xs += np.outer(d_a, cls.gate_weight)

    d_enc = d_xs[:, : model.encoder.rep_dim]  # the ce block is frozen
    for rep, up in zip(reps, d_enc):
        enc.accumulate_backward(rep, model.encoder, up, grads["tok"], grads["ctx"])
    return loss


def _sentence_backward(pb: _PreparedBag, model: ModelParams,
                       grads: dict[str, np.ndarray]) -> float:
    reps, xs = _encode_bag(pb, model)
    cls = model.cls
    y = pb.relation
    logits = xs @ cls.weight.T + cls.bias
    lse = np.logaddexp.reduce(logits, axis=1)
    loss = float(np.sum(lse - logits[:, y]))
    d_logits = np.exp(logits - lse[:, None])
    d_logits[:, y] -= 1.0
    grads["weight"] += d_logits.T @ xs
    grads["bias"] += d_logits.sum(axis=0)
    d_xs = d_logits @ cls.weight
    d_enc = d_xs[:, : model.encoder.rep_dim]
    for rep, up in zip(reps, d_enc):
        enc.accumulate_backward(rep, model.encoder, up, grads["tok"], grads["ctx"])
    return loss


def total_loss(model: ModelParams, cfg: TrainConfig, dataset: Dataset) -> float:
    """Objective value summed over the dataset; forward-only."""
    prepared = _prepare(dataset, model, cfg.kind)
    if cfg.loss_mode == "sentence":
        return sum(_sentence_loss(pb, model) for pb in prepared)
    return sum(_bag_loss(pb, model, cfg.kind, cfg.fixed_alpha) for pb in prepared)


def init_model(train: Dataset, cfg: TrainConfig, kg_emb: EmbeddingTable | None = None) -> ModelParams:
    kind = cfg.kind
    if kind.needs_embeddings and kg_emb is None:
        raise TrainError(f"{kind.slug()} training needs a KG embedding table")
    rng = np.random.default_rng(cfg.rng_seed)
    encoder_params = enc.EncoderParams.init(train.vocab.size, cfg.embed_dim, rng)
    rep_dim = encoder_params.rep_dim + (kg_emb.dim if kind.use_ce else 0)
    cls = ClassifierParams.init(
        n_relations=train.n_relations,
        rep_dim=rep_dim,
        kind=kind,
        rng=rng,
        kg_dim=kg_emb.dim if kg_emb is not None else None,
    )
    return ModelParams(encoder=encoder_params, cls=cls, emb=kg_emb)


def _dev_auc(model: ModelParams, kind: AggregatorKind, dev: Dataset) -> float:
    return pr_auc(predict_records(model, kind, dev)).auc


def _clone_arrays(model: ModelParams) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in _param_arrays(model).items()}


def _restore_arrays(model: ModelParams, snapshot: dict[str, np.ndarray]) -> None:
    for k, v in _param_arrays(model).items():
        v[...] = snapshot[k]


def train_model(
    train: Dataset,
    dev: Dataset | None,
    cfg: TrainConfig,
    kg_emb: EmbeddingTable | None = None,
) -> ModelCheckpoint:
    """Train from a seeded init; returns the best-on-dev parameters (final if no dev)."""
    kind = cfg.kind
    model = init_model(train, cfg, kg_emb)
    prepared = _prepare(train, model, kind)
    if cfg.fixed_alpha is not None:
        for bag, pb in zip(train.bags, prepared):
            if len(pb.z) != 2 or set(pb.z) != {0, 1}:
                raise TrainError(
                    f"fixed_alpha needs bags with exactly one valid and one noisy "
                    f"sentence; bag {bag.id} has z={pb.z}"
                )

    arrays = _param_arrays(model)
    opt = _Adam(arrays, cfg)
    history: list[EpochLog] = [EpochLog(0, total_loss(model, cfg, train), None)]
    best: tuple[float, dict[str, np.ndarray], int] | None = None

    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.rng_seed, epoch]).permutation(len(prepared))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grads = {k: np.zeros_like(v) for k, v in arrays.items()}
            for i in batch:
                pb = prepared[i]
                if cfg.loss_mode == "sentence":
                    epoch_loss += _sentence_backward(pb, model, grads)
                else:
                    epoch_loss += _bag_backward(pb, model, kind, cfg.fixed_alpha, grads)
            for k in grads:
                grads[k] /= len(batch)
            opt.step(grads)
        if not np.isfinite(epoch_loss):
            raise DivergenceError(f"non-finite loss {epoch_loss} at epoch {epoch}")
        row = EpochLog(epoch, epoch_loss, None)
        if dev is not None and (epoch % cfg.dev_every == 0 or epoch == cfg.epochs):
            row.dev_auc = _dev_auc(model, kind, dev)
            if best is None or row.dev_auc > best[0]:
                best = (row.dev_auc, _clone_arrays(model), opt.t)
        history.append(row)

    step = opt.t
    if best is not None:
        _restore_arrays(model, best[1])
        step = best[2]
    return ModelCheckpoint(params=model, kind=kind, step=step, seed=cfg.rng_seed,
                           history=tuple(history))


def gradient_errors(
    dataset: Dataset,
    cfg: TrainConfig,
    kg_emb: EmbeddingTable | None = None,
    epsilon: float = 1e-4,
    coords_per_array: int = 4,
    rng_seed: int = 0,
) -> float:
    """Worst relative error of analytic vs central-FD gradients of the objective.

    Samples coords_per_array random coordinates per parameter array plus the
    largest-gradient coordinate, so the hot path is always among the checked set.
    """
    model = init_model(dataset, cfg, kg_emb)
    arrays = _param_arrays(model)
    prepared = _prepare(dataset, model, cfg.kind)
    grads = {k: np.zeros_like(v) for k, v in arrays.items()}
    for pb in prepared:
        if cfg.loss_mode == "sentence":
            _sentence_backward(pb, model, grads)
        else:
            _bag_backward(pb, model, cfg.kind, cfg.fixed_alpha, grads)

    rng = np.random.default_rng(rng_seed)
    worst = 0.0
    for name, arr in arrays.items():
        flat = arr.reshape(-1)
        g_flat = grads[name].reshape(-1)
        picks = {int(i) for i in rng.choice(flat.size, size=min(coords_per_array, flat.size),
                                            replace=False)}
        picks.add(int(np.abs(g_flat).argmax()))
        for idx in sorted(picks):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            up = total_loss(model, cfg, dataset)
            flat[idx] = orig - epsilon
            down = total_loss(model, cfg, dataset)
            flat[idx] = orig
            fd = (up - down) / (2.0 * epsilon)
            worst = max(worst, enc.rel_error(float(g_flat[idx]), fd))
    return worst


def fixed_weight_sweep(
    train: Dataset,
    alphas,
    cfg: TrainConfig,
    dev: Dataset | None = None,
    kg_emb: EmbeddingTable | None = None,
) -> dict[float, ModelCheckpoint]:
    """Train one model per fixed weight; every other knob is shared."""
    out: dict[float, ModelCheckpoint] = {}
    for alpha in alphas:
        run_cfg = replace(cfg, fixed_alpha=float(alpha), loss_mode="bag")
        out[float(alpha)] = train_model(train, dev, run_cfg, kg_emb)
    return out


def save_checkpoint(ckpt: ModelCheckpoint, path: str | Path) -> None:
    model = ckpt.params
    arrays = {f"param_{k}": v for k, v in _param_arrays(model).items()}
    if model.emb is not None:
        arrays["emb_entity_ids"] = np.array(model.emb.entity_ids, dtype=np.int64)
        arrays["emb_relation_ids"] = np.array(model.emb.relation_ids, dtype=np.int64)
        arrays["emb_entity_vecs"] = model.emb.entity_vecs
        arrays["emb_relation_vecs"] = model.emb.relation_vecs
    arrays["hist_epoch"] = np.array([h.epoch for h in ckpt.history], dtype=np.int64)
    arrays["hist_loss"] = np.array([h.loss for h in ckpt.history])
    arrays["hist_dev"] = np.array(
        [np.nan if h.dev_auc is None else h.dev_auc for h in ckpt.history]
    )
    meta = {
        "aggregator": ckpt.kind.aggregator,
        "use_ce": ckpt.kind.use_ce,
        "n_vocab": model.encoder.n_vocab,
        "step": ckpt.step,
        "seed": ckpt.seed,
        "emb_norm": model.emb.norm if model.emb is not None else None,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        encoder_params = enc.EncoderParams(
            token_embeddings=data["param_tok"].copy(),
            context_map=data["param_ctx"].copy(),
            n_vocab=meta["n_vocab"],
        )
        cls = ClassifierParams(
            weight=data["param_weight"].copy(),
            bias=data["param_bias"].copy(),
            att_map=data["param_att_map"].copy() if "param_att_map" in data else None,
            att_bias=data["param_att_bias"].copy() if "param_att_bias" in data else None,
            gate_weight=data["param_gate_weight"].copy() if "param_gate_weight" in data else None,
            gate_bias=data["param_gate_bias"].copy() if "param_gate_bias" in data else None,
        )
        emb = None
        if "emb_entity_vecs" in data:
            emb = EmbeddingTable(
                tuple(int(e) for e in data["emb_entity_ids"]),
                tuple(int(r) for r in data["emb_relation_ids"]),
                data["emb_entity_vecs"].copy(),
                data["emb_relation_vecs"].copy(),
                norm=meta["emb_norm"],
            )
        history = tuple(
            EpochLog(int(e), float(l), None if np.isnan(d) else float(d))
            for e, l, d in zip(data["hist_epoch"], data["hist_loss"], data["hist_dev"])
        )
        return ModelCheckpoint(
            params=ModelParams(encoder=encoder_params, cls=cls, emb=emb),
            kind=AggregatorKind(meta["aggregator"], meta["use_ce"]),
            step=meta["step"],
            seed=meta["seed"],
            history=history,
        )
