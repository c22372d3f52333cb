"""Training loops: objective plumbing, gradient exactness, and checkpointing.

The load-bearing equivalences are exact, not approximate: a zero step size
must leave parameters bit-identical, and fixed weights (0.5, 0.5) on size-2
bags must reproduce the uniform-mean trajectory float-for-float because both
reduce to the same arithmetic.
"""

from fractions import Fraction

import numpy as np
import pytest

from baglab.aggregate import AggregatorKind, softmax
from baglab.corpus import Bag, Dataset, Relation, Sentence, Vocab
from baglab.encoder import encode
from baglab.kgembed import EmbeddingTable
from baglab.synthgen import (
    SplitSpec,
    build_eval_set,
    build_training_set,
    generate_seed_corpus,
    plan_pattern,
    split_seed,
)
from baglab.train import (
    DivergenceError,
    ModelCheckpoint,
    TrainConfig,
    TrainError,
    fixed_weight_sweep,
    gradient_errors,
    init_model,
    load_checkpoint,
    save_checkpoint,
    total_loss,
    train_model,
)

FAST = dict(embed_dim=8, learning_rate=0.02, epochs=3, batch_size=8, dev_every=2)


def sentence(tokens, relation, z):
    return Sentence(
        tokens=tuple(tokens), head_span=(0, 1), tail_span=(2, 3),
        relation=relation, z=z,
        origin="original" if z == 1 else "synth_noisy",
    )


def tiny_dataset(bag_specs, n_vocab=16, k=2):
    """bag_specs: per bag (relation, [(tokens, z), ...]); entity ids are synthetic."""
    bags = []
    for i, (rel, sents) in enumerate(bag_specs):
        bags.append(Bag(
            id=i, head=1000 + i, tail=2000 + i, relation=rel,
            sentences=tuple(sentence(toks, rel, z) for toks, z in sents),
        ))
    return Dataset(
        bags=tuple(bags),
        vocab=Vocab(n_vocab),
        relations=tuple(Relation(r, f"rel{r}") for r in range(k)),
        split_tag="train",
    )


def pair_emb(*datasets, dim=3, rng_seed=0):
    """Random embedding table covering every entity the datasets mention."""
    ids = sorted({b.head for d in datasets for b in d.bags}
                 | {b.tail for d in datasets for b in d.bags})
    rng = np.random.default_rng(rng_seed)
    return EmbeddingTable(
        entity_ids=tuple(ids),
        relation_ids=(0,),
        entity_vecs=rng.normal(size=(len(ids), dim)),
        relation_vecs=rng.normal(size=(1, dim)),
    )


@pytest.fixture(scope="module")
def seed_parts():
    corpus = generate_seed_corpus(4, 12, 3, ambiguity=0.0, rng_seed=7)
    return split_seed(corpus, SplitSpec(
        train=Fraction(1, 2), test=Fraction(1, 4), dev=Fraction(1, 4), rng_seed=3))


@pytest.fixture(scope="module")
def train_mixed(seed_parts):
    """NR=1/2, DR=0 training set: every bag is size 2 with z-multiset {1, 0}."""
    part = seed_parts["train"]
    plan = plan_pattern(Fraction(1, 2), Fraction(0), len(part.sentences))
    return build_training_set(part, plan, rng_seed=5)


@pytest.fixture(scope="module")
def dev_set(seed_parts):
    return build_eval_set(seed_parts["dev"], rng_seed=9, split_tag="dev")


class TestTrainConfig:
    def test_bad_loss_mode(self):
        with pytest.raises(TrainError, match="loss_mode"):
            TrainConfig(loss_mode="bags")

    def test_fixed_alpha_requires_bag_loss(self):
        with pytest.raises(TrainError, match="bag loss"):
            TrainConfig(loss_mode="sentence", fixed_alpha=0.5)

    @pytest.mark.parametrize("alpha", [-0.1, 1.5])
    def test_fixed_alpha_range(self, alpha):
        with pytest.raises(TrainError, match="fixed_alpha"):
            TrainConfig(fixed_alpha=alpha)

    def test_invalid_budgets(self):
        with pytest.raises(TrainError):
            TrainConfig(epochs=-1)
        with pytest.raises(TrainError):
            TrainConfig(batch_size=0)
        with pytest.raises(TrainError):
            TrainConfig(dev_every=0)

    def test_kind_mirrors_flags(self):
        cfg = TrainConfig(aggregator="ka", use_ce=False)
        assert cfg.kind == AggregatorKind("ka", False)


class TestZeroStepSize:
    def test_loss_unchanged_and_params_frozen(self, train_mixed):
        cfg = TrainConfig(aggregator="att", learning_rate=0.0, embed_dim=8,
                          epochs=1, batch_size=8, rng_seed=1)
        init = init_model(train_mixed, cfg)
        ckpt = train_model(train_mixed, None, cfg)
        # with a zero step every batch sees the initial parameters, so the
        # epoch loss equals the initial total loss exactly
        assert ckpt.history[1].loss == ckpt.history[0].loss
        assert ckpt.history[0].loss == total_loss(init, cfg, train_mixed)
        assert np.array_equal(ckpt.params.encoder.token_embeddings,
                              init.encoder.token_embeddings)
        assert np.array_equal(ckpt.params.cls.weight, init.cls.weight)


class TestFixedAlphaEqualsMean:
    def test_exact_trajectory_match(self, train_mixed):
        common = dict(embed_dim=8, learning_rate=0.02, epochs=3, batch_size=8, rng_seed=4)
        fixed = train_model(train_mixed, None,
                            TrainConfig(aggregator="att", fixed_alpha=0.5, **common))
        mean = train_model(train_mixed, None, TrainConfig(aggregator="mean", **common))
        assert [h.loss for h in fixed.history] == [h.loss for h in mean.history]
        assert np.array_equal(fixed.params.encoder.token_embeddings,
                              mean.params.encoder.token_embeddings)
        assert np.array_equal(fixed.params.cls.weight, mean.params.cls.weight)
        assert np.array_equal(fixed.params.cls.bias, mean.params.cls.bias)


class TestFixedAlphaRouting:
    def test_alpha_one_gives_noisy_sentences_zero_gradient(self):
        # noisy sentences use tokens 4..7, valid ones 0..3; at alpha = 1 the
        # noisy side receives zero weight, so its token rows must stay at init
        data = tiny_dataset([
            (0, [((0, 1, 2), 1), ((4, 5, 6), 0)]),
            (1, [((1, 0, 3), 1), ((5, 7, 6), 0)]),
        ], n_vocab=8)
        cfg = TrainConfig(aggregator="att", fixed_alpha=1.0, embed_dim=6,
                          learning_rate=0.05, epochs=2, batch_size=2, rng_seed=2)
        init_tok = init_model(data, cfg).encoder.token_embeddings.copy()
        after = train_model(data, None, cfg).params.encoder.token_embeddings
        noisy_rows = [4, 5, 6, 7]
        valid_rows = [0, 1, 2, 3]
        assert np.array_equal(after[noisy_rows], init_tok[noisy_rows])
        assert not np.array_equal(after[valid_rows], init_tok[valid_rows])

    def test_fixed_alpha_rejects_wrong_bag_shape(self):
        all_valid = tiny_dataset([(0, [((0, 1, 2), 1), ((1, 2, 3), 1)]),
                                  (1, [((2, 1, 0), 1), ((3, 2, 1), 0)])])
        cfg = TrainConfig(fixed_alpha=0.5, embed_dim=4, epochs=1)
        with pytest.raises(TrainError, match="exactly one valid and one noisy"):
            train_model(all_valid, None, cfg)
        size_three = tiny_dataset([
            (0, [((0, 1, 2), 1), ((1, 2, 3), 0), ((2, 3, 4), 0)]),
            (1, [((2, 1, 0), 1), ((3, 2, 1), 0)]),
        ])
        with pytest.raises(TrainError, match="exactly one valid and one noisy"):
            train_model(size_three, None, cfg)


class TestSentenceModeIsolation:
    @pytest.mark.parametrize("agg,blocks", [
        ("ka", ("att_map", "att_bias")),
        ("gate", ("gate_weight", "gate_bias")),
    ])
    def test_attention_parameters_untouched(self, train_mixed, agg, blocks):
        cfg = TrainConfig(aggregator=agg, loss_mode="sentence", rng_seed=6, **FAST)
        emb = pair_emb(train_mixed)
        init = init_model(train_mixed, cfg, emb)
        ckpt = train_model(train_mixed, None, cfg, emb)
        for name in blocks:
            assert np.array_equal(getattr(ckpt.params.cls, name), getattr(init.cls, name)), name
        assert not np.array_equal(ckpt.params.cls.weight, init.cls.weight)


class TestLossDecreases:
    @pytest.mark.parametrize("agg,use_ce", [
        ("mean", False), ("att", False), ("ka", False), ("gate", False), ("mean", True),
    ])
    def test_first_epoch_improves(self, train_mixed, agg, use_ce):
        cfg = TrainConfig(aggregator=agg, use_ce=use_ce, embed_dim=8,
                          learning_rate=0.02, epochs=1, batch_size=8, rng_seed=3)
        emb = pair_emb(train_mixed) if cfg.kind.needs_embeddings else None
        ckpt = train_model(train_mixed, None, cfg, emb)
        assert total_loss(ckpt.params, cfg, train_mixed) < ckpt.history[0].loss

    def test_sentence_mode_improves(self, train_mixed):
        cfg = TrainConfig(aggregator="mean", loss_mode="sentence", embed_dim=8,
                          learning_rate=0.02, epochs=1, batch_size=8, rng_seed=3)
        ckpt = train_model(train_mixed, None, cfg)
        assert total_loss(ckpt.params, cfg, train_mixed) < ckpt.history[0].loss


class TestTrainingAccuracy:
    def test_sentence_mode_fits_valid_sentences(self, train_mixed):
        # the corpus has unambiguous contexts and typed mentions, so the
        # per-sentence objective should fit valid sentences nearly perfectly
        cfg = TrainConfig(aggregator="mean", loss_mode="sentence", embed_dim=16,
                          learning_rate=0.02, epochs=30, batch_size=16, rng_seed=1)
        model = train_model(train_mixed, None, cfg).params
        hits = total = 0
        for bag in train_mixed.bags:
            for s in bag.sentences:
                if s.z != 1:
                    continue
                logits = model.cls.weight @ encode(s, model.encoder).s_prime + model.cls.bias
                hits += int(np.argmax(logits)) == bag.relation
                total += 1
        assert total > 0
        assert hits / total > 0.95


class TestDeterminismAndSelection:
    def test_same_seed_identical(self, train_mixed, dev_set):
        cfg = TrainConfig(aggregator="att", rng_seed=11, **FAST)
        a = train_model(train_mixed, dev_set, cfg)
        b = train_model(train_mixed, dev_set, cfg)
        assert np.array_equal(a.params.encoder.token_embeddings,
                              b.params.encoder.token_embeddings)
        assert np.array_equal(a.params.cls.weight, b.params.cls.weight)
        assert [h.loss for h in a.history] == [h.loss for h in b.history]
        assert a.step == b.step

    def test_different_seed_differs(self, train_mixed):
        cfg_a = TrainConfig(aggregator="att", rng_seed=11, **FAST)
        cfg_b = TrainConfig(aggregator="att", rng_seed=12, **FAST)
        a = train_model(train_mixed, None, cfg_a)
        b = train_model(train_mixed, None, cfg_b)
        assert not np.array_equal(a.params.cls.weight, b.params.cls.weight)

    def test_dev_selection_returns_best_epoch(self, train_mixed, dev_set):
        cfg = TrainConfig(aggregator="att", rng_seed=5, **FAST)
        ckpt = train_model(train_mixed, dev_set, cfg)
        evaluated = [h.dev_auc for h in ckpt.history if h.dev_auc is not None]
        assert evaluated, "dev cadence produced no evaluations"
        from baglab.evaluate import pr_auc, predict_records
        final_auc = pr_auc(predict_records(ckpt.params, ckpt.kind, dev_set)).auc
        assert final_auc == pytest.approx(max(evaluated), abs=1e-12)

    def test_history_covers_every_epoch(self, train_mixed):
        cfg = TrainConfig(aggregator="mean", rng_seed=5, **FAST)
        ckpt = train_model(train_mixed, None, cfg)
        assert [h.epoch for h in ckpt.history] == [0, 1, 2, 3]


class TestDivergenceAndErrors:
    def test_non_finite_loss_aborts_with_epoch(self, train_mixed):
        cfg = TrainConfig(aggregator="att", learning_rate=1e200, embed_dim=4,
                          epochs=3, batch_size=8, rng_seed=0)
        with np.errstate(all="ignore"), pytest.raises(DivergenceError, match="epoch"):
            train_model(train_mixed, None, cfg)

    def test_embedding_table_required(self, train_mixed):
        with pytest.raises(TrainError, match="KG embedding"):
            train_model(train_mixed, None, TrainConfig(aggregator="ka", **FAST))
        with pytest.raises(TrainError, match="KG embedding"):
            train_model(train_mixed, None,
                        TrainConfig(aggregator="mean", use_ce=True, **FAST))


class TestFixedWeightSweep:
    def test_one_checkpoint_per_alpha(self, train_mixed):
        alphas = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
        cfg = TrainConfig(aggregator="att", embed_dim=4, learning_rate=0.02,
                          epochs=1, batch_size=8, rng_seed=2)
        out = fixed_weight_sweep(train_mixed, alphas, cfg)
        assert sorted(out) == alphas
        assert all(isinstance(c, ModelCheckpoint) for c in out.values())

    def test_reproducible_per_seed(self, train_mixed):
        cfg = TrainConfig(aggregator="att", embed_dim=4, learning_rate=0.02,
                          epochs=1, batch_size=8, rng_seed=2)
        a = fixed_weight_sweep(train_mixed, [0.7], cfg)[0.7]
        b = fixed_weight_sweep(train_mixed, [0.7], cfg)[0.7]
        assert np.array_equal(a.params.cls.weight, b.params.cls.weight)

    def test_disturbing_bag_rejected(self):
        data = tiny_dataset([(0, [((0, 1, 2), 1), ((1, 2, 3), 1)]),
                             (1, [((2, 1, 0), 1), ((3, 2, 1), 0)])])
        cfg = TrainConfig(embed_dim=4, epochs=1)
        with pytest.raises(TrainError, match="exactly one valid and one noisy"):
            fixed_weight_sweep(data, [0.5], cfg)


class TestGradientExactness:
    """Analytic gradients vs central finite differences on the full objective."""

    def small_data(self, rng, k=3, n_vocab=14):
        specs = []
        for b in range(int(rng.integers(2, 4))):
            rel = int(rng.integers(k))
            sents = []
            for _ in range(int(rng.integers(1, 4))):
                toks = tuple(int(t) for t in rng.integers(0, n_vocab, size=5))
                sents.append((toks, int(rng.integers(2))))
            if all(z == 0 for _, z in sents):
                sents[0] = (sents[0][0], 1)
            specs.append((rel, sents))
        return tiny_dataset(specs, n_vocab=n_vocab, k=k)

    @pytest.mark.parametrize("agg,use_ce,loss_mode", [
        ("mean", False, "bag"),
        ("att", False, "bag"),
        ("ka", False, "bag"),
        ("gate", False, "bag"),
        ("mean", True, "bag"),
        ("mean", False, "sentence"),
        ("mean", True, "sentence"),
    ])
    def test_routes_match_fd(self, agg, use_ce, loss_mode):
        rng = np.random.default_rng(17)
        data = self.small_data(rng)
        cfg = TrainConfig(aggregator=agg, use_ce=use_ce, loss_mode=loss_mode,
                          embed_dim=5, rng_seed=3)
        emb = pair_emb(data, dim=3) if cfg.kind.needs_embeddings else None
        assert gradient_errors(data, cfg, emb, rng_seed=21) < 1e-4

    def test_fixed_alpha_route_matches_fd(self):
        data = tiny_dataset([
            (0, [((0, 1, 2), 1), ((4, 5, 6), 0)]),
            (1, [((1, 0, 3), 1), ((5, 7, 6), 0)]),
            (2, [((3, 1, 0), 1), ((6, 2, 5), 0)]),
        ], n_vocab=10, k=3)
        cfg = TrainConfig(aggregator="att", fixed_alpha=0.7, embed_dim=5, rng_seed=3)
        assert gradient_errors(data, cfg, rng_seed=8) < 1e-4

    def test_random_configuration_sweep(self):
        rng = np.random.default_rng(99)
        aggs = [("mean", False), ("att", False), ("ka", False), ("gate", False),
                ("mean", True)]
        worst = 0.0
        for trial in range(20):
            agg, use_ce = aggs[trial % len(aggs)]
            data = self.small_data(rng)
            cfg = TrainConfig(
                aggregator=agg, use_ce=use_ce,
                loss_mode="sentence" if (not use_ce and agg == "mean" and trial % 2) else "bag",
                embed_dim=int(rng.integers(2, 7)),
                rng_seed=int(rng.integers(1000)),
            )
            emb = pair_emb(data, dim=int(rng.integers(2, 5))) if cfg.kind.needs_embeddings else None
            worst = max(worst, gradient_errors(data, cfg, emb,
                                               coords_per_array=3,
                                               rng_seed=int(rng.integers(1000))))
        assert worst < 1e-4


class TestCheckpointRoundTrip:
    def test_forward_equivalent_after_reload(self, train_mixed, dev_set, tmp_path):
        from baglab.evaluate import pr_auc, predict_records
        cfg = TrainConfig(aggregator="ka", rng_seed=13, **FAST)
        emb = pair_emb(train_mixed, dev_set)
        ckpt = train_model(train_mixed, dev_set, cfg, emb)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        assert loaded.kind == ckpt.kind
        assert loaded.step == ckpt.step and loaded.seed == ckpt.seed
        assert np.array_equal(loaded.params.encoder.token_embeddings,
                              ckpt.params.encoder.token_embeddings)
        assert np.array_equal(loaded.params.cls.att_map, ckpt.params.cls.att_map)
        assert [(h.epoch, h.loss, h.dev_auc) for h in loaded.history] == \
               [(h.epoch, h.loss, h.dev_auc) for h in ckpt.history]
        before = pr_auc(predict_records(ckpt.params, ckpt.kind, dev_set)).auc
        after = pr_auc(predict_records(loaded.params, loaded.kind, dev_set)).auc
        assert after == pytest.approx(before, abs=1e-12)

    def test_round_trip_without_embeddings(self, train_mixed, tmp_path):
        cfg = TrainConfig(aggregator="mean", loss_mode="sentence", rng_seed=13, **FAST)
        ckpt = train_model(train_mixed, None, cfg)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        assert loaded.params.emb is None
        assert loaded.params.cls.att_map is None
        assert np.array_equal(loaded.params.cls.weight, ckpt.params.cls.weight)
