"""Metrics: attention accuracy, micro PR-AUC, filtered test views, reports.

Oracles are independent re-implementations kept deliberately naive:

  * attention accuracy — nested-loop pair enumeration with exact Fractions;
  * PR-AUC — threshold sweep over distinct scores with Fraction precision
    and trapezoidal area, anchored at (recall 0, first precision).

The hand PR example is derived in-comment; its frozen area is 1/3.
"""

import csv
import json
from fractions import Fraction

import numpy as np
import pytest

from baglab.aggregate import AggregatorKind, ClassifierParams, ModelParams
from baglab.corpus import Bag, Dataset, Relation, Sentence, Vocab, noise_ratio
from baglab.encoder import EncoderParams
from baglab.evaluate import (
    EvalError,
    EvalReport,
    PredictionRecord,
    attention_accuracy,
    evaluate_model,
    export_attention_traces,
    export_pr_curve,
    filter_noisy,
    filter_valid,
    pr_auc,
    predict_records,
    write_report,
)
from baglab.synthgen import build_eval_set, generate_seed_corpus


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------

def oracle_bag_aacc(weights, zs) -> Fraction:
    wins = total = 0
    for wv, zv in zip(weights, zs):
        if zv != 1:
            continue
        for wn, zn in zip(weights, zs):
            if zn != 0:
                continue
            total += 1
            wins += wv > wn
    return Fraction(wins, total)


def oracle_pr_auc(scored) -> Fraction:
    """scored: list of (score, is_pos). Distinct scores descend; tied pairs
    enter the curve together; trapezoid anchored at (0, first precision)."""
    n_pos = sum(p for _, p in scored)
    points = []
    tp = seen = 0
    for s in sorted({s for s, _ in scored}, reverse=True):
        group = [p for sc, p in scored if sc == s]
        tp += sum(group)
        seen += len(group)
        points.append((Fraction(tp, n_pos), Fraction(tp, seen)))
    points.insert(0, (Fraction(0), points[0][1]))
    area = Fraction(0)
    for (r0, p0), (r1, p1) in zip(points, points[1:]):
        area += (r1 - r0) * (p0 + p1) / 2
    return area


def record(bag_id, scores, gold, weights=None, z=()):
    return PredictionRecord(
        bag_id=bag_id, scores=np.asarray(scores, dtype=float), gold=gold,
        weights=None if weights is None else np.asarray(weights, dtype=float),
        z=tuple(z),
    )


# ---------------------------------------------------------------------------
# attention accuracy
# ---------------------------------------------------------------------------

class TestAttentionAccuracy:
    def test_dominating_pair(self):
        rec = record(0, [0.5, 0.5], 0, weights=[0.7, 0.3], z=(1, 0))
        assert attention_accuracy([rec]) == 1.0

    def test_tie_counts_as_failure(self):
        rec = record(0, [0.5, 0.5], 0, weights=[0.5, 0.5], z=(1, 0))
        assert attention_accuracy([rec]) == 0.0

    def test_hand_three_sentence_bag(self):
        # pairs: (0.5 > 0.4) passes, (0.1 > 0.4) fails -> 1/2
        rec = record(0, [1.0, 0.0], 0, weights=[0.5, 0.1, 0.4], z=(1, 1, 0))
        assert attention_accuracy([rec]) == 0.5

    def test_mean_over_bags(self):
        recs = [
            record(0, [1, 0], 0, weights=[0.7, 0.3], z=(1, 0)),
            record(1, [1, 0], 0, weights=[0.2, 0.8], z=(1, 0)),
        ]
        assert attention_accuracy(recs) == 0.5

    def test_disturbing_bag_rejected(self):
        all_valid = record(0, [1, 0], 0, weights=[0.6, 0.4], z=(1, 1))
        with pytest.raises(EvalError, match="disturbing"):
            attention_accuracy([all_valid])

    def test_unknown_z_rejected(self):
        rec = record(0, [1, 0], 0, weights=[0.6, 0.4], z=(1, None))
        with pytest.raises(EvalError, match="unlabeled"):
            attention_accuracy([rec])

    def test_missing_weights_rejected(self):
        with pytest.raises(EvalError, match="no attention weights"):
            attention_accuracy([record(0, [1, 0], 0, weights=None, z=(1, 0))])

    def test_empty_records_rejected(self):
        with pytest.raises(EvalError, match="no records"):
            attention_accuracy([])

    def test_brute_force_oracle_equality(self):
        # ties are forced by drawing weights off a coarse grid
        rng = np.random.default_rng(42)
        grid = np.linspace(0.0, 1.0, 7)
        recs, expected = [], []
        for i in range(1000):
            m = int(rng.integers(2, 7))
            z = [int(b) for b in rng.integers(0, 2, size=m)]
            z[0], z[1] = 1, 0  # keep the bag non-disturbing
            w = (grid[rng.integers(0, 7, size=m)] if rng.random() < 0.5
                 else rng.random(size=m))
            recs.append(record(i, [1, 0], 0, weights=w, z=z))
            expected.append(float(oracle_bag_aacc(list(w), z)))
        assert attention_accuracy(recs) == float(np.mean(expected))


# ---------------------------------------------------------------------------
# PR-AUC
# ---------------------------------------------------------------------------

class TestPRAUC:
    def test_perfect_classifier(self):
        recs = [record(i, np.eye(3)[i], i) for i in range(3)]
        curve = pr_auc(recs)
        assert curve.auc == 1.0
        assert curve.precisions[-1] == pytest.approx(1 / 3)

    def test_uniform_scores_give_positive_rate(self):
        recs = [record(i, [0.25] * 4, i % 4) for i in range(8)]
        assert pr_auc(recs).auc == 0.25

    def test_hand_two_bag_example(self):
        # pairs sorted: 0.7 neg, 0.6 pos, 0.4 neg, 0.3 pos ->
        # points (r, p): (0, 0), (0, 0), (1/2, 1/2), (1/2, 1/3), (1, 1/2);
        # area = 1/2 * (0 + 1/2)/2 + 1/2 * (1/3 + 1/2)/2 = 1/8 + 5/24 = 1/3
        recs = [record(0, [0.6, 0.4], 0), record(1, [0.7, 0.3], 1)]
        assert pr_auc(recs).auc == pytest.approx(1 / 3, abs=1e-15)

    def test_no_positive_pairs_rejected(self):
        with pytest.raises(EvalError, match="no positive"):
            pr_auc([record(0, [0.5, 0.5], gold=5)])

    def test_curve_invariants(self):
        rng = np.random.default_rng(3)
        recs = [record(i, rng.random(4), int(rng.integers(4))) for i in range(30)]
        curve = pr_auc(recs)
        assert curve.recalls[0] == 0.0
        assert (np.diff(curve.recalls) >= 0).all()
        assert curve.recalls[-1] == 1.0
        assert curve.auc == float(np.trapezoid(curve.precisions, curve.recalls))
        assert curve.points()[0] == (0.0, curve.precisions[0])

    def test_exhaustive_small_instance_oracle(self):
        # every instance has <= 8 (bag, relation) pairs; scores drawn off a
        # small value set so tie groups are common
        rng = np.random.default_rng(7)
        values = np.array([0.2, 0.5, 0.8])
        for trial in range(500):
            k = int(rng.integers(2, 5))
            n_bags = int(rng.integers(1, 8 // k + 1))
            recs = []
            for b in range(n_bags):
                scores = (values[rng.integers(0, 3, size=k)] if trial % 2
                          else rng.random(size=k))
                recs.append(record(b, scores, int(rng.integers(k))))
            scored = [(float(s), int(k_ == rec.gold))
                      for rec in recs for k_, s in enumerate(rec.scores)]
            assert len(scored) <= 8
            assert pr_auc(recs).auc == pytest.approx(
                float(oracle_pr_auc(scored)), abs=1e-12)

    def test_record_order_does_not_change_curve(self):
        rng = np.random.default_rng(5)
        recs = [record(i, rng.random(3), int(rng.integers(3))) for i in range(20)]
        fwd = pr_auc(recs)
        rev = pr_auc(list(reversed(recs)))
        assert fwd.auc == rev.auc
        assert np.array_equal(fwd.recalls, rev.recalls)
        assert np.array_equal(fwd.precisions, rev.precisions)


# ---------------------------------------------------------------------------
# filtered test views
# ---------------------------------------------------------------------------

def eval_dataset():
    corpus = generate_seed_corpus(3, 6, 2, ambiguity=0.0, rng_seed=11)
    return build_eval_set(corpus, rng_seed=13, split_tag="test")


def manual_dataset(zs_per_bag):
    bags = []
    for i, zs in enumerate(zs_per_bag):
        sentences = tuple(
            Sentence(tokens=(0, 1, 2), head_span=(0, 1), tail_span=(2, 3),
                     relation=0, z=z,
                     origin="original" if z == 1 else
                     ("synth_noisy" if z == 0 else "original"))
            for z in zs
        )
        bags.append(Bag(id=i, head=10 + i, tail=20 + i, relation=0, sentences=sentences))
    return Dataset(tuple(bags), Vocab(4), (Relation(0, "a"), Relation(1, "b")), "test")


class TestFilters:
    def test_generated_test_set_filters_to_singletons(self):
        data = eval_dataset()
        for filtered in (filter_valid(data), filter_noisy(data)):
            assert len(filtered.bags) == len(data.bags)
            assert all(bag.size == 1 for bag in filtered.bags)
            assert [b.relation for b in filtered.bags] == [b.relation for b in data.bags]

    def test_noise_ratio_extremes(self):
        data = eval_dataset()
        assert noise_ratio(filter_valid(data)) == 0
        assert noise_ratio(filter_noisy(data)) == 1

    def test_emptying_bag_rejected(self):
        all_valid = manual_dataset([(1, 1)])
        with pytest.raises(EvalError, match="no noisy sentences"):
            filter_noisy(all_valid)
        all_noisy = manual_dataset([(0, 0)])
        with pytest.raises(EvalError, match="no valid sentences"):
            filter_valid(all_noisy)

    def test_unknown_z_rejected(self):
        data = manual_dataset([(1, None)])
        with pytest.raises(EvalError, match="unlabeled"):
            filter_valid(data)


# ---------------------------------------------------------------------------
# prediction records and full reports
# ---------------------------------------------------------------------------

def trained_toy(kind=AggregatorKind("att")):
    data = eval_dataset()
    rng = np.random.default_rng(1)
    encoder = EncoderParams.init(data.vocab.size, 6, rng)
    cls = ClassifierParams.init(data.n_relations, encoder.rep_dim, kind, rng)
    return data, ModelParams(encoder=encoder, cls=cls), kind


class TestPredictRecords:
    def test_shapes_and_traces(self):
        data, model, kind = trained_toy()
        records = predict_records(model, kind, data)
        assert len(records) == len(data.bags)
        for rec, bag in zip(records, data.bags):
            assert rec.bag_id == bag.id and rec.gold == bag.relation
            assert rec.scores.shape == (data.n_relations,)
            assert np.isfinite(rec.scores).all()
            assert len(rec.weights) == bag.size
            assert rec.z == tuple(s.z for s in bag.sentences)

    def test_mean_kind_has_no_trace(self):
        data, model, _ = trained_toy(AggregatorKind("mean"))
        records = predict_records(model, AggregatorKind("mean"), data)
        assert all(rec.weights is None for rec in records)


class FakeCkpt:
    def __init__(self, params, kind):
        self.params, self.kind = params, kind


class TestEvaluateModel:
    def test_report_fields(self):
        data, model, kind = trained_toy()
        report = evaluate_model(FakeCkpt(model, kind), data)
        assert set(report.curves) == {"full", "valid", "noisy"}
        assert 0.0 <= report.auc <= 1.0
        assert report.aacc is not None and 0.0 <= report.aacc <= 1.0
        assert report.n_bags == len(data.bags)
        assert report.to_dict() == {
            "auc": report.auc, "aacc": report.aacc,
            "auc_valid": report.auc_valid, "auc_noisy": report.auc_noisy,
            "n_bags": report.n_bags,
        }

    def test_mean_model_reports_no_aacc(self):
        data, model, kind = trained_toy(AggregatorKind("mean"))
        report = evaluate_model(FakeCkpt(model, kind), data)
        assert report.aacc is None

    def test_deterministic_reports(self):
        data, model, kind = trained_toy()
        a = evaluate_model(FakeCkpt(model, kind), data)
        b = evaluate_model(FakeCkpt(model, kind), data)
        assert a.to_dict() == b.to_dict()

    def test_bag_reordering_invariance(self):
        data, model, kind = trained_toy()
        flipped = Dataset(tuple(reversed(data.bags)), data.vocab, data.relations,
                          data.split_tag, data.generator_seed)
        a = evaluate_model(FakeCkpt(model, kind), data)
        b = evaluate_model(FakeCkpt(model, kind), flipped)
        assert b.auc == a.auc and b.auc_valid == a.auc_valid \
            and b.auc_noisy == a.auc_noisy
        assert b.aacc == pytest.approx(a.aacc, abs=1e-12)


class TestExports:
    def test_pr_curve_csv(self, tmp_path):
        recs = [record(0, [0.6, 0.4], 0), record(1, [0.7, 0.3], 1)]
        curve = pr_auc(recs)
        path = tmp_path / "pr.csv"
        export_pr_curve(curve, path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["recall", "precision"]
        assert len(rows) == 1 + len(curve.recalls)
        back = np.array([(float(r), float(p)) for r, p in rows[1:]])
        assert np.allclose(back, np.array(curve.points()), atol=1e-12)

    def test_attention_trace_csv(self, tmp_path):
        recs = [
            record(3, [1, 0], 0, weights=[0.75, 0.25], z=(1, 0)),
            record(4, [1, 0], 1, weights=None, z=(1,)),
        ]
        path = tmp_path / "trace.csv"
        export_attention_traces(recs, path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["bag_id", "query_relation", "sentence_index", "weight", "z"]
        assert len(rows) == 3  # header + two sentences; the trace-free record skipped
        assert rows[1] == ["3", "0", "0", "0.75", "1"]
        assert rows[2] == ["3", "0", "1", "0.25", "0"]

    def test_report_json(self, tmp_path):
        report = EvalReport(auc=0.5, aacc=None, auc_valid=0.75, auc_noisy=0.25,
                            n_bags=7, curves={})
        path = tmp_path / "report.json"
        write_report(report, path)
        assert json.loads(path.read_text()) == {
            "auc": 0.5, "aacc": None, "auc_valid": 0.75,
            "auc_noisy": 0.25, "n_bags": 7,
        }
