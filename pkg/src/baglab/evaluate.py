"""Evaluation: attention accuracy, micro PR-AUC, and noise-filtered test views.

Attention accuracy grades, per bag, the fraction of (valid, noisy) sentence
pairs where the valid sentence gets the strictly higher weight under the
gold-relation query; ties count as failures.  The dataset score is the mean of
per-bag scores.

PR-AUC is computed micro-style over (bag, relation) pairs: each pair scores
P(relation|bag) and is positive iff the relation is the bag's gold label.
Pairs are sorted by score descending with a deterministic (bag_id, relation)
tie-break; curve points are emitted per distinct score threshold and the area
is the trapezoidal integral anchored at (recall=0, first precision), which
makes the all-ties curve integrate to exactly the positive rate.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aggregate import AggregatorKind, ModelParams, score_bag
from .corpus import Bag, CorpusError, Dataset


class EvalError(ValueError):
    """Invalid evaluation input."""


@dataclass
class PredictionRecord:
    bag_id: int
    scores: np.ndarray          # (K,) per-relation scores
    gold: int
    weights: np.ndarray | None  # per-sentence weights under the gold-relation query
    z: tuple[int | None, ...]


@dataclass
class PRCurve:
    recalls: np.ndarray
    precisions: np.ndarray
    auc: float

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recalls.tolist(), self.precisions.tolist()))


def attention_accuracy(records: list[PredictionRecord]) -> float:
    """Mean over bags of the strictly-ordered (valid, noisy) weight pair fraction."""
    if not records:
        raise EvalError("no records")
    per_bag = []
    for rec in records:
        if rec.weights is None:
            raise EvalError(f"bag {rec.bag_id} has no attention weights")
        if any(z is None for z in rec.z):
            raise EvalError(f"bag {rec.bag_id} has unlabeled noise status")
        w = np.asarray(rec.weights, dtype=float)
        valid = w[[z == 1 for z in rec.z]]
        noisy = w[[z == 0 for z in rec.z]]
        if valid.size == 0 or noisy.size == 0:
            raise EvalError(
                f"bag {rec.bag_id} is disturbing; attention accuracy needs both labels"
            )
        wins = np.sum(valid[:, None] > noisy[None, :])
        per_bag.append(wins / (valid.size * noisy.size))
    return float(np.mean(per_bag))


def pr_auc(records: list[PredictionRecord]) -> PRCurve:
    """Micro precision-recall curve over all (bag, relation) pairs."""
    pairs = []
    for rec in records:
        for k, score in enumerate(np.asarray(rec.scores, dtype=float)):
            pairs.append((float(score), rec.bag_id, k, 1 if k == rec.gold else 0))
    n_pos = sum(p[3] for p in pairs)
    if n_pos == 0:
        raise EvalError("no positive (bag, relation) pairs")
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))

    recalls, precisions = [], []
    tp = seen = 0
    i = 0
    while i < len(pairs):
        j = i
        while j < len(pairs) and pairs[j][0] == pairs[i][0]:
            tp += pairs[j][3]
            seen += 1
            j += 1
        recalls.append(tp / n_pos)
        precisions.append(tp / seen)
        i = j

    r = np.array([0.0] + recalls)
    p = np.array([precisions[0]] + precisions)
    auc = float(np.trapezoid(p, r))
    return PRCurve(recalls=r, precisions=p, auc=auc)


def _filter(dataset: Dataset, keep_z: int, tag: str) -> Dataset:
    bags = []
    for bag in dataset.bags:
        kept = tuple(s for s in bag.sentences if s.z == keep_z)
        if any(s.z is None for s in bag.sentences):
            raise EvalError(f"bag {bag.id} has unlabeled noise status")
        if not kept:
            raise EvalError(f"bag {bag.id} has no {tag} sentences; filtering would empty it")
        bags.append(Bag(bag.id, bag.head, bag.tail, bag.relation, kept))
    return Dataset(tuple(bags), dataset.vocab, dataset.relations, dataset.split_tag,
                   dataset.generator_seed)


def filter_valid(dataset: Dataset) -> Dataset:
    """Keep only valid sentences; bag count and labels are preserved."""
    return _filter(dataset, 1, "valid")


def filter_noisy(dataset: Dataset) -> Dataset:
    """Keep only noisy sentences; bag count and labels are preserved."""
    return _filter(dataset, 0, "noisy")


def predict_records(model: ModelParams, kind: AggregatorKind, dataset: Dataset) -> list[PredictionRecord]:
    records = []
    for bag in dataset.bags:
        score = score_bag(bag, model, kind)
        records.append(
            PredictionRecord(
                bag_id=bag.id,
                scores=score.probs,
                gold=bag.relation,
                weights=score.gold_query_weights(bag.relation),
                z=tuple(s.z for s in bag.sentences),
            )
        )
    return records


@dataclass
class EvalReport:
    auc: float
    aacc: float | None  # None when the aggregator has no attention weights
    auc_valid: float
    auc_noisy: float
    n_bags: int
    curves: dict[str, PRCurve]

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "aacc": self.aacc,
            "auc_valid": self.auc_valid,
            "auc_noisy": self.auc_noisy,
            "n_bags": self.n_bags,
        }


def evaluate_model(checkpoint, test: Dataset) -> EvalReport:
    """Full report: AUC on the test set, AAcc from gold-query traces, AUCV/AUCN
    on the valid-only and noisy-only views.  Accepts anything exposing .params
    and .kind."""
    model, kind = checkpoint.params, checkpoint.kind
    records = predict_records(model, kind, test)
    full = pr_auc(records)
    valid_records = predict_records(model, kind, filter_valid(test))
    noisy_records = predict_records(model, kind, filter_noisy(test))
    curve_v = pr_auc(valid_records)
    curve_n = pr_auc(noisy_records)
    aacc = attention_accuracy(records) if kind.has_attention else None
    return EvalReport(
        auc=full.auc,
        aacc=aacc,
        auc_valid=curve_v.auc,
        auc_noisy=curve_n.auc,
        n_bags=len(test.bags),
        curves={"full": full, "valid": curve_v, "noisy": curve_n},
    )


def export_pr_curve(curve: PRCurve, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recall", "precision"])
        for r, p in curve.points():
            writer.writerow([f"{r:.12g}", f"{p:.12g}"])


def export_attention_traces(records: list[PredictionRecord], path: str | Path) -> None:
    """CSV of per-sentence gold-query weights next to their noise labels."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bag_id", "query_relation", "sentence_index", "weight", "z"])
        for rec in records:
            if rec.weights is None:
                continue
            for i, w in enumerate(np.asarray(rec.weights, dtype=float)):
                writer.writerow([rec.bag_id, rec.gold, i, f"{w:.12g}", rec.z[i]])


def write_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
