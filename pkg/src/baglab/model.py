"""sklearn-style estimator facade over the training loop.

Hyperparameters are stored verbatim so get_params/set_params/clone behave, fit
returns self, and fitted state lives in trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .aggregate import score_bag
from .corpus import Bag, Dataset
from .evaluate import EvalReport, evaluate_model
from .kgembed import EmbeddingTable
from .train import ModelCheckpoint, TrainConfig, train_model


class BagRelationClassifier(BaseEstimator):
    """Bag-level relation classifier with a selectable aggregation mechanism.

    Parameters
    ----------
    aggregator : {"mean", "att", "ka", "gate"}
        How sentence representations combine into a bag representation.
    use_ce : bool
        Concatenate the KG latent-relation feature onto every sentence.
    loss_mode : {"auto", "bag", "sentence"}
        "auto" trains mean aggregation per sentence and everything else per bag.
    fixed_alpha : float or None
        Bypass learned attention, giving the valid sentence this fixed weight.
    kg_embeddings : EmbeddingTable or None
        Frozen entity/relation vectors; required for ka and use_ce.
    """

    def __init__(self, aggregator="att", use_ce=False, loss_mode="auto",
                 fixed_alpha=None, embed_dim=64, learning_rate=0.01, epochs=60,
                 batch_size=16, dev_every=5, kg_embeddings=None, random_state=0):
        self.aggregator = aggregator
        self.use_ce = use_ce
        self.loss_mode = loss_mode
        self.fixed_alpha = fixed_alpha
        self.embed_dim = embed_dim
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.dev_every = dev_every
        self.kg_embeddings = kg_embeddings
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        loss_mode = self.loss_mode
        if loss_mode == "auto":
            loss_mode = "sentence" if self.aggregator == "mean" else "bag"
        return TrainConfig(
            aggregator=self.aggregator,
            use_ce=self.use_ce,
            loss_mode=loss_mode,
            fixed_alpha=self.fixed_alpha,
            embed_dim=self.embed_dim,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            rng_seed=self.random_state,
            dev_every=self.dev_every,
        )

    def fit(self, dataset: Dataset, dev: Dataset | None = None):
        ckpt = train_model(dataset, dev, self._config(), self.kg_embeddings)
        self.checkpoint_ = ckpt
        self.classes_ = np.array([r.id for r in dataset.relations])
        self.history_ = ckpt.history
        return self

    def _require_fitted(self) -> ModelCheckpoint:
        if not hasattr(self, "checkpoint_"):
            raise NotFittedError(
                "This BagRelationClassifier instance is not fitted yet; call fit first."
            )
        return self.checkpoint_

    @staticmethod
    def _bags(data) -> list[Bag]:
        return list(data.bags) if isinstance(data, Dataset) else list(data)

    def predict_proba(self, data) -> np.ndarray:
        """Per-relation scores, one row per bag."""
        ckpt = self._require_fitted()
        return np.stack(
            [score_bag(b, ckpt.params, ckpt.kind).probs for b in self._bags(data)]
        )

    def predict(self, data) -> np.ndarray:
        self._require_fitted()
        return self.classes_[np.argmax(self.predict_proba(data), axis=1)]

    def evaluate(self, test: Dataset) -> EvalReport:
        return evaluate_model(self._require_fitted(), test)
