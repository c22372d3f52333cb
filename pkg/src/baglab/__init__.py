"""Controlled-noise bag-level relation extraction laboratory."""

from .aggregate import (
    AggregatorKind,
    BagScore,
    ClassifierParams,
    ModelParams,
    att_weights,
    bag_logits,
    ce_augment,
    gate_weights,
    ka_weights,
    score_bag,
    sentence_logits,
)
from .corpus import (
    Bag,
    CorpusError,
    Dataset,
    Entity,
    FormatError,
    Relation,
    Sentence,
    Vocab,
    disturbing_ratio,
    is_disturbing,
    noise_ratio,
    read_dataset,
    write_dataset,
)
from .encoder import EncoderParams, SentenceRep, encode, encode_backward, grad_check
from .evaluate import (
    EvalReport,
    PRCurve,
    PredictionRecord,
    attention_accuracy,
    evaluate_model,
    filter_noisy,
    filter_valid,
    pr_auc,
)
from .kgembed import (
    EmbeddingTable,
    KnowledgeGraph,
    TransEConfig,
    TransEEmbedder,
    latent_relation,
    train_transe,
    transe_score,
)
from .model import BagRelationClassifier
from .synthgen import (
    GenerationError,
    NoisePatternPlan,
    SeedCorpus,
    SplitSpec,
    build_eval_set,
    build_kg,
    build_training_set,
    generate_seed_corpus,
    plan_pattern,
    randomize_kg,
    split_seed,
    subsample_bags,
    synthesize_sentence,
)
from .train import ModelCheckpoint, TrainConfig, fixed_weight_sweep, train_model

__version__ = "0.1.0"
