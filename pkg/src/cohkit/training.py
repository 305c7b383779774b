"""Training: RMSProp, the mini-batch epoch loop with per-epoch dev
selection, history logging, and deterministic ensembling."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .autograd import Parameter, ShapeMismatchError, Tape
from .data import BINARY, Corpus, DataError, reduce_sox
from .evaluation import (
    accuracy_3way,
    ensemble_score_vector,
    f1_per_class,
    group_by_source,
    pra,
    predict_roles,
    predict_scalar,
)
from .layers import Dropout
from .model import (
    GR_PREDICTING,
    Checkpoint,
    CoherenceModel,
    CoherenceModelConfig,
    build_model,
    document_loss,
)

log = logging.getLogger(__name__)

__all__ = [
    "NumericError",
    "TrainConfig",
    "RmspropState",
    "rmsprop_step",
    "HistoryRow",
    "write_history_csv",
    "train",
    "train_ensemble",
    "ensemble_predict",
]

SELECTION_METRICS = ("pra", "accuracy")

# Sub-stream tags keep shuffle and dropout draws independent of each other
# and of parameter initialization.
_SHUFFLE_STREAM = 101
_DROPOUT_STREAM = 202


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    """Optimization settings for one run."""

    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 30
    dropout_rate: float = 0.5
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    seed: int = 0
    selection_metric: str = "pra"
    ensemble_runs: int = 5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size <= 0 or self.epochs <= 0 or self.ensemble_runs <= 0:
            raise ValueError("batch_size, epochs, and ensemble_runs must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if not 0.0 < self.rmsprop_decay < 1.0:
            raise ValueError("rmsprop_decay must lie in (0, 1)")
        if self.rmsprop_epsilon <= 0:
            raise ValueError("rmsprop_epsilon must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.selection_metric not in SELECTION_METRICS:
            raise ValueError(
                f"selection_metric must be one of {SELECTION_METRICS}, got {self.selection_metric!r}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


class RmspropState:
    """Per-parameter squared-gradient accumulators, keyed by name."""

    def __init__(self, accumulators: dict[str, np.ndarray]):
        self.accumulators = accumulators

    @classmethod
    def for_params(cls, params: list[Parameter]) -> "RmspropState":
        return cls({p.name: np.zeros_like(p.tensor.data) for p in params})


def rmsprop_step(params: list[Parameter], state: RmspropState, cfg: TrainConfig) -> None:
    """acc <- rho*acc + (1-rho)*g^2;  theta <- theta - lr*g/(sqrt(acc)+eps)."""
    rho = cfg.rmsprop_decay
    for p in params:
        g = p.tensor.grad
        acc = state.accumulators.get(p.name)
        if acc is None:
            raise KeyError(f"no accumulator for parameter {p.name!r}")
        if g is None or g.shape != p.tensor.data.shape:
            got = None if g is None else g.shape
            raise ShapeMismatchError(
                f"gradient for {p.name!r} has shape {got}, parameter is {p.tensor.data.shape}"
            )
        acc *= rho
        acc += (1.0 - rho) * g * g
        p.tensor.data -= cfg.learning_rate * g / (np.sqrt(acc) + cfg.rmsprop_epsilon)


@dataclass
class HistoryRow:
    """One epoch's record; role F1 fields stay None for variants without
    the auxiliary head."""

    epoch: int
    train_loss: float
    dev_metric: float
    subject_f1: float | None = None
    object_f1: float | None = None


def write_history_csv(rows: list[HistoryRow], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "dev_metric", "subject_f1", "object_f1"])
        for row in rows:
            writer.writerow(
                [
                    row.epoch,
                    repr(row.train_loss),
                    repr(row.dev_metric),
                    "" if row.subject_f1 is None else repr(row.subject_f1),
                    "" if row.object_f1 is None else repr(row.object_f1),
                ]
            )


def accumulate_batch_gradients(
    model: CoherenceModel,
    params: list[Parameter],
    batch: list,
    dropout: Dropout | None,
) -> float:
    """Zero the gradients, then accumulate the mean of per-document
    gradients of the total loss over the batch.  Returns the summed loss."""
    for p in params:
        p.zero_grad()
    total = 0.0
    for doc in batch:
        with Tape() as tape:
            loss = document_loss(model, doc, training=True, dropout=dropout)
        tape.backward(loss)
        total += float(loss.data)
    inv = 1.0 / len(batch)
    for p in params:
        p.tensor.grad *= inv
    return total


def _dev_metric(model: CoherenceModel, dev: Corpus, metric: str) -> float:
    if metric == "pra":
        groups = group_by_source(dev)
        if not groups:
            raise DataError("pra selection needs dev originals paired with permutations")
        scored = [
            (predict_scalar(model, orig), [predict_scalar(model, p) for p in perms])
            for orig, perms in groups
        ]
        return pra(scored)
    gold = [d.label.value for d in dev]
    predicted = [int(np.argmax(ensemble_score_vector([model], d))) for d in dev]
    return accuracy_3way(gold, predicted)


def _role_f1(model: CoherenceModel, dev: Corpus) -> tuple[float | None, float | None]:
    """Subject/object F1 on dev, computed on the {S, O, X} projection so
    full-inventory and collapsed models are reported on the same scale."""
    gold: list[str] = []
    predicted: list[str] = []
    for doc in dev:
        if all(t.gr is None for t in doc.tokens):
            continue
        roles = predict_roles(model, doc)
        for token, pred_cls in zip(doc.tokens, roles):
            if token.gr is None or model.gr_vocab.encode(token.gr) is None:
                continue
            if model.gr_vocab.mode == "sox":
                gold.append(reduce_sox(token.gr))
                predicted.append(pred_cls)
            else:
                gold.append(reduce_sox(token.gr))
                predicted.append(reduce_sox(pred_cls))
    if not gold:
        return None, None
    return f1_per_class(gold, predicted, "S"), f1_per_class(gold, predicted, "O")


def _validate_training_inputs(
    train_corpus: Corpus,
    dev_corpus: Corpus,
    model_cfg: CoherenceModelConfig,
    train_cfg: TrainConfig,
) -> None:
    if not len(train_corpus) or not len(dev_corpus):
        raise DataError("training and dev corpora must be non-empty")
    kind = train_corpus.label_kind
    if model_cfg.num_classes == 1 and kind != BINARY:
        raise DataError("binary model on a graded corpus; set num_classes to the class count")
    if model_cfg.num_classes > 1 and kind == BINARY:
        raise DataError("multi-class model on a binary corpus; set num_classes=1")
    if model_cfg.variant in GR_PREDICTING and not train_corpus.has_gr_labels():
        raise DataError(
            f"variant {model_cfg.variant!r} needs grammatical-role labels on the training corpus"
        )
    if train_cfg.selection_metric == "pra":
        if model_cfg.num_classes != 1:
            raise DataError("pra selection applies to binary models only")
        if not group_by_source(dev_corpus):
            raise DataError("pra selection needs dev originals paired with permutations")
    if model_cfg.levels == 3 and not train_corpus.has_paragraph_boundaries:
        raise DataError("a 3-level model needs documents with paragraph boundaries")


def train(
    train_corpus: Corpus,
    dev_corpus: Corpus,
    model_cfg: CoherenceModelConfig,
    train_cfg: TrainConfig,
    embeddings=None,
) -> tuple[Checkpoint, list[HistoryRow]]:
    """Train one model and return (best checkpoint, per-epoch history).

    Every epoch shuffles documents with a seeded stream, averages
    gradients over batches of ``batch_size`` (the last short batch is
    kept), steps RMSProp once per batch, then scores the dev corpus.
    The checkpoint with the highest dev metric wins; ties go to the
    earliest epoch.
    """
    _validate_training_inputs(train_corpus, dev_corpus, model_cfg, train_cfg)
    model = build_model(model_cfg, train_corpus, embeddings=embeddings, seed=train_cfg.seed)
    params = model.parameters()
    state = RmspropState.for_params(params)
    shuffle_rng = np.random.default_rng([train_cfg.seed, _SHUFFLE_STREAM])
    dropout = Dropout(
        train_cfg.dropout_rate, np.random.default_rng([train_cfg.seed, _DROPOUT_STREAM])
    )

    docs = list(train_corpus)
    best: tuple[float, int, Checkpoint] | None = None
    history: list[HistoryRow] = []
    for epoch in range(1, train_cfg.epochs + 1):
        order = shuffle_rng.permutation(len(docs))
        epoch_loss = 0.0
        for start in range(0, len(docs), train_cfg.batch_size):
            batch = [docs[i] for i in order[start : start + train_cfg.batch_size]]
            epoch_loss += accumulate_batch_gradients(model, params, batch, dropout)
            if not math.isfinite(epoch_loss):
                raise NumericError(f"non-finite loss in epoch {epoch}")
            rmsprop_step(params, state, train_cfg)
        train_loss = epoch_loss / len(docs)
        dev_metric = _dev_metric(model, dev_corpus, train_cfg.selection_metric)
        if model_cfg.variant in GR_PREDICTING:
            subject_f1, object_f1 = _role_f1(model, dev_corpus)
        else:
            subject_f1 = object_f1 = None
        history.append(HistoryRow(epoch, train_loss, dev_metric, subject_f1, object_f1))
        if best is None or dev_metric > best[0]:
            best = (dev_metric, epoch, Checkpoint.from_model(model))
        log.info(
            "epoch %d: train_loss=%.6f dev_%s=%.4f",
            epoch,
            train_loss,
            train_cfg.selection_metric,
            dev_metric,
        )
    return best[2], history


def train_ensemble(
    train_corpus: Corpus,
    dev_corpus: Corpus,
    model_cfg: CoherenceModelConfig,
    train_cfg: TrainConfig,
    embeddings=None,
) -> tuple[list[Checkpoint], list[list[HistoryRow]]]:
    """Train ``ensemble_runs`` models with seeds base, base+1, ..."""
    checkpoints = []
    histories = []
    for run in range(train_cfg.ensemble_runs):
        run_cfg = replace(train_cfg, seed=train_cfg.seed + run)
        ckpt, rows = train(train_corpus, dev_corpus, model_cfg, run_cfg, embeddings)
        checkpoints.append(ckpt)
        histories.append(rows)
    return checkpoints, histories


def ensemble_predict(checkpoints: list[Checkpoint], doc) -> np.ndarray:
    """Mean score vector over checkpointed models; configs must agree."""
    models = [c.to_model() for c in checkpoints]
    return ensemble_score_vector(models, doc)
