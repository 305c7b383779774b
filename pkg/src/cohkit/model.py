"""Hierarchical coherence models.

A document encoder stacks a word-level Bi-LSTM with attention pooling
into sentence vectors, then a sentence-level Bi-LSTM with attention into
a document vector (two-level); three-level corpora add a paragraph tier.
Coherence is scored by independent sigmoids over the document vector.

Variants:

* ``stl``        scoring head only
* ``mtl``        adds a per-word grammatical-role softmax head trained
                 jointly (weighted loss sum)
* ``mtl_sox``    same head over the collapsed {S, O, X} inventory
* ``concat_grs`` no auxiliary head; gold role embeddings are
                 concatenated onto the word embeddings as input
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autograd import (
    Parameter,
    ShapeMismatchError,
    Tensor,
    add,
    clamp,
    concat_last_axis,
    log as tlog,
    matmul,
    mean_all,
    mul,
    pick,
    scale,
    sigmoid,
    softmax,
    sub,
)
from .data import BINARY, Corpus, DataError, Document, GRVocabulary
from .layers import (
    AttentionParams,
    Dropout,
    EmbeddingTable,
    LstmParams,
    attention_pool,
    bilstm,
    final_state_pool,
    glorot,
)

logger = logging.getLogger(__name__)

__all__ = [
    "STL",
    "MTL",
    "MTL_SOX",
    "CONCAT_GRS",
    "VARIANTS",
    "GR_PREDICTING",
    "CoherenceModelConfig",
    "EncodeResult",
    "CoherencePrediction",
    "CoherenceModel",
    "build_model",
    "loss_binary",
    "loss_multiclass",
    "loss_gr",
    "loss_total",
    "Checkpoint",
]

STL = "stl"
MTL = "mtl"
MTL_SOX = "mtl_sox"
CONCAT_GRS = "concat_grs"
VARIANTS = frozenset({STL, MTL, MTL_SOX, CONCAT_GRS})
GR_PREDICTING = frozenset({MTL, MTL_SOX})

AGGREGATIONS = ("attention", "final_state")
DROPOUT_SITES = ("words", "sentences")

PROB_FLOOR = 1e-7


@dataclass
class CoherenceModelConfig:
    """Architecture and loss-mix settings for one model."""

    variant: str = STL
    levels: int = 2
    embed_dim: int = 50
    word_hidden: int = 100
    sent_hidden: int = 100
    para_hidden: int = 100
    num_classes: int = 1
    alpha: float = 1.0
    beta: float = 0.0
    gr_embed_dim: int = 10
    aggregation: str = "attention"
    dropout_sites: tuple[str, ...] = DROPOUT_SITES
    trainable_embeddings: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {sorted(VARIANTS)}")
        if self.levels not in (2, 3):
            raise ValueError(f"levels must be 2 or 3, got {self.levels}")
        for name in ("embed_dim", "word_hidden", "sent_hidden", "para_hidden", "num_classes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.num_classes == 2:
            raise ValueError("use num_classes=1 for the binary task")
        if not 0.0 <= self.alpha <= 1.0 or not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"loss weights must lie in [0, 1], got alpha={self.alpha} beta={self.beta}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        self.dropout_sites = tuple(self.dropout_sites)
        unknown = set(self.dropout_sites) - set(DROPOUT_SITES)
        if unknown:
            raise ValueError(f"unknown dropout sites: {sorted(unknown)}")
        if self.variant not in GR_PREDICTING and self.beta != 0.0:
            # The auxiliary loss exists only for the joint variants.
            self.beta = 0.0
        if self.variant == CONCAT_GRS and self.gr_embed_dim <= 0:
            raise ValueError("concat_grs needs a positive gr_embed_dim")

    @property
    def doc_dim(self) -> int:
        return 2 * (self.para_hidden if self.levels == 3 else self.sent_hidden)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dropout_sites"] = list(self.dropout_sites)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CoherenceModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "dropout_sites" in kwargs:
            kwargs["dropout_sites"] = tuple(kwargs["dropout_sites"])
        return cls(**kwargs)


@dataclass
class EncodeResult:
    """Everything a forward encoding exposes for losses and analysis."""

    doc_vector: Tensor
    word_states: list[Tensor]
    word_inputs: list[Tensor]
    attention_trace: dict


@dataclass
class CoherencePrediction:
    score: Tensor
    gr_probs: list[Tensor] | None
    doc_vector: Tensor
    attention_trace: dict


def _component_rng(seed: int, component: str) -> np.random.Generator:
    """Independent stream per component so adding a head to one variant
    leaves every shared weight's initialization untouched."""
    return np.random.default_rng([seed, zlib.crc32(component.encode("utf-8"))])


class CoherenceModel:
    """Hierarchical document encoder with a coherence head and, for the
    joint variants, a per-word grammatical-role head."""

    def __init__(
        self,
        config: CoherenceModelConfig,
        word_table: EmbeddingTable,
        gr_vocab: GRVocabulary | None = None,
        gr_table: EmbeddingTable | None = None,
        seed: int = 0,
    ):
        cfg = config
        if word_table.dim != cfg.embed_dim:
            raise ShapeMismatchError(
                f"word table dim {word_table.dim} != config embed_dim {cfg.embed_dim}"
            )
        if cfg.variant in GR_PREDICTING and gr_vocab is None:
            raise ValueError(f"variant {cfg.variant!r} needs a grammatical-role vocabulary")
        if cfg.variant == CONCAT_GRS:
            if gr_table is None:
                raise ValueError("concat_grs needs a grammatical-role embedding table")
            if gr_table.dim != cfg.gr_embed_dim:
                raise ShapeMismatchError(
                    f"gr table dim {gr_table.dim} != config gr_embed_dim {cfg.gr_embed_dim}"
                )
        self.config = cfg
        self.word_table = word_table
        self.gr_vocab = gr_vocab
        self.gr_table = gr_table
        self.seed = seed

        word_input = cfg.embed_dim + (cfg.gr_embed_dim if cfg.variant == CONCAT_GRS else 0)
        word_state = 2 * cfg.word_hidden
        sent_state = 2 * cfg.sent_hidden

        def rng(component: str) -> np.random.Generator:
            return _component_rng(seed, component)

        self.word_fwd = LstmParams.init(word_input, cfg.word_hidden, rng("word_lstm.fwd"))
        self.word_bwd = LstmParams.init(word_input, cfg.word_hidden, rng("word_lstm.bwd"))
        self.word_att = AttentionParams.init(word_state, word_state, rng("word_att"))
        self.sent_fwd = LstmParams.init(word_state, cfg.sent_hidden, rng("sent_lstm.fwd"))
        self.sent_bwd = LstmParams.init(word_state, cfg.sent_hidden, rng("sent_lstm.bwd"))
        self.sent_att = AttentionParams.init(sent_state, sent_state, rng("sent_att"))
        if cfg.levels == 3:
            para_state = 2 * cfg.para_hidden
            self.para_fwd = LstmParams.init(sent_state, cfg.para_hidden, rng("para_lstm.fwd"))
            self.para_bwd = LstmParams.init(sent_state, cfg.para_hidden, rng("para_lstm.bwd"))
            self.para_att = AttentionParams.init(para_state, para_state, rng("para_att"))
        else:
            self.para_fwd = self.para_bwd = self.para_att = None
        self.w_score = Tensor(glorot(rng("score"), cfg.num_classes, cfg.doc_dim))
        if cfg.variant in GR_PREDICTING:
            self.w_gr = Tensor(glorot(rng("gr_head"), len(gr_vocab), word_state))
        else:
            self.w_gr = None
        # Build the parameter list eagerly so every trainable tensor is
        # marked before the first forward pass records a tape.
        self._parameters = [
            Parameter(name, tensor)
            for name, tensor in self.named_tensors()
            if not (name.startswith("embed.") and not self._embedding_trainable(name))
        ]

    # -- parameter bookkeeping ------------------------------------------------

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        """All weight tensors in a stable order, trainable or not."""
        out: list[tuple[str, Tensor]] = [("embed.word", self.word_table.matrix)]
        if self.gr_table is not None:
            out.append(("embed.gr", self.gr_table.matrix))
        out.extend(self.word_fwd.named("word_lstm.fwd"))
        out.extend(self.word_bwd.named("word_lstm.bwd"))
        out.extend(self.word_att.named("word_att"))
        out.extend(self.sent_fwd.named("sent_lstm.fwd"))
        out.extend(self.sent_bwd.named("sent_lstm.bwd"))
        out.extend(self.sent_att.named("sent_att"))
        if self.para_fwd is not None:
            out.extend(self.para_fwd.named("para_lstm.fwd"))
            out.extend(self.para_bwd.named("para_lstm.bwd"))
            out.extend(self.para_att.named("para_att"))
        out.append(("score.w", self.w_score))
        if self.w_gr is not None:
            out.append(("gr_head.w", self.w_gr))
        return out

    def parameters(self) -> list[Parameter]:
        """Trainable parameters in stable enumeration order."""
        return self._parameters

    def _embedding_trainable(self, name: str) -> bool:
        table = self.word_table if name == "embed.word" else self.gr_table
        return table.trainable and self.config.trainable_embeddings

    # -- forward passes -------------------------------------------------------

    def _word_input(self, token) -> Tensor:
        emb = self.word_table.lookup(token.surface)
        if self.config.variant != CONCAT_GRS:
            return emb
        if token.gr is None:
            raise DataError(f"token {token.surface!r} lacks the grammatical role concat_grs requires")
        try:
            gr_emb = self.gr_table.lookup(token.gr)
        except KeyError:
            raise DataError(
                f"token {token.surface!r} carries unknown grammatical role {token.gr!r}"
            ) from None
        return concat_last_axis(emb, gr_emb)

    def _pool(self, states: list[Tensor], att: AttentionParams) -> tuple[Tensor, Tensor]:
        if self.config.aggregation == "attention":
            return attention_pool(states, att)
        return final_state_pool(states)

    def encode_document(
        self,
        doc: Document,
        training: bool = False,
        dropout: Dropout | None = None,
    ) -> EncodeResult:
        """Encode a document into its vector; exposes per-word states,
        the raw word inputs, and all attention weight vectors."""
        doc.validate()
        cfg = self.config
        drop_words = dropout is not None and "words" in cfg.dropout_sites
        drop_sents = dropout is not None and "sentences" in cfg.dropout_sites

        word_states: list[Tensor] = []
        word_inputs: list[Tensor] = []
        word_weights: list[np.ndarray] = []
        sent_vectors_by_par: list[list[Tensor]] = []
        for paragraph in doc.paragraphs:
            sent_vectors: list[Tensor] = []
            for sentence in paragraph:
                inputs = [self._word_input(tok) for tok in sentence]
                if drop_words:
                    inputs = [dropout(x, training) for x in inputs]
                states = bilstm(inputs, self.word_fwd, self.word_bwd)
                vec, weights = self._pool(states, self.word_att)
                word_inputs.extend(inputs)
                word_states.extend(states)
                word_weights.append(np.array(weights.data))
                sent_vectors.append(vec)
            sent_vectors_by_par.append(sent_vectors)

        if drop_sents:
            sent_vectors_by_par = [
                [dropout(v, training) for v in vectors] for vectors in sent_vectors_by_par
            ]

        trace: dict = {"word": word_weights}
        if cfg.levels == 2:
            flat = [v for vectors in sent_vectors_by_par for v in vectors]
            states = bilstm(flat, self.sent_fwd, self.sent_bwd)
            doc_vec, weights = self._pool(states, self.sent_att)
            trace["sentence"] = np.array(weights.data)
        else:
            para_vectors = []
            sent_weights = []
            for vectors in sent_vectors_by_par:
                states = bilstm(vectors, self.sent_fwd, self.sent_bwd)
                vec, weights = self._pool(states, self.sent_att)
                para_vectors.append(vec)
                sent_weights.append(np.array(weights.data))
            states = bilstm(para_vectors, self.para_fwd, self.para_bwd)
            doc_vec, weights = self._pool(states, self.para_att)
            trace["sentence"] = sent_weights
            trace["paragraph"] = np.array(weights.data)
        return EncodeResult(doc_vec, word_states, word_inputs, trace)

    def score_coherence(self, doc_vector: Tensor) -> Tensor:
        """Independent sigmoid score per class from the document vector."""
        return sigmoid(matmul(self.w_score, doc_vector))

    def predict_gr(self, word_states: list[Tensor]) -> list[Tensor]:
        """Per-word distributions over the grammatical-role inventory."""
        if self.config.variant not in GR_PREDICTING:
            raise ValueError(f"variant {self.config.variant!r} has no grammatical-role head")
        return [softmax(matmul(self.w_gr, h)) for h in word_states]

    def forward(
        self,
        doc: Document,
        training: bool = False,
        dropout: Dropout | None = None,
        predict_roles: bool | None = None,
    ) -> CoherencePrediction:
        enc = self.encode_document(doc, training=training, dropout=dropout)
        score = self.score_coherence(enc.doc_vector)
        if predict_roles is None:
            predict_roles = self.config.variant in GR_PREDICTING
        gr_probs = self.predict_gr(enc.word_states) if predict_roles else None
        return CoherencePrediction(score, gr_probs, enc.doc_vector, enc.attention_trace)


def build_model(
    cfg: CoherenceModelConfig,
    train_corpus: Corpus,
    embeddings=None,
    seed: int = 0,
) -> CoherenceModel:
    """Construct a model whose vocabularies come from a training corpus."""
    surfaces = [t.surface for d in train_corpus for t in d.tokens]
    word_table = EmbeddingTable.build(
        surfaces,
        cfg.embed_dim,
        _component_rng(seed, "embed.word"),
        pretrained=embeddings,
        trainable=cfg.trainable_embeddings,
    )
    gr_vocab = None
    gr_table = None
    if cfg.variant in GR_PREDICTING:
        mode = "sox" if cfg.variant == MTL_SOX else "full"
        gr_vocab = GRVocabulary.from_corpus(train_corpus, mode)
    elif cfg.variant == CONCAT_GRS:
        inventory = GRVocabulary.from_corpus(train_corpus, "full")
        gr_table = EmbeddingTable.build(
            inventory.classes,
            cfg.gr_embed_dim,
            _component_rng(seed, "embed.gr"),
            unk_token=None,
            fold_case=False,
        )
    return CoherenceModel(cfg, word_table, gr_vocab, gr_table, seed)


# ---------------------------------------------------------------------------
# losses


def loss_binary(y: int, y_hat: Tensor) -> Tensor:
    """Negative log-likelihood of a binary coherence score.

    The score is clamped to [1e-7, 1-1e-7] before the log.
    """
    if y not in (0, 1):
        raise ValueError(f"binary target must be 0 or 1, got {y!r}")
    if y_hat.data.size != 1:
        raise ShapeMismatchError(f"binary score must be scalar, got shape {y_hat.shape}")
    p = clamp(y_hat, PROB_FLOOR, 1.0 - PROB_FLOOR)
    if y == 1:
        return scale(tlog(p), -1.0)
    return scale(tlog(_one_minus(p)), -1.0)


def _one_minus(t: Tensor) -> Tensor:
    return add(scale(t, -1.0), Tensor(np.ones(t.shape)))


def loss_multiclass(y_onehot, y_hat: Tensor) -> Tensor:
    """Mean squared error between a one-hot target and the score vector."""
    target = np.asarray(y_onehot, dtype=np.float64)
    if target.ndim != 1 or y_hat.data.ndim != 1 or target.shape != y_hat.data.shape:
        raise ShapeMismatchError(
            f"multiclass loss wants matching vectors, got {target.shape} vs {y_hat.shape}"
        )
    if not (np.isin(target, (0.0, 1.0)).all() and target.sum() == 1.0):
        raise ValueError(f"target must be one-hot, got {target.tolist()}")
    diff = sub(Tensor(target), y_hat)
    return mean_all(mul(diff, diff))


def loss_gr(gold_ids: list[int | None], dists: list[Tensor]) -> Tensor:
    """Summed (not averaged) cross-entropy over a document's words.

    ``None`` entries are masked out; if every word is masked the loss is
    zero and a warning is logged.
    """
    if len(gold_ids) != len(dists):
        raise ShapeMismatchError(
            f"{len(gold_ids)} gold labels vs {len(dists)} distributions"
        )
    total: Tensor | None = None
    for gold, dist in zip(gold_ids, dists):
        if gold is None:
            continue
        if not 0 <= gold < dist.data.shape[0]:
            raise IndexError(f"gold class {gold} outside distribution of size {dist.data.shape[0]}")
        term = scale(tlog(pick(dist, gold)), -1.0)
        total = term if total is None else add(total, term)
    if total is None:
        logger.warning("grammatical-role loss: every word in the document is masked")
        return Tensor(np.zeros(()))
    return total


def loss_total(l1: Tensor, l2: Tensor | None, alpha: float, beta: float) -> Tensor:
    """Weighted sum alpha*L1 + beta*L2; L2 may be absent only when beta=0."""
    if not 0.0 <= alpha <= 1.0 or not 0.0 <= beta <= 1.0:
        raise ValueError(f"loss weights must lie in [0, 1], got alpha={alpha} beta={beta}")
    if l2 is None:
        if beta != 0.0:
            raise ValueError("beta is nonzero but no auxiliary loss was provided")
        return scale(l1, alpha)
    return add(scale(l1, alpha), scale(l2, beta))


def document_loss(
    model: CoherenceModel,
    doc: Document,
    training: bool = False,
    dropout: Dropout | None = None,
) -> Tensor:
    """Total training loss for one document under the model's variant."""
    cfg = model.config
    pred = model.forward(doc, training=training, dropout=dropout)
    if cfg.num_classes == 1:
        if doc.label.kind != BINARY:
            raise DataError(f"document {doc.id!r} has a {doc.label.kind} label; model is binary")
        l1 = loss_binary(doc.label.value, pick(pred.score, 0))
    else:
        if doc.label.kind == BINARY:
            raise DataError(f"document {doc.id!r} has a binary label; model expects classes")
        if not 0 <= doc.label.value < cfg.num_classes:
            raise DataError(
                f"document {doc.id!r} label {doc.label.value} outside {cfg.num_classes} classes"
            )
        onehot = np.zeros(cfg.num_classes)
        onehot[doc.label.value] = 1.0
        l1 = loss_multiclass(onehot, pred.score)
    l2 = None
    if cfg.variant in GR_PREDICTING:
        gold = [model.gr_vocab.encode(tok.gr) for tok in doc.tokens]
        l2 = loss_gr(gold, pred.gr_probs)
    return loss_total(l1, l2, cfg.alpha, cfg.beta)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """A self-contained model snapshot: config, vocabularies, and every
    named weight tensor as row-major float64 values."""

    config: CoherenceModelConfig
    word_vocab: list[str]
    word_trainable: bool
    gr_classes: list[str] | None
    gr_mode: str | None
    params: dict[str, np.ndarray]

    @classmethod
    def from_model(cls, model: CoherenceModel) -> "Checkpoint":
        gr_classes = None
        gr_mode = None
        if model.gr_vocab is not None:
            gr_classes = list(model.gr_vocab.classes)
            gr_mode = model.gr_vocab.mode
        elif model.gr_table is not None:
            gr_classes = model.gr_table.ordered_tokens()
        return cls(
            config=CoherenceModelConfig.from_dict(model.config.to_dict()),
            word_vocab=model.word_table.ordered_tokens(),
            word_trainable=model.word_table.trainable,
            gr_classes=gr_classes,
            gr_mode=gr_mode,
            params={name: np.array(t.data) for name, t in model.named_tensors()},
        )

    def to_model(self) -> CoherenceModel:
        cfg = self.config
        vocab = {tok: i for i, tok in enumerate(self.word_vocab)}
        word_table = EmbeddingTable(
            vocab, Tensor(self.params["embed.word"]), trainable=self.word_trainable
        )
        gr_vocab = None
        gr_table = None
        if cfg.variant in GR_PREDICTING:
            gr_vocab = GRVocabulary(list(self.gr_classes), self.gr_mode)
        elif cfg.variant == CONCAT_GRS:
            gr_table = EmbeddingTable(
                {c: i for i, c in enumerate(self.gr_classes)},
                Tensor(self.params["embed.gr"]),
                unk_token=None,
                fold_case=False,
            )
        model = CoherenceModel(cfg, word_table, gr_vocab, gr_table)
        for name, tensor in model.named_tensors():
            stored = self.params.get(name)
            if stored is None:
                raise DataError(f"checkpoint is missing parameter {name!r}")
            if stored.shape != tensor.data.shape:
                raise ShapeMismatchError(
                    f"checkpoint parameter {name!r} has shape {stored.shape}, "
                    f"model wants {tensor.data.shape}"
                )
            tensor.data = np.ascontiguousarray(stored, dtype=np.float64)
        return model

    def to_json(self) -> str:
        payload = {
            "format_version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "word_vocab": self.word_vocab,
            "word_trainable": self.word_trainable,
            "gr_classes": self.gr_classes,
            "gr_mode": self.gr_mode,
            "parameters": [
                {
                    "name": name,
                    "shape": list(arr.shape),
                    "values": arr.reshape(-1).tolist(),
                }
                for name, arr in self.params.items()
            ],
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path.name}: invalid checkpoint JSON ({exc})") from exc
        version = payload.get("format_version")
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{path.name}: unsupported checkpoint version {version!r}")
        try:
            params = {
                entry["name"]: np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
                for entry in payload["parameters"]
            }
            return cls(
                config=CoherenceModelConfig.from_dict(payload["config"]),
                word_vocab=list(payload["word_vocab"]),
                word_trainable=bool(payload["word_trainable"]),
                gr_classes=payload.get("gr_classes"),
                gr_mode=payload.get("gr_mode"),
                params=params,
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"{path.name}: malformed checkpoint ({exc})") from exc
