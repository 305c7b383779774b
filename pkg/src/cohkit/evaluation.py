"""Evaluation: pairwise ranking accuracies, graded accuracy, rank
correlation against permutation distance, per-class F1, gradient-based
token saliency, and the JSON evaluation report."""

from __future__ import annotations

import html
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tape, pick
from .data import Corpus, DataError, Document, min_adjacent_transpositions
from .model import GR_PREDICTING, Checkpoint, CoherenceModel

log = logging.getLogger(__name__)

__all__ = [
    "pra",
    "tpra",
    "accuracy_3way",
    "micro_accuracy",
    "pearson",
    "similarity_from_transpositions",
    "f1_per_class",
    "group_by_source",
    "predict_score_vector",
    "predict_scalar",
    "predict_class",
    "predict_roles",
    "ensemble_score_vector",
    "saliency",
    "saliency_html",
    "EvalReport",
    "evaluate_corpus",
    "similarity_scatter",
    "EVAL_METRICS",
]

EVAL_METRICS = ("pra", "tpra", "accuracy", "pearson", "f1")


# ---------------------------------------------------------------------------
# metrics on plain numbers


def pra(scored: list[tuple[float, list[float]]]) -> float:
    """Pairwise ranking accuracy: fraction of (original, own permutation)
    pairs where the original scores strictly higher.  Ties count wrong."""
    wins = 0
    pairs = 0
    for original, permuted in scored:
        for p in permuted:
            pairs += 1
            if original > p:
                wins += 1
    if pairs == 0:
        raise DataError("pra needs at least one (original, permutation) pair")
    return wins / pairs


def tpra(scored: list[tuple[float, list[float]]]) -> float:
    """Total pairwise ranking accuracy: every original is compared against
    every permuted document in the pool, not just its own."""
    pool = [p for _, permuted in scored for p in permuted]
    if not pool or not scored:
        raise DataError("tpra needs originals and a non-empty permutation pool")
    wins = sum(1 for original, _ in scored for p in pool if original > p)
    return wins / (len(scored) * len(pool))


def accuracy_3way(gold: list[int], predicted: list[int]) -> float:
    if len(gold) != len(predicted):
        raise DataError(f"accuracy: {len(gold)} gold labels vs {len(predicted)} predictions")
    if not gold:
        raise DataError("accuracy needs at least one label")
    return sum(1 for g, p in zip(gold, predicted) if g == p) / len(gold)


def micro_accuracy(gold: list, predicted: list) -> float:
    """Micro-averaged accuracy = fraction of exact label matches."""
    return accuracy_3way(list(gold), list(predicted))


def pearson(x, y) -> float:
    """Pearson correlation; constant input raises because the value is
    undefined there."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError(f"pearson wants two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise DataError("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt((dx * dx).sum())
    sy = np.sqrt((dy * dy).sum())
    if sx == 0.0 or sy == 0.0:
        raise DataError("pearson is undefined for a constant input")
    return float((dx * dy).sum() / (sx * sy))


def similarity_from_transpositions(perm, original) -> float:
    """1 - transpositions/max possible; 1.0 for identity, 0.0 for reversal."""
    n = len(list(original))
    if n < 2:
        return 1.0
    worst = n * (n - 1) / 2
    return 1.0 - min_adjacent_transpositions(perm, original) / worst


def f1_per_class(gold: list, predicted: list, cls) -> float:
    """F1 of one class; a class absent from both gold and predictions has
    no defined F1 and yields 0 with a warning."""
    if len(gold) != len(predicted):
        raise DataError(f"f1: {len(gold)} gold labels vs {len(predicted)} predictions")
    tp = sum(1 for g, p in zip(gold, predicted) if g == cls and p == cls)
    fp = sum(1 for g, p in zip(gold, predicted) if g != cls and p == cls)
    fn = sum(1 for g, p in zip(gold, predicted) if g == cls and p != cls)
    if tp == fp == fn == 0:
        log.warning("f1 for class %r is undefined (never predicted, never gold); reporting 0", cls)
        return 0.0
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# model-facing helpers


def group_by_source(corpus: Corpus) -> list[tuple[Document, list[Document]]]:
    """Pair each original with its own permutations, dropping originals
    that have none."""
    by_source: dict[str, list[Document]] = {}
    for doc in corpus.permuted():
        by_source.setdefault(doc.origin.source, []).append(doc)
    groups = []
    for original in corpus.originals():
        permuted = by_source.get(original.id, [])
        if permuted:
            groups.append((original, permuted))
    return groups


def predict_score_vector(model: CoherenceModel, doc: Document) -> np.ndarray:
    """Per-class sigmoid scores with dropout off and no recording."""
    pred = model.forward(doc, training=False, dropout=None, predict_roles=False)
    return np.array(pred.score.data)


def predict_scalar(model: CoherenceModel, doc: Document) -> float:
    vec = predict_score_vector(model, doc)
    if vec.shape != (1,):
        raise DataError(f"scalar score needs a binary model, got {vec.shape[0]} classes")
    return float(vec[0])


def predict_class(model: CoherenceModel, doc: Document) -> int:
    return int(np.argmax(predict_score_vector(model, doc)))


def predict_roles(model: CoherenceModel, doc: Document) -> list[str]:
    """Predicted grammatical-role class string per token, in order."""
    pred = model.forward(doc, training=False, dropout=None, predict_roles=True)
    return [model.gr_vocab.decode(int(np.argmax(d.data))) for d in pred.gr_probs]


def ensemble_score_vector(models: list[CoherenceModel], doc: Document) -> np.ndarray:
    """Arithmetic mean of the member models' score vectors."""
    if not models:
        raise ValueError("ensemble needs at least one model")
    first = models[0].config.to_dict()
    for m in models[1:]:
        if m.config.to_dict() != first:
            raise ValueError("ensemble member configs differ")
    scores = np.stack([predict_score_vector(m, doc) for m in models])
    return scores.mean(axis=0)


# ---------------------------------------------------------------------------
# saliency


def saliency(model: CoherenceModel, doc: Document) -> list[tuple[str, float]]:
    """Per-token salience: the L2 norm of the score's gradient with
    respect to that token's input embedding vector (dropout off).

    A multi-class model differentiates its highest-scoring class.
    """
    with Tape() as tape:
        enc = model.encode_document(doc, training=False, dropout=None)
        score = model.score_coherence(enc.doc_vector)
        target = pick(score, int(np.argmax(score.data)))
    tape.backward(target)
    records = []
    for token, vec in zip(doc.tokens, enc.word_inputs):
        grad = vec.grad if vec.grad is not None else np.zeros_like(vec.data)
        records.append((token.surface, float(np.linalg.norm(grad))))
    return records


def saliency_html(doc: Document, records: list[tuple[str, float]]) -> str:
    """Render salience as an HTML page: exactly one shaded span per token,
    opacity proportional to its norm (normalized by the document max)."""
    norms = [norm for _, norm in records]
    top = max(norms) if norms and max(norms) > 0 else 1.0
    spans = iter(records)
    lines = [
        "<!DOCTYPE html>",
        "<html><head><meta charset=\"utf-8\">",
        f"<title>saliency: {html.escape(doc.id)}</title></head>",
        "<body style=\"font-family: sans-serif; line-height: 1.8;\">",
        f"<h1 style=\"font-size: 1.1em;\">{html.escape(doc.id)}</h1>",
    ]
    for sentence in doc.sentences:
        parts = []
        for _ in sentence:
            surface, norm = next(spans)
            alpha = norm / top
            parts.append(
                f"<span style=\"background-color: rgba(214,39,40,{alpha:.3f});\">"
                f"{html.escape(surface)}</span>"
            )
        lines.append("<p>" + " ".join(parts) + "</p>")
    lines.append("</body></html>")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# the evaluation report


@dataclass
class EvalReport:
    """Results of one evaluation pass, ready for JSON serialization."""

    metrics: dict[str, float] = field(default_factory=dict)
    f1_per_class: dict[str, float] = field(default_factory=dict)
    counts: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "metrics": self.metrics,
            "f1_per_class": self.f1_per_class,
            "counts": self.counts,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _similarity_pairs(corpus: Corpus) -> tuple[list[float], list[Document]]:
    originals = {d.id for d in corpus.originals()}
    sims: list[float] = []
    docs: list[Document] = []
    for doc in corpus.permuted():
        if doc.origin.order is None or doc.origin.source not in originals:
            continue
        n = len(doc.origin.order)
        sims.append(similarity_from_transpositions(list(doc.origin.order), list(range(n))))
        docs.append(doc)
    return sims, docs


def similarity_scatter(
    checkpoints: list[Checkpoint], corpus: Corpus
) -> tuple[list[float], list[float]]:
    """(similarity, ensemble score) pairs for permuted documents whose
    sentence order was recorded; feeds the correlation figure."""
    models = [c.to_model() for c in checkpoints]
    sims, docs = _similarity_pairs(corpus)
    scores = [float(ensemble_score_vector(models, d)[0]) for d in docs]
    return sims, scores


def evaluate_corpus(
    checkpoints: list[Checkpoint],
    corpus: Corpus,
    metrics: list[str],
) -> EvalReport:
    """Score a corpus with an ensemble and compute the requested metrics.

    ``metrics`` is a subset of {pra, tpra, accuracy, pearson, f1}; the
    report contains exactly what was asked for, plus document counts.
    """
    unknown = set(metrics) - set(EVAL_METRICS)
    if unknown:
        raise DataError(f"unknown metrics: {sorted(unknown)}")
    if not metrics:
        raise DataError("no metrics requested")
    models = [c.to_model() for c in checkpoints]
    report = EvalReport()
    report.counts["documents"] = len(corpus)
    report.counts["originals"] = len(corpus.originals())
    report.counts["permuted"] = len(corpus.permuted())
    report.counts["ensemble_size"] = len(models)

    scalar_cache: dict[str, float] = {}

    def scalar(doc: Document) -> float:
        if doc.id not in scalar_cache:
            vec = ensemble_score_vector(models, doc)
            if vec.shape != (1,):
                raise DataError("ranking metrics need a binary (single-score) model")
            scalar_cache[doc.id] = float(vec[0])
        return scalar_cache[doc.id]

    if "pra" in metrics or "tpra" in metrics:
        groups = group_by_source(corpus)
        scored = [(scalar(orig), [scalar(p) for p in perms]) for orig, perms in groups]
        if "pra" in metrics:
            report.metrics["pra"] = pra(scored)
            report.counts["pra_pairs"] = sum(len(p) for _, p in scored)
        if "tpra" in metrics:
            report.metrics["tpra"] = tpra(scored)
            pool = sum(len(p) for _, p in scored)
            report.counts["tpra_pairs"] = len(scored) * pool

    if "accuracy" in metrics:
        gold = [d.label.value for d in corpus]
        predicted = [int(np.argmax(ensemble_score_vector(models, d))) for d in corpus]
        report.metrics["accuracy"] = accuracy_3way(gold, predicted)

    if "pearson" in metrics:
        sims, docs = _similarity_pairs(corpus)
        if len(sims) < 2:
            raise DataError(
                "pearson needs at least two permuted documents with recorded orders"
            )
        scores = [scalar(d) for d in docs]
        report.metrics["pearson"] = pearson(sims, scores)
        report.counts["pearson_points"] = len(sims)

    if "f1" in metrics:
        model = models[0]
        if model.config.variant not in GR_PREDICTING:
            raise DataError("f1 over grammatical roles needs an mtl or mtl_sox model")
        gold_all: list[str] = []
        pred_all: list[str] = []
        for doc in corpus:
            predictions = predict_roles(model, doc)
            for token, predicted in zip(doc.tokens, predictions):
                if token.gr is None or model.gr_vocab.encode(token.gr) is None:
                    continue
                gold_all.append(model.gr_vocab.decode(model.gr_vocab.encode(token.gr)))
                pred_all.append(predicted)
        if not gold_all:
            raise DataError("f1 requested but the corpus carries no usable role labels")
        for cls in model.gr_vocab.classes:
            if cls in gold_all or cls in pred_all:
                report.f1_per_class[cls] = f1_per_class(gold_all, pred_all, cls)
        report.counts["gr_tokens"] = len(gold_all)

    return report
