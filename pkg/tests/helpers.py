"""Shared oracles and fixtures for the test suite.

Everything in here is deliberately independent of the library's own
machinery: finite differences instead of the tape, plain Python loops
instead of numpy matmuls, breadth-first search instead of inversion
counting.  Tests compare library output against these references.
"""

import math
from collections import deque

import numpy as np

from cohkit.autograd import Tape, Tensor, backward
from cohkit.data import (
    CoherenceLabel,
    Corpus,
    Document,
    Origin,
    ORIGINAL,
    SynthSpec,
    Token,
    generate_permutations,
    synth_corpus,
)
from cohkit.model import CoherenceModel, CoherenceModelConfig, build_model


# ---------------------------------------------------------------------------
# gradient checking


def analytic_gradients(loss_fn, params):
    """Run loss_fn under a tape and return {name: grad copy}."""
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    backward(loss, tape)
    return {p.name: np.array(p.tensor.grad, copy=True) for p in params}


def numeric_gradients(loss_fn, params, h=1e-5):
    """Central finite differences of loss_fn over every coordinate.

    loss_fn is re-evaluated with perturbed parameter storage; no tape is
    involved, so this is a genuinely independent estimate.
    """
    out = {}
    for p in params:
        flat = p.tensor.data.reshape(-1)
        grad = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(loss_fn().data)
            flat[i] = orig - h
            lo = float(loss_fn().data)
            flat[i] = orig
            grad[i] = (hi - lo) / (2.0 * h)
        out[p.name] = grad.reshape(p.tensor.data.shape)
    return out


def max_relative_error(analytic, numeric, floor=1e-6):
    """Worst-case relative error between two gradient dicts.

    Coordinates where both magnitudes sit below `floor` are skipped:
    at that scale central differences are dominated by roundoff and a
    relative comparison is meaningless.
    """
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        assert a.shape == n.shape, name
        for x, y in zip(a.reshape(-1), n.reshape(-1)):
            denom = max(abs(x), abs(y))
            if denom < floor:
                continue
            worst = max(worst, abs(x - y) / denom)
    return worst


def gradient_check(loss_fn, params, h=1e-5, floor=1e-6):
    a = analytic_gradients(loss_fn, params)
    n = numeric_gradients(loss_fn, params, h=h)
    return max_relative_error(a, n, floor=floor)


# ---------------------------------------------------------------------------
# scalar LSTM reference


def _sig(v):
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def _mat_vec(w, v):
    return [sum(wr[c] * v[c] for c in range(len(v))) for wr in w]


def lstm_step_reference(x, h_prev, c_prev, p):
    """One LSTM step computed with plain Python floats.

    Mirrors the gate layout (input, forget, candidate, output) without
    touching numpy, so any agreement with the library is structural
    rather than shared-code coincidence.
    """
    w = {name: t.data.tolist() for name, t in p.named("")}
    x, h_prev, c_prev = list(x), list(h_prev), list(c_prev)
    hd = p.hidden_dim
    i_gate = [
        _sig(a + b + w[".b_i"][k])
        for k, (a, b) in enumerate(zip(_mat_vec(w[".w_ii"], x), _mat_vec(w[".w_hi"], h_prev)))
    ]
    f_gate = [
        _sig(a + b + w[".b_f"][k])
        for k, (a, b) in enumerate(zip(_mat_vec(w[".w_if"], x), _mat_vec(w[".w_hf"], h_prev)))
    ]
    g = [
        math.tanh(a + b + w[".b_g"][k])
        for k, (a, b) in enumerate(zip(_mat_vec(w[".w_ig"], x), _mat_vec(w[".w_hg"], h_prev)))
    ]
    o_gate = [
        _sig(a + b + w[".b_o"][k])
        for k, (a, b) in enumerate(zip(_mat_vec(w[".w_io"], x), _mat_vec(w[".w_ho"], h_prev)))
    ]
    c = [f_gate[k] * c_prev[k] + i_gate[k] * g[k] for k in range(hd)]
    h = [o_gate[k] * math.tanh(c[k]) for k in range(hd)]
    return h, c


# ---------------------------------------------------------------------------
# combinatorial oracles


def bfs_swap_distance(original, target):
    """Shortest number of adjacent transpositions from original to target."""
    original, target = tuple(original), tuple(target)
    if original == target:
        return 0
    seen = {original}
    queue = deque([(original, 0)])
    while queue:
        state, d = queue.popleft()
        for i in range(len(state) - 1):
            nxt = state[:i] + (state[i + 1], state[i]) + state[i + 2 :]
            if nxt == target:
                return d + 1
            if nxt not in seen:
                seen.add(nxt)
                queue.append((nxt, d + 1))
    raise ValueError("target is not a permutation of original")


def brute_pra(scored):
    wins = total = 0
    for orig, perms in scored:
        for p in perms:
            total += 1
            if orig > p:
                wins += 1
    return wins / total


def brute_tpra(scored):
    pool = [p for _, perms in scored for p in perms]
    wins = total = 0
    for orig, _ in scored:
        for p in pool:
            total += 1
            if orig > p:
                wins += 1
    return wins / total


# ---------------------------------------------------------------------------
# corpus / model factories


def make_doc(sentences, doc_id="doc-1", label=None, origin=ORIGINAL, paragraphs=None):
    """Build a Document from [["w1", "w2"], ...] or [("w1", "nsubj"), ...]."""
    if label is None:
        label = CoherenceLabel("binary", 1)

    def tok(t):
        if isinstance(t, tuple):
            return Token(t[0], t[1])
        return Token(t)

    sents = [[tok(t) for t in s] for s in sentences]
    if paragraphs is None:
        paras = [sents]
    else:
        paras, i = [], 0
        for size in paragraphs:
            paras.append(sents[i : i + size])
            i += size
    return Document(doc_id, paras, label, origin)


def tiny_binary_corpus(num_docs=4, perms=2, seed=11, sents=3, words=4, vocab=30):
    """Small coherent/permuted corpus with positional GR labels."""
    spec = SynthSpec(
        num_docs=num_docs,
        vocab_size=vocab,
        sents_per_doc=sents,
        words_per_sent=words,
        seed=seed,
    )
    docs = list(synth_corpus(spec))
    for d in list(docs):
        docs.extend(generate_permutations(d, perms, seed=seed + 1))
    return Corpus(docs)


def tiny_config(variant="stl", **overrides):
    base = dict(
        variant=variant,
        levels=2,
        embed_dim=5,
        word_hidden=4,
        sent_hidden=4,
        para_hidden=4,
        num_classes=1,
        alpha=1.0,
        beta=0.0,
        gr_embed_dim=3,
    )
    if variant in ("mtl", "mtl_sox"):
        base.update(alpha=0.7, beta=0.3)
    base.update(overrides)
    return CoherenceModelConfig(**base)


def tiny_model(variant="stl", corpus=None, seed=0, **overrides):
    if corpus is None:
        corpus = tiny_binary_corpus()
    cfg = tiny_config(variant, **overrides)
    return build_model(cfg, corpus, embeddings=None, seed=seed), corpus


def graded_corpus(num_docs=9, seed=7, sents=3, words=4):
    """Three-class corpus with paragraph boundaries for 3-level models."""
    spec = SynthSpec(
        num_docs=num_docs,
        vocab_size=30,
        sents_per_doc=sents,
        words_per_sent=words,
        seed=seed,
    )
    docs = []
    for i, d in enumerate(synth_corpus(spec)):
        sentences = d.sentences
        half = max(1, len(sentences) // 2)
        docs.append(
            Document(
                d.id,
                [sentences[:half], sentences[half:]],
                CoherenceLabel("graded", i % 3),
                ORIGINAL,
            )
        )
    return Corpus(docs)
