"""Corpus handling: documents and labels, CoNLL-U ingestion, grammatical
role vocabularies, sentence-order permutation, pretrained embedding
loading, and deterministic synthetic corpus generation.

The on-disk corpus format is JSON Lines, one document per line:

    {"id": ..., "label": {"kind": "binary"|"graded", "value": int},
     "paragraphs": [[[ [surface] | [surface, gr], ... ], ...], ...],
     "origin": {"kind": "original"} |
               {"kind": "permutation", "source": id, "index": k,
                "order": [...]}}
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "DataError",
    "Token",
    "CoherenceLabel",
    "Origin",
    "Document",
    "Corpus",
    "GRVocabulary",
    "reduce_sox",
    "ingest_conllu",
    "read_jsonl",
    "write_jsonl",
    "generate_permutations",
    "min_adjacent_transpositions",
    "EmbeddingMatrix",
    "load_embeddings",
    "GrRule",
    "SynthSpec",
    "synth_corpus",
]

BINARY = "binary"
GRADED = "graded"
GRADED_VALUES = (0, 1, 2)

ROOT_RELATION = "root"

SOX_SUBJECT = ("nsubj", "csubj")
SOX_OBJECT = ("dobj", "iobj", "nsubjpass", "csubjpass")
SOX_CLASSES = ["S", "O", "X"]


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class Token:
    surface: str
    gr: str | None = None


@dataclass(frozen=True)
class CoherenceLabel:
    kind: str
    value: int

    def __post_init__(self):
        if self.kind == BINARY:
            if self.value not in (0, 1):
                raise DataError(f"binary label must be 0 or 1, got {self.value}")
        elif self.kind == GRADED:
            if self.value not in GRADED_VALUES:
                raise DataError(f"graded label must be one of {GRADED_VALUES}, got {self.value}")
        else:
            raise DataError(f"unknown label kind {self.kind!r}")


@dataclass(frozen=True)
class Origin:
    kind: str = "original"
    source: str | None = None
    index: int | None = None
    order: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("original", "permutation"):
            raise DataError(f"unknown origin kind {self.kind!r}")
        if self.kind == "permutation" and (self.source is None or self.index is None):
            raise DataError("permutation origin needs a source id and an index")


ORIGINAL = Origin()


@dataclass
class Document:
    """One text: ordered paragraphs of ordered sentences of tokens."""

    id: str
    paragraphs: list[list[list[Token]]]
    label: CoherenceLabel
    origin: Origin = ORIGINAL

    @property
    def sentences(self) -> list[list[Token]]:
        return [s for paragraph in self.paragraphs for s in paragraph]

    @property
    def tokens(self) -> list[Token]:
        return [t for s in self.sentences for t in s]

    def validate(self) -> None:
        if not self.paragraphs or not any(self.paragraphs):
            raise DataError(f"document {self.id!r} has no sentences")
        for paragraph in self.paragraphs:
            for sentence in paragraph:
                if not sentence:
                    raise DataError(f"document {self.id!r} contains an empty sentence")


@dataclass
class Corpus:
    documents: list[Document] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    @property
    def label_kind(self) -> str:
        kinds = {d.label.kind for d in self.documents}
        if len(kinds) != 1:
            raise DataError(f"corpus mixes label kinds: {sorted(kinds)}")
        return kinds.pop()

    @property
    def has_paragraph_boundaries(self) -> bool:
        return any(len(d.paragraphs) > 1 for d in self.documents)

    def originals(self) -> list[Document]:
        return [d for d in self.documents if d.origin.kind == "original"]

    def permuted(self) -> list[Document]:
        return [d for d in self.documents if d.origin.kind == "permutation"]

    def has_gr_labels(self) -> bool:
        return any(t.gr is not None for d in self.documents for t in d.tokens)


def reduce_sox(gr: str) -> str:
    """Collapse a grammatical relation onto {S, O, X}."""
    if gr in SOX_SUBJECT:
        return "S"
    if gr in SOX_OBJECT:
        return "O"
    return "X"


@dataclass
class GRVocabulary:
    """Closed inventory of grammatical-role classes.

    ``full`` mode keeps every relation observed in training data (plus
    "root"); ``sox`` collapses everything onto subject/object/other.
    encode() maps raw relation strings to class indices, returning None
    for relations outside a full vocabulary so they can be masked.
    """

    classes: list[str]
    mode: str = "full"

    def __post_init__(self):
        if self.mode not in ("full", "sox"):
            raise DataError(f"unknown GR vocabulary mode {self.mode!r}")
        if len(set(self.classes)) != len(self.classes):
            raise DataError("GR vocabulary contains duplicate classes")
        self._index = {c: i for i, c in enumerate(self.classes)}

    def __len__(self) -> int:
        return len(self.classes)

    @classmethod
    def from_corpus(cls, corpus: Corpus, mode: str = "full") -> "GRVocabulary":
        if mode not in ("full", "sox"):
            raise DataError(f"unknown GR vocabulary mode {mode!r}")
        if mode == "sox":
            return cls(list(SOX_CLASSES), "sox")
        seen = {t.gr for d in corpus for t in d.tokens if t.gr is not None}
        seen.add(ROOT_RELATION)
        return cls(sorted(seen), "full")

    def encode(self, gr: str | None) -> int | None:
        if gr is None:
            return None
        if self.mode == "sox":
            return self._index[reduce_sox(gr)]
        return self._index.get(gr)

    def decode(self, i: int) -> str:
        return self.classes[i]


# ---------------------------------------------------------------------------
# CoNLL-U ingestion

_CONLLU_COLUMNS = 10
_ID, _FORM, _LEMMA, _UPOS, _XPOS, _FEATS, _HEAD, _DEPREL, _DEPS, _MISC = range(10)


def ingest_conllu(path: str | Path) -> Corpus:
    """Read a CoNLL-U file into a corpus of coherent originals.

    ``# newdoc`` and ``# newpar`` comments delimit documents and
    paragraphs; a blank line ends a sentence.  Multiword-token ranges
    and empty nodes are skipped.  A token's grammatical relation is its
    DEPREL lower-cased, with HEAD=0 forced to "root".
    """
    path = Path(path)
    docs: list[Document] = []
    doc_id: str | None = None
    paragraphs: list[list[list[Token]]] = []
    sentence: list[Token] = []
    counter = 0

    def close_sentence():
        nonlocal sentence
        if sentence:
            if not paragraphs:
                paragraphs.append([])
            paragraphs[-1].append(sentence)
            sentence = []

    def close_document():
        nonlocal paragraphs, doc_id, counter
        close_sentence()
        if any(paragraphs):
            counter += 1
            name = doc_id if doc_id else f"doc{counter:04d}"
            docs.append(
                Document(name, [p for p in paragraphs if p], CoherenceLabel(BINARY, 1))
            )
        paragraphs = []
        doc_id = None

    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                close_sentence()
                continue
            if line.startswith("#"):
                comment = line[1:].strip()
                if comment.startswith("newdoc"):
                    close_document()
                    _, _, rest = comment.partition("=")
                    doc_id = rest.strip() or None
                elif comment.startswith("newpar"):
                    close_sentence()
                    paragraphs.append([])
                continue
            cols = line.split("\t")
            if len(cols) != _CONLLU_COLUMNS:
                raise DataError(
                    f"{path.name}:{lineno}: expected {_CONLLU_COLUMNS} tab-separated "
                    f"columns, found {len(cols)}"
                )
            tok_id = cols[_ID]
            if "-" in tok_id or "." in tok_id:
                continue
            gr = ROOT_RELATION if cols[_HEAD] == "0" else cols[_DEPREL].lower()
            sentence.append(Token(cols[_FORM], gr))
    close_document()
    if not docs:
        raise DataError(f"{path.name}: no sentences found")
    return Corpus(docs)


# ---------------------------------------------------------------------------
# JSON Lines corpus IO


def _doc_to_obj(doc: Document) -> dict:
    origin: dict = {"kind": doc.origin.kind}
    if doc.origin.kind == "permutation":
        origin["source"] = doc.origin.source
        origin["index"] = doc.origin.index
        if doc.origin.order is not None:
            origin["order"] = list(doc.origin.order)
    return {
        "id": doc.id,
        "label": {"kind": doc.label.kind, "value": doc.label.value},
        "paragraphs": [
            [
                [[t.surface] if t.gr is None else [t.surface, t.gr] for t in sentence]
                for sentence in paragraph
            ]
            for paragraph in doc.paragraphs
        ],
        "origin": origin,
    }


def _doc_from_obj(obj: dict, where: str) -> Document:
    try:
        label = CoherenceLabel(obj["label"]["kind"], obj["label"]["value"])
        raw_origin = obj.get("origin", {"kind": "original"})
        order = raw_origin.get("order")
        origin = Origin(
            raw_origin.get("kind", "original"),
            raw_origin.get("source"),
            raw_origin.get("index"),
            tuple(order) if order is not None else None,
        )
        paragraphs = []
        for paragraph in obj["paragraphs"]:
            sentences = []
            for sentence in paragraph:
                tokens = []
                for entry in sentence:
                    if not 1 <= len(entry) <= 2 or not isinstance(entry[0], str):
                        raise DataError(f"bad token entry {entry!r}")
                    tokens.append(Token(entry[0], entry[1] if len(entry) == 2 else None))
                sentences.append(tokens)
            paragraphs.append(sentences)
        doc = Document(str(obj["id"]), paragraphs, label, origin)
    except (KeyError, TypeError, IndexError) as exc:
        raise DataError(f"{where}: malformed document record ({exc})") from exc
    doc.validate()
    return doc


def read_jsonl(path: str | Path) -> Corpus:
    path = Path(path)
    docs = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path.name}:{lineno}: invalid JSON ({exc})") from exc
            docs.append(_doc_from_obj(obj, f"{path.name}:{lineno}"))
    if not docs:
        raise DataError(f"{path.name}: empty corpus")
    return Corpus(docs)


def write_jsonl(corpus: Corpus, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for doc in corpus:
            fh.write(json.dumps(_doc_to_obj(doc), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


# ---------------------------------------------------------------------------
# sentence-order permutation


def _fisher_yates(n: int, rng: np.random.Generator) -> list[int]:
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return order


def _stable_id_hash(text: str) -> int:
    import zlib

    return zlib.crc32(text.encode("utf-8"))


def generate_permutations(doc: Document, k: int, seed: int) -> list[Document]:
    """Produce up to k distinct sentence-order permutations of ``doc``.

    The identity order is never emitted; when the document has fewer
    than k non-identity orders, all n!-1 of them are returned.  Sampling
    is Fisher-Yates with rejection, seeded by (seed, doc id) so a corpus
    pass is reproducible document by document.  Permuted documents carry
    a binary incoherent label, a single flattened paragraph, and record
    their source id, index, and sentence order.
    """
    sentences = doc.sentences
    n = len(sentences)
    if n < 2:
        raise DataError(f"document {doc.id!r} has {n} sentence(s); need at least 2 to permute")
    identity = tuple(range(n))
    total = math.factorial(n) - 1
    orders: list[tuple[int, ...]]
    if total <= k:
        orders = [p for p in itertools.permutations(range(n)) if p != identity]
    else:
        rng = np.random.default_rng([seed, _stable_id_hash(doc.id)])
        chosen: list[tuple[int, ...]] = []
        seen = {identity}
        while len(chosen) < k:
            candidate = tuple(_fisher_yates(n, rng))
            if candidate in seen:
                continue
            seen.add(candidate)
            chosen.append(candidate)
        orders = chosen
    out = []
    for idx, order in enumerate(orders, start=1):
        out.append(
            Document(
                f"{doc.id}.perm-{idx}",
                [[list(sentences[i]) for i in order]],
                CoherenceLabel(BINARY, 0),
                Origin("permutation", doc.id, idx, order),
            )
        )
    return out


def min_adjacent_transpositions(perm, original) -> int:
    """Minimum number of adjacent swaps turning ``perm`` into ``original``.

    Both sequences must contain the same distinct items.  The count is
    the number of inversions of ``perm`` relative to ``original``,
    computed by merge sort.
    """
    perm = list(perm)
    original = list(original)
    if len(set(original)) != len(original):
        raise DataError("ordering contains duplicate items")
    if sorted(map(repr, perm)) != sorted(map(repr, original)):
        raise DataError("sequences are not permutations of each other")
    rank = {item: pos for pos, item in enumerate(original)}
    seq = [rank[item] for item in perm]
    return _count_inversions(seq)


def _count_inversions(seq: list[int]) -> int:
    if len(seq) < 2:
        return 0
    mid = len(seq) // 2
    left, right = seq[:mid], seq[mid:]
    count = _count_inversions(left) + _count_inversions(right)
    merged = []
    i = j = 0
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            merged.append(left[i])
            i += 1
        else:
            count += len(left) - i
            merged.append(right[j])
            j += 1
    merged.extend(left[i:])
    merged.extend(right[j:])
    seq[:] = merged
    return count


# ---------------------------------------------------------------------------
# pretrained embeddings


@dataclass
class EmbeddingMatrix:
    """Pretrained word vectors keyed by surface form."""

    dim: int
    vectors: dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(self.vectors)


def load_embeddings(path: str | Path, dim: int) -> EmbeddingMatrix:
    """Read whitespace-delimited text vectors ("token v1 ... vdim").

    A line whose vector width differs from ``dim`` raises with its line
    number; a token seen twice keeps its first vector and logs a warning.
    """
    path = Path(path)
    vectors: dict[str, np.ndarray] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, rest = parts[0], parts[1:]
            if len(rest) != dim:
                raise DataError(
                    f"{path.name}:{lineno}: expected {dim} vector components, found {len(rest)}"
                )
            if token in vectors:
                log.warning("%s:%d: duplicate token %r keeps its first vector", path.name, lineno, token)
                continue
            try:
                vectors[token] = np.array([float(x) for x in rest])
            except ValueError as exc:
                raise DataError(f"{path.name}:{lineno}: non-numeric component ({exc})") from exc
    if not vectors:
        raise DataError(f"{path.name}: no vectors found")
    return EmbeddingMatrix(dim, vectors)


# ---------------------------------------------------------------------------
# synthetic corpora


@dataclass(frozen=True)
class GrRule:
    """Position-deterministic grammatical-role assignment within a sentence."""

    first: str = "nsubj"
    last: str = "punct"
    default: str = "amod"

    def label_for(self, position: int, length: int) -> str:
        if position == 0:
            return self.first
        if position == length - 1:
            return self.last
        return self.default


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a deterministic synthetic corpus."""

    num_docs: int
    vocab_size: int
    sents_per_doc: int
    words_per_sent: int
    gr_rule: GrRule = GrRule()
    seed: int = 0

    def __post_init__(self):
        for name in ("num_docs", "vocab_size", "sents_per_doc", "words_per_sent"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be positive")
        if self.words_per_sent < 2:
            raise DataError("words_per_sent must be at least 2 to carry the topic chain")
        if self.vocab_size < self._num_topics + 1:
            raise DataError(
                f"vocab_size {self.vocab_size} too small for {self._num_topics} topic "
                "tokens plus filler"
            )

    @property
    def _num_topics(self) -> int:
        return max(3, min(8, self.vocab_size // 6))


def synth_corpus(spec: SynthSpec) -> Corpus:
    """Generate coherent documents whose sentences follow a topic chain.

    A document walks a fixed cycle of topic tokens: sentence i opens
    with topic t(i) and closes with topic t(i+1), so consecutive
    sentences share a link that any sentence-order permutation breaks.
    Interior words are seeded filler draws.  Grammatical roles follow
    the position rule exactly, which makes the auxiliary role task
    learnable from word position alone.
    """
    rng = np.random.default_rng(spec.seed)
    n_topics = spec._num_topics
    topics = [f"t{i}" for i in range(n_topics)]
    fillers = [f"w{i:03d}" for i in range(spec.vocab_size - n_topics)]
    docs = []
    for d in range(spec.num_docs):
        offset = int(rng.integers(0, n_topics))
        sentences = []
        for s in range(spec.sents_per_doc):
            head = topics[(offset + s) % n_topics]
            tail = topics[(offset + s + 1) % n_topics]
            middle = [fillers[int(rng.integers(0, len(fillers)))] for _ in range(spec.words_per_sent - 2)]
            surfaces = [head, *middle, tail]
            sentences.append(
                [
                    Token(surface, spec.gr_rule.label_for(pos, len(surfaces)))
                    for pos, surface in enumerate(surfaces)
                ]
            )
        docs.append(Document(f"synth-{d + 1:04d}", [sentences], CoherenceLabel(BINARY, 1)))
    return Corpus(docs)
