"""cohkit: a from-scratch toolkit for neural discourse-coherence scoring.

Hierarchical attention encoders over words, sentences, and (optionally)
paragraphs score how coherent a document reads; joint variants add a
per-word grammatical-role prediction task.  Everything runs on a small
tape-based reverse-mode autodiff engine.
"""

from .autograd import Parameter, Tape, Tensor, backward
from .data import (
    CoherenceLabel,
    Corpus,
    DataError,
    Document,
    GRVocabulary,
    Origin,
    SynthSpec,
    Token,
    generate_permutations,
    ingest_conllu,
    load_embeddings,
    min_adjacent_transpositions,
    read_jsonl,
    reduce_sox,
    synth_corpus,
    write_jsonl,
)
from .evaluation import (
    EvalReport,
    accuracy_3way,
    evaluate_corpus,
    f1_per_class,
    pearson,
    pra,
    saliency,
    saliency_html,
    similarity_from_transpositions,
    tpra,
)
from .model import (
    Checkpoint,
    CoherenceModel,
    CoherenceModelConfig,
    build_model,
    loss_binary,
    loss_gr,
    loss_multiclass,
    loss_total,
)
from .training import (
    HistoryRow,
    NumericError,
    TrainConfig,
    ensemble_predict,
    train,
    train_ensemble,
)

__version__ = "0.1.0"
