"""Neural building blocks: LSTM cells, bidirectional encoding, attention
pooling, embedding tables, linear maps, and inverted dropout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import (
    ShapeMismatchError,
    Tensor,
    add,
    concat_last_axis,
    matmul,
    mul,
    scale,
    sigmoid,
    softmax,
    stack_rows,
    take_row,
    tanh,
    transpose,
)

__all__ = [
    "glorot",
    "LstmParams",
    "lstm_step",
    "bilstm",
    "AttentionParams",
    "attention_pool",
    "final_state_pool",
    "linear",
    "EmbeddingTable",
    "DropoutSpec",
    "dropout",
    "Dropout",
]

UNK_TOKEN = "<unk>"


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    """Uniform init on +-sqrt(6/(fan_in+fan_out)), shaped [fan_out, fan_in]."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def _glorot_vector(rng: np.random.Generator, n: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (1 + n))
    return rng.uniform(-limit, limit, size=n)


_GATES = ("i", "f", "g", "o")


@dataclass
class LstmParams:
    """Weights for one LSTM direction: four gates, no peepholes.

    Input weights are [hidden, input], recurrent weights [hidden, hidden],
    biases [hidden].  Biases start at zero, including the forget gate.
    """

    input_dim: int
    hidden_dim: int
    w_ii: Tensor
    w_if: Tensor
    w_ig: Tensor
    w_io: Tensor
    w_hi: Tensor
    w_hf: Tensor
    w_hg: Tensor
    w_ho: Tensor
    b_i: Tensor
    b_f: Tensor
    b_g: Tensor
    b_o: Tensor

    def __post_init__(self):
        for name in _GATES:
            wi = getattr(self, f"w_i{name}")
            wh = getattr(self, f"w_h{name}")
            b = getattr(self, f"b_{name}")
            if wi.shape != (self.hidden_dim, self.input_dim):
                raise ShapeMismatchError(
                    f"w_i{name} must be {(self.hidden_dim, self.input_dim)}, got {wi.shape}"
                )
            if wh.shape != (self.hidden_dim, self.hidden_dim):
                raise ShapeMismatchError(
                    f"w_h{name} must be {(self.hidden_dim, self.hidden_dim)}, got {wh.shape}"
                )
            if b.shape != (self.hidden_dim,):
                raise ShapeMismatchError(f"b_{name} must be {(self.hidden_dim,)}, got {b.shape}")

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "LstmParams":
        def wi():
            return Tensor(glorot(rng, hidden_dim, input_dim))

        def wh():
            return Tensor(glorot(rng, hidden_dim, hidden_dim))

        def b():
            return Tensor(np.zeros(hidden_dim))

        return cls(
            input_dim,
            hidden_dim,
            wi(), wi(), wi(), wi(),
            wh(), wh(), wh(), wh(),
            b(), b(), b(), b(),
        )

    def named(self, prefix: str):
        for gate in _GATES:
            yield f"{prefix}.w_i{gate}", getattr(self, f"w_i{gate}")
        for gate in _GATES:
            yield f"{prefix}.w_h{gate}", getattr(self, f"w_h{gate}")
        for gate in _GATES:
            yield f"{prefix}.b_{gate}", getattr(self, f"b_{gate}")


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmParams) -> tuple[Tensor, Tensor]:
    """One LSTM cell update; returns (h, c)."""
    i = sigmoid(add(add(matmul(p.w_ii, x), matmul(p.w_hi, h_prev)), p.b_i))
    f = sigmoid(add(add(matmul(p.w_if, x), matmul(p.w_hf, h_prev)), p.b_f))
    g = tanh(add(add(matmul(p.w_ig, x), matmul(p.w_hg, h_prev)), p.b_g))
    o = sigmoid(add(add(matmul(p.w_io, x), matmul(p.w_ho, h_prev)), p.b_o))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def bilstm(seq: list[Tensor], fwd: LstmParams, bwd: LstmParams) -> list[Tensor]:
    """Run both directions over a sequence from zero initial states and
    concatenate per position: out[t] = [fwd_t ; bwd_t]."""
    if not seq:
        raise ValueError("bilstm: empty sequence")
    h = Tensor(np.zeros(fwd.hidden_dim))
    c = Tensor(np.zeros(fwd.hidden_dim))
    forward = []
    for x in seq:
        h, c = lstm_step(x, h, c, fwd)
        forward.append(h)
    h = Tensor(np.zeros(bwd.hidden_dim))
    c = Tensor(np.zeros(bwd.hidden_dim))
    backward_rev = []
    for x in reversed(seq):
        h, c = lstm_step(x, h, c, bwd)
        backward_rev.append(h)
    backward_states = backward_rev[::-1]
    return [concat_last_axis(f, b) for f, b in zip(forward, backward_states)]


@dataclass
class AttentionParams:
    """Projection and context vector for additive attention pooling.

    w is [att_dim, state_dim]; v is [att_dim].  There is no bias inside
    the tanh projection.
    """

    w: Tensor
    v: Tensor

    def __post_init__(self):
        if self.w.data.ndim != 2 or self.v.data.ndim != 1:
            raise ShapeMismatchError(
                f"attention wants matrix w and vector v, got {self.w.shape} and {self.v.shape}"
            )
        if self.w.shape[0] != self.v.shape[0]:
            raise ShapeMismatchError(
                f"attention dims disagree: w {self.w.shape} vs v {self.v.shape}"
            )

    @classmethod
    def init(cls, state_dim: int, att_dim: int, rng: np.random.Generator) -> "AttentionParams":
        return cls(Tensor(glorot(rng, att_dim, state_dim)), Tensor(_glorot_vector(rng, att_dim)))

    def named(self, prefix: str):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.v", self.v


def attention_pool(states: list[Tensor], p: AttentionParams) -> tuple[Tensor, Tensor]:
    """Pool a sequence of state vectors into one vector.

    u_t = tanh(w h_t), a = softmax(v . u), pooled = sum_t a_t h_t.
    Returns (pooled, weights); weights are positive and sum to one.
    """
    if not states:
        raise ValueError("attention_pool: empty sequence")
    h = stack_rows(states)
    u = tanh(matmul(h, transpose(p.w)))
    scores = matmul(u, p.v)
    weights = softmax(scores)
    pooled = matmul(weights, h)
    return pooled, weights


def final_state_pool(states: list[Tensor]) -> tuple[Tensor, Tensor]:
    """Aggregation ablation: average the sequence's two endpoint states.

    out[-1] carries the forward direction's final state, out[0] the
    backward direction's, so their mean summarizes both sweeps.  The
    returned weights mark the endpoints (0.5 each) for trace parity
    with attention_pool.
    """
    if not states:
        raise ValueError("final_state_pool: empty sequence")
    n = len(states)
    if n == 1:
        return states[0], Tensor(np.ones(1))
    pooled = scale(add(states[0], states[-1]), 0.5)
    w = np.zeros(n)
    w[0] = 0.5
    w[-1] = 0.5
    return pooled, Tensor(w)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """w x (+ b)."""
    out = matmul(w, x)
    if b is not None:
        out = add(out, b)
    return out


class EmbeddingTable:
    """Token -> vector lookup over a single matrix.

    Lookup keys are case-folded when ``fold_case`` is set; tokens missing
    from the vocabulary fall back to one shared unknown-token row when
    the table has one, and raise otherwise.
    """

    def __init__(
        self,
        vocab: dict[str, int],
        matrix: Tensor,
        trainable: bool = True,
        unk_token: str | None = UNK_TOKEN,
        fold_case: bool = True,
    ):
        if matrix.data.ndim != 2:
            raise ShapeMismatchError(f"embedding matrix must be 2-d, got {matrix.shape}")
        rows = matrix.shape[0]
        if len(vocab) != rows:
            raise ValueError(f"vocab has {len(vocab)} entries but matrix has {rows} rows")
        if sorted(vocab.values()) != list(range(rows)):
            raise ValueError("vocab indices must cover exactly 0..rows-1")
        if unk_token is not None and unk_token not in vocab:
            raise ValueError(f"unknown-token entry {unk_token!r} missing from vocab")
        self.vocab = dict(vocab)
        self.matrix = matrix
        self.trainable = trainable
        self.unk_token = unk_token
        self.fold_case = fold_case
        matrix.requires_grad = trainable

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def index_of(self, token: str) -> int:
        key = token.lower() if self.fold_case else token
        idx = self.vocab.get(key)
        if idx is None:
            if self.unk_token is None:
                raise KeyError(f"token {token!r} not in embedding vocabulary")
            idx = self.vocab[self.unk_token]
        return idx

    def lookup(self, token: str) -> Tensor:
        return take_row(self.matrix, self.index_of(token))

    def ordered_tokens(self) -> list[str]:
        return [tok for tok, _ in sorted(self.vocab.items(), key=lambda kv: kv[1])]

    @classmethod
    def build(
        cls,
        tokens,
        dim: int,
        rng: np.random.Generator,
        pretrained=None,
        trainable: bool = True,
        unk_token: str | None = UNK_TOKEN,
        fold_case: bool = True,
    ) -> "EmbeddingTable":
        """Build a table over the given token inventory.

        Row order is the unknown-token row (when present) followed by the
        remaining tokens sorted, so construction does not depend on input
        order.  Rows are random-initialized, then overwritten by
        pretrained vectors where available.
        """
        keys = sorted({(t.lower() if fold_case else t) for t in tokens})
        ordered = []
        if unk_token is not None:
            ordered.append(unk_token)
            keys = [k for k in keys if k != unk_token]
        ordered.extend(keys)
        vocab = {tok: i for i, tok in enumerate(ordered)}
        matrix = glorot(rng, len(ordered), dim)
        if pretrained is not None:
            if pretrained.dim != dim:
                raise ShapeMismatchError(
                    f"pretrained vectors have dim {pretrained.dim}, table wants {dim}"
                )
            for tok, i in vocab.items():
                vec = pretrained.vectors.get(tok)
                if vec is not None:
                    matrix[i] = vec
        return cls(vocab, Tensor(matrix), trainable, unk_token, fold_case)


@dataclass
class DropoutSpec:
    """Rate and seed for one deterministic dropout draw."""

    rate: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.rate}")


def _masked(x: Tensor, rng: np.random.Generator, rate: float) -> Tensor:
    keep = rng.random(x.shape) >= rate
    return mul(x, Tensor(keep / (1.0 - rate)))


def dropout(x: Tensor, spec: DropoutSpec, training: bool) -> Tensor:
    """Inverted dropout: zero elements with probability ``rate`` and scale
    survivors by 1/(1-rate); identity when not training or rate is 0."""
    if not training or spec.rate == 0.0:
        return x
    return _masked(x, np.random.default_rng(spec.seed), spec.rate)


class Dropout:
    """Stateful dropout for a training run: one owned RNG stream, fresh
    mask per call."""

    def __init__(self, rate: float, rng: np.random.Generator):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if not training or self.rate == 0.0:
            return x
        return _masked(x, self.rng, self.rate)
