"""Map-gated pattern head, fact head with evidence attention, and fusion MLP."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import numgrad as ng
from .numgrad import ShapeError, Tensor
from .tokentype import TypedPost

OOV = "<oov>"
JOINT, PATTERN_ONLY, FACT_ONLY = "joint", "pattern-only", "fact-only"
MODES = (JOINT, PATTERN_ONLY, FACT_ONLY)


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), trainable=True)


@dataclass
class EmbeddingTable:
    """Trainable token vectors; row 0 is shared by every out-of-vocabulary token."""

    vocab: dict[str, int]
    matrix: Tensor

    @classmethod
    def build(cls, token_lists: Iterable[Sequence[str]], d: int, rng: np.random.Generator,
              min_count: int = 1) -> EmbeddingTable:
        counts = Counter(tok for toks in token_lists for tok in toks)
        words = sorted(w for w, c in counts.items() if c >= min_count and w != OOV)
        vocab = {OOV: 0}
        vocab.update({w: i + 1 for i, w in enumerate(words)})
        return cls(vocab, Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), (len(vocab), d)), trainable=True))

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.vocab)

    def ids(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.vocab.get(t, 0) for t in tokens], dtype=np.int64)

    def one_hot(self, ids: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        """Selector rows for ``ids`` (any leading shape); masked positions select nothing."""
        out = np.zeros(ids.shape + (len(self.vocab),))
        np.put_along_axis(out, ids[..., None], 1.0, axis=-1)
        if mask is not None:
            out *= mask[..., None]
        return out

    def bag(self, tokens: Sequence[str]) -> np.ndarray:
        """Mean-pooling weights over the vocabulary for one token sequence."""
        out = np.zeros(len(self.vocab))
        if tokens:
            np.add.at(out, self.ids(tokens), 1.0 / len(tokens))
        return out


def embed(typed: TypedPost | Sequence[str], table: EmbeddingTable) -> Tensor:
    tokens = typed.tokens if isinstance(typed, TypedPost) else tokens_checked(typed)
    return ng.matmul(table.one_hot(table.ids(tokens)), table.matrix)


def tokens_checked(tokens: Sequence[str]) -> Sequence[str]:
    if not tokens:
        raise ValueError("empty token sequence")
    return tokens


def pool(weights: Tensor, states: Tensor) -> Tensor:
    """Weighted sum of token states: sum_i weights[i] * states[i]."""
    weights, states = ng.as_tensor(weights), ng.as_tensor(states)
    *lead, n = weights.shape
    if states.shape[-2] != n:
        raise ShapeError(f"map of shape {weights.shape} does not match token states {states.shape}")
    out = ng.matmul(ng.reshape(weights, (*lead, 1, n)), states)
    return ng.reshape(out, (*lead, states.shape[-1]))


# pattern head ------------------------------------------------------------


@dataclass
class PatternHeadParams:
    """Bidirectional Elman recurrence; both directions share one input matrix."""

    W_in: Tensor  # d x 2h, forward columns first
    b_in: Tensor  # 2h
    W_fwd: Tensor  # h x h
    W_bwd: Tensor  # h x h

    @classmethod
    def init(cls, d: int, hidden: int, rng: np.random.Generator) -> PatternHeadParams:
        if hidden <= 0:
            raise ValueError("hidden size must be positive")
        return cls(_uniform(rng, (d, 2 * hidden), d), _uniform(rng, (2 * hidden,), d),
                   _uniform(rng, (hidden, hidden), hidden), _uniform(rng, (hidden, hidden), hidden))

    @property
    def hidden(self) -> int:
        return self.W_fwd.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {"W_in": self.W_in, "b_in": self.b_in, "W_fwd": self.W_fwd, "W_bwd": self.W_bwd}


def reversal(node_mask: np.ndarray) -> np.ndarray:
    """Permutation matrices reversing the unpadded prefix of each row."""
    *lead, n = node_mask.shape
    lengths = node_mask.sum(axis=-1).astype(int)
    out = np.zeros((*lead, n, n))
    for idx in np.ndindex(*lead):
        L = lengths[idx]
        out[idx + (np.arange(L), L - 1 - np.arange(L))] = 1.0
    return out


def pattern_states(X: Tensor, params: PatternHeadParams, node_mask: np.ndarray | None = None) -> Tensor:
    """Per-token states [forward; backward] of shape (..., n, 2h)."""
    X = ng.as_tensor(X)
    n = X.shape[-2]
    h = params.hidden
    if node_mask is None:
        node_mask = np.ones(X.shape[:-1])
    R = reversal(node_mask)
    U = ng.add(ng.matmul(X, params.W_in), params.b_in)
    U = ng.concat([U[..., :h], ng.matmul(R, U[..., h:])], axis=-1)
    zero = np.zeros((h, h))
    W_hh = ng.concat([ng.concat([params.W_fwd, zero], axis=1),
                      ng.concat([zero, params.W_bwd], axis=1)], axis=0)
    steps = []
    state = ng.tanh(U[..., 0:1, :])
    steps.append(state)
    for t in range(1, n):
        state = ng.tanh(ng.add(U[..., t:t + 1, :], ng.matmul(state, W_hh)))
        steps.append(state)
    S = ng.concat(steps, axis=-2) if len(steps) > 1 else steps[0]
    S = ng.concat([S[..., :h], ng.matmul(R, S[..., h:])], axis=-1)
    return ng.mul(S, node_mask[..., None])


def pattern_forward(token_states: Tensor, m_P: Tensor) -> Tensor:
    return pool(m_P, token_states)


# fact head ---------------------------------------------------------------


@dataclass
class FactHeadParams:
    W_q: Tensor  # d x dq
    b_q: Tensor
    W_e: Tensor  # (dq + d) x da, applied to [q; d_j]
    w_e: Tensor  # da x 1
    W_o: Tensor  # (dq + d) x do
    b_o: Tensor

    @classmethod
    def init(cls, d: int, dq: int, da: int, do: int, rng: np.random.Generator) -> FactHeadParams:
        return cls(_uniform(rng, (d, dq), d), _uniform(rng, (dq,), d),
                   _uniform(rng, (dq + d, da), dq + d), _uniform(rng, (da, 1), da),
                   _uniform(rng, (dq + d, do), dq + d), _uniform(rng, (do,), dq + d))

    @property
    def dq(self) -> int:
        return self.W_q.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W_o.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {"W_q": self.W_q, "b_q": self.b_q, "W_e": self.W_e, "w_e": self.w_e,
                "W_o": self.W_o, "b_o": self.b_o}


def fact_token_states(X: Tensor, params: FactHeadParams) -> Tensor:
    return ng.add(ng.matmul(X, params.W_q), params.b_q)


@dataclass
class FactOutput:
    f: Tensor
    attention: Tensor  # (..., n_f)
    q: Tensor


def evidence_attention(q: Tensor, evidence: Tensor, params: FactHeadParams,
                       evidence_mask: np.ndarray | None = None) -> Tensor:
    """Softmax over articles of w . tanh(W_e [q; d_j])."""
    dq = params.dq
    *lead, n_f, _ = evidence.shape
    from_q = ng.reshape(ng.matmul(ng.reshape(q, (*lead, 1, dq)), params.W_e[:dq]), (*lead, 1, -1))
    from_d = ng.matmul(evidence, params.W_e[dq:])
    scores = ng.matmul(ng.tanh(ng.add(from_q, from_d)), params.w_e)
    scores = ng.reshape(scores, (*lead, n_f))
    if evidence_mask is not None:
        scores = ng.add(scores, (evidence_mask - 1.0) * 1e9)
    return ng.softmax(scores, axis=-1)


def fact_forward(token_states: Tensor, m_F: Tensor, evidence: Tensor, params: FactHeadParams,
                 evidence_mask: np.ndarray | None = None) -> FactOutput:
    """Map-weighted post vector q, attention summary of evidence, projected to f.

    ``evidence`` is (..., n_f, d); pass a single all-zero row for a post with
    no retrieved article.
    """
    evidence = ng.as_tensor(evidence)
    if evidence.shape[-2] < 1:
        raise ValueError("need at least one evidence row; use a zero row for a retrieval miss")
    q = pool(m_F, token_states)
    attn = evidence_attention(q, evidence, params, evidence_mask)
    summary = pool(attn, evidence)
    f = ng.relu(_affine(ng.concat([q, summary], axis=-1), params.W_o, params.b_o))
    return FactOutput(f, attn, q)


# fusion ------------------------------------------------------------------


@dataclass
class FusionParams:
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, in_dim: int, hidden: int, rng: np.random.Generator) -> FusionParams:
        return cls(_uniform(rng, (in_dim, hidden), in_dim), _uniform(rng, (hidden,), in_dim),
                   _uniform(rng, (hidden, 1), hidden), _uniform(rng, (1,), hidden))

    def tensors(self) -> dict[str, Tensor]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


def _affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    # x @ W + b for a single vector or a batch of rows
    if x.values.ndim == 1:
        return ng.reshape(ng.add(ng.matmul(ng.reshape(x, (1, -1)), W), b), (W.shape[1],))
    return ng.add(ng.matmul(x, W), b)


def fusion_logit(features: Tensor, fusion: FusionParams) -> Tensor:
    features = ng.as_tensor(features)
    if features.shape[-1] != fusion.W1.shape[0]:
        raise ShapeError(f"fusion expects width {fusion.W1.shape[0]}, got {features.shape}")
    hidden = ng.relu(_affine(features, fusion.W1, fusion.b1))
    return ng.reshape(_affine(hidden, fusion.W2, fusion.b2), features.shape[:-1])


def fuse_predict(p: Tensor | None, f: Tensor | None, fusion: FusionParams) -> Tensor:
    """Probability of the fake class from whichever head outputs are given."""
    parts = [t for t in (p, f) if t is not None]
    if not parts:
        raise ValueError("need at least one head output")
    features = parts[0] if len(parts) == 1 else ng.concat(parts, axis=-1)
    return ng.sigmoid(fusion_logit(features, fusion))


@dataclass
class HeadOutput:
    y_hat: Tensor
    p: Tensor | None
    fact: FactOutput | None


def heads_forward(pattern_states_: Tensor | None, fact_states: Tensor | None,
                  pattern_map: Tensor, fact_map: Tensor,
                  evidence: Tensor | None, fact: FactHeadParams | None, fusion: FusionParams,
                  evidence_mask: np.ndarray | None = None) -> HeadOutput:
    """Both heads plus fusion; a head whose states are None is left out."""
    p = pattern_forward(pattern_states_, pattern_map) if pattern_states_ is not None else None
    fo = None
    if fact_states is not None:
        fo = fact_forward(fact_states, fact_map, evidence, fact, evidence_mask)
    return HeadOutput(fuse_predict(p, fo.f if fo else None, fusion), p, fo)


def swapped_forward(pattern_states_: Tensor | None, fact_states: Tensor | None,
                    m_P: Tensor, m_F: Tensor,
                    evidence: Tensor | None, fact: FactHeadParams | None, fusion: FusionParams,
                    evidence_mask: np.ndarray | None = None) -> HeadOutput:
    """Heads run with each other's map: the pattern head reads m_F and the
    fact head reads m_P, through the same fusion weights."""
    return heads_forward(pattern_states_, fact_states, m_F, m_P, evidence, fact, fusion, evidence_mask)
