"""Full detector: embeddings -> HetDGCN maps -> gated heads -> fused prediction."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numgrad as ng
from .corpusio import ArticleRecord, PostRecord
from .heads import (FACT_ONLY, JOINT, PATTERN_ONLY, EmbeddingTable, FactHeadParams, FusionParams,
                    HeadOutput, PatternHeadParams, fact_token_states, heads_forward, pattern_states,
                    swapped_forward)
from .numgrad import Tensor
from .prefgraph import GraphLayerParams, PreferenceMaps, run_hetdgcn
from .tokentype import TAGS, Gazetteer, TypedPost, type_tokens, typed_from_override


@dataclass
class Example:
    """A post prepared for the model (vocabulary ids, type tags, evidence bags)."""

    id: str
    typed: TypedPost
    ids: np.ndarray
    label: int
    evidence_bags: np.ndarray  # n_f x |V|, a single zero row on retrieval miss
    evidence_ids: list[str]

    @property
    def retrieval_miss(self) -> bool:
        return not self.evidence_ids


@dataclass
class Batch:
    examples: list[Example]
    ids: np.ndarray
    node_mask: np.ndarray
    type_masks: dict[str, np.ndarray]
    evidence_bags: np.ndarray
    evidence_mask: np.ndarray
    labels: np.ndarray


@dataclass
class ForwardOutput:
    maps: PreferenceMaps
    main: HeadOutput
    swapped: HeadOutput | None

    @property
    def y_hat(self) -> Tensor:
        return self.main.y_hat

    @property
    def y_hat_swapped(self) -> Tensor | None:
        return self.swapped.y_hat if self.swapped else None


def random_types(post_id: str, n: int, seed: int) -> list[str]:
    """Seeded uniform type tags, stable for a given post id."""
    rng = np.random.default_rng([seed, zlib.crc32(post_id.encode("utf-8"))])
    return [TAGS[i] for i in rng.integers(0, len(TAGS), size=n)]


class PrefFEND:
    def __init__(self, table: EmbeddingTable, mode: str = JOINT, layers: int = 2, alpha: float = 0.5,
                 pattern_hidden: int = 32, fact_dim: int = 32, attn_dim: int = 32, fusion_hidden: int = 64,
                 uniform_maps: bool = False, seed: int = 0):
        if mode not in (JOINT, PATTERN_ONLY, FACT_ONLY):
            raise ValueError(f"unknown mode {mode!r}")
        rng = np.random.default_rng(seed)
        d = table.d
        self.table = table
        self.mode = mode
        self.alpha = alpha
        self.uniform_maps = uniform_maps
        self.graph = [GraphLayerParams.init(d, rng) for _ in range(layers)]
        self.pattern = PatternHeadParams.init(d, pattern_hidden, rng) if mode != FACT_ONLY else None
        self.fact = FactHeadParams.init(d, fact_dim, attn_dim, fact_dim, rng) if mode != PATTERN_ONLY else None
        width = (2 * pattern_hidden if self.pattern else 0) + (fact_dim if self.fact else 0)
        self.fusion = FusionParams.init(width, fusion_hidden, rng)

    # parameters ------------------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"embedding": self.table.matrix}
        for i, layer in enumerate(self.graph):
            out.update({f"graph.{i}.{k}": v for k, v in layer.tensors().items()})
        if self.pattern:
            out.update({f"pattern.{k}": v for k, v in self.pattern.tensors().items()})
        if self.fact:
            out.update({f"fact.{k}": v for k, v in self.fact.tensors().items()})
        out.update({f"fusion.{k}": v for k, v in self.fusion.tensors().items()})
        return out

    def swap_parameter(self, name: str, tensor: Tensor) -> Tensor:
        """Put ``tensor`` in the slot of parameter ``name``; returns the old tensor."""
        head, _, attr = name.rpartition(".")
        if name == "embedding":
            owner, attr = self.table, "matrix"
        elif head.startswith("graph."):
            owner = self.graph[int(head.split(".")[1])]
        else:
            owner = {"pattern": self.pattern, "fact": self.fact, "fusion": self.fusion}[head]
        old = getattr(owner, attr)
        setattr(owner, attr, tensor)
        return old

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.values.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        if set(state) != set(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise KeyError(f"parameter mismatch: missing {missing}, unexpected {extra}")
        for name, tensor in params.items():
            if state[name].shape != tensor.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {tensor.shape}")
            tensor.values = np.array(state[name], dtype=ng.DTYPE)

    # data preparation ------------------------------------------------------

    def prepare(self, post: PostRecord, stylistic: Gazetteer, entity: Gazetteer,
                evidence_ids: Sequence[str], articles: dict[str, ArticleRecord],
                random_type_seed: int | None = None) -> Example:
        if random_type_seed is not None:
            typed = typed_from_override(post.tokens, random_types(post.id, len(post.tokens), random_type_seed))
        elif post.types is not None:
            typed = typed_from_override(post.tokens, post.types)
        else:
            typed = type_tokens(post.tokens, stylistic, entity)
        ev = [e for e in evidence_ids if e in articles]
        if ev:
            bags = np.stack([self.table.bag(articles[e].tokens) for e in ev])
        else:
            bags = np.zeros((1, len(self.table)))
        return Example(post.id, typed, self.table.ids(post.tokens), post.label, bags, ev)

    def collate(self, examples: Sequence[Example]) -> Batch:
        B = len(examples)
        n = max(ex.typed.n for ex in examples)
        n_f = max(ex.evidence_bags.shape[0] for ex in examples)
        ids = np.zeros((B, n), dtype=np.int64)
        mask = np.zeros((B, n))
        types = {t: np.zeros((B, n)) for t in TAGS}
        bags = np.zeros((B, n_f, len(self.table)))
        ev_mask = np.zeros((B, n_f))
        for b, ex in enumerate(examples):
            L = ex.typed.n
            ids[b, :L] = ex.ids
            mask[b, :L] = 1.0
            tags = np.array(ex.typed.tags)
            for t in TAGS:
                types[t][b, :L] = tags == t
            k = ex.evidence_bags.shape[0]
            bags[b, :k] = ex.evidence_bags
            ev_mask[b, :k] = 1.0
        labels = np.array([ex.label for ex in examples], dtype=float)
        return Batch(list(examples), ids, mask, types, bags, ev_mask, labels)

    # forward ---------------------------------------------------------------

    def forward(self, batch: Batch, with_swap: bool = True) -> ForwardOutput:
        X = ng.matmul(self.table.one_hot(batch.ids, batch.node_mask), self.table.matrix)
        if self.uniform_maps:
            uni = Tensor(batch.node_mask / batch.node_mask.sum(axis=-1, keepdims=True))
            maps = PreferenceMaps(uni, uni)
        else:
            maps, _ = run_hetdgcn(X, batch.type_masks, self.graph, self.alpha, batch.node_mask)
        P = pattern_states(X, self.pattern, batch.node_mask) if self.pattern else None
        Q = fact_token_states(X, self.fact) if self.fact else None
        D = ng.matmul(batch.evidence_bags, self.table.matrix) if self.fact else None
        main = heads_forward(P, Q, maps.m_P, maps.m_F, D, self.fact, self.fusion, batch.evidence_mask)
        swapped = None
        if with_swap:
            swapped = swapped_forward(P, Q, maps.m_P, maps.m_F, D, self.fact, self.fusion, batch.evidence_mask)
        return ForwardOutput(maps, main, swapped)

    def predict(self, examples: Sequence[Example], batch_size: int = 128) -> tuple[np.ndarray, list[PreferenceMaps]]:
        """Probabilities and per-batch maps without recording gradients."""
        probs, maps = [], []
        with ng.no_grad():
            for start in range(0, len(examples), batch_size):
                batch = self.collate(examples[start:start + batch_size])
                out = self.forward(batch, with_swap=False)
                probs.append(out.y_hat.values)
                maps.append(out.maps)
        return (np.concatenate(probs) if probs else np.zeros(0)), maps
