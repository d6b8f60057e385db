"""Heterogeneous dynamic GCN that turns a typed post into two preference maps.

Nodes stay in token order; the per-type blocks of the convolution are taken
with column masks, which is the same product as gathering the type block of
the normalized correlation matrix and the matching rows of H.  All functions
accept a leading batch axis together with a node mask for padded positions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import numgrad as ng
from .numgrad import Tensor
from .tokentype import ENTITY, OTHER, STYLISTIC, TAGS, TypedPost

log = logging.getLogger(__name__)


@dataclass
class GraphLayerParams:
    W_S: Tensor
    W_E: Tensor
    W_T: Tensor
    W_A: Tensor

    def type_weight(self, tag: str) -> Tensor:
        return {STYLISTIC: self.W_S, ENTITY: self.W_E, OTHER: self.W_T}[tag]

    def tensors(self) -> dict[str, Tensor]:
        return {"W_S": self.W_S, "W_E": self.W_E, "W_T": self.W_T, "W_A": self.W_A}

    @classmethod
    def init(cls, d: int, rng: np.random.Generator) -> GraphLayerParams:
        bound = 1.0 / np.sqrt(d)
        return cls(*(Tensor(rng.uniform(-bound, bound, (d, d)), trainable=True) for _ in range(4)))


@dataclass
class HetGraphState:
    H: Tensor
    A: Tensor
    type_masks: dict[str, np.ndarray]
    node_mask: np.ndarray
    layer: int = 0


@dataclass
class PreferenceMaps:
    m_P: Tensor
    m_F: Tensor


def type_masks_for(typed: TypedPost) -> dict[str, np.ndarray]:
    tags = np.array(typed.tags)
    return {t: (tags == t).astype(float) for t in TAGS}


def _pair_mask(node_mask: np.ndarray) -> np.ndarray:
    return node_mask[..., :, None] * node_mask[..., None, :]


def init_graph(embeddings: Tensor, typed: TypedPost | Mapping[str, np.ndarray],
               node_mask: np.ndarray | None = None) -> HetGraphState:
    """Correlations start as cosine similarity rescaled to [0, 1], diagonal 1."""
    embeddings = ng.as_tensor(embeddings)
    *lead, n, d = embeddings.shape
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got embeddings of shape {embeddings.shape}")
    masks = type_masks_for(typed) if isinstance(typed, TypedPost) else dict(typed)
    if node_mask is None:
        node_mask = np.ones(embeddings.shape[:-1])
    norms = np.linalg.norm(embeddings.values, axis=-1)
    if np.any((norms == 0) & (node_mask > 0)):
        log.warning("zero-norm node embedding; its cosine edges are set to 0.5")

    rows = ng.reshape(embeddings, (*lead, n, 1, d))
    cols = ng.reshape(embeddings, (*lead, 1, n, d))
    cos = ng.cosine(rows, cols)
    eye = np.eye(n)
    A0 = ng.add(ng.mul(ng.add(ng.scale(cos, 0.5), 0.5), 1.0 - eye), eye)
    A0 = ng.mul(A0, _pair_mask(node_mask))
    return HetGraphState(embeddings, A0, masks, node_mask, 0)


def normalize_correlations(A: Tensor, node_mask: np.ndarray | None = None) -> Tensor:
    """Symmetric degree normalization D^-1/2 A D^-1/2.

    A real node with zero degree is treated as having degree 1; padded nodes
    get degree 1 silently.
    """
    A = ng.as_tensor(A)
    deg = ng.sum(A, axis=-1)
    empty = deg.values <= 0
    if node_mask is not None:
        real_empty = empty & (node_mask > 0)
    else:
        real_empty = empty
    if np.any(real_empty):
        log.warning("isolated node(s) in correlation graph; degree treated as 1")
    deg = ng.add(deg, empty.astype(float))
    inv_sqrt = ng.power(deg, -0.5)
    *lead, n = deg.shape
    left = ng.reshape(inv_sqrt, (*lead, n, 1))
    right = ng.reshape(inv_sqrt, (*lead, 1, n))
    return ng.mul(ng.mul(A, left), right)


def het_conv_layer(state: HetGraphState, params: GraphLayerParams, alpha: float,
                   symmetrize: bool = True) -> HetGraphState:
    """One heterogeneous convolution followed by the correlation update."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    A_hat = normalize_correlations(state.A, state.node_mask)
    total = None
    for tag in TAGS:
        col = state.type_masks[tag]
        if not np.any(col):
            continue
        H_tau = ng.mul(state.H, col[..., None])
        term = ng.matmul(ng.matmul(A_hat, H_tau), params.type_weight(tag))
        total = term if total is None else ng.add(total, term)
    if total is None:
        total = Tensor(np.zeros(state.H.shape[:-1] + (params.W_S.shape[1],)))
    H_next = ng.relu(total)

    delta = ng.sigmoid(ng.matmul(ng.matmul(H_next, params.W_A), ng.transpose(H_next)))
    if symmetrize:
        delta = ng.scale(ng.add(delta, ng.transpose(delta)), 0.5)
    delta = ng.mul(delta, _pair_mask(state.node_mask))
    A_next = ng.add(ng.scale(state.A, alpha), ng.scale(delta, 1.0 - alpha))
    return HetGraphState(H_next, A_next, state.type_masks, state.node_mask, state.layer + 1)


def readout_maps(A_final: Tensor, typed: TypedPost | Mapping[str, np.ndarray],
                 node_mask: np.ndarray | None = None) -> PreferenceMaps:
    """Row sums of the final correlations minus entity (pattern map) or
    stylistic (fact map) columns, each normalized to sum 1."""
    A_final = ng.as_tensor(A_final)
    masks = type_masks_for(typed) if isinstance(typed, TypedPost) else dict(typed)
    if node_mask is None:
        node_mask = np.ones(A_final.shape[:-1])
    A = ng.mul(A_final, _pair_mask(node_mask))
    rows = ng.sum(A, axis=-1)
    raw_P = ng.sub(rows, ng.sum(ng.mul(A, masks[ENTITY][..., None, :]), axis=-1))
    raw_F = ng.sub(rows, ng.sum(ng.mul(A, masks[STYLISTIC][..., None, :]), axis=-1))
    return PreferenceMaps(_normalize_map(raw_P, node_mask, "pattern"),
                          _normalize_map(raw_F, node_mask, "fact"))


def _normalize_map(raw: Tensor, node_mask: np.ndarray, which: str) -> Tensor:
    raw = ng.mul(raw, node_mask)
    total = raw.values.sum(axis=-1, keepdims=True)
    dead = total <= 1e-300
    if np.any(dead):
        log.warning("%s map has zero mass; falling back to the uniform map", which)
        keep = (~dead).astype(float)
        raw = ng.add(ng.mul(raw, keep), (1.0 - keep) * node_mask)
    return ng.div(raw, ng.sum(raw, axis=-1, keepdims=True))


def run_hetdgcn(embeddings: Tensor, typed: TypedPost | Mapping[str, np.ndarray],
                layers: list[GraphLayerParams], alpha: float,
                node_mask: np.ndarray | None = None,
                symmetrize: bool = True) -> tuple[PreferenceMaps, list[HetGraphState]]:
    state = init_graph(embeddings, typed, node_mask)
    states = [state]
    for params in layers:
        state = het_conv_layer(state, params, alpha, symmetrize)
        states.append(state)
    return readout_maps(state.A, state.type_masks, state.node_mask), states
