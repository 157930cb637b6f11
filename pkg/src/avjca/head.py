"""Attentive statistics pooling, embedding projection, AAM-softmax and cosine scoring."""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ContractError
from .initializers import xavier_init
from .rng import SplitMix64

VAR_FLOOR = 1e-12
NORM_GUARD = 1e-12


def asp_shapes(d: int, hidden: int) -> dict[str, tuple[int, int]]:
    return {"W": (hidden, d), "b": (hidden, 1), "v": (hidden, 1), "k": (1, 1)}


def init_asp(d: int, hidden: int, rng: SplitMix64) -> dict[str, np.ndarray]:
    return {
        "W": xavier_init(hidden, d, rng.next_u64()),
        "b": np.zeros((hidden, 1)),
        "v": xavier_init(hidden, 1, rng.next_u64()),
        "k": np.zeros((1, 1)),
    }


def attention_weights(x: Node, params: Mapping[str, Node], L: int | None = None) -> Node:
    """Per-segment softmax weights ``1 x (B*L)`` from ``v^T tanh(W x_l + b) + k``."""
    L = x.shape[1] if L is None else L
    if L < 1:
        raise ContractError("pooling needs at least one segment")
    hidden = ad.tanh(ad.add_bias(ad.matmul(params["W"], x), params["b"]))
    energy = ad.matmul(ad.transpose(params["v"]), hidden)
    ones = x.graph.constant(np.ones((1, x.shape[1])))
    energy = ad.add(energy, ad.matmul(params["k"], ones))
    return ad.block_softmax(energy, L)


def attentive_stats_pool(x: Node, params: Mapping[str, Node], L: int | None = None) -> Node:
    """Weighted mean and standard deviation per utterance: ``d x (B*L)`` -> ``2d x B``."""
    L = x.shape[1] if L is None else L
    alpha = attention_weights(x, params, L)
    mean = ad.block_pool(x, alpha, L)
    second = ad.block_pool(ad.mul(x, x), alpha, L)
    std = ad.floor_sqrt(ad.sub(second, ad.mul(mean, mean)), VAR_FLOOR)
    return ad.concat_rows(mean, std)


def embed(pooled: Node, projection: Node) -> Node:
    """Linear projection ``e x 2d`` applied to pooled ``2d x B`` statistics."""
    return ad.matmul(projection, pooled)


def cosine_logits(embeddings: Node, class_weights: Node) -> Node:
    """``N x B`` cosine similarities between class rows and embedding columns."""
    return ad.matmul(
        ad.normalize_rows(class_weights, NORM_GUARD), ad.normalize_cols(embeddings, NORM_GUARD)
    )


def aam_softmax_loss(embeddings: Node, labels, class_weights: Node, s: float = 30.0, m: float = 0.2) -> Node:
    """Mean additive-angular-margin softmax cross-entropy over the batch columns."""
    if not 0.0 <= m < math.pi / 2:
        raise ContractError(f"margin must lie in [0, pi/2), got {m}")
    cos = cosine_logits(embeddings, class_weights)
    return ad.softmax_cross_entropy(ad.aam_logits(cos, labels, s, m), labels)


def cosine_score(e1, e2) -> float:
    e1 = np.asarray(e1, dtype=np.float64).ravel()
    e2 = np.asarray(e2, dtype=np.float64).ravel()
    n1, n2 = np.linalg.norm(e1), np.linalg.norm(e2)
    if n1 <= NORM_GUARD or n2 <= NORM_GUARD:
        raise ContractError("cosine score of a zero-norm embedding")
    return float(np.clip(e1 @ e2 / (n1 * n2), -1.0, 1.0))
