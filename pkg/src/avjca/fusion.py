"""Joint cross-attentional fusion and the baseline fusion strategies.

All functions take graph nodes holding ``d x (B*L)`` batches (see
:mod:`avjca.autodiff`); ``L`` defaults to the full column count, i.e. a
single utterance. Weight shapes::

    W_ja: d_a x d    W_ca: d_a x d_a    W_ha: d_a x d_a
    W_jv: d_v x d    W_cv: d_v x d_v    W_hv: d_v x d_v      (d = d_a + d_v)
"""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ContractError, DimensionError
from .initializers import xavier_init
from .rng import SplitMix64

JCA_NAMES = ("W_ja", "W_jv", "W_ca", "W_cv", "W_ha", "W_hv")


def jca_shapes(d_a: int, d_v: int) -> dict[str, tuple[int, int]]:
    d = d_a + d_v
    return {
        "W_ja": (d_a, d),
        "W_jv": (d_v, d),
        "W_ca": (d_a, d_a),
        "W_cv": (d_v, d_v),
        "W_ha": (d_a, d_a),
        "W_hv": (d_v, d_v),
    }


def _segments(x: Node, L: int | None) -> int:
    return x.shape[1] if L is None else L


def joint_representation(x_a: Node, x_v: Node) -> Node:
    """``J = [X_a; X_v]``, audio rows first."""
    if x_a.shape[1] != x_v.shape[1]:
        raise ContractError(f"segment counts differ: audio {x_a.shape[1]}, visual {x_v.shape[1]}")
    return ad.concat_rows(x_a, x_v)


def early_fusion(x_a: Node, x_v: Node) -> Node:
    """Plain feature concatenation; no attention."""
    return joint_representation(x_a, x_v)


def joint_correlation(x_m: Node, joint: Node, w_jm: Node, L: int | None = None) -> Node:
    """``C_m = tanh(X_m^T W_jm J / sqrt(d))`` per utterance, ``L x L`` blocks."""
    if w_jm.shape != (x_m.shape[0], joint.shape[0]):
        raise DimensionError(
            f"W_jm must be {x_m.shape[0]}x{joint.shape[0]}, got {w_jm.shape[0]}x{w_jm.shape[1]}"
        )
    projected = ad.matmul(w_jm, joint)
    corr = ad.block_gram(x_m, projected, _segments(x_m, L))
    return ad.tanh(ad.scale(corr, 1.0 / math.sqrt(joint.shape[0])))


def attention_maps(x_m: Node, c_m: Node, w_cm: Node, L: int | None = None) -> Node:
    """``H_m = ReLU(W_cm X_m C_m)``."""
    return ad.relu(ad.block_matmul(ad.matmul(w_cm, x_m), c_m, _segments(x_m, L)))


def attended_features(x_m: Node, h_m: Node, w_hm: Node) -> Node:
    """``W_hm H_m + X_m``."""
    return ad.add(ad.matmul(w_hm, h_m), x_m)


def jca_forward(x_a: Node, x_v: Node, params: Mapping[str, Node], L: int | None = None) -> Node:
    """Fused features ``[X_att,v; X_att,a]`` (visual rows first), ``d x (B*L)``."""
    joint = joint_representation(x_a, x_v)
    attended = {}
    for m, x in (("a", x_a), ("v", x_v)):
        c = joint_correlation(x, joint, params[f"W_j{m}"], L)
        h = attention_maps(x, c, params[f"W_c{m}"], L)
        attended[m] = attended_features(x, h, params[f"W_h{m}"])
    return ad.concat_rows(attended["v"], attended["a"])


def spatial_reduce_visual(fmap: np.ndarray, audio: np.ndarray, w_s: np.ndarray) -> np.ndarray:
    """Audio-guided pooling of a ``c x p`` visual map to a length-``c`` vector.

    Logits ``(W_s^T a)^T F / sqrt(c)`` over the ``p`` positions are softmaxed
    and used as convex weights on the columns of ``F``.
    """
    fmap = np.asarray(fmap, dtype=np.float64)
    audio = np.asarray(audio, dtype=np.float64).ravel()
    w_s = np.asarray(w_s, dtype=np.float64)
    c, p = fmap.shape
    if p < 1:
        raise ContractError("spatial map needs at least one position")
    if w_s.shape != (audio.size, c):
        raise DimensionError(f"W_s must be {audio.size}x{c}, got {w_s.shape[0]}x{w_s.shape[1]}")
    logits = (w_s.T @ audio) @ fmap / math.sqrt(c)
    alpha = np.exp(logits - logits.max())
    alpha /= alpha.sum()
    return fmap @ alpha


def score_fusion(s_a: float, s_v: float, w: float = 0.5) -> float:
    """``w * s_a + (1 - w) * s_v``."""
    if not 0.0 <= w <= 1.0:
        raise ContractError(f"fusion weight must lie in [0, 1], got {w}")
    return w * s_a + (1.0 - w) * s_v


def init_jca(d_a: int, d_v: int, rng: SplitMix64) -> dict[str, np.ndarray]:
    return {name: xavier_init(r, c, rng.next_u64()) for name, (r, c) in jca_shapes(d_a, d_v).items()}
