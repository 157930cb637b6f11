"""Parameter layout and forward pass for every fusion mode.

Modes::

    jca          U-BLSTMs -> JCA -> dropout -> J-BLSTM -> ASP -> embedding
    jca_ublstm   U-BLSTMs -> JCA -> dropout -> ASP -> embedding
    jca_noblstm  JCA -> dropout -> ASP -> embedding
    early        [X_a; X_v] -> dropout -> ASP -> embedding
    score        independent audio and visual heads, trial scores fused
    audio        X_a -> dropout -> ASP -> embedding
    visual       X_v -> dropout -> ASP -> embedding
"""

from __future__ import annotations

from typing import Callable, Mapping, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Node
from .blstm import blstm_residual, blstm_shapes, init_blstm
from .errors import ContractError
from .fusion import early_fusion, init_jca, jca_forward, jca_shapes
from .head import aam_softmax_loss, asp_shapes, attentive_stats_pool, embed, init_asp
from .initializers import xavier_init
from .rng import SplitMix64

MODES = ("jca", "jca_noblstm", "jca_ublstm", "early", "score", "audio", "visual")
MODE_CODES = {m: i for i, m in enumerate(MODES)}
ABLATION_MODES = ("jca", "jca_noblstm", "jca_ublstm", "early", "score")

MaskFn = Optional[Callable[[tuple[int, int]], np.ndarray]]


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ContractError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")


def _branches(mode: str) -> list[str]:
    """Name prefixes of the independent heads a mode trains."""
    return ["audio.", "visual."] if mode == "score" else [""]


def _pooled_dim(mode: str, d_a: int, d_v: int, branch: str = "") -> int:
    if mode == "audio" or branch == "audio.":
        return d_a
    if mode == "visual" or branch == "visual.":
        return d_v
    return d_a + d_v


def _head_shapes(d: int, hidden: int, embed_dim: int, n_classes: int) -> dict[str, tuple[int, int]]:
    shapes = {f"asp.{k}": v for k, v in asp_shapes(d, hidden).items()}
    shapes["head.embed"] = (embed_dim, 2 * d)
    shapes["head.classes"] = (n_classes, embed_dim)
    return shapes


def param_shapes(
    mode: str, d_a: int, d_v: int, asp_hidden: int, embed_dim: int, n_classes: int
) -> dict[str, tuple[int, int]]:
    """Expected tensor names and shapes for a mode, in canonical order."""
    _check_mode(mode)
    shapes: dict[str, tuple[int, int]] = {}
    if mode in ("jca", "jca_ublstm"):
        shapes.update({f"ublstm_a.{k}": v for k, v in blstm_shapes(d_a).items()})
        shapes.update({f"ublstm_v.{k}": v for k, v in blstm_shapes(d_v).items()})
    if mode.startswith("jca"):
        shapes.update({f"jca.{k}": v for k, v in jca_shapes(d_a, d_v).items()})
    if mode == "jca":
        shapes.update({f"jblstm.{k}": v for k, v in blstm_shapes(d_a + d_v).items()})
    for branch in _branches(mode):
        d = _pooled_dim(mode, d_a, d_v, branch)
        shapes.update({branch + k: v for k, v in _head_shapes(d, asp_hidden, embed_dim, n_classes).items()})
    return shapes


def init_params(
    mode: str, d_a: int, d_v: int, asp_hidden: int, embed_dim: int, n_classes: int, rng: SplitMix64
) -> dict[str, np.ndarray]:
    """Xavier-uniform weights and zero biases, drawn in canonical order."""
    _check_mode(mode)
    params: dict[str, np.ndarray] = {}
    if mode in ("jca", "jca_ublstm"):
        params.update({f"ublstm_a.{k}": v for k, v in init_blstm(d_a, rng).items()})
        params.update({f"ublstm_v.{k}": v for k, v in init_blstm(d_v, rng).items()})
    if mode.startswith("jca"):
        params.update({f"jca.{k}": v for k, v in init_jca(d_a, d_v, rng).items()})
    if mode == "jca":
        params.update({f"jblstm.{k}": v for k, v in init_blstm(d_a + d_v, rng).items()})
    for branch in _branches(mode):
        d = _pooled_dim(mode, d_a, d_v, branch)
        params.update({f"{branch}asp.{k}": v for k, v in init_asp(d, asp_hidden, rng).items()})
        params[f"{branch}head.embed"] = xavier_init(embed_dim, 2 * d, rng.next_u64())
        params[f"{branch}head.classes"] = xavier_init(n_classes, embed_dim, rng.next_u64())
    expected = param_shapes(mode, d_a, d_v, asp_hidden, embed_dim, n_classes)
    assert {k: v.shape for k, v in params.items()} == expected
    return params


def sub(params: Mapping[str, Node], prefix: str) -> dict[str, Node]:
    return {k[len(prefix) :]: v for k, v in params.items() if k.startswith(prefix)}


def _dropout(x: Node, mask_fn: MaskFn) -> Node:
    return x if mask_fn is None else ad.dropout_mask_apply(x, mask_fn(x.shape))


def fused_features(
    mode: str, params: Mapping[str, Node], x_a: Node, x_v: Node, L: int, mask_fn: MaskFn = None
) -> Node:
    """Segment-level features entering the pooling layer (single-head modes)."""
    if mode in ("jca", "jca_ublstm"):
        x_a = blstm_residual(x_a, sub(params, "ublstm_a."), L)
        x_v = blstm_residual(x_v, sub(params, "ublstm_v."), L)
    if mode.startswith("jca"):
        fused = _dropout(jca_forward(x_a, x_v, sub(params, "jca."), L), mask_fn)
        if mode == "jca":
            fused = blstm_residual(fused, sub(params, "jblstm."), L)
        return fused
    if mode == "early":
        return _dropout(early_fusion(x_a, x_v), mask_fn)
    if mode == "audio":
        return _dropout(x_a, mask_fn)
    if mode == "visual":
        return _dropout(x_v, mask_fn)
    raise ContractError(f"mode {mode!r} has no single fused feature stream")


def head_embeddings(features: Node, params: Mapping[str, Node], L: int) -> Node:
    pooled = attentive_stats_pool(features, sub(params, "asp."), L)
    return embed(pooled, params["head.embed"])


def embeddings(
    mode: str, params: Mapping[str, Node], x_a: Node, x_v: Node, L: int, mask_fn: MaskFn = None
) -> dict[str, Node]:
    """``e x B`` embedding nodes keyed by head prefix ('' or 'audio.'/'visual.')."""
    _check_mode(mode)
    if mode == "score":
        return {
            "audio.": head_embeddings(_dropout(x_a, mask_fn), sub(params, "audio."), L),
            "visual.": head_embeddings(_dropout(x_v, mask_fn), sub(params, "visual."), L),
        }
    return {"": head_embeddings(fused_features(mode, params, x_a, x_v, L, mask_fn), params, L)}


def training_loss(
    mode: str,
    params: Mapping[str, Node],
    x_a: Node,
    x_v: Node,
    L: int,
    labels,
    s: float,
    m: float,
    mask_fn: MaskFn = None,
) -> Node:
    """AAM-softmax loss; the score mode sums its two independent head losses."""
    losses = [
        aam_softmax_loss(emb, labels, params[f"{prefix}head.classes"], s, m)
        for prefix, emb in embeddings(mode, params, x_a, x_v, L, mask_fn).items()
    ]
    total = losses[0]
    for extra in losses[1:]:
        total = ad.add(total, extra)
    return total


def embed_batch(
    mode: str, values: Mapping[str, np.ndarray], x_a: np.ndarray, x_v: np.ndarray, L: int
) -> dict[str, np.ndarray]:
    """Evaluation-mode embeddings (no dropout, no gradient tracking)."""
    g = Graph()
    consts = {k: g.constant(v) for k, v in values.items()}
    out = embeddings(mode, consts, g.constant(x_a), g.constant(x_v), L)
    return {k: v.value for k, v in out.items()}
