"""Bidirectional LSTM encoders with a residual connection.

Each direction uses ``d/2`` hidden units so that ``[h_fwd; h_bwd]`` has the
input dimension and can be added back onto the input sequence. Parameter
names inside one direction are ``W_<gate>`` (``h x d_in``), ``U_<gate>``
(``h x h``) and ``b_<gate>`` (``h x 1``) for gates ``i, f, g, o``.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ContractError, DimensionError
from .initializers import xavier_init
from .rng import SplitMix64

GATES = ("i", "f", "g", "o")


def direction_shapes(d_in: int, hidden: int) -> dict[str, tuple[int, int]]:
    shapes = {}
    for gate in GATES:
        shapes[f"W_{gate}"] = (hidden, d_in)
        shapes[f"U_{gate}"] = (hidden, hidden)
        shapes[f"b_{gate}"] = (hidden, 1)
    return shapes


def blstm_shapes(d: int) -> dict[str, tuple[int, int]]:
    if d % 2:
        raise ContractError(f"residual BLSTM needs an even feature dimension, got {d}")
    inner = direction_shapes(d, d // 2)
    return {f"{side}.{k}": v for side in ("fwd", "bwd") for k, v in inner.items()}


def init_blstm(d: int, rng: SplitMix64) -> dict[str, np.ndarray]:
    """Xavier weights, zero biases."""
    out = {}
    for name, (r, c) in blstm_shapes(d).items():
        if name.split(".")[-1].startswith("b_"):
            out[name] = np.zeros((r, c))
        else:
            out[name] = xavier_init(r, c, rng.next_u64())
    return out


def _direction(params: Mapping[str, Node], prefix: str) -> dict[str, Node]:
    return {k[len(prefix) :]: v for k, v in params.items() if k.startswith(prefix)}


def _gate_preacts(x_proj: Node, h: Node, params: Mapping[str, Node], u_all: Node) -> list[Node]:
    pre = ad.add(x_proj, ad.matmul(u_all, h))
    hidden = h.shape[0]
    return [
        ad.add_bias(ad.take_rows(pre, k * hidden, (k + 1) * hidden), params[f"b_{gate}"])
        for k, gate in enumerate(GATES)
    ]


def _cell(pre: list[Node], c: Node) -> tuple[Node, Node]:
    i, f, o = ad.sigmoid(pre[0]), ad.sigmoid(pre[1]), ad.sigmoid(pre[3])
    g = ad.tanh(pre[2])
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    return ad.mul(o, ad.tanh(c_new)), c_new


def _stacked(params: Mapping[str, Node], kind: str) -> Node:
    return ad.concat_rows(*(params[f"{kind}_{gate}"] for gate in GATES))


def lstm_step(x: Node, h: Node, c: Node, params: Mapping[str, Node]) -> tuple[Node, Node]:
    """One standard LSTM step; columns of ``x``, ``h``, ``c`` are independent sequences."""
    hidden = params["U_i"].shape[0]
    if h.shape[0] != hidden or c.shape != h.shape:
        raise ContractError(f"state must be {hidden} x n, got h {h.shape}, c {c.shape}")
    if params["W_i"].shape[1] != x.shape[0]:
        raise DimensionError(f"input has {x.shape[0]} rows, weights expect {params['W_i'].shape[1]}")
    x_proj = ad.matmul(_stacked(params, "W"), x)
    return _cell(_gate_preacts(x_proj, h, params, _stacked(params, "U")), c)


def _run(x: Node, params: Mapping[str, Node], order, n_seq: int, L: int) -> list[Node]:
    graph = x.graph
    hidden = params["U_i"].shape[0]
    w_all, u_all = _stacked(params, "W"), _stacked(params, "U")
    h = c = graph.constant(np.zeros((hidden, n_seq)))
    outputs = [None] * L
    for t in order:
        # Projecting step by step (rather than all columns at once) keeps every
        # step's arithmetic independent of its position, so reversing time and
        # swapping directions mirrors the output exactly.
        step_in = ad.matmul(w_all, ad.take_cols(x, np.arange(n_seq) * L + t))
        h, c = _cell(_gate_preacts(step_in, h, params, u_all), c)
        outputs[t] = h
    return outputs


def blstm_residual(x: Node, params: Mapping[str, Node], L: int | None = None) -> Node:
    """``[h_fwd; h_bwd] + X`` for a ``d x (B*L)`` batch, zero initial states.

    ``params`` holds ``fwd.*`` and ``bwd.*`` direction weights.
    """
    d, cols = x.shape
    if d % 2:
        raise ContractError(f"residual BLSTM needs an even feature dimension, got {d}")
    L = cols if L is None else L
    if L < 1 or cols % L:
        raise DimensionError(f"{cols} columns do not split into sequences of {L}")
    n_seq = cols // L
    halves = []
    for side, order in (("fwd", range(L)), ("bwd", range(L - 1, -1, -1))):
        outs = _run(x, _direction(params, f"{side}."), order, n_seq, L)
        halves.append(ad.scatter_cols(outs, [np.arange(n_seq) * L + t for t in range(L)], cols))
    return ad.add(ad.concat_rows(*halves), x)
