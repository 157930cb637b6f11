"""Define-by-run reverse-mode differentiation over dense 2-D float64 matrices.

A :class:`Graph` records every operation applied to its nodes in insertion
order, which is also a valid topological order. :func:`backward` sweeps the
record in reverse and returns gradients for every named parameter.

Batches of utterances are laid out side by side along the column axis: an
utterance with ``L`` segments occupies columns ``b*L .. b*L + L - 1``. The
``block_*`` ops operate independently on each such block, which keeps every
value rank 2 while letting one graph process a whole mini-batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError


class Node:
    __slots__ = ("graph", "index", "op", "inputs", "value", "attrs", "name", "requires_grad")

    def __init__(self, graph, index, op, inputs, value, attrs, name, requires_grad):
        self.graph = graph
        self.index = index
        self.op = op
        self.inputs = inputs
        self.value = value
        self.attrs = attrs
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        r, c = self.value.shape
        label = f" {self.name!r}" if self.name else ""
        return f"<Node #{self.index} {self.op}{label} {r}x{c}>"


class Graph:
    """Record of nodes for one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def _record(self, op, inputs, value, attrs=None, name=None, requires_grad=None) -> Node:
        if requires_grad is None:
            requires_grad = any(n.requires_grad for n in inputs)
        node = Node(self, len(self.nodes), op, tuple(inputs), value, attrs or {}, name, requires_grad)
        self.nodes.append(node)
        return node

    def parameter(self, name: str, value) -> Node:
        if name in self.params:
            raise ContractError(f"parameter {name!r} already registered")
        node = self._record("param", (), _as_matrix(value).copy(), name=name, requires_grad=True)
        self.params[name] = node
        return node

    def constant(self, value) -> Node:
        return self._record("const", (), _as_matrix(value), requires_grad=False)

    def parameters(self, values: Mapping[str, np.ndarray]) -> dict[str, Node]:
        return {name: self.parameter(name, v) for name, v in values.items()}


def _as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got {arr.ndim} dimensions")
    return arr


def _same_graph(*nodes: Node) -> Graph:
    g = nodes[0].graph
    for n in nodes[1:]:
        if n.graph is not g:
            raise ContractError("operands belong to different graphs")
    return g


def _check_same_shape(op: str, a: Node, b: Node) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape[0]}x{a.shape[1]} and {b.shape[0]}x{b.shape[1]} differ")


def _check_blocks(op: str, cols: int, block: int) -> int:
    if block < 1 or cols % block:
        raise DimensionError(f"{op}: {cols} columns do not split into blocks of {block}")
    return cols // block


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def matmul(a: Node, b: Node) -> Node:
    g = _same_graph(a, b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul: {a.shape[0]}x{a.shape[1]} and {b.shape[0]}x{b.shape[1]} do not conform"
        )
    return g._record("matmul", (a, b), a.value @ b.value)


def transpose(a: Node) -> Node:
    return a.graph._record("transpose", (a,), a.value.T.copy())


def add(a: Node, b: Node) -> Node:
    g = _same_graph(a, b)
    _check_same_shape("add", a, b)
    return g._record("add", (a, b), a.value + b.value)


def sub(a: Node, b: Node) -> Node:
    g = _same_graph(a, b)
    _check_same_shape("sub", a, b)
    return g._record("sub", (a, b), a.value - b.value)


def mul(a: Node, b: Node) -> Node:
    """Entrywise (Hadamard) product."""
    g = _same_graph(a, b)
    _check_same_shape("mul", a, b)
    return g._record("mul", (a, b), a.value * b.value)


def scale(a: Node, k: float) -> Node:
    k = float(k)
    if not np.isfinite(k):
        raise ContractError(f"scale factor must be finite, got {k}")
    return a.graph._record("scale", (a,), a.value * k, {"k": k})


def add_bias(a: Node, bias: Node) -> Node:
    """Add an ``m x 1`` column to every column of an ``m x n`` matrix."""
    g = _same_graph(a, bias)
    if bias.shape != (a.shape[0], 1):
        raise DimensionError(f"add_bias: bias {bias.shape} does not match {a.shape[0]} rows")
    return g._record("add_bias", (a, bias), a.value + bias.value)


def tanh(a: Node) -> Node:
    return a.graph._record("tanh", (a,), np.tanh(a.value))


def sigmoid(a: Node) -> Node:
    x = a.value
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return a.graph._record("sigmoid", (a,), out)


def relu(a: Node) -> Node:
    return a.graph._record("relu", (a,), np.maximum(a.value, 0.0))


def floor_sqrt(a: Node, eps: float) -> Node:
    """Entrywise ``sqrt(max(x, eps))``."""
    return a.graph._record("floor_sqrt", (a,), np.sqrt(np.maximum(a.value, eps)), {"eps": eps})


def concat_rows(*parts: Node) -> Node:
    g = _same_graph(*parts)
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows: column counts differ {[p.shape for p in parts]}")
    return g._record("concat_rows", parts, np.vstack([p.value for p in parts]))


def take_rows(a: Node, start: int, stop: int) -> Node:
    if not 0 <= start < stop <= a.shape[0]:
        raise DimensionError(f"take_rows: [{start}, {stop}) outside {a.shape[0]} rows")
    return a.graph._record("take_rows", (a,), a.value[start:stop].copy(), {"start": start, "stop": stop})


def take_cols(a: Node, index) -> Node:
    index = np.asarray(index, dtype=np.intp)
    return a.graph._record("take_cols", (a,), a.value[:, index], {"index": index})


def scatter_cols(parts: Sequence[Node], indices: Sequence, ncols: int) -> Node:
    """Place ``parts[k]`` into columns ``indices[k]`` of an ``m x ncols`` matrix."""
    g = _same_graph(*parts)
    rows = parts[0].shape[0]
    out = np.zeros((rows, ncols))
    idx = [np.asarray(i, dtype=np.intp) for i in indices]
    for p, i in zip(parts, idx):
        if p.shape != (rows, len(i)):
            raise DimensionError(f"scatter_cols: part {p.shape} does not fit {len(i)} columns")
        out[:, i] = p.value
    return g._record("scatter_cols", tuple(parts), out, {"indices": idx})


def sum_all(a: Node) -> Node:
    return a.graph._record("sum_all", (a,), np.array([[a.value.sum()]]))


def dropout_mask_apply(a: Node, mask: np.ndarray) -> Node:
    """Multiply by a fixed (already rescaled) dropout mask."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != a.shape:
        raise DimensionError(f"dropout_mask_apply: mask {mask.shape} vs input {a.shape}")
    return a.graph._record("dropout_mask_apply", (a,), a.value * mask, {"mask": mask})


def block_gram(p: Node, q: Node, block: int) -> Node:
    """Per-block ``P_b^T Q_b``; blocks of ``block`` columns, output ``block x (B*block)``."""
    g = _same_graph(p, q)
    if p.shape != q.shape:
        raise DimensionError(f"block_gram: shapes {p.shape} and {q.shape} differ")
    nb = _check_blocks("block_gram", p.shape[1], block)
    pb = p.value.reshape(p.shape[0], nb, block)
    qb = q.value.reshape(q.shape[0], nb, block)
    out = np.einsum("rbi,rbj->ibj", pb, qb).reshape(block, nb * block)
    return g._record("block_gram", (p, q), out, {"block": block})


def block_matmul(a: Node, c: Node, block: int) -> Node:
    """Per-block ``A_b C_b`` with ``A`` ``m x (B*L)`` and ``C`` ``L x (B*L)``."""
    g = _same_graph(a, c)
    if c.shape != (block, a.shape[1]):
        raise DimensionError(f"block_matmul: {a.shape} and {c.shape} do not conform for blocks of {block}")
    nb = _check_blocks("block_matmul", a.shape[1], block)
    ab = a.value.reshape(a.shape[0], nb, block)
    cb = c.value.reshape(block, nb, block)
    out = np.einsum("mbi,ibj->mbj", ab, cb).reshape(a.shape[0], nb * block)
    return g._record("block_matmul", (a, c), out, {"block": block})


def block_softmax(e: Node, block: int) -> Node:
    """Softmax of a ``1 x (B*L)`` row within each block of ``block`` entries."""
    if e.shape[0] != 1:
        raise DimensionError(f"block_softmax expects one row, got {e.shape}")
    nb = _check_blocks("block_softmax", e.shape[1], block)
    x = e.value.reshape(nb, block)
    z = np.exp(x - x.max(axis=1, keepdims=True))
    out = (z / z.sum(axis=1, keepdims=True)).reshape(1, nb * block)
    return e.graph._record("block_softmax", (e,), out, {"block": block})


def block_pool(x: Node, w: Node, block: int) -> Node:
    """Weighted sum of columns within each block: ``d x (B*L)``, ``1 x (B*L)`` -> ``d x B``."""
    g = _same_graph(x, w)
    if w.shape != (1, x.shape[1]):
        raise DimensionError(f"block_pool: weights {w.shape} vs features {x.shape}")
    nb = _check_blocks("block_pool", x.shape[1], block)
    out = (x.value * w.value).reshape(x.shape[0], nb, block).sum(axis=2)
    return g._record("block_pool", (x, w), out, {"block": block})


def normalize_cols(a: Node, guard: float = 1e-12) -> Node:
    norms = np.sqrt((a.value**2).sum(axis=0, keepdims=True))
    if np.any(norms <= guard):
        bad = int(np.argmax(norms <= guard))
        raise ContractError(f"normalize_cols: column {bad} has norm <= {guard}")
    return a.graph._record("normalize_cols", (a,), a.value / norms, {"norms": norms})


def normalize_rows(a: Node, guard: float = 1e-12) -> Node:
    norms = np.sqrt((a.value**2).sum(axis=1, keepdims=True))
    if np.any(norms <= guard):
        bad = int(np.argmax(norms <= guard))
        raise ContractError(f"normalize_rows: row {bad} has norm <= {guard}")
    return a.graph._record("normalize_rows", (a,), a.value / norms, {"norms": norms})


# Floor on 1 - cos^2 before the square root in the angular-margin target logit.
SIN_FLOOR = 1e-12


def aam_logits(cos: Node, labels, s: float, m: float) -> Node:
    """Additive angular margin logits from an ``N x B`` cosine matrix.

    Target entries become ``s*cos(theta + m)`` (or ``s*(cos - m*sin m)`` once
    ``cos <= cos(pi - m)``); other entries ``s*cos``.
    """
    labels = np.asarray(labels, dtype=np.intp)
    n_cls, batch = cos.shape
    if labels.shape != (batch,) or np.any(labels < 0) or np.any(labels >= n_cls):
        raise ContractError(f"aam_logits: labels must be {batch} indices in [0, {n_cls})")
    if s <= 0:
        raise ContractError(f"aam_logits: scale must be positive, got {s}")
    cols = np.arange(batch)
    c = cos.value[labels, cols]
    sin_sq = 1.0 - c * c
    clipped = sin_sq <= SIN_FLOOR
    sin_t = np.sqrt(np.maximum(sin_sq, SIN_FLOOR))
    fallback = c <= np.cos(np.pi - m)
    target = np.where(fallback, c - m * np.sin(m), c * np.cos(m) - sin_t * np.sin(m))
    out = s * cos.value
    out[labels, cols] = s * target
    # d(target)/dc per branch; the clipped sine is treated as constant.
    dtarget = np.where(fallback, 1.0, np.cos(m) + np.where(clipped, 0.0, c / sin_t) * np.sin(m))
    attrs = {"labels": labels, "s": float(s), "m": float(m), "dtarget": dtarget}
    return cos.graph._record("aam_logits", (cos,), out, attrs)


def softmax_cross_entropy(logits: Node, labels) -> Node:
    """Mean cross-entropy over columns of an ``N x B`` logit matrix -> ``1 x 1``."""
    labels = np.asarray(labels, dtype=np.intp)
    n_cls, batch = logits.shape
    if labels.shape != (batch,) or np.any(labels < 0) or np.any(labels >= n_cls):
        raise ContractError(f"softmax_cross_entropy: labels must be {batch} indices in [0, {n_cls})")
    x = logits.value
    shifted = x - x.max(axis=0, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    logp = shifted - logz
    loss = -logp[labels, np.arange(batch)].mean()
    return logits.graph._record(
        "softmax_cross_entropy", (logits,), np.array([[loss]]), {"labels": labels, "probs": np.exp(logp)}
    )


# ---------------------------------------------------------------------------
# Gradient rules: rule(node, upstream) -> one gradient per input
# ---------------------------------------------------------------------------


def _grad_block_gram(node, g):
    p, q = node.inputs
    block = node.attrs["block"]
    nb = p.shape[1] // block
    pb = p.value.reshape(p.shape[0], nb, block)
    qb = q.value.reshape(q.shape[0], nb, block)
    gb = g.reshape(block, nb, block)
    dp = np.einsum("rbj,ibj->rbi", qb, gb).reshape(p.shape)
    dq = np.einsum("rbi,ibj->rbj", pb, gb).reshape(q.shape)
    return dp, dq


def _grad_block_matmul(node, g):
    a, c = node.inputs
    block = node.attrs["block"]
    nb = a.shape[1] // block
    ab = a.value.reshape(a.shape[0], nb, block)
    cb = c.value.reshape(block, nb, block)
    gb = g.reshape(a.shape[0], nb, block)
    da = np.einsum("mbj,ibj->mbi", gb, cb).reshape(a.shape)
    dc = np.einsum("mbi,mbj->ibj", ab, gb).reshape(c.shape)
    return da, dc


def _grad_block_softmax(node, g):
    block = node.attrs["block"]
    nb = node.shape[1] // block
    y = node.value.reshape(nb, block)
    gy = g.reshape(nb, block)
    dx = y * (gy - (gy * y).sum(axis=1, keepdims=True))
    return (dx.reshape(1, nb * block),)


def _grad_block_pool(node, g):
    x, w = node.inputs
    block = node.attrs["block"]
    nb = x.shape[1] // block
    gexp = np.repeat(g, block, axis=1)
    return gexp * w.value, (gexp * x.value).sum(axis=0, keepdims=True)


def _grad_scatter_cols(node, g):
    return tuple(g[:, i] for i in node.attrs["indices"])


def _grad_concat_rows(node, g):
    out, start = [], 0
    for p in node.inputs:
        out.append(g[start : start + p.shape[0]])
        start += p.shape[0]
    return tuple(out)


def _grad_take_rows(node, g):
    (a,) = node.inputs
    d = np.zeros(a.shape)
    d[node.attrs["start"] : node.attrs["stop"]] = g
    return (d,)


def _grad_take_cols(node, g):
    (a,) = node.inputs
    d = np.zeros(a.shape)
    np.add.at(d, (slice(None), node.attrs["index"]), g)
    return (d,)


def _grad_normalize_cols(node, g):
    y = node.value
    return ((g - y * (g * y).sum(axis=0, keepdims=True)) / node.attrs["norms"],)


def _grad_normalize_rows(node, g):
    y = node.value
    return ((g - y * (g * y).sum(axis=1, keepdims=True)) / node.attrs["norms"],)


def _grad_aam_logits(node, g):
    a = node.attrs
    labels = a["labels"]
    cols = np.arange(len(labels))
    d = a["s"] * g
    d[labels, cols] = a["s"] * a["dtarget"] * g[labels, cols]
    return (d,)


def _grad_softmax_cross_entropy(node, g):
    labels = node.attrs["labels"]
    d = node.attrs["probs"].copy()
    d[labels, np.arange(len(labels))] -= 1.0
    return (d * (g[0, 0] / len(labels)),)


GRADIENT_RULES: dict[str, Callable] = {
    "matmul": lambda n, g: (g @ n.inputs[1].value.T, n.inputs[0].value.T @ g),
    "transpose": lambda n, g: (g.T,),
    "add": lambda n, g: (g, g),
    "sub": lambda n, g: (g, -g),
    "mul": lambda n, g: (g * n.inputs[1].value, g * n.inputs[0].value),
    "scale": lambda n, g: (g * n.attrs["k"],),
    "add_bias": lambda n, g: (g, g.sum(axis=1, keepdims=True)),
    "tanh": lambda n, g: (g * (1.0 - n.value**2),),
    "sigmoid": lambda n, g: (g * n.value * (1.0 - n.value),),
    "relu": lambda n, g: (g * (n.inputs[0].value > 0.0),),
    "floor_sqrt": lambda n, g: (
        np.where(n.inputs[0].value > n.attrs["eps"], g / (2.0 * n.value), 0.0),
    ),
    "concat_rows": _grad_concat_rows,
    "take_rows": _grad_take_rows,
    "take_cols": _grad_take_cols,
    "scatter_cols": _grad_scatter_cols,
    "sum_all": lambda n, g: (np.full(n.inputs[0].shape, g[0, 0]),),
    "dropout_mask_apply": lambda n, g: (g * n.attrs["mask"],),
    "block_gram": _grad_block_gram,
    "block_matmul": _grad_block_matmul,
    "block_softmax": _grad_block_softmax,
    "block_pool": _grad_block_pool,
    "normalize_cols": _grad_normalize_cols,
    "normalize_rows": _grad_normalize_rows,
    "aam_logits": _grad_aam_logits,
    "softmax_cross_entropy": _grad_softmax_cross_entropy,
}


def backward(graph: Graph, loss: Node) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every parameter of ``graph``.

    Parameters the loss does not depend on receive zero matrices.
    """
    if loss.graph is not graph:
        raise ContractError("loss node does not belong to this graph")
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 loss, got {loss.shape[0]}x{loss.shape[1]}")
    grads: dict[int, np.ndarray] = {loss.index: np.ones((1, 1))}
    for node in reversed(graph.nodes[: loss.index + 1]):
        g = grads.pop(node.index, None) if node.op != "param" else grads.get(node.index)
        if g is None or not node.inputs:
            continue
        rule = GRADIENT_RULES[node.op]
        for inp, gi in zip(node.inputs, rule(node, g)):
            if not inp.requires_grad:
                continue
            if inp.index in grads:
                grads[inp.index] = grads[inp.index] + gi
            else:
                grads[inp.index] = gi
    return {
        name: grads.get(p.index, np.zeros(p.shape)).copy() for name, p in graph.params.items()
    }


# ---------------------------------------------------------------------------
# Finite-difference checking
# ---------------------------------------------------------------------------


@dataclass
class GradientReport:
    errors: dict[str, float]
    tolerance: float
    kink_distance: float = field(default=np.inf)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self) -> str:
        lines = [f"{name}: {err:.3e}" for name, err in self.errors.items()]
        verdict = "PASS" if self.passed else "FAIL"
        return "\n".join(lines + [f"{verdict} max={self.max_error:.3e} tol={self.tolerance:g}"])


Builder = Callable[[Graph, Mapping[str, Node]], Node]


def _evaluate(build: Builder, params: Mapping[str, np.ndarray]) -> tuple[Graph, Node]:
    g = Graph()
    nodes = g.parameters(params)
    return g, build(g, nodes)


def kink_distance(graph: Graph) -> float:
    """Smallest ``|x|`` over all relu inputs recorded in ``graph``."""
    dist = np.inf
    for node in graph.nodes:
        if node.op == "relu":
            dist = min(dist, float(np.abs(node.inputs[0].value).min()))
    return dist


def check_gradients(
    build: Builder,
    params: Mapping[str, np.ndarray],
    tolerance: float = 1e-4,
    h: float = 1e-5,
) -> GradientReport:
    """Compare :func:`backward` against central differences, entry by entry.

    Relative error per entry is ``|a - n| / max(1e-8, |a| + |n|)``; the report
    keeps the maximum per parameter.
    """
    params = {k: _as_matrix(v).copy() for k, v in params.items()}
    graph, loss = _evaluate(build, params)
    analytic = backward(graph, loss)
    errors = {}
    for name, value in params.items():
        worst = 0.0
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + h
            up = _evaluate(build, params)[1].value[0, 0]
            value[idx] = orig - h
            down = _evaluate(build, params)[1].value[0, 0]
            value[idx] = orig
            numeric = (up - down) / (2.0 * h)
            a = analytic[name][idx]
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, rel)
        errors[name] = worst
    return GradientReport(errors, tolerance, kink_distance(graph))


def sample_away_from_kinks(
    sampler: Callable[[int], Mapping[str, np.ndarray]],
    build: Builder,
    margin: float = 1e-6,
    max_tries: int = 100,
) -> Mapping[str, np.ndarray]:
    """Draw ``sampler(0), sampler(1), ...`` until no relu input is within ``margin`` of 0."""
    for attempt in range(max_tries):
        params = sampler(attempt)
        graph, _ = _evaluate(build, params)
        if kink_distance(graph) >= margin:
            return params
    raise ContractError(f"no kink-free sample within {max_tries} attempts")


_ELEMENTWISE = {
    "tanh": tanh,
    "relu": relu,
    "add": add,
    "scale": scale,
    "concat_rows": concat_rows,
    "dropout_mask_apply": dropout_mask_apply,
}


def elementwise(kind: str, *operands):
    """Dispatch one of the entrywise/structural ops by name."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ContractError(f"unknown elementwise kind {kind!r}") from None
    return fn(*operands)
