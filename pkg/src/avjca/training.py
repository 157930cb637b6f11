"""Training protocol: config, Adam with decoupled weight decay, dropout, early stopping, checkpoints."""

from __future__ import annotations

import dataclasses
import io
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .autodiff import Graph, backward
from .errors import ContractError, FormatError
from .features import PathOrFile, Trial, UtteranceFeatures, _open
from .initializers import xavier_init  # noqa: F401  (public re-export)
from .model import MODE_CODES, MODES, init_params, param_shapes, training_loss
from .rng import SplitMix64

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 100
    max_epochs: int = 100
    patience: int = 10
    dropout: float = 0.5
    weight_decay: float = 5e-4
    mode: str = "jca"
    aam_s: float = 30.0
    aam_m: float = 0.2
    seed: int = 0
    L: int = 4
    d_a: int = 192
    d_v: int = 512
    asp_hidden: int = 128
    embed_dim: int = 256
    fusion_weight: float = 0.5

    def validate(self) -> None:
        if not self.lr > 0:
            raise ContractError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.mode not in MODES:
            raise ContractError(f"unknown mode {self.mode!r}")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ContractError("batch_size and patience must be positive, max_epochs >= 0")
        if self.aam_s <= 0 or not 0.0 <= self.aam_m < math.pi / 2:
            raise ContractError("need aam_s > 0 and 0 <= aam_m < pi/2")
        if min(self.L, self.d_a, self.d_v, self.asp_hidden, self.embed_dim) < 1:
            raise ContractError("dimensions must be positive")
        if not 0.0 <= self.fusion_weight <= 1.0:
            raise ContractError("fusion_weight must lie in [0, 1]")

    def to_lines(self) -> list[str]:
        return [f"{f.name}={getattr(self, f.name)!r}".replace("'", "") for f in dataclasses.fields(self)]

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def desk_config(**overrides) -> TrainConfig:
    """Small-corpus preset used by the demos and the acceptance suite.

    The defaults of :class:`TrainConfig` are the full-scale values (lr 0.001,
    batch 100); a 20-speaker synthetic corpus needs more optimizer steps and a
    much smaller head to train in seconds.
    """
    base = TrainConfig(
        lr=0.01, batch_size=20, max_epochs=60, patience=15, L=8, d_a=16, d_v=24, asp_hidden=16, embed_dim=16
    )
    return base.replace(**overrides)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    if kind == "str":
        return raw
    try:
        return int(raw) if kind == "int" else float(raw)
    except ValueError:
        raise FormatError(f"{key}: cannot parse {raw!r} as {kind}") from None


def config_from_pairs(pairs: Sequence[tuple[int, str, str]], base: Optional[TrainConfig] = None) -> TrainConfig:
    values = {}
    for lineno, key, raw in pairs:
        if key not in _FIELD_TYPES:
            raise FormatError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    config = dataclasses.replace(base or TrainConfig(), **values)
    config.validate()
    return config


def _key_values(text: str) -> list[tuple[int, str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        pairs.append((lineno, key, raw))
    return pairs


def parse_config(source: PathOrFile) -> TrainConfig:
    """Read ``key=value`` lines ('#' starts a comment); unspecified keys keep their defaults."""
    with _open(source, "rb") as f:
        text = f.read().decode("utf-8")
    return config_from_pairs(_key_values(text))


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update with decoupled weight decay ``p <- p - lr*wd*p`` applied first."""
    t = state.t + 1
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"{name}: gradient {g.shape} does not match parameter {p.shape}")
        m = beta1 * state.m.get(name, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        decayed = p - lr * weight_decay * p
        new_params[name] = decayed - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(t, m_new, v_new)


def dropout_mask(shape: tuple[int, int], p: float, rng: SplitMix64) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``p``, else ``1/(1-p)``."""
    keep = rng.uniform(shape[0] * shape[1]).reshape(shape) >= p
    return keep / (1.0 - p)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


@dataclass
class ModelCheckpoint:
    params: dict[str, np.ndarray]
    config: TrainConfig
    n_classes: int
    epoch: int = 0
    val_eer: float = float("nan")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_eer: float


def stack_batch(records: Sequence[UtteranceFeatures]) -> np.ndarray:
    """``d x (B*L)`` matrix, utterance-major blocks of columns."""
    return np.hstack([r.values for r in records])


def _aligned(audio: Sequence[UtteranceFeatures], visual: Sequence[UtteranceFeatures], config: TrainConfig):
    if len(audio) != len(visual):
        raise ContractError(f"{len(audio)} audio but {len(visual)} visual records")
    for a, v in zip(audio, visual):
        if a.utt_id != v.utt_id or a.speaker_id != v.speaker_id:
            raise ContractError(f"unaligned records {a.utt_id} / {v.utt_id}")
        if (a.d, a.L, v.d, v.L) != (config.d_a, config.L, config.d_v, config.L):
            raise ContractError(
                f"{a.utt_id}: shapes {a.d}x{a.L}/{v.d}x{v.L} do not match config "
                f"{config.d_a}x{config.L}/{config.d_v}x{config.L}"
            )


def fit(
    audio: Sequence[UtteranceFeatures],
    visual: Sequence[UtteranceFeatures],
    val_trials: Optional[Sequence[Trial]],
    config: TrainConfig,
    val_audio: Optional[Sequence[UtteranceFeatures]] = None,
    val_visual: Optional[Sequence[UtteranceFeatures]] = None,
) -> tuple[ModelCheckpoint, list[EpochRecord]]:
    """Train on aligned records; early-stop on validation EER.

    Validation embeddings are looked up in ``val_audio``/``val_visual``
    (default: the training records themselves). Without validation trials the
    last epoch is kept.
    """
    from .pipeline import evaluate_pipeline

    config.validate()
    _aligned(audio, visual, config)
    speakers = sorted({r.speaker_id for r in audio})
    if len(speakers) < 2:
        raise ContractError("training needs at least two speakers")
    label_of = {s: i for i, s in enumerate(speakers)}
    labels = np.array([label_of[r.speaker_id] for r in audio])
    val_audio = audio if val_audio is None else val_audio
    val_visual = visual if val_visual is None else val_visual

    root = SplitMix64(config.seed)
    params = init_params(
        config.mode, config.d_a, config.d_v, config.asp_hidden, config.embed_dim, len(speakers), root.spawn()
    )
    shuffle_rng, dropout_rng = root.spawn(), root.spawn()
    best = ModelCheckpoint({k: v.copy() for k, v in params.items()}, config, len(speakers))
    history: list[EpochRecord] = []
    state = AdamState()
    mask_fn = None
    if config.dropout > 0:
        mask_fn = lambda shape: dropout_mask(shape, config.dropout, dropout_rng)  # noqa: E731
    since_best = 0
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(audio))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            g = Graph()
            nodes = g.parameters(params)
            loss = training_loss(
                config.mode,
                nodes,
                g.constant(stack_batch([audio[i] for i in idx])),
                g.constant(stack_batch([visual[i] for i in idx])),
                config.L,
                labels[idx],
                config.aam_s,
                config.aam_m,
                mask_fn,
            )
            grads = backward(g, loss)
            params, state = adam_step(params, grads, state, config.lr, weight_decay=config.weight_decay)
            losses.append(loss.value[0, 0])
        epoch_loss = float(np.mean(losses))
        current = ModelCheckpoint(params, config, len(speakers), epoch)
        if val_trials:
            current.val_eer = evaluate_pipeline(current, val_audio, val_visual, val_trials).eer
        history.append(EpochRecord(epoch, epoch_loss, current.val_eer))
        logger.info("epoch %d loss %.5f val_eer %.4f", epoch, epoch_loss, current.val_eer)
        if not val_trials or not current.val_eer >= best.val_eer:
            best = ModelCheckpoint({k: v.copy() for k, v in params.items()}, config, len(speakers), epoch, current.val_eer)
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    return best, history


def format_history(history: Sequence[EpochRecord]) -> str:
    return "".join(f"{h.epoch} {h.loss:.6f} {h.val_eer:.6f}\n" for h in history)


# ---------------------------------------------------------------------------
# AVSM container
# ---------------------------------------------------------------------------

AVSM_MAGIC = b"AVSM"
AVSM_VERSION = 1


def encode_avsm(mode_code: int, tensors: Mapping[str, np.ndarray], meta_lines: Sequence[str]) -> bytes:
    buf = io.BytesIO()
    buf.write(AVSM_MAGIC)
    buf.write(struct.pack("<IBI", AVSM_VERSION, mode_code, len(tensors)))
    for name, value in tensors.items():
        raw = name.encode("utf-8")
        value = np.asarray(value, dtype=np.float64)
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<II", *value.shape))
        buf.write(np.ascontiguousarray(value, dtype="<f8").tobytes())
    meta = "".join(line + "\n" for line in meta_lines).encode("utf-8")
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    return buf.getvalue()


def decode_avsm(data: bytes) -> tuple[int, dict[str, np.ndarray], str]:
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"AVSM truncated while reading {what}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(4, "magic") != AVSM_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {AVSM_MAGIC!r}")
    version, mode_code, count = struct.unpack("<IBI", take(9, "header"))
    if version != AVSM_VERSION:
        raise FormatError(f"unsupported AVSM version {version}")
    tensors = {}
    for k in range(count):
        (n,) = struct.unpack("<H", take(2, f"tensor {k} name length"))
        name = take(n, f"tensor {k} name").decode("utf-8")
        rows, cols = struct.unpack("<II", take(8, f"tensor {name!r} shape"))
        values = np.frombuffer(take(8 * rows * cols, f"tensor {name!r} values"), dtype="<f8")
        if name in tensors:
            raise FormatError(f"duplicate tensor {name!r}")
        tensors[name] = values.astype(np.float64).reshape(rows, cols)
    (n,) = struct.unpack("<I", take(4, "config length"))
    meta = take(n, "config block").decode("utf-8")
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes in AVSM file")
    return mode_code, tensors, meta


def encode_model(checkpoint: ModelCheckpoint) -> bytes:
    meta = checkpoint.config.to_lines() + [
        f"n_classes={checkpoint.n_classes}",
        f"epoch={checkpoint.epoch}",
        f"val_eer={checkpoint.val_eer!r}",
    ]
    return encode_avsm(MODE_CODES[checkpoint.config.mode], checkpoint.params, meta)


def save_model(checkpoint: ModelCheckpoint, destination: PathOrFile) -> int:
    data = encode_model(checkpoint)
    with _open(destination, "wb") as f:
        f.write(data)
    return len(data)


def decode_model(data: bytes) -> ModelCheckpoint:
    mode_code, tensors, meta = decode_avsm(data)
    pairs = _key_values(meta)
    extra = {key: raw for _, key, raw in pairs if key in ("n_classes", "epoch", "val_eer")}
    try:
        config = config_from_pairs([p for p in pairs if p[1] not in extra])
        n_classes = int(extra["n_classes"])
        epoch = int(extra.get("epoch", 0))
        val_eer = float(extra.get("val_eer", "nan"))
    except (KeyError, ValueError, ContractError) as exc:
        raise FormatError(f"invalid model config block: {exc}") from exc
    if mode_code >= len(MODES) or MODES[mode_code] != config.mode:
        raise FormatError(f"mode byte {mode_code} disagrees with config mode {config.mode!r}")
    expected = param_shapes(config.mode, config.d_a, config.d_v, config.asp_hidden, config.embed_dim, n_classes)
    for name in tensors:
        if name not in expected:
            raise FormatError(f"unknown tensor {name!r} for mode {config.mode}")
    for name, shape in expected.items():
        if name not in tensors:
            raise FormatError(f"missing tensor {name!r}")
        if tensors[name].shape != shape:
            raise FormatError(f"tensor {name!r} has shape {tensors[name].shape}, expected {shape}")
    params = {name: tensors[name] for name in expected}
    return ModelCheckpoint(params, config, n_classes, epoch, val_eer)


def load_model(source: PathOrFile) -> ModelCheckpoint:
    with _open(source, "rb") as f:
        return decode_model(f.read())
