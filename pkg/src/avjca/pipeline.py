"""Utterance -> embedding -> trial scores -> EER."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, FormatError
from .features import Trial, UtteranceFeatures
from .fusion import score_fusion
from .head import cosine_score
from .metrics import EerResult, compute_eer
from .model import embed_batch
from .training import ModelCheckpoint, stack_batch

EVAL_BATCH = 256


def embed_utterances(
    model: ModelCheckpoint,
    audio: Sequence[UtteranceFeatures],
    visual: Sequence[UtteranceFeatures],
    ids: Sequence[str] | None = None,
) -> dict[str, np.ndarray]:
    """Embeddings keyed by utterance id.

    Each value is ``e x 1``; in ``score`` mode it is ``e x 2`` with the audio
    embedding in column 0 and the visual one in column 1.
    """
    cfg = model.config
    by_id_a = {r.utt_id: r for r in audio}
    by_id_v = {r.utt_id: r for r in visual}
    if ids is None:
        ids = [r.utt_id for r in audio]
    for uid in ids:
        if uid not in by_id_a or uid not in by_id_v:
            raise FormatError(f"utterance {uid!r} missing from the audio or visual features")
    out: dict[str, np.ndarray] = {}
    for start in range(0, len(ids), EVAL_BATCH):
        chunk = list(ids[start : start + EVAL_BATCH])
        embs = embed_batch(
            cfg.mode,
            model.params,
            stack_batch([by_id_a[u] for u in chunk]),
            stack_batch([by_id_v[u] for u in chunk]),
            cfg.L,
        )
        stacked = np.stack([embs[k] for k in sorted(embs)], axis=2)  # e x B x heads
        for j, uid in enumerate(chunk):
            out[uid] = stacked[:, j, :].copy()
    return out


def trial_scores(
    model: ModelCheckpoint, embeddings: Mapping[str, np.ndarray], trials: Sequence[Trial]
) -> list[tuple[str, str, float]]:
    """Cosine per trial; two-head embeddings are combined with the configured fusion weight."""
    out = []
    for lineno, t in enumerate(trials, 1):
        for uid in (t.enroll, t.test):
            if uid not in embeddings:
                raise FormatError(f"trial line {lineno}: no embedding for utterance {uid!r}")
        e1, e2 = embeddings[t.enroll], embeddings[t.test]
        if e1.shape != e2.shape:
            raise ContractError(f"trial line {lineno}: embedding shapes differ")
        per_head = [cosine_score(e1[:, k], e2[:, k]) for k in range(e1.shape[1])]
        if len(per_head) == 2:
            score = score_fusion(per_head[0], per_head[1], model.config.fusion_weight)
        else:
            score = per_head[0]
        out.append((t.enroll, t.test, score))
    return out


def evaluate_pipeline(
    model: ModelCheckpoint,
    audio: Sequence[UtteranceFeatures],
    visual: Sequence[UtteranceFeatures],
    trials: Sequence[Trial],
) -> EerResult:
    needed = list(dict.fromkeys(u for t in trials for u in (t.enroll, t.test)))
    embs = embed_utterances(model, audio, visual, needed)
    scores = trial_scores(model, embs, trials)
    return compute_eer([s for _, _, s in scores], [t.label for t in trials])
