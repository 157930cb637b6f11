"""Equal error rate and trial scoring.

Threshold convention: a trial is accepted when ``score >= theta``. FAR is the
fraction of nontarget trials accepted, FRR the fraction of target trials
with ``score < theta``. The EER is read off where the piecewise-linear path
through consecutive operating points crosses ``FAR == FRR``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, FormatError
from .features import Trial
from .head import cosine_score


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float

    def line(self) -> str:
        return f"EER={100.0 * self.eer:.3f} THRESH={self.threshold:.6f}"


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise ContractError(f"{scores.size} scores but {labels.size} labels")
    if not np.all(np.isfinite(scores)):
        raise ContractError("scores must be finite")
    if labels.all() or not labels.any():
        raise ContractError("EER needs at least one target and one nontarget trial")
    return scores, labels


def _crossing(thresholds, far, frr) -> EerResult:
    """Interpolate the first sign change of FAR - FRR along descending thresholds."""
    diff = far - frr
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0 or k == 0:
        return EerResult(float((far[k] + frr[k]) / 2), float(thresholds[k]))
    t = -diff[k - 1] / (diff[k] - diff[k - 1])
    far_x = far[k - 1] + t * (far[k] - far[k - 1])
    frr_x = frr[k - 1] + t * (frr[k] - frr[k - 1])
    theta = thresholds[k - 1] + t * (thresholds[k] - thresholds[k - 1])
    return EerResult(float((far_x + frr_x) / 2), float(theta))


def compute_eer(scores, labels) -> EerResult:
    """EER by a single sweep over sorted distinct scores.

    ``labels`` are 1 for target and 0 for nontarget trials.
    """
    scores, labels = _validate(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s, lab = scores[order], labels[order]
    n_tar, n_non = lab.sum(), (~lab).sum()
    # Last position of each run of equal scores: accepting at that score admits the whole run.
    last = np.r_[np.nonzero(s[1:] != s[:-1])[0], s.size - 1]
    far = np.r_[0.0, np.cumsum(~lab)[last] / n_non]
    frr = np.r_[1.0, 1.0 - np.cumsum(lab)[last] / n_tar]
    # The virtual all-reject point sits at the top score.
    thresholds = np.r_[s[0], s[last]]
    return _crossing(thresholds, far, frr)


def eer_oracle(scores, labels) -> EerResult:
    """Brute-force EER: counts FAR/FRR directly at every distinct score and midpoint (O(n^2))."""
    scores, labels = _validate(scores, labels)
    tar = [float(x) for x in scores[labels]]
    non = [float(x) for x in scores[~labels]]
    distinct = sorted(set(scores.tolist()), reverse=True)
    candidates = [distinct[0]]
    for i, value in enumerate(distinct):
        if i:
            candidates.append((distinct[i - 1] + value) / 2)
        candidates.append(value)
    points = [(distinct[0], 0.0, 1.0)]  # nothing accepted
    for theta in candidates:
        far = sum(1 for x in non if x >= theta) / len(non)
        frr = sum(1 for x in tar if x < theta) / len(tar)
        points.append((theta, far, frr))
    gaps = [abs(f - r) for _, f, r in points]
    best = min(range(len(points)), key=lambda i: (gaps[i], i))
    theta, far, frr = points[best]
    if far == frr:
        return EerResult((far + frr) / 2, theta)
    # Interpolate toward the neighbour on the other side of the crossing.
    nb = best + 1 if far < frr else best - 1
    while points[nb][1] - points[nb][2] == far - frr:
        nb += 1 if far < frr else -1
    lo, hi = (best, nb) if nb > best else (nb, best)
    (t0, f0, r0), (t1, f1, r1) = points[lo], points[hi]
    t = -(f0 - r0) / ((f1 - r1) - (f0 - r0))
    return EerResult(((f0 + t * (f1 - f0)) + (r0 + t * (r1 - r0))) / 2, t0 + t * (t1 - t0))


def score_trials(
    embeddings: Mapping[str, np.ndarray], trials: Sequence[Trial]
) -> list[tuple[str, str, float, int]]:
    """Cosine score per trial in input order: ``(enroll, test, score, label)``."""
    out = []
    for lineno, t in enumerate(trials, 1):
        for uid in (t.enroll, t.test):
            if uid not in embeddings:
                raise FormatError(f"trial line {lineno}: no embedding for utterance {uid!r}")
        out.append((t.enroll, t.test, cosine_score(embeddings[t.enroll], embeddings[t.test]), t.label))
    return out
