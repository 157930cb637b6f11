"""Feature files, trial lists, score files and the synthetic speaker corpus.

AVFV layout (little-endian)::

    header   "AVFV" | u32 version=1 | u8 modality (0 audio, 1 visual) | u32 count
    record   u16 len | utt id (UTF-8) | u16 len | speaker id (UTF-8)
             | u32 d | u32 L | d*L float32, segment-major

Segment-major means the ``L`` column vectors of the ``d x L`` matrix are
written one after another.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass
from itertools import combinations
from typing import BinaryIO, Iterable, Sequence, Union

import numpy as np

from .errors import ContractError, FormatError
from .rng import SplitMix64

MAGIC = b"AVFV"
VERSION = 1
MODALITIES = ("audio", "visual")
HEADER = struct.Struct("<4sIBI")

PathOrFile = Union[str, os.PathLike, BinaryIO]


@dataclass
class UtteranceFeatures:
    utt_id: str
    speaker_id: str
    modality: str
    values: np.ndarray  # d x L, column l is segment l

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ContractError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] < 1:
            raise ContractError(f"{self.utt_id}: values must be d x L with L >= 1")

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def L(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, UtteranceFeatures):
            return NotImplemented
        return (
            (self.utt_id, self.speaker_id, self.modality) == (other.utt_id, other.speaker_id, other.modality)
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )


def _open(target: PathOrFile, mode: str):
    if hasattr(target, "read") or hasattr(target, "write"):
        return _NoClose(target)
    return open(target, mode)


class _NoClose:
    def __init__(self, f):
        self.f = f

    def __enter__(self):
        return self.f

    def __exit__(self, *exc):
        return False


def encode_features(records: Sequence[UtteranceFeatures]) -> bytes:
    modalities = {r.modality for r in records}
    if len(modalities) > 1:
        raise ContractError(f"records mix modalities {sorted(modalities)}")
    modality = modalities.pop() if modalities else "audio"
    buf = io.BytesIO()
    buf.write(HEADER.pack(MAGIC, VERSION, MODALITIES.index(modality), len(records)))
    for r in records:
        for text in (r.utt_id, r.speaker_id):
            raw = text.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ContractError(f"identifier too long: {text[:40]}...")
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
        buf.write(struct.pack("<II", r.d, r.L))
        buf.write(np.ascontiguousarray(r.values.T, dtype="<f4").tobytes())
    return buf.getvalue()


def write_features(records: Sequence[UtteranceFeatures], destination: PathOrFile) -> int:
    """Write ``records`` as AVFV; returns the number of bytes written."""
    data = encode_features(records)
    with _open(destination, "wb") as f:
        f.write(data)
    return len(data)


def decode_features(data: bytes) -> list[UtteranceFeatures]:
    if len(data) < HEADER.size:
        raise FormatError(f"AVFV header truncated ({len(data)} bytes)")
    magic, version, modality, count = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported AVFV version {version}")
    if modality >= len(MODALITIES):
        raise FormatError(f"unknown modality code {modality}")
    pos = HEADER.size
    records = []

    def take(n, what, k):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"record {k}: truncated while reading {what}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    for k in range(count):
        ids = []
        for what in ("utterance id", "speaker id"):
            (n,) = struct.unpack("<H", take(2, f"{what} length", k))
            try:
                ids.append(take(n, what, k).decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise FormatError(f"record {k}: {what} is not UTF-8") from exc
        d, L = struct.unpack("<II", take(8, "dimensions", k))
        if d < 1 or L < 1:
            raise FormatError(f"record {k} ({ids[0]}): d and L must be positive, got {d}x{L}")
        need = 4 * d * L
        if pos + need > len(data):
            have = (len(data) - pos) // 4
            raise FormatError(f"record {k} ({ids[0]}): declares {d * L} values but only {have} present")
        vals = np.frombuffer(take(need, "values", k), dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(vals)):
            raise FormatError(f"record {k} ({ids[0]}): non-finite value")
        records.append(UtteranceFeatures(ids[0], ids[1], MODALITIES[modality], vals.reshape(L, d).T.copy()))
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after {count} records")
    return records


def read_features(source: PathOrFile) -> list[UtteranceFeatures]:
    with _open(source, "rb") as f:
        return decode_features(f.read())


def sample_segments(frames: np.ndarray, L: int) -> np.ndarray:
    """Pick ``L`` uniformly spaced columns ``floor(i*T/L)`` from a ``d x T`` matrix."""
    frames = np.asarray(frames)
    T = frames.shape[1]
    if L < 1 or T < L:
        raise ContractError(f"need T >= L >= 1, got T={T}, L={L}")
    return frames[:, (np.arange(L) * T) // L].copy()


# ---------------------------------------------------------------------------
# Trials and scores
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trial:
    label: int
    enroll: str
    test: str


def parse_trials(text: str) -> list[Trial]:
    trials, seen = [], set()
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 3:
            raise FormatError(f"line {lineno}: expected '<label> <enroll> <test>', got {len(fields)} fields")
        if fields[0] not in ("0", "1"):
            raise FormatError(f"line {lineno}: label must be 0 or 1, got {fields[0]!r}")
        pair = (fields[1], fields[2])
        if pair in seen:
            raise FormatError(f"line {lineno}: duplicate trial {pair[0]} {pair[1]}")
        seen.add(pair)
        trials.append(Trial(int(fields[0]), *pair))
    return trials


def read_trials(source: PathOrFile) -> list[Trial]:
    with _open(source, "rb") as f:
        return parse_trials(f.read().decode("utf-8"))


def format_trials(trials: Iterable[Trial]) -> str:
    return "".join(f"{t.label} {t.enroll} {t.test}\n" for t in trials)


def write_trials(trials: Iterable[Trial], destination: PathOrFile) -> int:
    data = format_trials(trials).encode("utf-8")
    with _open(destination, "wb") as f:
        f.write(data)
    return len(data)


def format_scores(scores: Iterable[tuple[str, str, float]]) -> str:
    return "".join(f"{e} {t} {s:.6f}\n" for e, t, s in scores)


def write_scores(scores: Iterable[tuple[str, str, float]], destination: PathOrFile) -> int:
    """Write ``(enroll, test, score)`` triples, scores to 6 decimals."""
    data = format_scores(scores).encode("utf-8")
    with _open(destination, "wb") as f:
        f.write(data)
    return len(data)


def read_scores(source: PathOrFile) -> list[tuple[str, str, float]]:
    with _open(source, "rb") as f:
        text = f.read().decode("utf-8")
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 3:
            raise FormatError(f"line {lineno}: expected '<enroll> <test> <score>'")
        try:
            score = float(fields[2])
        except ValueError:
            raise FormatError(f"line {lineno}: score {fields[2]!r} is not a number") from None
        if not np.isfinite(score):
            raise FormatError(f"line {lineno}: non-finite score")
        out.append((fields[0], fields[1], score))
    return out


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------


@dataclass
class SyntheticConfig:
    speakers: int = 20
    utterances: int = 10
    L: int = 4
    d_a: int = 8
    d_v: int = 16
    noise: float = 0.5
    corrupt_audio: float = 0.0
    corrupt_visual: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        for name in ("speakers", "utterances", "L", "d_a", "d_v"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if self.noise < 0:
            raise ContractError("noise must be >= 0")
        for name in ("corrupt_audio", "corrupt_visual"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ContractError(f"{name} must lie in [0, 1]")


def utterance_id(speaker: int, utt: int) -> str:
    return f"spk{speaker:03d}-utt{utt:03d}"


def _corrupted(rng: SplitMix64, total: int, fraction: float) -> np.ndarray:
    flags = np.zeros(total, dtype=bool)
    flags[rng.permutation(total)[: int(round(fraction * total))]] = True
    return flags


def synth_dataset(config: SyntheticConfig):
    """Seeded two-modality speaker corpus.

    Each speaker gets unit-norm audio and visual centroids; every segment of
    an utterance is ``centroid + N(0, noise^2)``. A fixed fraction of the
    utterances per modality (chosen on independent streams) is replaced by
    pure ``N(0, 1)`` noise. Values are rounded to float32 so that an AVFV
    round trip is lossless.

    Returns ``(audio_records, visual_records, speaker_of)``.
    """
    config.validate()
    master = SplitMix64(config.seed)
    centroid_rng = master.spawn()
    noise_rng = master.spawn()
    corrupt_a = _corrupted(master.spawn(), config.speakers * config.utterances, config.corrupt_audio)
    corrupt_v = _corrupted(master.spawn(), config.speakers * config.utterances, config.corrupt_visual)

    audio, visual, speaker_of = [], [], {}
    for s in range(config.speakers):
        spk = f"spk{s:03d}"
        centroids = {}
        for modality, d in (("audio", config.d_a), ("visual", config.d_v)):
            c = centroid_rng.normal(d)
            centroids[modality] = c / np.linalg.norm(c)
        for u in range(config.utterances):
            k = s * config.utterances + u
            uid = utterance_id(s, u)
            speaker_of[uid] = spk
            for modality, d, flags, out in (
                ("audio", config.d_a, corrupt_a, audio),
                ("visual", config.d_v, corrupt_v, visual),
            ):
                noise = noise_rng.normal(d * config.L).reshape(config.L, d).T
                if flags[k]:
                    values = noise
                else:
                    values = centroids[modality][:, None] + config.noise * noise
                values = values.astype(np.float32).astype(np.float64)
                out.append(UtteranceFeatures(uid, spk, modality, values))
    return audio, visual, speaker_of


def make_trials(records: Sequence[UtteranceFeatures], holdout: int) -> list[Trial]:
    """All pairs among the last ``holdout`` utterances of every speaker."""
    by_speaker: dict[str, list[str]] = {}
    for r in records:
        by_speaker.setdefault(r.speaker_id, []).append(r.utt_id)
    held = [u for utts in by_speaker.values() for u in utts[len(utts) - holdout :]] if holdout > 0 else []
    speaker = {r.utt_id: r.speaker_id for r in records}
    return [Trial(int(speaker[a] == speaker[b]), a, b) for a, b in combinations(held, 2)]
