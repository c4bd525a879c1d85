"""Toy corpus synthesis, splice strategies, frame labels and training chunks.

Genuine toy utterances are sequences of "words" separated by gaps, laid over a
continuous per-utterance background.  Every utterance has its own voice
(fundamental, harmonic profile) and its own background colour and level, so a
word cut out of one utterance and pasted into another carries foreign timbre
and foreign background up to the exact sample where it was pasted.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np
from joblib import Parallel, delayed
from scipy import signal

from .audio import Waveform, read_wav
from .errors import AnnotationMismatchError, ArgumentError, ConfigError, FormatError

GENUINE = "genuine"
FULLY_FAKE = "fully_fake"
PARTIALLY_FAKE = "partially_fake"
CLASSES = (GENUINE, FULLY_FAKE, PARTIALLY_FAKE)

STRATEGY_REPLACE_GENUINE = 1
STRATEGY_REPLACE_FAKE = 2
STRATEGY_REPEAT = 3

LABEL_HALF_WIDTH = 2

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["id", "path", "class", "segments", "boundaries"],
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "path": {"type": "string"},
        "class": {"enum": list(CLASSES)},
        "segments": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {"type": "integer", "minimum": 0},
                "minItems": 2,
                "maxItems": 2,
            },
        },
        "boundaries": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "source": {"type": "string"},
        "provenance": {"type": "array", "items": {"type": "object"}},
    },
    "additionalProperties": False,
}


@dataclass(frozen=True, order=True)
class WordSegment:
    start_sample: int
    end_sample: int

    def __post_init__(self):
        if not 0 <= self.start_sample < self.end_sample:
            raise ArgumentError(
                f"invalid word segment [{self.start_sample}, {self.end_sample})"
            )

    def __len__(self):
        return self.end_sample - self.start_sample


@dataclass
class SpliceAnnotation:
    """Sample positions where audio from different sources meet.

    ``provenance`` holds one dict per edit with keys ``strategy``, ``donor``,
    ``donor_segment`` and ``target_segment``; the target segment is given in the
    coordinates of the unedited utterance and is empty for insertions.
    """

    boundaries: list[int] = field(default_factory=list)
    provenance: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.boundaries = [int(b) for b in self.boundaries]
        if any(b >= a for b, a in zip(self.boundaries, self.boundaries[1:])):
            raise ArgumentError("splice boundaries must be strictly increasing")


@dataclass
class FrameLabels:
    y: np.ndarray
    frame_shift: float

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.int8)
        if self.y.ndim != 1 or not np.all((self.y == 0) | (self.y == 1)):
            raise ArgumentError("frame labels must be a 1-D 0/1 sequence")

    def __len__(self):
        return self.y.shape[0]


@dataclass
class UtteranceRecord:
    id: str
    audio: Waveform | None
    segments: list[WordSegment]
    label: str
    path: str | None = None
    annotation: SpliceAnnotation | None = None
    source: str | None = None

    def __post_init__(self):
        if self.label not in CLASSES:
            raise ArgumentError(f"unknown utterance class {self.label!r}")
        self.segments = sorted(self.segments)
        for a, b in zip(self.segments, self.segments[1:]):
            if b.start_sample < a.end_sample:
                raise ArgumentError(f"{self.id}: overlapping word segments")
        if self.audio is not None and self.segments:
            if self.segments[-1].end_sample > len(self.audio):
                raise ArgumentError(f"{self.id}: word segment beyond end of audio")
        if self.source is None:
            self.source = self.id

    @property
    def boundaries(self) -> list[int]:
        return [] if self.annotation is None else list(self.annotation.boundaries)

    def load_audio(self) -> Waveform:
        if self.audio is None:
            if self.path is None:
                raise ArgumentError(f"{self.id}: record has neither audio nor path")
            self.audio = read_wav(self.path)
        return self.audio


@dataclass
class CorpusConfig:
    num_utterances: int = 100
    words_per_utterance: tuple[int, int] = (3, 6)
    word_dur: tuple[float, float] = (0.15, 0.35)
    gap_dur: tuple[float, float] = (0.06, 0.15)
    sample_rate: int = 16000
    family: str = "tone"
    id_prefix: str = "utt"

    def validate(self):
        if self.num_utterances < 1:
            raise ConfigError("num_utterances must be >= 1")
        for name in ("words_per_utterance", "word_dur", "gap_dur"):
            lo, hi = getattr(self, name)
            if lo <= 0 or hi <= 0:
                raise ConfigError(f"{name} must be positive, got {(lo, hi)}")
            if lo > hi:
                raise ConfigError(f"{name} has min > max: {(lo, hi)}")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if self.family not in ("tone", "filtered_noise"):
            raise ConfigError(f"unknown toy family {self.family!r}")


def utterance_rng(seed: int, key: str) -> np.random.Generator:
    """Independent stream per utterance so generation parallelises cleanly."""
    return np.random.default_rng([int(seed), zlib.crc32(key.encode("utf-8"))])


def _ramp(n: int, sr: int) -> np.ndarray:
    env = np.ones(n)
    r = min(int(0.005 * sr), n // 2)
    if r > 0:
        edge = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        env[:r] = edge
        env[n - r:] = edge[::-1]
    return env


def _tone_word(rng, n, sr, f0, harm_amps):
    t = np.arange(n) / sr
    pitch = f0 * rng.uniform(0.94, 1.06)
    out = np.zeros(n)
    for k, amp in enumerate(harm_amps, start=1):
        if k * pitch >= 0.45 * sr:
            break
        out += amp * np.sin(2 * np.pi * k * pitch * t + rng.uniform(0, 2 * np.pi))
    return out / (np.max(np.abs(out)) + 1e-12)


def _noise_word(rng, n, sr, center):
    c = center * rng.uniform(0.9, 1.1)
    lo, hi = c / 1.4, min(c * 1.4, 0.45 * sr)
    b, a = signal.butter(2, [lo, hi], btype="band", fs=sr)
    out = signal.lfilter(b, a, rng.standard_normal(n))
    return out / (np.max(np.abs(out)) + 1e-12)


def _synth_utterance(cfg: CorpusConfig, seed: int, index: int) -> UtteranceRecord:
    uid = f"{cfg.id_prefix}{index:05d}"
    rng = utterance_rng(seed, uid)
    sr = cfg.sample_rate
    n_words = int(rng.integers(cfg.words_per_utterance[0], cfg.words_per_utterance[1] + 1))
    word_lens = [int(round(rng.uniform(*cfg.word_dur) * sr)) for _ in range(n_words)]
    gap_lens = [int(round(rng.uniform(*cfg.gap_dur) * sr)) for _ in range(n_words + 1)]
    total = sum(word_lens) + sum(gap_lens)

    # Per-utterance voice and channel.
    f0 = float(np.exp(rng.uniform(np.log(100.0), np.log(300.0))))
    tilt = rng.uniform(0.5, 1.5)
    harm_amps = rng.uniform(0.4, 1.0, size=40) * np.arange(1, 41) ** -tilt
    harm_amps[np.arange(1, 41) * f0 > 4000.0] = 0.0
    band_center = float(np.exp(rng.uniform(np.log(400.0), np.log(3000.0))))
    noise_level = 10 ** (rng.uniform(-45.0, -28.0) / 20)
    colour = rng.uniform(-0.6, 0.9)
    background = signal.lfilter([1.0], [1.0, -colour], rng.standard_normal(total))
    background *= noise_level / (np.std(background) + 1e-12)

    x = background
    segments = []
    pos = gap_lens[0]
    for i, n in enumerate(word_lens):
        if cfg.family == "tone":
            word = _tone_word(rng, n, sr, f0, harm_amps)
        else:
            word = _noise_word(rng, n, sr, band_center)
        x[pos:pos + n] += rng.uniform(0.2, 0.5) * word * _ramp(n, sr)
        segments.append(WordSegment(pos, pos + n))
        pos += n + gap_lens[i + 1]
    x = np.clip(x, -1.0, 1.0)
    label = GENUINE if cfg.family == "tone" else FULLY_FAKE
    return UtteranceRecord(uid, Waveform(x, sr), segments, label)


def generate_toy_corpus(cfg: CorpusConfig, seed: int, n_jobs: int = 1) -> list[UtteranceRecord]:
    """Synthesise ``cfg.num_utterances`` records with exact word extents.

    ``family="tone"`` yields genuine utterances (harmonic words);
    ``family="filtered_noise"`` yields fully fake donor material (band-limited
    noise bursts).  The output depends only on ``cfg`` and ``seed``.
    """
    cfg.validate()
    if n_jobs == 1:
        return [_synth_utterance(cfg, seed, i) for i in range(cfg.num_utterances)]
    return Parallel(n_jobs=n_jobs)(
        delayed(_synth_utterance)(cfg, seed, i) for i in range(cfg.num_utterances)
    )


# -- splicing ---------------------------------------------------------------


def _apply_edits(target: UtteranceRecord, edits):
    """Apply sorted, non-overlapping edits ``(a, b, donor_samples, meta)``.

    Each edit replaces original samples ``[a, b)`` with ``donor_samples``
    (``a == b`` inserts).  Returns output samples, boundaries, output extents of
    the pasted material, and the shift function for original positions.
    """
    x = target.load_audio().samples
    pieces, pasted = [], []
    cursor = 0
    out_len = 0
    for a, b, donor, _ in edits:
        pieces.append(x[cursor:a])
        out_len += a - cursor
        pasted.append((out_len, out_len + len(donor)))
        pieces.append(donor)
        out_len += len(donor)
        cursor = b
    pieces.append(x[cursor:])
    out_len += len(x) - cursor
    samples = np.concatenate(pieces) if pieces else np.zeros(0, np.float32)

    boundaries = sorted({p for ext in pasted for p in ext if 0 < p < out_len})

    def shift(q):
        return q + sum(len(d) - (b - a) for a, b, d, _ in edits if b <= q)

    return samples, boundaries, pasted, shift


def _updated_segments(target, edits, pasted, shift, replaced):
    segs = []
    for i, seg in enumerate(target.segments):
        if i in replaced:
            continue
        segs.append(WordSegment(shift(seg.start_sample), shift(seg.end_sample - 1) + 1))
    segs.extend(WordSegment(s, e) for s, e in pasted)
    return sorted(segs)


def splice_replace(target: UtteranceRecord, donor_pool: Sequence[UtteranceRecord], n: int, rng):
    """Replace ``n`` random words of ``target`` with random donor words.

    Genuine donors realise strategy 1, fake donors strategy 2.  Cuts are hard
    (no crossfade) at sample precision.  Returns ``(waveform, annotation,
    segments)``.
    """
    if target.label != GENUINE:
        raise ArgumentError("splice target must be genuine")
    donors = [d for d in donor_pool if d.id != target.id and d.segments]
    if not donors:
        raise ArgumentError("donor pool is empty")
    if not 1 <= n <= len(target.segments):
        raise ArgumentError(f"cannot replace {n} of {len(target.segments)} segments")
    strategy = (
        STRATEGY_REPLACE_GENUINE
        if all(d.label == GENUINE for d in donors)
        else STRATEGY_REPLACE_FAKE
    )
    chosen = sorted(rng.choice(len(target.segments), size=n, replace=False).tolist())
    counts = np.cumsum([len(d.segments) for d in donors])
    edits = []
    for i in chosen:
        flat = int(rng.integers(counts[-1]))
        d_idx = int(np.searchsorted(counts, flat, side="right"))
        donor = donors[d_idx]
        dseg = donor.segments[flat - (counts[d_idx - 1] if d_idx else 0)]
        dsamp = donor.load_audio().samples[dseg.start_sample:dseg.end_sample]
        tseg = target.segments[i]
        meta = {
            "strategy": strategy,
            "donor": donor.id,
            "donor_segment": [dseg.start_sample, dseg.end_sample],
            "target_segment": [tseg.start_sample, tseg.end_sample],
        }
        edits.append((tseg.start_sample, tseg.end_sample, dsamp, meta))
    samples, boundaries, pasted, shift = _apply_edits(target, edits)
    segments = _updated_segments(target, edits, pasted, shift, set(chosen))
    annotation = SpliceAnnotation(boundaries, [e[3] for e in edits])
    return Waveform(samples, target.audio.sample_rate), annotation, segments


def max_repeats(n_segments: int) -> int:
    return n_segments // 3


def splice_repeat(target: UtteranceRecord, n: int, rng):
    """Duplicate ``n`` random words in place, each copy right after its original."""
    if target.label != GENUINE:
        raise ArgumentError("splice target must be genuine")
    limit = max_repeats(len(target.segments))
    if limit < 1:
        raise ArgumentError(
            f"repeat needs at least 3 word segments, utterance has {len(target.segments)}"
        )
    if not 1 <= n <= limit:
        raise ArgumentError(f"n must lie in [1, {limit}], got {n}")
    chosen = sorted(rng.choice(len(target.segments), size=n, replace=False).tolist())
    x = target.load_audio().samples
    edits = []
    for i in chosen:
        seg = target.segments[i]
        meta = {
            "strategy": STRATEGY_REPEAT,
            "donor": target.id,
            "donor_segment": [seg.start_sample, seg.end_sample],
            "target_segment": [seg.end_sample, seg.end_sample],
        }
        edits.append((seg.end_sample, seg.end_sample, x[seg.start_sample:seg.end_sample], meta))
    samples, boundaries, pasted, shift = _apply_edits(target, edits)
    segments = _updated_segments(target, edits, pasted, shift, set())
    annotation = SpliceAnnotation(boundaries, [e[3] for e in edits])
    return Waveform(samples, target.audio.sample_rate), annotation, segments


def reconstruct(target: Waveform, annotation: SpliceAnnotation, lookup) -> np.ndarray:
    """Rebuild a spliced waveform from its provenance.

    ``lookup`` maps donor ids to their ``Waveform``.
    """
    x = target.samples
    pieces, cursor = [], 0
    for entry in sorted(annotation.provenance, key=lambda e: tuple(e["target_segment"])):
        a, b = entry["target_segment"]
        s, e = entry["donor_segment"]
        pieces.append(x[cursor:a])
        pieces.append(lookup[entry["donor"]].samples[s:e])
        cursor = b
    pieces.append(x[cursor:])
    return np.concatenate(pieces)


def _splice_one(g, genuine, fake, rep, base_seed):
    rng = utterance_rng(base_seed, f"{g.id}/{rep}")
    out = []
    n_seg = len(g.segments)

    def emit(strategy, result):
        wave, ann, segs = result
        out.append(
            UtteranceRecord(
                f"{g.id}-r{rep}-s{strategy}", wave, segs, PARTIALLY_FAKE,
                annotation=ann, source=g.source,
            )
        )

    if n_seg >= 1 and len(genuine) > 1:
        emit(1, splice_replace(g, genuine, int(rng.integers(1, min(3, n_seg) + 1)), rng))
    if n_seg >= 1 and fake:
        emit(2, splice_replace(g, fake, int(rng.integers(1, min(3, n_seg) + 1)), rng))
    if max_repeats(n_seg) >= 1:
        emit(3, splice_repeat(g, int(rng.integers(1, max_repeats(n_seg) + 1)), rng))
    return out


def build_training_pool(genuine, fake, reps_per_strategy: int, rng, n_jobs: int = 1):
    """Apply all three strategies ``reps_per_strategy`` times to each genuine record.

    Inapplicable cases (too few words, no donors) are skipped.  Returned records
    carry their annotation and ``source`` (the genuine utterance they came from).
    """
    if not genuine:
        raise ArgumentError("genuine pool is empty")
    if reps_per_strategy < 0:
        raise ArgumentError("reps_per_strategy must be >= 0")
    base_seed = int(rng.integers(2**63))
    jobs = [(g, rep) for g in genuine for rep in range(reps_per_strategy)]
    if n_jobs == 1:
        parts = [_splice_one(g, genuine, fake, rep, base_seed) for g, rep in jobs]
    else:
        parts = Parallel(n_jobs=n_jobs)(
            delayed(_splice_one)(g, genuine, fake, rep, base_seed) for g, rep in jobs
        )
    return [r for part in parts for r in part]


# -- labels and chunks --------------------------------------------------------


def frame_hop(frame_shift: float, sample_rate: int) -> int:
    return int(round(frame_shift * sample_rate))


def frame_count(num_samples: int, frame_length: int, hop: int) -> int:
    if num_samples < frame_length:
        return 0
    return 1 + (num_samples - frame_length) // hop


def labels_from_annotation(ann, frame_shift: float, sample_rate: int, T: int) -> FrameLabels:
    """Ones on each boundary frame and its two neighbours either side."""
    if T < 1:
        raise ArgumentError("T must be >= 1")
    if frame_shift <= 0:
        raise ArgumentError("frame_shift must be positive")
    boundaries = ann.boundaries if isinstance(ann, SpliceAnnotation) else list(ann)
    hop = frame_hop(frame_shift, sample_rate)
    y = np.zeros(T, dtype=np.int8)
    for s in boundaries:
        if not 0 <= s < T * hop:
            raise AnnotationMismatchError(
                f"boundary at sample {s} falls outside {T} frames of hop {hop}"
            )
        b = s // hop
        y[max(0, b - LABEL_HALF_WIDTH):min(T, b + LABEL_HALF_WIDTH + 1)] = 1
    return FrameLabels(y, frame_shift)


def sample_training_chunk(
    pool,
    chunk_len: float,
    p_genuine: float,
    rng,
    frame_length: float = 0.025,
    frame_shift: float = 0.010,
):
    """Draw one fixed-length training chunk and its frame labels.

    Short utterances are tiled to length; the wrap seams are not labelled.
    """
    if not 0.0 <= p_genuine <= 1.0:
        raise ArgumentError(f"p_genuine must lie in [0, 1], got {p_genuine}")
    if chunk_len <= 0:
        raise ArgumentError("chunk_len must be positive")
    genuine = [r for r in pool if r.label == GENUINE]
    spliced = [r for r in pool if r.label == PARTIALLY_FAKE]
    take_genuine = rng.random() < p_genuine
    candidates = genuine if take_genuine else spliced
    if not candidates:
        raise ArgumentError("training pool has no utterances of the requested class")
    record = candidates[int(rng.integers(len(candidates)))]
    wave = record.load_audio()
    sr = wave.sample_rate
    L = int(round(chunk_len * sr))
    x = wave.samples
    n = len(x)
    bounds = record.boundaries
    if n >= L:
        start = int(rng.integers(0, n - L + 1))
        chunk = x[start:start + L]
        local = [b - start for b in bounds if start <= b < start + L]
    else:
        reps = -(-L // n)
        chunk = np.tile(x, reps)[:L]
        local = sorted(b + k * n for k in range(reps) for b in bounds if b + k * n < L)
    hop = frame_hop(frame_shift, sr)
    T = frame_count(L, int(round(frame_length * sr)), hop)
    local = [b for b in local if b < T * hop]
    return Waveform(chunk, sr), labels_from_annotation(local, frame_shift, sr, T)


# -- manifests ------------------------------------------------------------


def record_to_json(record: UtteranceRecord, path: str) -> dict:
    obj = {
        "id": record.id,
        "path": path,
        "class": record.label,
        "segments": [[s.start_sample, s.end_sample] for s in record.segments],
        "boundaries": record.boundaries,
        "source": record.source,
    }
    if record.annotation is not None and record.annotation.provenance:
        obj["provenance"] = record.annotation.provenance
    return obj


def write_manifest(entries: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for obj in entries:
            jsonschema.validate(obj, MANIFEST_SCHEMA)
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def read_manifest(path, root=None) -> list[UtteranceRecord]:
    """Load a JSON-lines manifest; relative audio paths resolve against ``root``
    (default: the manifest's directory).  Audio is loaded lazily."""
    path = Path(path)
    root = Path(root) if root is not None else path.parent
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                jsonschema.validate(obj, MANIFEST_SCHEMA)
            except (json.JSONDecodeError, jsonschema.ValidationError) as exc:
                msg = getattr(exc, "message", str(exc))
                raise FormatError(f"{path}:{lineno}: {msg}") from exc
            audio_path = obj["path"]
            if not os.path.isabs(audio_path):
                audio_path = str(root / audio_path)
            try:
                segments = [WordSegment(s, e) for s, e in obj["segments"]]
                ann = SpliceAnnotation(obj["boundaries"], obj.get("provenance", []))
                records.append(
                    UtteranceRecord(
                        obj["id"], None, segments, obj["class"], path=audio_path,
                        annotation=ann, source=obj.get("source"),
                    )
                )
            except ArgumentError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return records
