"""Training loop, chunked-overlap inference, scoring and evaluation metrics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from .audio import Waveform
from .corpus import GENUINE, PARTIALLY_FAKE, frame_count, frame_hop, sample_training_chunk
from .errors import ArgumentError, ConfigError, InvariantError
from .features import FbankConfig, FeatureMatrix, fbank240
from .model import DetectorConfig, DetectorParams, average_checkpoints, detector_logits
from .nncore import adam_step, bce_with_logits, no_grad, noam_lr, sigmoid
from .nncore.optim import OptimizerState


# -- configuration --------------------------------------------------------


def _from_dict(cls, d):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class TrainConfig:
    chunk_len: float = 1.28
    batch: int = 64
    epochs: int = 100
    steps_per_epoch: int = 100
    max_steps: int | None = None
    lr: float = 1e-4
    warmup: int = 1600
    p_genuine: float = 0.5
    seed: int = 0
    validate_every: int = 100
    keep_best: int = 5
    noise_std: float = 0.0

    def __post_init__(self):
        if self.chunk_len <= 0:
            raise ConfigError("chunk_len must be positive")
        if self.batch < 1 or self.keep_best < 1:
            raise ConfigError("batch and keep_best must be >= 1")
        if not 0.0 <= self.p_genuine <= 1.0:
            raise ConfigError("p_genuine must lie in [0, 1]")
        if self.validate_every < 1 or self.warmup < 1:
            raise ConfigError("validate_every and warmup must be >= 1")

    @property
    def total_steps(self) -> int:
        return self.max_steps if self.max_steps is not None else self.epochs * self.steps_per_epoch

    from_dict = classmethod(_from_dict)


@dataclass
class InferenceConfig:
    chunk_len: float = 1.28
    overlap: float = 0.5
    top_n: int = 4
    threshold: float = 0.5
    tolerance_frames: int = 5
    batch: int = 32

    def __post_init__(self):
        if not 0.0 <= self.overlap < 1.0:
            raise ConfigError("overlap must lie in [0, 1)")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]")
        if self.top_n < 1:
            raise ConfigError("top_n must be >= 1")

    from_dict = classmethod(_from_dict)


# -- chunked inference ------------------------------------------------------


@dataclass
class ChunkPlan:
    starts: list[int]
    chunk_len: int
    overlap_fraction: float


def plan_chunks(num_samples: int, chunk_len: int, overlap_fraction: float = 0.5, align: int = 1) -> ChunkPlan:
    """Overlapping windows covering ``[0, num_samples)``.

    Starts advance by ``chunk_len * (1 - overlap_fraction)``; the last window is
    pulled back so it ends at the final sample.  With ``align > 1`` every start
    is a multiple of ``align`` (the last one rounded up, so it may overhang the
    end by less than ``align`` samples).
    """
    if chunk_len < 1:
        raise ArgumentError("chunk_len must be >= 1")
    if not 0.0 <= overlap_fraction < 1.0:
        raise ArgumentError("overlap_fraction must lie in [0, 1)")
    if align > chunk_len:
        raise ArgumentError(f"chunk_len {chunk_len} is shorter than the alignment step {align}")
    stride = max(1, int(round(chunk_len * (1.0 - overlap_fraction))))
    if align > 1:
        stride = max(align, stride // align * align)
    starts = [0]
    while starts[-1] + chunk_len < num_samples:
        nxt = starts[-1] + stride
        if nxt + chunk_len >= num_samples:
            nxt = num_samples - chunk_len
            if align > 1:
                nxt = -(-nxt // align) * align
            if nxt <= starts[-1]:
                break
        starts.append(nxt)
    return ChunkPlan(starts, chunk_len, overlap_fraction)


def merge_chunk_probs(chunk_outputs, plan: ChunkPlan, total_frames: int, hop: int = 1) -> np.ndarray:
    """Average overlapping chunk predictions onto the utterance frame grid.

    Chunk ``k`` frame ``j`` lands on global frame ``starts[k] // hop + j``;
    frames at or beyond ``total_frames`` (padding) are discarded.
    """
    if len(chunk_outputs) != len(plan.starts):
        raise InvariantError("one output per planned chunk is required")
    acc = np.zeros(total_frames)
    count = np.zeros(total_frames)
    for start, out in zip(plan.starts, chunk_outputs):
        if start % hop:
            raise InvariantError(f"chunk start {start} is not aligned to hop {hop}")
        offset = start // hop
        if offset >= total_frames:
            raise InvariantError(f"chunk at frame {offset} lies beyond {total_frames} frames")
        out = np.asarray(out, dtype=np.float64)
        n = min(len(out), total_frames - offset)
        acc[offset:offset + n] += out[:n]
        count[offset:offset + n] += 1
    if np.any(count == 0):
        raise InvariantError("chunk plan leaves frames uncovered")
    return acc / count


def _take_wrapped(x: np.ndarray, start: int, length: int) -> np.ndarray:
    return np.take(x, np.arange(start, start + length), axis=0, mode="wrap")


def predict_frame_probs(params: DetectorParams, inputs: Sequence, infer: InferenceConfig,
                        fbank_cfg: FbankConfig = FbankConfig()) -> list[np.ndarray]:
    """Chunked-overlap inference for waveforms or imported feature matrices.

    Chunks from all inputs are pooled and run through the network in
    mini-batches of ``infer.batch``; results are merged back per input.
    """
    jobs = []  # (input index, features of one chunk)
    plans = []
    for idx, item in enumerate(inputs):
        if isinstance(item, Waveform):
            sr = item.sample_rate
            hop = frame_hop(fbank_cfg.frame_shift, sr)
            flen = int(round(fbank_cfg.frame_length * sr))
            total = frame_count(len(item), flen, hop)
            if total < 1:
                raise ArgumentError(f"input {idx} is shorter than one analysis frame")
            L = int(round(infer.chunk_len * sr))
            plan = plan_chunks(len(item), L, infer.overlap, align=hop)
            for s in plan.starts:
                chunk = Waveform(_take_wrapped(item.samples, s, L), sr)
                jobs.append((idx, fbank240(chunk, fbank_cfg).values))
        elif isinstance(item, FeatureMatrix):
            hop = 1
            total = item.num_frames
            L = max(1, int(round(infer.chunk_len / item.frame_shift)))
            plan = plan_chunks(total, L, infer.overlap)
            for s in plan.starts:
                jobs.append((idx, _take_wrapped(item.values, s, L)))
        else:
            raise ArgumentError(f"cannot run inference on {type(item).__name__}")
        plans.append((plan, total, hop))

    outputs = [[] for _ in inputs]
    dtype = params.dtype
    with no_grad():
        for b in range(0, len(jobs), infer.batch):
            group = jobs[b:b + infer.batch]
            # Equal chunk lengths within an input kind; split by shape if mixed.
            shapes = {}
            for k, (_, feats) in enumerate(group):
                shapes.setdefault(feats.shape, []).append(k)
            probs = [None] * len(group)
            for ks in shapes.values():
                X = np.stack([group[k][1] for k in ks]).astype(dtype)
                P = sigmoid(detector_logits(X, params)).data
                for k, row in zip(ks, P):
                    probs[k] = row
            for (idx, _), p in zip(group, probs):
                outputs[idx].append(p)
    return [merge_chunk_probs(outputs[i], *plans[i]) for i in range(len(inputs))]


# -- scoring --------------------------------------------------------------


def detect_boundaries(probs, threshold: float) -> list[int]:
    """Frames above ``threshold``, one per run of consecutive frames (its argmax)."""
    if not 0.0 <= threshold <= 1.0:
        raise ArgumentError("threshold must lie in [0, 1]")
    p = np.asarray(probs, dtype=np.float64)
    above = p > threshold
    if not above.any():
        return []
    edges = np.flatnonzero(np.diff(np.concatenate([[0], above.astype(np.int8), [0]])))
    return [int(s + np.argmax(p[s:e])) for s, e in zip(edges[::2], edges[1::2])]


def utterance_score(probs, n: int = 4) -> float:
    """Mean of the ``n`` largest frame probabilities (all of them if fewer)."""
    p = np.asarray(probs, dtype=np.float64)
    if p.size < 1:
        raise ArgumentError("need at least one frame probability")
    if p.size <= n:
        return float(p.mean())
    return float(np.partition(p, p.size - n)[p.size - n:].mean())


def det_curve(genuine_scores, fake_scores):
    """FAR/FRR at every distinct threshold (higher score = more likely fake).

    The first point is the threshold below every score (FAR 1, FRR 0).
    """
    g = np.sort(np.asarray(genuine_scores, dtype=np.float64))
    f = np.sort(np.asarray(fake_scores, dtype=np.float64))
    if g.size == 0 or f.size == 0:
        raise ArgumentError("both score lists must be non-empty")
    thresholds = np.unique(np.concatenate([g, f]))
    far = (g.size - np.searchsorted(g, thresholds, side="right")) / g.size
    frr = np.searchsorted(f, thresholds, side="right") / f.size
    return (
        np.concatenate([[-np.inf], thresholds]),
        np.concatenate([[1.0], far]),
        np.concatenate([[0.0], frr]),
    )


def compute_eer(genuine_scores, fake_scores) -> tuple[float, float]:
    """Equal error rate and the threshold where FAR and FRR cross.

    The crossing is linearly interpolated between the bracketing thresholds.
    """
    thr, far, frr = det_curve(genuine_scores, fake_scores)
    d = far - frr
    k = int(np.argmax(d <= 0))
    if d[k] == 0:
        return float(far[k]), float(thr[k])
    alpha = d[k - 1] / (d[k - 1] - d[k])
    eer = far[k - 1] + alpha * (far[k] - far[k - 1])
    if k - 1 == 0:
        return float(eer), float(thr[k])
    return float(eer), float(thr[k - 1] + alpha * (thr[k] - thr[k - 1]))


def match_boundaries(predicted, true, tolerance_frames: int = 5) -> list[tuple[int, int]]:
    """Greedy one-to-one matching, closest pairs first (ties by position)."""
    if tolerance_frames < 0:
        raise ArgumentError("tolerance must be >= 0")
    pairs = sorted(
        (abs(p - t), i, j)
        for i, p in enumerate(predicted)
        for j, t in enumerate(true)
        if abs(p - t) <= tolerance_frames
    )
    used_p, used_t, matches = set(), set(), []
    for _, i, j in pairs:
        if i not in used_p and j not in used_t:
            used_p.add(i)
            used_t.add(j)
            matches.append((i, j))
    return matches


def _prf(matched, n_pred, n_true):
    precision = matched / n_pred if n_pred else 0.0
    recall = matched / n_true if n_true else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def localization_metrics(predicted, true, tolerance_frames: int = 5) -> tuple[float, float, float]:
    """Precision, recall and F1 of boundary frames within ``tolerance_frames``."""
    matched = len(match_boundaries(predicted, true, tolerance_frames))
    return _prf(matched, len(predicted), len(true))


# -- reports --------------------------------------------------------------


@dataclass
class ScoreReport:
    config: dict
    utterances: list[dict]
    metrics: dict
    checkpoint: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ScoreReport":
        return cls(**json.loads(text))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "ScoreReport":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def det_csv(self) -> str:
        scores = {GENUINE: [], "fake": []}
        for u in self.utterances:
            scores[GENUINE if u["label"] == GENUINE else "fake"].append(u["score"])
        thr, far, frr = det_curve(scores[GENUINE], scores["fake"])
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["threshold", "far", "frr"])
        for row in zip(thr, far, frr):
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def predict_parallel(params: DetectorParams, inputs: Sequence, infer: InferenceConfig,
                     fbank_cfg: FbankConfig = FbankConfig(), n_jobs: int = 1) -> list[np.ndarray]:
    """``predict_frame_probs`` over contiguous shards of ``inputs`` in worker processes."""
    inputs = list(inputs)
    if n_jobs == 1 or len(inputs) < 2:
        return predict_frame_probs(params, inputs, infer, fbank_cfg)
    n_jobs = min(n_jobs, len(inputs))
    edges = np.linspace(0, len(inputs), n_jobs + 1).astype(int)
    shards = Parallel(n_jobs=n_jobs)(
        delayed(predict_frame_probs)(params, inputs[a:b], infer, fbank_cfg) for a, b in zip(edges, edges[1:])
    )
    return [p for shard in shards for p in shard]


def evaluate(params: DetectorParams, records, infer: InferenceConfig = InferenceConfig(),
             fbank_cfg: FbankConfig = FbankConfig(), config_echo: dict | None = None,
             checkpoint_info: dict | None = None, keep_probs: bool = True, n_jobs: int = 1) -> ScoreReport:
    """Score every record, then compute EER and boundary localisation.

    EER contrasts genuine records with all others; localisation is measured on
    partially fake records against their annotated boundaries.
    """
    records = list(records)
    waves = [r.load_audio() for r in records]
    probs = predict_parallel(params, waves, infer, fbank_cfg, n_jobs)
    entries = []
    matched = n_pred = n_true = 0
    for rec, wave, p in zip(records, waves, probs):
        hop = frame_hop(fbank_cfg.frame_shift, wave.sample_rate)
        truth = sorted({b // hop for b in rec.boundaries})
        detected = detect_boundaries(p, infer.threshold)
        entry = {
            "id": rec.id,
            "label": rec.label,
            "score": utterance_score(p, infer.top_n),
            "boundaries_true": truth,
            "boundaries_detected": detected,
        }
        if keep_probs:
            entry["probs"] = [float(v) for v in p]
        if rec.label == PARTIALLY_FAKE:
            matched += len(match_boundaries(detected, truth, infer.tolerance_frames))
            n_pred += len(detected)
            n_true += len(truth)
        entries.append(entry)
    genuine = [e["score"] for e in entries if e["label"] == GENUINE]
    fake = [e["score"] for e in entries if e["label"] != GENUINE]
    metrics = {"num_genuine": len(genuine), "num_fake": len(fake)}
    if genuine and fake:
        eer, thr = compute_eer(genuine, fake)
        metrics.update(eer=eer, eer_threshold=thr)
    precision, recall, f1 = _prf(matched, n_pred, n_true)
    metrics["localization"] = {
        "precision": precision, "recall": recall, "f1": f1,
        "matched": matched, "predicted": n_pred, "true": n_true,
        "tolerance_frames": infer.tolerance_frames,
    }
    metrics["detection_threshold"] = infer.threshold
    return ScoreReport(config_echo or {"inference": asdict(infer)}, entries, metrics, checkpoint_info or {})


def score_records(params, records, infer, fbank_cfg=FbankConfig(), n_jobs: int = 1) -> tuple[list[float], list[float]]:
    waves = [r.load_audio() for r in records]
    probs = predict_parallel(params, waves, infer, fbank_cfg, n_jobs)
    genuine, fake = [], []
    for rec, p in zip(records, probs):
        (genuine if rec.label == GENUINE else fake).append(utterance_score(p, infer.top_n))
    return genuine, fake


# -- training -------------------------------------------------------------


@dataclass
class TrainResult:
    final: DetectorParams
    checkpoints: list  # (val_eer, step, DetectorParams), best first
    log: list  # rows (step, lr, loss, val_eer or None)
    optimizer: OptimizerState
    step: int
    threshold: float = 0.5
    val_eer: float | None = None

    def log_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "lr", "loss", "val_eer"])
        for step, lr, loss, val in self.log:
            writer.writerow([step, repr(lr), repr(loss), "" if val is None else repr(val)])
        return buf.getvalue()


def make_batch(pool, cfg: TrainConfig, rng, fbank_cfg: FbankConfig):
    feats, labels = [], []
    for _ in range(cfg.batch):
        chunk, y = sample_training_chunk(
            pool, cfg.chunk_len, cfg.p_genuine, rng, fbank_cfg.frame_length, fbank_cfg.frame_shift
        )
        if cfg.noise_std > 0:
            noisy = chunk.samples + rng.normal(0.0, cfg.noise_std, len(chunk)).astype(np.float32)
            chunk = Waveform(np.clip(noisy, -1, 1), chunk.sample_rate)
        feats.append(fbank240(chunk, fbank_cfg).values)
        labels.append(y.y)
    return np.stack(feats), np.stack(labels)


def train(cfg: TrainConfig, pool, model_config: DetectorConfig, val_records=None,
          fbank_cfg: FbankConfig = FbankConfig(), infer: InferenceConfig | None = None,
          init_params: DetectorParams | None = None, optimizer: OptimizerState | None = None,
          start_step: int = 0, progress=None) -> TrainResult:
    """BCE + Adam/Noam training on randomly drawn fixed-length chunks.

    Every ``validate_every`` steps the utterance-level EER on ``val_records`` is
    measured and the ``keep_best`` lowest-EER snapshots are retained; the
    returned ``final`` parameters are their elementwise mean.
    """
    labels = {r.label for r in pool}
    if cfg.p_genuine < 1 and PARTIALLY_FAKE not in labels or cfg.p_genuine > 0 and GENUINE not in labels:
        raise ConfigError("training pool must contain both genuine and partially fake utterances")
    if infer is None:
        infer = InferenceConfig(chunk_len=cfg.chunk_len)
    params = init_params if init_params is not None else DetectorParams.initialize(model_config, cfg.seed)
    state = optimizer if optimizer is not None else OptimizerState()
    rng = np.random.default_rng([cfg.seed, start_step])
    log, kept = [], []

    def validate(step):
        if not val_records:
            return None
        genuine, fake = score_records(params, val_records, infer, fbank_cfg)
        return compute_eer(genuine, fake)[0]

    step = start_step
    for step in range(start_step + 1, cfg.total_steps + 1):
        X, Y = make_batch(pool, cfg, rng, fbank_cfg)
        params.zero_grad()
        loss = bce_with_logits(detector_logits(X.astype(params.dtype), params), Y)
        loss.backward()
        lr = noam_lr(step, cfg.warmup, model_config.emb_dim, cfg.lr)
        adam_step(params, state, lr)
        val = None
        if step % cfg.validate_every == 0 or step == cfg.total_steps:
            val = validate(step)
            key = val if val is not None else -step
            kept.append((key, step, params.copy()))
            kept.sort(key=lambda item: (item[0], item[1]))
            del kept[cfg.keep_best:]
        loss_value = float(loss.data)
        if not math.isfinite(loss_value):
            raise InvariantError(f"training loss became non-finite at step {step}")
        log.append((step, lr, loss_value, val))
        if progress is not None:
            progress(step, lr, loss_value, val)

    if kept:
        final = average_checkpoints([ck for _, _, ck in kept])
    else:
        final = params.copy()
    threshold, val_eer = 0.5, None
    if val_records:
        genuine, fake = score_records(final, val_records, infer, fbank_cfg)
        val_eer, threshold = compute_eer(genuine, fake)
        threshold = float(min(max(threshold, 0.0), 1.0))
    checkpoints = [(k if val_records else None, s, ck) for k, s, ck in kept]
    return TrainResult(final, checkpoints, log, state, step, threshold, val_eer)
