"""End-to-end toy experiment: synthesis, splits, training and evaluation.

The corpus is always written to disk and read back before training, so the
detector sees exactly the 16-bit audio that the manifests describe.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .audio import write_wav
from .config import RunConfig
from .corpus import (
    CorpusConfig,
    build_training_pool,
    generate_toy_corpus,
    read_manifest,
    record_to_json,
    write_manifest,
)
from .errors import ConfigError
from .model import save_detector
from .pipeline import InferenceConfig, ScoreReport, TrainResult, compute_eer, evaluate, score_records, train

SPLITS = ("train", "val", "test")
MANIFESTS = ("genuine", "fake", "spliced") + SPLITS


def _split_counts(total: int, weights) -> list[int]:
    """Divide ``total`` in proportion to ``weights``; remainders go to the first splits."""
    w = np.asarray(weights, dtype=np.float64)
    base = np.floor(total * w / w.sum()).astype(int)
    for k in range(total - int(base.sum())):
        base[k % len(base)] += 1
    return base.tolist()


def synthesize_corpus(cfg: RunConfig, n_jobs: int = 1) -> dict:
    """Genuine, donor and spliced pools plus train/val/test record lists.

    Every split owns its genuine utterances, its donors and the spliced
    utterances made from them, so no source id crosses a split.
    """
    c = cfg.corpus
    common = dict(
        words_per_utterance=c.words_per_utterance, word_dur=c.word_dur,
        gap_dur=c.gap_dur, sample_rate=c.sample_rate,
    )
    genuine = generate_toy_corpus(
        CorpusConfig(num_utterances=c.num_genuine, family="tone", id_prefix="gen", **common),
        seed=cfg.seed, n_jobs=n_jobs,
    )
    fake = []
    if c.num_fake:
        fake = generate_toy_corpus(
            CorpusConfig(num_utterances=c.num_fake, family="filtered_noise", id_prefix="fake", **common),
            seed=cfg.seed + 1, n_jobs=n_jobs,
        )
    g_counts = [c.train_genuine, c.val_genuine, c.test_genuine]
    f_counts = _split_counts(len(fake), g_counts)
    g_edges = np.cumsum([0] + g_counts)
    f_edges = np.cumsum([0] + f_counts)

    out = {"genuine": genuine, "fake": fake, "spliced": []}
    held_out = {"val": c.val_spliced, "test": c.test_spliced}
    for k, name in enumerate(SPLITS):
        g = genuine[g_edges[k]:g_edges[k + 1]]
        f = fake[f_edges[k]:f_edges[k + 1]]
        rng = np.random.default_rng([cfg.seed, 7, k])
        spliced = build_training_pool(g, f, c.reps_per_strategy, rng, n_jobs=n_jobs)
        out["spliced"].extend(spliced)
        if name == "train":
            out[name] = g + spliced
            continue
        if held_out[name] > len(spliced):
            raise ConfigError(f"{name} split yields {len(spliced)} spliced utterances, {held_out[name]} requested")
        pick = np.sort(rng.permutation(len(spliced))[:held_out[name]])
        out[name] = g + [spliced[i] for i in pick]
    return out


def write_corpus(corpus: dict, out_dir) -> dict:
    """Write every utterance once under ``wav/`` and one manifest per pool/split."""
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    written = set()
    paths = {}
    for name in MANIFESTS:
        entries = []
        for rec in corpus[name]:
            rel = f"wav/{rec.id}.wav"
            if rec.id not in written:
                write_wav(rec.audio, out_dir / rel)
                written.add(rec.id)
            entries.append(record_to_json(rec, rel))
        paths[name] = out_dir / f"{name}.jsonl"
        write_manifest(entries, paths[name])
    return paths


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class ExperimentResult:
    report: ScoreReport
    train_result: TrainResult
    checkpoint_path: str
    report_path: str
    last_step_eer: float
    averaged_eer: float

    @property
    def metrics(self) -> dict:
        return self.report.metrics


def run_experiment(cfg: RunConfig, workdir, n_jobs: int = 1, progress=None) -> ExperimentResult:
    """Synthesise, train, pick the threshold on validation, score the test split.

    Artifacts land in ``workdir``: ``corpus/`` (WAVs and manifests),
    ``model.ckpt`` (averaged parameters), ``train_log.csv``, ``report.json``
    and ``det.csv``.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    corpus_dir = workdir / "corpus"
    write_corpus(synthesize_corpus(cfg, n_jobs), corpus_dir)
    splits = {name: read_manifest(corpus_dir / f"{name}.jsonl") for name in SPLITS}

    fbank_cfg = cfg.features.fbank()
    val_infer = InferenceConfig(**{**asdict(cfg.infer), "chunk_len": cfg.train.chunk_len})
    result = train(cfg.train, splits["train"], cfg.model, splits["val"], fbank_cfg, val_infer, progress=progress)

    ckpt = workdir / "model.ckpt"
    meta = {"run_config": cfg.to_dict(), "threshold": result.threshold, "val_eer": result.val_eer,
            "kept_steps": [s for _, s, _ in result.checkpoints]}
    save_detector(ckpt, result.final, step=result.step, optimizer=result.optimizer, meta=meta)
    (workdir / "train_log.csv").write_text(result.log_csv(), encoding="utf-8")

    infer = InferenceConfig(**{**asdict(val_infer), "threshold": result.threshold})
    echo = {"run": cfg.to_dict(), "inference": asdict(infer)}
    report = evaluate(result.final, splits["test"], infer, fbank_cfg, echo,
                      {"path": ckpt.name, "sha256": sha256_file(ckpt)}, keep_probs=False)
    # The newest snapshot alone, for comparison with the averaged model.
    newest = max(result.checkpoints, key=lambda item: item[1])[2]
    g, f = score_records(newest, splits["test"], infer, fbank_cfg)
    last_eer = compute_eer(g, f)[0]
    report.metrics["single_checkpoint_eer"] = last_eer
    report.metrics["averaging_eer_change"] = report.metrics["eer"] - last_eer
    report_path = workdir / "report.json"
    report.save(report_path)
    (workdir / "det.csv").write_text(report.det_csv(), encoding="utf-8")
    return ExperimentResult(report, result, str(ckpt), str(report_path), last_eer, report.metrics["eer"])


def tree_digest(root) -> dict:
    """sha256 of every file below ``root`` keyed by relative path."""
    root = Path(root)
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in sorted(files):
            p = Path(dirpath) / name
            out[str(p.relative_to(root))] = sha256_file(p)
    return dict(sorted(out.items()))
