"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The toy experiments (criteria 6 to 9) train several detectors and take
roughly half an hour on one CPU core.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from spliceguard.audio import Waveform, read_wav, write_wav
from spliceguard.config import RunConfig
from spliceguard.corpus import SpliceAnnotation, labels_from_annotation
from spliceguard.experiment import run_experiment, tree_digest
from spliceguard.features import FbankConfig, export_features, fbank240, read_feature_file
from spliceguard.model import (
    DetectorConfig,
    DetectorParams,
    average_checkpoints,
    detector_logits,
    load_detector,
    save_detector,
)
from spliceguard.nncore import Tensor, bce_with_logits, bilstm, conv1d, finite_difference_check
from spliceguard.nncore import multi_head_self_attention
from spliceguard.pipeline import compute_eer, merge_chunk_probs, plan_chunks

from oracles import attention_naive, bilstm_naive, conv1d_naive, eer_sweep, merge_bruteforce

TOY_BUDGET_S = 15 * 60


def _rel(a, b):
    a = np.asarray(a, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


def test_c01_full_detector_gradient(criterion):
    cfg = DetectorConfig.toy()
    assert (cfg.res_blocks, cfg.channels, cfg.emb_dim, cfg.enc_layers, cfg.lstm_hidden) == (2, 16, 16, 1, 8)
    params = DetectorParams.initialize(cfg, seed=0, dtype=np.float64)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(2, 12, 240))
    Y = (rng.random((2, 12)) < 0.3).astype(np.int8)
    t0 = time.perf_counter()
    err = finite_difference_check(lambda: bce_with_logits(detector_logits(X, params), Y), list(params),
                                  delta=1e-5, max_coords=240, rng=rng)
    dt = time.perf_counter() - t0
    criterion(1, err < 1e-4 and dt < 60, f"max rel err {err:.2e} over 240 coords (f64), {dt:.1f}s")


def test_c02_eer_matches_sweep(criterion):
    rng = np.random.default_rng(2)
    g, f = rng.normal(0, 1, 1000), rng.normal(1, 1, 1000)
    t0 = time.perf_counter()
    eer, _ = compute_eer(g, f)
    dt = time.perf_counter() - t0
    want, _ = eer_sweep(g, f)
    diff = abs(eer - want)
    criterion(2, diff < 1e-9 and dt < 1.0, f"EER {eer:.6f} vs sweep {want:.6f} (|diff| {diff:.1e}), {dt * 1e3:.1f}ms")


def test_c03_merge_matches_bruteforce(criterion):
    rng = np.random.default_rng(3)
    hop, chunk = 160, 20480
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(16000, 30 * 16000 + 1))
        plan = plan_chunks(n, chunk, float(rng.choice([0.25, 0.5, 0.75])), align=hop)
        total = 1 + (n - 400) // hop
        outs = [rng.random(1 + (chunk - 400) // hop) for _ in plan.starts]
        got = merge_chunk_probs(outs, plan, total, hop)
        worst = max(worst, float(np.max(np.abs(got - merge_bruteforce(outs, plan.starts, hop, total)))))
    criterion(3, worst <= 1e-12, f"max |merge - oracle| {worst:.1e} over 100 plans")


def test_c04_layer_oracles(criterion):
    tol = {np.float32: 1e-6, np.float64: 1e-12}
    worst = {}
    for dtype in (np.float32, np.float64):
        errs = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            B, T, Ci, Co, K = (int(v) for v in (rng.integers(1, 3), rng.integers(6, 14), rng.integers(1, 6),
                                                rng.integers(1, 6), rng.integers(1, 6)))
            pad, stride = int(rng.integers(0, 3)), int(rng.integers(1, 3))
            x = rng.standard_normal((B, T, Ci)).astype(dtype)
            W = rng.standard_normal((Co, Ci, K)).astype(dtype)
            b = rng.standard_normal(Co).astype(dtype)
            errs.append(("conv1d", _rel(conv1d(Tensor(x), Tensor(W), Tensor(b), pad, stride).data,
                                        conv1d_naive(x, W, b, pad, stride))))

            heads = int(rng.choice([1, 2, 4]))
            d = 8
            x = rng.standard_normal((B, T, d)).astype(dtype)
            p = {f"{m}.weight": (rng.standard_normal((d, d)) / 3).astype(dtype) for m in "qkvo"}
            p.update({f"{m}.bias": (rng.standard_normal(d) / 3).astype(dtype) for m in "qkvo"})
            got = multi_head_self_attention(Tensor(x), {k: Tensor(v) for k, v in p.items()}, heads).data
            errs.append(("attention", _rel(got, attention_naive(x, p, heads))))

            D, H = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            x = rng.standard_normal((B, T, D)).astype(dtype)
            fwd = [(rng.standard_normal(s) * 0.5).astype(dtype) for s in ((4 * H, D), (4 * H, H), (4 * H,))]
            bwd = [(rng.standard_normal(s) * 0.5).astype(dtype) for s in ((4 * H, D), (4 * H, H), (4 * H,))]
            got = bilstm(Tensor(x), tuple(map(Tensor, fwd)), tuple(map(Tensor, bwd))).data
            errs.append(("bilstm", _rel(got, bilstm_naive(x, fwd, bwd))))
        for name in ("conv1d", "attention", "bilstm"):
            worst[(name, dtype)] = max(e for n, e in errs if n == name)
    ok = all(v < tol[dt] for (_, dt), v in worst.items())
    detail = ", ".join(f"{n}/{np.dtype(dt).name} {v:.1e}" for (n, dt), v in worst.items())
    criterion(4, ok, detail)


def test_c05_label_rule(criterion):
    rng = np.random.default_rng(5)
    hop, shift = 160, 0.010
    bad = 0
    for _ in range(500):
        T = int(rng.integers(5, 400))
        k = int(rng.integers(0, 5))
        bounds = sorted(rng.choice(T * hop, size=min(k, T * hop), replace=False).tolist())
        y = labels_from_annotation(SpliceAnnotation(bounds), shift, 16000, T).y
        want = np.zeros(T, dtype=np.int8)
        for s in bounds:
            for j in range(s // hop - 2, s // hop + 3):
                if 0 <= j < T:
                    want[j] = 1
        bad += int(not np.array_equal(y, want))
        if not bounds:
            bad += int(y.any())
    criterion(5, bad == 0, f"{bad} mismatches in 500 annotations")


# -- toy experiments ---------------------------------------------------------


def _timed_run(cfg, workdir):
    t0 = time.perf_counter()
    result = run_experiment(cfg, workdir)
    return result, time.perf_counter() - t0


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    return _timed_run(RunConfig(), tmp_path_factory.mktemp("toy_a"))


def test_c06_toy_end_to_end(toy_run, criterion):
    result, dt = toy_run
    cfg = RunConfig()
    m = result.metrics
    recall = m["localization"]["recall"]
    ok = (cfg.train.total_steps <= 3000 and cfg.train.batch == 16 and cfg.train.chunk_len == 1.28
          and m["num_genuine"] == 100 and m["num_fake"] == 100
          and m["eer"] <= 0.15 and recall >= 0.7 and dt <= TOY_BUDGET_S)
    criterion(6, ok, f"EER {m['eer']:.3f}, recall@5 {recall:.3f}, threshold {m['detection_threshold']:.3f}, "
                     f"{cfg.train.total_steps} steps, {dt:.0f}s")


def test_c07_chunk_lengths(toy_run, tmp_path_factory, criterion):
    rows = [(1.28, toy_run[0].metrics["eer"], toy_run[1])]
    for l in (0.64, 2.56):
        cfg = RunConfig().replace(train={"chunk_len": l}, infer={"chunk_len": l})
        result, dt = _timed_run(cfg, tmp_path_factory.mktemp(f"toy_l{l}"))
        rows.append((l, result.metrics["eer"], dt))
    rows.sort()
    print("\n  l (s)   EER     time")
    for l, eer, dt in rows:
        print(f"  {l:5.2f}  {eer:6.3f}  {dt:5.0f}s")
    table = "; ".join(f"l={l}: EER {eer:.3f}" for l, eer, _ in rows)
    criterion(7, all(math.isfinite(e) for _, e, _ in rows), table)


def test_c08_checkpoint_averaging(toy_run, criterion):
    result, _ = toy_run
    kept = [p for _, _, p in result.train_result.checkpoints]
    avg = average_checkpoints(kept)
    worst = 0.0
    for name in avg.params:
        want = np.mean([p[name].data.astype(np.float64) for p in kept], axis=0)
        worst = max(worst, float(np.max(np.abs(avg[name].data - want))))
    change = result.metrics["averaging_eer_change"]
    ok = len(kept) == 5 and worst < 1e-6 and math.isfinite(change)
    criterion(8, ok, f"EER newest {result.last_step_eer:.3f} -> averaged {result.averaged_eer:.3f} "
                     f"(change {change:+.3f}); |avg - f64 mean| {worst:.1e}")


def test_c09_determinism(toy_run, tmp_path_factory, criterion):
    first = toy_run[0]
    result_b, _ = _timed_run(RunConfig(), tmp_path_factory.mktemp("toy_b"))
    root_a, root_b = Path(first.report_path).parent, Path(result_b.report_path).parent
    a, b = tree_digest(root_a), tree_digest(root_b)
    manifests = [k for k in a if k.endswith(".jsonl")]
    same = a == b and first.report.to_json() == result_b.report.to_json()
    criterion(9, same and len(manifests) == 6 and "model.ckpt" in a and "report.json" in a,
              f"{len(a)} files compared ({len(manifests)} manifests, checkpoint, report), "
              f"{sum(a[k] != b.get(k) for k in a)} differ")


def test_c10_serialization(tmp_path, criterion):
    params = DetectorParams.initialize(DetectorConfig.toy(), seed=1)
    save_detector(tmp_path / "a.ckpt", params, step=7, meta={"threshold": 0.4})
    back, header, _ = load_detector(tmp_path / "a.ckpt")
    save_detector(tmp_path / "b.ckpt", back, step=header["step"], meta=header["meta"])
    ckpt_ok = (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    rng = np.random.default_rng(10)
    fm = fbank240(Waveform(rng.normal(0, 0.1, 16000)), FbankConfig())
    export_features(fm, tmp_path / "a.sgft")
    export_features(read_feature_file(tmp_path / "a.sgft"), tmp_path / "b.sgft")
    feat_ok = (tmp_path / "a.sgft").read_bytes() == (tmp_path / "b.sgft").read_bytes()

    x = np.clip(rng.normal(0, 0.3, 48000), -1, 1)
    write_wav(Waveform(x), tmp_path / "a.wav")
    lsb = float(np.max(np.abs(read_wav(tmp_path / "a.wav").samples - x)) * 32768)
    criterion(10, ckpt_ok and feat_ok and lsb <= 1.0,
              f"checkpoint byte-exact {ckpt_ok}, feature file byte-exact {feat_ok}, WAV max error {lsb:.3f} LSB")


def test_trained_model_quiet_on_genuine(toy_run):
    """Held-out genuine files yield no boundaries at the validation threshold in >= 90% of cases."""
    result, _ = toy_run
    genuine = [u for u in result.report.utterances if u["label"] == "genuine"]
    quiet = sum(not u["boundaries_detected"] for u in genuine) / len(genuine)
    print(f"genuine files without detections: {quiet:.2%}")
    assert quiet >= 0.9
