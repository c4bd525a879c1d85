"""``spliceguard`` command line: synth, features, train, eval, infer, report.

Exit codes: 0 success, 1 usage or configuration error, 2 data or format
error, 3 internal invariant violation.  Errors are printed to stderr as one
JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .audio import read_wav
from .config import PAPER_SCALE, RunConfig, load_config
from .corpus import read_manifest
from .errors import ConfigError, FormatError, SpliceGuardError
from .experiment import MANIFESTS, sha256_file, synthesize_corpus, write_corpus
from .features import EXTERNAL, export_features, fbank240, read_feature_file
from .model import load_detector, save_detector
from .pipeline import (
    InferenceConfig,
    ScoreReport,
    detect_boundaries,
    evaluate,
    predict_frame_probs,
    train,
    utterance_score,
)

log = logging.getLogger("spliceguard")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("UsageError", message, EXIT_USAGE)
        sys.exit(EXIT_USAGE)


def _emit_error(kind, message, code):
    print(json.dumps({"error": kind, "message": str(message), "exit_code": code}), file=sys.stderr)


def _workers(value):
    n = int(value)
    if n == 0:
        return os.cpu_count() or 1
    if n < 0:
        raise argparse.ArgumentTypeError("--workers must be >= 0 (0 = all cores)")
    return n


def _resolve(args) -> RunConfig:
    """Load ``--config`` (or defaults) and apply command-line overrides."""
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    train, infer, features = {}, {}, {}
    if getattr(args, "chunk_len", None) is not None:
        train["chunk_len"] = infer["chunk_len"] = args.chunk_len
    for flag, key in (("overlap", "overlap"), ("threshold", "threshold"), ("top_n", "top_n")):
        if getattr(args, flag, None) is not None:
            infer[key] = getattr(args, flag)
    if getattr(args, "steps", None) is not None:
        train["max_steps"] = args.steps
    if getattr(args, "feature", None) is not None:
        features["kind"] = args.feature
    overrides = {"train": train, "infer": infer, "features": features}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
        train["seed"] = args.seed
    return cfg.replace(**overrides)


def _workdir(args, cfg) -> Path:
    return Path(cfg.resolved_workdir(getattr(args, "workdir", None)))


def _write_json(obj, path):
    text = json.dumps(obj, sort_keys=True, indent=1) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# -- commands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out) if args.out else _workdir(args, cfg) / "corpus"
    if out.exists() and any(out.iterdir()):
        if not args.force:
            raise ConfigError(f"{out} exists and is not empty; pass --force to overwrite")
        # Remove only what this command writes.
        for name in MANIFESTS:
            (out / f"{name}.jsonl").unlink(missing_ok=True)
        (out / "config.json").unlink(missing_ok=True)
        if (out / "wav").is_dir():
            for p in (out / "wav").glob("*.wav"):
                p.unlink()
    corpus = synthesize_corpus(cfg, n_jobs=args.workers)
    paths = write_corpus(corpus, out)
    (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    summary = {name: len(corpus[name]) for name in MANIFESTS}
    summary["out"] = str(out)
    _write_json(summary, None)
    log.info("wrote %d manifests to %s", len(paths), out)
    return EXIT_OK


def cmd_features(args) -> int:
    cfg = _resolve(args)
    if cfg.features.kind == "external":
        raise ConfigError("external features come from an outside extractor; pass them to infer with --feature-file")
    records = read_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fbank_cfg = cfg.features.fbank()
    index = []
    for rec in records:
        fm = fbank240(rec.load_audio(), fbank_cfg)
        name = f"{rec.id}.sgft"
        export_features(fm, out / name)
        index.append({"id": rec.id, "path": name, "frames": fm.num_frames})
    _write_json({"config": cfg.to_dict(), "features": index}, out / "index.json")
    _write_json({"written": len(index), "out": str(out)}, None)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve(args)
    if cfg.features.kind != "fbank":
        raise ConfigError("training runs on waveforms with fbank features only")
    work = _workdir(args, cfg)
    corpus = work / "corpus"
    pool = read_manifest(args.train_manifest or corpus / "train.jsonl")
    val = read_manifest(args.val_manifest or corpus / "val.jsonl")
    init, optimizer, start = None, None, 0
    model_cfg = cfg.model
    if args.resume:
        init, header, optimizer = load_detector(args.resume)
        if optimizer is None:
            raise FormatError(f"{args.resume}: checkpoint has no optimizer state to resume from")
        start = int(header["step"])
        model_cfg = init.config
        if start >= cfg.train.total_steps:
            raise ConfigError(f"checkpoint is at step {start}, nothing left of {cfg.train.total_steps} steps")
    val_infer = InferenceConfig(**{**asdict(cfg.infer), "chunk_len": cfg.train.chunk_len})

    def progress(step, lr, loss, val_eer):
        if val_eer is not None or step % 100 == 0:
            log.info("step %d lr %.3g loss %.4f%s", step, lr, loss,
                     "" if val_eer is None else f" val_eer {val_eer:.4f}")

    result = train(cfg.train, pool, model_cfg, val, cfg.features.fbank(), val_infer, init_params=init,
                   optimizer=optimizer, start_step=start, progress=progress)
    out = Path(args.out) if args.out else work / "model.ckpt"
    out.parent.mkdir(parents=True, exist_ok=True)
    meta = {"run_config": cfg.to_dict(), "threshold": result.threshold, "val_eer": result.val_eer,
            "kept_steps": [s for _, s, _ in result.checkpoints], "resumed_from": start}
    save_detector(out, result.final, step=result.step, optimizer=result.optimizer, meta=meta)
    log_path = out.with_name(out.stem + "_log.csv")
    log_path.write_text(result.log_csv(), encoding="utf-8")
    _write_json({"checkpoint": str(out), "step": result.step, "val_eer": result.val_eer,
                 "threshold": result.threshold, "log": str(log_path)}, None)
    return EXIT_OK


def _load_model(path):
    params, header, _ = load_detector(path)
    threshold = header.get("meta", {}).get("threshold")
    return params, header, threshold


def _infer_config(args, cfg, stored_threshold) -> InferenceConfig:
    d = asdict(cfg.infer)
    if args.threshold is None and stored_threshold is not None:
        d["threshold"] = stored_threshold
    return InferenceConfig(**d)


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    work = _workdir(args, cfg)
    params, header, stored = _load_model(args.checkpoint)
    infer = _infer_config(args, cfg, stored)
    records = read_manifest(args.manifest or work / "corpus" / "test.jsonl")
    echo = {"run": cfg.to_dict(), "inference": asdict(infer)}
    ck = {"path": Path(args.checkpoint).name, "sha256": sha256_file(args.checkpoint), "step": header["step"]}
    report = evaluate(params, records, infer, cfg.features.fbank(), echo, ck, keep_probs=not args.no_probs,
                      n_jobs=args.workers)
    out = Path(args.out) if args.out else work / "eval"
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    (out / "det.csv").write_text(report.det_csv(), encoding="utf-8")
    _write_json({"report": str(out / "report.json"), **report.metrics}, None)
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg = _resolve(args)
    params, _, stored = _load_model(args.checkpoint)
    infer = _infer_config(args, cfg, stored)
    if args.feature_file:
        item = read_feature_file(args.feature_file)
        if item.kind == EXTERNAL and params.config.feature_dim != item.dim:
            raise ConfigError(f"external {item.dim}-d features need a model with feature_dim={item.dim}")
        source, shift = args.feature_file, item.frame_shift
    elif args.input:
        item = read_wav(args.input)
        if item.sample_rate != cfg.corpus.sample_rate:
            raise FormatError(f"{args.input}: sample rate {item.sample_rate} Hz, expected {cfg.corpus.sample_rate} Hz "
                              "(resampling is not performed)")
        source, shift = args.input, cfg.features.frame_shift
    else:
        raise ConfigError("give a WAV path or --feature-file")
    probs = predict_frame_probs(params, [item], infer, cfg.features.fbank())[0]
    boundaries = detect_boundaries(probs, infer.threshold)
    result = {
        "input": str(source),
        "frame_shift": shift,
        "threshold": infer.threshold,
        "score": utterance_score(probs, infer.top_n),
        "boundaries": boundaries,
        "boundary_times": [round(b * shift, 6) for b in boundaries],
        "probs": [float(p) for p in probs],
    }
    _write_json(result, args.out)
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for path in args.reports:
        rep = ScoreReport.load(path)
        m = rep.metrics
        loc = m.get("localization", {})
        chunk = rep.config.get("inference", {}).get("chunk_len")
        rows.append({"report": str(path), "chunk_len": chunk, "eer": m.get("eer"),
                     "precision": loc.get("precision"), "recall": loc.get("recall"), "f1": loc.get("f1")})
    if args.json:
        _write_json({"rows": rows, "paper_scale": PAPER_SCALE}, None)
        return EXIT_OK
    print(f"{'report':40s} {'l (s)':>6s} {'EER':>8s} {'P':>6s} {'R':>6s} {'F1':>6s}")
    for r in rows:
        fmt = lambda v, spec: "-" if v is None else format(v, spec)
        print(f"{r['report'][-40:]:40s} {fmt(r['chunk_len'], '6.2f')} {fmt(r['eer'], '8.4f')} "
              f"{fmt(r['precision'], '6.3f')} {fmt(r['recall'], '6.3f')} {fmt(r['f1'], '6.3f')}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spliceguard", description="Splice boundary detection on toy or imported audio.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, workers_default=0):
        p.add_argument("--config", help="JSON run config; flags override its keys")
        p.add_argument("--seed", type=int)
        p.add_argument("--workdir", help="default output root (else config, else $SPLICEGUARD_WORKDIR)")
        p.add_argument("--workers", type=_workers, default=str(workers_default),
                       help="worker processes, 0 = all cores")
        p.add_argument("--feature", choices=["fbank", "external"])

    def infer_flags(p):
        p.add_argument("--chunk-len", type=float, help="chunk length in seconds")
        p.add_argument("--overlap", type=float, help="chunk overlap fraction")
        p.add_argument("--threshold", type=float, help="boundary threshold (default: stored validation EER threshold)")
        p.add_argument("--top-n", type=int, help="frames averaged into the utterance score")

    p = sub.add_parser("synth", help="synthesise the toy corpus and split manifests")
    common(p)
    p.add_argument("--out", help="output directory (default WORKDIR/corpus)")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="export fbank240 feature files for a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train the detector")
    common(p, workers_default=1)
    p.add_argument("--train-manifest")
    p.add_argument("--val-manifest")
    p.add_argument("--out", help="checkpoint path (default WORKDIR/model.ckpt)")
    p.add_argument("--resume", help="checkpoint with optimizer state to continue from")
    p.add_argument("--steps", type=int, help="total optimizer steps")
    p.add_argument("--chunk-len", type=float, help="training chunk length in seconds")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a manifest and write report.json and det.csv")
    common(p)
    infer_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="default WORKDIR/corpus/test.jsonl")
    p.add_argument("--out", help="output directory (default WORKDIR/eval)")
    p.add_argument("--no-probs", action="store_true", help="omit per-frame probabilities from the report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="per-frame probabilities and boundaries for one file")
    common(p, workers_default=1)
    infer_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("input", nargs="?", help="WAV file")
    p.add_argument("--feature-file", help="precomputed feature file instead of a WAV")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("report", help="tabulate one or more report.json files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except SpliceGuardError as exc:
        _emit_error(type(exc).__name__, exc, exc.exit_code)
        return exc.exit_code
    except FileNotFoundError as exc:
        _emit_error("FileNotFoundError", f"{exc.filename}: no such file", EXIT_DATA)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        _emit_error("InternalError", f"{type(exc).__name__}: {exc}", EXIT_INTERNAL)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
