"""Run configuration: one JSON document with a section per stage.

Every section rejects unknown keys.  Defaults describe the desk-scale toy
experiment; paper-scale values are listed in ``PAPER_SCALE``.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .features import FbankConfig
from .model import DetectorConfig
from .pipeline import InferenceConfig, TrainConfig

WORKDIR_ENV = "SPLICEGUARD_WORKDIR"
FEATURE_CHOICES = ("fbank", "external")


@dataclass
class CorpusSection:
    num_genuine: int = 400
    num_fake: int = 100
    reps_per_strategy: int = 1
    words_per_utterance: tuple = (3, 6)
    word_dur: tuple = (0.15, 0.35)
    gap_dur: tuple = (0.06, 0.15)
    sample_rate: int = 16000
    # Genuine utterances per split; fake donors are divided in the same ratio.
    train_genuine: int = 250
    val_genuine: int = 50
    test_genuine: int = 100
    # Spliced utterances kept for validation and testing (drawn per split).
    val_spliced: int = 50
    test_spliced: int = 100

    def __post_init__(self):
        self.words_per_utterance = tuple(self.words_per_utterance)
        self.word_dur = tuple(self.word_dur)
        self.gap_dur = tuple(self.gap_dur)
        splits = (self.train_genuine, self.val_genuine, self.test_genuine)
        if min(splits) < 1:
            raise ConfigError("every split needs at least one genuine utterance")
        if sum(splits) != self.num_genuine:
            raise ConfigError(f"genuine splits {splits} do not add up to num_genuine={self.num_genuine}")
        if self.num_fake < 0 or self.reps_per_strategy < 1:
            raise ConfigError("num_fake must be >= 0 and reps_per_strategy >= 1")
        if self.val_spliced < 1 or self.test_spliced < 1:
            raise ConfigError("val_spliced and test_spliced must be >= 1")


@dataclass
class FeatureSection:
    kind: str = "fbank"
    frame_length: float = 0.025
    frame_shift: float = 0.010
    n_fft: int = 512
    n_mels: int = 80
    preemph: float = 0.97
    window: str = "hamming"
    low_freq: float = 20.0
    high_freq: float | None = None
    normalize: str = "cmvn"

    def __post_init__(self):
        if self.kind not in FEATURE_CHOICES:
            raise ConfigError(f"feature kind must be one of {FEATURE_CHOICES}, got {self.kind!r}")
        if self.normalize not in ("none", "cmn", "cmvn"):
            raise ConfigError(f"unknown normalisation {self.normalize!r}")
        if self.window not in ("hamming", "povey", "rectangular"):
            raise ConfigError(f"unknown window {self.window!r}")

    def fbank(self) -> FbankConfig:
        d = asdict(self)
        d.pop("kind")
        return FbankConfig(**d)


def _toy_model():
    return DetectorConfig.toy()


def _toy_train():
    return TrainConfig(
        chunk_len=1.28, batch=16, epochs=10, steps_per_epoch=300, lr=3e-3, warmup=300,
        validate_every=300, keep_best=5,
    )


@dataclass
class RunConfig:
    seed: int = 0
    workdir: str | None = None
    corpus: CorpusSection = field(default_factory=CorpusSection)
    features: FeatureSection = field(default_factory=FeatureSection)
    model: DetectorConfig = field(default_factory=_toy_model)
    train: TrainConfig = field(default_factory=_toy_train)
    infer: InferenceConfig = field(default_factory=InferenceConfig)

    SECTIONS = {
        "corpus": CorpusSection,
        "features": FeatureSection,
        "model": DetectorConfig,
        "train": TrainConfig,
        "infer": InferenceConfig,
    }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("run config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base = cls()
        kwargs = {}
        for name in known:
            if name not in d:
                continue
            section = cls.SECTIONS.get(name)
            if section is None:
                kwargs[name] = d[name]
                continue
            if not isinstance(d[name], dict):
                raise ConfigError(f"config section {name!r} must be an object")
            merged = asdict(getattr(base, name))
            bad = set(d[name]) - set(merged)
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            merged.update(d[name])
            try:
                kwargs[name] = section(**merged)
            except TypeError as exc:
                raise ConfigError(f"[{name}]: {exc}") from exc
        cfg = cls(**{**{f.name: getattr(base, f.name) for f in fields(cls)}, **kwargs})
        if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        return cfg

    def to_dict(self) -> dict:
        out = {"seed": self.seed, "workdir": self.workdir}
        for name in self.SECTIONS:
            out[name] = asdict(getattr(self, name))
        out["corpus"] = json.loads(json.dumps(out["corpus"]))
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def replace(self, **sections) -> "RunConfig":
        """Copy with selected keys overridden, e.g. ``replace(train={"batch": 8})``."""
        d = self.to_dict()
        for name, value in sections.items():
            if isinstance(value, dict) and name in self.SECTIONS:
                d[name].update(value)
            else:
                d[name] = value
        return RunConfig.from_dict(d)

    def resolved_workdir(self, override=None) -> str:
        return override or self.workdir or os.environ.get(WORKDIR_ENV) or "spliceguard-work"


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    return RunConfig.from_dict(data)


# Values used by the original full-scale system, for reference and for
# ``spliceguard report``.
PAPER_SCALE = {
    "model": asdict(DetectorConfig()),
    "train": {"chunk_len": 1.28, "batch": 64, "epochs": 100, "lr": 1e-4, "warmup": 1600, "keep_best": 5, "p_genuine": 0.5},
    "infer": {"top_n": 4},
}


def default_config() -> RunConfig:
    return copy.deepcopy(RunConfig())
