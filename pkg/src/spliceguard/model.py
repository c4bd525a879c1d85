"""Frame-level splice boundary detector.

features -> ResNet-1D embeddings -> optional feature/embedding fusion ->
Transformer encoder -> BiLSTM -> ReLU -> linear -> per-frame logit.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, fields

import numpy as np

from .audio import Waveform
from .errors import ConfigError, FormatError, ShapeError
from .features import FbankConfig, FeatureMatrix, fbank240
from .nncore import (
    Parameter,
    Tensor,
    affine,
    bilstm,
    concat,
    conv1d,
    load_checkpoint,
    no_grad,
    relu,
    save_checkpoint,
    sigmoid,
    sinusoidal_positions,
    transformer_encoder_layer,
)
from .nncore.autograd import as_tensor


@dataclass
class DetectorConfig:
    feature_dim: int = 240
    channels: int = 512
    res_blocks: int = 12
    emb_dim: int = 128
    concat_features: bool = False
    enc_layers: int = 2
    heads: int = 4
    ffn: int = 1024
    lstm_hidden: int = 128
    positional_encoding: bool = True

    def __post_init__(self):
        for f in ("feature_dim", "channels", "emb_dim", "heads", "ffn", "lstm_hidden"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{f} must be positive")
        if self.res_blocks < 0 or self.enc_layers < 0:
            raise ConfigError("layer counts must be non-negative")
        if self.emb_dim % self.heads:
            raise ConfigError(f"emb_dim {self.emb_dim} is not divisible by heads {self.heads}")

    @classmethod
    def toy(cls, **overrides):
        """Desk-scale network (2 blocks, 16 channels, width 16, one encoder layer)."""
        base = dict(channels=16, res_blocks=2, emb_dim=16, enc_layers=1, heads=2, ffn=32, lstm_hidden=8)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def parameter_shapes(cfg: DetectorConfig) -> list[tuple[str, tuple]]:
    """Ordered (name, shape) manifest; a pure function of the config."""
    C, E, D, H = cfg.channels, cfg.emb_dim, cfg.feature_dim, cfg.lstm_hidden
    shapes = [("resnet.entry.weight", (C, D, 5))]
    for i in range(cfg.res_blocks):
        shapes += [(f"resnet.block{i}.conv1.weight", (C, C, 1)), (f"resnet.block{i}.conv2.weight", (C, C, 1))]
    shapes += [("resnet.exit.weight", (E, C, 1)), ("resnet.exit.bias", (E,))]
    if cfg.concat_features:
        shapes += [("fuse.proj.weight", (E, D + E)), ("fuse.proj.bias", (E,))]
    for i in range(cfg.enc_layers):
        pre = f"encoder.layer{i}."
        for m in "qkvo":
            shapes += [(pre + f"attn.{m}.weight", (E, E)), (pre + f"attn.{m}.bias", (E,))]
        shapes += [(pre + "norm1.gain", (E,)), (pre + "norm1.bias", (E,))]
        shapes += [(pre + "ffn1.weight", (cfg.ffn, E)), (pre + "ffn1.bias", (cfg.ffn,))]
        shapes += [(pre + "ffn2.weight", (E, cfg.ffn)), (pre + "ffn2.bias", (E,))]
        shapes += [(pre + "norm2.gain", (E,)), (pre + "norm2.bias", (E,))]
    for direction in ("fwd", "bwd"):
        shapes += [
            (f"lstm.{direction}.w_ih", (4 * H, E)),
            (f"lstm.{direction}.w_hh", (4 * H, H)),
            (f"lstm.{direction}.bias", (4 * H,)),
        ]
    shapes += [("head.weight", (1, 2 * H)), ("head.bias", (1,))]
    return shapes


def count_parameters(cfg: DetectorConfig) -> int:
    return int(sum(np.prod(s) for _, s in parameter_shapes(cfg)))


class DetectorParams:
    """Named parameters of one detector plus the config that shaped them."""

    def __init__(self, config: DetectorConfig, arrays: dict, dtype=np.float32):
        expected = parameter_shapes(config)
        if [n for n, _ in expected] != list(arrays):
            raise FormatError("parameter names do not match the detector config")
        for name, shape in expected:
            if tuple(np.shape(arrays[name])) != tuple(shape):
                raise FormatError(f"{name}: shape {np.shape(arrays[name])} != {shape}")
        self.config = config
        self.params = {n: Parameter(np.array(a, dtype=dtype), name=n) for n, a in arrays.items()}

    @classmethod
    def initialize(cls, config: DetectorConfig, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        H = config.lstm_hidden
        arrays = {}
        for name, shape in parameter_shapes(config):
            if name.endswith(".gain"):
                arrays[name] = np.ones(shape)
            elif name.startswith("lstm."):
                a = _uniform(rng, shape, H)
                if name.endswith(".bias"):
                    a[H:2 * H] += 1.0
                arrays[name] = a
            elif name.endswith("norm1.bias") or name.endswith("norm2.bias"):
                arrays[name] = np.zeros(shape)
            else:
                weight_shape = shape if not name.endswith(".bias") else None
                if weight_shape is not None:
                    fan_in = int(np.prod(shape[1:]))
                    arrays[name] = _uniform(rng, shape, fan_in)
                else:
                    owner = dict(parameter_shapes(config))[name[: -len("bias")] + "weight"]
                    arrays[name] = _uniform(rng, shape, int(np.prod(owner[1:])))
        return cls(config, arrays, dtype=dtype)

    def __getitem__(self, name) -> Parameter:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.values())

    def __len__(self):
        return len(self.params)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def arrays(self) -> dict:
        return {n: p.data for n, p in self.params.items()}

    def astype(self, dtype) -> "DetectorParams":
        return DetectorParams(self.config, self.arrays(), dtype=dtype)

    def copy(self) -> "DetectorParams":
        return DetectorParams(copy.deepcopy(self.config), self.arrays(), dtype=self.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def sub(self, prefix: str) -> dict:
        return {n[len(prefix):]: p for n, p in self.params.items() if n.startswith(prefix)}


def _batched(X) -> tuple[Tensor, bool]:
    X = as_tensor(X)
    if X.ndim == 2:
        return X.reshape(1, *X.shape), True
    if X.ndim != 3:
        raise ShapeError(f"expected (T, D) or (B, T, D) input, got {X.shape}")
    return X, False


def resnet1d_forward(X, params: DetectorParams) -> Tensor:
    """(B, T, D) features -> (B, T, emb_dim) frame embeddings; length preserved."""
    X, squeeze = _batched(X)
    cfg = params.config
    if X.shape[-1] != cfg.feature_dim:
        raise ShapeError(f"feature dim {X.shape[-1]} does not match config {cfg.feature_dim}")
    h = conv1d(X, params["resnet.entry.weight"], padding=2)
    for i in range(cfg.res_blocks):
        inner = relu(conv1d(h, params[f"resnet.block{i}.conv1.weight"]))
        h = relu(conv1d(inner, params[f"resnet.block{i}.conv2.weight"]) + h)
    S = conv1d(h, params["resnet.exit.weight"], params["resnet.exit.bias"])
    return S.reshape(S.shape[1:]) if squeeze else S


def fuse(X, S, params: DetectorParams) -> Tensor:
    """Project ``[X | S]`` back to emb_dim when concatenation is enabled."""
    X, S = as_tensor(X), as_tensor(S)
    if X.shape[:-1] != S.shape[:-1]:
        raise ShapeError(f"feature frames {X.shape[:-1]} != embedding frames {S.shape[:-1]}")
    if not params.config.concat_features:
        return S
    return affine(concat([X, S], axis=-1), params["fuse.proj.weight"], params["fuse.proj.bias"])


def classifier_logits(Z, params: DetectorParams) -> Tensor:
    """(B, T, emb_dim) -> (B, T) pre-sigmoid boundary scores."""
    Z, squeeze = _batched(Z)
    cfg = params.config
    B, T, E = Z.shape
    h = Z
    if cfg.positional_encoding and cfg.enc_layers:
        h = h + Tensor(sinusoidal_positions(T, E, dtype=Z.dtype))
    for i in range(cfg.enc_layers):
        h = transformer_encoder_layer(h, params.sub(f"encoder.layer{i}."), cfg.heads)
    fwd = (params["lstm.fwd.w_ih"], params["lstm.fwd.w_hh"], params["lstm.fwd.bias"])
    bwd = (params["lstm.bwd.w_ih"], params["lstm.bwd.w_hh"], params["lstm.bwd.bias"])
    h = relu(bilstm(h, fwd, bwd))
    logits = affine(h, params["head.weight"], params["head.bias"]).reshape(B, T)
    return logits.reshape(T) if squeeze else logits


def classifier_forward(Z, params: DetectorParams) -> np.ndarray:
    with no_grad():
        return sigmoid(classifier_logits(Z, params)).data


def detector_logits(X, params: DetectorParams) -> Tensor:
    X = as_tensor(X)
    return classifier_logits(fuse(X, resnet1d_forward(X, params), params), params)


def _feature_array(inp, params: DetectorParams, fbank_cfg: FbankConfig) -> np.ndarray:
    if isinstance(inp, Waveform):
        if params.config.feature_dim != 240:
            raise ShapeError("waveform input needs an fbank240 model")
        return fbank240(inp, fbank_cfg).values
    if isinstance(inp, FeatureMatrix):
        if inp.dim != params.config.feature_dim:
            raise ShapeError(f"{inp.kind} features of dim {inp.dim} do not fit model dim {params.config.feature_dim}")
        return inp.values
    return np.asarray(inp)


def detector_forward(inp, params: DetectorParams, fbank_cfg: FbankConfig = FbankConfig()) -> np.ndarray:
    """Per-frame boundary probabilities for a waveform, feature matrix or array."""
    X = _feature_array(inp, params, fbank_cfg).astype(params.dtype)
    with no_grad():
        return sigmoid(detector_logits(X, params)).data


def average_checkpoints(checkpoints) -> DetectorParams:
    """Elementwise mean of several parameter sets sharing one manifest."""
    checkpoints = list(checkpoints)
    if not checkpoints:
        raise ConfigError("need at least one checkpoint to average")
    first = checkpoints[0]
    names = list(first.params)
    for ck in checkpoints[1:]:
        if list(ck.params) != names or any(ck[n].shape != first[n].shape for n in names):
            raise FormatError("checkpoints do not share a parameter manifest")
    mean = {n: np.mean([ck[n].data.astype(np.float64) for ck in checkpoints], axis=0) for n in names}
    return DetectorParams(copy.deepcopy(first.config), mean, dtype=first.dtype)


def save_detector(path, params: DetectorParams, step: int = 0, optimizer=None, meta=None) -> None:
    meta = dict(meta or {})
    meta["config"] = params.config.to_dict()
    save_checkpoint(path, params.arrays(), step=step, optimizer=optimizer, meta=meta)


def load_detector(path, dtype=np.float32):
    """Returns ``(params, header, optimizer_state_or_None)``."""
    arrays, header, optimizer = load_checkpoint(path)
    try:
        config = DetectorConfig.from_dict(header["meta"]["config"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: checkpoint header lacks a detector config") from exc
    return DetectorParams(config, arrays, dtype=dtype), header, optimizer
