"""scikit-learn style wrappers around feature extraction and the detector.

``X`` is a waveform, a 1-D array, or a sequence of those.  ``y`` for the
detector is one list of boundary sample positions per utterance, empty for
genuine audio.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import GENUINE, PARTIALLY_FAKE, SpliceAnnotation, UtteranceRecord
from .errors import ArgumentError
from .features import FbankConfig, fbank240
from .model import DetectorConfig
from .pipeline import (
    InferenceConfig,
    TrainConfig,
    compute_eer,
    detect_boundaries,
    predict_frame_probs,
    train,
    utterance_score,
)
from .validation import check_boundaries, check_probability, check_waveforms


class FbankFeatures(BaseEstimator, TransformerMixin):
    """Waveforms -> list of (frames, 240) log-mel + delta matrices.

    Stateless apart from the configuration; ``fit`` only validates.
    """

    def __init__(self, sample_rate=16000, frame_length=0.025, frame_shift=0.010, n_mels=80,
                 window="hamming", normalize="none"):
        self.sample_rate = sample_rate
        self.frame_length = frame_length
        self.frame_shift = frame_shift
        self.n_mels = n_mels
        self.window = window
        self.normalize = normalize

    def _config(self) -> FbankConfig:
        if self.n_mels != 80:
            raise ArgumentError("fbank240 features are defined for 80 mel bands")
        return FbankConfig(frame_length=self.frame_length, frame_shift=self.frame_shift,
                           n_mels=self.n_mels, window=self.window, normalize=self.normalize)

    def fit(self, X, y=None):
        self._config()
        check_waveforms(X, self.sample_rate)
        self.n_features_out_ = 3 * self.n_mels
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_out_")
        cfg = self._config()
        return [fbank240(w, cfg).values for w in check_waveforms(X, self.sample_rate)]


def _records(waves, bounds, prefix):
    recs = []
    for k, (w, b) in enumerate(zip(waves, bounds)):
        label = PARTIALLY_FAKE if b else GENUINE
        recs.append(UtteranceRecord(f"{prefix}{k:06d}", w, [], label, annotation=SpliceAnnotation(b)))
    return recs


class BoundaryDetector(BaseEstimator):
    """Frame-level splice boundary detector with utterance-level scoring.

    ``decision_function`` returns utterance scores (higher means more likely
    spliced); ``predict`` returns detected boundary frames per utterance;
    ``score`` is ``1 - EER``.
    """

    def __init__(self, channels=16, res_blocks=2, emb_dim=16, enc_layers=1, heads=2, ffn=32,
                 lstm_hidden=8, concat_features=False, chunk_len=1.28, batch=16, max_steps=3000,
                 lr=3e-3, warmup=300, p_genuine=0.5, validate_every=300, keep_best=5, overlap=0.5,
                 top_n=4, threshold=None, normalize="cmvn", sample_rate=16000, random_state=0):
        self.channels = channels
        self.res_blocks = res_blocks
        self.emb_dim = emb_dim
        self.enc_layers = enc_layers
        self.heads = heads
        self.ffn = ffn
        self.lstm_hidden = lstm_hidden
        self.concat_features = concat_features
        self.chunk_len = chunk_len
        self.batch = batch
        self.max_steps = max_steps
        self.lr = lr
        self.warmup = warmup
        self.p_genuine = p_genuine
        self.validate_every = validate_every
        self.keep_best = keep_best
        self.overlap = overlap
        self.top_n = top_n
        self.threshold = threshold
        self.normalize = normalize
        self.sample_rate = sample_rate
        self.random_state = random_state

    def _model_config(self):
        return DetectorConfig(
            feature_dim=240, channels=self.channels, res_blocks=self.res_blocks, emb_dim=self.emb_dim,
            concat_features=self.concat_features, enc_layers=self.enc_layers, heads=self.heads,
            ffn=self.ffn, lstm_hidden=self.lstm_hidden,
        )

    def _fbank(self):
        return FbankConfig(normalize=self.normalize)

    def _infer(self, threshold=0.5):
        return InferenceConfig(chunk_len=self.chunk_len, overlap=self.overlap, top_n=self.top_n,
                               threshold=threshold)

    def fit(self, X, y, X_val=None, y_val=None, progress=None):
        """Train on utterances ``X`` with boundary lists ``y``.

        With a validation set the best checkpoints are chosen by validation EER
        and the detection threshold is set at its EER crossing.
        """
        waves = check_waveforms(X, self.sample_rate)
        bounds = check_boundaries(y, waves)
        if all(bounds) or not any(bounds):
            raise ArgumentError("training data must contain both genuine and spliced utterances")
        val = None
        if X_val is not None:
            vw = check_waveforms(X_val, self.sample_rate)
            val = _records(vw, check_boundaries(y_val, vw), "val")
        seed = 0 if self.random_state is None else int(self.random_state)
        cfg = TrainConfig(
            chunk_len=self.chunk_len, batch=self.batch, max_steps=self.max_steps, lr=self.lr,
            warmup=self.warmup, p_genuine=check_probability(self.p_genuine, "p_genuine"), seed=seed,
            validate_every=self.validate_every, keep_best=self.keep_best,
        )
        result = train(cfg, _records(waves, bounds, "fit"), self._model_config(), val,
                       self._fbank(), self._infer(), progress=progress)
        self.params_ = result.final
        self.train_log_ = result.log
        self.val_eer_ = result.val_eer
        self.threshold_ = result.threshold if self.threshold is None else check_probability(self.threshold, "threshold")
        return self

    def predict_proba(self, X) -> list[np.ndarray]:
        """Per-frame boundary probabilities, one array per utterance."""
        check_is_fitted(self, "params_")
        waves = check_waveforms(X, self.sample_rate)
        return predict_frame_probs(self.params_, waves, self._infer(), self._fbank())

    def decision_function(self, X) -> np.ndarray:
        return np.array([utterance_score(p, self.top_n) for p in self.predict_proba(X)])

    def predict(self, X) -> list[list[int]]:
        return [detect_boundaries(p, self.threshold_) for p in self.predict_proba(X)]

    def score(self, X, y) -> float:
        """``1 - EER`` of utterance scores; ``y`` holds boundary lists or 0/1 labels."""
        scores = self.decision_function(X)
        labels = [bool(len(v)) if hasattr(v, "__len__") else bool(v) for v in y]
        if len(labels) != len(scores):
            raise ArgumentError(f"{len(labels)} targets for {len(scores)} utterances")
        genuine = scores[~np.array(labels)]
        fake = scores[np.array(labels)]
        return 1.0 - compute_eer(genuine, fake)[0]
