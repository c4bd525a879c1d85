import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from spliceguard.corpus import build_training_pool
from spliceguard.errors import ArgumentError, ShapeError
from spliceguard.estimator import BoundaryDetector, FbankFeatures
from spliceguard.validation import check_boundaries, check_waveforms


def test_fbank_transformer():
    X = [np.random.default_rng(k).normal(0, 0.1, 4000 + 160 * k) for k in range(3)]
    fb = FbankFeatures()
    with pytest.raises(NotFittedError):
        fb.transform(X)
    out = fb.fit_transform(X)
    assert [o.shape for o in out] == [(23, 240), (24, 240), (25, 240)]
    assert fb.get_params()["n_mels"] == 80
    assert clone(fb).get_params() == fb.get_params()


def test_check_waveforms_forms():
    assert len(check_waveforms(np.zeros(10))) == 1
    assert len(check_waveforms(np.zeros((3, 10)))) == 3
    with pytest.raises(ShapeError):
        check_waveforms(np.zeros((1, 2, 3)))
    with pytest.raises(ArgumentError):
        check_waveforms([])


def test_check_boundaries():
    waves = check_waveforms([np.zeros(100), np.zeros(50)])
    assert check_boundaries([[30, 10], []], waves) == [[10, 30], []]
    with pytest.raises(ArgumentError):
        check_boundaries([[100], []], waves)
    with pytest.raises(ArgumentError):
        check_boundaries([[1.5], []], waves)
    with pytest.raises(ShapeError):
        check_boundaries([[]], waves)


def test_detector_fit_predict(small_corpus):
    genuine, fake = small_corpus
    spliced = build_training_pool(genuine, fake, 1, np.random.default_rng(0))
    X = [r.audio for r in genuine[:8]] + [r.audio for r in spliced[:16]]
    y = [[] for _ in genuine[:8]] + [r.boundaries for r in spliced[:16]]
    Xv = [r.audio for r in genuine[8:]] + [r.audio for r in spliced[-4:]]
    yv = [[] for _ in genuine[8:]] + [r.boundaries for r in spliced[-4:]]
    det = BoundaryDetector(max_steps=6, batch=2, validate_every=3, warmup=2, chunk_len=0.32)
    with pytest.raises(NotFittedError):
        det.predict(X)
    det.fit(X, y, Xv, yv)
    probs = det.predict_proba(Xv)
    assert [len(p) for p in probs] == [1 + (len(w) - 400) // 160 for w in Xv]
    scores = det.decision_function(Xv)
    assert scores.shape == (len(Xv),) and np.all((scores >= 0) & (scores <= 1))
    assert all(isinstance(b, list) for b in det.predict(Xv))
    assert 0.0 <= det.score(Xv, yv) <= 1.0
    assert 0.0 <= det.threshold_ <= 1.0
    assert clone(det).get_params() == det.get_params()


def test_detector_needs_both_classes(small_corpus):
    genuine, _ = small_corpus
    with pytest.raises(ArgumentError):
        BoundaryDetector(max_steps=1).fit([r.audio for r in genuine], [[] for _ in genuine])
