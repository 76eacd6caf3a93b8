import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from aesscore.estimator import AesPredictor, check_audio
from aesscore.audio_io import AudioClip, write_wav

SMALL = dict(num_layers=2, hidden_dim=8, num_heads=2, ffn_dim=16, steps=4, batch_size=4, warmup_steps=1)


def _data(n=8, seed=0):
    rng = np.random.default_rng(seed)
    return [0.3 * rng.standard_normal(3200) for _ in range(n)], rng.uniform(1, 10, (n, 4))


def test_params_and_clone():
    est = AesPredictor(**SMALL, learning_rate=5e-4)
    params = est.get_params()
    assert params["learning_rate"] == 5e-4 and params["hidden_dim"] == 8
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(steps=9)
    assert est.steps == 9


def test_fit_predict_transform(tmp_path):
    X, y = _data()
    est = AesPredictor(**SMALL).fit(X, y)
    pred = est.predict(X)
    assert pred.shape == (8, 4) and np.all(np.isfinite(pred))
    emb = est.transform(X)
    np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-9)
    assert np.isfinite(est.score(X, y))
    assert len(est.training_log_) == 4
    est.save(tmp_path / "e.ckpt")
    again = AesPredictor.from_checkpoint(tmp_path / "e.ckpt")
    assert np.array_equal(again.predict(X), pred)
    twin = AesPredictor(**SMALL).fit(X, y)
    assert np.array_equal(twin.predict(X), pred)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        AesPredictor().predict([np.zeros(1000)])


def test_check_audio(tmp_path):
    write_wav(tmp_path / "a.wav", AudioClip(np.zeros(2000), 8000))
    clips = check_audio([str(tmp_path / "a.wav"), np.zeros(10), AudioClip(np.ones(4), 16000)])
    assert [c.num_frames for c in clips] == [4000, 10, 4]
    with pytest.raises(ValueError):
        check_audio([np.zeros((2, 2))])
    with pytest.raises(ValueError):
        check_audio([])
    with pytest.raises(ValueError):
        check_audio([np.array([np.nan])])
    X, y = _data(3)
    with pytest.raises(ValueError):
        AesPredictor(**SMALL).fit(X, y[:, :3])
    with pytest.raises(ValueError):
        AesPredictor(**SMALL).fit(X, y * 5)
