"""scikit-learn compatible front end to the predictor.

``AesPredictor`` takes audio (1-D 16 kHz arrays, AudioClip objects or WAV
paths) as ``X`` and an ``(n, 4)`` PQ/PC/CE/CU label matrix as ``y``.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import model
from .audio_io import WINDOW_SECONDS, AudioClip, chunk_windows, load_wav, to_mono_16k
from .checkpoint import load_checkpoint, save_checkpoint
from .inference import sliding_window_predict
from .scores import AXES, AesScores


def check_audio(X):
    """Coerce a sequence of audio inputs to a list of mono 16 kHz clips."""
    if isinstance(X, (str, bytes)) or isinstance(X, AudioClip):
        raise ValueError("X must be a sequence of audio inputs, not a single item")
    clips = []
    for i, item in enumerate(X):
        if isinstance(item, AudioClip):
            clip = item
        elif isinstance(item, (str, bytes)) or hasattr(item, "__fspath__"):
            clip = load_wav(item)
        else:
            arr = np.asarray(item, dtype=np.float64)
            if arr.ndim != 1:
                raise ValueError(f"X[{i}]: raw waveforms must be 1-D (mono 16 kHz), got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"X[{i}]: waveform contains non-finite samples")
            clip = AudioClip(arr, model.SAMPLE_RATE, 1)
        if clip.num_frames == 0:
            raise ValueError(f"X[{i}]: empty audio")
        clips.append(to_mono_16k(clip))
    if not clips:
        raise ValueError("X is empty")
    return clips


def check_labels(y, n):
    y = check_array(y, ensure_2d=True, dtype=np.float64)
    if y.shape != (n, len(AXES)):
        raise ValueError(f"y must have shape ({n}, {len(AXES)}), got {y.shape}")
    if np.any((y < 1.0) | (y > 10.0)):
        raise ValueError("labels must lie in [1, 10]")
    return y


class AesPredictor(RegressorMixin, TransformerMixin, BaseEstimator):
    """Four-axis audio aesthetics regressor.

    ``predict`` returns an ``(n, 4)`` score matrix, ``transform`` the
    unit-norm pooled embeddings, and ``score`` the mean utterance-level
    Pearson correlation over the four axes.
    """

    def __init__(
        self,
        num_layers=4,
        hidden_dim=64,
        num_heads=4,
        ffn_dim=128,
        frame_size=400,
        frame_stride=320,
        max_frames=512,
        head_blocks=2,
        learning_rate=1e-3,
        batch_size=16,
        steps=2000,
        warmup_steps=100,
        chunk_seconds=10.0,
        polarity_flip=False,
        grad_clip=1.0,
        loss_axes=AXES,
        window_seconds=WINDOW_SECONDS,
        dtype="float64",
        random_state=0,
    ):
        self.num_layers = num_layers
        self.hidden_dim = hidden_dim
        self.num_heads = num_heads
        self.ffn_dim = ffn_dim
        self.frame_size = frame_size
        self.frame_stride = frame_stride
        self.max_frames = max_frames
        self.head_blocks = head_blocks
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.steps = steps
        self.warmup_steps = warmup_steps
        self.chunk_seconds = chunk_seconds
        self.polarity_flip = polarity_flip
        self.grad_clip = grad_clip
        self.loss_axes = loss_axes
        self.window_seconds = window_seconds
        self.dtype = dtype
        self.random_state = random_state

    def encoder_config(self):
        return model.EncoderConfig(
            num_layers=self.num_layers, hidden_dim=self.hidden_dim, num_heads=self.num_heads, ffn_dim=self.ffn_dim,
            frame_size=self.frame_size, frame_stride=self.frame_stride, max_frames=self.max_frames,
            head_blocks=self.head_blocks, dtype=self.dtype,
        )

    def train_config(self):
        from .training import TrainConfig

        return TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size, steps=self.steps,
            warmup_steps=self.warmup_steps, seed=int(self.random_state or 0), chunk_seconds=self.chunk_seconds,
            grad_clip=self.grad_clip, loss_axes=tuple(self.loss_axes), polarity_flip=self.polarity_flip,
        )

    def fit(self, X, y, callback=None):
        from .training import LabeledSample, train_run

        clips = check_audio(X)
        y = check_labels(y, len(clips))
        corpus = [LabeledSample(c, AesScores.from_array(row)) for c, row in zip(clips, y)]
        state = train_run(corpus, self.train_config(), self.encoder_config(), callback=callback, log_every=0)
        self.params_ = state.params
        self.train_state_ = state
        self.training_log_ = state.log
        self.n_features_in_ = 1
        return self

    def predict_utterances(self, X):
        check_is_fitted(self, "params_")
        return [sliding_window_predict(c, self.params_, window_seconds=self.window_seconds) for c in check_audio(X)]

    def predict(self, X):
        return np.stack([p.scores.to_array() for p in self.predict_utterances(X)])

    def transform(self, X):
        """Length-weighted mean of per-window unit-norm embeddings."""
        check_is_fitted(self, "params_")
        out = []
        for clip in check_audio(X):
            plan = chunk_windows(clip, self.window_seconds, min_tail=self.frame_size)
            embs, lens = [], []
            for start, length in plan.offsets:
                embs.append(embed(clip.samples[start : start + length], self.params_))
                lens.append(length)
            w = np.asarray(lens, dtype=np.float64) / sum(lens)
            out.append((np.stack(embs) * w[:, None]).sum(axis=0))
        return np.stack(out)

    def score(self, X, y, sample_weight=None):
        from .metrics import utt_pcc

        pred = self.predict(X)
        y = check_labels(y, len(pred))
        return float(np.mean(list(utt_pcc(pred, y).values())))

    def save(self, path):
        check_is_fitted(self, "params_")
        save_checkpoint(path, self.params_)

    @classmethod
    def from_checkpoint(cls, path, **kwargs):
        ckpt = load_checkpoint(path)
        cfg = ckpt.params.config
        est = cls(
            num_layers=cfg.num_layers, hidden_dim=cfg.hidden_dim, num_heads=cfg.num_heads, ffn_dim=cfg.ffn_dim,
            frame_size=cfg.frame_size, frame_stride=cfg.frame_stride, max_frames=cfg.max_frames,
            head_blocks=cfg.head_blocks, dtype=cfg.dtype, **kwargs,
        )
        est.params_ = ckpt.params
        est.n_features_in_ = 1
        return est


def embed(waveform, params):
    """Unit-norm pooled embedding of one window."""
    frames = model.frontend_frames(waveform, params)
    stack = model.transformer_forward(frames, params)
    z = model.layer_weight_normalize(params["layer_weights"])
    return model.l2_normalize(model.aggregate_embedding(stack, z))
