"""Four-axis audio aesthetics prediction: model, training, inference,
evaluation metrics and score-driven data curation."""

__version__ = "0.1.0"

from .audio_io import AudioClip, chunk_windows, load_wav, loudness_normalize, to_mono_16k, write_wav
from .estimator import AesPredictor
from .inference import UtterancePrediction, batch_predict, sliding_window_predict
from .model import EncoderConfig, ModelParams, Normalizer, init_params, predict
from .scores import AXES, AesScores
from .training import LabeledSample, TrainConfig, train_run

__all__ = [
    "AXES",
    "AesPredictor",
    "AesScores",
    "AudioClip",
    "EncoderConfig",
    "LabeledSample",
    "ModelParams",
    "Normalizer",
    "TrainConfig",
    "UtterancePrediction",
    "batch_predict",
    "chunk_windows",
    "init_params",
    "load_wav",
    "loudness_normalize",
    "predict",
    "sliding_window_predict",
    "to_mono_16k",
    "train_run",
    "write_wav",
]
