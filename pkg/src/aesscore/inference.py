"""Utterance-level scoring of arbitrary-length audio by length-weighted
averaging of fixed 10 s windows, and manifest-level batch scoring."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import model
from .audio_io import WINDOW_SECONDS, AudioClip, chunk_windows, load_wav, to_mono_16k
from .errors import AesError, DataError, NumericalError
from .scores import AesScores


@dataclass(frozen=True)
class UtterancePrediction:
    scores: AesScores
    window_count: int
    per_window_scores: list
    weights: list


def sliding_window_predict(clip, params, scorer=None, window_seconds=WINDOW_SECONDS, overlap=0.0):
    """Score each window, then average with weights proportional to window length.

    ``scorer`` maps a mono 16 kHz window to AesScores; it defaults to the
    model's own predictor and exists so the aggregation can be tested alone.
    """
    clip = to_mono_16k(clip)
    if clip.num_frames == 0:
        raise DataError("cannot score an empty clip")
    if scorer is None:
        def scorer(x):
            return model.predict(x, params)
    min_tail = params.config.frame_size if params is not None else 0
    plan = chunk_windows(clip, window_seconds, overlap=overlap, min_tail=min_tail)
    per_window = []
    for i, (start, length) in enumerate(plan.offsets):
        try:
            per_window.append(scorer(clip.samples[start : start + length]))
        except NumericalError as exc:
            exc.window_index = i
            exc.args = (f"window {i}: {exc}",)
            raise
    lens = np.array(plan.lengths, dtype=np.float64)
    weights = lens / lens.sum()
    stacked = np.stack([s.to_array() for s in per_window])
    scores = AesScores.from_array((stacked * weights[:, None]).sum(axis=0))
    return UtterancePrediction(scores, len(per_window), per_window, weights.tolist())


@dataclass
class BatchResult:
    scored: list  # (entry, UtterancePrediction)
    errors: list  # (entry, message)

    def scores_by_path(self):
        return {e.audio_path: p.scores for e, p in self.scored}


def _score_one(args):
    path, params, window_seconds = args
    try:
        clip = load_wav(path)
        return sliding_window_predict(clip, params, window_seconds=window_seconds), None
    except AesError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def batch_predict(entries, params, base_dir=None, jobs=1, window_seconds=WINDOW_SECONDS):
    """Score every manifest entry independently; failures are collected per
    file and never abort the batch. Results keep manifest order."""
    tasks = [(e.resolve(base_dir), params, window_seconds) for e in entries]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_score_one, tasks))
    else:
        outcomes = [_score_one(t) for t in tasks]
    result = BatchResult([], [])
    for entry, (pred, err) in zip(entries, outcomes):
        if err is None:
            result.scored.append((entry, pred))
        else:
            result.errors.append((entry, err))
    return result


def prediction_record(entry, pred):
    return {"audio_path": entry.audio_path, **pred.scores.to_dict(), "window_count": pred.window_count}


def window_records(entry, pred):
    return [
        {"audio_path": entry.audio_path, "window": i, "weight": w, **s.to_dict()}
        for i, (s, w) in enumerate(zip(pred.per_window_scores, pred.weights))
    ]


def predict_clip(clip_or_path, params, window_seconds=WINDOW_SECONDS):
    clip = clip_or_path if isinstance(clip_or_path, AudioClip) else load_wav(clip_or_path)
    return sliding_window_predict(clip, params, window_seconds=window_seconds)
