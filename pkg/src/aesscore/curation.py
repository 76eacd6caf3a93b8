"""Score-driven manifest curation: percentile filtering, quality-prefix
prompting and pseudo-labeling."""

import math
import re
from dataclasses import dataclass, replace

from .errors import DataError
from .inference import batch_predict
from .metrics import percentile
from .scores import AXES, axis_index

PREFIX = "Audio quality:"
_PREFIX_RE = re.compile(r"^Audio quality:\s?(-?\d+(?:\.\d+)?)(?:\s(.*))?$", re.S)


def percentile_threshold(values, p):
    return percentile(values, p)


@dataclass(frozen=True)
class FilterReport:
    axis: str
    percentile: float
    threshold: float
    total: int
    kept: int
    dropped: int

    def to_dict(self):
        return {"schema_version": 1, "operation": "filter", **self.__dict__}

    def to_text(self):
        return (
            f"filter axis={self.axis.upper()} p={self.percentile:g} threshold={self.threshold:.6g}\n"
            f"kept {self.kept}/{self.total} ({100.0 * self.kept / max(self.total, 1):.1f}%), dropped {self.dropped}\n"
        )


def _axis_key(axis):
    return AXES[axis_index(axis)]


def filter_manifest(entries, axis="pq", p=25):
    """Drop entries scoring below the ``p``-th percentile of the manifest's own
    scores on ``axis``; ties with the threshold are kept."""
    key = _axis_key(axis)
    missing = [e.audio_path for e in entries if key not in e.scores]
    if missing:
        raise DataError(f"entries without a {key.upper()} score: {', '.join(missing[:20])}")
    if not entries:
        return [], FilterReport(key, p, math.nan, 0, 0, 0)
    threshold = percentile([e.scores[key] for e in entries], p)
    kept = [e for e in entries if e.scores[key] >= threshold]
    return kept, FilterReport(key, p, threshold, len(entries), len(kept), len(entries) - len(kept))


def round_half_away(x):
    return math.copysign(math.floor(abs(x) + 0.5), x)


def quantize_score(y, r):
    if r < 1 or int(r) != r:
        raise ValueError("rounding factor must be a positive integer")
    if not math.isfinite(y):
        raise ValueError("score must be finite")
    return round_half_away(y * r) / r


def format_score(v):
    text = repr(float(v))
    if "e" in text or "E" in text:
        text = f"{v:.6f}".rstrip("0")
        if text.endswith("."):
            text += "0"
    return text


def quality_prefix(y, r=2):
    """``Audio quality:<y rounded to the 1/r grid>``."""
    return PREFIX + format_score(quantize_score(y, r))


def parse_prefix(caption):
    """Split a prefixed caption into ``(value, remainder)``; ``None`` if unprefixed."""
    m = _PREFIX_RE.match(caption)
    if not m:
        return None
    return float(m.group(1)), m.group(2) or ""


def apply_prompting(entries, axis="pq", r=2):
    """Prefix every caption with its own entry's quantized score."""
    key = _axis_key(axis)
    out = []
    for e in entries:
        if e.caption is None:
            raise DataError(f"{e.audio_path}: no caption to prefix")
        if key not in e.scores:
            raise DataError(f"{e.audio_path}: no {key.upper()} score")
        if e.caption.startswith(PREFIX):
            raise DataError(f"{e.audio_path}: caption already carries a quality prefix")
        out.append(replace(e, caption=f"{quality_prefix(e.scores[key], r)} {e.caption}", extra=dict(e.extra)))
    return out


def inference_prefix(training_scores, p=90, r=2):
    """Fixed generation-time prefix at the ``p``-th percentile of training scores."""
    scores = list(training_scores)
    if not scores:
        raise DataError("no training scores to take a percentile of")
    return quality_prefix(percentile(scores, p), r)


def pseudo_label(entries, params, axes=AXES, overwrite=False, base_dir=None, jobs=1):
    """Attach predicted scores to entries. Entries that already carry every
    requested axis are left alone unless ``overwrite``; unreadable files keep
    their fields and gain an ``unscored`` reason in ``extra``.

    Returns ``(entries, errors)``.
    """
    keys = [_axis_key(a) for a in axes]
    todo = [i for i, e in enumerate(entries) if overwrite or any(k not in e.scores for k in keys)]
    result = batch_predict([entries[i] for i in todo], params, base_dir=base_dir, jobs=jobs)
    predicted = {id(e): p for e, p in result.scored}
    failed = {id(e): msg for e, msg in result.errors}
    out = list(entries)
    for i in todo:
        e = entries[i]
        if id(e) in predicted:
            scores = dict(e.scores)
            scores.update({k: getattr(predicted[id(e)].scores, k) for k in keys})
            out[i] = replace(e, scores=scores, extra=dict(e.extra))
        else:
            out[i] = replace(e, extra={**e.extra, "unscored": failed[id(e)]})
    return out, [(e.audio_path, msg) for e, msg in result.errors]
