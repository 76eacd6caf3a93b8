"""JSON Lines manifests: reading, atomic writing and the record schema.

A record is a flat JSON object::

    {"audio_path": "clips/a.wav", "caption": "...", "pq": 6.1, "pc": 3.0,
     "ce": 5.5, "cu": 6.0, "system_id": "sys1", "modality": "speech"}

Only ``audio_path`` is mandatory. Relative paths resolve against the
manifest's directory. Unknown keys are carried through untouched.
"""

import json
import os
from dataclasses import dataclass, field, replace

from .errors import DataError
from .scores import AXES, AesScores

SCHEMA_VERSION = 1
_KNOWN = {"audio_path", "caption", "schema_version", *AXES}


def read_jsonl(path):
    records = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{n}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise DataError(f"{path}:{n}: expected a JSON object")
            records.append(rec)
    return records


def atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp = os.path.join(directory, f".{os.path.basename(path)}.tmp{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_jsonl(path, records):
    lines = []
    for rec in records:
        rec = dict(rec)
        rec.setdefault("schema_version", SCHEMA_VERSION)
        lines.append(json.dumps(rec, ensure_ascii=False))
    atomic_write_text(path, "".join(line + "\n" for line in lines))


@dataclass
class ManifestEntry:
    audio_path: str
    caption: str | None = None
    scores: dict = field(default_factory=dict)  # axis -> value, possibly partial
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.audio_path:
            raise DataError("manifest entry has an empty audio_path")

    @classmethod
    def from_record(cls, rec):
        if "audio_path" not in rec:
            raise DataError(f"record missing audio_path: {rec}")
        scores = {a: float(rec[a]) for a in AXES if rec.get(a) is not None}
        extra = {k: v for k, v in rec.items() if k not in _KNOWN}
        return cls(str(rec["audio_path"]), rec.get("caption"), scores, extra)

    def to_record(self):
        rec = {"audio_path": self.audio_path}
        if self.caption is not None:
            rec["caption"] = self.caption
        for a in AXES:
            if a in self.scores:
                rec[a] = self.scores[a]
        rec.update(self.extra)
        return rec

    def aes(self):
        missing = [a for a in AXES if a not in self.scores]
        if missing:
            raise DataError(f"{self.audio_path}: missing scores for {', '.join(missing)}")
        return AesScores.from_mapping(self.scores)

    def with_scores(self, scores):
        return replace(self, scores=dict(scores), extra=dict(self.extra))

    def resolve(self, base_dir):
        if base_dir is None or os.path.isabs(self.audio_path):
            return self.audio_path
        return os.path.join(base_dir, self.audio_path)


def read_manifest(path):
    return [ManifestEntry.from_record(r) for r in read_jsonl(path)]


def write_manifest(path, entries):
    write_jsonl(path, [e.to_record() for e in entries])


def load_labeled(path):
    """Training manifest -> list of LabeledSample with resolved audio paths."""
    from .training import LabeledSample

    base = os.path.dirname(os.path.abspath(path))
    samples = []
    for rec in read_jsonl(path):
        entry = ManifestEntry.from_record(rec)
        try:
            scores = entry.aes()
            samples.append(LabeledSample(entry.resolve(base), scores, rec.get("system_id"), rec.get("modality")))
        except ValueError as exc:
            raise DataError(f"{entry.audio_path}: {exc}") from None
    return samples
