from dataclasses import dataclass

import numpy as np

AXES = ("pq", "pc", "ce", "cu")
AXIS_NAMES = {
    "pq": "Production Quality",
    "pc": "Production Complexity",
    "ce": "Content Enjoyment",
    "cu": "Content Usefulness",
}
SCORE_MIN, SCORE_MAX = 1.0, 10.0


def axis_index(axis):
    key = axis.lower()
    if key not in AXES:
        raise ValueError(f"unknown axis {axis!r}; expected one of {', '.join(a.upper() for a in AXES)}")
    return AXES.index(key)


@dataclass(frozen=True)
class AesScores:
    """Four-axis aesthetic score vector on the nominal 1-10 scale."""

    pq: float
    pc: float
    ce: float
    cu: float

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (4,):
            raise ValueError(f"expected 4 scores, got shape {values.shape}")
        return cls(*(float(v) for v in values))

    @classmethod
    def from_mapping(cls, record):
        return cls(*(float(record[a]) for a in AXES))

    def to_array(self):
        return np.array([self.pq, self.pc, self.ce, self.cu], dtype=np.float64)

    def to_dict(self):
        return {a: getattr(self, a) for a in AXES}

    def get(self, axis):
        return getattr(self, AXES[axis_index(axis)])

    def is_valid_label(self):
        arr = self.to_array()
        return bool(np.all(np.isfinite(arr)) and np.all((arr >= SCORE_MIN) & (arr <= SCORE_MAX)))
