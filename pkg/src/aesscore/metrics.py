"""Correlation statistics, evaluation reports, rater qualification and the
bootstrap net-win-rate protocol."""

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UndefinedCorrelationError
from .scores import AXES, AesScores

# Pearson is invariant to the variance normalizer (n vs n-1 cancels), so only
# centered cross products are formed here.


def _as_pair(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("correlation needs at least two observations")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("correlation inputs must be finite")
    return x, y


def pearson(x, y):
    x, y = _as_pair(x, y)
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or np.ptp(x) == 0.0:
        raise UndefinedCorrelationError("x", "x has zero variance; correlation undefined")
    if syy == 0.0 or np.ptp(y) == 0.0:
        raise UndefinedCorrelationError("y", "y has zero variance; correlation undefined")
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def average_ranks(x):
    """1-based ranks; tied values share the mean of their rank span."""
    x = np.asarray(x, dtype=np.float64).ravel()
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    ranks = np.empty(x.size)
    start = 0
    while start < x.size:
        stop = start + 1
        while stop < x.size and sorted_x[stop] == sorted_x[start]:
            stop += 1
        ranks[order[start:stop]] = 0.5 * (start + stop - 1) + 1.0
        start = stop
    return ranks


def spearman(x, y):
    x, y = _as_pair(x, y)
    return pearson(average_ranks(x), average_ranks(y))


def _score_matrix(scores):
    return np.array([s.to_array() if isinstance(s, AesScores) else np.asarray(s, dtype=np.float64) for s in scores])


def utt_pcc(pred, truth):
    """Per-axis Pearson correlation across utterances."""
    p, t = _score_matrix(pred), _score_matrix(truth)
    if p.shape != t.shape:
        raise ValueError("prediction and truth lists are not aligned")
    return {a: pearson(p[:, i], t[:, i]) for i, a in enumerate(AXES)}


def system_means(pairs):
    sums = {}
    for sid, score in pairs:
        if sid is None:
            raise DataError("system-level metrics need a system_id on every utterance")
        acc = sums.setdefault(sid, [0.0, 0])
        acc[0] += float(score)
        acc[1] += 1
    return {sid: s / n for sid, (s, n) in sums.items()}


def sys_srcc(pred, truth):
    """Spearman correlation of unweighted per-system mean scores."""
    pm, tm = system_means(pred), system_means(truth)
    if set(pm) != set(tm):
        raise DataError(f"system sets differ: {sorted(set(pm) ^ set(tm))}")
    if len(pm) < 2:
        raise DataError("sys-SRCC needs at least two systems")
    systems = sorted(pm)
    return spearman([pm[s] for s in systems], [tm[s] for s in systems])


def axis_correlation_matrix(labels):
    y = _score_matrix(labels)
    k = y.shape[1]
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = pearson(y[:, i], y[:, j])
    return out


@dataclass(frozen=True)
class QualifyResult:
    passed: bool
    r: float | None
    reason: str = ""


def rater_qualify(rater, golden, threshold=0.7):
    """Pass iff Pearson(rater, golden) is strictly above ``threshold``."""
    try:
        r = pearson(rater, golden)
    except UndefinedCorrelationError as exc:
        reason = "zero-variance rater answers" if exc.name == "x" else "zero-variance golden scores"
        return QualifyResult(False, None, reason)
    if r > threshold:
        return QualifyResult(True, r, "")
    return QualifyResult(False, r, f"r={r:.4f} not above {threshold}")


def qualify_rater_axes(rater, golden, axes=("pq", "pc"), threshold=0.7):
    """Multi-axis qualification: every listed axis must pass on its own."""
    results = {a: rater_qualify(rater[a], golden[a], threshold) for a in axes}
    return all(r.passed for r in results.values()), results


def percentile(values, p):
    """Linear-interpolation percentile (the 'linear' / type-7 definition)."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("percentile of an empty sequence")
    if not 0.0 <= p <= 100.0:
        raise ValueError("percentile must be within [0, 100]")
    pos = (v.size - 1) * p / 100.0
    lo = int(math.floor(pos))
    hi = min(lo + 1, v.size - 1)
    frac = pos - lo
    if frac == 0.0:
        return float(v[lo])
    return float(v[lo] + (v[hi] - v[lo]) * frac)


@dataclass(frozen=True)
class PairwiseResult:
    net_win_rate: float
    ci_low: float
    ci_high: float
    n_pairs: int
    n_resamples: int

    def to_dict(self):
        return dict(
            net_win_rate=self.net_win_rate, ci_low=self.ci_low, ci_high=self.ci_high,
            n_pairs=self.n_pairs, n_resamples=self.n_resamples,
        )


def bootstrap_net_win(votes, n_resamples=1000, seed=0, alpha=0.05):
    """Net win rate of A over B in percent with a percentile bootstrap CI.

    Votes are +1 (A better), -1 (B better) or 0 (similar). Resample ``b`` draws
    from its own generator keyed on ``(seed, b)``.
    """
    v = np.asarray(votes, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("no votes")
    if not np.all(np.isin(v, (-1.0, 0.0, 1.0))):
        raise DataError("votes must be -1, 0 or +1")
    n = v.size
    means = np.empty(n_resamples)
    for b in range(n_resamples):
        idx = np.random.default_rng([seed, b]).integers(0, n, size=n)
        means[b] = v[idx].mean()
    point = 100.0 * float(v.mean())
    lo = 100.0 * percentile(means, 100.0 * alpha / 2)
    hi = 100.0 * percentile(means, 100.0 * (1 - alpha / 2))
    return PairwiseResult(point, lo, hi, n, n_resamples)


@dataclass
class EvalReport:
    utt_pcc: dict
    sys_srcc: dict = field(default_factory=dict)
    n_utterances: int = 0
    n_systems: int = 0
    system_means: dict = field(default_factory=dict)
    axis_matrix: list | None = None

    def to_dict(self):
        out = {
            "schema_version": 1,
            "n_utterances": self.n_utterances,
            "n_systems": self.n_systems,
            "utt_pcc": {a: _json_num(v) for a, v in self.utt_pcc.items()},
            "sys_srcc": {a: _json_num(v) for a, v in self.sys_srcc.items()},
            "system_means": self.system_means,
        }
        if self.axis_matrix is not None:
            out["axis_matrix"] = self.axis_matrix
        return out

    def to_text(self):
        lines = [f"utterances: {self.n_utterances}"]
        lines.append("axis  utt-PCC  sys-SRCC")
        for a in self.utt_pcc:
            srcc = self.sys_srcc.get(a)
            lines.append(f"{a.upper():<4}  {self.utt_pcc[a]:+.4f}  " + (f"{srcc:+.4f}" if srcc is not None else "   -"))
        if self.sys_srcc:
            lines.append(f"systems: {self.n_systems}")
        if self.axis_matrix is not None:
            lines.append("axis correlation (Pearson r):")
            lines.append("      " + "  ".join(f"{a.upper():>6}" for a in AXES))
            for a, row in zip(AXES, self.axis_matrix):
                lines.append(f"{a.upper():<4}  " + "  ".join("   nan" if v is None else f"{v:+.3f}" for v in row))
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["axis", "utt_pcc", "sys_srcc", "n_utterances", "n_systems"])
        for a in self.utt_pcc:
            srcc = self.sys_srcc.get(a)
            w.writerow([a, repr(self.utt_pcc[a]), "" if srcc is None else repr(srcc), self.n_utterances, self.n_systems])
        return buf.getvalue()


def _or_nan(fn, *args):
    # a constant axis makes its correlation undefined; report NaN for that axis only
    try:
        return fn(*args)
    except UndefinedCorrelationError:
        return math.nan


def _json_num(v):
    return None if isinstance(v, float) and math.isnan(v) else v


def evaluate(pred, truth, system_ids=None, axis_matrix=False, axes=AXES):
    """Build an EvalReport from aligned score lists. Axes whose correlation is
    undefined (constant predictions or labels) are reported as NaN."""
    p, t = _score_matrix(pred), _score_matrix(truth)
    if p.shape != t.shape:
        raise ValueError("prediction and truth lists are not aligned")
    idx = [AXES.index(a) for a in axes]
    report = EvalReport({a: _or_nan(pearson, p[:, i], t[:, i]) for a, i in zip(axes, idx)}, n_utterances=len(p))
    if system_ids is not None:
        for a, i in zip(axes, idx):
            report.sys_srcc[a] = _or_nan(sys_srcc, list(zip(system_ids, p[:, i])), list(zip(system_ids, t[:, i])))
            report.system_means[a] = {s: m for s, m in sorted(system_means(zip(system_ids, p[:, i])).items())}
        report.n_systems = len(set(system_ids))
    if axis_matrix:
        m = np.eye(len(AXES))
        for i in range(len(AXES)):
            for j in range(i + 1, len(AXES)):
                m[i, j] = m[j, i] = _or_nan(pearson, t[:, i], t[:, j])
        report.axis_matrix = [[_json_num(float(v)) for v in row] for row in m]
    return report


def read_score_file(path):
    """Third-party predictor output as ``{audio_path: score}``.

    Accepts JSON Lines with ``audio_path``/``path`` and ``score`` keys, or
    CSV/TSV rows of ``path, score`` (a header row is skipped).
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    out = {}
    stripped = text.lstrip()
    if stripped.startswith("{"):
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            key = rec.get("audio_path", rec.get("path"))
            if key is None or "score" not in rec:
                raise DataError(f"{path}:{n}: need audio_path/path and score fields")
            out[key] = float(rec["score"])
        return out
    dialect = "excel-tab" if "\t" in text.split("\n", 1)[0] else "excel"
    for n, row in enumerate(csv.reader(io.StringIO(text), dialect=dialect), 1):
        if not row or not "".join(row).strip():
            continue
        if len(row) < 2:
            raise DataError(f"{path}:{n}: expected path and score columns")
        try:
            out[row[0].strip()] = float(row[1])
        except ValueError:
            if n == 1:
                continue
            raise DataError(f"{path}:{n}: score {row[1]!r} is not a number") from None
    return out
