"""Synthetic, fully labeled corpus for exercising training and evaluation.

Clips are mixtures of simple generators; quality is controlled by a chain of
degradations. Proxy labels follow fixed formulas (see ``label_rule``):

    severity = 0.4 * noise + 0.2 * clipping + 0.2 * lowpass + 0.2 * quantization
    PQ = 9 - 8 * severity
    PC = 1 + 1.6 * (components - 1)
    CE = clip(0.7 * PQ + 0.3 * PC + u_ce, 1, 10)
    CU = clip(0.7 * PQ + 0.3 * (11 - PC) + u_cu, 1, 10)

with each intensity in [0, 1] and ``u_*`` seeded uniform noise in [-0.5, 0.5].
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .audio_io import AudioClip, write_wav
from .manifest import write_jsonl
from .scores import AesScores

SAMPLE_RATE = 16000
MAX_COMPONENTS = 6
GENERATORS = ("partials", "noise_burst", "chirp", "pulses", "sine")
SEVERITY_WEIGHTS = {"noise": 0.4, "clipping": 0.2, "lowpass": 0.2, "quantization": 0.2}
LABEL_NOISE = 0.5


@dataclass(frozen=True)
class DegradationSpec:
    snr_db: float | None = None
    clip_threshold: float | None = None
    lowpass_hz: float | None = None
    bits: int | None = None

    def intensities(self):
        """Each degradation's strength normalized to [0, 1]; absent ones are 0."""
        out = dict.fromkeys(SEVERITY_WEIGHTS, 0.0)
        if self.snr_db is not None:
            out["noise"] = float(np.clip((40.0 - self.snr_db) / 40.0, 0.0, 1.0))
        if self.clip_threshold is not None:
            out["clipping"] = float(np.clip((1.0 - self.clip_threshold) / 0.9, 0.0, 1.0))
        if self.lowpass_hz is not None:
            out["lowpass"] = float(np.clip((8000.0 - self.lowpass_hz) / 7000.0, 0.0, 1.0))
        if self.bits is not None:
            out["quantization"] = float(np.clip((16 - self.bits) / 12.0, 0.0, 1.0))
        return out

    def severity(self):
        inten = self.intensities()
        return sum(SEVERITY_WEIGHTS[k] * inten[k] for k in SEVERITY_WEIGHTS)

    @classmethod
    def from_intensities(cls, noise=0.0, clipping=0.0, lowpass=0.0, quantization=0.0):
        """Inverse of :meth:`intensities`; a zero intensity leaves that stage off.
        Bit depth is integral, so the quantization intensity snaps to 1/12 steps."""
        return cls(
            snr_db=40.0 - 40.0 * noise if noise > 0 else None,
            clip_threshold=1.0 - 0.9 * clipping if clipping > 0 else None,
            lowpass_hz=8000.0 - 7000.0 * lowpass if lowpass > 0 else None,
            bits=int(round(16 - 12 * quantization)) if quantization > 0 else None,
        )


def _sine(rng, t, sr):
    return np.sin(2 * np.pi * rng.uniform(100.0, 4000.0) * t + rng.uniform(0, 2 * np.pi))


def _partials(rng, t, sr):
    f0 = rng.uniform(110.0, 880.0)
    n = rng.integers(3, 7)
    out = np.zeros_like(t)
    for h in range(1, n + 1):
        if f0 * h < sr / 2 - 200:
            out += np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi)) / h
    return out


def _noise_burst(rng, t, sr):
    noise = rng.standard_normal(t.size)
    # crude band shaping: first-difference (bright) or running mean (dark)
    if rng.random() < 0.5:
        noise = np.diff(noise, prepend=0.0)
    else:
        k = int(rng.integers(2, 8))
        noise = np.convolve(noise, np.ones(k) / k, mode="same")
    rate = rng.uniform(1.0, 6.0)
    env = 0.5 * (1.0 + np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))
    return noise * env


def _chirp(rng, t, sr):
    f1, f2 = rng.uniform(200.0, 6000.0, size=2)
    dur = max(t[-1], 1.0 / sr) if t.size else 1.0
    phase = 2 * np.pi * (f1 * t + 0.5 * (f2 - f1) / dur * t * t)
    return np.sin(phase)


def _pulses(rng, t, sr):
    rate = rng.uniform(2.0, 8.0)
    freq = rng.uniform(300.0, 3000.0)
    local = np.mod(t, 1.0 / rate)
    return np.sin(2 * np.pi * freq * local) * np.exp(-local * 40.0)


_GEN = {"sine": _sine, "partials": _partials, "noise_burst": _noise_burst, "chirp": _chirp, "pulses": _pulses}


def synth_clip(seed, components, duration_s, kinds=None, sample_rate=SAMPLE_RATE):
    """Mix ``components`` generators with staggered onsets, peak-normalized to 0.9.

    Returns ``(clip, components)``. ``kinds`` pins the generator types;
    otherwise they are drawn from the seed.
    """
    if not 1 <= components <= MAX_COMPONENTS:
        raise ValueError(f"components must be in 1..{MAX_COMPONENTS}")
    if not 1.0 <= duration_s <= 60.0:
        raise ValueError("duration_s must be in [1, 60]")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    if kinds is None:
        kinds = [GENERATORS[(int(rng.integers(len(GENERATORS))) + k) % len(GENERATORS)] for k in range(components)]
    mix = np.zeros(n)
    for k, kind in enumerate(kinds[:components]):
        part = _GEN[kind](rng, t, sample_rate)
        part = part / (np.sqrt(np.mean(part * part)) + 1e-12)
        onset = int(n * k / (2 * components))
        part[:onset] = 0.0
        mix += part
    peak = np.abs(mix).max()
    if peak > 0:
        mix *= 0.9 / peak
    return AudioClip(mix, sample_rate, 1), components


def spectral_flatness(x, n_fft=1024):
    """Geometric over arithmetic mean of the averaged power spectrum."""
    x = np.asarray(x, dtype=np.float64)
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[:: n_fft // 2]
    power = (np.abs(np.fft.rfft(frames * np.hanning(n_fft), axis=-1)) ** 2).mean(axis=0) + 1e-20
    return float(np.exp(np.mean(np.log(power))) / np.mean(power))


def spectral_peaks(x, sample_rate=SAMPLE_RATE, rel_db=-30.0):
    """Frequencies of local spectral maxima within ``rel_db`` of the strongest."""
    x = np.asarray(x, dtype=np.float64)
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size)))
    db = 20 * np.log10(spec / spec.max() + 1e-20)
    interior = (db[1:-1] > db[:-2]) & (db[1:-1] >= db[2:]) & (db[1:-1] > rel_db)
    bins = np.nonzero(interior)[0] + 1
    return bins * sample_rate / x.size


def onset_count(x, sample_rate=SAMPLE_RATE, frame_s=0.02, bands=16, rise_db=10.0, floor_db=-60.0, merge_s=0.05):
    """Count energy onsets across frequency bands.

    The spectrum of each ``frame_s`` frame is split into ``bands`` equal-width
    bands. A band onsets when its level jumps ``rise_db`` above its minimum over
    the preceding 100 ms (levels are clamped at ``floor_db`` relative to the
    loudest band frame). Onsets in any band closer than ``merge_s`` merge.
    """
    x = np.asarray(x, dtype=np.float64)
    hop = int(frame_s * sample_rate)
    n = x.size // hop
    if n == 0:
        return 0
    spec = np.abs(np.fft.rfft(x[: n * hop].reshape(n, hop) * np.hanning(hop), axis=1)) ** 2
    edges = np.linspace(0, spec.shape[1], bands + 1).astype(int)
    energy = np.stack([spec[:, lo:hi].sum(axis=1) for lo, hi in zip(edges[:-1], edges[1:])], axis=1)
    db = 10 * np.log10(energy / (energy.max() + 1e-30) + 1e-30)
    db = np.maximum(db, floor_db)
    look = max(1, int(round(0.1 / frame_s)))
    merge = max(1, int(round(merge_s / frame_s)))
    count, last = 0, -merge
    for i in range(n):
        ref = db[max(0, i - look) : i].min(axis=0) if i else np.full(bands, floor_db)
        if np.any(db[i] - ref >= rise_db) and i - last >= merge:
            count += 1
            last = i
    return count


def degrade(clip, spec, seed):
    """Apply noise, hard clipping, one-pole lowpass and quantization in that
    order. Returns ``(clip, severity)``."""
    x = clip.samples.copy()
    if spec.snr_db is not None:
        rng = np.random.default_rng(seed)
        power = np.mean(x * x)
        noise = rng.standard_normal(x.size)
        noise *= np.sqrt(power / 10.0 ** (spec.snr_db / 10.0) / np.mean(noise * noise))
        x = x + noise
    if spec.clip_threshold is not None:
        x = np.clip(x, -spec.clip_threshold, spec.clip_threshold)
    if spec.lowpass_hz is not None:
        a = np.exp(-2.0 * np.pi * spec.lowpass_hz / clip.sample_rate)
        x = lfilter([1.0 - a], [1.0, -a], x)
    if spec.bits is not None:
        half = 2.0 ** (spec.bits - 1)
        x = np.clip(np.round(x * half), -half, half - 1) / half
    return AudioClip(x, clip.sample_rate, clip.channels), spec.severity()


def label_rule(severity, components, rng):
    """Proxy AES labels from degradation severity and component count."""
    pq = 9.0 - 8.0 * severity
    pc = 1.0 + 1.6 * (components - 1)
    ce = float(np.clip(0.7 * pq + 0.3 * pc + rng.uniform(-LABEL_NOISE, LABEL_NOISE), 1.0, 10.0))
    cu = float(np.clip(0.7 * pq + 0.3 * (11.0 - pc) + rng.uniform(-LABEL_NOISE, LABEL_NOISE), 1.0, 10.0))
    return AesScores(pq, pc, ce, cu)


@dataclass(frozen=True)
class SynthItem:
    index: int
    clip: AudioClip
    scores: AesScores
    severity: float
    components: int
    level: int
    spec: DegradationSpec


def synth_item(index, seed, duration_s=2.0, severity_levels=11):
    """Deterministic corpus item ``index``: components cycle through 1..6 and
    the target severity walks a grid, with per-degradation jitter."""
    rng = np.random.default_rng([seed, index])
    components = 1 + index % MAX_COMPONENTS
    level_idx = (index // MAX_COMPONENTS) % severity_levels
    level = level_idx / (severity_levels - 1)
    inten = {k: float(np.clip(level + rng.uniform(-0.15, 0.15), 0.0, 1.0)) if level > 0 else 0.0 for k in SEVERITY_WEIGHTS}
    spec = DegradationSpec.from_intensities(**inten)
    clip, _ = synth_clip(int(rng.integers(2**31)), components, duration_s)
    clip, severity = degrade(clip, spec, int(rng.integers(2**31)))
    scores = label_rule(severity, components, rng)
    return SynthItem(index, clip, scores, severity, components, level_idx, spec)


def generate(n, seed, duration_s=2.0, start=0, jobs=1):
    indices = range(start, start + n)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(synth_item, indices, [seed] * n, [duration_s] * n))
    return [synth_item(i, seed, duration_s) for i in indices]


def build_corpus(n, seed, out_dir, duration_s=2.0, jobs=1):
    """Write ``n`` WAVs plus ``manifest.jsonl`` into ``out_dir``; returns the
    manifest records."""
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for item in generate(n, seed, duration_s, jobs=jobs):
        name = f"synth_{item.index:06d}.wav"
        write_wav(os.path.join(out_dir, name), item.clip)
        rec = {"audio_path": name, **item.scores.to_dict(), "system_id": f"sev{item.level:02d}"}
        rec["extra"] = {"severity": item.severity, "components": item.components}
        records.append(rec)
    write_jsonl(os.path.join(out_dir, "manifest.jsonl"), records)
    return records
