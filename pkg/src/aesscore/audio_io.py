"""WAV decoding, 16 kHz mono conditioning, loudness normalization and
fixed-length windowing."""

import math
import os
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import signal

from .errors import TruncatedDataError, UnreadableFileError, UnsupportedFormatError

TARGET_RATE = 16000
WINDOW_SECONDS = 10
DEFAULT_LUFS = -23.0
RESAMPLER_TAPS = 64
KAISER_BETA = 8.6

_FORMAT_PCM = 0x0001
_FORMAT_FLOAT = 0x0003
_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    channels: int = 1

    def __post_init__(self):
        samples = np.ascontiguousarray(np.asarray(self.samples, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "samples", samples)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if samples.size % self.channels:
            raise ValueError("sample count is not a multiple of the channel count")

    @property
    def num_frames(self):
        return self.samples.size // self.channels

    @property
    def duration(self):
        return self.num_frames / self.sample_rate

    def channel_data(self):
        """Samples as a (frames, channels) view."""
        return self.samples.reshape(-1, self.channels)

    @classmethod
    def from_channels(cls, data, sample_rate):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 1:
            return cls(data, sample_rate, 1)
        return cls(data.reshape(-1), sample_rate, data.shape[1])


def _read_chunks(raw):
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise UnreadableFileError("not a RIFF/WAVE container")
    pos = 12
    fmt = None
    while pos + 8 <= len(raw):
        cid, size = struct.unpack_from("<4sI", raw, pos)
        body = raw[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            if fmt is None:
                raise UnsupportedFormatError("data chunk precedes fmt chunk")
            if len(body) < size:
                raise TruncatedDataError(f"data chunk declares {size} bytes but only {len(body)} are present")
            return fmt, body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise UnreadableFileError("missing fmt chunk")
    raise TruncatedDataError("missing data chunk")


def _parse_fmt(fmt):
    if len(fmt) < 16:
        raise UnreadableFileError("fmt chunk too short")
    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if tag == _FORMAT_EXTENSIBLE:
        if len(fmt) < 40:
            raise UnreadableFileError("extensible fmt chunk too short")
        tag = struct.unpack_from("<H", fmt, 24)[0]
    if channels < 1 or rate < 1:
        raise UnreadableFileError("fmt chunk has zero channels or sample rate")
    return tag, channels, rate, block_align, bits


def load_wav(path):
    """Decode a PCM16, PCM24 or float32 WAV file."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise UnreadableFileError(f"{path}: {exc}") from exc
    fmt, data = _read_chunks(raw)
    tag, channels, rate, block_align, bits = _parse_fmt(fmt)
    if block_align != channels * bits // 8:
        raise UnsupportedFormatError(f"inconsistent block alignment {block_align}")
    if len(data) % block_align:
        raise TruncatedDataError(f"data chunk of {len(data)} bytes is not a whole number of frames")
    if tag == _FORMAT_PCM and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif tag == _FORMAT_PCM and bits == 24:
        b = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        samples = ints.astype(np.float64) / float(1 << 23)
    elif tag == _FORMAT_FLOAT and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedFormatError(f"unsupported WAV encoding (format tag {tag:#06x}, {bits} bits)")
    return AudioClip(samples, rate, channels)


def write_wav(path, clip, encoding="float32"):
    """Write ``clip`` as WAV; amplitudes are clamped to [-1, 1] here only."""
    x = np.clip(clip.samples, -1.0, 1.0)
    if encoding == "float32":
        tag, bits, payload = _FORMAT_FLOAT, 32, x.astype("<f4").tobytes()
    elif encoding == "pcm16":
        tag, bits = _FORMAT_PCM, 16
        payload = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
    elif encoding == "pcm24":
        tag, bits = _FORMAT_PCM, 24
        ints = np.clip(np.round(x * 8388608.0), -8388608, 8388607).astype("<i4")
        payload = ints.view(np.uint8).reshape(-1, 4)[:, :3].tobytes()
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    block_align = clip.channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, clip.channels, clip.sample_rate, clip.sample_rate * block_align, block_align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)
    os.replace(tmp, path)


def resampling_filter(up, down, taps=RESAMPLER_TAPS, beta=KAISER_BETA):
    """Kaiser-windowed sinc lowpass spanning ``taps`` zero crossings of the
    narrower of the two rates."""
    max_rate = max(up, down)
    half = taps // 2 * max_rate
    return signal.firwin(2 * half + 1, 1.0 / max_rate, window=("kaiser", beta))


def resample(x, rate_in, rate_out):
    """Band-limited polyphase resampling of a 1-D signal; output length is
    ``round(len(x) * rate_out / rate_in)``."""
    x = np.asarray(x, dtype=np.float64)
    if rate_in == rate_out:
        return x.copy()
    g = math.gcd(rate_in, rate_out)
    up, down = rate_out // g, rate_in // g
    n_out = int(round(x.size * rate_out / rate_in))
    if x.size == 0:
        return np.zeros(0)
    y = signal.resample_poly(x, up, down, window=resampling_filter(up, down))
    if y.size >= n_out:
        return y[:n_out]
    return np.pad(y, (0, n_out - y.size))


def to_mono_16k(clip):
    if clip.channels == 1 and clip.sample_rate == TARGET_RATE:
        return clip
    mono = clip.channel_data().mean(axis=1) if clip.channels > 1 else clip.samples
    return AudioClip(resample(mono, clip.sample_rate, TARGET_RATE), TARGET_RATE, 1)


def _k_weighting(rate):
    # Pre-filter (high shelf) and RLB high-pass, parameterized by analog
    # prototypes so any sample rate maps onto the 48 kHz reference response.
    f0, gain_db, q = 1681.974450955533, 3.999843853973347, 0.7071752369554196
    k = math.tan(math.pi * f0 / rate)
    vh = 10.0 ** (gain_db / 20.0)
    vb = vh**0.4996667741545416
    a0 = 1.0 + k / q + k * k
    shelf_b = [(vh + vb * k / q + k * k) / a0, 2.0 * (k * k - vh) / a0, (vh - vb * k / q + k * k) / a0]
    shelf_a = [1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0]
    f0, q = 38.13547087602444, 0.5003270373238773
    k = math.tan(math.pi * f0 / rate)
    a0 = 1.0 + k / q + k * k
    hp_b = [1.0, -2.0, 1.0]
    hp_a = [1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0]
    return (shelf_b, shelf_a), (hp_b, hp_a)


def _channel_gains(channels):
    gains = np.ones(channels)
    if channels == 5:
        gains[3:] = 1.41
    elif channels == 6:
        gains[[3]] = 0.0
        gains[4:] = 1.41
    return gains


def integrated_loudness(clip):
    """Gated integrated loudness in LUFS; ``-inf`` when every block is gated."""
    data = clip.channel_data()
    (sb, sa), (hb, ha) = _k_weighting(clip.sample_rate)
    weighted = signal.lfilter(hb, ha, signal.lfilter(sb, sa, data, axis=0), axis=0)
    block = int(round(0.4 * clip.sample_rate))
    hop = int(round(0.1 * clip.sample_rate))
    n = weighted.shape[0]
    if n == 0:
        return -math.inf
    if n < block:
        starts, block = [0], n
    else:
        starts = range(0, n - block + 1, hop)
    sq = weighted * weighted
    csum = np.vstack([np.zeros((1, sq.shape[1])), np.cumsum(sq, axis=0)])
    power = np.array([(csum[s + block] - csum[s]) / block for s in starts])
    z = power @ _channel_gains(clip.channels)
    with np.errstate(divide="ignore"):
        levels = -0.691 + 10.0 * np.log10(z)
    kept = z[levels > -70.0]
    if kept.size == 0:
        return -math.inf
    relative = -0.691 + 10.0 * math.log10(kept.mean()) - 10.0
    kept = z[(levels > -70.0) & (levels > relative)]
    return -0.691 + 10.0 * math.log10(kept.mean())


class LoudnessResult(NamedTuple):
    clip: AudioClip
    gain: float
    silent: bool


def loudness_normalize(clip, target_lufs=DEFAULT_LUFS):
    """Scale ``clip`` by one linear gain so its integrated loudness hits
    ``target_lufs``. Silent clips come back unchanged with ``silent=True``."""
    measured = integrated_loudness(clip)
    if not math.isfinite(measured):
        return LoudnessResult(clip, 1.0, True)
    gain = 10.0 ** ((target_lufs - measured) / 20.0)
    # The absolute gate can admit or drop blocks after scaling; one refinement
    # pass absorbs that.
    after = integrated_loudness(AudioClip(clip.samples * gain, clip.sample_rate, clip.channels))
    if math.isfinite(after):
        gain *= 10.0 ** ((target_lufs - after) / 20.0)
    return LoudnessResult(AudioClip(clip.samples * gain, clip.sample_rate, clip.channels), gain, False)


@dataclass(frozen=True)
class WindowPlan:
    window_samples: int
    offsets: list = field(default_factory=list)

    @property
    def lengths(self):
        return [n for _, n in self.offsets]

    def __len__(self):
        return len(self.offsets)


def chunk_windows(clip, window_seconds=WINDOW_SECONDS, overlap=0.0, min_tail=0):
    """Split a mono clip into consecutive ``window_seconds`` windows.

    With the default ``overlap=0`` the windows tile the clip exactly and the
    last one may be short. A final window shorter than ``min_tail`` samples is
    folded into its predecessor.
    """
    if clip.channels != 1:
        raise ValueError("chunk_windows expects a mono clip")
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must be in [0, 1)")
    size = int(clip.sample_rate * window_seconds)
    hop = max(1, int(round(size * (1.0 - overlap))))
    n = clip.num_frames
    offsets = []
    start = 0
    while start < n:
        offsets.append((start, min(size, n - start)))
        if start + size >= n:
            break
        start += hop
    if len(offsets) > 1 and offsets[-1][1] < min_tail:
        tail_start, tail_len = offsets.pop()
        prev_start, _ = offsets.pop()
        offsets.append((prev_start, tail_start + tail_len - prev_start))
    return WindowPlan(size, offsets)
