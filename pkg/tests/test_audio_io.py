import wave

import numpy as np
import pyloudnorm
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from aesscore.audio_io import (
    AudioClip,
    chunk_windows,
    integrated_loudness,
    load_wav,
    loudness_normalize,
    resample,
    to_mono_16k,
    write_wav,
)
from aesscore.errors import TruncatedDataError, UnreadableFileError, UnsupportedFormatError


def test_silence_pcm16(tmp_path):
    p = tmp_path / "s.wav"
    wavfile.write(p, 16000, np.zeros(16000, dtype=np.int16))
    clip = load_wav(p)
    assert clip.sample_rate == 16000 and clip.channels == 1
    assert clip.samples.shape == (16000,) and not clip.samples.any()


def test_full_scale_negative(tmp_path):
    p = tmp_path / "n.wav"
    wavfile.write(p, 16000, np.array([-32768, 32767, 0], dtype=np.int16))
    clip = load_wav(p)
    assert clip.samples[0] == -1.0
    assert clip.samples[1] == 32767 / 32768


def test_stereo_44k_matches_scipy(tmp_path, rng):
    data = rng.integers(-32768, 32768, size=(88200, 2)).astype(np.int16)
    p = tmp_path / "st.wav"
    wavfile.write(p, 44100, data)
    clip = load_wav(p)
    assert (clip.sample_rate, clip.channels, clip.num_frames) == (44100, 2, 88200)
    np.testing.assert_array_equal(clip.channel_data(), data / 32768.0)


def test_float32_matches_scipy(tmp_path, rng):
    data = rng.uniform(-1, 1, size=(500, 3)).astype(np.float32)
    p = tmp_path / "f.wav"
    wavfile.write(p, 22050, data)
    clip = load_wav(p)
    np.testing.assert_array_equal(clip.channel_data(), data.astype(np.float64))


def test_pcm24_against_stdlib_wave(tmp_path, rng):
    x = rng.uniform(-1, 1, size=301)
    p = tmp_path / "p24.wav"
    write_wav(p, AudioClip(x, 16000), encoding="pcm24")
    with wave.open(str(p)) as w:
        assert w.getsampwidth() == 3
        raw = w.readframes(w.getnframes())
    ints = [int.from_bytes(raw[i : i + 3], "little", signed=True) for i in range(0, len(raw), 3)]
    np.testing.assert_array_equal(load_wav(p).samples, np.array(ints) / 2**23)
    assert np.max(np.abs(load_wav(p).samples - x)) <= 0.5 / 2**23 + 1e-15


def test_write_clamps_and_round_trips(tmp_path):
    x = np.array([0.25, -0.5, 1.7, -3.0], dtype=np.float32).astype(np.float64)
    p = tmp_path / "c.wav"
    write_wav(p, AudioClip(x, 16000))
    np.testing.assert_array_equal(load_wav(p).samples, [0.25, -0.5, 1.0, -1.0])
    write_wav(p, AudioClip(x, 16000), encoding="pcm16")
    sr, data = wavfile.read(p)
    assert sr == 16000 and data.tolist() == [8192, -16384, 32767, -32768]


def test_error_kinds_are_distinct(tmp_path):
    with pytest.raises(UnreadableFileError):
        load_wav(tmp_path / "missing.wav")
    junk = tmp_path / "junk.wav"
    junk.write_bytes(b"this is not audio at all")
    with pytest.raises(UnreadableFileError):
        load_wav(junk)
    u8 = tmp_path / "u8.wav"
    wavfile.write(u8, 8000, np.full(100, 128, dtype=np.uint8))
    with pytest.raises(UnsupportedFormatError):
        load_wav(u8)
    good = tmp_path / "good.wav"
    wavfile.write(good, 16000, np.ones(1000, dtype=np.int16))
    cut = tmp_path / "cut.wav"
    cut.write_bytes(good.read_bytes()[:-501])
    with pytest.raises(TruncatedDataError):
        load_wav(cut)
    assert not issubclass(TruncatedDataError, UnsupportedFormatError)


def test_mono_16k_identity_and_downmix():
    x = np.linspace(-0.5, 0.5, 1600)
    clip = AudioClip(x, 16000)
    assert np.array_equal(to_mono_16k(clip).samples, x)
    stereo = AudioClip.from_channels(np.stack([x, -x], axis=1), 16000)
    assert not to_mono_16k(stereo).samples.any()


def test_resample_sine_48k():
    t = np.arange(48000) / 48000
    out = to_mono_16k(AudioClip(np.sin(2 * np.pi * 100 * t), 48000))
    assert out.sample_rate == 16000 and out.num_frames == 16000
    ref = np.sin(2 * np.pi * 100 * np.arange(16000) / 16000)
    assert np.corrcoef(out.samples, ref)[0, 1] > 0.999


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 30000), st.sampled_from([8000, 22050, 44100, 48000, 96000]))
def test_resample_length(n, rate):
    assert resample(np.zeros(n), rate, 16000).size == round(n * 16000 / rate)


def _test_signal(seed, seconds=3.0, rate=16000, channels=1):
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * rate)) / rate
    cols = [0.3 * np.sin(2 * np.pi * rng.uniform(80, 5000) * t) + 0.05 * rng.standard_normal(t.size) for _ in range(channels)]
    return np.stack(cols, axis=1)


def test_loudness_matches_pyloudnorm():
    for seed, rate, ch in [(0, 16000, 1), (1, 48000, 2), (2, 44100, 1)]:
        data = _test_signal(seed, rate=rate, channels=ch)
        ours = integrated_loudness(AudioClip.from_channels(data, rate))
        ref = pyloudnorm.Meter(rate).integrated_loudness(data if ch > 1 else data[:, 0])
        assert abs(ours - ref) < 0.5


def test_normalize_gain_examples():
    meter = pyloudnorm.Meter(16000)
    data = _test_signal(5)[:, 0]
    at23 = pyloudnorm.normalize.loudness(data, meter.integrated_loudness(data), -23.0)
    res = loudness_normalize(AudioClip(at23, 16000))
    assert abs(res.gain - 1.0) < 0.06 and not res.silent
    at33 = pyloudnorm.normalize.loudness(data, meter.integrated_loudness(data), -33.0)
    res = loudness_normalize(AudioClip(at33, 16000))
    assert abs(res.gain / 10 ** 0.5 - 1.0) < 0.06
    assert abs(meter.integrated_loudness(res.clip.samples) + 23.0) < 0.5


def test_normalize_silence():
    clip = AudioClip(np.zeros(32000), 16000)
    res = loudness_normalize(clip)
    assert res.silent and res.gain == 1.0 and res.clip is clip


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.001, 0.9))
def test_normalize_hits_target(seed, level):
    data = _test_signal(seed, seconds=2.0)[:, 0]
    data = data * level / np.abs(data).max()
    res = loudness_normalize(AudioClip(data, 16000))
    assert abs(pyloudnorm.Meter(16000).integrated_loudness(res.clip.samples) + 23.0) < 0.5


def test_chunk_examples():
    plan = chunk_windows(AudioClip(np.zeros(25 * 16000), 16000))
    assert plan.lengths == [160000, 160000, 80000]
    assert [s for s, _ in plan.offsets] == [0, 160000, 320000]
    assert chunk_windows(AudioClip(np.zeros(160000), 16000)).lengths == [160000]
    assert chunk_windows(AudioClip(np.zeros(48000), 16000)).lengths == [48000]
    assert chunk_windows(AudioClip(np.zeros(0), 16000)).lengths == []


def test_chunk_tail_merge():
    plan = chunk_windows(AudioClip(np.zeros(160000 + 100), 16000), min_tail=400)
    assert plan.offsets == [(0, 160100)]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10**7))
def test_chunk_lengths_sum(n):
    plan = chunk_windows(AudioClip(np.zeros(n), 16000))
    assert sum(plan.lengths) == n
    assert all(length <= 160000 for length in plan.lengths)
