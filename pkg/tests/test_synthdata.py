import json

import numpy as np
import pytest

from aesscore.audio_io import AudioClip, load_wav
from aesscore.metrics import pearson
from aesscore.synthdata import (
    GENERATORS,
    DegradationSpec,
    build_corpus,
    degrade,
    label_rule,
    onset_count,
    spectral_flatness,
    spectral_peaks,
    synth_clip,
    synth_item,
)


def test_pure_sine_has_one_peak():
    for seed in range(5):
        clip, n = synth_clip(seed, 1, 2.0, kinds=["sine"])
        assert n == 1 and len(spectral_peaks(clip.samples)) == 1
        assert abs(np.abs(clip.samples).max() - 0.9) < 1e-12


def test_same_seed_identical():
    a, _ = synth_clip(42, 5, 3.0)
    b, _ = synth_clip(42, 5, 3.0)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, synth_clip(43, 5, 3.0)[0].samples)


def test_more_components_more_complex():
    for seed in range(5):
        one, _ = synth_clip(seed, 1, 2.0, kinds=["sine"])
        four, _ = synth_clip(seed, 4, 2.0, kinds=["sine", "chirp", "noise_burst", "partials"])
        assert spectral_flatness(four.samples) > spectral_flatness(one.samples)
        assert onset_count(four.samples) > onset_count(one.samples)


def test_synth_clip_validation():
    with pytest.raises(ValueError):
        synth_clip(0, 7, 2.0)
    with pytest.raises(ValueError):
        synth_clip(0, 1, 0.5)
    assert set(GENERATORS) >= {"partials", "noise_burst", "chirp", "pulses"}


def test_identity_degradation():
    clip, _ = synth_clip(1, 3, 1.0)
    out, sev = degrade(clip, DegradationSpec(), 0)
    assert sev == 0.0 and np.array_equal(out.samples, clip.samples)


def test_snr_zero_noise_power():
    x = np.sqrt(2.0) * np.sin(2 * np.pi * 440 * np.arange(32000) / 16000)
    assert abs(np.mean(x * x) - 1.0) < 1e-9
    out, _ = degrade(AudioClip(x, 16000), DegradationSpec(snr_db=0.0), 5)
    noise = out.samples - x
    assert abs(np.mean(noise * noise) - 1.0) < 0.05


def test_four_bit_levels():
    x = np.linspace(-1, 1, 5000)
    out, _ = degrade(AudioClip(x, 16000), DegradationSpec(bits=4), 0)
    assert len(np.unique(out.samples)) <= 16


def test_severity_formula():
    spec = DegradationSpec(snr_db=20.0, clip_threshold=0.55, lowpass_hz=4500.0, bits=10)
    inten = spec.intensities()
    assert inten == pytest.approx({"noise": 0.5, "clipping": 0.5, "lowpass": 0.5, "quantization": 0.5}, abs=1e-12)
    assert spec.severity() == pytest.approx(0.5)
    again = DegradationSpec.from_intensities(**inten)
    assert again.bits == 10 and again.snr_db == 20.0
    assert again.clip_threshold == pytest.approx(0.55) and again.lowpass_hz == pytest.approx(4500.0)


def test_label_rule_monotone():
    rng = np.random.default_rng(0)
    sev = np.linspace(0, 1, 21)
    pq = [label_rule(s, 3, rng).pq for s in sev]
    assert all(b < a for a, b in zip(pq, pq[1:]))
    pc = [label_rule(0.3, c, rng).pc for c in range(1, 7)]
    assert all(b > a for a, b in zip(pc, pc[1:]))
    for s in sev:
        for c in range(1, 7):
            assert label_rule(s, c, rng).is_valid_label()


def test_build_corpus(tmp_path):
    records = build_corpus(100, 7, tmp_path / "a")
    lines = (tmp_path / "a" / "manifest.jsonl").read_text().splitlines()
    assert len(records) == 100 and len(lines) == 100
    assert len(list((tmp_path / "a").glob("*.wav"))) == 100
    recs = [json.loads(line) for line in lines]
    for r in recs:
        assert all(1 <= r[a] <= 10 for a in ("pq", "pc", "ce", "cu"))
        clip = load_wav(tmp_path / "a" / r["audio_path"])
        assert clip.sample_rate == 16000 and clip.channels == 1
    sev = [r["extra"]["severity"] for r in recs]
    assert pearson(sev, [r["pq"] for r in recs]) < -0.95
    build_corpus(100, 7, tmp_path / "b")
    assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == (tmp_path / "b" / "manifest.jsonl").read_bytes()
    for r in recs[:10]:
        assert (tmp_path / "a" / r["audio_path"]).read_bytes() == (tmp_path / "b" / r["audio_path"]).read_bytes()


def test_items_span_grid():
    items = [synth_item(i, 3) for i in range(132)]
    assert {it.components for it in items} == set(range(1, 7))
    assert {it.level for it in items} == set(range(11))
    assert synth_item(17, 3).scores == items[17].scores
