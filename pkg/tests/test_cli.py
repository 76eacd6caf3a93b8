import json
import subprocess
import sys

import numpy as np
import pytest

from aesscore.cli import build_parser, run
from aesscore.manifest import read_jsonl
from aesscore.metrics import utt_pcc

TRAIN_SMALL = ["--layers", "2", "--hidden", "8", "--heads", "2", "--ffn", "16", "--batch-size", "4"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    data = root / "data"
    assert run(["synth", "--count", "24", "--seed", "7", "--out", str(data)]) == 0
    ckpt = root / "ckpt.aes"
    assert run(["train", "--manifest", str(data / "manifest.jsonl"), "--steps", "20", "--seed", "7", "--out", str(ckpt), *TRAIN_SMALL]) == 0
    preds = root / "preds.jsonl"
    assert run(["predict", "--checkpoint", str(ckpt), "--manifest", str(data / "manifest.jsonl"), "--out", str(preds)]) == 0
    return root, data, ckpt, preds


def test_help_lists_flags(capsys):
    parser, parsers = build_parser()
    expected = {
        "synth": ["--count", "--seed", "--out", "--jobs"],
        "train": ["--manifest", "--steps", "--seed", "--out", "--resume", "--config"],
        "predict": ["--checkpoint", "--input", "--manifest", "--jobs"],
        "eval": ["--pred", "--labels", "--per-system", "--axis-matrix"],
        "curate.filter": ["--axis", "--percentile"],
        "curate.prompt": ["--axis", "--rounding", "--inference", "--percentile"],
        "qualify": ["--rater", "--golden", "--threshold"],
        "grad-check": ["--seed", "--tolerance"],
        "pairwise": ["--votes", "--resamples"],
    }
    top = parser.format_help()
    assert "--config" in top
    for name, flags in expected.items():
        text = parsers[name].format_help() + top
        for flag in flags:
            assert flag in text, (name, flag)


def test_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "aesscore.cli", "train", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "--manifest" in out.stdout


def test_usage_errors(capsys):
    assert run(["train", "--bogus"]) == 1
    assert run(["nosuchcommand"]) == 1
    assert run([]) == 1


def test_data_error_exit(tmp_path, capsys):
    assert run(["eval", "--pred", str(tmp_path / "none.jsonl"), "--labels", str(tmp_path / "none.jsonl")]) == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert run(["curate", "filter", "--manifest", str(bad)]) == 2


def test_numerical_error_exit(tmp_path, capsys):
    m = tmp_path / "m.jsonl"
    m.write_text("".join(json.dumps({"audio_path": f"{i}.wav", "pq": 5, "pc": i + 1, "ce": 2, "cu": 3}) + "\n" for i in range(3)))
    from aesscore.audio_io import AudioClip, write_wav

    for i in range(3):
        write_wav(tmp_path / f"{i}.wav", AudioClip(np.zeros(800), 16000))
    assert run(["train", "--manifest", str(m), "--out", str(tmp_path / "c"), "--steps", "1"]) == 3
    assert "PQ" in capsys.readouterr().err


def test_pipeline_outputs(pipeline, capsys):
    root, data, ckpt, preds = pipeline
    assert ckpt.exists() and (root / "ckpt.aes.log.csv").exists()
    wav = data / "synth_000003.wav"
    assert run(["predict", "--checkpoint", str(ckpt), "--input", str(wav)]) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert line.count("=") == 4 and "PQ=" in line


def test_eval_matches_library(pipeline, capsys):
    root, data, ckpt, preds = pipeline
    report = root / "report.json"
    assert run(["eval", "--pred", str(preds), "--labels", str(data / "manifest.jsonl"), "--per-system", "--out", str(report)]) == 0
    got = json.loads(report.read_text())["utt_pcc"]
    labels = {r["audio_path"]: r for r in read_jsonl(data / "manifest.jsonl")}
    pred_recs = read_jsonl(preds)
    axes = ("pq", "pc", "ce", "cu")
    lib = utt_pcc([[p[a] for a in axes] for p in pred_recs], [[labels[p["audio_path"]][a] for a in axes] for p in pred_recs])
    assert got == lib


def test_reruns_byte_identical(pipeline, tmp_path):
    root, data, ckpt, preds = pipeline
    again = tmp_path / "again"
    assert run(["synth", "--count", "24", "--seed", "7", "--out", str(again)]) == 0
    assert (again / "manifest.jsonl").read_bytes() == (data / "manifest.jsonl").read_bytes()
    ckpt2 = tmp_path / "ckpt.aes"
    assert run(["train", "--manifest", str(again / "manifest.jsonl"), "--steps", "20", "--seed", "7", "--out", str(ckpt2), *TRAIN_SMALL]) == 0
    assert ckpt2.read_bytes() == ckpt.read_bytes()
    preds2 = tmp_path / "preds.jsonl"
    assert run(["predict", "--checkpoint", str(ckpt2), "--manifest", str(again / "manifest.jsonl"), "--out", str(preds2)]) == 0
    assert preds2.read_bytes() == preds.read_bytes()


def test_resume_via_cli(pipeline, tmp_path):
    root, data, ckpt, preds = pipeline
    manifest = str(data / "manifest.jsonl")
    half = tmp_path / "half.aes"
    assert run(["train", "--manifest", manifest, "--steps", "20", "--stop-at", "8", "--seed", "7", "--out", str(half), *TRAIN_SMALL]) == 0
    full = tmp_path / "full.aes"
    assert run(["train", "--manifest", manifest, "--steps", "20", "--seed", "7", "--resume", str(half), "--out", str(full), *TRAIN_SMALL]) == 0
    assert full.read_bytes() == ckpt.read_bytes()


def test_config_file(pipeline, tmp_path, capsys):
    root, data, ckpt, preds = pipeline
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"curate.filter": {"manifest": str(data / "manifest.jsonl"), "percentile": 50}}))
    assert run(["--config", str(cfg), "curate", "filter"]) == 0
    assert "kept 12/24" in capsys.readouterr().out
    assert run(["--config", str(cfg), "curate", "filter", "--percentile", "25"]) == 0
    assert "kept 18/24" in capsys.readouterr().out


def test_curate_commands(tmp_path, capsys):
    m = tmp_path / "m.jsonl"
    rows = [{"audio_path": f"{i}.wav", "caption": f"sound {i}", "pq": 1 + 9 * i / 999} for i in range(1000)]
    m.write_text("".join(json.dumps(r) + "\n" for r in rows))
    out = tmp_path / "kept.jsonl"
    assert run(["curate", "filter", "--manifest", str(m), "--axis", "PQ", "--percentile", "25", "--out", str(out)]) == 0
    assert len(read_jsonl(out)) == 750
    assert run(["curate", "prompt", "--manifest", str(out), "--rounding", "5", "--out", str(tmp_path / "p.jsonl")]) == 0
    assert all(r["caption"].startswith("Audio quality:") for r in read_jsonl(tmp_path / "p.jsonl"))
    capsys.readouterr()
    assert run(["curate", "prompt", "--manifest", str(m), "--inference", "--percentile", "50"]) == 0
    assert capsys.readouterr().out.strip() == "Audio quality:5.5"


def test_qualify_and_pairwise(tmp_path, capsys):
    golden = tmp_path / "g.jsonl"
    rater = tmp_path / "r.jsonl"
    g = [1, 2, 3, 4, 5]
    r = [3, 1, 2, 4, 5]
    golden.write_text("".join(json.dumps({"audio_path": f"{i}", "pq": g[i], "pc": g[i]}) + "\n" for i in range(5)))
    rater.write_text("".join(json.dumps({"audio_path": f"{i}", "pq": g[i], "pc": r[i]}) + "\n" for i in range(5)))
    assert run(["qualify", "--rater", str(rater), "--golden", str(golden), "--out", str(tmp_path / "q.json")]) == 0
    res = json.loads((tmp_path / "q.json").read_text())
    assert not res["passed"] and res["axes"]["pc"]["r"] == 0.7
    votes = tmp_path / "v.txt"
    votes.write_text("1\n1\n1\n-1\n0\n")
    assert run(["pairwise", "--votes", str(votes), "--out", str(tmp_path / "w.json")]) == 0
    assert json.loads((tmp_path / "w.json").read_text())["net_win_rate"] == 40.0


def test_grad_check_command(capsys):
    assert run(["grad-check", "--hidden", "4", "--ffn", "8", "--seed", "1"]) == 0
    assert capsys.readouterr().out.startswith("PASS")
