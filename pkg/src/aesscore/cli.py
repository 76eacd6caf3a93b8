"""``aes`` command line: synth, train, predict, eval, curate, qualify,
grad-check and pairwise.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys

from . import __version__
from .errors import AesError, AudioError, DataError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("aesscore")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _axis(value):
    v = value.lower()
    if v not in ("pq", "pc", "ce", "cu"):
        raise argparse.ArgumentTypeError(f"axis must be one of PQ, PC, CE, CU (got {value!r})")
    return v


def _axes(value):
    return tuple(_axis(v) for v in value.split(",") if v)


def _write_text(path, text):
    from .manifest import atomic_write_text

    atomic_write_text(path, text)


# -- subcommands -----------------------------------------------------------


def cmd_synth(args):
    from .synthdata import build_corpus

    records = build_corpus(args.count, args.seed, args.out, duration_s=args.duration, jobs=args.jobs)
    print(f"wrote {len(records)} clips and manifest.jsonl to {args.out}")


def _encoder_from_args(args):
    from .model import EncoderConfig

    fields = dict(
        num_layers=args.layers, hidden_dim=args.hidden, num_heads=args.heads, ffn_dim=args.ffn,
        head_blocks=args.head_blocks, dtype=args.dtype,
    )
    if args.full_scale:
        return EncoderConfig.full_scale(dtype=args.dtype)
    return EncoderConfig(**fields)


def cmd_train(args):
    from .checkpoint import load_checkpoint, save_checkpoint
    from .errors import TrainingDivergedError
    from .manifest import load_labeled
    from .training import TrainConfig, train_run

    corpus = load_labeled(args.manifest)
    cfg = TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size, steps=args.steps, warmup_steps=args.warmup,
        seed=args.seed, chunk_seconds=args.chunk_seconds, grad_clip=None if args.grad_clip <= 0 else args.grad_clip,
        loss_axes=args.axes, polarity_flip=args.polarity_flip,
    )
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume).train_state()
    try:
        state = train_run(corpus, cfg, _encoder_from_args(args), resume=resume, stop_at=args.stop_at)
    except TrainingDivergedError as exc:
        if exc.last_good is not None:
            save_checkpoint(args.out, exc.last_good)
            print(f"training diverged at step {exc.step}; last good parameters saved to {args.out}", file=sys.stderr)
        raise
    save_checkpoint(args.out, state.params, state, cfg)
    log_path = args.log or args.out + ".log.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss", "loss_pq", "loss_pc", "loss_ce", "loss_cu", "lr"])
    for row in state.log:
        w.writerow([row["step"], repr(row["loss"]), *(repr(row[f"loss_{a}"]) for a in ("pq", "pc", "ce", "cu")), repr(row["lr"])])
    _write_text(log_path, buf.getvalue())
    last = state.log[-1]["loss"] if state.log else float("nan")
    print(f"trained {state.step} steps on {len(corpus)} clips; final batch loss {last:.4f}; checkpoint {args.out}")


def cmd_predict(args):
    from .checkpoint import load_checkpoint
    from .inference import batch_predict, predict_clip, prediction_record, window_records
    from .manifest import ManifestEntry, read_manifest, write_jsonl

    params = load_checkpoint(args.checkpoint).params
    if args.input:
        pred = predict_clip(args.input, params, window_seconds=args.window_seconds)
        s = pred.scores
        print(f"{args.input}\tPQ={s.pq:.4f}\tPC={s.pc:.4f}\tCE={s.ce:.4f}\tCU={s.cu:.4f}")
        if args.out:
            write_jsonl(args.out, [prediction_record(ManifestEntry(args.input), pred)])
        return EXIT_OK
    entries = read_manifest(args.manifest)
    base = os.path.dirname(os.path.abspath(args.manifest))
    result = batch_predict(entries, params, base_dir=base, jobs=args.jobs, window_seconds=args.window_seconds)
    out = args.out or "predictions.jsonl"
    records = []
    for e, p in result.scored:
        rec = prediction_record(e, p)
        for key in ("system_id", "modality"):
            if key in e.extra:
                rec[key] = e.extra[key]
        records.append(rec)
    write_jsonl(out, records)
    if args.details:
        write_jsonl(args.details, [r for e, p in result.scored for r in window_records(e, p)])
    if result.errors:
        write_jsonl(out + ".errors.jsonl", [{"audio_path": e.audio_path, "error": msg} for e, msg in result.errors])
        for e, msg in result.errors:
            print(f"error: {e.audio_path}: {msg}", file=sys.stderr)
    print(f"scored {len(result.scored)}/{len(entries)} files -> {out}")
    return EXIT_DATA if result.errors and not result.scored else EXIT_OK


def _align(pred_records, label_records):
    by_path = {r["audio_path"]: r for r in pred_records}
    pairs = []
    missing = []
    for lab in label_records:
        p = by_path.get(lab["audio_path"])
        if p is None:
            missing.append(lab["audio_path"])
        else:
            pairs.append((p, lab))
    return pairs, missing


def cmd_eval(args):
    from .manifest import read_jsonl
    from .metrics import evaluate, pearson, read_score_file
    from .scores import AXES

    labels = read_jsonl(args.labels)
    if args.external:
        scores = read_score_file(args.external)
        key = args.axis
        pairs = [(scores[r["audio_path"]], float(r[key])) for r in labels if r["audio_path"] in scores]
        if len(pairs) < 2:
            raise DataError("fewer than two labeled files have external scores")
        r = pearson([p for p, _ in pairs], [t for _, t in pairs])
        text = f"external scores vs {key.upper()}: n={len(pairs)} utt-PCC={r:+.4f}\n"
        print(text, end="")
        if args.out:
            _write_text(args.out, json.dumps({"schema_version": 1, "axis": key, "n": len(pairs), "utt_pcc": r}, sort_keys=True) + "\n")
        return EXIT_OK
    pairs, missing = _align(read_jsonl(args.pred), labels)
    if missing:
        raise DataError(f"{len(missing)} labeled files have no prediction, e.g. {missing[0]}")
    try:
        pred = [[float(p[a]) for a in AXES] for p, _ in pairs]
        truth = [[float(t[a]) for a in AXES] for _, t in pairs]
    except KeyError as exc:
        raise DataError(f"record missing score field {exc}") from None
    sids = None
    if args.per_system:
        sids = [t.get("system_id", p.get("system_id")) for p, t in pairs]
        if any(s is None for s in sids):
            raise DataError("--per-system needs a system_id on every label record")
    report = evaluate(pred, truth, system_ids=sids, axis_matrix=args.axis_matrix)
    print(report.to_text(), end="")
    if args.out:
        _write_text(args.out, json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    if args.csv:
        _write_text(args.csv, report.to_csv())
    return EXIT_OK


def cmd_curate(args):
    from .curation import apply_prompting, filter_manifest, inference_prefix, pseudo_label
    from .manifest import read_manifest, write_manifest

    entries = read_manifest(args.manifest)
    if args.action == "filter":
        kept, report = filter_manifest(entries, args.axis, args.percentile)
        if args.out:
            write_manifest(args.out, kept)
        if args.report:
            _write_text(args.report, json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
        print(report.to_text(), end="")
    elif args.action == "prompt":
        if args.inference:
            missing = [e.audio_path for e in entries if args.axis not in e.scores]
            if missing:
                raise DataError(f"entries without a {args.axis.upper()} score: {', '.join(missing[:20])}")
            prefix = inference_prefix([e.scores[args.axis] for e in entries], args.percentile, args.rounding)
            print(prefix)
            if args.out:
                _write_text(args.out, prefix + "\n")
            return EXIT_OK
        prompted = apply_prompting(entries, args.axis, args.rounding)
        if args.out:
            write_manifest(args.out, prompted)
        print(f"prefixed {len(prompted)} captions (axis {args.axis.upper()}, r={args.rounding})")
    elif args.action == "label":
        from .checkpoint import load_checkpoint

        params = load_checkpoint(args.checkpoint).params
        base = os.path.dirname(os.path.abspath(args.manifest))
        labeled, errors = pseudo_label(entries, params, args.axes, args.overwrite, base_dir=base, jobs=args.jobs)
        if args.out:
            write_manifest(args.out, labeled)
        for path, msg in errors:
            print(f"error: {path}: {msg}", file=sys.stderr)
        print(f"pseudo-labeled {len(entries) - len(errors)}/{len(entries)} entries")
    return EXIT_OK


def cmd_qualify(args):
    from .manifest import read_jsonl
    from .metrics import qualify_rater_axes

    rater = {r["audio_path"]: r for r in read_jsonl(args.rater)}
    golden = read_jsonl(args.golden)
    missing = [g["audio_path"] for g in golden if g["audio_path"] not in rater]
    if missing:
        raise DataError(f"rater did not answer {len(missing)} golden items, e.g. {missing[0]}")
    try:
        r_axes = {a: [float(rater[g["audio_path"]][a]) for g in golden] for a in args.axes}
        g_axes = {a: [float(g[a]) for g in golden] for a in args.axes}
    except KeyError as exc:
        raise DataError(f"record missing score field {exc}") from None
    passed, results = qualify_rater_axes(r_axes, g_axes, args.axes, args.threshold)
    for a, res in results.items():
        r = "n/a" if res.r is None else f"{res.r:+.4f}"
        print(f"{a.upper()}: r={r} {'pass' if res.passed else 'fail'}" + (f" ({res.reason})" if res.reason else ""))
    print("QUALIFIED" if passed else "NOT QUALIFIED")
    if args.out:
        payload = {
            "schema_version": 1, "passed": passed, "threshold": args.threshold,
            "axes": {a: {"r": res.r, "passed": res.passed, "reason": res.reason} for a, res in results.items()},
        }
        _write_text(args.out, json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def cmd_grad_check(args):
    from .model import EncoderConfig
    from .training import grad_check

    cfg = EncoderConfig(
        num_layers=args.layers, hidden_dim=args.hidden, num_heads=args.heads, ffn_dim=args.ffn,
        frame_size=args.frame_size, frame_stride=args.frame_stride, max_frames=64, head_blocks=args.head_blocks,
    )
    report = grad_check(cfg, seed=args.seed, tolerance=args.tolerance, h=args.step, batch_size=args.batch)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_NUMERIC


def _read_votes(path):
    from .manifest import read_jsonl

    with open(path, encoding="utf-8") as fh:
        first = fh.read(1)
    if first == "{":
        return [int(r["vote"]) for r in read_jsonl(path)]
    with open(path, encoding="utf-8") as fh:
        return [int(line.split(",")[0]) for line in fh if line.strip()]


def cmd_pairwise(args):
    from .metrics import bootstrap_net_win

    try:
        votes = _read_votes(args.votes)
    except (ValueError, KeyError) as exc:
        raise DataError(f"cannot parse votes: {exc}") from None
    res = bootstrap_net_win(votes, n_resamples=args.resamples, seed=args.seed)
    print(f"net win rate {res.net_win_rate:+.1f}% (95% CI {res.ci_low:+.1f}% .. {res.ci_high:+.1f}%), n={res.n_pairs}")
    if args.out:
        _write_text(args.out, json.dumps({"schema_version": 1, **res.to_dict()}, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser():
    p = _Parser(prog="aes", description="Four-axis audio aesthetics scoring toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="JSON file of flag defaults (top level or keyed by subcommand)")
    p.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    parsers = {}

    s = sub.add_parser("synth", help="generate a labeled synthetic corpus")
    s.add_argument("--count", type=int, default=100, help="number of clips (default 100)")
    s.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--duration", type=float, default=2.0, help="clip length in seconds (default 2.0)")
    s.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    s.set_defaults(func=cmd_synth)
    parsers["synth"] = s

    t = sub.add_parser("train", help="train a predictor from a JSONL manifest")
    t.add_argument("--manifest", required=True, help="training manifest (JSON Lines)")
    t.add_argument("--out", required=True, help="checkpoint path to write")
    t.add_argument("--steps", type=int, default=2000, help="optimizer steps (default 2000)")
    t.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    t.add_argument("--batch-size", type=int, default=16, help="clips per step (default 16)")
    t.add_argument("--lr", type=float, default=1e-3, help="peak learning rate (default 1e-3)")
    t.add_argument("--warmup", type=int, default=100, help="linear warmup steps (default 100)")
    t.add_argument("--chunk-seconds", type=float, default=10.0, help="training crop length (default 10)")
    t.add_argument("--polarity-flip", action="store_true", help="randomly invert clip polarity as augmentation")
    t.add_argument("--grad-clip", type=float, default=1.0, help="global-norm clip, <=0 disables (default 1.0)")
    t.add_argument("--axes", type=_axes, default=("pq", "pc", "ce", "cu"), help="axes in the loss, e.g. pq for a one-axis model")
    t.add_argument("--layers", type=int, default=4, help="transformer layers (default 4)")
    t.add_argument("--hidden", type=int, default=64, help="hidden width (default 64)")
    t.add_argument("--heads", type=int, default=4, help="attention heads (default 4)")
    t.add_argument("--ffn", type=int, default=128, help="feed-forward width (default 128)")
    t.add_argument("--head-blocks", type=int, default=2, help="MLP blocks before the readout (default 2)")
    t.add_argument("--full-scale", action="store_true", help="12 layers x 768 wide encoder")
    t.add_argument("--dtype", choices=("float64", "float32"), default="float64", help="arithmetic precision (default float64)")
    t.add_argument("--resume", help="continue from a checkpoint with optimizer state")
    t.add_argument("--stop-at", type=int, help="halt after this step; the schedule still spans --steps")
    t.add_argument("--log", help="training log CSV (default <out>.log.csv)")
    t.set_defaults(func=cmd_train)
    parsers["train"] = t

    pr = sub.add_parser("predict", help="score a WAV file or every file in a manifest")
    pr.add_argument("--checkpoint", required=True, help="trained checkpoint")
    src = pr.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="single WAV file")
    src.add_argument("--manifest", help="manifest of files to score")
    pr.add_argument("--out", help="predictions JSONL (default predictions.jsonl for --manifest)")
    pr.add_argument("--details", help="per-window scores JSONL")
    pr.add_argument("--window-seconds", type=float, default=10.0, help="window length (default 10)")
    pr.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    pr.set_defaults(func=cmd_predict)
    parsers["predict"] = pr

    e = sub.add_parser("eval", help="correlate predictions with labels")
    e.add_argument("--labels", required=True, help="label manifest (JSON Lines)")
    grp = e.add_mutually_exclusive_group(required=True)
    grp.add_argument("--pred", help="predictions JSONL")
    grp.add_argument("--external", help="third-party score file (path,score CSV/TSV or JSONL)")
    e.add_argument("--axis", type=_axis, default="pq", help="label axis for --external (default PQ)")
    e.add_argument("--per-system", action="store_true", help="also report system-level SRCC")
    e.add_argument("--axis-matrix", action="store_true", help="report the label axis correlation matrix")
    e.add_argument("--out", help="report JSON")
    e.add_argument("--csv", help="report CSV")
    e.set_defaults(func=cmd_eval)
    parsers["eval"] = e

    c = sub.add_parser("curate", help="filter, prompt or pseudo-label a manifest")
    csub = c.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser, required=True)
    cf = csub.add_parser("filter", help="drop entries below a score percentile")
    cf.add_argument("--manifest", required=True, help="scored manifest")
    cf.add_argument("--axis", type=_axis, default="pq", help="score axis (default PQ)")
    cf.add_argument("--percentile", type=float, default=25.0, help="drop below this percentile (default 25)")
    cf.add_argument("--out", help="filtered manifest")
    cf.add_argument("--report", help="curation report JSON")
    cp = csub.add_parser("prompt", help="prefix captions with quantized scores")
    cp.add_argument("--manifest", required=True, help="scored, captioned manifest")
    cp.add_argument("--axis", type=_axis, default="pq", help="score axis (default PQ)")
    cp.add_argument("--rounding", type=int, default=2, help="rounding factor r (default 2)")
    cp.add_argument("--inference", action="store_true", help="print the fixed generation-time prefix instead")
    cp.add_argument("--percentile", type=float, default=90.0, help="percentile for --inference (default 90)")
    cp.add_argument("--out", help="output manifest (or prefix file with --inference)")
    cl = csub.add_parser("label", help="attach predicted scores to a manifest")
    cl.add_argument("--manifest", required=True, help="manifest to label")
    cl.add_argument("--checkpoint", required=True, help="trained checkpoint")
    cl.add_argument("--axes", type=_axes, default=("pq", "pc", "ce", "cu"), help="axes to write (default all)")
    cl.add_argument("--overwrite", action="store_true", help="replace existing scores")
    cl.add_argument("--out", help="labeled manifest")
    cl.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    for sp in (cf, cp, cl):
        sp.set_defaults(func=cmd_curate)
    parsers.update({"curate": c, "curate.filter": cf, "curate.prompt": cp, "curate.label": cl})

    q = sub.add_parser("qualify", help="check a rater against a golden set")
    q.add_argument("--rater", required=True, help="rater answers JSONL (audio_path + axis scores)")
    q.add_argument("--golden", required=True, help="golden answers JSONL")
    q.add_argument("--threshold", type=float, default=0.7, help="minimum Pearson r, strict (default 0.7)")
    q.add_argument("--axes", type=_axes, default=("pq", "pc"), help="axes that must each pass (default pq,pc)")
    q.add_argument("--out", help="result JSON")
    q.set_defaults(func=cmd_qualify)
    parsers["qualify"] = q

    g = sub.add_parser("grad-check", help="verify analytic gradients by finite differences")
    g.add_argument("--layers", type=int, default=2, help="transformer layers (default 2)")
    g.add_argument("--hidden", type=int, default=8, help="hidden width (default 8)")
    g.add_argument("--heads", type=int, default=2, help="attention heads (default 2)")
    g.add_argument("--ffn", type=int, default=16, help="feed-forward width (default 16)")
    g.add_argument("--head-blocks", type=int, default=2, help="MLP blocks (default 2)")
    g.add_argument("--frame-size", type=int, default=400, help="samples per frame (default 400)")
    g.add_argument("--frame-stride", type=int, default=320, help="frame hop (default 320)")
    g.add_argument("--batch", type=int, default=3, help="batch size (default 3)")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    g.add_argument("--tolerance", type=float, default=1e-4, help="max relative error (default 1e-4)")
    g.add_argument("--step", type=float, default=1e-5, help="finite-difference step h (default 1e-5)")
    g.set_defaults(func=cmd_grad_check)
    parsers["grad-check"] = g

    pw = sub.add_parser("pairwise", help="bootstrap net win rate from A/B votes")
    pw.add_argument("--votes", required=True, help="votes file: JSONL {\"vote\": -1|0|1} or one vote per line")
    pw.add_argument("--resamples", type=int, default=1000, help="bootstrap resamples (default 1000)")
    pw.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    pw.add_argument("--out", help="result JSON")
    pw.set_defaults(func=cmd_pairwise)
    parsers["pairwise"] = pw
    return p, parsers


def _apply_config(path, argv, parsers):
    """Install config values as parser defaults so explicit flags still win."""
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise DataError("config must be a JSON object")
    names = []
    for i, tok in enumerate(argv):
        if tok in parsers and "." not in tok:
            names.append(tok)
            if tok == "curate" and i + 1 < len(argv) and f"curate.{argv[i + 1]}" in parsers:
                names.append(f"curate.{argv[i + 1]}")
            break
    flat = {k.replace("-", "_"): v for k, v in cfg.items() if not isinstance(v, dict)}
    for name in names:
        flat.update({k.replace("-", "_"): v for k, v in cfg.get(name, {}).items()})
    for name in names:
        sp = parsers[name]
        defaults = {}
        for action in sp._actions:
            if action.dest not in flat or action.dest in ("help", "func"):
                continue
            v = flat[action.dest]
            if action.type is not None and isinstance(v, str):
                v = action.type(v)
            elif isinstance(v, list):
                v = tuple(v)
            defaults[action.dest] = v
            action.required = False
        sp.set_defaults(**defaults)


def run(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, parsers = build_parser()
    try:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv)
        if known.config:
            _apply_config(known.config, argv, parsers)
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return EXIT_USAGE
        if args.verbose:
            logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
        code = args.func(args)
        return EXIT_OK if code is None else code
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, AudioError, AesError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
