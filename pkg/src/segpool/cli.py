"""Command line entry point: ``segpool <subcommand> ...``.

Every option can also come from a flat ``key = value`` config file
passed with ``--config``; keys use the option's long name with dashes
or underscores. Explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .audio_io import FrameSpec, load_wav, truncate
from .errors import SegpoolError
from .evaluation import confusion, emit_report, present_class_ua, unweighted_accuracy, weighted_accuracy
from .features import MelConfig, extract_logmel, save_features
from .gradcheck import run_gradcheck
from .harness.crossval import CorpusOptions, cross_validate, load_examples
from .harness.folds import build_folds
from .harness.manifest import load_manifest
from .harness.synth import SynthSpec, generate_synthetic_corpus
from .training import EMOTIONS, ModelConfig, load_checkpoint, predict, save_checkpoint, train
from .vad import VadConfig, detect, speech_ratio, write_mask

POOLING = {"gap": "gap_only", "sap": "sap_only", "sr": "sr"}
VAD = {"builtin": "builtin", "external": "external", "truth": "truth"}


def read_config_file(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SegpoolError(f"{path}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = raw.strip("\"'")
    return values


def _add_vad_options(p):
    p.add_argument("--frame-ms", type=int, default=30, choices=(10, 20, 30))
    p.add_argument("--aggressiveness", type=int, default=2, choices=(0, 1, 2, 3))
    p.add_argument("--hangover", type=int, default=4)
    p.add_argument("--noise-adapt-rate", type=float, default=0.05)


def _add_feature_options(p):
    p.add_argument("--window-ms", type=int, default=25)
    p.add_argument("--stride-ms", type=int, default=20)
    p.add_argument("--n-mels", type=int, default=40)
    p.add_argument("--max-seconds", type=float, default=None)


def _add_corpus_options(p):
    p.add_argument("--manifest", required=True)
    p.add_argument("--vad", choices=sorted(VAD), default="truth")
    p.add_argument("--mask-dir", default=None)
    _add_vad_options(p)
    _add_feature_options(p)


def _add_model_options(p):
    p.add_argument("--pooling", choices=sorted(POOLING), default="sr")
    p.add_argument("--bypass-attention", action="store_true")
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--no-residual", action="store_true")
    p.add_argument("--projection-dim", type=int, default=32)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.25)
    p.add_argument("--gamma", type=float, default=0.25)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=3e-5)
    p.add_argument("--warmup-ratio", type=float, default=0.1)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segpool", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="flat key = value option file")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = sub.choices

    p = sub.add_parser("vad", help="detect speech frames in a WAV file")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True, help="mask file to write")
    _add_vad_options(p)

    p = sub.add_parser("extract", help="write log-mel features of a WAV file as SAPF")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    _add_feature_options(p)

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--speakers", type=int, default=8)
    p.add_argument("--utterances", type=int, default=40)
    p.add_argument("--speech-fraction", type=float, default=0.3)
    p.add_argument("--distractor-rms", type=float, default=0.05)

    p = sub.add_parser("train", help="train one model on a manifest")
    _add_corpus_options(p)
    _add_model_options(p)
    p.add_argument("--val-speaker", default=None, help="speaker held out for early stopping")
    p.add_argument("--exclude-speaker", action="append", default=[], help="speaker left out entirely")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a manifest")
    _add_corpus_options(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pooling", choices=sorted(POOLING), default=None, help="fail unless the checkpoint matches")
    p.add_argument("--speaker", action="append", default=[], help="restrict to these speakers")
    p.add_argument("--out", required=True)

    p = sub.add_parser("crossval", help="leave-one-speaker-out cross-validation")
    _add_corpus_options(p)
    _add_model_options(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of all backward passes")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((tok for tok in argv if tok in parser.subcommands), None)
    if known.config and command:
        try:
            values = read_config_file(known.config)
        except (OSError, SegpoolError) as exc:
            parser.error(str(exc))
        sub = parser.subcommands[command]
        actions = {a.dest: a for a in sub._actions}
        for key, raw in values.items():
            if key not in actions:
                parser.error(f"unknown key {key!r} in {known.config}")
            action = actions[key]
            if action.const is True and action.nargs == 0:
                value = raw.lower() in ("1", "true", "yes", "on")
            else:
                value = action.type(raw) if action.type else raw
            sub.set_defaults(**{key: value})
            action.required = False
    return parser.parse_args(argv)


def _corpus_options(args) -> CorpusOptions:
    return CorpusOptions(
        vad_source=VAD[args.vad], mask_dir=args.mask_dir,
        vad=VadConfig(args.frame_ms, args.aggressiveness, args.hangover, args.noise_adapt_rate),
        frames=FrameSpec(args.window_ms, args.stride_ms), mel=MelConfig(n_mels=args.n_mels),
        max_seconds=args.max_seconds)


def _model_config(args, d: int) -> ModelConfig:
    return ModelConfig(d=d, projection_dim=args.projection_dim, heads=args.heads, residual=not args.no_residual,
                       alpha=args.alpha, beta=args.beta, gamma=args.gamma, pooling_mode=POOLING[args.pooling],
                       bypass_attention=args.bypass_attention, batch_size=args.batch_size, epochs=args.epochs,
                       base_lr=args.lr, warmup_ratio=args.warmup_ratio, patience=args.patience, seed=args.seed)


def _load_corpus(args):
    records = load_manifest(args.manifest)
    examples = load_examples(records, Path(args.manifest).parent, _corpus_options(args))
    return records, examples


def cmd_vad(args) -> int:
    clip = load_wav(args.wav)
    mask = detect(clip, VadConfig(args.frame_ms, args.aggressiveness, args.hangover, args.noise_adapt_rate))
    write_mask(mask, args.out)
    print(f"{len(mask)} frames, speech ratio {speech_ratio(mask):.3f}")
    return 0


def cmd_extract(args) -> int:
    clip = load_wav(args.wav)
    if args.max_seconds is not None:
        clip = truncate(clip, args.max_seconds)
    feats = extract_logmel(clip, FrameSpec(args.window_ms, args.stride_ms), MelConfig(n_mels=args.n_mels))
    save_features(feats, args.out)
    print(f"{feats.n_frames} x {feats.dim} features written to {args.out}")
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec(n_speakers=args.speakers, utterances_per_speaker=args.utterances,
                     speech_fraction=args.speech_fraction, distractor_rms=args.distractor_rms)
    records = generate_synthetic_corpus(spec, args.seed, args.out)
    print(f"{len(records)} utterances written to {Path(args.out) / 'manifest.csv'}")
    return 0


def cmd_train(args) -> int:
    records, examples = _load_corpus(args)
    excluded = set(args.exclude_speaker)
    train_set = [ex for r, ex in zip(records, examples) if r.speaker_id not in excluded | {args.val_speaker}]
    val_set = [ex for r, ex in zip(records, examples) if r.speaker_id == args.val_speaker]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trained = train(_model_config(args, examples[0].features.shape[1]), train_set, val_set,
                    log_path=out / "train_log.jsonl")
    save_checkpoint(trained, out / "checkpoint.sapc")
    print(f"best epoch {trained.diagnostics['best_epoch']}, checkpoint at {out / 'checkpoint.sapc'}")
    return 0


def cmd_evaluate(args) -> int:
    trained = load_checkpoint(args.checkpoint, POOLING[args.pooling] if args.pooling else None)
    records, examples = _load_corpus(args)
    if args.speaker:
        examples = [ex for r, ex in zip(records, examples) if r.speaker_id in set(args.speaker)]
    pred, valence, arousal, fallbacks = predict(trained.model, examples)
    cm = confusion([ex.label for ex in examples], pred, len(EMOTIONS))
    complete = bool(np.all(cm.sum(axis=1) > 0))
    metrics = {"ua": unweighted_accuracy(cm) if complete else present_class_ua(cm),
               "ua_all_classes_present": complete, "wa": weighted_accuracy(cm),
               "mae_valence": float(np.mean(np.abs(valence - [ex.valence for ex in examples]))),
               "mae_arousal": float(np.mean(np.abs(arousal - [ex.arousal for ex in examples]))),
               "n_test": len(examples), "test_fallback_count": int(fallbacks)}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(cm, {}, out, EMOTIONS, extra={"metrics": metrics})
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_crossval(args) -> int:
    records, examples = _load_corpus(args)
    build_folds(records)
    aggregate = cross_validate(records, examples, _model_config(args, examples[0].features.shape[1]), args.out)
    for key in ("ua", "wa"):
        s = aggregate["summaries"][key]
        print(f"{key.upper()} mean {s['mean']:.4f}  95% CI ({s['ci_low']:.4f}, {s['ci_high']:.4f})")
    return 0


def cmd_gradcheck(args) -> int:
    worst = run_gradcheck(args.instances, args.seed)
    for name, err in worst.items():
        print(f"{name:14s} max relative error {err:.3e}")
    overall = max(worst.values())
    ok = overall < args.tolerance
    print(f"{'PASS' if ok else 'FAIL'}: max {overall:.3e} vs tolerance {args.tolerance:g}")
    return 0 if ok else 1


COMMANDS = {"vad": cmd_vad, "extract": cmd_extract, "synth": cmd_synth, "train": cmd_train,
            "evaluate": cmd_evaluate, "crossval": cmd_crossval, "gradcheck": cmd_gradcheck}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    args = _apply_config_file(parser, argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (SegpoolError, OSError, ValueError) as exc:
        print(f"segpool {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
