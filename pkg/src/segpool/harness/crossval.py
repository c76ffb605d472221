"""Leave-one-speaker-out cross-validation over a manifest."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..audio_io import FrameSpec, load_wav, truncate
from ..evaluation import (confusion, emit_report, fold_summary, present_class_ua, unweighted_accuracy,
                          weighted_accuracy)
from ..features import MelConfig, extract_logmel, load_features
from ..pooling import align_mask
from ..training import EMOTIONS, Example, ModelConfig, predict, save_checkpoint, train
from ..vad import VadConfig, detect, expected_mask_frames, load_external_mask
from .folds import build_folds
from .manifest import UtteranceRecord, load_manifest

log = logging.getLogger(__name__)

VAD_SOURCES = ("builtin", "external", "truth")


@dataclass
class CorpusOptions:
    vad_source: str = "truth"
    mask_dir: str | None = None
    vad: VadConfig = VadConfig()
    frames: FrameSpec = FrameSpec()
    mel: MelConfig = MelConfig()
    max_seconds: float | None = None


def _mask_for(record: UtteranceRecord, clip, base: Path, opts: CorpusOptions):
    if opts.vad_source == "builtin":
        return detect(clip, opts.vad)
    if opts.vad_source == "truth":
        path = base / "vad_truth" / f"{record.id}.vad"
    else:
        if opts.mask_dir is None:
            raise ValueError("external VAD masks need a mask directory")
        path = Path(opts.mask_dir) / f"{record.id}.vad"
    expected = expected_mask_frames(len(clip), clip.sample_rate, opts.vad.frame_ms)
    return load_external_mask(path, expected, opts.vad.frame_ms, record.id)


def load_examples(records: list[UtteranceRecord], base_dir, opts: CorpusOptions = CorpusOptions()) -> list[Example]:
    """Load audio or precomputed features for every record and align its VAD mask to the feature frames."""
    if opts.vad_source not in VAD_SOURCES:
        raise ValueError(f"vad_source must be one of {VAD_SOURCES}")
    base = Path(base_dir)
    examples = []
    for r in records:
        clip = load_wav(base / r.audio_path, r.id)
        if opts.max_seconds is not None:
            clip = truncate(clip, opts.max_seconds)
        if r.feature_path:
            feats = load_features(base / r.feature_path, r.id)
            limit = opts.frames.frame_count(len(clip), clip.sample_rate)
            if feats.n_frames > limit:
                feats = dataclasses.replace(feats, values=feats.values[:limit])
        else:
            feats = extract_logmel(clip, opts.frames, opts.mel)
        keep = align_mask(_mask_for(r, clip, base, opts), feats)
        examples.append(Example(np.array(feats.values), keep, r.label_index,
                                r.scaled_valence(), r.scaled_arousal(), r.id))
    return examples


def _fold_metrics(examples: list[Example], trained) -> tuple[dict, np.ndarray]:
    labels = np.array([ex.label for ex in examples])
    pred, valence, arousal, fallbacks = predict(trained.model, examples)
    cm = confusion(labels, pred, len(EMOTIONS))
    complete = bool(np.all(cm.sum(axis=1) > 0))
    metrics = {
        "ua": unweighted_accuracy(cm) if complete else present_class_ua(cm),
        "ua_all_classes_present": complete,
        "wa": weighted_accuracy(cm),
        "mae_valence": float(np.mean(np.abs(valence - [ex.valence for ex in examples]))),
        "mae_arousal": float(np.mean(np.abs(arousal - [ex.arousal for ex in examples]))),
        "n_test": len(examples),
        "test_fallback_count": int(fallbacks),
    }
    return metrics, cm


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cross_validate(records: list[UtteranceRecord], examples: list[Example], config: ModelConfig, out_dir) -> dict:
    """Train and test once per speaker; write per-run directories and ``aggregate.json``.

    A ``status.json`` in ``out_dir`` lists finished runs, so a failure
    part-way keeps the completed reports.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = examples[0].features.shape[1]
    config = dataclasses.replace(config, d=d)
    plan = build_folds(records)
    by_speaker: dict[str, list[int]] = {}
    for i, r in enumerate(records):
        by_speaker.setdefault(r.speaker_id, []).append(i)

    def pick(fold_indices) -> list[Example]:
        return [examples[i] for s in plan.speakers(fold_indices) for i in by_speaker[s]]

    status = {"completed": [], "failed": None, "n_runs": len(plan.runs)}
    per_fold = []
    pooled = np.zeros((len(EMOTIONS), len(EMOTIONS)), dtype=np.int64)
    for run in plan.runs:
        speaker = plan.folds[run.test][0]
        run_dir = out / f"run_{speaker}"
        run_dir.mkdir(exist_ok=True)
        try:
            train_set = sorted(pick(run.train), key=lambda ex: ex.id)
            val_set = sorted(pick([run.val]), key=lambda ex: ex.id)
            test_set = sorted(pick([run.test]), key=lambda ex: ex.id)
            trained = train(config, train_set, val_set, log_path=run_dir / "train_log.jsonl")
            save_checkpoint(trained, run_dir / "checkpoint.sapc")
            metrics, cm = _fold_metrics(test_set, trained)
        except Exception as exc:
            status["failed"] = {"run": speaker, "error": f"{type(exc).__name__}: {exc}"}
            _write_json(out / "status.json", status)
            raise
        metrics.update(test_speaker=speaker, val_speaker=plan.folds[run.val][0],
                       train_fallback_count=trained.diagnostics["fallback_count"],
                       best_epoch=trained.diagnostics["best_epoch"], epochs_run=trained.diagnostics["epochs_run"])
        emit_report(cm, {}, run_dir, EMOTIONS, extra={"metrics": metrics})
        per_fold.append(metrics)
        pooled += cm
        status["completed"].append(speaker)
        _write_json(out / "status.json", status)
        log.info("run %s: UA %.4f WA %.4f", speaker, metrics["ua"], metrics["wa"])

    corpus_fallbacks = sum(not ex.keep.any() for ex in examples) if config.uses_sap else 0
    aggregate = aggregate_reports(per_fold, pooled, config, corpus_fallbacks)
    _write_json(out / "aggregate.json", aggregate)
    emit_report(pooled, {k: fold_summary([m[k] for m in per_fold]) for k in ("ua", "wa")}, out, EMOTIONS)
    return aggregate


def aggregate_reports(per_fold: list[dict], pooled: np.ndarray, config: ModelConfig,
                      corpus_fallbacks: int = 0) -> dict:
    """Fold summaries are a pure function of the per-fold metrics."""
    summaries = {k: fold_summary([m[k] for m in per_fold]).as_dict()
                 for k in ("ua", "wa", "mae_valence", "mae_arousal")}
    return {
        "pooling_mode": config.pooling_mode,
        "config": config.to_dict(),
        "labels": list(EMOTIONS),
        "per_fold": per_fold,
        "summaries": summaries,
        "pooled_confusion": pooled.tolist(),
        "corpus_fallback_count": int(corpus_fallbacks),
        "test_fallback_count": int(sum(m["test_fallback_count"] for m in per_fold)),
    }


def run_cross_validation(manifest, config: ModelConfig, vad_source: str, out_dir,
                         opts: CorpusOptions | None = None) -> dict:
    opts = dataclasses.replace(opts or CorpusOptions(), vad_source=vad_source)
    records = load_manifest(manifest)
    examples = load_examples(records, Path(manifest).parent, opts)
    return cross_validate(records, examples, config, out_dir)
