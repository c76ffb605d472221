"""Corpus manifests, speaker folds, the synthetic corpus and cross-validation runs."""

from .crossval import cross_validate, load_examples, run_cross_validation
from .folds import FoldPlan, Run, build_folds
from .manifest import UtteranceRecord, load_manifest, write_manifest
from .synth import SynthSpec, generate_synthetic_corpus

__all__ = [
    "FoldPlan", "Run", "SynthSpec", "UtteranceRecord", "build_folds", "cross_validate",
    "generate_synthetic_corpus", "load_examples", "load_manifest", "run_cross_validation", "write_manifest",
]
