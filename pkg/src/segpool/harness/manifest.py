"""Manifest CSV reading and writing.

Header::

    id,audio_path,feature_path,speaker_id,session_id,label,valence,arousal,
    valence_min,valence_max,arousal_min,arousal_max,duration_s

Paths are resolved relative to the manifest's directory. An empty
``feature_path`` means features are extracted from the audio.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from ..errors import MissingColumn, ParseError, UnknownLabel
from ..training import EMOTIONS

COLUMNS = ("id", "audio_path", "feature_path", "speaker_id", "session_id", "label", "valence", "arousal",
           "valence_min", "valence_max", "arousal_min", "arousal_max", "duration_s")
LABEL_MERGES = {"excited": "happy"}


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    audio_path: str
    feature_path: str
    speaker_id: str
    session_id: str
    label: str
    valence: float
    arousal: float
    valence_min: float
    valence_max: float
    arousal_min: float
    arousal_max: float
    duration_s: float

    @property
    def label_index(self) -> int:
        return EMOTIONS.index(self.label)

    def scaled_valence(self) -> float:
        return (self.valence - self.valence_min) / (self.valence_max - self.valence_min)

    def scaled_arousal(self) -> float:
        return (self.arousal - self.arousal_min) / (self.arousal_max - self.arousal_min)


_FLOAT_FIELDS = ("valence", "arousal", "valence_min", "valence_max", "arousal_min", "arousal_max", "duration_s")


def _parse_row(row: dict, lineno: int, path) -> UtteranceRecord:
    label = row["label"].strip().lower()
    label = LABEL_MERGES.get(label, label)
    if label not in EMOTIONS:
        raise UnknownLabel(f"{path}:{lineno}: label {row['label']!r} not in {EMOTIONS}")
    values = {}
    for name in _FLOAT_FIELDS:
        try:
            values[name] = float(row[name])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: {name}={row[name]!r} is not a number") from exc
    for dim in ("valence", "arousal"):
        lo, hi = values[f"{dim}_min"], values[f"{dim}_max"]
        if not lo < hi:
            raise ParseError(f"{path}:{lineno}: {dim} range [{lo}, {hi}] is empty")
        if not lo <= values[dim] <= hi:
            raise ParseError(f"{path}:{lineno}: {dim} {values[dim]} outside [{lo}, {hi}]")
    for key in ("id", "speaker_id"):
        if not row[key].strip():
            raise ParseError(f"{path}:{lineno}: empty {key}")
    return UtteranceRecord(row["id"].strip(), (row["audio_path"] or "").strip(), (row["feature_path"] or "").strip(),
                           row["speaker_id"].strip(), (row["session_id"] or "").strip(), label, **values)


def load_manifest(path) -> list[UtteranceRecord]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty manifest")
        missing = [c for c in COLUMNS if c not in reader.fieldnames]
        if missing:
            raise MissingColumn(f"{path}: missing columns {missing}")
        records = [_parse_row(row, lineno, path) for lineno, row in enumerate(reader, 2)]
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ParseError(f"{path}: duplicate utterance ids")
    return records


def _fmt(v: float) -> str:
    return repr(float(v))


def write_manifest(records: list[UtteranceRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in records:
            writer.writerow([r.id, r.audio_path, r.feature_path, r.speaker_id, r.session_id, r.label,
                             *(_fmt(getattr(r, f)) for f in _FLOAT_FIELDS)])
