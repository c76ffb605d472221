"""Synthetic corpus in which emotion information lives only in speech segments.

Each utterance alternates non-speech and speech segments on the 30 ms
VAD grid, starting and ending with non-speech. Speech segments are
spectrally shaped noise whose band profile depends on the emotion class,
perturbed per speaker and per utterance. Non-speech segments are quieter
noise with a band profile drawn fresh for every utterance, unrelated to
the class; averaged over the whole clip they blur the class profile.

Output layout::

    <out>/manifest.csv
    <out>/spec.json
    <out>/wav/<id>.wav
    <out>/vad_truth/<id>.vad
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..audio_io import AudioClip, write_wav
from ..errors import BadSpec
from ..training import EMOTIONS
from ..vad import VadMask, write_mask
from .manifest import UtteranceRecord, write_manifest

# geometric band centres (Hz) of the spectral envelope
BAND_CENTRES_HZ = (150.0, 260.0, 450.0, 780.0, 1350.0, 2350.0, 4050.0, 7000.0)
CLASS_PROFILES_DB = {
    "angry": (-6.0, -3.0, 0.0, 6.0, 9.0, 9.0, 6.0, 3.0),
    "happy": (-3.0, 3.0, 9.0, 6.0, 3.0, 0.0, -3.0, -6.0),
    "neutral": (3.0, 6.0, 3.0, 0.0, -3.0, -6.0, -9.0, -9.0),
    "sad": (9.0, 6.0, 0.0, -6.0, -9.0, -9.0, -12.0, -12.0),
}
# valence, arousal centres on a 1..5 annotation scale
CLASS_AFFECT = {"angry": (2.0, 4.2), "happy": (4.0, 3.6), "neutral": (3.0, 2.8), "sad": (1.8, 2.0)}
# KEMDy19 class counts (angry, happy, neutral, sad), used for the default skew
KEMDY19_COUNTS = (1530, 1313, 4328, 773)
VAD_FRAME_MS = 30


@dataclass(frozen=True)
class SynthSpec:
    n_speakers: int = 8
    utterances_per_speaker: int = 40
    n_classes: int = 4
    sample_rate: int = 16000
    duration_s: float = 1.98
    speech_fraction: float = 0.3
    speech_segments: int = 3
    speech_rms: float = 0.1
    distractor_rms: float = 0.05
    distractor_spread_db: float = 10.0
    speaker_jitter_db: float = 3.0
    utterance_jitter_db: float = 1.5
    affect_noise: float = 0.3
    class_proportions: tuple = KEMDY19_COUNTS

    def validate(self) -> None:
        if self.n_classes != 4:
            raise BadSpec("the corpus has exactly four emotion classes")
        if self.n_speakers < 1 or self.utterances_per_speaker < 2 * self.n_classes:
            raise BadSpec("need >= 1 speaker and at least two utterances per class per speaker")
        if self.sample_rate not in (8000, 16000):
            raise BadSpec("sample_rate must be 8000 or 16000")
        if not 0.0 < self.speech_fraction <= 1.0:
            raise BadSpec("speech_fraction must be in (0, 1]")
        if self.speech_segments < 1:
            raise BadSpec("need at least one speech segment")
        if len(self.class_proportions) != 4 or min(self.class_proportions) <= 0:
            raise BadSpec("class_proportions needs four positive entries")
        total = self.total_frames
        speech = self.speech_frames
        gaps = 0 if speech == total else self.speech_segments + 1
        if speech < self.speech_segments or total - speech < gaps:
            raise BadSpec("duration too short for the requested segment layout")
        if max(self.speech_rms, self.distractor_rms) >= 0.3 or min(self.speech_rms, self.distractor_rms) < 0:
            raise BadSpec("signal levels must be in [0, 0.3)")

    @property
    def total_frames(self) -> int:
        return int(round(self.duration_s * 1000 / VAD_FRAME_MS))

    @property
    def speech_frames(self) -> int:
        return int(round(self.speech_fraction * self.total_frames))


def class_counts(spec: SynthSpec) -> list[int]:
    """Per-speaker utterance count per class; at least two each, remainder to the largest class."""
    p = np.asarray(spec.class_proportions, dtype=np.float64)
    p /= p.sum()
    counts = [max(2, int(round(x * spec.utterances_per_speaker))) for x in p]
    biggest = int(np.argmax(p))
    counts[biggest] += spec.utterances_per_speaker - sum(counts)
    if counts[biggest] < 2:
        raise BadSpec("class proportions leave no room for the majority class")
    return counts


def _split(rng: np.random.Generator, total: int, parts: int, minimum: int) -> list[int]:
    """Random composition of ``total`` into ``parts`` integers each >= ``minimum``."""
    spare = total - parts * minimum
    cuts = np.sort(rng.integers(0, spare + 1, size=parts - 1))
    sizes = np.diff(np.concatenate([[0], cuts, [spare]]))
    return [int(s) + minimum for s in sizes]


def layout(rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    """Per-VAD-frame truth bits: gap, speech, gap, ..., speech, gap."""
    total, speech = spec.total_frames, spec.speech_frames
    if speech == total:
        return np.ones(total, dtype=np.uint8)
    seg = _split(rng, speech, spec.speech_segments, 1)
    gaps = _split(rng, total - speech, spec.speech_segments + 1, 1)
    bits = []
    for i, s in enumerate(seg):
        bits += [0] * gaps[i] + [1] * s
    bits += [0] * gaps[-1]
    return np.array(bits, dtype=np.uint8)


def shaped_noise(rng: np.random.Generator, n: int, sample_rate: int, profile_db, rms: float) -> np.ndarray:
    if rms == 0.0:
        return np.zeros(n)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    log_f = np.log(np.maximum(freqs, 1.0))
    env_db = np.interp(log_f, np.log(BAND_CENTRES_HZ), profile_db)
    env_db[(freqs < 80.0) | (freqs > 0.95 * sample_rate / 2)] = -60.0
    spectrum = np.fft.rfft(rng.standard_normal(n)) * 10.0 ** (env_db / 20.0)
    y = np.fft.irfft(spectrum, n=n)
    return y * (rms / np.sqrt(np.mean(y ** 2)))


def synthesize_utterance(rng: np.random.Generator, spec: SynthSpec, speech_profile_db, bits: np.ndarray) -> np.ndarray:
    flen = VAD_FRAME_MS * spec.sample_rate // 1000
    n_bands = len(BAND_CENTRES_HZ)
    distractor_profile = rng.normal(0.0, spec.distractor_spread_db, n_bands)
    out = np.zeros(len(bits) * flen)
    edges = np.flatnonzero(np.diff(np.concatenate([[-1], bits, [-1]])) != 0)
    for start, stop in zip(edges[:-1], edges[1:]):
        n = (stop - start) * flen
        if bits[start]:
            out[start * flen:stop * flen] = shaped_noise(rng, n, spec.sample_rate, speech_profile_db, spec.speech_rms)
        else:
            out[start * flen:stop * flen] = shaped_noise(rng, n, spec.sample_rate, distractor_profile,
                                                         spec.distractor_rms)
    return np.clip(out, -1.0, 32767 / 32768)


def generate_synthetic_corpus(spec: SynthSpec, seed: int, out_dir) -> list[UtteranceRecord]:
    """Write the corpus under ``out_dir`` and return its manifest records. Same spec and seed give identical bytes."""
    spec.validate()
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    (out / "vad_truth").mkdir(exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    counts = class_counts(spec)
    n_bands = len(BAND_CENTRES_HZ)
    records = []
    for s in range(spec.n_speakers):
        speaker = f"spk{s:02d}"
        speaker_offset = rng.normal(0.0, spec.speaker_jitter_db, n_bands)
        labels = [c for c, k in enumerate(counts) for _ in range(k)]
        labels = [labels[i] for i in rng.permutation(len(labels))]
        for u, c in enumerate(labels):
            emotion = EMOTIONS[c]
            uid = f"{speaker}_u{u:03d}"
            profile = (np.asarray(CLASS_PROFILES_DB[emotion]) + speaker_offset
                       + rng.normal(0.0, spec.utterance_jitter_db, n_bands))
            bits = layout(rng, spec)
            samples = synthesize_utterance(rng, spec, profile, bits)
            clip = AudioClip(samples.astype(np.float32), spec.sample_rate, uid)
            write_wav(clip, out / "wav" / f"{uid}.wav")
            write_mask(VadMask(bits, VAD_FRAME_MS, uid), out / "vad_truth" / f"{uid}.vad")
            v0, a0 = CLASS_AFFECT[emotion]
            valence = float(np.clip(v0 + rng.normal(0.0, spec.affect_noise), 1.0, 5.0))
            arousal = float(np.clip(a0 + rng.normal(0.0, spec.affect_noise), 1.0, 5.0))
            records.append(UtteranceRecord(
                uid, f"wav/{uid}.wav", "", speaker, f"ses{s // 2:02d}", emotion,
                round(valence, 4), round(arousal, 4), 1.0, 5.0, 1.0, 5.0, round(len(samples) / spec.sample_rate, 4)))
    write_manifest(records, out / "manifest.csv")
    spec_dict = asdict(spec)
    spec_dict["class_proportions"] = list(spec.class_proportions)
    (out / "spec.json").write_text(json.dumps({"seed": seed, **spec_dict}, indent=2, sort_keys=True) + "\n")
    return records
