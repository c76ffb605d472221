"""Sub-band energy voice activity detection and external mask ingestion.

The built-in detector splits the signal into six bands (80-250, 250-500,
500-1000, 1000-2000, 2000-3000, 3000-4000 Hz) with cascaded biquad
band-pass filters, tracks a per-band noise floor and marks a frame as
speech when the summed, clipped per-band SNR exceeds a threshold chosen
by the aggressiveness mode. The noise floor is seeded from the first
three frames, so clips are assumed to start with non-speech.

The noise tracker only adapts a band when that band's SNR is below a
fixed gate that does not depend on the mode. Two consequences hold
exactly: a higher mode never marks more frames as speech, and scaling
up a clip after a common prefix never turns a detected frame off.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .audio_io import SUPPORTED_RATES, AudioClip
from .errors import EmptyMask, LengthMismatch, ParseError, TooShort, UnsupportedRate

BAND_EDGES_HZ = (80, 250, 500, 1000, 2000, 3000, 4000)
# summed clipped band SNR (dB) a frame must exceed, per aggressiveness mode
MODE_THRESHOLDS_DB = (9.0, 12.0, 15.0, 18.0)
BAND_SNR_CLIP_DB = 30.0
NOISE_GATE_DB = 3.0
# about -70 dBFS; floor for the noise estimate so silence never divides by zero
ENERGY_FLOOR = 1e-7
INIT_NOISE_FRAMES = 3


@dataclass(frozen=True)
class VadConfig:
    frame_ms: int = 30
    aggressiveness: int = 2
    hangover_frames: int = 4
    noise_adapt_rate: float = 0.05

    def __post_init__(self):
        if self.frame_ms not in (10, 20, 30):
            raise ValueError("frame_ms must be 10, 20 or 30")
        if not 0 <= self.aggressiveness <= 3:
            raise ValueError("aggressiveness must be in 0..3")
        if self.hangover_frames < 0:
            raise ValueError("hangover_frames must be non-negative")
        if not 0.0 < self.noise_adapt_rate < 1.0:
            raise ValueError("noise_adapt_rate must be in (0, 1)")


@dataclass(frozen=True)
class VadMask:
    decisions: np.ndarray
    frame_ms: int
    utterance_id: str = ""

    def __post_init__(self):
        bits = np.asarray(self.decisions, dtype=np.uint8)
        if bits.ndim != 1 or np.any(bits > 1):
            raise ValueError("decisions must be a 1-D sequence of 0/1")
        bits.setflags(write=False)
        object.__setattr__(self, "decisions", bits)

    def __len__(self) -> int:
        return len(self.decisions)

    @property
    def duration_ms(self) -> int:
        return len(self.decisions) * self.frame_ms


def _band_filters(sample_rate: int) -> list[np.ndarray]:
    nyquist = sample_rate / 2
    sos = []
    for lo, hi in zip(BAND_EDGES_HZ[:-1], BAND_EDGES_HZ[1:]):
        if hi >= nyquist:
            sos.append(signal.butter(2, lo, btype="highpass", output="sos", fs=sample_rate))
        else:
            sos.append(signal.butter(2, [lo, hi], btype="bandpass", output="sos", fs=sample_rate))
    return sos


def band_energies(clip: AudioClip, frame_ms: int) -> np.ndarray:
    """Mean-square energy per (frame, band) over non-overlapping frames."""
    if clip.sample_rate not in SUPPORTED_RATES:
        raise UnsupportedRate(f"sample rate {clip.sample_rate} not supported by the VAD")
    flen = frame_ms * clip.sample_rate // 1000
    n_frames = len(clip) // flen
    if n_frames == 0:
        raise TooShort(f"clip shorter than one {frame_ms} ms VAD frame")
    x = clip.samples[: n_frames * flen].astype(np.float64)
    out = np.empty((n_frames, len(BAND_EDGES_HZ) - 1))
    for b, sos in enumerate(_band_filters(clip.sample_rate)):
        y = signal.sosfilt(sos, x)
        out[:, b] = np.mean(y.reshape(n_frames, flen) ** 2, axis=1)
    return out


def frame_scores(energies: np.ndarray, adapt_rate: float) -> np.ndarray:
    """Summed clipped band SNR in dB per frame, with gated noise tracking."""
    noise = energies[:INIT_NOISE_FRAMES].mean(axis=0)
    gate = 10.0 ** (NOISE_GATE_DB / 10.0)
    scores = np.empty(len(energies))
    for t, e in enumerate(energies):
        ratio = e / np.maximum(noise, ENERGY_FLOOR)
        with np.errstate(divide="ignore"):
            snr_db = 10.0 * np.log10(ratio)
        scores[t] = np.clip(snr_db, 0.0, BAND_SNR_CLIP_DB).sum()
        quiet = ratio < gate
        noise = np.where(quiet, noise + adapt_rate * (e - noise), noise)
    return scores


def apply_hangover(raw: np.ndarray, frames: int) -> np.ndarray:
    out = raw.astype(bool).copy()
    for lag in range(1, frames + 1):
        out[lag:] |= raw[:-lag].astype(bool)
    return out.astype(np.uint8)


def detect(clip: AudioClip, config: VadConfig = VadConfig()) -> VadMask:
    energies = band_energies(clip, config.frame_ms)
    scores = frame_scores(energies, config.noise_adapt_rate)
    raw = scores > MODE_THRESHOLDS_DB[config.aggressiveness]
    return VadMask(apply_hangover(raw, config.hangover_frames), config.frame_ms, clip.id)


def expected_mask_frames(n_samples: int, sample_rate: int, frame_ms: int) -> int:
    return n_samples // (frame_ms * sample_rate // 1000)


_FRAME_MS_RE = re.compile(r"frame_ms\s*=\s*(\d+)")


def load_external_mask(path, expected_frames: int, frame_ms: int = 30,
                       utterance_id: str | None = None) -> VadMask:
    """Parse a mask file of whitespace-separated 0/1 tokens.

    Lines starting with '#' are comments; a ``frame_ms=N`` comment
    overrides the ``frame_ms`` argument.
    """
    path = Path(path)
    bits = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        stripped = line.strip()
        if stripped.startswith("#"):
            m = _FRAME_MS_RE.search(stripped)
            if m:
                frame_ms = int(m.group(1))
            continue
        for tok in stripped.split():
            if tok not in ("0", "1"):
                raise ParseError(f"{path}:{lineno}: bad mask token {tok!r}")
            bits.append(int(tok))
    if len(bits) != expected_frames:
        raise LengthMismatch(f"{path}: {len(bits)} mask frames, expected {expected_frames}")
    return VadMask(np.array(bits, dtype=np.uint8), frame_ms, path.stem if utterance_id is None else utterance_id)


def write_mask(mask: VadMask, path) -> None:
    bits = " ".join(str(int(b)) for b in mask.decisions)
    Path(path).write_text(f"# id={mask.utterance_id} frame_ms={mask.frame_ms}\n{bits}\n")


def speech_ratio(mask: VadMask) -> float:
    if len(mask) == 0:
        raise EmptyMask("mask has no frames")
    return float(np.mean(mask.decisions))
