"""Loading, truncating and framing of mono PCM16 audio."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptHeader, EmptyAudio, TooShort, UnsupportedFormat, UnsupportedRate

SUPPORTED_RATES = (8000, 16000)
PCM16_SCALE = 32768.0


@dataclass(frozen=True)
class AudioClip:
    """A mono utterance: float32 samples in [-1, 1] plus its sample rate."""

    samples: np.ndarray
    sample_rate: int
    id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise UnsupportedFormat("audio must be a 1-D mono signal")
        if self.sample_rate not in SUPPORTED_RATES:
            raise UnsupportedRate(f"sample rate {self.sample_rate} not in {SUPPORTED_RATES}")
        if not np.all(np.isfinite(samples)) or np.any(np.abs(samples) > 1.0):
            raise ValueError("samples must be finite and within [-1, 1]")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrameSpec:
    window_ms: int = 25
    stride_ms: int = 20

    def __post_init__(self):
        if self.window_ms <= 0 or self.stride_ms <= 0:
            raise ValueError("window and stride must be positive")
        if self.stride_ms > self.window_ms:
            raise ValueError("stride must not exceed the window")

    def window_samples(self, sample_rate: int) -> int:
        return self.window_ms * sample_rate // 1000

    def stride_samples(self, sample_rate: int) -> int:
        return self.stride_ms * sample_rate // 1000

    def frame_count(self, n_samples: int, sample_rate: int) -> int:
        win = self.window_samples(sample_rate)
        if n_samples < win:
            return 0
        return (n_samples - win) // self.stride_samples(sample_rate) + 1


def load_wav(path, id: str | None = None) -> AudioClip:
    """Read a RIFF/WAVE PCM16 mono file.

    Samples are normalized by 32768, so -32768 maps to -1.0 exactly and
    +32767 to just below 1.0. The clip id defaults to the file stem.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedFormat(f"{path}: {msg}") from exc
        raise CorruptHeader(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise CorruptHeader(f"{path}: truncated header") from exc

    if channels != 1 or width != 2:
        raise UnsupportedFormat(f"{path}: need PCM16 mono, got {channels} ch x {8 * width} bit")
    if len(raw) != n_frames * 2:
        raise CorruptHeader(f"{path}: header declares {n_frames} samples, payload has {len(raw) // 2}")
    if n_frames == 0:
        raise EmptyAudio(f"{path}: no samples")
    pcm = np.frombuffer(raw, dtype="<i2")
    samples = pcm.astype(np.float32) / np.float32(PCM16_SCALE)
    return AudioClip(samples, rate, path.stem if id is None else id)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    scaled = np.round(np.asarray(samples, dtype=np.float64) * PCM16_SCALE)
    return np.clip(scaled, -32768, 32767).astype("<i2")


def write_wav(clip: AudioClip, path) -> None:
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(to_pcm16(clip.samples).tobytes())


def truncate(clip: AudioClip, max_seconds: float) -> AudioClip:
    """Keep the head of the clip, at most ``max_seconds`` long."""
    if max_seconds <= 0:
        raise ValueError("max_seconds must be positive")
    limit = int(round(max_seconds * clip.sample_rate))
    if len(clip) <= limit:
        return clip
    return AudioClip(clip.samples[:limit], clip.sample_rate, clip.id)


def frame_signal(clip: AudioClip, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """Return a read-only (T, window) view; frame i starts at i * stride."""
    win = spec.window_samples(clip.sample_rate)
    hop = spec.stride_samples(clip.sample_rate)
    n = spec.frame_count(len(clip), clip.sample_rate)
    if n == 0:
        raise TooShort(f"clip of {len(clip)} samples is shorter than one {spec.window_ms} ms window")
    windows = np.lib.stride_tricks.sliding_window_view(clip.samples, win)
    return windows[::hop][:n]
