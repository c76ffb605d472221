"""Frame-level feature matrices: log-mel extraction and the SAPF file format.

SAPF layout (little-endian)::

    offset  size  field
    0       4     magic b"SAPF"
    4       4     version (u32, = 1)
    8       4     rows (u32)
    12      4     cols (u32)
    16      2     window_ms (u16)
    18      2     stride_ms (u16)
    20      4     reserved (u32, = 0)
    24      ...   rows * cols float32, row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, FrameSpec, frame_signal
from .errors import BadMagic, NonFiniteEntry, TruncatedPayload, VersionUnsupported

SAPF_MAGIC = b"SAPF"
SAPF_VERSION = 1
_HEADER = struct.Struct("<4sIIIHHI")


@dataclass(frozen=True)
class FeatureMatrix:
    """T x d frame features; row i is the feature of frame i."""

    values: np.ndarray
    window_ms: int = 25
    stride_ms: int = 20
    utterance_id: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"feature matrix must be T x d with T, d >= 1, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteEntry("feature matrix contains non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def frame_spec(self) -> FrameSpec:
        return FrameSpec(self.window_ms, self.stride_ms)


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 40
    fft_size: int = 512
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-10


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, fft_size: int, sample_rate: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular HTK-mel filters as an (n_mels, fft_size // 2 + 1) matrix."""
    if not 0 <= fmin < fmax <= sample_rate / 2:
        raise ValueError("need 0 <= fmin < fmax <= sample_rate / 2")
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    bin_hz = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz - lo) / (mid - lo)
    falling = (hi - bin_hz) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def extract_logmel(clip: AudioClip, spec: FrameSpec = FrameSpec(), cfg: MelConfig = MelConfig()) -> FeatureMatrix:
    frames = frame_signal(clip, spec).astype(np.float64)
    win = frames.shape[1]
    if cfg.fft_size < win:
        raise ValueError(f"fft_size {cfg.fft_size} shorter than the {win}-sample window")
    fmax = clip.sample_rate / 2 if cfg.fmax is None else cfg.fmax
    fb = mel_filterbank(cfg.n_mels, cfg.fft_size, clip.sample_rate, cfg.fmin, fmax)
    spectrum = np.fft.rfft(frames * np.hanning(win), n=cfg.fft_size, axis=1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    logmel = np.log(power @ fb.T + cfg.log_floor)
    return FeatureMatrix(logmel.astype(np.float32), spec.window_ms, spec.stride_ms, clip.id)


def save_features(m: FeatureMatrix, path) -> None:
    rows, cols = m.values.shape
    header = _HEADER.pack(SAPF_MAGIC, SAPF_VERSION, rows, cols, m.window_ms, m.stride_ms, 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(m.values.astype("<f4").tobytes())


def load_features(path, utterance_id: str | None = None) -> FeatureMatrix:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedPayload(f"{path}: {len(data)} bytes is shorter than the SAPF header")
    magic, version, rows, cols, window_ms, stride_ms, _ = _HEADER.unpack_from(data)
    if magic != SAPF_MAGIC:
        raise BadMagic(f"{path}: magic {magic!r}")
    if version != SAPF_VERSION:
        raise VersionUnsupported(f"{path}: SAPF version {version}")
    need = rows * cols * 4
    payload = data[_HEADER.size:]
    if len(payload) < need:
        raise TruncatedPayload(f"{path}: header wants {need} payload bytes, found {len(payload)}")
    values = np.frombuffer(payload, dtype="<f4", count=rows * cols).reshape(rows, cols)
    if not np.all(np.isfinite(values)):
        raise NonFiniteEntry(f"{path}: payload contains NaN or inf")
    return FeatureMatrix(values, window_ms, stride_ms, path.stem if utterance_id is None else utterance_id)
