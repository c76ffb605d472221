"""Global and segmental average pooling of frame features.

``gap`` averages every frame. ``sap`` keeps only frames the VAD marked
as speech, runs self-attention over them and averages the result.
``speech_representation`` concatenates the two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMatrix, ShapeMismatch, TimelineMismatch
from .features import FeatureMatrix
from .neural import MultiHeadSelfAttention
from .vad import VadMask


def _values(features) -> np.ndarray:
    values = features.values if isinstance(features, FeatureMatrix) else np.asarray(features)
    if values.ndim != 2:
        raise ShapeMismatch(f"expected a T x d matrix, got shape {values.shape}")
    if values.shape[0] == 0:
        raise EmptyMatrix("feature matrix has no frames")
    return values


def gap(features) -> np.ndarray:
    return _values(features).mean(axis=0)


def align_mask(mask: VadMask, features: FeatureMatrix) -> np.ndarray:
    """Map VAD decisions onto the feature frame grid.

    Feature frame i covers [i * stride, i * stride + window) ms and is
    kept when at least half of its overlap with the VAD timeline is
    speech. Frames past the end of the mask count as not overlapped; a
    mask more than one VAD frame shorter than the features is an error.
    """
    n, w, s = features.n_frames, features.window_ms, features.stride_ms
    f = mask.frame_ms
    covered_end = len(mask) * f
    feature_end = (n - 1) * s + w
    if covered_end < feature_end - f:
        raise TimelineMismatch(
            f"VAD mask covers {covered_end} ms but features span {feature_end} ms")

    bits = mask.decisions.astype(np.int64)
    prefix = np.concatenate([[0], np.cumsum(bits)])
    padded = np.concatenate([bits, [0]])

    def speech_ms_before(t: np.ndarray) -> np.ndarray:
        t = np.minimum(t, covered_end)
        j = t // f
        return prefix[j] * f + padded[j] * (t - j * f)

    start = np.arange(n, dtype=np.int64) * s
    end = start + w
    speech = speech_ms_before(end) - speech_ms_before(start)
    overlap = np.minimum(end, covered_end) - np.minimum(start, covered_end)
    return (overlap > 0) & (2 * speech >= overlap)


def gather_speech(features, keep) -> np.ndarray:
    values = features.values if isinstance(features, FeatureMatrix) else np.asarray(features)
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (values.shape[0],):
        raise ShapeMismatch(f"mask of length {keep.shape} for {values.shape[0]} frames")
    return values[keep]


@dataclass(frozen=True)
class SapResult:
    vector: np.ndarray
    fallback: bool
    n_speech: int


def effective_keep(keep: np.ndarray) -> tuple[np.ndarray, bool]:
    """Replace an all-zero mask by all ones; second value flags the fallback."""
    keep = np.asarray(keep, dtype=bool)
    if keep.any():
        return keep, False
    return np.ones_like(keep), True


def sap(features, keep, attn: MultiHeadSelfAttention | None = None, bypass: bool = False) -> SapResult:
    values = _values(features)
    keep, fallback = effective_keep(keep)
    speech = gather_speech(values, keep)
    if not bypass:
        if attn is None:
            raise ValueError("an attention block is required unless bypass is set")
        speech = attn.forward(speech)
    return SapResult(speech.mean(axis=0), fallback, int(keep.sum()))


@dataclass(frozen=True)
class SpeechRepresentation:
    vector: np.ndarray
    fallback: bool

    @property
    def gap_half(self) -> np.ndarray:
        return self.vector[: self.vector.size // 2]

    @property
    def sap_half(self) -> np.ndarray:
        return self.vector[self.vector.size // 2:]


def speech_representation(features, keep, attn: MultiHeadSelfAttention | None = None,
                          bypass: bool = False) -> SpeechRepresentation:
    pooled = sap(features, keep, attn, bypass)
    vector = np.concatenate([gap(features), pooled.vector])
    if not np.all(np.isfinite(vector)):
        raise FloatingPointError("speech representation is not finite")
    return SpeechRepresentation(vector, pooled.fallback)
