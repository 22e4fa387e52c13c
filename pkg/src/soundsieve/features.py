"""Log mel-energy features for the dense and convolutional autoencoders.

Two layouts are produced from the same mel filter bank:

* dense vectors: 1 s buffers (50 % overlap) are framed, and 5 consecutive
  frames of 128 log-energies are concatenated into a 640-wide row;
* conv patches: the whole-clip spectrogram is standardized per mel bin and
  cut into 128 x 32 patches every 3 frames.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from .audio_io import CANONICAL_RATE, AudioClip
from .errors import ClipTooShort, InsufficientData

ENERGY_FLOOR = 1e-10
STD_FLOOR = 1e-8

BUFFER_LEN = CANONICAL_RATE
BUFFER_HOP = CANONICAL_RATE // 2
CONTEXT = 5
PATCH_FRAMES = 32
PATCH_HOP = 3


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class FrameSpec:
    frame_len: int = 1024
    hop: int = 512
    fft_size: int = 1024

    def __post_init__(self):
        if self.hop * 2 != self.frame_len:
            raise ValueError("hop must be half the frame length")
        if self.fft_size < self.frame_len:
            raise ValueError("fft_size must cover the frame")

    @property
    def window(self) -> np.ndarray:
        return get_window("hann", self.frame_len)

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_len:
            return 0
        return (n_samples - self.frame_len) // self.hop + 1


@dataclass(frozen=True)
class MelBank:
    weights: np.ndarray
    centers_hz: np.ndarray
    f_min_hz: float
    f_max_hz: float

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def build(cls, n_mels=128, fft_size=1024, sample_rate=CANONICAL_RATE,
              f_min_hz=0.0, f_max_hz=8000.0) -> "MelBank":
        """Triangular HTK-mel filters, each rescaled so its largest weight is 1."""
        edges = mel_to_hz(np.linspace(hz_to_mel(f_min_hz), hz_to_mel(f_max_hz), n_mels + 2))
        bins = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
        lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
        rise = (bins - lo) / (mid - lo)
        fall = (hi - bins) / (hi - mid)
        weights = np.maximum(0.0, np.minimum(rise, fall))
        peak = weights.max(axis=1, keepdims=True)
        if np.any(peak == 0):
            raise ValueError("mel bank too fine for the FFT resolution: empty filter")
        weights = weights / peak
        return cls(weights, edges[1:-1].copy(), f_min_hz, f_max_hz)


_DEFAULT_BANK = None


def default_bank() -> MelBank:
    global _DEFAULT_BANK
    if _DEFAULT_BANK is None:
        _DEFAULT_BANK = MelBank.build()
    return _DEFAULT_BANK


@dataclass
class MelSpectrogram:
    values: np.ndarray  # (n_frames, n_mels), natural-log energies
    source: str = ""

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass
class NormalizerStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


class FeatureKind(str, Enum):
    DENSE = "dense"
    CONV = "conv"


@dataclass
class FeatureSet:
    kind: FeatureKind
    data: np.ndarray  # (B, 640) for DENSE, (B, 1, 128, 32) for CONV
    file_index: np.ndarray = field(default=None)

    def __post_init__(self):
        self.kind = FeatureKind(self.kind)
        expected_ndim = 2 if self.kind is FeatureKind.DENSE else 4
        if self.data.ndim != expected_ndim:
            raise ValueError(f"{self.kind.value} features need {expected_ndim}-d data, got {self.data.shape}")
        if self.file_index is None:
            self.file_index = np.zeros(len(self.data), dtype=np.int64)
        self.file_index = np.asarray(self.file_index)
        if len(self.file_index) != len(self.data):
            raise ValueError("file_index length must equal batch size")

    @property
    def dense(self):
        return self.data if self.kind is FeatureKind.DENSE else None

    @property
    def patches(self):
        return self.data if self.kind is FeatureKind.CONV else None

    def __len__(self):
        return len(self.data)

    @classmethod
    def concat(cls, sets: Sequence["FeatureSet"]) -> "FeatureSet":
        kinds = {s.kind for s in sets}
        if len(kinds) != 1:
            raise ValueError(f"cannot mix feature kinds {sorted(k.value for k in kinds)}")
        return cls(kinds.pop(),
                   np.concatenate([s.data for s in sets]),
                   np.concatenate([s.file_index for s in sets]))


def _frames(samples: np.ndarray, spec: FrameSpec) -> np.ndarray:
    return sliding_window_view(samples, spec.frame_len)[:: spec.hop]


def stft_log_mel(clip: AudioClip, spec: FrameSpec | None = None,
                 bank: MelBank | None = None) -> MelSpectrogram:
    spec = spec or FrameSpec()
    bank = bank or default_bank()
    samples = np.asarray(clip.samples, dtype=np.float64)
    if len(samples) < spec.frame_len:
        raise ClipTooShort(f"{clip.source_path or 'clip'}: {len(samples)} samples < frame length {spec.frame_len}")
    frames = _frames(samples, spec) * spec.window
    power = np.abs(np.fft.rfft(frames, n=spec.fft_size, axis=1)) ** 2
    energy = power @ bank.weights.T
    return MelSpectrogram(np.log(np.maximum(energy, ENERGY_FLOOR)), clip.source_path)


def context_windows(frames: np.ndarray, width: int = CONTEXT) -> np.ndarray:
    """Stack ``width`` consecutive frames into rows, stride one frame."""
    n, d = frames.shape
    win = sliding_window_view(frames, width, axis=0)  # (n-width+1, d, width)
    return win.transpose(0, 2, 1).reshape(n - width + 1, width * d)


def dense_feature_vectors(clip: AudioClip, file_id=0, spec: FrameSpec | None = None,
                          bank: MelBank | None = None) -> FeatureSet:
    spec = spec or FrameSpec()
    bank = bank or default_bank()
    samples = np.asarray(clip.samples, dtype=np.float64)
    if len(samples) < BUFFER_LEN:
        raise ClipTooShort(f"{clip.source_path or 'clip'}: dense features need at least 1 s of audio")
    rows = []
    for start in range(0, len(samples) - BUFFER_LEN + 1, BUFFER_HOP):
        buf = AudioClip(samples[start:start + BUFFER_LEN], clip.sample_rate_hz, clip.source_path)
        rows.append(context_windows(stft_log_mel(buf, spec, bank).values))
    data = np.concatenate(rows).astype(np.float32)
    return FeatureSet(FeatureKind.DENSE, data, np.full(len(data), file_id))


def patches_from_spectrogram(values: np.ndarray, stats: NormalizerStats | None = None,
                             file_id=0) -> FeatureSet:
    if len(values) < PATCH_FRAMES:
        raise ClipTooShort(f"need {PATCH_FRAMES} frames for one patch, got {len(values)}")
    if stats is not None:
        values = stats.apply(values)
    win = sliding_window_view(values, PATCH_FRAMES, axis=0)[::PATCH_HOP]  # (P, mels, 32)
    data = np.ascontiguousarray(win[:, None], dtype=np.float32)
    return FeatureSet(FeatureKind.CONV, data, np.full(len(data), file_id))


def conv_patches(clip: AudioClip, stats: NormalizerStats | None = None, file_id=0,
                 spec: FrameSpec | None = None, bank: MelBank | None = None) -> FeatureSet:
    spec = spec or FrameSpec()
    if spec.n_frames(len(clip.samples)) < PATCH_FRAMES:
        raise ClipTooShort(f"{clip.source_path or 'clip'}: too short for a {PATCH_FRAMES}-frame patch")
    return patches_from_spectrogram(stft_log_mel(clip, spec, bank).values, stats, file_id)


def fit_normalizer(spectrograms: Iterable) -> NormalizerStats:
    """Per-bin population mean/std over every frame of every spectrogram.

    Columns are sorted before summation so the result does not depend on the
    order the spectrograms arrive in.
    """
    blocks = [s.values if isinstance(s, MelSpectrogram) else np.asarray(s) for s in spectrograms]
    if not blocks or sum(len(b) for b in blocks) < 2:
        raise InsufficientData("normalizer needs at least 2 frames")
    x = np.sort(np.concatenate(blocks).astype(np.float64), axis=0)
    n = len(x)
    mean = x.sum(axis=0) / n
    dev = np.sort((x - mean) ** 2, axis=0)
    std = np.sqrt(dev.sum(axis=0) / n)
    return NormalizerStats(mean, np.maximum(std, STD_FLOOR))


# -- feature cache -------------------------------------------------------
# layout: b"SSFC", u32 kind code, u32 rank, rank x u32 dims, float32 LE payload

_CACHE_MAGIC = b"SSFC"
_KIND_CODES = {"dense": 0, "conv": 1, "mel": 2}


def save_feature_cache(path, kind: str, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype="<f4")
    header = _CACHE_MAGIC + struct.pack("<II", _KIND_CODES[kind], array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes())


def load_feature_cache(path):
    """Return ``(kind, array)`` from a cache file."""
    buf = Path(path).read_bytes()
    if buf[:4] != _CACHE_MAGIC:
        raise ValueError(f"{path}: not a feature cache file")
    code, rank = struct.unpack_from("<II", buf, 4)
    shape = struct.unpack_from(f"<{rank}I", buf, 12)
    offset = 12 + 4 * rank
    kind = {v: k for k, v in _KIND_CODES.items()}[code]
    array = np.frombuffer(buf, dtype="<f4", offset=offset).reshape(shape)
    return kind, array.astype(np.float32)
