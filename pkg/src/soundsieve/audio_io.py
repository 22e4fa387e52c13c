"""RIFF/WAV decoding into mono floating-point clips."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyData, MalformedRiff, UnsupportedEncoding

CANONICAL_RATE = 16000

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int
    source_path: str = ""

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def __len__(self):
        return len(self.samples)


@dataclass
class _Format:
    code: int
    channels: int
    rate: int
    bits: int


def _iter_chunks(buf: bytes):
    pos = 12
    while pos < len(buf):
        if pos + 8 > len(buf):
            raise MalformedRiff(f"truncated chunk header at byte {pos}")
        cid, size = struct.unpack_from("<4sI", buf, pos)
        body = pos + 8
        if body + size > len(buf):
            raise MalformedRiff(f"chunk {cid!r} declares {size} bytes, {len(buf) - body} available")
        yield cid, buf[body:body + size]
        # chunks are word aligned
        pos = body + size + (size & 1)


def _parse_fmt(body: bytes) -> _Format:
    if len(body) < 16:
        raise MalformedRiff("fmt chunk shorter than 16 bytes")
    code, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", body)
    if code == WAVE_FORMAT_EXTENSIBLE:
        if len(body) < 26:
            raise MalformedRiff("extensible fmt chunk missing sub-format")
        # first two bytes of the sub-format GUID carry the real format code
        code = struct.unpack_from("<H", body, 24)[0]
    if channels < 1 or rate < 1:
        raise MalformedRiff(f"invalid fmt: channels={channels} rate={rate}")
    return _Format(code, channels, rate, bits)


def _decode(data: bytes, fmt: _Format) -> np.ndarray:
    if fmt.code == WAVE_FORMAT_PCM:
        if fmt.bits == 16:
            ints = np.frombuffer(data, dtype="<i2").astype(np.int32)
        elif fmt.bits == 24:
            raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
            ints = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
            ints = np.where(ints & 0x800000, ints - (1 << 24), ints)
        elif fmt.bits == 32:
            ints = np.frombuffer(data, dtype="<i4").astype(np.int64)
        else:
            raise UnsupportedEncoding(f"{fmt.bits}-bit PCM")
        values = ints.astype(np.float64)
        scale = float(2 ** (fmt.bits - 1))
    elif fmt.code == WAVE_FORMAT_IEEE_FLOAT:
        if fmt.bits not in (32, 64):
            raise UnsupportedEncoding(f"{fmt.bits}-bit float")
        values = np.frombuffer(data, dtype="<f4" if fmt.bits == 32 else "<f8").astype(np.float64)
        scale = 1.0
    else:
        raise UnsupportedEncoding(f"format code {fmt.code:#06x}")
    values = values.reshape(-1, fmt.channels)
    return values.mean(axis=1) / scale


def load_wav(path) -> AudioClip:
    """Decode a WAV file to a mono clip at its native sample rate.

    Channels are averaged before scaling. Unknown chunks are skipped.
    """
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < 12 or buf[:4] != b"RIFF" or buf[8:12] != b"WAVE":
        raise MalformedRiff(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    for cid, body in _iter_chunks(buf):
        if cid == b"fmt ":
            fmt = _parse_fmt(body)
        elif cid == b"data":
            data = body
            break
    if fmt is None:
        raise MalformedRiff(f"{path}: no fmt chunk before data")
    if data is None:
        raise MalformedRiff(f"{path}: no data chunk")

    frame_bytes = fmt.channels * fmt.bits // 8
    if frame_bytes == 0:
        raise UnsupportedEncoding(f"{fmt.bits}-bit samples")
    n_frames = len(data) // frame_bytes
    if n_frames == 0:
        raise EmptyData(f"{path}: data chunk holds no samples")
    samples = _decode(data[: n_frames * frame_bytes], fmt)
    np.clip(samples, -1.0, 1.0, out=samples)
    return AudioClip(samples, fmt.rate, str(path))


def resample_to_16k(clip: AudioClip) -> AudioClip:
    """Linear-interpolation resampling to the canonical rate."""
    if clip.sample_rate_hz == CANONICAL_RATE:
        return clip
    n_in = len(clip.samples)
    n_out = int(round(n_in * CANONICAL_RATE / clip.sample_rate_hz))
    # output sample j sits at input position j * in_rate / out_rate
    pos = np.arange(n_out) * (clip.sample_rate_hz / CANONICAL_RATE)
    out = np.interp(pos, np.arange(n_in), clip.samples)
    return AudioClip(out, CANONICAL_RATE, clip.source_path)


def read_clip(path) -> AudioClip:
    return resample_to_16k(load_wav(path))
