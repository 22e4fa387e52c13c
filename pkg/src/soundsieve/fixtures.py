"""Synthetic miniature corpus in the DCASE directory layout.

Normal clips are a jittered harmonic hum over a faint noise floor. Anomalies
are the same hum with loud broadband noise bursts ("burst") or with the
fundamental shifted by a few percent ("detuned").
"""
from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

RATE = 16000


def write_wav(path, samples, rate=RATE, channels=1, sampwidth=2):
    """Write float samples in [-1, 1] as PCM with the stdlib ``wave`` module.

    ``samples`` is ``(n,)`` for mono or ``(n, channels)`` interleaved.
    """
    samples = np.asarray(samples, dtype=np.float64)
    scale = 2 ** (8 * sampwidth - 1)
    ints = np.clip(np.round(samples * scale), -scale, scale - 1).astype(np.int64)
    if sampwidth == 2:
        raw = ints.astype("<i2").tobytes()
    elif sampwidth == 3:
        b = ints.reshape(-1).astype("<i4").view(np.uint8).reshape(-1, 4)[:, :3]
        raw = b.tobytes()
    elif sampwidth == 4:
        raw = ints.astype("<i4").tobytes()
    else:
        raise ValueError(f"unsupported sample width {sampwidth}")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(sampwidth)
        w.setframerate(rate)
        w.writeframes(raw)


def hum(rng, n, f0=220.0, harmonics=(1.0, 0.5, 0.25, 0.125), jitter=0.01, rate=RATE):
    t = np.arange(n) / rate
    f = f0 * (1.0 + rng.uniform(-jitter, jitter))
    x = sum(a * np.sin(2 * np.pi * f * (k + 1) * t + rng.uniform(0, 2 * np.pi))
            for k, a in enumerate(harmonics))
    x = 0.3 * x / sum(harmonics)
    return x + 0.003 * rng.standard_normal(n)


def normal_clip(rng, n):
    return hum(rng, n)


def burst_clip(rng, n, n_bursts=3, burst_s=0.12, level=0.25, rate=RATE):
    x = hum(rng, n)
    width = int(burst_s * rate)
    # keep bursts inside the first second so every feature layout sees them
    hi = min(n, rate) - width
    for _ in range(n_bursts):
        start = int(rng.integers(0, max(hi, 1)))
        x[start:start + width] += level * rng.standard_normal(min(width, n - start))
    return np.clip(x, -1.0, 1.0)


def detuned_clip(rng, n, shift=0.06):
    return hum(rng, n, f0=220.0 * (1.0 + shift))


def generate_corpus(root, machine_type="ToyTone", machine_id="00", n_train=60, n_test_normal=20,
                    n_test_anomaly=20, duration_s=1.2, anomaly="burst", seed=0):
    """Write the corpus under ``root`` and return the machine-type directory."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * RATE))
    tdir = Path(root) / machine_type
    for split in ("train", "test"):
        (tdir / split).mkdir(parents=True, exist_ok=True)
    make_anomaly = {"burst": burst_clip, "detuned": detuned_clip}[anomaly]
    for i in range(n_train):
        write_wav(tdir / "train" / f"normal_id_{machine_id}_{i:08d}.wav", normal_clip(rng, n))
    for i in range(n_test_normal):
        write_wav(tdir / "test" / f"normal_id_{machine_id}_{i:08d}.wav", normal_clip(rng, n))
    for i in range(n_test_anomaly):
        write_wav(tdir / "test" / f"anomaly_id_{machine_id}_{i:08d}.wav", make_anomaly(rng, n))
    return tdir
