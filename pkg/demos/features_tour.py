"""
From a WAV file to autoencoder inputs
=====================================

Writes one synthetic machine clip, reads it back and walks through the two
feature layouts: stacked context windows for the dense model and
standardized 128x32 patches for the convolutional one.
"""
import tempfile
from pathlib import Path

import numpy as np

from soundsieve.audio_io import read_clip
from soundsieve.features import (conv_patches, default_bank, dense_feature_vectors,
                                 fit_normalizer, stft_log_mel)
from soundsieve.fixtures import hum, write_wav

# ten seconds of hum, the length of a real recording
rng = np.random.default_rng(0)
path = Path(tempfile.mkdtemp()) / "normal_id_00_00000000.wav"
write_wav(path, hum(rng, 160000))
clip = read_clip(path)
print(clip.sample_rate_hz, "Hz,", clip.duration_s, "s")

# 64 ms frames, 32 ms hop, 128 mel bands up to 8 kHz
mel = stft_log_mel(clip)
print("log-mel:", mel.values.shape)
bank = default_bank()
print("loudest band centre: %.0f Hz" % bank.centers_hz[mel.values.mean(axis=0).argmax()])

# dense layout: 1 s buffers, 5 consecutive frames per row
dense = dense_feature_vectors(clip)
print("dense rows:", dense.data.shape)

# conv layout: per-band standardization, then 32-frame patches every 3 frames
stats = fit_normalizer([mel])
patches = conv_patches(clip, stats)
print("patches:", patches.data.shape)
print("patch mean %.3f, std %.3f" % (patches.data.mean(), patches.data.std()))
