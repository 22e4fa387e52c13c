"""Unsupervised anomalous sound detection with dense and convolutional autoencoders.

Pipeline: WAV -> log mel energies -> autoencoder trained on normal clips ->
reconstruction error as anomaly score -> AUC / pAUC per machine.
"""
from .audio_io import AudioClip, load_wav, read_clip, resample_to_16k
from .evaluate import (MachineReport, MachineScore, ScoreRecord, auc, p_auc, per_type_average,
                       score_file, select_mixed)
from .features import (FeatureSet, FrameSpec, MelBank, NormalizerStats, conv_patches,
                       dense_feature_vectors, fit_normalizer, stft_log_mel)
from .models import (ModelCheckpoint, build_conv_ae, build_dense_ae, load_checkpoint,
                     reconstruction_error, save_checkpoint)
from .trainer import TrainConfig, TrainHistory, split_train_val, train

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "load_wav", "read_clip", "resample_to_16k",
    "FeatureSet", "FrameSpec", "MelBank", "NormalizerStats", "conv_patches", "dense_feature_vectors",
    "fit_normalizer", "stft_log_mel",
    "ModelCheckpoint", "build_conv_ae", "build_dense_ae", "load_checkpoint", "reconstruction_error",
    "save_checkpoint",
    "TrainConfig", "TrainHistory", "split_train_val", "train",
    "MachineReport", "MachineScore", "ScoreRecord", "auc", "p_auc", "per_type_average", "score_file",
    "select_mixed",
]
