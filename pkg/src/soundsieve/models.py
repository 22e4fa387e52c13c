"""Dense and convolutional autoencoders built on :mod:`soundsieve.autograd`.

A model is an ordered list of :class:`Block` objects. Each block is a linear
op (dense, conv, or transposed conv) optionally followed by batch norm and
ReLU, and optionally a reshape of its output. The architecture descriptor
(``arch``) is a plain dict so it can be stored in a checkpoint and rebuilt.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import LayerParams, Tensor
from .errors import KindMismatch, ShapeMismatch
from .features import FeatureSet, NormalizerStats

DENSE_ARCH = {"family": "dense", "input_dim": 640, "hidden": 512, "depth": 4, "latent": 8}
CONV_ARCH = {
    "family": "conv",
    "input_shape": [1, 128, 32],
    "filters": [32, 64, 128, 256, 512],
    "kernels": [5, 5, 5, 3, 3],
    # (mel, time) strides
    "strides": [[2, 1], [2, 1], [2, 2], [2, 2], [2, 2]],
    "latent": 40,
}
CONV_ENCODER_CHAIN = [(1, 128, 32), (32, 64, 32), (64, 32, 32), (128, 16, 16), (256, 8, 8), (512, 4, 4)]


@dataclass
class Block:
    params: LayerParams
    op: str  # "dense" | "conv" | "conv_valid" | "conv_t"
    stride: tuple = (1, 1)
    target_shape: tuple | None = None
    relu: bool = False
    reshape: tuple | None = None

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        p = self.params
        if self.op == "dense":
            y = ag.dense(x, p)
        elif self.op == "conv":
            y = ag.conv2d(x, p, self.stride, "same")
        elif self.op == "conv_valid":
            y = ag.conv2d(x, p, self.stride, "valid")
        elif self.op == "conv_t":
            y = ag.conv_transpose2d(x, p, self.stride, self.target_shape)
        else:
            raise ValueError(f"unknown op {self.op!r}")
        if p.has_bn:
            y = ag.batch_norm(y, p, training)
        if self.relu:
            y = ag.relu(y)
        if self.reshape is not None:
            y = ag.reshape(y, (y.shape[0],) + tuple(self.reshape))
        return y


class Autoencoder:
    def __init__(self, arch: dict, blocks: list, latent_index: int):
        self.arch = arch
        self.blocks = blocks
        self.latent_index = latent_index

    @property
    def family(self) -> str:
        return self.arch["family"]

    @property
    def input_shape(self) -> tuple:
        if self.family == "dense":
            return (self.arch["input_dim"],)
        return tuple(self.arch["input_shape"])

    @property
    def dtype(self):
        return self.blocks[0].params.weight.dtype

    def forward(self, x, training=False, return_latent=False):
        x = ag.as_tensor(x)
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeMismatch(f"{self.family} AE expects (B, {self.input_shape}), got {x.shape}")
        latent = None
        for i, block in enumerate(self.blocks):
            x = block(x, training)
            if i == self.latent_index:
                latent = x
        return (x, latent) if return_latent else x

    __call__ = forward

    def parameters(self) -> dict:
        out = {}
        for b in self.blocks:
            out.update(b.params.trainable())
        return out

    def buffers(self) -> dict:
        out = {}
        for b in self.blocks:
            out.update(b.params.buffers())
        return out

    def state_dict(self) -> dict:
        """Name -> array for every parameter and running statistic, in block order."""
        out = {}
        for b in self.blocks:
            out.update({k: t.data for k, t in b.params.trainable().items()})
            out.update(b.params.buffers())
        return out

    def load_state_dict(self, state: dict) -> None:
        own = self.state_dict()
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ShapeMismatch(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in own.items():
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise ShapeMismatch(f"{name}: {src.shape} vs {arr.shape}")
            arr[...] = src

    def reconstruction_error(self, batch, batch_size=256) -> np.ndarray:
        """Per-row (or per-patch) MSE between input and reconstruction, inference mode."""
        if isinstance(batch, FeatureSet):
            if batch.kind.value != self.family:
                raise KindMismatch(f"{batch.kind.value} features fed to a {self.family} model")
            data = batch.data
        else:
            data = np.asarray(batch)
        data = data.astype(self.dtype, copy=False)
        errors = []
        for start in range(0, len(data), batch_size):
            x = data[start:start + batch_size]
            y = self.forward(x, training=False).data
            d = (y - x).reshape(len(x), -1)
            errors.append(np.mean(d * d, axis=1))
        return np.concatenate(errors) if errors else np.zeros(0, dtype=self.dtype)


# -- builders ----------------------------------------------------------------

def _block_params(name, rng, w_shape, fan_in, fan_out, bias_len, bn_len, dtype):
    w = Tensor(ag.glorot_uniform(rng, w_shape, fan_in, fan_out, dtype), requires_grad=True)
    b = Tensor(np.zeros(bias_len, dtype=dtype), requires_grad=True)
    p = LayerParams(name, w, b)
    if bn_len:
        p.bn_gamma = Tensor(np.ones(bn_len, dtype=dtype), requires_grad=True)
        p.bn_beta = Tensor(np.zeros(bn_len, dtype=dtype), requires_grad=True)
        p.bn_running_mean = np.zeros(bn_len, dtype=dtype)
        p.bn_running_var = np.ones(bn_len, dtype=dtype)
    return p


def _dense_block(name, rng, n_in, n_out, bn_relu, dtype):
    p = _block_params(name, rng, (n_in, n_out), n_in, n_out, n_out, n_out if bn_relu else 0, dtype)
    return Block(p, "dense", relu=bn_relu)


def build_dense_ae(seed=0, arch=None, dtype=np.float32) -> Autoencoder:
    """640 -> 4 x (512, BN, ReLU) -> 8 -> 4 x (512, BN, ReLU) -> 640."""
    arch = dict(DENSE_ARCH if arch is None else arch)
    rng = np.random.default_rng(seed)
    d, h, depth, z = arch["input_dim"], arch["hidden"], arch["depth"], arch["latent"]
    blocks = []
    widths = [d] + [h] * depth
    for i in range(depth):
        blocks.append(_dense_block(f"enc{i + 1}", rng, widths[i], widths[i + 1], True, dtype))
    blocks.append(_dense_block("latent", rng, h, z, False, dtype))
    widths = [z] + [h] * depth
    for i in range(depth):
        blocks.append(_dense_block(f"dec{i + 1}", rng, widths[i], widths[i + 1], True, dtype))
    blocks.append(_dense_block("output", rng, h, d, False, dtype))

    chain = [d] + [blk.params.weight.shape[1] for blk in blocks]
    expected = [d] + [h] * depth + [z] + [h] * depth + [d]
    assert chain == expected, f"dense AE width chain {chain} != {expected}"
    return Autoencoder(arch, blocks, latent_index=depth)


def conv_shape_chain(arch: dict) -> list:
    """Encoder activation shapes (C, H, W) under same padding."""
    shapes = [tuple(arch["input_shape"])]
    for f, k, s in zip(arch["filters"], arch["kernels"], arch["strides"]):
        _, h, w = shapes[-1]
        shapes.append((f, ag.same_padding(h, k, s[0])[0], ag.same_padding(w, k, s[1])[0]))
    return shapes


def build_conv_ae(seed=0, arch=None, dtype=np.float32) -> Autoencoder:
    """Five strided conv blocks, a full-extent conv bottleneck, a dense inflate,
    then five transposed convs retracing the encoder shapes back to the input."""
    arch = dict(CONV_ARCH if arch is None else arch)
    arch["strides"] = [list(s) for s in arch["strides"]]
    rng = np.random.default_rng(seed)
    chain = conv_shape_chain(arch)
    canonical = (list(arch["input_shape"]) == CONV_ARCH["input_shape"]
                 and list(arch["filters"]) == CONV_ARCH["filters"])
    if canonical and chain != CONV_ENCODER_CHAIN:
        raise ShapeMismatch(f"conv encoder chain {chain} != {CONV_ENCODER_CHAIN}")

    blocks = []
    for i, (k, s) in enumerate(zip(arch["kernels"], arch["strides"])):
        c_in, c_out = chain[i][0], chain[i + 1][0]
        p = _block_params(f"enc{i + 1}", rng, (c_out, c_in, k, k), c_in * k * k, c_out * k * k,
                          c_out, c_out, dtype)
        blocks.append(Block(p, "conv", stride=tuple(s), relu=True))

    c, h, w = chain[-1]
    z = arch["latent"]
    p = _block_params("latent", rng, (z, c, h, w), c * h * w, z * h * w, z, 0, dtype)
    latent_index = len(blocks)
    blocks.append(Block(p, "conv_valid", reshape=(z,)))

    flat = c * h * w
    p = _block_params("inflate", rng, (z, flat), z, flat, flat, flat, dtype)
    blocks.append(Block(p, "dense", relu=True, reshape=(c, h, w)))

    n = len(arch["kernels"])
    for j in range(n):
        i = n - 1 - j  # encoder layer being mirrored
        k, s = arch["kernels"][i], arch["strides"][i]
        c_in, target = chain[i + 1][0], chain[i]
        last = j == n - 1
        p = _block_params(f"dec{j + 1}", rng, (c_in, target[0], k, k), c_in * k * k, target[0] * k * k,
                          target[0], 0 if last else target[0], dtype)
        blocks.append(Block(p, "conv_t", stride=tuple(s), target_shape=target, relu=not last))

    decoded = blocks[-1].target_shape
    if tuple(decoded) != tuple(arch["input_shape"]):
        raise ShapeMismatch(f"decoder output {decoded} != input {arch['input_shape']}")
    model = Autoencoder(arch, blocks, latent_index)
    model.encoder_shapes = chain
    return model


def build_model(arch: dict, seed=0, dtype=np.float32) -> Autoencoder:
    if arch["family"] == "dense":
        return build_dense_ae(seed, arch, dtype)
    if arch["family"] == "conv":
        return build_conv_ae(seed, arch, dtype)
    raise KindMismatch(f"unknown model family {arch['family']!r}")


# -- checkpoints ---------------------------------------------------------------
# layout (little endian):
#   b"ASDK", u32 version
#   u32 n_meta, then n_meta x (u32 len, utf-8 key, u32 len, utf-8 json value)
#   u32 n_tensors, then n_tensors x (u32 len, utf-8 name, u32 rank, rank x u32, float32 payload)

CHECKPOINT_MAGIC = b"ASDK"
CHECKPOINT_VERSION = 1


@dataclass
class ModelCheckpoint:
    arch: dict
    tensors: dict
    normalizer: NormalizerStats | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: Autoencoder, normalizer=None, **meta) -> "ModelCheckpoint":
        tensors = {k: np.array(v, dtype=np.float32) for k, v in model.state_dict().items()}
        if normalizer is not None:
            normalizer = NormalizerStats(np.asarray(normalizer.mean, dtype=np.float32),
                                         np.asarray(normalizer.std, dtype=np.float32))
        return cls(dict(model.arch), tensors, normalizer, meta)

    def to_model(self) -> Autoencoder:
        model = build_model(self.arch, seed=0)
        model.load_state_dict(self.tensors)
        return model

    def same_as(self, other: "ModelCheckpoint") -> bool:
        if self.arch != other.arch or self.meta != other.meta:
            return False
        if list(self.tensors) != list(other.tensors):
            return False
        if any(self.tensors[k].tobytes() != other.tensors[k].tobytes() for k in self.tensors):
            return False
        if (self.normalizer is None) != (other.normalizer is None):
            return False
        if self.normalizer is not None:
            return (self.normalizer.mean.tobytes() == other.normalizer.mean.tobytes()
                    and self.normalizer.std.tobytes() == other.normalizer.std.tobytes())
        return True


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def checkpoint_bytes(ckpt: ModelCheckpoint) -> bytes:
    meta = {"arch": ckpt.arch, **ckpt.meta}
    out = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(meta))]
    for key, value in meta.items():
        out.append(_pack_str(key))
        out.append(_pack_str(json.dumps(value, sort_keys=True)))
    tensors = dict(ckpt.tensors)
    if ckpt.normalizer is not None:
        tensors["normalizer.mean"] = ckpt.normalizer.mean
        tensors["normalizer.std"] = ckpt.normalizer.std
    out.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        out.append(_pack_str(name))
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def unpack(self, fmt):
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += struct.calcsize(fmt)
        return vals

    def string(self):
        (n,) = self.unpack("<I")
        s = self.buf[self.pos:self.pos + n].decode("utf-8")
        self.pos += n
        return s


def load_checkpoint(path) -> ModelCheckpoint:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    r = _Reader(buf)
    r.pos = 4
    version, n_meta = r.unpack("<II")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    meta = {}
    for _ in range(n_meta):
        key = r.string()
        meta[key] = json.loads(r.string())
    (n_tensors,) = r.unpack("<I")
    tensors = {}
    for _ in range(n_tensors):
        name = r.string()
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}I")
        count = int(np.prod(shape))
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=r.pos).reshape(shape)
        r.pos += 4 * count
        tensors[name] = arr.astype(np.float32)
    normalizer = None
    if "normalizer.mean" in tensors:
        normalizer = NormalizerStats(tensors.pop("normalizer.mean"), tensors.pop("normalizer.std"))
    arch = meta.pop("arch")
    return ModelCheckpoint(arch, tensors, normalizer, meta)


def reconstruction_error(model: Autoencoder, batch: FeatureSet) -> np.ndarray:
    return model.reconstruction_error(batch)


__all__ = [
    "Autoencoder", "Block", "ModelCheckpoint", "build_conv_ae", "build_dense_ae", "build_model",
    "conv_shape_chain", "load_checkpoint", "reconstruction_error", "save_checkpoint",
]
