"""A small reverse-mode autodiff engine over numpy arrays.

Only what the two autoencoders need: dense, conv2d, transposed conv2d,
batch normalization, ReLU, reshape, MSE and Adam. Graphs are feed-forward;
``Tensor.backward`` walks them in reverse topological order.

Arrays keep whatever float dtype they are created with, so the same ops run
in float32 for training and float64 for gradient checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BatchTooSmall, ShapeMismatch, UnreachableTargetShape

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _result(data, parents, backward):
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents if needs else (),
                  _backward=backward if needs else None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class LayerParams:
    """Parameters of one block: a linear op optionally followed by batch norm."""

    name: str
    weight: Tensor
    bias: Tensor | None = None
    bn_gamma: Tensor | None = None
    bn_beta: Tensor | None = None
    bn_running_mean: np.ndarray | None = None
    bn_running_var: np.ndarray | None = None

    @property
    def has_bn(self):
        return self.bn_gamma is not None

    def trainable(self):
        out = {f"{self.name}.weight": self.weight}
        if self.bias is not None:
            out[f"{self.name}.bias"] = self.bias
        if self.has_bn:
            out[f"{self.name}.bn_gamma"] = self.bn_gamma
            out[f"{self.name}.bn_beta"] = self.bn_beta
        return out

    def buffers(self):
        if not self.has_bn:
            return {}
        return {f"{self.name}.bn_running_mean": self.bn_running_mean,
                f"{self.name}.bn_running_var": self.bn_running_var}


# -- elementwise / shape ---------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        x._accumulate(g * mask)

    return _result(np.where(mask, x.data, 0).astype(x.dtype), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), backward)


def mse_loss(prediction: Tensor, target) -> Tensor:
    target = as_tensor(target)
    if prediction.shape != target.shape:
        raise ShapeMismatch(f"mse_loss: {prediction.shape} vs {target.shape}")
    diff = prediction.data - target.data
    n = diff.size

    def backward(g):
        scale = 2.0 * g / n
        if prediction.requires_grad:
            prediction._accumulate(scale * diff)
        if target.requires_grad:
            target._accumulate(-scale * diff)

    loss = np.asarray(np.mean(diff * diff), dtype=diff.dtype)
    return _result(loss, (prediction, target), backward)


# -- dense -------------------------------------------------------------------

def dense(x: Tensor, params: LayerParams) -> Tensor:
    w, b = params.weight, params.bias
    if x.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"{params.name}: input {x.shape} does not fit weight {w.shape}")
    y = x.data @ w.data
    if b is not None:
        y = y + b.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _result(y, parents, backward)


# -- convolution -------------------------------------------------------------

def same_padding(size, kernel, stride):
    """Output length and (before, after) padding for same-padded convolution."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, (total // 2, total - total // 2)


def _conv_geometry(in_hw, kernel, stride, padding):
    if padding == "same":
        (oh, ph), (ow, pw) = (same_padding(in_hw[i], kernel[i], stride[i]) for i in range(2))
    elif padding == "valid":
        if in_hw[0] < kernel[0] or in_hw[1] < kernel[1]:
            raise ShapeMismatch(f"valid conv: kernel {kernel} larger than input {in_hw}")
        oh = (in_hw[0] - kernel[0]) // stride[0] + 1
        ow = (in_hw[1] - kernel[1]) // stride[1] + 1
        ph = pw = (0, 0)
    else:
        raise ValueError(f"unknown padding {padding!r}")
    return (oh, ow), (ph, pw)


def _im2col(x, kernel, stride, out_hw, pads):
    (ph, pw) = pads
    xp = np.pad(x, ((0, 0), (0, 0), ph, pw)) if any(ph + pw) else x
    cols = sliding_window_view(xp, kernel, axis=(2, 3))[:, :, ::stride[0], ::stride[1]]
    # trim windows that only exist because padding overshoots (valid-mode remainder)
    return cols[:, :, :out_hw[0], :out_hw[1]]


def _conv_forward(x, w, stride, out_hw, pads):
    cols = _im2col(x, w.shape[2:], stride, out_hw, pads)
    y = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # (B, oh, ow, O)
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def _conv_weight_grad(x, g, kernel, stride, pads):
    cols = _im2col(x, kernel, stride, g.shape[2:], pads)
    return np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, kh, kw)


def _conv_input_grad(g, w, in_shape, stride, pads):
    """Adjoint of ``_conv_forward`` with respect to its input (col2im)."""
    (ph, pw) = pads
    kh, kw = w.shape[2:]
    b, c, h, wd = in_shape
    oh, ow = g.shape[2:]
    gcols = np.tensordot(g, w, axes=([1], [0]))  # (B, oh, ow, C, kh, kw)
    gxp = np.zeros((b, c, h + ph[0] + ph[1], wd + pw[0] + pw[1]), dtype=g.dtype)
    sh, sw = stride
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += gcols[..., i, j].transpose(0, 3, 1, 2)
    return gxp[:, :, ph[0]:ph[0] + h, pw[0]:pw[0] + wd]


def conv2d(x: Tensor, params: LayerParams, stride=(1, 1), padding="same") -> Tensor:
    """Cross-correlation; weight layout (out_ch, in_ch, kh, kw)."""
    w, b = params.weight, params.bias
    if x.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"{params.name}: input {x.shape} does not fit weight {w.shape}")
    stride = tuple(stride)
    out_hw, pads = _conv_geometry(x.shape[2:], w.shape[2:], stride, padding)
    y = _conv_forward(x.data, w.data, stride, out_hw, pads)
    if b is not None:
        y += b.data[None, :, None, None]

    def backward(g):
        if x.requires_grad:
            x._accumulate(_conv_input_grad(g, w.data, x.shape, stride, pads))
        if w.requires_grad:
            w._accumulate(_conv_weight_grad(x.data, g, w.shape[2:], stride, pads))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))

    parents = (x, w) if b is None else (x, w, b)
    return _result(y, parents, backward)


def conv_transpose2d(x: Tensor, params: LayerParams, stride, target_shape) -> Tensor:
    """Adjoint of a same-padded ``conv2d``.

    The weight has the layout of the conv it mirrors, ``(in_ch, out_ch, kh, kw)``
    from this layer's point of view. ``target_shape`` is ``(C, H, W)`` of the
    output; it must be a shape the mirrored conv maps onto ``x``.
    """
    w, b = params.weight, params.bias
    stride = tuple(stride)
    c, h, wd = target_shape
    if x.data.ndim != 4 or x.shape[1] != w.shape[0] or w.shape[1] != c:
        raise ShapeMismatch(f"{params.name}: input {x.shape}, weight {w.shape}, target {target_shape}")
    out_hw, pads = _conv_geometry((h, wd), w.shape[2:], stride, "same")
    if out_hw != x.shape[2:]:
        raise UnreachableTargetShape(
            f"{params.name}: stride {stride} maps {(h, wd)} to {out_hw}, not {x.shape[2:]}")
    in_shape = (x.shape[0], c, h, wd)
    y = _conv_input_grad(x.data, w.data, in_shape, stride, pads)
    if b is not None:
        y += b.data[None, :, None, None]

    def backward(g):
        if x.requires_grad:
            x._accumulate(_conv_forward(g, w.data, stride, out_hw, pads))
        if w.requires_grad:
            w._accumulate(_conv_weight_grad(g, x.data, w.shape[2:], stride, pads))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))

    parents = (x, w) if b is None else (x, w, b)
    return _result(y, parents, backward)


# -- batch norm --------------------------------------------------------------

def batch_norm(x: Tensor, params: LayerParams, training: bool) -> Tensor:
    """Per-feature (dense) or per-channel (conv) batch normalization.

    Training mode normalizes with biased batch statistics and folds them into
    the running estimates with momentum 0.9; inference uses the running
    estimates only.
    """
    gamma, beta = params.bn_gamma, params.bn_beta
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)
    bshape = [1] * x.data.ndim
    bshape[1] = x.shape[1]
    if gamma.shape[0] != x.shape[1]:
        raise ShapeMismatch(f"{params.name}: {gamma.shape[0]} bn features vs input {x.shape}")
    gm = gamma.data.reshape(bshape)

    if training:
        if x.shape[0] < 2:
            raise BatchTooSmall(f"{params.name}: batch norm needs batch >= 2 in training, got {x.shape[0]}")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        params.bn_running_mean[...] = BN_MOMENTUM * params.bn_running_mean + (1 - BN_MOMENTUM) * mean
        params.bn_running_var[...] = BN_MOMENTUM * params.bn_running_var + (1 - BN_MOMENTUM) * var
    else:
        mean = params.bn_running_mean.astype(x.dtype)
        var = params.bn_running_var.astype(x.dtype)
    inv_std = (1.0 / np.sqrt(var + BN_EPS)).astype(x.dtype).reshape(bshape)
    xhat = (x.data - mean.reshape(bshape)) * inv_std
    y = gm * xhat + beta.data.reshape(bshape)
    n = x.data.size // x.shape[1]

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            gxhat = g * gm
            if training:
                s1 = gxhat.sum(axis=axes, keepdims=True)
                s2 = (gxhat * xhat).sum(axis=axes, keepdims=True)
                x._accumulate(inv_std / n * (n * gxhat - s1 - xhat * s2))
            else:
                x._accumulate(gxhat * inv_std)

    return _result(y, (x, gamma, beta), backward)


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on the arrays in ``params``.

    ``params`` and ``grads`` map names to numpy arrays (or Tensors) of equal
    shape. Missing gradients count as zero.
    """
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        p = p.data if isinstance(p, Tensor) else p
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        g = g.data if isinstance(g, Tensor) else g
        if g.shape != p.shape:
            raise ShapeMismatch(f"adam: grad {g.shape} vs param {name} {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        step = (state.lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p -= step.astype(p.dtype, copy=False)
    return state


class Adam:
    def __init__(self, params: dict, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state)


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=np.float32):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
