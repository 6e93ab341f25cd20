"""Deterministic float32 tensor kernels.

Every tensor is a channel-last ``(height, width, channels)`` float32 array.
Kernels are pure: they never modify their inputs.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ShapeError

DTYPE = np.float32


def _where(name):
    return f" in layer {name!r}" if name else ""


def as_tensor(x, name=None):
    """Return ``x`` as a contiguous rank-3 float32 array."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if arr.ndim != 3:
        raise ShapeError(f"expected a rank-3 (H, W, C) tensor, got shape {arr.shape}{_where(name)}")
    return arr


def _same_pads(size, k, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _pad_spatial(x, kh, kw, stride, padding, value=0.0):
    if padding == "valid":
        return x
    if padding != "same":
        raise ShapeError(f"unknown padding {padding!r}")
    top, bottom = _same_pads(x.shape[0], kh, stride)
    left, right = _same_pads(x.shape[1], kw, stride)
    if not (top or bottom or left or right):
        return x
    return np.pad(x, ((top, bottom), (left, right), (0, 0)), constant_values=value)


def conv_output_size(size, k, stride, padding):
    if padding == "same":
        return -(-size // stride)
    return (size - k) // stride + 1


def conv2d(x, weights, bias=None, stride=1, padding="same", name=None):
    """2-D cross-correlation with ``weights`` laid out as ``(kh, kw, cin, cout)``.

    ``same`` padding follows the TensorFlow convention: the output has
    ``ceil(size / stride)`` rows and any odd padding goes to the bottom/right.
    """
    x = as_tensor(x, name)
    w = np.asarray(weights, dtype=DTYPE)
    if w.ndim != 4:
        raise ShapeError(f"conv weights must be rank 4, got {w.shape}{_where(name)}")
    kh, kw, cin, cout = w.shape
    if x.shape[2] != cin:
        raise ShapeError(
            f"conv expects {cin} input channels, got {x.shape[2]}{_where(name)}"
        )
    if stride < 1:
        raise ShapeError(f"stride must be >= 1{_where(name)}")
    xp = _pad_spatial(x, kh, kw, stride, padding)
    if xp.shape[0] < kh or xp.shape[1] < kw:
        raise ShapeError(f"input {x.shape[:2]} smaller than kernel {(kh, kw)}{_where(name)}")

    if kh == 1 and kw == 1:
        patches = xp[::stride, ::stride, :]
        out = patches.reshape(-1, cin) @ w.reshape(cin, cout)
        out = out.reshape(patches.shape[0], patches.shape[1], cout)
    else:
        # windows: (Ho, Wo, cin, kh, kw)
        windows = sliding_window_view(xp, (kh, kw), axis=(0, 1))[::stride, ::stride]
        ho, wo = windows.shape[:2]
        cols = np.ascontiguousarray(windows).reshape(ho * wo, cin * kh * kw)
        kernel = w.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)
        out = (cols @ kernel).reshape(ho, wo, cout)
    if bias is not None:
        b = np.asarray(bias, dtype=DTYPE)
        if b.shape != (cout,):
            raise ShapeError(f"bias length {b.shape} != {cout} output channels{_where(name)}")
        out = out + b
    return out.astype(DTYPE, copy=False)


def batchnorm_infer(x, scale, shift, running_mean, running_var, eps=1e-3, name=None):
    """Inference-mode batch normalisation: ``scale * (x - mean) / sqrt(var + eps) + shift``."""
    x = as_tensor(x, name)
    c = x.shape[2]
    vecs = [np.asarray(v, dtype=np.float64) for v in (scale, shift, running_mean, running_var)]
    for v in vecs:
        if v.shape != (c,):
            raise ShapeError(f"batchnorm vector of shape {v.shape} for {c} channels{_where(name)}")
    scale, shift, mean, var = vecs
    if np.any(var < 0):
        raise ShapeError(f"negative running variance{_where(name)}")
    mult = scale / np.sqrt(var + eps)
    offset = shift - mean * mult
    return (x * mult.astype(DTYPE) + offset.astype(DTYPE)).astype(DTYPE, copy=False)


def relu(x):
    return np.maximum(as_tensor(x), DTYPE(0))


def sigmoid(x):
    # tanh form avoids exp overflow and keeps sigmoid(0) == 0.5 exactly
    x = as_tensor(x)
    return (DTYPE(0.5) * (DTYPE(1) + np.tanh(DTYPE(0.5) * x))).astype(DTYPE, copy=False)


def tanh(x):
    return np.tanh(as_tensor(x))


def max_pool(x, k, stride=None, padding="same", name=None):
    x = as_tensor(x, name)
    stride = k if stride is None else stride
    xp = _pad_spatial(x, k, k, stride, padding, value=-np.inf)
    windows = sliding_window_view(xp, (k, k), axis=(0, 1))[::stride, ::stride]
    return windows.max(axis=(3, 4)).astype(DTYPE, copy=False)


def add(a, b, name=None):
    a, b = as_tensor(a, name), as_tensor(b, name)
    if a.shape != b.shape:
        raise ShapeError(f"cannot add {a.shape} and {b.shape}{_where(name)}")
    return a + b


def concat_channels(tensors, name=None):
    tensors = [as_tensor(t, name) for t in tensors]
    if not tensors:
        raise ShapeError(f"nothing to concatenate{_where(name)}")
    hw = {t.shape[:2] for t in tensors}
    if len(hw) != 1:
        raise ShapeError(f"spatial sizes differ: {sorted(hw)}{_where(name)}")
    return np.concatenate(tensors, axis=2)


def _bilinear_axis(n, factor):
    src = (np.arange(n * factor, dtype=np.float64) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_upsample(x, factor, mode="bilinear", name=None):
    """Upsample by an integer factor using half-pixel (align_corners=False) sampling."""
    x = as_tensor(x, name)
    if int(factor) != factor or factor < 1:
        raise ShapeError(f"upsample factor must be a positive integer, got {factor}{_where(name)}")
    factor = int(factor)
    if factor == 1:
        return x.copy()
    if mode == "nearest":
        return np.repeat(np.repeat(x, factor, axis=0), factor, axis=1)
    if mode != "bilinear":
        raise ShapeError(f"unknown upsample mode {mode!r}{_where(name)}")
    h, w, _ = x.shape
    x64 = x.astype(np.float64)
    lo, hi, fr = _bilinear_axis(h, factor)
    fr = fr[:, None, None]
    rows = x64[lo] * (1 - fr) + x64[hi] * fr
    lo, hi, fr = _bilinear_axis(w, factor)
    fr = fr[None, :, None]
    out = rows[:, lo] * (1 - fr) + rows[:, hi] * fr
    return out.astype(DTYPE)


def he_normal(rng, shape, fan_in):
    std = math.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(DTYPE)
