"""Straight-line reference transcriptions of every forward map.

These are the oracles the optimised code is checked against: windows are
summed tap by tap, resampling goes through explicit interpolation matrices
and convolutions are written as per-tap einsums. They work in whatever
floating dtype they are handed (the gradient checks use np.longdouble) and
broadcast over leading batch axes: arrays are (..., H, W, C), conv weights
(..., out, in, k, k), biases (..., out) and norm scalars (..., 1).
"""

import math

import numpy as np

from dgf.guidance import LEAKY_SLOPE, NORM_VARIANCE_FLOOR, ChannelMeanGuidance

EXTENDED = np.longdouble


def box_sum(x: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return x
    height, width = x.shape[-3], x.shape[-2]
    padded = np.pad(x, _spatial_pad(x.ndim, radius))
    out = np.zeros(x.shape, dtype=x.dtype)
    span = 2 * radius + 1
    for dy in range(span):
        for dx in range(span):
            out = out + padded[..., dy:dy + height, dx:dx + width, :]
    return out


def mean(x: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return x
    ones = np.ones(x.shape[-3:-1] + (1,), dtype=x.dtype)
    return box_sum(x, radius) / box_sum(ones, radius)


def interpolation_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """(n_out, n_in) matrix of the half-pixel-center linear interpolation."""
    matrix = np.zeros((n_out, n_in), dtype=dtype)
    for d in range(n_out):
        s = (d + 0.5) * n_in / n_out - 0.5
        s = min(max(s, 0.0), n_in - 1.0)
        lo = math.floor(s)
        hi = min(lo + 1, n_in - 1)
        w = s - lo
        matrix[d, lo] += 1.0 - w
        matrix[d, hi] += w
    return matrix


def resize(x: np.ndarray, out_height: int, out_width: int) -> np.ndarray:
    rows = interpolation_matrix(x.shape[-3], out_height, x.dtype)
    cols = interpolation_matrix(x.shape[-2], out_width, x.dtype)
    x = np.einsum('oh,...hwc->...owc', rows, x)
    return np.einsum('pw,...owc->...opc', cols, x)


def guided_joint(g_low, g_high, o_low, radius: int, eps: float) -> np.ndarray:
    mean_g = mean(g_low, radius)
    mean_o = mean(o_low, radius)
    mean_gg = mean(g_low * g_low, radius)
    mean_go = mean(g_low * o_low, radius)
    var_g = mean_gg - mean_g * mean_g
    cov_go = mean_go - mean_g * mean_o
    a_low = cov_go / (var_g + eps)
    b_low = mean_o - a_low * mean_g
    height, width = g_high.shape[-3], g_high.shape[-2]
    a_high = resize(a_low, height, width)
    b_high = resize(b_low, height, width)
    return a_high * g_high + b_high


def guided_highres(g_high, o_up, radius: int, eps: float) -> np.ndarray:
    mean_g = mean(g_high, radius)
    mean_o = mean(o_up, radius)
    mean_gg = mean(g_high * g_high, radius)
    mean_go = mean(g_high * o_up, radius)
    var_g = mean_gg - mean_g * mean_g
    cov_go = mean_go - mean_g * mean_o
    a_bar = cov_go / (var_g + eps)
    b_bar = mean_o - a_bar * mean_g
    a_high = mean(a_bar, radius)
    b_high = mean(b_bar, radius)
    return a_high * g_high + b_high


def conv(x, weight, bias=None, dilation: int = 1) -> np.ndarray:
    kernel = weight.shape[-1]
    pad = (kernel - 1) * dilation // 2
    height, width = x.shape[-3], x.shape[-2]
    padded = np.pad(x, _spatial_pad(x.ndim, pad))
    y = 0
    for i in range(kernel):
        for j in range(kernel):
            patch = padded[..., i * dilation:i * dilation + height, j * dilation:j * dilation + width, :]
            y = y + np.einsum('...hwi,...oi->...hwo', patch, weight[..., i, j])
    if bias is not None:
        y = y + bias[..., np.newaxis, np.newaxis, :]
    return y


def adaptive_norm(x, lam, mu) -> np.ndarray:
    center = x - x.mean(axis=(-3, -2), keepdims=True)
    var = (center * center).mean(axis=(-3, -2), keepdims=True)
    normalized = center / np.sqrt(var + NORM_VARIANCE_FLOOR)
    return lam[..., np.newaxis, np.newaxis] * x + mu[..., np.newaxis, np.newaxis] * normalized


def leaky_relu(x) -> np.ndarray:
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def conv_net(net, params: dict, x) -> np.ndarray:
    """Evaluate a ConvNet's architecture with the given (possibly batched) parameters."""
    for index, block in enumerate(net.blocks, start=1):
        x = conv(
            x,
            params[f'conv{index}.weight'],
            params.get(f'conv{index}.bias'),
            block.conv.dilation,
        )
        if block.norm is not None:
            x = adaptive_norm(x, params[f'norm{index}.lam'], params[f'norm{index}.mu'])
        if block.activation:
            x = leaky_relu(x)
    return x


def guidance(f_net, params: dict, x) -> np.ndarray:
    if isinstance(f_net, ChannelMeanGuidance):
        gray = x.mean(axis=-1, keepdims=True)
        return np.broadcast_to(gray, gray.shape[:-1] + (f_net.out_channels,))
    return conv_net(f_net, params, x)


def pipeline(model, params: dict, image) -> np.ndarray:
    """Full model: downsample, C_l, shared F on both resolutions, joint guided filter.

    params keys carry the model prefixes ('c_l.', 'f.').
    """
    c_params = _strip(params, 'c_l.')
    f_params = _strip(params, 'f.')
    low_height, low_width = model.low_res_dims(image.shape[-3], image.shape[-2])
    image_low = resize(image, low_height, low_width)
    o_low = conv_net(model.c_l, c_params, image_low)
    g_low = guidance(model.f_net, f_params, image_low)
    g_high = guidance(model.f_net, f_params, image)
    return guided_joint(g_low, g_high, o_low, model.gf_params.radius, model.gf_params.eps)


def _strip(params: dict, prefix: str) -> dict:
    return {name[len(prefix):]: value for name, value in params.items() if name.startswith(prefix)}


def _spatial_pad(ndim: int, pad: int) -> list[tuple[int, int]]:
    return [(0, 0)] * (ndim - 3) + [(pad, pad), (pad, pad), (0, 0)]
