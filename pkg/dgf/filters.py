"""Linear image operators used by the guided filter, each with its exact adjoint.

Windows are clamped to the image: a radius-r window at (y, x) covers
rows max(0, y-r)..min(h-1, y+r) and the same for columns, and the mean
filter divides by the number of pixels actually covered.

Resampling uses half-pixel centers, source = (d + 0.5) * in / out - 0.5,
clamped to [0, in - 1], for both up- and down-sampling.
"""

import numpy as np

from dgf.errors import InvalidArgument
from dgf.tensor import Tensor


class SummedAreaTable:
    """Prefix sums of a tensor, padded with a zero first row and column.

    table[y, x, c] is the sum of t[0:y, 0:x, c], so any rectangle sum takes
    four lookups whatever its size.
    """

    def __init__(self, t: Tensor):
        height, width, channels = t.shape
        table = np.zeros((height + 1, width + 1, channels))
        np.cumsum(np.cumsum(t.array, axis=0), axis=1, out=table[1:, 1:])
        self.table = table

    @property
    def shape(self) -> tuple[int, int, int]:
        height, width, channels = self.table.shape
        return height - 1, width - 1, channels

    def window_sum(self, y0: int, y1: int, x0: int, x1: int) -> np.ndarray:
        """Per-channel sum over rows y0..y1-1 and columns x0..x1-1."""
        s = self.table
        return s[y1, x1] - s[y0, x1] - s[y1, x0] + s[y0, x0]

    def box(self, radius: int) -> np.ndarray:
        """Clamped-window sums for every pixel at once."""
        height, width, _ = self.shape
        y0, y1 = _window_bounds(height, radius)
        x0, x1 = _window_bounds(width, radius)
        s = self.table
        return (
            s[np.ix_(y1, x1)] - s[np.ix_(y0, x1)]
            - s[np.ix_(y1, x0)] + s[np.ix_(y0, x0)]
        )


def box_sum(t: Tensor, radius: int) -> Tensor:
    """Sum over each clamped (2r+1)×(2r+1) window, in time independent of r."""
    _check_radius(radius)
    if radius == 0:
        return t
    return Tensor.adopt(SummedAreaTable(t).box(radius))


def naive_box_sum(t: Tensor, radius: int) -> Tensor:
    """Reference for box_sum: sums every window directly."""
    _check_radius(radius)
    height, width, channels = t.shape
    src = t.array
    out = np.empty((height, width, channels))
    for y in range(height):
        rows = slice(max(0, y - radius), y + radius + 1)
        for x in range(width):
            cols = slice(max(0, x - radius), x + radius + 1)
            out[y, x] = src[rows, cols].sum(axis=(0, 1))
    return Tensor.adopt(out)


def window_counts(height: int, width: int, radius: int) -> np.ndarray:
    """Pixel count N of every clamped window, shaped (height, width, 1)."""
    y0, y1 = _window_bounds(height, radius)
    x0, x1 = _window_bounds(width, radius)
    counts = np.outer(y1 - y0, x1 - x0).astype(np.float64)
    return counts[:, :, np.newaxis]


def mean_filter(t: Tensor, radius: int) -> Tensor:
    """Mean over each clamped window (f_mu)."""
    _check_radius(radius)
    if radius == 0:
        return t
    counts = window_counts(t.height, t.width, radius)
    return Tensor.adopt(SummedAreaTable(t).box(radius) / counts)


def mean_filter_adjoint(g: Tensor, radius: int) -> Tensor:
    """Transpose of mean_filter: box_sum(g / N).

    The box sum is symmetric, so only the per-window normalisation moves
    to the input side.
    """
    _check_radius(radius)
    if radius == 0:
        return g
    counts = window_counts(g.height, g.width, radius)
    scaled = Tensor.adopt(g.array / counts)
    return box_sum(scaled, radius)


def bilinear_resize(t: Tensor, out_height: int, out_width: int) -> Tensor:
    """Bilinear resampling to (out_height, out_width), up or down (f_up)."""
    if out_height < 1 or out_width < 1:
        raise InvalidArgument(f'target dims must be >= 1, got {out_height}x{out_width}')
    if (out_height, out_width) == (t.height, t.width):
        return t
    rows = _resample_axis(t.array, _AxisPlan(t.height, out_height), axis=0)
    out = _resample_axis(rows, _AxisPlan(t.width, out_width), axis=1)
    return Tensor.adopt(out)


def bilinear_resize_adjoint(g: Tensor, in_height: int, in_width: int) -> Tensor:
    """Transpose of bilinear_resize(·, g.height, g.width) from in_height×in_width.

    Every output gradient is scattered to its (at most four) source pixels
    with the forward interpolation weights.
    """
    if in_height < 1 or in_width < 1:
        raise InvalidArgument(f'input dims must be >= 1, got {in_height}x{in_width}')
    if (in_height, in_width) == (g.height, g.width):
        return g
    cols = _scatter_axis(g.array, _AxisPlan(in_width, g.width), axis=1)
    out = _scatter_axis(cols, _AxisPlan(in_height, g.height), axis=0)
    return Tensor.adopt(out)


class _AxisPlan:
    """Source indices and weights for resampling one axis from n_in to n_out."""

    def __init__(self, n_in: int, n_out: int):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        self.lo = np.floor(src).astype(np.intp)
        self.hi = np.minimum(self.lo + 1, n_in - 1)
        self.weight = src - self.lo
        self.n_in = n_in
        self.n_out = n_out


def _resample_axis(a: np.ndarray, plan: _AxisPlan, axis: int) -> np.ndarray:
    lo = np.take(a, plan.lo, axis=axis)
    hi = np.take(a, plan.hi, axis=axis)
    weight = _along(plan.weight, axis)
    return lo + weight * (hi - lo)


def _scatter_axis(g: np.ndarray, plan: _AxisPlan, axis: int) -> np.ndarray:
    moved = np.moveaxis(g, axis, 0)
    weight = plan.weight[:, np.newaxis, np.newaxis]
    out = np.zeros((plan.n_in,) + moved.shape[1:])
    np.add.at(out, plan.lo, (1.0 - weight) * moved)
    np.add.at(out, plan.hi, weight * moved)
    return np.ascontiguousarray(np.moveaxis(out, 0, axis))


def _along(weights: np.ndarray, axis: int) -> np.ndarray:
    shape = [1, 1, 1]
    shape[axis] = weights.size
    return weights.reshape(shape)


def _window_bounds(n: int, radius: int) -> tuple[np.ndarray, np.ndarray]:
    centers = np.arange(n)
    return np.clip(centers - radius, 0, n), np.clip(centers + radius + 1, 0, n)


def _check_radius(radius: int) -> None:
    if radius < 0:
        raise InvalidArgument(f'radius must be >= 0, got {radius}')
