"""Dense H×W×C image tensor, the value type shared by every dgf module.

Data is stored as a read-only, C-contiguous float64 numpy array of shape
(height, width, channels), so the flat view is row-major with interleaved
channels: index = (y * width + x) * channels + c.
"""

import enum
import numbers

import numpy as np

from dgf.errors import DomainError, InvalidArgument


class Op(enum.Enum):
    """Elementwise binary operations accepted by zip_with."""

    ADD = 'add'
    SUB = 'sub'
    MUL = 'mul'
    DIV = 'div'


_UFUNCS = {
    Op.ADD: np.add,
    Op.SUB: np.subtract,
    Op.MUL: np.multiply,
    Op.DIV: np.divide,
}


class Tensor:
    """Immutable H×W×C grid of finite 64-bit reals.

    Attributes:
        height (int): Rows, at least 1.
        width (int): Columns, at least 1.
        channels (int): Values per pixel, at least 1.
    """

    __slots__ = ('_array',)

    def __init__(self, values):
        array = np.array(values, dtype=np.float64, order='C')
        self._array = _seal(array)

    @classmethod
    def adopt(cls, array: np.ndarray) -> 'Tensor':
        """Wrap a freshly computed array without copying it.

        The caller gives up the array: it is made read-only in place.
        """
        if array.dtype != np.float64 or not array.flags.c_contiguous:
            array = np.ascontiguousarray(array, dtype=np.float64)
        tensor = cls.__new__(cls)
        tensor._array = _seal(array)
        return tensor

    @classmethod
    def from_flat(cls, height: int, width: int, channels: int, data) -> 'Tensor':
        """Build a tensor from a flat row-major, channel-interleaved sequence."""
        _check_dims(height, width, channels)
        flat = np.asarray(data, dtype=np.float64)
        if flat.size != height * width * channels:
            raise InvalidArgument(
                f'expected {height * width * channels} values, got {flat.size}'
            )
        return cls(flat.reshape(height, width, channels))

    @property
    def height(self) -> int:
        return self._array.shape[0]

    @property
    def width(self) -> int:
        return self._array.shape[1]

    @property
    def channels(self) -> int:
        return self._array.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._array.shape

    @property
    def size(self) -> int:
        return self._array.size

    @property
    def array(self) -> np.ndarray:
        """Read-only (height, width, channels) view of the data."""
        return self._array

    @property
    def data(self) -> np.ndarray:
        """Read-only flat row-major view of the data."""
        return self._array.reshape(-1)

    def __array__(self, dtype=None, copy=None):
        if dtype is not None and np.dtype(dtype) != self._array.dtype:
            return self._array.astype(dtype)
        if copy:
            return self._array.copy()
        return self._array

    def __repr__(self) -> str:
        return f'Tensor(height={self.height}, width={self.width}, channels={self.channels})'

    def __add__(self, other):
        return _binary(self, other, Op.ADD)

    def __radd__(self, other):
        return _binary(self, other, Op.ADD)

    def __sub__(self, other):
        return _binary(self, other, Op.SUB)

    def __rsub__(self, other):
        return _scalar(other, self, Op.SUB)

    def __mul__(self, other):
        return _binary(self, other, Op.MUL)

    def __rmul__(self, other):
        return _binary(self, other, Op.MUL)

    def __truediv__(self, other):
        return _binary(self, other, Op.DIV)

    def __neg__(self):
        return Tensor.adopt(-self._array)

    def map(self, func) -> 'Tensor':
        """Apply a vectorised numpy function and wrap the result."""
        return Tensor.adopt(np.asarray(func(self._array), dtype=np.float64))


def filled(height: int, width: int, channels: int, value: float) -> Tensor:
    """Tensor of the given dims with every element equal to value."""
    _check_dims(height, width, channels)
    return Tensor.adopt(np.full((height, width, channels), float(value)))


def zeros(height: int, width: int, channels: int) -> Tensor:
    return filled(height, width, channels, 0.0)


def zeros_like(t: Tensor) -> Tensor:
    return filled(t.height, t.width, t.channels, 0.0)


def ones_like(t: Tensor) -> Tensor:
    return filled(t.height, t.width, t.channels, 1.0)


def zip_with(a: Tensor, b: Tensor, op: Op) -> Tensor:
    """Combine two same-shape tensors elementwise.

    Raises:
        InvalidArgument: if the shapes differ.
        DomainError: on division by an exact zero or a non-finite result.
    """
    check_same_shape(a, b)
    if op is Op.DIV and not np.all(b.array):
        raise DomainError('division by zero')
    return Tensor.adopt(_UFUNCS[op](a.array, b.array))


def dot(a: Tensor, b: Tensor) -> float:
    """Sum of elementwise products of two same-shape tensors."""
    check_same_shape(a, b)
    return float(np.dot(a.data, b.data))


def check_same_shape(a: Tensor, b: Tensor, what: str = 'tensors') -> None:
    if a.shape != b.shape:
        raise InvalidArgument(f'{what} differ in shape: {a.shape} vs {b.shape}')


def _binary(a: Tensor, other, op: Op) -> Tensor:
    if isinstance(other, Tensor):
        return zip_with(a, other, op)
    if isinstance(other, numbers.Real):
        value = float(other)
        if op is Op.DIV and value == 0.0:
            raise DomainError('division by zero')
        return Tensor.adopt(_UFUNCS[op](a.array, value))
    return NotImplemented


def _scalar(value, t: Tensor, op: Op) -> Tensor:
    if not isinstance(value, numbers.Real):
        return NotImplemented
    return Tensor.adopt(_UFUNCS[op](float(value), t.array))


def _check_dims(height: int, width: int, channels: int) -> None:
    if min(height, width, channels) < 1:
        raise InvalidArgument(
            f'tensor dims must be >= 1, got {height}x{width}x{channels}'
        )


def _seal(array: np.ndarray) -> np.ndarray:
    if array.ndim != 3:
        raise InvalidArgument(f'expected a 3-D (H, W, C) array, got {array.ndim}-D')
    _check_dims(*array.shape)
    if not np.isfinite(array).all():
        raise DomainError('tensor contains non-finite values')
    array.flags.writeable = False
    return array
