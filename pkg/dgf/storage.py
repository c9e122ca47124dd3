"""Persistence: the raw tensor container, 8-bit images and loss histories.

Raw tensor files hold a list of named tensors:

    magic b'DGFT' | version u8 = 1 | count u16
    per tensor: name length u16 | UTF-8 name | height, width, channels u32 | payload f64

All integers and floats are little-endian; payloads are row-major with
interleaved channels, so a round trip reproduces every bit.
"""

import csv
import logging
import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from dgf.errors import DgfError, StorageError
from dgf.tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b'DGFT'
VERSION = 1

_HEADER = struct.Struct('<4sBH')
_NAME_LENGTH = struct.Struct('<H')
_DIMS = struct.Struct('<III')
_PAYLOAD = np.dtype('<f8')

_IMAGE_MODES = {1: 'L', 3: 'RGB'}


def save_tensors(path, tensors: dict[str, Tensor]) -> None:
    """Write named tensors to path, in insertion order."""
    if len(tensors) > 0xFFFF:
        raise StorageError(f'a tensor file holds at most 65535 tensors, got {len(tensors)}')
    chunks = [_HEADER.pack(MAGIC, VERSION, len(tensors))]
    for name, tensor in tensors.items():
        encoded = name.encode('utf-8')
        if len(encoded) > 0xFFFF:
            raise StorageError(f'tensor name too long: {name[:32]}...')
        chunks.append(_NAME_LENGTH.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_DIMS.pack(*tensor.shape))
        chunks.append(tensor.data.astype(_PAYLOAD).tobytes())
    try:
        Path(path).write_bytes(b''.join(chunks))
    except OSError as exc:
        raise StorageError(f'cannot write {path}: {exc}') from exc
    logger.debug('wrote %d tensors to %s', len(tensors), path)


def load_tensors(path) -> dict[str, Tensor]:
    """Read every tensor of a raw tensor file.

    Raises:
        StorageError: if the file is missing, truncated or not a version-1 container.
    """
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f'cannot read {path}: {exc}') from exc
    reader = _Reader(blob, path)
    magic, version, count = reader.unpack(_HEADER)
    if magic != MAGIC:
        raise StorageError(f'{path} is not a raw tensor file')
    if version != VERSION:
        raise StorageError(f'{path} has unsupported version {version}')
    tensors = {}
    for _ in range(count):
        (length,) = reader.unpack(_NAME_LENGTH)
        try:
            name = reader.take(length).decode('utf-8')
        except UnicodeDecodeError as exc:
            raise StorageError(f'{path} holds a tensor name that is not UTF-8') from exc
        height, width, channels = reader.unpack(_DIMS)
        payload = reader.take(height * width * channels * _PAYLOAD.itemsize)
        values = np.frombuffer(payload, dtype=_PAYLOAD).astype(np.float64)
        try:
            tensors[name] = Tensor.from_flat(height, width, channels, values)
        except DgfError as exc:
            raise StorageError(f'{path}: tensor {name!r} is invalid: {exc}') from exc
    if reader.remaining:
        raise StorageError(f'{path} has {reader.remaining} trailing bytes')
    return tensors


def is_raw_tensor_file(path) -> bool:
    try:
        with open(path, 'rb') as handle:
            return handle.read(len(MAGIC)) == MAGIC
    except OSError:
        return False


def load_image(path) -> Tensor:
    """8-bit PPM/PGM/PNG as a tensor in [0, 1]: byte v becomes v / 255.

    Grayscale images give one channel; everything else is read as RGB.
    """
    try:
        with Image.open(path) as image:
            if image.mode not in ('L', 'RGB'):
                image = image.convert('RGB')
            pixels = np.asarray(image, dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        raise StorageError(f'cannot read image {path}: {exc}') from exc
    if pixels.ndim == 2:
        pixels = pixels[:, :, np.newaxis]
    return Tensor.adopt(pixels.astype(np.float64) / 255.0)


def save_image(path, tensor: Tensor) -> None:
    """Write a 1- or 3-channel tensor as an 8-bit image; the suffix picks the format.

    Values are clamped to [0, 1] and stored as round(v * 255).
    """
    mode = _IMAGE_MODES.get(tensor.channels)
    if mode is None:
        raise StorageError(f'images need 1 or 3 channels, got {tensor.channels}')
    pixels = np.rint(np.clip(tensor.array, 0.0, 1.0) * 255.0).astype(np.uint8)
    if mode == 'L':
        pixels = pixels[:, :, 0]
    try:
        Image.fromarray(pixels).save(path)
    except (OSError, ValueError, KeyError) as exc:
        raise StorageError(f'cannot write image {path}: {exc}') from exc
    logger.debug('wrote %s image %s', tensor.shape, path)


def write_loss_csv(path, losses: list[float]) -> None:
    try:
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle)
            writer.writerow(['step', 'loss'])
            for step, loss in enumerate(losses):
                writer.writerow([step, repr(loss)])
    except OSError as exc:
        raise StorageError(f'cannot write {path}: {exc}') from exc


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.path = path
        self.offset = 0

    @property
    def remaining(self) -> int:
        return len(self.blob) - self.offset

    def take(self, size: int) -> bytes:
        if size > self.remaining:
            raise StorageError(f'{self.path} is truncated at byte {self.offset}')
        chunk = self.blob[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, layout: struct.Struct) -> tuple:
        return layout.unpack(self.take(layout.size))
