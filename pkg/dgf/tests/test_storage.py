import csv
import struct
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from dgf.errors import StorageError
from dgf.storage import (
    MAGIC,
    is_raw_tensor_file,
    load_image,
    load_tensors,
    save_image,
    save_tensors,
    write_loss_csv,
)
from dgf.tensor import Tensor, filled
from dgf.train import build_model


class StorageTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)


class RawTensorFileTests(StorageTestCase):
    def test_round_trip_is_bitwise(self):
        rng = np.random.default_rng(0)
        tensors = {
            'first': Tensor(rng.normal(size=(3, 4, 2))),
            'zweite': Tensor(np.array([[[1e-300, -0.0, 1e300]]])),
            'c_l.conv1.weight': Tensor(rng.uniform(size=(24, 3, 9))),
        }
        path = self.dir / 'model.dgft'
        save_tensors(path, tensors)
        loaded = load_tensors(path)
        self.assertEqual(list(loaded), list(tensors))
        for name, tensor in tensors.items():
            with self.subTest(name=name):
                self.assertEqual(loaded[name].shape, tensor.shape)
                self.assertEqual(loaded[name].data.tobytes(), tensor.data.tobytes())

    def test_header_layout(self):
        path = self.dir / 'one.dgft'
        save_tensors(path, {'ab': filled(1, 2, 1, 0.5)})
        blob = path.read_bytes()
        self.assertEqual(blob[:7], b'DGFT\x01\x01\x00')
        self.assertEqual(blob[7:9], b'\x02\x00')
        self.assertEqual(blob[9:11], b'ab')
        self.assertEqual(struct.unpack('<III', blob[11:23]), (1, 2, 1))
        self.assertEqual(struct.unpack('<2d', blob[23:]), (0.5, 0.5))

    def test_empty_container(self):
        path = self.dir / 'empty.dgft'
        save_tensors(path, {})
        self.assertEqual(load_tensors(path), {})

    def test_bad_magic(self):
        path = self.dir / 'bad.dgft'
        path.write_bytes(b'NOPE\x01\x00\x00')
        with self.assertRaises(StorageError):
            load_tensors(path)

    def test_unsupported_version(self):
        path = self.dir / 'v2.dgft'
        path.write_bytes(MAGIC + b'\x02\x00\x00')
        with self.assertRaises(StorageError):
            load_tensors(path)

    def test_truncated(self):
        path = self.dir / 'cut.dgft'
        save_tensors(path, {'x': filled(2, 2, 1, 1.0)})
        path.write_bytes(path.read_bytes()[:-3])
        with self.assertRaisesMessage(StorageError, 'truncated'):
            load_tensors(path)

    def test_trailing_bytes(self):
        path = self.dir / 'long.dgft'
        save_tensors(path, {'x': filled(1, 1, 1, 1.0)})
        path.write_bytes(path.read_bytes() + b'\x00')
        with self.assertRaises(StorageError):
            load_tensors(path)

    def test_non_finite_payload(self):
        path = self.dir / 'nan.dgft'
        save_tensors(path, {'x': filled(1, 1, 1, 1.0)})
        blob = path.read_bytes()[:-8] + struct.pack('<d', float('nan'))
        path.write_bytes(blob)
        with self.assertRaises(StorageError):
            load_tensors(path)

    def test_missing_file(self):
        with self.assertRaises(StorageError):
            load_tensors(self.dir / 'absent.dgft')

    def test_detection(self):
        raw = self.dir / 'raw.dgft'
        save_tensors(raw, {})
        other = self.dir / 'other.bin'
        other.write_bytes(b'P6\n')
        self.assertTrue(is_raw_tensor_file(raw))
        self.assertFalse(is_raw_tensor_file(other))
        self.assertFalse(is_raw_tensor_file(self.dir / 'absent'))

    def test_model_checkpoint_through_file(self):
        source = build_model(seed=1, guidance_channels=4, width=4)
        target = build_model(seed=2, guidance_channels=4, width=4)
        path = self.dir / 'ckpt.dgft'
        save_tensors(path, source.state_dict())
        target.load_state_dict(load_tensors(path))
        for name, value in source.parameters().items():
            with self.subTest(name=name):
                np.testing.assert_array_equal(target.parameters()[name], value)


class ImageTests(StorageTestCase):
    def quantized(self, shape, seed=0):
        pixels = np.random.default_rng(seed).integers(0, 256, size=shape)
        return Tensor(pixels / 255.0)

    def test_round_trip_by_format(self):
        for suffix, channels in (('.ppm', 3), ('.pgm', 1), ('.png', 3), ('.png', 1)):
            image = self.quantized((5, 7, channels))
            path = self.dir / f'image{channels}{suffix}'
            save_image(path, image)
            loaded = load_image(path)
            with self.subTest(suffix=suffix, channels=channels):
                self.assertEqual(loaded.shape, image.shape)
                np.testing.assert_array_equal(loaded.array, image.array)

    def test_ppm_bytes_survive_a_second_write(self):
        first, second = self.dir / 'a.ppm', self.dir / 'b.ppm'
        save_image(first, self.quantized((4, 6, 3), seed=1))
        save_image(second, load_image(first))
        self.assertEqual(first.read_bytes(), second.read_bytes())
        self.assertTrue(first.read_bytes().startswith(b'P6'))

    def test_values_are_clamped_and_rounded(self):
        path = self.dir / 'clamp.pgm'
        save_image(path, Tensor.from_flat(1, 4, 1, [-0.5, 1.5, 0.5, 0.2]))
        np.testing.assert_array_equal(np.rint(load_image(path).data * 255.0), [0.0, 255.0, 128.0, 51.0])

    def test_unsupported_channel_count(self):
        with self.assertRaises(StorageError):
            save_image(self.dir / 'two.png', filled(2, 2, 2, 0.5))

    def test_unreadable_image(self):
        path = self.dir / 'junk.ppm'
        path.write_bytes(b'not an image')
        with self.assertRaises(StorageError):
            load_image(path)
        with self.assertRaises(StorageError):
            load_image(self.dir / 'absent.png')


class LossCsvTests(StorageTestCase):
    def test_header_and_rows(self):
        path = self.dir / 'losses.csv'
        write_loss_csv(path, [0.5, 0.25])
        with open(path, newline='') as handle:
            rows = list(csv.reader(handle))
        self.assertEqual(rows, [['step', 'loss'], ['0', '0.5'], ['1', '0.25']])
