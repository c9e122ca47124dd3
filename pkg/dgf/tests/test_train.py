import math
from unittest import mock

import numpy as np
from django.test import SimpleTestCase, tag

from dgf import reference
from dgf.errors import DomainError, InvalidArgument, TrainingError
from dgf.guidance import Block, ChannelMeanGuidance, ConvLayer, ConvNet, identity_guidance_net
from dgf.layer import GuidedFilterParams, gf_backward
from dgf.tasks import make_dataset
from dgf.tensor import Tensor, filled
from dgf.train import (
    AdamState,
    DgfModel,
    TrainConfig,
    adam_step,
    build_model,
    dgf_backward,
    dgf_forward,
    l2_loss,
    psnr,
    train_dgf,
)
from dgf.verify import PipelineCase, finite_diff, gradcheck


def small_model(seed=0, guidance='learned', low_res_short_side=8, init='identity'):
    return build_model(
        seed=seed,
        guidance=guidance,
        guidance_channels=4,
        width=4,
        gf_params=GuidedFilterParams(1, 1e-2),
        low_res_short_side=low_res_short_side,
        init=init,
    )


def exact_identity_model(channels=3, **kwargs):
    c_l = ConvNet([Block(conv=ConvLayer.identity(channels))])
    return DgfModel(c_l=c_l, f_net=identity_guidance_net(channels), **kwargs)


class LossTests(SimpleTestCase):
    def test_hand_example(self):
        loss, grad = l2_loss(Tensor.from_flat(1, 2, 1, [1.0, 2.0]), filled(1, 2, 1, 0.0))
        self.assertEqual(loss, 2.5)
        np.testing.assert_array_equal(grad.data, [1.0, 2.0])

    def test_equal_images(self):
        x = Tensor(np.random.default_rng(0).uniform(size=(3, 4, 2)))
        loss, grad = l2_loss(x, x)
        self.assertEqual(loss, 0.0)
        np.testing.assert_array_equal(grad.array, 0.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        output = Tensor(rng.uniform(size=(4, 3, 2)))
        target = Tensor(rng.uniform(size=(4, 3, 2)))
        _, grad = l2_loss(output, target)
        numeric = finite_diff(lambda t: l2_loss(t, target)[0], output)
        np.testing.assert_allclose(grad.array, numeric.array, rtol=0, atol=1e-7)

    def test_shape_mismatch(self):
        with self.assertRaises(InvalidArgument):
            l2_loss(filled(2, 2, 1, 0.0), filled(2, 3, 1, 0.0))

    def test_psnr(self):
        x = filled(2, 2, 1, 0.5)
        self.assertEqual(psnr(x, x), math.inf)
        self.assertAlmostEqual(psnr(x, filled(2, 2, 1, 0.6)), 20.0, places=9)


class AdamTests(SimpleTestCase):
    def setUp(self):
        self.config = TrainConfig(learning_rate=1e-3)

    def test_first_step_moves_by_learning_rate(self):
        params = {'w': np.array([1.0, -2.0, 0.5])}
        adam_step(params, {'w': np.array([3.0, -0.1, 7.0])}, AdamState(), self.config)
        np.testing.assert_allclose(params['w'], [1.0 - 1e-3, -2.0 + 1e-3, 0.5 - 1e-3], rtol=0, atol=1e-9)

    def test_zero_gradient_leaves_parameters(self):
        params = {'w': np.array([1.0, 2.0])}
        state = adam_step(params, {'w': np.zeros(2)}, AdamState(), self.config)
        np.testing.assert_array_equal(params['w'], [1.0, 2.0])
        self.assertEqual(state.step, 1)

    def test_two_steps_follow_the_recurrence(self):
        params = {'w': np.array([0.3])}
        state = AdamState()
        g1, g2 = 0.4, -1.2
        adam_step(params, {'w': np.array([g1])}, state, self.config)
        adam_step(params, {'w': np.array([g2])}, state, self.config)

        w = 0.3
        m = v = 0.0
        for t, g in enumerate((g1, g2), start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            m_hat = m / (1 - 0.9 ** t)
            v_hat = v / (1 - 0.999 ** t)
            w -= 1e-3 * m_hat / (math.sqrt(v_hat) + 1e-8)
        self.assertAlmostEqual(params['w'][0], w, places=12)
        self.assertEqual(state.step, 2)

    def test_non_finite_gradient(self):
        params = {'a': np.array([1.0]), 'b': np.array([2.0])}
        state = AdamState()
        with self.assertRaisesMessage(TrainingError, 'parameter b'):
            adam_step(params, {'a': np.array([1.0]), 'b': np.array([np.nan])}, state, self.config)
        np.testing.assert_array_equal(params['a'], [1.0])
        self.assertEqual(state.step, 0)

    def test_missing_gradient(self):
        with self.assertRaises(InvalidArgument):
            adam_step({'w': np.zeros(1)}, {}, AdamState(), self.config)


class ConfigTests(SimpleTestCase):
    def test_validation(self):
        for kwargs in ({'batch_size': 2}, {'learning_rate': -1.0}, {'learning_rate': math.nan}, {'steps': -1}):
            with self.subTest(**kwargs), self.assertRaises(InvalidArgument):
                TrainConfig(**kwargs)


class ModelTests(SimpleTestCase):
    def test_low_res_dims(self):
        model = small_model(low_res_short_side=64)
        self.assertEqual(model.low_res_dims(96, 128), (64, 85))
        self.assertEqual(model.low_res_dims(32, 48), (32, 48))
        self.assertEqual(small_model(low_res_short_side=None).low_res_dims(300, 200), (300, 200))

    def test_constant_input_gives_constant_output(self):
        model = exact_identity_model(gf_params=GuidedFilterParams(1, 1e-2), low_res_short_side=8)
        output, _ = dgf_forward(model, filled(16, 16, 3, 0.5))
        np.testing.assert_allclose(output.array, 0.5, rtol=0, atol=1e-12)

    def test_full_resolution_policy(self):
        model = exact_identity_model(low_res_short_side=None)
        image = Tensor(np.random.default_rng(2).uniform(0.2, 0.8, size=(12, 10, 3)))
        output, tape = dgf_forward(model, image)
        self.assertEqual(tape.image_low.shape, image.shape)
        self.assertEqual(output.shape, image.shape)

    def test_random_model_output_shape(self):
        model = small_model(seed=3)
        image = Tensor(np.random.default_rng(3).uniform(size=(20, 24, 3)))
        output, tape = dgf_forward(model, image)
        self.assertEqual(output.shape, (20, 24, 3))
        self.assertEqual(tape.image_low.shape, (8, 10, 3))

    def test_wrong_input_channels(self):
        with self.assertRaises(InvalidArgument):
            dgf_forward(small_model(), filled(8, 8, 1, 0.5))

    def test_channel_mismatch_between_networks(self):
        with self.assertRaises(InvalidArgument):
            DgfModel(c_l=ConvNet([Block(conv=ConvLayer.identity(3))]), f_net=ChannelMeanGuidance(3, 1))

    def test_unknown_guidance(self):
        with self.assertRaises(InvalidArgument):
            build_model(guidance='sobel')

    def test_state_dict_round_trip(self):
        source, other = small_model(seed=4), small_model(seed=5)
        other.load_state_dict(source.state_dict())
        for name, value in source.parameters().items():
            with self.subTest(name=name):
                np.testing.assert_array_equal(other.parameters()[name], value)

    def test_state_dict_checks_names_and_sizes(self):
        model = small_model()
        state = model.state_dict()
        with self.assertRaises(InvalidArgument):
            model.load_state_dict({})
        state['f.conv2.bias'] = filled(1, 1, 1, 0.0)
        with self.assertRaises(InvalidArgument):
            model.load_state_dict(state)


class PipelineGradientTests(SimpleTestCase):
    def test_gradcheck(self):
        for seed in range(4):
            report = gradcheck(PipelineCase(np.random.default_rng(seed)))
            with self.subTest(seed=seed):
                self.assertTrue(report.passed, report.lines())

    def test_forward_matches_reference(self):
        model = small_model(seed=7, init='xavier')
        image = np.random.default_rng(7).uniform(size=(20, 24, 3))
        output, _ = dgf_forward(model, Tensor(image))
        expected = reference.pipeline(model, model.parameters(), image)
        np.testing.assert_allclose(output.array, expected, rtol=0, atol=1e-12)

    def test_guidance_output_bias_has_no_gradient(self):
        rng = np.random.default_rng(8)
        model = small_model(seed=8, init='xavier')
        model.f_net.conv2.bias[...] = rng.uniform(-0.5, 0.5, size=3)
        image = Tensor(rng.uniform(size=(16, 16, 3)))
        output, tape = dgf_forward(model, image)
        grads = dgf_backward(model, tape, Tensor(rng.uniform(-1, 1, size=(16, 16, 3))))
        np.testing.assert_allclose(grads['f.conv2.bias'], 0.0, rtol=0, atol=1e-10)

        model.f_net.conv2.bias[...] += 0.25
        shifted, _ = dgf_forward(model, image)
        np.testing.assert_allclose(shifted.array, output.array, rtol=0, atol=1e-10)

    def test_gradcheck_holds_the_output_bias_fixed(self):
        case = PipelineCase(np.random.default_rng(0))
        self.assertNotIn('f.conv2.bias', case.inputs)
        self.assertIn('f.conv2.weight', case.inputs)
        self.assertEqual(set(case.inputs) | {'f.conv2.bias'}, set(case.model.parameters()))

    def test_guidance_gradients_sum_both_resolutions(self):
        rng = np.random.default_rng(6)
        model = small_model(seed=6)
        image = Tensor(rng.uniform(size=(16, 16, 3)))
        _, tape = dgf_forward(model, image)
        d_out = Tensor(rng.uniform(-1, 1, size=(16, 16, 3)))
        grads = dgf_backward(model, tape, d_out)

        layer = gf_backward(tape.layer, d_out)
        _, low = model.f_net.backward(tape.f_low, layer.d_g_low)
        _, high = model.f_net.backward(tape.f_high, layer.d_g_high)
        for name in low:
            with self.subTest(name=name):
                np.testing.assert_array_equal(grads[f'f.{name}'], low[name] + high[name])
        self.assertEqual(set(grads), set(model.parameters()))


class TrainingTests(SimpleTestCase):
    def dataset(self, task='affine', count=3, size=16):
        return make_dataset(task, count, size, seed=0)

    def test_zero_learning_rate_keeps_the_loss(self):
        for count in (1, 3):
            result = train_dgf(small_model(), self.dataset(count=count), TrainConfig(learning_rate=0.0, steps=7))
            with self.subTest(count=count):
                self.assertEqual(len(result.losses), 7)
                self.assertEqual(len(set(result.losses)), 1)
                self.assertEqual(result.final_loss, result.initial_loss)
                self.assertAlmostEqual(result.losses[0], result.initial_loss, places=14)

    def test_zero_learning_rate_keeps_the_detached_loss(self):
        config = TrainConfig(learning_rate=0.0, steps=5, detach_guided_layer=True)
        result = train_dgf(small_model(init='xavier'), self.dataset(count=3), config)
        self.assertEqual(len(set(result.losses)), 1)

    def test_identity_initialisation_starts_close(self):
        result = train_dgf(small_model(), self.dataset('identity', count=2), TrainConfig(steps=0))
        self.assertLess(result.initial_loss, 1e-2)
        self.assertEqual(result.losses, [])

    def test_same_seed_same_run(self):
        config = TrainConfig(learning_rate=1e-3, steps=5, seed=7)
        first = train_dgf(small_model(), self.dataset(), config)
        second = train_dgf(small_model(), self.dataset(), config)
        self.assertEqual(first.losses, second.losses)

    def test_nan_loss_aborts(self):
        with mock.patch('dgf.train._full_step', return_value=(math.nan, {})):
            with self.assertRaises(TrainingError):
                train_dgf(small_model(), self.dataset(), TrainConfig(steps=3))

    def test_domain_error_becomes_training_error(self):
        with mock.patch('dgf.train._full_step', side_effect=DomainError('overflow')):
            with self.assertRaises(TrainingError):
                train_dgf(small_model(), self.dataset(), TrainConfig(steps=3))

    def test_detached_training_leaves_guidance_alone(self):
        model = small_model()
        before = {name: value.copy() for name, value in model.parameters().items()}
        train_dgf(model, self.dataset(), TrainConfig(learning_rate=1e-2, steps=3, detach_guided_layer=True))
        after = model.parameters()
        for name, value in before.items():
            with self.subTest(name=name):
                if name.startswith('f.'):
                    np.testing.assert_array_equal(after[name], value)
        self.assertFalse(np.array_equal(after['c_l.conv1.weight'], before['c_l.conv1.weight']))

    def test_empty_dataset(self):
        with self.assertRaises(InvalidArgument):
            train_dgf(small_model(), [], TrainConfig(steps=1))


class TaskTests(SimpleTestCase):
    def test_dataset_values_and_shapes(self):
        dataset = make_dataset('gamma', 2, 12, seed=1)
        self.assertEqual(len(dataset), 2)
        for image, target in dataset:
            self.assertEqual(image.shape, (12, 12, 3))
            self.assertEqual(target.shape, (12, 12, 3))
            self.assertGreaterEqual(image.array.min(), 0.15)
            self.assertLessEqual(image.array.max(), 0.85)

    def test_unknown_task(self):
        with self.assertRaises(InvalidArgument):
            make_dataset('sharpen', 1, 8)
        with self.assertRaises(InvalidArgument):
            make_dataset('affine', 0, 8)


@tag('slow')
class ToyTrainingTests(SimpleTestCase):
    def test_learned_guidance_beats_fixed_guidance(self):
        dataset = make_dataset('affine', 20, 96, seed=0)
        config = TrainConfig(learning_rate=1e-4, steps=500, seed=0)
        params = GuidedFilterParams(1, 1e-8)
        learned = train_dgf(build_model(seed=0, gf_params=params), dataset, config)
        fixed = train_dgf(build_model(seed=0, guidance='mean', gf_params=params), dataset, config)
        self.assertTrue(learned.improved())
        self.assertLessEqual(learned.final_loss, fixed.final_loss)
