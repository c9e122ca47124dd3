import numpy as np
from django.test import SimpleTestCase

from dgf.errors import DomainError, InvalidArgument, OracleError
from dgf.filters import bilinear_resize, bilinear_resize_adjoint, mean_filter
from dgf.layer import Variant
from dgf.tensor import Tensor, dot
from dgf.verify import (
    GradcheckEntry,
    GradcheckReport,
    GuidedLayerCase,
    dense_operator,
    finite_diff,
    gradcheck,
    probe_finite_diff,
    relative_error,
    suite_cases,
)


class FiniteDiffTests(SimpleTestCase):
    def test_linear_function(self):
        weights = Tensor(np.arange(6.0).reshape(1, 3, 2))
        grad = finite_diff(lambda t: dot(weights, t), Tensor(np.ones((1, 3, 2))))
        np.testing.assert_allclose(grad.array, weights.array, rtol=0, atol=1e-8)

    def test_quadratic_function(self):
        x = Tensor(np.random.default_rng(0).uniform(-1, 1, size=(2, 2, 2)))
        grad = finite_diff(lambda t: dot(t, t), x)
        np.testing.assert_allclose(grad.array, 2.0 * x.array, rtol=0, atol=1e-8)

    def test_non_finite_evaluation(self):
        with self.assertRaises(OracleError):
            finite_diff(lambda t: float('inf'), Tensor(np.ones((1, 1, 1))))

    def test_domain_error_in_evaluation(self):
        def fails(t):
            raise DomainError('division by zero')

        with self.assertRaises(OracleError):
            finite_diff(fails, Tensor(np.ones((1, 1, 1))))

    def test_step_must_be_positive(self):
        with self.assertRaises(InvalidArgument):
            finite_diff(lambda t: 0.0, Tensor(np.ones((1, 1, 1))), h=0.0)

    def test_probe_differences_of_linear_map(self):
        rng = np.random.default_rng(1)
        matrix = rng.uniform(-1, 1, size=(4, 6))
        x = rng.uniform(-1, 1, size=6)
        probe = rng.uniform(-1, 1, size=4)
        grad = probe_finite_diff(lambda batch: batch @ matrix.T, x, probe, chunk=4)
        np.testing.assert_allclose(grad, matrix.T @ probe, rtol=0, atol=1e-9)


class DenseOperatorTests(SimpleTestCase):
    def test_identity(self):
        np.testing.assert_array_equal(dense_operator(lambda t: t, (2, 2, 1)), np.eye(4))

    def test_mean_filter_rows_are_averages(self):
        matrix = dense_operator(lambda t: mean_filter(t, 1), (4, 3, 1))
        np.testing.assert_allclose(matrix.sum(axis=1), 1.0, rtol=0, atol=1e-14)
        self.assertTrue((matrix >= 0).all())

    def test_resampler_adjoint_is_transpose(self):
        forward = dense_operator(lambda t: bilinear_resize(t, 6, 4), (3, 2, 1))
        adjoint = dense_operator(lambda t: bilinear_resize_adjoint(t, 3, 2), (6, 4, 1))
        np.testing.assert_allclose(adjoint, forward.T, rtol=0, atol=1e-14)


class ReportTests(SimpleTestCase):
    def test_relative_error(self):
        np.testing.assert_allclose(
            relative_error([1.0, 0.0, -2.0], [1.0, 0.0, 2.0]),
            [0.0, 0.0, 4.0 / (4.0 + 1e-8)],
        )

    def test_line_format(self):
        entry = GradcheckEntry(name='guided.joint.o_low', max_rel_err=1.5e-7, index=(1, 2, 0), passed=True)
        self.assertEqual(entry.line, 'guided.joint.o_low 1.500e-07 1,2,0 pass')
        failed = GradcheckEntry(name='conv.x', max_rel_err=0.25, index=(3,), passed=False)
        self.assertEqual(failed.line, 'conv.x 2.500e-01 3 fail')

    def test_report_aggregates(self):
        good = GradcheckEntry('a', 1e-9, (0,), True)
        bad = GradcheckEntry('b', 1e-2, (1,), False)
        report = GradcheckReport((good,), 1e-5) + GradcheckReport((bad,), 1e-5)
        self.assertFalse(report.passed)
        self.assertEqual(report.failures, (bad,))
        self.assertIs(report.worst, bad)
        self.assertEqual(report.lines(), [good.line, bad.line])

    def test_case_reports_every_input(self):
        report = gradcheck(GuidedLayerCase(np.random.default_rng(2)))
        self.assertEqual(
            [entry.name.rsplit('.', 1)[1] for entry in report.entries],
            ['g_low', 'o_low', 'g_high'],
        )
        highres = gradcheck(GuidedLayerCase(np.random.default_rng(3), Variant.HIGHRES))
        self.assertEqual([entry.name.rsplit('.', 1)[1] for entry in highres.entries], ['g_high', 'o_up'])


class SuiteTests(SimpleTestCase):
    def test_same_seed_same_instances(self):
        first, second = suite_cases(seed=4), suite_cases(seed=4)
        self.assertEqual([case.name for case in first], [case.name for case in second])
        for a, b in zip(first, second):
            for name in a.inputs:
                np.testing.assert_array_equal(a.inputs[name], b.inputs[name])
            np.testing.assert_array_equal(a.probe, b.probe)

    def test_suite_covers_every_component(self):
        names = [case.name for case in suite_cases(seed=0)]
        self.assertGreaterEqual(sum(name.startswith('guided.joint') for name in names), 20)
        self.assertEqual(sum(name.startswith('guided.highres') for name in names), 3)
        self.assertTrue(any(name.startswith('conv.') for name in names))
        self.assertTrue(any(name.startswith('guidance.') for name in names))
        self.assertTrue(any(name.startswith('pipeline.') for name in names))
