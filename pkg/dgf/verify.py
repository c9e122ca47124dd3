"""Numerical oracles: central finite differences, dense operator matrices and gradchecks.

A gradcheck draws a seeded random instance and a random probe tensor p,
then compares the analytic gradient of dot(p, f(inputs)) with central
differences of the same scalar. The differences are taken on the
straight-line transcriptions in dgf.reference, evaluated in extended
precision and batched over perturbations, so their noise stays well below
any tolerance worth asking for.
"""

import abc
import dataclasses
import logging

import numpy as np

from dgf import reference
from dgf.errors import DomainError, InvalidArgument, OracleError
from dgf.guidance import ConvLayer, context_aggregation_net, conv_backward, conv_forward, guidance_net
from dgf.layer import GuidedFilterParams, Variant, gf_backward, gf_forward_highres, gf_forward_joint
from dgf.tensor import Tensor
from dgf.train import DgfModel, dgf_backward, dgf_forward

logger = logging.getLogger(__name__)

FD_STEP = 1e-6
DEFAULT_TOLERANCE = 1e-5
DENOMINATOR_FLOOR = 1e-8
FD_CHUNK = 64


def relative_error(analytic, numeric) -> np.ndarray:
    """|a - n| / (|a| + |n| + 1e-8), elementwise."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / (np.abs(a) + np.abs(n) + DENOMINATOR_FLOOR)


def finite_diff(f, x: Tensor, h: float = FD_STEP) -> Tensor:
    """Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element i.

    Raises:
        OracleError: if f evaluates to a non-finite value.
    """
    if not h > 0:
        raise InvalidArgument(f'step must be positive, got {h}')
    base = x.data
    grad = np.empty(base.size)
    for i in range(base.size):
        plus = base.copy()
        minus = base.copy()
        plus[i] += h
        minus[i] -= h
        f_plus = _evaluate(f, Tensor.adopt(plus.reshape(x.shape)), i)
        f_minus = _evaluate(f, Tensor.adopt(minus.reshape(x.shape)), i)
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return Tensor.adopt(grad.reshape(x.shape))


def dense_operator(op, in_shape: tuple[int, int, int]) -> np.ndarray:
    """Matrix of a linear Tensor -> Tensor map; column j is op(e_j) flattened."""
    size = int(np.prod(in_shape))
    columns = []
    for j in range(size):
        basis = np.zeros(size)
        basis[j] = 1.0
        columns.append(op(Tensor.adopt(basis.reshape(in_shape))).data)
    return np.stack(columns, axis=1)


def probe_finite_diff(fn, x: np.ndarray, probe: np.ndarray, h: float = FD_STEP, chunk: int = FD_CHUNK) -> np.ndarray:
    """Central differences of dot(probe, fn(x)) with respect to every element of x.

    fn receives a batch of perturbed copies of x, shaped (batch, *x.shape)
    in extended precision, and must return outputs shaped (batch, *probe.shape).
    """
    x_ext = np.asarray(x, dtype=reference.EXTENDED)
    probe_ext = np.asarray(probe, dtype=reference.EXTENDED)
    step = reference.EXTENDED(h)
    flat = x_ext.reshape(1, -1)
    grad = np.empty(flat.size)
    for start in range(0, flat.size, chunk):
        index = np.arange(start, min(start + chunk, flat.size))
        count = index.size
        rows = np.arange(count)
        batch = np.repeat(flat, 2 * count, axis=0)
        batch[rows, index] += step
        batch[rows + count, index] -= step
        out = fn(batch.reshape((2 * count,) + x_ext.shape))
        out = np.broadcast_to(out, (2 * count,) + probe_ext.shape)
        sums = (out * probe_ext).reshape(2 * count, -1).sum(axis=1)
        if not np.isfinite(sums).all():
            raise OracleError(f'non-finite evaluation near element {start}')
        grad[index] = (sums[:count] - sums[count:]) / (2 * step)
    return grad.reshape(x_ext.shape)


@dataclasses.dataclass(frozen=True)
class GradcheckEntry:
    """Worst relative error over one input of one case."""

    name: str
    max_rel_err: float
    index: tuple[int, ...]
    passed: bool

    @property
    def line(self) -> str:
        where = ','.join(str(i) for i in self.index)
        return f'{self.name} {self.max_rel_err:.3e} {where} {"pass" if self.passed else "fail"}'


@dataclasses.dataclass(frozen=True)
class GradcheckReport:
    entries: tuple[GradcheckEntry, ...]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(entry.passed for entry in self.entries)

    @property
    def failures(self) -> tuple[GradcheckEntry, ...]:
        return tuple(entry for entry in self.entries if not entry.passed)

    @property
    def worst(self) -> GradcheckEntry:
        return max(self.entries, key=lambda entry: entry.max_rel_err)

    def lines(self) -> list[str]:
        return [entry.line for entry in self.entries]

    def __add__(self, other: 'GradcheckReport') -> 'GradcheckReport':
        return GradcheckReport(entries=self.entries + other.entries, tolerance=self.tolerance)


class GradcheckCase(abc.ABC):
    """A differentiable map with seeded inputs and a seeded output probe.

    Subclasses draw their instance in __init__ and provide the analytic
    gradients of dot(probe, f(inputs)) and a batched extended-precision
    transcription of f.
    """

    name: str = 'case'
    # Multiplies the tolerance; deep compositions accumulate more roundoff.
    tolerance_scale: float = 1.0
    # Maps with leaky ReLU kinks take a smaller step so no perturbation straddles a kink.
    fd_step: float = FD_STEP

    def __init__(self):
        self.inputs: dict[str, np.ndarray] = {}
        self.probe: np.ndarray | None = None

    @abc.abstractmethod
    def analytic(self) -> dict[str, np.ndarray]:
        """Gradients of dot(probe, f(inputs)) keyed like inputs."""

    @abc.abstractmethod
    def reference(self, inputs: dict[str, np.ndarray]) -> np.ndarray:
        """f(inputs); exactly one input may carry a leading batch axis."""


class GuidedLayerCase(GradcheckCase):
    """Guided filtering layer on random guide/output tensors.

    The joint variant checks O_l, G_l and G_h with G_h `scale` times larger;
    the high-res variant checks G_h and O_up at one size.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        variant: Variant = Variant.JOINT,
        shape: tuple[int, int] = (6, 8),
        channels: int = 2,
        params: GuidedFilterParams = GuidedFilterParams(1, 1e-2),
        scale: int = 2,
        flip: str | None = None,
        zero: bool = False,
    ):
        super().__init__()
        self.variant = variant
        self.params = params
        self.flip = flip
        height, width = shape
        low = (height, width, channels)
        high = (height * scale, width * scale, channels)
        draw = np.zeros if zero else (lambda size: rng.uniform(0.0, 1.0, size=size))
        if variant is Variant.JOINT:
            self.name = f'guided.joint.{height}x{width}x{channels}.r{params.radius}.eps{params.eps:g}'
            self.inputs = {'g_low': draw(low), 'o_low': draw(low), 'g_high': draw(high)}
            out_shape = high
        else:
            self.name = f'guided.highres.{height}x{width}x{channels}.r{params.radius}.eps{params.eps:g}'
            self.inputs = {'g_high': draw(low), 'o_up': draw(low)}
            out_shape = low
        self.probe = np.zeros(out_shape) if zero else rng.uniform(-1.0, 1.0, size=out_shape)

    def analytic(self) -> dict[str, np.ndarray]:
        probe = Tensor(self.probe)
        if self.variant is Variant.JOINT:
            _, tape = gf_forward_joint(
                Tensor(self.inputs['g_low']),
                Tensor(self.inputs['g_high']),
                Tensor(self.inputs['o_low']),
                self.params,
            )
            grads = gf_backward(tape, probe, flip=self.flip)
            return {
                'g_low': grads.d_g_low.array,
                'o_low': grads.d_o_low.array,
                'g_high': grads.d_g_high.array,
            }
        _, tape = gf_forward_highres(Tensor(self.inputs['g_high']), Tensor(self.inputs['o_up']), self.params)
        grads = gf_backward(tape, probe, flip=self.flip)
        return {'g_high': grads.guide_high_total.array, 'o_up': grads.d_o_low.array}

    def reference(self, inputs: dict[str, np.ndarray]) -> np.ndarray:
        r, eps = self.params.radius, self.params.eps
        if self.variant is Variant.JOINT:
            return reference.guided_joint(inputs['g_low'], inputs['g_high'], inputs['o_low'], r, eps)
        return reference.guided_highres(inputs['g_high'], inputs['o_up'], r, eps)


class ConvCase(GradcheckCase):
    """One dilated convolution with bias: input, weight and bias gradients."""

    def __init__(
        self,
        rng: np.random.Generator,
        shape: tuple[int, int, int] = (9, 9, 2),
        out_channels: int = 3,
        kernel: int = 3,
        dilation: int = 2,
    ):
        super().__init__()
        self.name = f'conv.k{kernel}.d{dilation}'
        self.dilation = dilation
        layer = ConvLayer.create(shape[2], out_channels, kernel=kernel, dilation=dilation, bias=True, rng=rng)
        self.inputs = {
            'x': rng.uniform(-1.0, 1.0, size=shape),
            'weight': layer.weight,
            'bias': rng.uniform(-0.5, 0.5, size=out_channels),
        }
        self.probe = rng.uniform(-1.0, 1.0, size=shape[:2] + (out_channels,))

    def analytic(self) -> dict[str, np.ndarray]:
        layer = ConvLayer(weight=self.inputs['weight'], bias=self.inputs['bias'], dilation=self.dilation)
        _, tape = conv_forward(layer, Tensor(self.inputs['x']))
        grads = conv_backward(tape, Tensor(self.probe))
        return {'x': grads.dx.array, 'weight': grads.dweight, 'bias': grads.dbias}

    def reference(self, inputs: dict[str, np.ndarray]) -> np.ndarray:
        return reference.conv(inputs['x'], inputs['weight'], inputs['bias'], self.dilation)


class NetCase(GradcheckCase):
    """Guidance network with randomised norm scalars: input and every parameter."""

    fd_step = 1e-8

    def __init__(
        self,
        rng: np.random.Generator,
        shape: tuple[int, int, int] = (5, 7, 2),
        out_channels: int = 2,
        channels: int = 4,
        kernel: int = 3,
    ):
        super().__init__()
        self.name = f'guidance.c{channels}.k{kernel}'
        self.net = guidance_net(shape[2], out_channels, channels=channels, kernel=kernel, rng=rng)
        self.net.norm.lam[...] = rng.uniform(0.5, 1.5, size=1)
        self.net.norm.mu[...] = rng.uniform(-1.0, 1.0, size=1)
        self.net.conv2.bias[...] = rng.uniform(-0.5, 0.5, size=out_channels)
        self.inputs = {'x': rng.uniform(-1.0, 1.0, size=shape)}
        self.inputs.update(self.net.parameters())
        self.probe = rng.uniform(-1.0, 1.0, size=shape[:2] + (out_channels,))

    def analytic(self) -> dict[str, np.ndarray]:
        _, tape = self.net.forward(Tensor(self.inputs['x']))
        dx, grads = self.net.backward(tape, Tensor(self.probe))
        return {'x': dx.array, **grads}

    def reference(self, inputs: dict[str, np.ndarray]) -> np.ndarray:
        params = {name: value for name, value in inputs.items() if name != 'x'}
        return reference.conv_net(self.net, params, inputs['x'])


class PipelineCase(GradcheckCase):
    """Whole DGF model, downsampling included: gradients of the parameters of C_l and F.

    F's output bias is held fixed. A per-channel shift of both guides leaves
    A unchanged and moves b by -A*shift, so its exact gradient is zero and a
    relative error would only measure finite-difference noise.
    """

    tolerance_scale = 10.0
    fd_step = 1e-8
    # Parameters whose gradient is identically zero through the joint layer.
    shift_invariant = ('f.conv2.bias',)

    def __init__(self, rng: np.random.Generator, size: int = 32, low_res_short_side: int = 16, channels: int = 3):
        super().__init__()
        self.name = f'pipeline.{size}to{low_res_short_side}'
        c_l = context_aggregation_net(channels, channels, width=4, dilations=(1, 2), rng=rng)
        f_net = guidance_net(channels, channels, channels=4, rng=rng)
        f_net.norm.mu[...] = rng.uniform(0.5, 1.0, size=1)
        self.model = DgfModel(
            c_l=c_l,
            f_net=f_net,
            gf_params=GuidedFilterParams(1, 1e-2),
            low_res_short_side=low_res_short_side,
        )
        self.image = rng.uniform(0.0, 1.0, size=(size, size, channels))
        self.inputs = {
            name: value for name, value in self.model.parameters().items() if name not in self.shift_invariant
        }
        self.probe = rng.uniform(-1.0, 1.0, size=(size, size, channels))

    def analytic(self) -> dict[str, np.ndarray]:
        _, tape = dgf_forward(self.model, Tensor(self.image))
        return dgf_backward(self.model, tape, Tensor(self.probe))

    def reference(self, inputs: dict[str, np.ndarray]) -> np.ndarray:
        params = {**self.model.parameters(), **inputs}
        return reference.pipeline(self.model, params, self.image.astype(reference.EXTENDED))


def gradcheck(case: GradcheckCase, tolerance: float = DEFAULT_TOLERANCE, h: float | None = None) -> GradcheckReport:
    """Compare analytic and finite-difference gradients for every input of the case.

    h overrides the case's own finite-difference step.
    """
    h = case.fd_step if h is None else h
    analytic = case.analytic()
    allowed = tolerance * case.tolerance_scale
    entries = []
    for name, value in case.inputs.items():
        others = {key: np.asarray(v, dtype=reference.EXTENDED) for key, v in case.inputs.items() if key != name}

        def fn(batch, name=name, others=others):
            return case.reference({**others, name: batch})

        numeric = probe_finite_diff(fn, value, case.probe, h)
        errors = relative_error(analytic[name], numeric)
        flat_index = int(np.argmax(errors))
        worst = float(errors.reshape(-1)[flat_index])
        index = tuple(int(i) for i in np.unravel_index(flat_index, errors.shape))
        entries.append(GradcheckEntry(
            name=f'{case.name}.{name}',
            max_rel_err=worst,
            index=index,
            passed=bool(worst <= allowed),
        ))
    report = GradcheckReport(entries=tuple(entries), tolerance=tolerance)
    logger.debug('%s: worst %s', case.name, report.worst.line)
    return report


def suite_cases(seed: int = 0, flip: str | None = None) -> list[GradcheckCase]:
    """Seeded instances covering the guided layer, the conv primitive, F and the full model.

    flip is forwarded to the guided layer's backward pass.
    """
    rng = np.random.default_rng(seed)
    cases = []
    radii = (0, 1, 2)
    epsilons = (1e-2, 1e-4)
    for i in range(24):
        params = GuidedFilterParams(radii[i % 3], epsilons[(i // 3) % 2])
        shape = (int(rng.integers(3, 13)), int(rng.integers(3, 17)))
        cases.append(GuidedLayerCase(rng, Variant.JOINT, shape, int(rng.integers(1, 3)), params, flip=flip))
    cases.append(GuidedLayerCase(rng, Variant.JOINT, (6, 8), 2, GuidedFilterParams(1, 1e-2), flip=flip))
    for radius in radii:
        cases.append(GuidedLayerCase(rng, Variant.HIGHRES, (8, 10), 2, GuidedFilterParams(radius, 1e-2), flip=flip))
    cases.append(GuidedLayerCase(rng, zero=True, flip=flip))
    cases.append(ConvCase(rng))
    cases.append(ConvCase(rng, shape=(6, 5, 3), out_channels=2, kernel=1, dilation=1))
    cases.append(NetCase(rng))
    cases.append(NetCase(rng, kernel=1))
    cases.append(PipelineCase(rng))
    return cases


def run_suite(seed: int = 0, tolerance: float = DEFAULT_TOLERANCE, flip: str | None = None) -> GradcheckReport:
    report = GradcheckReport(entries=(), tolerance=tolerance)
    for case in suite_cases(seed, flip):
        report = report + gradcheck(case, tolerance)
    logger.info(
        'gradcheck: %d entries, %d failed, worst %.3e',
        len(report.entries), len(report.failures), report.worst.max_rel_err,
    )
    return report


def _evaluate(f, x: Tensor, index: int) -> float:
    try:
        value = float(f(x))
    except DomainError as exc:
        raise OracleError(f'evaluation failed at element {index}: {exc}') from exc
    if not np.isfinite(value):
        raise OracleError(f'non-finite evaluation at element {index}')
    return value
