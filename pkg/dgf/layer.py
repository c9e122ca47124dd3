"""The guided filtering layer: forward passes and the hand-derived backward pass.

Two forward variants share one backward:

* joint upsampling fits the local linear model O = A*G + b on a low-resolution
  pair (G_l, O_l), bilinearly upsamples A and b to the guide G_h and returns
  O_h = A_h*G_h + b_h;
* the high-resolution variant fits the model on (G_h, O_up) at full size and
  smooths the coefficients with a second mean filter before applying them.

Channels are independent scalar guided filters. The backward pass applies the
adjoints of the mean filter and of the bilinear resampler, never their
forward maps.
"""

import dataclasses
import enum
import logging
import numbers

import numpy as np

from dgf.errors import DegenerateWindowError, InvalidArgument
from dgf.filters import (
    bilinear_resize,
    bilinear_resize_adjoint,
    mean_filter,
    mean_filter_adjoint,
)
from dgf.tensor import Tensor, check_same_shape

logger = logging.getLogger(__name__)

DEFAULT_RADIUS = 1
DEFAULT_EPS = 1e-8

# A window counts as flat when its variance is this small relative to its mean square.
_FLAT_WINDOW_RTOL = 1e-12


class Variant(enum.Enum):
    JOINT = 'joint'
    HIGHRES = 'highres'


@dataclasses.dataclass(frozen=True)
class GuidedFilterParams:
    """Window radius r (in pixels of the grid the moments are taken on) and regularizer eps."""

    radius: int = DEFAULT_RADIUS
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if isinstance(self.radius, bool) or not isinstance(self.radius, numbers.Integral) or self.radius < 0:
            raise InvalidArgument(f'radius must be a non-negative integer, got {self.radius!r}')
        object.__setattr__(self, 'radius', int(self.radius))
        if not np.isfinite(self.eps) or self.eps < 0:
            raise InvalidArgument(f'eps must be finite and >= 0, got {self.eps}')


@dataclasses.dataclass(frozen=True)
class GuidedFilterTape:
    """Forward intermediates read by gf_backward.

    For the high-res variant the "low" fields hold the full-resolution
    moments and the unsmoothed coefficients (A-bar, b-bar).
    """

    variant: Variant
    params: GuidedFilterParams
    g_low: Tensor
    o_low: Tensor
    g_mean: Tensor
    o_mean: Tensor
    g_var: Tensor
    go_cov: Tensor
    a_low: Tensor
    b_low: Tensor
    g_high: Tensor
    a_high: Tensor


@dataclasses.dataclass(frozen=True)
class GuidedFilterGrads:
    """Gradients of dot(dO_h, O_h) with respect to the layer inputs.

    d_o_low and d_g_low match the shapes of O_l and G_l (O_up and G_h for the
    high-res variant); d_g_high is the gradient through O_h = A_h*G_h.
    """

    variant: Variant
    d_o_low: Tensor
    d_g_low: Tensor
    d_g_high: Tensor

    @property
    def guide_high_total(self) -> Tensor:
        """Full gradient of the high-resolution guide."""
        if self.variant is Variant.HIGHRES:
            return self.d_g_low + self.d_g_high
        return self.d_g_high


# Names of the individual terms of the backward pass, accepted by gf_backward(flip=...).
BACKWARD_TERMS = (
    'b',
    'a.spread',
    'a.mean',
    'cov',
    'var',
    'o_mean.cov',
    'o.cov',
    'o.mean',
    'g_mean.b',
    'g_mean.cov',
    'g_mean.var',
    'g.cov',
    'g.var',
    'g.mean',
    'g_high',
)


def gf_forward_joint(
    g_low: Tensor,
    g_high: Tensor,
    o_low: Tensor,
    params: GuidedFilterParams = GuidedFilterParams(),
) -> tuple[Tensor, GuidedFilterTape]:
    """Joint upsampling of o_low under the guidance of g_low / g_high.

    Raises:
        InvalidArgument: on shape or channel mismatch.
        DegenerateWindowError: if eps is 0 and a window has no guidance variance.
    """
    check_same_shape(g_low, o_low, 'low-resolution guide and output')
    if g_high.channels != g_low.channels:
        raise InvalidArgument(
            f'guide channel mismatch: {g_low.channels} low-res vs {g_high.channels} high-res'
        )
    if g_high.height < g_low.height or g_high.width < g_low.width:
        raise InvalidArgument(
            f'high-resolution guide {g_high.shape[:2]} is smaller than {g_low.shape[:2]}'
        )
    logger.debug('joint forward %s -> %s, %s', g_low.shape, g_high.shape, params)

    moments = _local_linear_model(g_low, o_low, params)
    a_high = bilinear_resize(moments['a_low'], g_high.height, g_high.width)
    b_high = bilinear_resize(moments['b_low'], g_high.height, g_high.width)
    o_high = a_high * g_high + b_high
    tape = GuidedFilterTape(
        variant=Variant.JOINT,
        params=params,
        g_low=g_low,
        o_low=o_low,
        g_high=g_high,
        a_high=a_high,
        **moments,
    )
    return o_high, tape


def gf_forward_highres(
    g_high: Tensor,
    o_up: Tensor,
    params: GuidedFilterParams = GuidedFilterParams(),
) -> tuple[Tensor, GuidedFilterTape]:
    """Refine a full-resolution output o_up under the guidance of g_high."""
    check_same_shape(g_high, o_up, 'guide and output')
    logger.debug('high-res forward %s, %s', g_high.shape, params)

    moments = _local_linear_model(g_high, o_up, params)
    a_high = mean_filter(moments['a_low'], params.radius)
    b_high = mean_filter(moments['b_low'], params.radius)
    o_high = a_high * g_high + b_high
    tape = GuidedFilterTape(
        variant=Variant.HIGHRES,
        params=params,
        g_low=g_high,
        o_low=o_up,
        g_high=g_high,
        a_high=a_high,
        **moments,
    )
    return o_high, tape


def gf_backward(tape: GuidedFilterTape, d_o_high: Tensor, *, flip: str | None = None) -> GuidedFilterGrads:
    """Gradients of dot(d_o_high, O_h) for the inputs of the recorded forward.

    flip negates one named term of BACKWARD_TERMS; it exists to prove that
    the gradient checks notice a single wrong sign.
    """
    if flip is not None and flip not in BACKWARD_TERMS:
        raise InvalidArgument(f'unknown backward term {flip!r}')
    if d_o_high.shape != tape.g_high.shape:
        raise InvalidArgument(
            f'output gradient shape {d_o_high.shape} does not match {tape.g_high.shape}'
        )

    def term(name: str, value: Tensor) -> Tensor:
        return -value if name == flip else value

    r = tape.params.radius
    if tape.variant is Variant.JOINT:
        height, width = tape.g_low.height, tape.g_low.width

        def spread(g: Tensor) -> Tensor:
            return bilinear_resize_adjoint(g, height, width)
    else:

        def spread(g: Tensor) -> Tensor:
            return mean_filter_adjoint(g, r)

    denom = tape.g_var + tape.params.eps
    d_b = term('b', spread(d_o_high))
    d_a = term('a.spread', spread(d_o_high * tape.g_high)) - term('a.mean', d_b * tape.g_mean)

    d_cov = term('cov', d_a / denom)
    d_var = term('var', -(d_a * tape.go_cov / (denom * denom)))

    d_o_mean = d_b - term('o_mean.cov', d_cov * tape.g_mean)
    d_cov_moment = mean_filter_adjoint(d_cov, r)
    d_o_low = (
        term('o.cov', d_cov_moment * tape.g_low)
        + term('o.mean', mean_filter_adjoint(d_o_mean, r))
    )

    d_g_mean = (
        -term('g_mean.b', d_b * tape.a_low)
        - term('g_mean.cov', d_cov * tape.o_mean)
        - term('g_mean.var', 2.0 * d_var * tape.g_mean)
    )
    d_g_low = (
        term('g.cov', d_cov_moment * tape.o_low)
        + term('g.var', 2.0 * mean_filter_adjoint(d_var, r) * tape.g_low)
        + term('g.mean', mean_filter_adjoint(d_g_mean, r))
    )
    d_g_high = term('g_high', d_o_high * tape.a_high)

    return GuidedFilterGrads(
        variant=tape.variant,
        d_o_low=d_o_low,
        d_g_low=d_g_low,
        d_g_high=d_g_high,
    )


def _local_linear_model(g: Tensor, o: Tensor, params: GuidedFilterParams) -> dict[str, Tensor]:
    r, eps = params.radius, params.eps
    g_mean = mean_filter(g, r)
    o_mean = mean_filter(o, r)
    g_sq_mean = mean_filter(g * g, r)
    g_var = g_sq_mean - g_mean * g_mean
    go_cov = mean_filter(g * o, r) - g_mean * o_mean

    if eps == 0:
        flat = np.asarray(g_var) <= _FLAT_WINDOW_RTOL * np.asarray(g_sq_mean)
        if flat.any():
            y, x, c = np.argwhere(flat)[0]
            raise DegenerateWindowError(
                f'eps is 0 and the window at ({y}, {x}) channel {c} has no guidance variance'
            )

    a_low = go_cov / (g_var + eps)
    b_low = o_mean - a_low * g_mean
    return {
        'g_mean': g_mean,
        'o_mean': o_mean,
        'g_var': g_var,
        'go_cov': go_cov,
        'a_low': a_low,
        'b_low': b_low,
    }
