"""Learnable guidance maps F(I) and the conv stacks they are built from.

A ConvNet is a sequence of blocks, each a stride-1 "same" convolution
optionally followed by adaptive normalization and a leaky ReLU. The same
primitive builds the guidance network F (two 1×1 convolutions around one
normalization/activation pair) and the small low-resolution network C_l.

Every forward returns a tape; the matching backward returns the input
gradient and a dict of parameter gradients keyed like parameters().
"""

import dataclasses
import logging
from typing import Protocol

import numpy as np

from dgf.errors import InvalidArgument
from dgf.tensor import Tensor

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.2
NORM_VARIANCE_FLOOR = 1e-5
DEFAULT_GUIDANCE_CHANNELS = 64
IDENTITY_NOISE = 1e-2


class Guidance(Protocol):
    """What the training harness needs from a guidance map."""

    out_channels: int

    def forward(self, x: Tensor) -> tuple[Tensor, object]: ...

    def backward(self, tape, dy: Tensor) -> tuple[Tensor, dict[str, np.ndarray]]: ...

    def parameters(self) -> dict[str, np.ndarray]: ...


@dataclasses.dataclass
class ConvLayer:
    """k×k dilated cross-correlation with zero padding that keeps the spatial size.

    Attributes:
        weight (ndarray): (out_channels, in_channels, k, k), k odd.
        bias (ndarray | None): (out_channels,) or None.
        dilation (int): Spacing between kernel taps, >= 1.
    """

    weight: np.ndarray
    bias: np.ndarray | None = None
    dilation: int = 1

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise InvalidArgument(f'weight must be (out, in, k, k), got {self.weight.shape}')
        if self.weight.shape[2] % 2 == 0:
            raise InvalidArgument(f'kernel size must be odd, got {self.weight.shape[2]}')
        if self.dilation < 1:
            raise InvalidArgument(f'dilation must be >= 1, got {self.dilation}')
        if self.bias is not None and self.bias.shape != (self.out_channels,):
            raise InvalidArgument(f'bias must be ({self.out_channels},), got {self.bias.shape}')

    @classmethod
    def create(
        cls,
        in_channels: int,
        out_channels: int,
        kernel: int = 1,
        dilation: int = 1,
        bias: bool = False,
        rng: np.random.Generator | None = None,
        init: str = 'xavier',
    ) -> 'ConvLayer':
        """New layer with Xavier-uniform weights, or identity plus small Xavier noise.

        The identity init copies input channel (o mod in) to output o through
        the center tap and, when out < in, averages the copies landing on each
        output.
        """
        rng = rng if rng is not None else np.random.default_rng()
        fan_in = in_channels * kernel * kernel
        fan_out = out_channels * kernel * kernel
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-limit, limit, size=(out_channels, in_channels, kernel, kernel))
        if init == 'identity':
            weight *= IDENTITY_NOISE
            center = kernel // 2
            if out_channels >= in_channels:
                for o in range(out_channels):
                    weight[o, o % in_channels, center, center] += 1.0
            else:
                copies = np.bincount(np.arange(in_channels) % out_channels, minlength=out_channels)
                for i in range(in_channels):
                    o = i % out_channels
                    weight[o, i, center, center] += 1.0 / copies[o]
        elif init != 'xavier':
            raise InvalidArgument(f'unknown init {init!r}')
        return cls(
            weight=weight,
            bias=np.zeros(out_channels) if bias else None,
            dilation=dilation,
        )

    @classmethod
    def identity(cls, channels: int) -> 'ConvLayer':
        """Exact 1×1 identity without bias."""
        return cls(weight=np.eye(channels)[:, :, np.newaxis, np.newaxis].copy())

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def padding(self) -> int:
        return (self.kernel - 1) * self.dilation // 2

    def parameters(self, prefix: str) -> dict[str, np.ndarray]:
        params = {f'{prefix}.weight': self.weight}
        if self.bias is not None:
            params[f'{prefix}.bias'] = self.bias
        return params


@dataclasses.dataclass
class AdaptiveNorm:
    """lam*x + mu*standardize(x), standardizing each channel over the image.

    lam and mu are one-element arrays so optimizers can update them in place.
    """

    lam: np.ndarray = dataclasses.field(default_factory=lambda: np.ones(1))
    mu: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(1))

    def parameters(self, prefix: str) -> dict[str, np.ndarray]:
        return {f'{prefix}.lam': self.lam, f'{prefix}.mu': self.mu}


@dataclasses.dataclass(frozen=True)
class ConvTape:
    layer: ConvLayer
    x: Tensor


@dataclasses.dataclass(frozen=True)
class ConvGrads:
    dx: Tensor
    dweight: np.ndarray
    dbias: np.ndarray | None


@dataclasses.dataclass(frozen=True)
class NormTape:
    norm: AdaptiveNorm
    x: np.ndarray
    normalized: np.ndarray
    std: np.ndarray


def conv_forward(layer: ConvLayer, x: Tensor) -> tuple[Tensor, ConvTape]:
    """Cross-correlate x with the layer kernel; output keeps x's spatial dims."""
    if x.channels != layer.in_channels:
        raise InvalidArgument(
            f'conv expects {layer.in_channels} input channels, got {x.channels}'
        )
    height, width = x.height, x.width
    d, p = layer.dilation, layer.padding
    padded = np.pad(x.array, ((p, p), (p, p), (0, 0)))
    y = np.zeros((height, width, layer.out_channels))
    for i in range(layer.kernel):
        for j in range(layer.kernel):
            patch = padded[i * d:i * d + height, j * d:j * d + width, :]
            y += patch @ layer.weight[:, :, i, j].T
    if layer.bias is not None:
        y += layer.bias
    return Tensor.adopt(y), ConvTape(layer=layer, x=x)


def conv_backward(tape: ConvTape, dy: Tensor) -> ConvGrads:
    """Gradients of dot(dy, y) for the input, the weights and the bias."""
    layer, x = tape.layer, tape.x
    expected = (x.height, x.width, layer.out_channels)
    if dy.shape != expected:
        raise InvalidArgument(f'conv output gradient must be {expected}, got {dy.shape}')
    height, width = x.height, x.width
    d, p = layer.dilation, layer.padding
    padded = np.pad(x.array, ((p, p), (p, p), (0, 0)))
    dpadded = np.zeros_like(padded)
    dweight = np.zeros_like(layer.weight)
    g = dy.array
    for i in range(layer.kernel):
        for j in range(layer.kernel):
            rows = slice(i * d, i * d + height)
            cols = slice(j * d, j * d + width)
            dpadded[rows, cols, :] += g @ layer.weight[:, :, i, j]
            dweight[:, :, i, j] = np.tensordot(g, padded[rows, cols, :], axes=([0, 1], [0, 1]))
    dx = dpadded[p:p + height, p:p + width, :]
    dbias = g.sum(axis=(0, 1)) if layer.bias is not None else None
    return ConvGrads(dx=Tensor.adopt(np.ascontiguousarray(dx)), dweight=dweight, dbias=dbias)


def norm_forward(norm: AdaptiveNorm, x: Tensor) -> tuple[Tensor, NormTape]:
    a = x.array
    mean = a.mean(axis=(0, 1), keepdims=True)
    var = a.var(axis=(0, 1), keepdims=True)
    std = np.sqrt(var + NORM_VARIANCE_FLOOR)
    normalized = (a - mean) / std
    y = norm.lam[0] * a + norm.mu[0] * normalized
    return Tensor.adopt(y), NormTape(norm=norm, x=a, normalized=normalized, std=std)


def norm_backward(tape: NormTape, dy: Tensor) -> tuple[Tensor, dict[str, np.ndarray]]:
    """Gradient through lam*x + mu*(x - mean)/std, statistics included."""
    g = dy.array
    n = tape.normalized
    dlam = np.array([np.sum(g * tape.x)])
    dmu = np.array([np.sum(g * n)])
    dn = tape.norm.mu[0] * g
    dn_mean = dn.mean(axis=(0, 1), keepdims=True)
    dn_n_mean = (dn * n).mean(axis=(0, 1), keepdims=True)
    dx = tape.norm.lam[0] * g + (dn - dn_mean - n * dn_n_mean) / tape.std
    return Tensor.adopt(dx), {'lam': dlam, 'mu': dmu}


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    a = x.array
    return Tensor.adopt(np.where(a > 0, a, slope * a))


def leaky_relu_backward(x: Tensor, dy: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    return Tensor.adopt(np.where(x.array > 0, dy.array, slope * dy.array))


@dataclasses.dataclass
class Block:
    conv: ConvLayer
    norm: AdaptiveNorm | None = None
    activation: bool = False


@dataclasses.dataclass(frozen=True)
class BlockTape:
    conv: ConvTape
    norm: NormTape | None
    pre_activation: Tensor | None


@dataclasses.dataclass(frozen=True)
class NetTape:
    blocks: tuple[BlockTape, ...]


class ConvNet:
    """Sequential stack of conv blocks with hand-written forward and backward.

    Parameters are named conv{i}.weight, conv{i}.bias, norm{i}.lam and
    norm{i}.mu with i counting blocks from 1.
    """

    def __init__(self, blocks: list[Block]):
        if not blocks:
            raise InvalidArgument('a ConvNet needs at least one block')
        for before, after in zip(blocks, blocks[1:]):
            if before.conv.out_channels != after.conv.in_channels:
                raise InvalidArgument(
                    f'block outputs {before.conv.out_channels} channels '
                    f'but the next block expects {after.conv.in_channels}'
                )
        self.blocks = blocks

    @property
    def in_channels(self) -> int:
        return self.blocks[0].conv.in_channels

    @property
    def out_channels(self) -> int:
        return self.blocks[-1].conv.out_channels

    def parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for index, block in enumerate(self.blocks, start=1):
            params.update(block.conv.parameters(f'conv{index}'))
            if block.norm is not None:
                params.update(block.norm.parameters(f'norm{index}'))
        return params

    def forward(self, x: Tensor) -> tuple[Tensor, NetTape]:
        tapes = []
        for block in self.blocks:
            x, conv_tape = conv_forward(block.conv, x)
            norm_tape = None
            if block.norm is not None:
                x, norm_tape = norm_forward(block.norm, x)
            pre_activation = None
            if block.activation:
                pre_activation = x
                x = leaky_relu(x)
            tapes.append(BlockTape(conv=conv_tape, norm=norm_tape, pre_activation=pre_activation))
        return x, NetTape(blocks=tuple(tapes))

    def backward(self, tape: NetTape, dy: Tensor) -> tuple[Tensor, dict[str, np.ndarray]]:
        grads = {}
        for index in range(len(self.blocks), 0, -1):
            block_tape = tape.blocks[index - 1]
            if block_tape.pre_activation is not None:
                dy = leaky_relu_backward(block_tape.pre_activation, dy)
            if block_tape.norm is not None:
                dy, norm_grads = norm_backward(block_tape.norm, dy)
                grads[f'norm{index}.lam'] = norm_grads['lam']
                grads[f'norm{index}.mu'] = norm_grads['mu']
            conv_grads = conv_backward(block_tape.conv, dy)
            grads[f'conv{index}.weight'] = conv_grads.dweight
            if conv_grads.dbias is not None:
                grads[f'conv{index}.bias'] = conv_grads.dbias
            dy = conv_grads.dx
        return dy, grads


class GuidanceNet(ConvNet):
    """F(I): conv1 -> adaptive norm -> leaky ReLU -> conv2 (with bias)."""

    @property
    def conv1(self) -> ConvLayer:
        return self.blocks[0].conv

    @property
    def norm(self) -> AdaptiveNorm:
        return self.blocks[0].norm

    @property
    def conv2(self) -> ConvLayer:
        return self.blocks[1].conv


class ChannelMeanGuidance:
    """Fixed guidance: the per-pixel mean of the input channels, repeated n_O times."""

    def __init__(self, in_channels: int, out_channels: int):
        self.in_channels = in_channels
        self.out_channels = out_channels

    def parameters(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x: Tensor) -> tuple[Tensor, tuple[int, int]]:
        if x.channels != self.in_channels:
            raise InvalidArgument(
                f'guidance expects {self.in_channels} channels, got {x.channels}'
            )
        gray = x.array.mean(axis=2, keepdims=True)
        return Tensor.adopt(np.repeat(gray, self.out_channels, axis=2)), (x.height, x.width)

    def backward(self, tape, dy: Tensor) -> tuple[Tensor, dict[str, np.ndarray]]:
        per_pixel = dy.array.sum(axis=2, keepdims=True) / self.in_channels
        return Tensor.adopt(np.repeat(per_pixel, self.in_channels, axis=2)), {}


def guidance_net(
    in_channels: int,
    out_channels: int,
    channels: int = DEFAULT_GUIDANCE_CHANNELS,
    kernel: int = 1,
    rng: np.random.Generator | None = None,
    init: str = 'xavier',
) -> GuidanceNet:
    """Build F(I) with the given first-layer width and kernel size."""
    rng = rng if rng is not None else np.random.default_rng()
    logger.debug('guidance net %d -> %d -> %d, kernel %d, %s init', in_channels, channels, out_channels, kernel, init)
    return GuidanceNet([
        Block(
            conv=ConvLayer.create(in_channels, channels, kernel=kernel, rng=rng, init=init),
            norm=AdaptiveNorm(),
            activation=True,
        ),
        Block(conv=ConvLayer.create(channels, out_channels, bias=True, rng=rng, init=init)),
    ])


def identity_guidance_net(channels: int) -> GuidanceNet:
    """F with identity convolutions, lam = 1 and mu = 0: maps nonnegative inputs to themselves."""
    return GuidanceNet([
        Block(conv=ConvLayer.identity(channels), norm=AdaptiveNorm(), activation=True),
        Block(conv=dataclasses.replace(ConvLayer.identity(channels), bias=np.zeros(channels))),
    ])


def context_aggregation_net(
    in_channels: int,
    out_channels: int,
    width: int = 24,
    dilations: tuple[int, ...] = (1, 1, 2, 4, 8, 16, 1),
    rng: np.random.Generator | None = None,
    init: str = 'xavier',
) -> ConvNet:
    """Low-resolution network C_l: dilated 3×3 blocks, then a 1×1 projection with bias."""
    rng = rng if rng is not None else np.random.default_rng()
    blocks = []
    channels = in_channels
    for dilation in dilations:
        blocks.append(Block(
            conv=ConvLayer.create(channels, width, kernel=3, dilation=dilation, rng=rng, init=init),
            norm=AdaptiveNorm(),
            activation=True,
        ))
        channels = width
    blocks.append(Block(conv=ConvLayer.create(channels, out_channels, bias=True, rng=rng, init=init)))
    logger.debug('context net: %d blocks, width %d, dilations %s, %s init', len(blocks), width, dilations, init)
    return ConvNet(blocks)


def gn_forward(net: ConvNet, image: Tensor) -> tuple[Tensor, NetTape]:
    """Guidance map G = F(I) together with the tape gn_backward needs."""
    return net.forward(image)


def gn_backward(net: ConvNet, tape: NetTape, d_guide: Tensor) -> tuple[Tensor, dict[str, np.ndarray]]:
    """Input gradient and parameter gradients of dot(d_guide, G)."""
    return net.backward(tape, d_guide)
