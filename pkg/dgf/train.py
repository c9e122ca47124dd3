"""End-to-end deep guided filtering: model assembly, l2 loss, Adam and the training loop.

The model downsamples I_h to I_l, runs the low-resolution network C_l to get
O_l, maps both resolutions through one shared guidance network F, and joins
them with the guided filtering layer:

    O_h = GF(F(I_l), F(I_h), C_l(I_l))
"""

import dataclasses
import logging
import math

import numpy as np

from dgf.errors import DegenerateWindowError, DomainError, InvalidArgument, TrainingError
from dgf.filters import bilinear_resize
from dgf.guidance import (
    DEFAULT_GUIDANCE_CHANNELS,
    ChannelMeanGuidance,
    ConvNet,
    Guidance,
    NetTape,
    context_aggregation_net,
    guidance_net,
)
from dgf.layer import GuidedFilterParams, GuidedFilterTape, gf_backward, gf_forward_joint
from dgf.tensor import Tensor, check_same_shape

logger = logging.getLogger(__name__)

DEFAULT_LEARNING_RATE = 1e-4
DEFAULT_LOW_RES_SHORT_SIDE = 64


@dataclasses.dataclass
class DgfModel:
    """C_l, the guidance map F, the guided filter parameters and the low-res policy.

    Attributes:
        c_l (ConvNet): Low-resolution network producing O_l.
        f_net (Guidance): Learnable GuidanceNet or a fixed guidance map.
        gf_params (GuidedFilterParams): Radius and eps of the guided filter.
        low_res_short_side (int | None): Short side of I_l; None keeps full resolution.
    """

    c_l: ConvNet
    f_net: Guidance
    gf_params: GuidedFilterParams = GuidedFilterParams()
    low_res_short_side: int | None = DEFAULT_LOW_RES_SHORT_SIDE

    def __post_init__(self):
        if self.c_l.out_channels != self.f_net.out_channels:
            raise InvalidArgument(
                f'C_l outputs {self.c_l.out_channels} channels '
                f'but F produces {self.f_net.out_channels}'
            )
        if self.low_res_short_side is not None and self.low_res_short_side < 1:
            raise InvalidArgument(f'low-res short side must be >= 1, got {self.low_res_short_side}')

    def low_res_dims(self, height: int, width: int) -> tuple[int, int]:
        """Dims of I_l: short side scaled to low_res_short_side, aspect ratio kept."""
        short = min(height, width)
        if self.low_res_short_side is None or short <= self.low_res_short_side:
            return height, width
        scale = self.low_res_short_side / short
        return max(1, round(height * scale)), max(1, round(width * scale))

    def parameters(self) -> dict[str, np.ndarray]:
        params = {f'c_l.{name}': value for name, value in self.c_l.parameters().items()}
        params.update({f'f.{name}': value for name, value in self.f_net.parameters().items()})
        return params

    def state_dict(self) -> dict[str, Tensor]:
        """Parameters as named tensors, each reshaped to (dim0, dim1, rest)."""
        return {name: Tensor(_as_grid(value)) for name, value in self.parameters().items()}

    def load_state_dict(self, tensors: dict[str, Tensor]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(tensors))
        if missing:
            raise InvalidArgument(f'checkpoint lacks parameters: {", ".join(missing)}')
        for name, value in params.items():
            stored = tensors[name].array
            if stored.size != value.size:
                raise InvalidArgument(
                    f'parameter {name} holds {value.size} values, checkpoint has {stored.size}'
                )
            value[...] = stored.reshape(value.shape)


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = DEFAULT_LEARNING_RATE
    batch_size: int = 1
    steps: int = 500
    seed: int = 0
    detach_guided_layer: bool = False
    log_every: int = 50

    def __post_init__(self):
        if not math.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise InvalidArgument(f'learning rate must be finite and >= 0, got {self.learning_rate}')
        if self.batch_size != 1:
            raise InvalidArgument(f'only batch size 1 is supported, got {self.batch_size}')
        if self.steps < 0:
            raise InvalidArgument(f'steps must be >= 0, got {self.steps}')


@dataclasses.dataclass
class AdamState:
    """First/second moment estimates per parameter name and the step count."""

    m: dict[str, np.ndarray] = dataclasses.field(default_factory=dict)
    v: dict[str, np.ndarray] = dataclasses.field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclasses.dataclass(frozen=True)
class DgfTape:
    image_low: Tensor
    c_l: NetTape
    f_low: object
    f_high: object
    layer: GuidedFilterTape


@dataclasses.dataclass
class TrainResult:
    model: DgfModel
    losses: list[float]
    initial_loss: float
    final_loss: float

    def improved(self, factor: float = 0.1) -> bool:
        """Whether the dataset loss fell to at most factor times its starting value."""
        return self.final_loss <= factor * self.initial_loss


def dgf_forward(model: DgfModel, image: Tensor) -> tuple[Tensor, DgfTape]:
    if image.channels != model.c_l.in_channels:
        raise InvalidArgument(
            f'model expects {model.c_l.in_channels} input channels, got {image.channels}'
        )
    height, width = model.low_res_dims(image.height, image.width)
    image_low = bilinear_resize(image, height, width)
    o_low, c_tape = model.c_l.forward(image_low)
    g_low, f_low_tape = model.f_net.forward(image_low)
    g_high, f_high_tape = model.f_net.forward(image)
    o_high, layer_tape = gf_forward_joint(g_low, g_high, o_low, model.gf_params)
    tape = DgfTape(
        image_low=image_low,
        c_l=c_tape,
        f_low=f_low_tape,
        f_high=f_high_tape,
        layer=layer_tape,
    )
    return o_high, tape


def dgf_backward(model: DgfModel, tape: DgfTape, d_o_high: Tensor) -> dict[str, np.ndarray]:
    """Parameter gradients of dot(d_o_high, O_h), keyed like model.parameters().

    F is shared by both resolutions; its gradients are the low-res
    contribution plus the high-res one, added in that order.
    """
    layer_grads = gf_backward(tape.layer, d_o_high)
    _, c_grads = model.c_l.backward(tape.c_l, layer_grads.d_o_low)
    _, f_low = model.f_net.backward(tape.f_low, layer_grads.d_g_low)
    _, f_high = model.f_net.backward(tape.f_high, layer_grads.d_g_high)

    grads = {f'c_l.{name}': value for name, value in c_grads.items()}
    for name, low in f_low.items():
        grads[f'f.{name}'] = low + f_high[name]
    return grads


def l2_loss(output: Tensor, target: Tensor) -> tuple[float, Tensor]:
    """Mean squared difference and its gradient with respect to output."""
    check_same_shape(output, target, 'output and target')
    diff = output.array - target.array
    loss = float(np.mean(diff * diff))
    return loss, Tensor.adopt(2.0 * diff / diff.size)


def psnr(output: Tensor, target: Tensor) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]."""
    mse, _ = l2_loss(output, target)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> AdamState:
    """One bias-corrected Adam update, applied to params in place.

    Raises:
        TrainingError: if any gradient is non-finite; nothing is updated then.
    """
    for name in params:
        if name not in grads:
            raise InvalidArgument(f'no gradient for parameter {name}')
        if grads[name].shape != params[name].shape:
            raise InvalidArgument(
                f'gradient for {name} is {grads[name].shape}, parameter is {params[name].shape}'
            )
        if not np.isfinite(grads[name]).all():
            raise TrainingError(f'non-finite gradient for parameter {name}')

    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    step_size = config.learning_rate / bias1
    for name, value in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(value))
        v = state.v.setdefault(name, np.zeros_like(value))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        value -= step_size * m / (np.sqrt(v / bias2) + state.eps)
    return state


def evaluate(model: DgfModel, dataset: list[tuple[Tensor, Tensor]]) -> float:
    """Mean full-resolution l2 loss of the model over the dataset."""
    total = 0.0
    for image, target in dataset:
        output, _ = dgf_forward(model, image)
        loss, _ = l2_loss(output, target)
        total += loss
    return total / len(dataset)


def train_dgf(
    model: DgfModel,
    dataset: list[tuple[Tensor, Tensor]],
    config: TrainConfig = TrainConfig(),
) -> TrainResult:
    """Train the model with Adam, one sample per step, in a seeded shuffled order.

    With config.detach_guided_layer only C_l is trained, against the target
    downsampled to I_l's size, and the guided filter acts as post-processing.

    losses[k] is the training objective averaged over the dataset, each
    sample counted at the loss it had when last visited (step k included),
    so a zero learning rate yields a constant history.

    Raises:
        TrainingError: if the loss becomes NaN or infinite.
    """
    if not dataset:
        raise InvalidArgument('dataset is empty')
    for image, target in dataset:
        check_same_shape(image, dataset[0][0], 'training inputs')
        check_same_shape(target, dataset[0][1], 'training targets')

    rng = np.random.default_rng(config.seed)
    if config.detach_guided_layer:
        params = {f'c_l.{name}': value for name, value in model.c_l.parameters().items()}
    else:
        params = model.parameters()
    state = AdamState()
    initial_loss = evaluate(model, dataset)
    logger.info('training %d steps, lr %g, initial loss %.6g', config.steps, config.learning_rate, initial_loss)

    step_fn = _low_res_step if config.detach_guided_layer else _full_step
    loss_fn = _low_res_loss if config.detach_guided_layer else _full_loss
    latest = np.array([loss_fn(model, image, target) for image, target in dataset]) if config.steps else None
    losses = []
    order = np.arange(len(dataset))
    for step in range(config.steps):
        if step % len(dataset) == 0:
            order = rng.permutation(len(dataset))
        sample = int(order[step % len(dataset)])
        image, target = dataset[sample]
        try:
            loss, grads = step_fn(model, image, target)
        except DegenerateWindowError:
            raise
        except DomainError as exc:
            raise TrainingError(f'training diverged at step {step}: {exc}') from exc
        if not math.isfinite(loss):
            raise TrainingError(f'loss diverged at step {step}')
        adam_step(params, grads, state, config)
        latest[sample] = loss
        losses.append(float(np.mean(latest)))
        if config.log_every and (step + 1) % config.log_every == 0:
            logger.info('step %d/%d loss %.6g', step + 1, config.steps, losses[-1])

    final_loss = evaluate(model, dataset)
    logger.info('final loss %.6g (initial %.6g)', final_loss, initial_loss)
    return TrainResult(model=model, losses=losses, initial_loss=initial_loss, final_loss=final_loss)


def build_model(
    channels: int = 3,
    guidance: str = 'learned',
    seed: int = 0,
    guidance_channels: int = DEFAULT_GUIDANCE_CHANNELS,
    guidance_kernel: int = 1,
    width: int = 24,
    dilations: tuple[int, ...] = (1, 2),
    gf_params: GuidedFilterParams = GuidedFilterParams(),
    low_res_short_side: int | None = DEFAULT_LOW_RES_SHORT_SIDE,
    init: str = 'identity',
) -> DgfModel:
    """Small DGF model for desk-scale runs.

    guidance='learned' gives the DGF configuration, guidance='mean' the
    fixed channel-mean guide of DGF_b.
    """
    rng = np.random.default_rng(seed)
    c_l = context_aggregation_net(channels, channels, width=width, dilations=dilations, rng=rng, init=init)
    if guidance == 'learned':
        f_net = guidance_net(
            channels, channels, channels=guidance_channels, kernel=guidance_kernel, rng=rng, init=init,
        )
    elif guidance == 'mean':
        f_net = ChannelMeanGuidance(channels, channels)
    else:
        raise InvalidArgument(f"guidance must be 'learned' or 'mean', got {guidance!r}")
    return DgfModel(c_l=c_l, f_net=f_net, gf_params=gf_params, low_res_short_side=low_res_short_side)


def _full_step(model: DgfModel, image: Tensor, target: Tensor) -> tuple[float, dict[str, np.ndarray]]:
    output, tape = dgf_forward(model, image)
    loss, d_output = l2_loss(output, target)
    return loss, dgf_backward(model, tape, d_output)


def _full_loss(model: DgfModel, image: Tensor, target: Tensor) -> float:
    output, _ = dgf_forward(model, image)
    return l2_loss(output, target)[0]


def _low_res_forward(model: DgfModel, image: Tensor, target: Tensor):
    height, width = model.low_res_dims(image.height, image.width)
    image_low = bilinear_resize(image, height, width)
    target_low = bilinear_resize(target, height, width)
    o_low, c_tape = model.c_l.forward(image_low)
    loss, d_o_low = l2_loss(o_low, target_low)
    return loss, d_o_low, c_tape


def _low_res_step(model: DgfModel, image: Tensor, target: Tensor) -> tuple[float, dict[str, np.ndarray]]:
    loss, d_o_low, c_tape = _low_res_forward(model, image, target)
    _, c_grads = model.c_l.backward(c_tape, d_o_low)
    return loss, {f'c_l.{name}': value for name, value in c_grads.items()}


def _low_res_loss(model: DgfModel, image: Tensor, target: Tensor) -> float:
    return _low_res_forward(model, image, target)[0]


def _as_grid(value: np.ndarray) -> np.ndarray:
    shape = value.shape
    rows = shape[0] if shape else 1
    cols = shape[1] if len(shape) > 1 else 1
    return value.reshape(rows, cols, -1)
