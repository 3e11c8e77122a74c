"""FFDNet-style denoiser conditioned on a noise level map.

The noisy image is split into four half-resolution sub-images, a constant
map holding ``sigma / 255`` is appended as a fifth channel, a plain CNN
(Conv+ReLU, Conv+BN+ReLU x (depth - 2), Conv) maps the result to four
channels and the sub-images are reassembled into the denoised image. The
network predicts the clean image directly (no residual connection).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from ovld import Dependent, ovld, recurse

from .binio import BinaryReader, BinaryWriter
from .imaging import ChannelImage, NoisyChannelImage
from .tensor import (
    BatchNormParams,
    ConvLayerParams,
    ReLU,
    batchnorm_backward,
    batchnorm_forward,
    concat_channels,
    conv2d_backward,
    conv2d_forward,
    pixel_shuffle,
    pixel_unshuffle,
    receptive_field,
    relu_backward,
    relu_forward,
)
from .utils import (
    ArtifactMissingError,
    DomainError,
    FormatError,
    ShapeError,
    StateError,
    make_rng,
)

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"FFDN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 15
    features: int = 64
    image_channels: int = 1

    def __post_init__(self):
        if self.depth < 3:
            raise DomainError(f"depth={self.depth} must be at least 3")
        if self.features < 1:
            raise DomainError(f"features={self.features} must be positive")
        if self.image_channels < 1:
            raise DomainError(
                f"image_channels={self.image_channels} must be positive"
            )

    @property
    def input_channels(self):
        return 4 * self.image_channels + 1

    @property
    def output_channels(self):
        return 4 * self.image_channels

    @property
    def receptive_field(self):
        return receptive_field(self.depth)


def parameter_count(config):
    """Number of trainable parameters, from the architecture alone."""
    f = config.features
    first = config.input_channels * f * 9 + f
    middle = (config.depth - 2) * (f * f * 9 + f + 2 * f)
    last = f * config.output_channels * 9 + config.output_channels
    return first + middle + last


@dataclass
class LayerBlock:
    """One network layer: a convolution, optionally BN, optionally ReLU."""

    conv: ConvLayerParams
    bn: BatchNormParams = None
    relu: bool = True


@dataclass
class ModelParams:
    config: ModelConfig
    layers: list = field(default_factory=list)

    def named_operations(self):
        """Yield ``(name, operation)`` in application order."""
        for i, block in enumerate(self.layers):
            yield f"layer{i}.conv", block.conv
            if block.bn is not None:
                yield f"layer{i}.bn", block.bn
            if block.relu:
                yield f"layer{i}.relu", ReLU()

    def trainable(self):
        """Ordered mapping from parameter name to (shared) array."""
        result = {}
        for i, block in enumerate(self.layers):
            result[f"layer{i}.conv.weight"] = block.conv.weights
            result[f"layer{i}.conv.bias"] = block.conv.bias
            if block.bn is not None:
                result[f"layer{i}.bn.gamma"] = block.bn.gamma
                result[f"layer{i}.bn.beta"] = block.bn.beta
        return result

    def num_parameters(self):
        return sum(arr.size for arr in self.trainable().values())

    def astype(self, dtype):
        """Copy of these parameters with every array converted to ``dtype``."""
        layers = []
        for block in self.layers:
            conv = ConvLayerParams(
                weights=block.conv.weights.astype(dtype),
                bias=block.conv.bias.astype(dtype),
            )
            bn = None
            if block.bn is not None:
                bn = BatchNormParams(
                    gamma=block.bn.gamma.astype(dtype),
                    beta=block.bn.beta.astype(dtype),
                    running_mean=block.bn.running_mean.astype(dtype),
                    running_var=block.bn.running_var.astype(dtype),
                    epsilon=block.bn.epsilon,
                    momentum=block.bn.momentum,
                )
            layers.append(LayerBlock(conv=conv, bn=bn, relu=block.relu))
        return ModelParams(config=self.config, layers=layers)


@dataclass(frozen=True)
class NoiseLevelMap:
    """Uniform map at half resolution encoding the input noise level."""

    sigma: float
    height: int
    width: int

    def __post_init__(self):
        if self.sigma < 0:
            raise DomainError(f"sigma={self.sigma} is negative")

    def array(self, dtype=np.float32):
        """The map as a (1, 1, height, width) array on the unit scale."""
        return np.full((1, 1, self.height, self.width), self.sigma / 255.0, dtype=dtype)


def _layer_shapes(config):
    f = config.features
    yield config.input_channels, f, False, True
    for _ in range(config.depth - 2):
        yield f, f, True, True
    yield f, config.output_channels, False, False


def init_params(config, seed, dtype=np.float32):
    """He-initialized parameters: conv weights ~ N(0, 2 / (in_ch * 9)),
    zero biases, BN gamma 1, beta 0, running statistics (0, 1).
    """
    rng = make_rng(seed)
    layers = []
    for in_ch, out_ch, has_bn, relu in _layer_shapes(config):
        std = np.sqrt(2.0 / (in_ch * 9))
        weights = rng.standard_normal((out_ch, in_ch, 3, 3)) * std
        conv = ConvLayerParams(
            weights=weights.astype(dtype), bias=np.zeros(out_ch, dtype=dtype)
        )
        bn = None
        if has_bn:
            bn = BatchNormParams(
                gamma=np.ones(out_ch, dtype=dtype),
                beta=np.zeros(out_ch, dtype=dtype),
                running_mean=np.zeros(out_ch, dtype=dtype),
                running_var=np.ones(out_ch, dtype=dtype),
            )
        layers.append(LayerBlock(conv=conv, bn=bn, relu=relu))
    return ModelParams(config=config, layers=layers)


@ovld
def apply_layer(layer: ConvLayerParams, x: np.ndarray, mode: str):
    return conv2d_forward(x, layer)


@ovld
def apply_layer(layer: BatchNormParams, x: np.ndarray, mode: str):
    return batchnorm_forward(x, layer, mode)


@ovld
def apply_layer(layer: ReLU, x: np.ndarray, mode: str):
    return relu_forward(x)


@ovld
def layer_gradient(layer: ConvLayerParams, x: np.ndarray, upstream: np.ndarray):
    input_grad, weight_grad, bias_grad = conv2d_backward(x, layer, upstream)
    return input_grad, {"weight": weight_grad, "bias": bias_grad}


@ovld
def layer_gradient(layer: BatchNormParams, x: np.ndarray, upstream: np.ndarray):
    input_grad, gamma_grad, beta_grad = batchnorm_backward(x, layer, upstream)
    return input_grad, {"gamma": gamma_grad, "beta": beta_grad}


@ovld
def layer_gradient(layer: ReLU, x: np.ndarray, upstream: np.ndarray):
    return relu_backward(x, upstream), {}


@ovld
def as_batch(noisy: Dependent[np.ndarray, lambda a: a.ndim == 2]):
    return noisy[None, None], True


@ovld
def as_batch(noisy: Dependent[np.ndarray, lambda a: a.ndim == 4]):
    return noisy, False


@ovld
def as_batch(noisy: ChannelImage | NoisyChannelImage):
    return recurse(noisy.pixels)


@ovld
def as_batch(noisy: object):
    shape = getattr(noisy, "shape", None)
    raise ShapeError(
        f"Expected an (H, W) image or a (B, C, H, W) batch, got {shape}"
    )


@dataclass
class ForwardState:
    """Activations recorded by a forward pass, consumed by ``backward``."""

    mode: str = None
    inputs: list = field(default_factory=list)
    squeeze: bool = False


def noise_maps(sigma, batch, height, width, dtype):
    """Stack one ``NoiseLevelMap`` per batch item (scalar sigma broadcasts)."""
    sigmas = np.asarray(sigma, dtype=np.float64)
    if sigmas.ndim > 1 or sigmas.size not in (1, batch):
        raise ShapeError(
            f"Expected one sigma or {batch} sigmas, got shape {sigmas.shape}"
        )
    sigmas = np.broadcast_to(sigmas.reshape(-1), (batch,))
    return np.concatenate(
        [NoiseLevelMap(float(s), height, width).array(dtype) for s in sigmas]
    )


def build_input(params, noisy, sigma):
    """Unshuffled image channels followed by the noise level map channel."""
    x, _ = as_batch(noisy)
    config = params.config
    if x.shape[1] != config.image_channels:
        raise ShapeError(
            f"Expected {config.image_channels} image channel(s),"
            f" got {x.shape[1]}"
        )
    b, _, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"Image dimensions must be even, got {h}x{w}")
    maps = noise_maps(sigma, b, h // 2, w // 2, x.dtype)
    return concat_channels(pixel_unshuffle(x), maps)


def forward(params, noisy, sigma, mode="inference", state=None):
    """Denoise ``noisy`` given the input noise level ``sigma``.

    Arguments:
        params: The network parameters.
        noisy: An (H, W) image, a channel image, or a (B, 1, H, W) batch.
        sigma: Input noise level on the 0-255 scale, scalar or one per item.
        mode: ``"inference"`` or ``"train"`` (batch statistics in BN).
        state: Optional ``ForwardState`` that records activations for
            ``backward``.
    """
    _, squeeze = as_batch(noisy)
    act = build_input(params, noisy, sigma)
    if state is not None:
        state.mode = mode
        state.inputs = []
        state.squeeze = squeeze
    for _, op in params.named_operations():
        if state is not None:
            state.inputs.append(act)
        act = apply_layer(op, act, mode)
    out = pixel_shuffle(act)
    return out[0, 0] if squeeze else out


def denoise(params, noisy, sigma):
    """Inference-mode ``forward`` on one image."""
    return forward(params, noisy, sigma, mode="inference")


def backward(params, state, loss_grad):
    """Gradients of every trainable parameter, named as in ``trainable()``."""
    if state is None or not state.inputs:
        raise StateError("backward() needs the state of a recorded forward pass")
    if state.mode != "train":
        raise StateError(
            f"backward() needs a train-mode forward pass, got {state.mode!r}"
        )
    g = np.asarray(loss_grad)
    if state.squeeze:
        g = g[None, None]
    # The adjoint of a permutation is its inverse
    g = pixel_unshuffle(g)
    ops = list(params.named_operations())
    if len(ops) != len(state.inputs):
        raise StateError("Recorded state does not match these parameters")
    grads = {}
    for (name, op), x in zip(reversed(ops), reversed(state.inputs)):
        g, local = layer_gradient(op, x, g)
        for key, value in local.items():
            grads[f"{name}.{key}"] = value
    return {name: grads[name] for name in params.trainable()}


@ovld
def write_block(out: BinaryWriter, block: ConvLayerParams):
    out.array(block.weights)
    out.array(block.bias)


@ovld
def write_block(out: BinaryWriter, block: BatchNormParams):
    out.f64(block.epsilon)
    out.f64(block.momentum)
    for arr in (block.gamma, block.beta, block.running_mean, block.running_var):
        out.array(arr)


@ovld
def write_block(out: BinaryWriter, block: LayerBlock):
    out.u32(int(block.bn is not None) | (int(block.relu) << 1))
    recurse(out, block.conv)
    if block.bn is not None:
        recurse(out, block.bn)


@ovld
def read_block(t: type[ConvLayerParams], reader: BinaryReader):
    weights = reader.array()
    bias = reader.array()
    try:
        return ConvLayerParams(weights=weights, bias=bias)
    except ShapeError as exc:
        raise FormatError(f"{reader.source}: {exc}") from exc


@ovld
def read_block(t: type[BatchNormParams], reader: BinaryReader):
    epsilon = reader.f64()
    momentum = reader.f64()
    gamma, beta, mean, var = (reader.array() for _ in range(4))
    if not gamma.shape == beta.shape == mean.shape == var.shape:
        raise FormatError(f"{reader.source}: inconsistent batch-norm shapes")
    try:
        return BatchNormParams(gamma, beta, mean, var, epsilon, momentum)
    except DomainError as exc:
        raise FormatError(f"{reader.source}: {exc}") from exc


@ovld
def read_block(t: type[LayerBlock], reader: BinaryReader):
    flags = reader.u32()
    conv = recurse(ConvLayerParams, reader)
    bn = recurse(BatchNormParams, reader) if flags & 1 else None
    return LayerBlock(conv=conv, bn=bn, relu=bool(flags & 2))


def encode_checkpoint(params):
    out = BinaryWriter()
    out.raw(CHECKPOINT_MAGIC)
    out.u32(CHECKPOINT_VERSION)
    out.u32(params.config.depth)
    out.u32(params.config.features)
    out.u32(params.config.image_channels)
    for block in params.layers:
        write_block(out, block)
    return out.getvalue()


def decode_checkpoint(data, source="<bytes>"):
    reader = BinaryReader(data, source)
    reader.expect_magic(CHECKPOINT_MAGIC)
    reader.expect_version(CHECKPOINT_VERSION)
    try:
        config = ModelConfig(
            depth=reader.u32(),
            features=reader.u32(),
            image_channels=reader.u32(),
        )
    except DomainError as exc:
        raise FormatError(f"{source}: {exc}") from exc
    layers = [read_block(LayerBlock, reader) for _ in range(config.depth)]
    reader.finish()
    expected = list(_layer_shapes(config))
    for i, (block, (in_ch, out_ch, has_bn, relu)) in enumerate(
        zip(layers, expected)
    ):
        conv = block.conv
        if (conv.in_channels, conv.out_channels) != (in_ch, out_ch) or (
            (block.bn is not None) != has_bn
            or (has_bn and block.bn.channels != out_ch)
            or block.relu != relu
        ):
            raise FormatError(
                f"{source}: layer {i} does not match a depth-{config.depth},"
                f" {config.features}-feature model"
            )
    return ModelParams(config=config, layers=layers), config


def save_checkpoint(params, config, path):
    """Write parameters and architecture (weights stored as float32)."""
    if params.config != config:
        raise FormatError(
            f"Parameters were built for {params.config}, not {config}"
        )
    Path(path).write_bytes(encode_checkpoint(params))
    logger.info("Saved checkpoint %s (%d parameters)", path, params.num_parameters())


def load_checkpoint(path):
    """Return ``(params, config)`` read from ``path``."""
    path = Path(path)
    if not path.exists():
        raise ArtifactMissingError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), source=str(path))


__all__ = [
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "ModelConfig",
    "LayerBlock",
    "ModelParams",
    "NoiseLevelMap",
    "ForwardState",
    "parameter_count",
    "init_params",
    "apply_layer",
    "layer_gradient",
    "as_batch",
    "noise_maps",
    "build_input",
    "forward",
    "denoise",
    "backward",
    "encode_checkpoint",
    "decode_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
]
