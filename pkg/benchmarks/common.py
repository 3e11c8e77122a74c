import numpy as np

from ffdvlc.channel import VlcScene
from ffdvlc.dataset import SceneRanges, generate_dataset
from ffdvlc.imaging import add_awgn
from ffdvlc.model import ModelConfig, init_params
from ffdvlc.tensor import ConvLayerParams
from ffdvlc.utils import make_rng


def conv_inputs(batch, channels, size, seed=0):
    rng = make_rng(seed)
    x = rng.standard_normal((batch, channels, size, size)).astype(np.float32)
    params = ConvLayerParams(
        weights=rng.standard_normal((channels, channels, 3, 3)).astype(
            np.float32
        ),
        bias=np.zeros(channels, dtype=np.float32),
    )
    return x, params


def noisy_channel_image(sigma_o=25, seed=0):
    (record,) = generate_dataset(VlcScene(), 1, seed=seed, ranges=SceneRanges())
    return record.clean_image, add_awgn(record.clean_image, sigma_o, seed)


def model(depth=15, features=64):
    return init_params(ModelConfig(depth=depth, features=features), seed=0)


__all__ = ["conv_inputs", "noisy_channel_image", "model"]
