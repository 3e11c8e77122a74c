import numpy as np
import pytest

from ffdvlc.imaging import NoisyChannelImage
from ffdvlc.model import (
    CHECKPOINT_MAGIC,
    ForwardState,
    ModelConfig,
    NoiseLevelMap,
    backward,
    build_input,
    decode_checkpoint,
    denoise,
    encode_checkpoint,
    forward,
    init_params,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)
from ffdvlc.utils import (
    ArtifactMissingError,
    DomainError,
    FormatError,
    ShapeError,
    StateError,
    make_rng,
)

tiny = ModelConfig(depth=3, features=4)


def test_default_parameter_count():
    config = ModelConfig()
    assert parameter_count(config) == 486980
    assert init_params(config, seed=0).num_parameters() == 486980
    assert config.receptive_field == 62


def test_config_validation():
    with pytest.raises(DomainError):
        ModelConfig(depth=2)
    with pytest.raises(DomainError):
        ModelConfig(features=0)


def test_layer_layout():
    params = init_params(tiny, seed=0)
    names = list(params.trainable())
    assert names == [
        "layer0.conv.weight",
        "layer0.conv.bias",
        "layer1.conv.weight",
        "layer1.conv.bias",
        "layer1.bn.gamma",
        "layer1.bn.beta",
        "layer2.conv.weight",
        "layer2.conv.bias",
    ]
    ops = [name for name, _ in params.named_operations()]
    assert ops == [
        "layer0.conv",
        "layer0.relu",
        "layer1.conv",
        "layer1.bn",
        "layer1.relu",
        "layer2.conv",
    ]
    assert params.trainable()["layer0.conv.weight"].shape == (4, 5, 3, 3)
    assert params.trainable()["layer2.conv.weight"].shape == (4, 4, 3, 3)


def test_init_is_seeded():
    a = init_params(tiny, seed=3).trainable()
    b = init_params(tiny, seed=3).trainable()
    c = init_params(tiny, seed=4).trainable()
    for name in a:
        np.testing.assert_array_equal(a[name], b[name])
    assert not np.array_equal(a["layer0.conv.weight"], c["layer0.conv.weight"])


def test_init_statistics():
    params = init_params(ModelConfig(), seed=0)
    w = params.layers[0].conv.weights
    assert w.var() == pytest.approx(2 / (5 * 9), rel=0.2)
    for block in params.layers:
        assert not block.conv.bias.any()
        if block.bn is not None:
            assert not block.bn.beta.any()
            assert np.all(block.bn.gamma == 1)
            assert np.all(block.bn.running_var == 1)


def test_noise_level_map():
    m = NoiseLevelMap(25.0, 2, 3).array()
    assert m.shape == (1, 1, 2, 3)
    assert m.dtype == np.float32
    assert np.all(m == np.float32(25 / 255))
    with pytest.raises(DomainError):
        NoiseLevelMap(-1.0, 2, 2)


def test_build_input_layout():
    params = init_params(tiny, seed=0)
    x = np.arange(16.0).reshape(4, 4)
    inp = build_input(params, x, 51.0)
    assert inp.shape == (1, 5, 2, 2)
    np.testing.assert_array_equal(inp[0, 0], x[0::2, 0::2])
    np.testing.assert_array_equal(inp[0, 3], x[1::2, 1::2])
    np.testing.assert_allclose(inp[0, 4], 0.2)


def test_build_input_per_item_sigma():
    params = init_params(tiny, seed=0)
    x = np.zeros((2, 1, 4, 4))
    inp = build_input(params, x, [0.0, 255.0])
    assert np.all(inp[0, 4] == 0)
    assert np.all(inp[1, 4] == 1)
    with pytest.raises(ShapeError, match="sigmas"):
        build_input(params, x, [1.0, 2.0, 3.0])


def test_forward_shapes():
    params = init_params(tiny, seed=0)
    img = make_rng(1).random((8, 6)).astype(np.float32)
    out = forward(params, img, 25)
    assert out.shape == (8, 6)
    assert out.dtype == np.float32
    batch = make_rng(2).random((3, 1, 8, 6)).astype(np.float32)
    assert forward(params, batch, 25).shape == (3, 1, 8, 6)
    noisy = NoisyChannelImage(pixels=img, sigma_o=10.0)
    np.testing.assert_array_equal(denoise(params, noisy, 25), out)


def test_forward_rejects_bad_shapes():
    params = init_params(tiny, seed=0)
    with pytest.raises(ShapeError, match="even"):
        forward(params, np.zeros((5, 6), dtype=np.float32), 25)
    with pytest.raises(ShapeError):
        forward(params, np.zeros((2, 4, 4), dtype=np.float32), 25)
    with pytest.raises(ShapeError, match="image channel"):
        forward(params, np.zeros((1, 2, 4, 4), dtype=np.float32), 25)


def test_sigma_changes_output():
    params = init_params(tiny, seed=0)
    img = make_rng(1).random((8, 8)).astype(np.float32)
    assert not np.array_equal(denoise(params, img, 5), denoise(params, img, 50))


def test_inference_is_deterministic():
    params = init_params(tiny, seed=0)
    img = make_rng(1).random((8, 8)).astype(np.float32)
    np.testing.assert_array_equal(denoise(params, img, 15), denoise(params, img, 15))


def test_backward_needs_train_state():
    params = init_params(tiny, seed=0)
    x = make_rng(1).random((2, 1, 8, 8))
    with pytest.raises(StateError):
        backward(params, None, np.zeros((2, 1, 8, 8)))
    state = ForwardState()
    forward(params, x, 25, mode="inference", state=state)
    with pytest.raises(StateError, match="train-mode"):
        backward(params, state, np.zeros((2, 1, 8, 8)))


@pytest.mark.parametrize("trial", range(20))
def test_end_to_end_gradient(trial):
    rng = make_rng(500, trial)
    params = init_params(tiny, seed=trial).astype(np.float64)
    for block in params.layers:
        block.conv.bias[:] = rng.standard_normal(block.conv.bias.shape) * 0.1
    x = rng.random((2, 1, 8, 8))
    sigmas = rng.uniform(0, 55, size=2)
    R = rng.standard_normal((2, 1, 8, 8))

    def loss():
        return float(np.sum(forward(params, x, sigmas, mode="train") * R))

    state = ForwardState()
    forward(params, x, sigmas, mode="train", state=state)
    grads = backward(params, state, R)
    trainable = params.trainable()
    assert list(grads) == list(trainable)
    # BN removes any per-channel shift, so these biases have zero gradient
    shifted_away = {
        f"layer{i}.conv.bias"
        for i, block in enumerate(params.layers)
        if block.bn is not None
    }

    eps = 1e-6
    for name, arr in trainable.items():
        flat = arr.reshape(-1)
        picks = rng.choice(flat.size, size=min(flat.size, 12), replace=False)
        numeric = []
        for i in picks:
            orig = flat[i]
            flat[i] = orig + eps
            plus = loss()
            flat[i] = orig - eps
            minus = loss()
            flat[i] = orig
            numeric.append((plus - minus) / (2 * eps))
        numeric = np.array(numeric)
        analytic = grads[name].reshape(-1)[picks]
        if name in shifted_away:
            assert np.abs(numeric).max() < 1e-6, name
            assert np.abs(analytic).max() < 1e-10, name
            continue
        scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-6)
        assert np.abs(numeric - analytic).max() / scale < 1e-3, name


def test_single_image_backward():
    params = init_params(tiny, seed=0).astype(np.float64)
    x = make_rng(1).random((8, 8))
    state = ForwardState()
    out = forward(params, x, 10, mode="train", state=state)
    assert out.shape == (8, 8)
    grads = backward(params, state, np.ones((8, 8)))
    assert grads["layer0.conv.weight"].shape == (4, 5, 3, 3)


def test_params_astype():
    params = init_params(tiny, seed=0)
    wide = params.astype(np.float64)
    for name, arr in wide.trainable().items():
        assert arr.dtype == np.float64
        np.testing.assert_array_equal(arr, params.trainable()[name])
    assert wide.layers[1].bn.running_var.dtype == np.float64
    wide.layers[0].conv.bias[:] = 1.0
    assert not params.layers[0].conv.bias.any()


def test_zero_last_layer_gives_zero_output():
    params = init_params(tiny, seed=0)
    params.layers[-1].conv.weights[:] = 0
    params.layers[-1].conv.bias[:] = 0
    img = make_rng(1).random((8, 8)).astype(np.float32)
    assert not denoise(params, img, 25).any()


def test_zero_loss_gradient_gives_zero_gradients():
    params = init_params(tiny, seed=0).astype(np.float64)
    state = ForwardState()
    x = make_rng(1).random((2, 1, 8, 8))
    forward(params, x, 25, mode="train", state=state)
    grads = backward(params, state, np.zeros((2, 1, 8, 8)))
    for name, grad in grads.items():
        assert not grad.any(), name


def test_noise_level_reaches_first_layer_gradient():
    params = init_params(tiny, seed=0).astype(np.float64)
    x = make_rng(1).random((2, 1, 8, 8))
    R = make_rng(2).standard_normal((2, 1, 8, 8))
    weight_grads = {}
    for sigma in (0, 50):
        state = ForwardState()
        forward(params, x, sigma, mode="train", state=state)
        weight_grads[sigma] = backward(params, state, R)["layer0.conv.weight"]
    # the noise level map is input channel 4
    assert not weight_grads[0][:, 4].any()
    assert np.abs(weight_grads[50][:, 4]).max() > 0
    assert not np.allclose(weight_grads[0], weight_grads[50])


def test_doubling_sigma_only_changes_noise_map():
    params = init_params(tiny, seed=0)
    x = make_rng(1).random((8, 8))
    low = build_input(params, x, 20.0)
    high = build_input(params, x, 40.0)
    np.testing.assert_array_equal(low[:, :4], high[:, :4])
    np.testing.assert_allclose(high[:, 4], 2 * low[:, 4])


@pytest.mark.parametrize("size", [128, 256])
def test_full_size_output_shape(size):
    params = init_params(ModelConfig(), seed=0)
    img = make_rng(size).random((size, size)).astype(np.float32)
    out = denoise(params, img, 25)
    assert out.shape == (size, size)
    assert out.dtype == np.float32


def test_checkpoint_round_trip(tmp_path):
    params = init_params(tiny, seed=5)
    path = tmp_path / "model.ffdn"
    save_checkpoint(params, tiny, path)
    data = path.read_bytes()
    assert data[:4] == CHECKPOINT_MAGIC
    assert int.from_bytes(data[4:8], "little") == 1
    loaded, config = load_checkpoint(path)
    assert config == tiny
    for name, arr in params.trainable().items():
        np.testing.assert_array_equal(loaded.trainable()[name], arr)
    img = make_rng(1).random((8, 8)).astype(np.float32)
    np.testing.assert_array_equal(denoise(loaded, img, 15), denoise(params, img, 15))


def test_checkpoint_resave_is_identical(tmp_path):
    first = tmp_path / "a.ffdn"
    second = tmp_path / "b.ffdn"
    save_checkpoint(init_params(tiny, seed=5), tiny, first)
    loaded, config = load_checkpoint(first)
    save_checkpoint(loaded, config, second)
    assert first.read_bytes() == second.read_bytes()


def test_default_checkpoint_layers():
    config = ModelConfig(depth=15, features=64)
    data = encode_checkpoint(init_params(config, seed=0))
    loaded, decoded = decode_checkpoint(data)
    assert decoded == config
    assert decoded.depth == 15
    assert len(loaded.layers) == 15
    assert loaded.num_parameters() == 486980


def test_checkpoint_keeps_running_statistics():
    params = init_params(tiny, seed=5)
    forward(params, make_rng(0).random((2, 1, 8, 8)).astype(np.float32), 10, mode="train")
    loaded, _ = decode_checkpoint(encode_checkpoint(params))
    np.testing.assert_array_equal(
        loaded.layers[1].bn.running_mean, params.layers[1].bn.running_mean
    )
    np.testing.assert_array_equal(
        loaded.layers[1].bn.running_var, params.layers[1].bn.running_var
    )


def test_checkpoint_errors(tmp_path):
    data = encode_checkpoint(init_params(tiny, seed=0))
    with pytest.raises(FormatError, match="magic"):
        decode_checkpoint(b"XXXX" + data[4:])
    with pytest.raises(FormatError, match="version"):
        decode_checkpoint(data[:4] + (2).to_bytes(4, "little") + data[8:])
    with pytest.raises(FormatError, match="truncated"):
        decode_checkpoint(data[:-3])
    with pytest.raises(FormatError, match="trailing"):
        decode_checkpoint(data + b"\0")
    with pytest.raises(ArtifactMissingError, match="Checkpoint not found"):
        load_checkpoint(tmp_path / "missing.ffdn")
    with pytest.raises(FormatError):
        save_checkpoint(init_params(tiny, seed=0), ModelConfig(), tmp_path / "m")


def test_checkpoint_architecture_mismatch():
    data = bytearray(encode_checkpoint(init_params(tiny, seed=0)))
    # Claim 8 features while the layers hold 4
    data[12:16] = (8).to_bytes(4, "little")
    with pytest.raises(FormatError, match="does not match"):
        decode_checkpoint(bytes(data))
