import numpy as np
import pytest

from cloudseg.encoder import VARIANTS, parameter_count, variant_config
from cloudseg.model import (
    DecoderConfig,
    build_efficientunet,
    decoder_block,
    decoder_parameter_count,
    model_forward,
    prepare_input,
    trainable_count,
)
from cloudseg.tensor import ShapeError, softmax_channels

from oracles import oracle_decoder_params


@pytest.fixture(scope="module")
def b0():
    return build_efficientunet("b0", init="random", seed=0)


@pytest.fixture(scope="module")
def small_batch():
    return np.random.default_rng(7).random((2, 3, 64, 96), dtype=np.float32)


class TestForward:
    def test_output_shape(self, b0, small_batch):
        assert model_forward(b0, small_batch).shape == (2, 4, 64, 96)

    def test_probabilities(self, b0, small_batch):
        p = softmax_channels(model_forward(b0, small_batch))
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-5)

    def test_deterministic(self, b0, small_batch):
        np.testing.assert_array_equal(model_forward(b0, small_batch), model_forward(b0, small_batch))

    def test_batch_independence(self, b0, small_batch):
        both = model_forward(b0, small_batch)
        np.testing.assert_allclose(model_forward(b0, small_batch[1:]), both[1:], rtol=1e-5, atol=1e-5)

    def test_zeros_model_gives_uniform(self, small_batch):
        model = build_efficientunet("b0", init="zeros")
        np.testing.assert_array_equal(softmax_channels(model_forward(model, small_batch)), 0.25)

    def test_same_seed_same_weights(self):
        a = build_efficientunet("b1", seed=3)
        b = build_efficientunet("b1", init="seeded-random", seed=3)
        assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)
        c = build_efficientunet("b1", seed=4)
        assert not np.array_equal(a.weights["head.weight"], c.weights["head.weight"])

    @pytest.mark.parametrize("shape", [(1, 3, 100, 96), (1, 3, 64, 70), (1, 1, 64, 64)])
    def test_bad_input(self, b0, shape):
        with pytest.raises(ShapeError):
            model_forward(b0, np.zeros(shape, np.float32))

    def test_weights_read_only(self, b0):
        with pytest.raises(TypeError):
            b0.weights["head.bias"] = np.zeros(4)

    def test_unknown_init(self):
        with pytest.raises(ValueError, match="init"):
            build_efficientunet("b0", init="imagenet")


class TestDecoder:
    def test_block_doubles(self):
        rng = np.random.default_rng(0)
        w = {"conv0.weight": rng.standard_normal((8, 6, 3, 3)).astype(np.float32)}
        w.update({f"conv0.bn.{f}": np.full(8, v, np.float32)
                  for f, v in (("gamma", 1), ("beta", 0), ("mean", 0), ("var", 1))})
        out = decoder_block(np.ones((1, 4, 3, 5), np.float32), np.ones((1, 2, 6, 10), np.float32), w, 8)
        assert out.shape == (1, 8, 6, 10)
        assert out.min() >= 0

    def test_skip_mismatch(self):
        with pytest.raises(ShapeError, match="skip"):
            decoder_block(np.ones((1, 4, 3, 5), np.float32), np.ones((1, 2, 6, 9), np.float32), {}, 8)

    @pytest.mark.parametrize("variant", list(VARIANTS))
    def test_count_matches_oracle(self, variant):
        assert decoder_parameter_count(variant_config(variant)) == oracle_decoder_params(variant)

    @pytest.mark.parametrize("variant", list(VARIANTS))
    def test_contracting_path_larger(self, variant):
        enc = variant_config(variant)
        assert decoder_parameter_count(enc) < parameter_count(enc)

    def test_trainable_count_is_sum(self, b0):
        enc = b0.encoder
        assert trainable_count(b0) == parameter_count(enc) + decoder_parameter_count(enc)

    def test_custom_widths(self):
        dec = DecoderConfig(channels=(64, 32, 16, 16, 8), convs_per_block=1)
        model = build_efficientunet("b0", dec=dec, init="random")
        assert model.weights["head.weight"].shape == (4, 8, 1, 1)
        out = model_forward(model, np.zeros((1, 3, 32, 64), np.float32))
        assert out.shape == (1, 4, 32, 64)


class TestPrepareInput:
    def test_scaled_and_resized(self):
        img = np.full((70, 105, 3), 255, np.uint8)
        x = prepare_input(img, target=(64, 96))
        assert x.shape == (1, 3, 64, 96) and x.dtype == np.float32
        np.testing.assert_allclose(x, 1.0, atol=1e-6)

    def test_grayscale_expanded(self):
        x = prepare_input(np.zeros((32, 32), np.uint8), target=(32, 32))
        assert x.shape == (1, 3, 32, 32)

    def test_channel_order(self):
        img = np.zeros((32, 32, 3), np.uint8)
        img[..., 2] = 51
        x = prepare_input(img, target=(32, 32))
        np.testing.assert_allclose(x[0, :, 0, 0], [0, 0, 0.2], atol=1e-6)

    @pytest.mark.parametrize("bad", [np.zeros((0, 5, 3)), np.zeros((4, 4, 2)), np.zeros((2, 2, 2, 3))])
    def test_rejects(self, bad):
        with pytest.raises(ShapeError):
            prepare_input(bad, target=(32, 32))

    def test_rejects_target(self):
        with pytest.raises(ShapeError, match="multiples of 32"):
            prepare_input(np.zeros((10, 10, 3)), target=(40, 64))
