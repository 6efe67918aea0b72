import numpy as np
import pytest

from swinfir.errors import ConfigError, ShapeError
from swinfir.model import RGB_MEAN, ModelConfig, build, count_params, forward
from swinfir.nn import Conv2d, Module

# Recorded once from the toy config (seed 0, float64) on a fixed input; any
# change to initialisation order or forward arithmetic shows up here.
GOLDEN_MEAN = 0.40879173884480385
GOLDEN_SUMSQ = 190.6273665798088
GOLDEN_CORNER = [0.5106796896936853, 0.605583046278537, 0.24575922530351244]


def conv(cin, cout, k):
    return cin * cout * k * k + cout


def toy_closed_form(dim=24, depths=(2, 2), ws=6, heads=4, ratio=2, scale=2):
    ln = 2 * dim
    hidden = int(dim * ratio)
    stl = ln + (2 * ws - 1) ** 2 * heads + conv(dim, 3 * dim, 1) + conv(dim, dim, 1) + ln \
        + conv(dim, hidden, 1) + conv(hidden, dim, 1)
    sfb = 2 * conv(dim, dim, 3) + conv(dim, dim, 1) + conv(2 * dim, 2 * dim, 1) + conv(dim, dim, 1) \
        + conv(2 * dim, dim, 1)
    body = sum(d * stl + sfb for d in depths)
    return conv(3, dim, 3) + ln + body + ln + conv(dim, dim, 3) + conv(dim, 3 * scale * scale, 3)


def test_single_conv_count():
    class One(Module):
        def __init__(self):
            super().__init__()
            self.c = Conv2d(3, 60, 3)

    assert count_params(One()) == 3 * 60 * 9 + 60 == 1680


def test_toy_count_matches_closed_form():
    m = build(ModelConfig.toy())
    assert count_params(m) == toy_closed_form()
    assert count_params(m, exclude_position_bias=True) == toy_closed_form() - 4 * 121 * 4


@pytest.mark.parametrize("scale,published", [(2, 872_000), (3, 880_000), (4, 891_000)])
def test_lightweight_count_within_two_percent(scale, published):
    n = count_params(build(ModelConfig.lightweight(scale)), exclude_position_bias=True)
    assert abs(n - published) / published < 0.02


def test_hourglass_is_cheaper_than_sfb():
    base = ModelConfig.lightweight(2)
    plain = ModelConfig.from_dict({**base.to_dict(), "block_variant": "SFB"})
    assert count_params(build(base)) < count_params(build(plain))


def test_same_seed_same_parameters():
    a, b = build(ModelConfig.toy(), seed=7), build(ModelConfig.toy(), seed=7)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)
    c = build(ModelConfig.toy(), seed=8)
    assert not np.array_equal(a.conv_first.weight.data, c.conv_first.weight.data)


def test_parameter_names_are_unique_and_dotted():
    names = [n for n, _ in build(ModelConfig.toy()).named_parameters()]
    assert len(names) == len(set(names))
    assert "layers.0.layers.1.attn.relative_position_bias_table" in names


@pytest.mark.parametrize("upsampler", ["pixelshuffledirect", "pixelshuffle"])
def test_shape_contract_x4(upsampler):
    cfg = ModelConfig(scale=4, embed_dim=12, rstb_depths=[1], window_size=4, heads=2, upsampler=upsampler,
                      upsample_features=8)
    out = build(cfg)(np.random.default_rng(0).uniform(size=(1, 3, 20, 24)).astype(np.float32))
    assert out.shape == (1, 3, 80, 96)


def test_x3_classical_tail():
    cfg = ModelConfig(scale=3, embed_dim=12, rstb_depths=[1], window_size=4, heads=2, upsampler="pixelshuffle",
                      upsample_features=8)
    assert build(cfg)(np.zeros((2, 3, 5, 6), dtype=np.float32)).shape == (2, 3, 15, 18)


def test_zeroed_tail_outputs_its_bias():
    m = build(ModelConfig.toy(), dtype=np.float64)
    m.upsample.weight.data[:] = 0
    bias = np.random.default_rng(0).normal(size=m.upsample.bias.shape)
    m.upsample.bias.data = bias.copy()
    out = m(np.random.default_rng(1).uniform(size=(1, 3, 6, 6))).data
    # pixel shuffle places channel c*4 + dy*2 + dx at (2i+dy, 2j+dx); the mean is added back afterwards
    for c in range(3):
        for dy in range(2):
            for dx in range(2):
                np.testing.assert_allclose(out[0, c, dy::2, dx::2], bias[c * 4 + dy * 2 + dx] + RGB_MEAN[c],
                                           atol=1e-14)


def test_golden_output():
    m = build(ModelConfig.toy(), seed=0, dtype=np.float64)
    y = forward(m, np.random.default_rng(123).uniform(size=(1, 3, 7, 9))).data
    assert y.shape == (1, 3, 14, 18)
    assert y.mean() == pytest.approx(GOLDEN_MEAN, abs=1e-6)
    assert (y ** 2).sum() == pytest.approx(GOLDEN_SUMSQ, abs=1e-6 * y.size)
    np.testing.assert_allclose(y[0, :, 0, 0], GOLDEN_CORNER, atol=1e-6)


def test_forward_is_deterministic():
    m = build(ModelConfig.toy())
    x = np.random.default_rng(2).uniform(size=(2, 3, 6, 8)).astype(np.float32)
    np.testing.assert_array_equal(m(x).data, m(x).data)


def test_predict_clamps_and_keeps_no_graph():
    m = build(ModelConfig.toy())
    y = m.predict(np.random.default_rng(3).uniform(size=(1, 3, 6, 6)))
    assert isinstance(y, np.ndarray) and y.min() >= 0 and y.max() <= 1


def test_non_divisible_input_is_padded_then_cropped():
    m = build(ModelConfig.toy(), dtype=np.float64)
    x = np.random.default_rng(4).uniform(size=(1, 3, 7, 11))
    assert m(x).shape == (1, 3, 14, 22)


def test_wrong_channel_count():
    with pytest.raises(ShapeError):
        build(ModelConfig.toy())(np.zeros((1, 1, 6, 6), dtype=np.float32))


@pytest.mark.parametrize("change", [
    {"scale": 5}, {"rstb_depths": []}, {"heads": 5}, {"window_size": 0},
    {"block_variant": "X"}, {"layer_variant": "X"}, {"upsampler": "X"},
    {"block_variant": "HourglassSFB", "embed_dim": 25, "heads": 5}, {"mlp_ratio": 0},
])
def test_invalid_configs(change):
    with pytest.raises(ConfigError):
        build(ModelConfig.from_dict({**ModelConfig.toy().to_dict(), **change}))


def test_config_round_trip():
    cfg = ModelConfig.lightweight(3)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
