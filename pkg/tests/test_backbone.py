import numpy as np
import pytest

from rvhash import tensor as T
from rvhash.backbone import (
    backbone_backward,
    backbone_forward,
    init_backbone,
    output_shape,
)
from rvhash.errors import ShapeError


def test_mnist_shape():
    rng = T.make_rng(0)
    p = init_backbone(1, rng)
    fm = backbone_forward(rng.normal(size=(2, 28, 28, 1)), p)
    assert fm.shape == (2, 7, 7, 64)


def test_output_shape_formula_even_inputs():
    # ceil(ceil(h/2)/2) per axis; equals exact h/4 when divisible by 4
    def ceil2(v):
        return (v + 1) // 2

    for h in range(8, 65, 2):
        for w in (8, 16, 34, 64):
            assert output_shape(h, w) == (ceil2(ceil2(h)), ceil2(ceil2(w)), 64)
    assert output_shape(28, 28) == (7, 7, 64)
    assert output_shape(34, 34) == (9, 9, 64)


def test_shape_formula_matches_forward():
    rng = T.make_rng(1)
    p = init_backbone(1, rng)
    for h, w in [(8, 8), (10, 14), (9, 11), (28, 28)]:
        fm = backbone_forward(rng.normal(size=(1, h, w, 1)), p)
        assert fm.shape[1:] == output_shape(h, w)


def test_zero_image_zero_bias_gives_zero_map():
    p = init_backbone(1, T.make_rng(2))
    fm = backbone_forward(np.zeros((1, 12, 12, 1)), p)
    np.testing.assert_array_equal(fm, 0.0)


def test_small_spatial_dims_rejected():
    p = init_backbone(1, T.make_rng(3))
    with pytest.raises(ShapeError, match=">= 8"):
        backbone_forward(np.zeros((1, 6, 6, 1)), p)


def test_single_pixel_cotangent_hits_only_receptive_field():
    # output position (i, j) depends on inputs within a bounded window:
    # two 3x3 convs and two 2x2 pools give a 10x10 receptive field at
    # stride 4; brute force by flipping distant pixels
    rng = T.make_rng(4)
    p = init_backbone(1, rng)
    x = rng.normal(size=(1, 16, 16, 1))
    out, cache = backbone_forward(x, p, return_cache=True)
    cot = np.zeros_like(out)
    cot[0, 0, 0, 17] = 1.0
    d_x, _ = backbone_backward(cot, cache, need_input_grad=True)
    # receptive field of output (0,0): rows/cols < 10
    assert d_x[0, 10:, :, 0].any() == False  # noqa: E712
    assert d_x[0, :, 10:, 0].any() == False  # noqa: E712


def test_receptive_field_brute_force_agreement():
    rng = T.make_rng(5)
    p = init_backbone(1, rng)
    x = rng.normal(size=(1, 12, 12, 1))
    out, cache = backbone_forward(x, p, return_cache=True)
    cot = np.zeros_like(out)
    cot[0, 1, 2, 3] = 1.0
    d_x, _ = backbone_backward(cot, cache, need_input_grad=True)
    yij = out[0, 1, 2, 3]
    for (r, c) in [(0, 0), (11, 11), (0, 11)]:
        bumped = x.copy()
        bumped[0, r, c, 0] += 0.5
        delta = backbone_forward(bumped, p)[0, 1, 2, 3] - yij
        if d_x[0, r, c, 0] == 0.0:
            # outside the receptive field: bumping must not move the output
            # (unless max-pool winners changed, which a far pixel cannot do)
            within = abs(delta) < 1e-9
            assert within


def test_init_determinism_and_he_scale():
    a = init_backbone(1, T.make_rng(6))
    b = init_backbone(1, T.make_rng(6))
    np.testing.assert_array_equal(a.conv1_w, b.conv1_w)
    np.testing.assert_array_equal(a.conv2_w, b.conv2_w)
    assert a.conv1_b.any() == False  # noqa: E712
    # std should be near sqrt(2 / fan_in)
    assert np.std(a.conv2_w) == pytest.approx(np.sqrt(2.0 / (9 * 32)), rel=0.1)
