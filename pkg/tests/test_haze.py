import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hazereid import haze
from hazereid.data import DatasetSplit, generate_synthetic_identities
from hazereid.errors import ConfigError, DimensionError, IngestionError
from hazereid.haze import HazeParams


def test_transmission_examples():
    assert haze.transmission(np.zeros((1, 1)), 1.5)[0, 0] == 1.0
    assert abs(haze.transmission(np.array([[0.5]]), 2.0)[0, 0] - math.exp(-1)) <= 1e-15
    assert abs(haze.transmission(np.array([[math.log(2)]]), 1.0)[0, 0] - 0.5) <= 1e-15
    with pytest.raises(ConfigError):
        haze.transmission(np.zeros((1, 1)), 0.0)


def test_compose_examples():
    J = np.random.default_rng(0).random((4, 5, 3))
    np.testing.assert_array_equal(haze.compose_haze(J, np.ones((4, 5)), 0.9), J)
    np.testing.assert_allclose(haze.compose_haze(J, np.zeros((4, 5)), 0.9), 0.9, atol=1e-15)
    val = haze.compose_haze(np.full((1, 1, 3), 0.5), np.full((1, 1), 0.5), 0.9)
    np.testing.assert_allclose(val, 0.70, atol=1e-15)
    with pytest.raises(DimensionError):
        haze.compose_haze(J, np.ones((5, 4)), 0.9)


unit = st.floats(0, 1)


@settings(max_examples=60)
@given(arrays(float, (3, 4, 3), elements=unit), arrays(float, (3, 4), elements=unit),
       st.floats(0.01, 1.0))
def test_range_and_contraction(J, t, A):
    I = haze.compose_haze(J, t, A)
    assert I.min() >= 0.0 and I.max() <= 1.0 + 1e-15
    np.testing.assert_allclose(np.abs(I - A), t[..., None] * np.abs(J - A), rtol=0, atol=1e-15)


def test_sample_beta():
    assert haze.sample_beta(HazeParams(beta_lo=1.5, beta_hi=1.5), np.random.default_rng(0)) == 1.5
    rng = np.random.default_rng(0)
    draws = np.array([haze.sample_beta(HazeParams(), rng) for _ in range(10_000)])
    assert abs(draws.mean() - 1.5) <= 0.02
    assert draws.min() >= 1.0 and draws.max() < 2.0
    a = [haze.beta_for_index(HazeParams(seed=4), i) for i in range(5)]
    assert a == [haze.beta_for_index(HazeParams(seed=4), i) for i in range(5)]


def test_params_validation():
    with pytest.raises(ConfigError):
        HazeParams(atmospheric_light=0.0)
    with pytest.raises(ConfigError):
        HazeParams(beta_lo=2.0, beta_hi=1.0)


def test_synthetic_depth():
    ramp = haze.synthetic_depth("ramp", 8, 6)
    np.testing.assert_array_equal(ramp[0], 0.0)
    np.testing.assert_array_equal(ramp[-1], 1.0)
    radial = haze.synthetic_depth("radial", 9, 9)
    assert radial[4, 4] == 0.0 and radial[0, 0] == 1.0 and radial.max() == 1.0
    np.testing.assert_array_equal(haze.synthetic_depth("constant", 3, 3, 0.4), 0.4)
    with pytest.raises(ConfigError):
        haze.synthetic_depth("fog", 3, 3)


def test_constant_zero_depth_leaves_image_clear():
    split = generate_synthetic_identities(2, 2, 2)
    hazy, _ = haze.hazify_dataset(split, "constant:0", HazeParams())
    for a, b in zip(split.samples, hazy.samples):
        np.testing.assert_array_equal(a.pixels, b.pixels)


def test_normalize_depth():
    np.testing.assert_array_equal(haze.normalize_depth(np.full((2, 2), 7.0)), 0.0)
    np.testing.assert_array_equal(haze.normalize_depth(np.array([[2.0, 4.0], [3.0, 2.0]])),
                                  [[0, 1], [0.5, 0]])


def test_depth_png_round_trip(tmp_path):
    d = haze.synthetic_depth("ramp", 8, 8)  # spans [0, 1] so normalization is a no-op
    haze.write_depth_png(tmp_path / "d.png", d)
    np.testing.assert_allclose(haze.read_depth_png(tmp_path / "d.png"), d, atol=1e-4)


def test_hazify_pairs_and_names():
    split = generate_synthetic_identities(3, 4, 2, seed=1)
    hazy, betas = haze.hazify_dataset(split, "ramp", HazeParams(seed=2))
    assert len(hazy) == len(split) == len(betas)
    for c, h in zip(split.samples, hazy.samples):
        assert (c.person_id, c.camera_id, c.seq) == (h.person_id, h.camera_id, h.seq)
        assert h.domain == "hazy" and h.name.endswith("_hazy.png")
    empty, b = haze.hazify_dataset(DatasetSplit([], "train"), "ramp", HazeParams())
    assert len(empty) == 0 and b == []


def test_hazify_worker_independent():
    split = generate_synthetic_identities(4, 4, 2, seed=3)
    one, b1 = haze.hazify_dataset(split, "radial", HazeParams(seed=5), workers=1)
    four, b4 = haze.hazify_dataset(split, "radial", HazeParams(seed=5), workers=4)
    assert b1 == b4
    assert one.flat_pixels().tobytes() == four.flat_pixels().tobytes()


def test_folder_depth_source(tmp_path):
    split = generate_synthetic_identities(2, 2, 2)
    for s in split.samples[:-1]:
        haze.write_depth_png(tmp_path / (s.name[:-4] + ".png"), haze.synthetic_depth("ramp", 8, 8))
    with pytest.raises(IngestionError, match=split.samples[-1].name):
        haze.hazify_dataset(split, str(tmp_path), HazeParams())


def test_depth_size_mismatch():
    split = generate_synthetic_identities(2, 1, 2)
    with pytest.raises(DimensionError):
        haze.hazify_dataset(split, lambda i, s: np.zeros((3, 3)), HazeParams())


def test_density_monotone():
    J = np.random.default_rng(0).random((8, 8, 3))
    d = haze.synthetic_depth("ramp", 8, 8)
    diffs = [np.abs(haze.compose_haze(J, haze.transmission(d, b), 0.9) - J).mean()
             for b in (1.0, 1.25, 1.5, 1.75, 2.0)]
    assert all(a <= b for a, b in zip(diffs, diffs[1:]))
