import numpy as np
import pytest

from reflidar.accumulation import make_pair
from reflidar.densify import DensifyConfig, densify
from reflidar.metrics import evaluate
from reflidar.projection import DepthImage, ProjectionConfig, ReflectanceImage

ALL_CONFIGS = [
    DensifyConfig(),
    DensifyConfig(guide="none"),
    DensifyConfig(smoothing="edge_aware"),
    DensifyConfig(scales=(3,), guide="none", smoothing="edge_aware"),
]


def _sparse(rng, shape=(40, 60), keep=0.3):
    mask = rng.uniform(size=shape) < keep
    L = ReflectanceImage(rng.uniform(0.1, 0.9, shape), mask)
    D = DepthImage(rng.uniform(1, 20, shape), mask)
    return L, D


@pytest.mark.parametrize("cfg", ALL_CONFIGS)
def test_fully_valid_is_identity(cfg, rng):
    shape = (30, 50)
    m = np.ones(shape, dtype=bool)
    L = ReflectanceImage(rng.uniform(size=shape), m)
    D = DepthImage(rng.uniform(1, 5, shape), m)
    L2, D2 = densify(L, D, cfg)
    assert L2.equals(L) and D2.equals(D)


@pytest.mark.parametrize("guide", ["none", "depth"])
def test_single_hole_in_constant_field(guide):
    shape = (9, 9)
    m = np.ones(shape, dtype=bool)
    m[4, 4] = False
    L2, D2 = densify(ReflectanceImage(np.full(shape, 0.7), m), DepthImage(np.full(shape, 3.0), m), DensifyConfig(guide=guide))
    assert L2.mask.all() and L2.values[4, 4] == 0.7 and D2.values[4, 4] == 3.0


@pytest.mark.parametrize("cfg", ALL_CONFIGS)
def test_valid_pixels_unchanged_and_mask_grows(cfg, rng):
    L, D = _sparse(rng)
    L2, D2 = densify(L, D, cfg)
    assert np.all(L2.mask[L.mask])
    assert np.array_equal(L2.values[L.mask], L.values[L.mask])
    assert np.array_equal(D2.values[D.mask], D.values[D.mask])
    assert L2.mask.sum() > L.mask.sum()


@pytest.mark.parametrize("cfg", ALL_CONFIGS[:2])
def test_range_preserved_without_smoothing(cfg, rng):
    L, D = _sparse(rng, keep=0.1)
    L2, _ = densify(L, D, cfg)
    v = L.values[L.mask]
    assert v.min() <= L2.values[L2.mask].min() and L2.values[L2.mask].max() <= v.max()


def test_depth_guide_takes_nearest_range():
    shape = (3, 3)
    m = np.zeros(shape, dtype=bool)
    m[0, 0] = m[2, 2] = True
    L = ReflectanceImage(np.array([[0.2, 0, 0], [0, 0, 0], [0, 0, 0.9]]), m)
    D = DepthImage(np.array([[8.0, 0, 0], [0, 0, 0], [0, 0, 2.0]]), m)
    L2, D2 = densify(L, D, DensifyConfig(scales=(3,)))
    assert L2.values[1, 1] == 0.9 and D2.values[1, 1] == 2.0


def test_median_guide():
    shape = (3, 3)
    m = np.zeros(shape, dtype=bool)
    m[0, 0] = m[0, 2] = m[2, 1] = True
    vals = np.zeros(shape)
    vals[0, 0], vals[0, 2], vals[2, 1] = 0.1, 0.5, 0.3
    L2, _ = densify(ReflectanceImage(vals, m), DepthImage(np.where(m, 4.0, 0.0), m), DensifyConfig(scales=(3,), guide="none"))
    assert L2.values[1, 1] == 0.3


def test_smoothing_touches_filled_only(rng):
    L, D = _sparse(rng, keep=0.2)
    base, _ = densify(L, D, DensifyConfig())
    smooth, _ = densify(L, D, DensifyConfig(smoothing="edge_aware", edge_sigma_r=0.5))
    assert np.array_equal(smooth.values[L.mask], L.values[L.mask])
    assert np.array_equal(smooth.mask, base.mask)
    assert not np.array_equal(smooth.values, base.values)


def test_no_valid_input():
    shape = (5, 5)
    L2, D2 = densify(ReflectanceImage.empty(shape), DepthImage.empty(shape))
    assert not L2.mask.any() and not D2.mask.any()


def test_mask_is_intersection_of_inputs():
    shape = (1, 3)
    mL = np.array([[True, True, False]])
    mD = np.array([[True, False, False]])
    L2, _ = densify(ReflectanceImage(np.full(shape, 0.4), mL), DepthImage(np.full(shape, 2.0), mD), DensifyConfig(scales=(1,)))
    assert L2.mask.tolist() == [[True, False, False]]


def test_shape_mismatch():
    with pytest.raises(ValueError):
        densify(ReflectanceImage.empty((3, 3)), DepthImage.empty((3, 4)))


@pytest.mark.parametrize(
    "kwargs", [dict(scales=(4,)), dict(scales=(5, 3)), dict(scales=()), dict(edge_sigma_r=0), dict(guide="color"), dict(method="cnn")]
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        DensifyConfig(**kwargs)


def test_gain_on_simulator_pairs(room_scans):
    (Ls, Ds), (Ld, _) = make_pair(room_scans, None, ProjectionConfig.panoramic())
    Lf, _ = densify(Ls, Ds)
    before = evaluate(Ls, Ld, "gt_only").psnr
    after = evaluate(Lf, Ld, "gt_only").psnr
    assert after >= before + 3.0
