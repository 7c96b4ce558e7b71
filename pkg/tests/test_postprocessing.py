import numpy as np
import pytest

from patchmatch3d import OffsetField
from postprocessing import (
    DlfConfig,
    consistency_filter,
    decide,
    dlf_error,
    label_regions,
    postprocess,
    preliminary_map,
    remove_small_regions,
)
from video_io import MaskVolume


def _field(offsets):
    offsets = np.ascontiguousarray(offsets, dtype=np.int32)
    return OffsetField(level=0, stride=1, offsets=offsets, distance=np.zeros(offsets.shape[:3]))


def _blocks(shape, blocks):
    """Mask and offset field from (rows, cols, offset) blocks in every frame."""
    bits = np.zeros(shape, dtype=bool)
    offsets = np.zeros(shape + (3,), dtype=np.int32)
    for rows, cols, off in blocks:
        bits[:, rows, cols] = True
        offsets[:, rows, cols] = off
    return MaskVolume(bits), _field(offsets)


def test_dlf_config_validation():
    with pytest.raises(ValueError):
        DlfConfig(window_half=0)
    with pytest.raises(ValueError):
        DlfConfig(error_threshold=0)
    with pytest.raises(ValueError):
        DlfConfig(keep_fraction=1.5)


def test_constant_field_has_zero_error():
    offsets = np.zeros((1, 30, 30, 3))
    offsets[..., 1] = 40
    err = dlf_error(_field(offsets), DlfConfig())
    assert np.abs(err).max() <= 1e-9


def test_integer_affine_field_has_zero_error():
    rows, cols = np.mgrid[0:30, 0:30]
    offsets = np.zeros((2, 30, 30, 3))
    offsets[..., 0] = 2 * rows + cols
    offsets[..., 1] = -3 * cols + 40
    err = dlf_error(_field(offsets), DlfConfig(), threads=2)
    assert err.max() <= 1e-6


def test_random_field_has_large_error():
    offsets = np.random.default_rng(0).integers(-50, 51, size=(1, 40, 40, 3))
    err = dlf_error(_field(offsets), DlfConfig())
    assert np.median(err) > 1e3


def test_unmatchable_and_degenerate_support_is_infinite():
    field = _field(np.zeros((1, 20, 20, 3)))
    field.distance[0, 4, 4] = np.inf
    err = dlf_error(field, DlfConfig())
    assert np.isinf(err[0, 4, 4])
    assert np.isfinite(err[0, 4, 5])

    # two supporting sites
    sparse = _field(np.zeros((1, 20, 20, 3)))
    sparse.distance[...] = np.inf
    sparse.distance[0, 5, 5:7] = 0.0
    assert np.isinf(dlf_error(sparse, DlfConfig())).all()

    # one row of support cannot fix the row gradient
    line = _field(np.zeros((1, 20, 20, 3)))
    line.distance[...] = np.inf
    line.distance[0, 10] = 0.0
    assert np.isinf(dlf_error(line, DlfConfig())).all()


def test_zero_error_keeps_everything():
    mask = preliminary_map(np.zeros((2, 10, 10)), DlfConfig(min_region_size=1))
    assert mask.bits.all()


def test_small_regions_are_removed():
    error = np.full((1, 20, 20), np.inf)
    error[0, 3, 3:13] = 0.0
    assert preliminary_map(error, DlfConfig(min_region_size=11)).count() == 0
    assert preliminary_map(error, DlfConfig(min_region_size=10)).count() == 10


def test_small_blob_is_not_grown_past_the_size_filter():
    error = np.full((12, 31, 31), 100.0)
    error[1:11, 15, 15] = 0.0
    assert preliminary_map(error, DlfConfig(min_region_size=1000)).count() == 0
    assert preliminary_map(error, DlfConfig(min_region_size=10)).count() == 10 * 121
    assert preliminary_map(error, DlfConfig(min_region_size=10, recover_window=False)).count() == 10


def test_window_recovery_grows_accepted_sites():
    error = np.full((1, 31, 31), 100.0)
    error[0, 15, 15] = 0.0
    assert preliminary_map(error, DlfConfig(min_region_size=1)).count() == 121
    # never onto unmatchable sites
    error[0, 15, 10:15] = np.inf
    assert preliminary_map(error, DlfConfig(min_region_size=1)).count() == 116


def test_regions_are_six_connected():
    bits = np.zeros((2, 3, 3), dtype=bool)
    bits[0, 0, 0] = bits[0, 1, 1] = bits[0, 2, 2] = True
    assert not remove_small_regions(bits, 2).any()
    bits[1, 1, 1] = True
    kept = remove_small_regions(bits, 2)
    assert kept.sum() == 2 and kept[0, 1, 1] and kept[1, 1, 1]


def test_consistency_keeps_pairs_and_drops_dangling_regions():
    mask, field = _blocks(
        (1, 20, 60),
        [
            (slice(2, 6), slice(2, 6), (0, 20, 0)),
            (slice(2, 6), slice(22, 26), (0, -20, 0)),
            (slice(10, 14), slice(2, 6), (0, 20, 0)),
        ],
    )
    out = consistency_filter(mask, field, DlfConfig())
    assert out.bits[0, 2:6, 2:6].all() and out.bits[0, 2:6, 22:26].all()
    assert not out.bits[0, 10:14].any()
    assert out.count() == 32
    # subset of the input and a fixpoint
    assert not (out.bits & ~mask.bits).any()
    assert np.array_equal(consistency_filter(out, field, DlfConfig()).bits, out.bits)


def test_consistency_keeps_cycles():
    rows = slice(2, 6)
    mask, field = _blocks(
        (1, 8, 40),
        [
            (rows, slice(0, 4), (0, 10, 0)),
            (rows, slice(10, 14), (0, 10, 0)),
            (rows, slice(20, 24), (0, 10, 0)),
            (rows, slice(30, 34), (0, -30, 0)),
        ],
    )
    assert np.array_equal(consistency_filter(mask, field, DlfConfig()).bits, mask.bits)


def test_consistency_removes_orphaned_chains():
    rows = slice(2, 6)
    mask, field = _blocks(
        (1, 8, 50),
        [
            (rows, slice(0, 4), (0, 10, 0)),
            (rows, slice(10, 14), (0, 10, 0)),
            (rows, slice(20, 24), (0, 20, 0)),
        ],
    )
    assert consistency_filter(mask, field, DlfConfig()).count() == 0


def test_consistency_keep_fraction():
    # 6 of the 10 matches of the left region land in the right one
    mask, field = _blocks(
        (1, 6, 40),
        [
            (slice(2, 4), slice(2, 7), (0, 20, 0)),
            (slice(2, 4), slice(22, 25), (0, -20, 0)),
        ],
    )
    assert consistency_filter(mask, field, DlfConfig(keep_fraction=0.5)).count() == 16
    assert consistency_filter(mask, field, DlfConfig(keep_fraction=0.7)).count() == 0


def test_unmatchable_sites_never_count_as_inside():
    mask, field = _blocks(
        (1, 8, 40),
        [(slice(2, 6), slice(2, 6), (0, 20, 0)), (slice(2, 6), slice(22, 26), (0, -20, 0))],
    )
    field.distance[0, 2:6, 22:26] = np.inf
    assert consistency_filter(mask, field, DlfConfig()).count() == 0


def test_decide_is_strict():
    bits = np.zeros((1, 4, 4), dtype=bool)
    bits[0, 0, :] = True
    bits[0, 1, 0] = True
    mask = MaskVolume(bits)
    assert decide(mask, DlfConfig(detection_threshold=5)) == {"detected": False, "pixel_count": 5}
    assert decide(mask, DlfConfig(detection_threshold=4))["detected"]
    assert decide(mask, DlfConfig(), threshold=4)["detected"]


def test_label_regions():
    mask, field = _blocks(
        (2, 10, 30),
        [(slice(1, 3), slice(1, 4), (0, 12, 0)), (slice(5, 9), slice(20, 22), (-4, 0, 1))],
    )
    labeling = label_regions(mask, field)
    assert labeling.count == 2
    assert sorted(r.size for r in labeling.regions) == [12, 16]
    by_size = {r.size: r for r in labeling.regions}
    assert by_size[12].mean_offset == (0.0, 12.0, 0.0)
    assert by_size[16].mean_offset == (-4.0, 0.0, 1.0)
    assert label_regions(MaskVolume.empty((1, 3, 3))).count == 0


def test_postprocess_finds_a_synthetic_clone():
    rng = np.random.default_rng(1)
    offsets = rng.integers(-50, 51, size=(2, 60, 60, 3)).astype(np.int32)
    offsets[:, 10:30, 10:30] = (0, 30, 0)
    offsets[:, 10:30, 40:60] = (0, -30, 0)
    field = _field(offsets)
    cfg = DlfConfig(min_region_size=200, detection_threshold=500)
    result = postprocess(field, cfg, threads=2)
    expected = np.zeros((2, 60, 60), dtype=bool)
    expected[:, 10:30, 10:30] = True
    expected[:, 10:30, 40:60] = True
    assert np.array_equal(result.map.bits, expected)
    assert result.removed_by_consistency == 0
    assert decide(result.map, cfg) == {"detected": True, "pixel_count": 1600}


def test_postprocess_random_field_is_empty():
    offsets = np.random.default_rng(2).integers(-50, 51, size=(2, 40, 40, 3))
    result = postprocess(_field(offsets), DlfConfig(min_region_size=10))
    assert result.map.count() == 0
