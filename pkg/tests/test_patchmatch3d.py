import numpy as np
import pytest
from conftest import feature_field

import patchmatch3d
from patchmatch3d import (
    InvariantError,
    MatchConfig,
    OffsetField,
    check_field,
    exhaustive_search,
    init_offsets,
    predictor_set,
    propagate_pass,
    random_search_pass,
    read_nnf_dump,
    reverse_pass,
    write_nnf_dump,
)
from zernike import FeatureConfig, extract_field


def _assert_admissible(field, tgt, cfg):
    ok = field.matchable
    tg = field.targets()[ok]
    assert (tg >= 0).all() and (tg < np.array(tgt.shape)).all()
    assert tgt.valid[tg[:, 0], tg[:, 1], tg[:, 2]].all()
    assert ((field.offsets[ok].astype(float) ** 2).sum(axis=1) >= cfg.min_offset**2).all()


def _constant_offsets(shape, offset):
    field = OffsetField.unmatched(shape)
    field.offsets[...] = offset
    field.distance[...] = 0.0
    return field


def test_match_config_validation():
    with pytest.raises(ValueError):
        MatchConfig(iterations=0)
    with pytest.raises(ValueError):
        MatchConfig(random_candidates=0)
    with pytest.raises(ValueError):
        MatchConfig(min_offset=0.0)


def test_init_offsets_are_admissible_and_seeded(random_field):
    cfg = MatchConfig(seed=3)
    a = init_offsets(random_field, random_field, cfg)
    b = init_offsets(random_field, random_field, cfg)
    assert a.matchable.all()
    _assert_admissible(a, random_field, cfg)
    assert np.array_equal(a.offsets, b.offsets)
    assert np.array_equal(a.distance, b.distance)


def test_init_offsets_unmatchable_when_min_offset_exceeds_grid():
    f = feature_field(np.random.default_rng(0).random((2, 20, 20, 3)))
    field = init_offsets(f, f, MatchConfig(min_offset=100.0))
    assert not field.matchable.any()
    assert not field.offsets.any()


def test_init_offsets_respects_invalid_targets(random_field):
    valid = random_field.valid.copy()
    valid[:, :, :16] = False
    f = feature_field(random_field.vectors, valid)
    cfg = MatchConfig()
    field = init_offsets(f, f, cfg)
    assert not field.matchable[:, :, :16].any()
    assert field.matchable[:, :, 16:].all()
    _assert_admissible(field, f, cfg)


def test_predictors_on_constant_field():
    tgt = feature_field(np.zeros((3, 16, 16, 1)))
    field = _constant_offsets((3, 16, 16), (5, 0, 0))
    cands = predictor_set(field, (2, 5, 5), 1, tgt, MatchConfig(min_offset=4.0))
    assert len(cands) == 11
    assert set(cands) == {(5, 0, 0)}


def test_first_order_predictors_reproduce_linear_fields():
    tgt = feature_field(np.zeros((1, 16, 16, 1)))
    field = OffsetField.unmatched((1, 16, 16))
    field.offsets[..., 0] = np.arange(16)[None, :, None]
    field.distance[...] = 0.0
    field.offsets[0, 6, 6] = 0
    cands = predictor_set(field, (0, 6, 6), 1, tgt, MatchConfig(min_offset=1.0))
    # incumbent (0, 0, 0) is too short; zero-order row/col/diag/anti, then first order
    assert cands == [(6, 0, 0), (5, 0, 0), (5, 0, 0), (5, 0, 0)] + [(6, 0, 0)] * 4


def test_predictors_absent_on_grid_border():
    tgt = feature_field(np.zeros((2, 16, 16, 1)))
    field = _constant_offsets((2, 16, 16), (5, 0, 0))
    cfg = MatchConfig(min_offset=4.0)
    assert len(predictor_set(field, (0, 0, 0), 1, tgt, cfg)) == 1
    # first frame and row: only the row predictors
    assert len(predictor_set(field, (0, 0, 5), 1, tgt, cfg)) == 3
    # reverse scan looks ahead, so the last site has no visited neighbour
    back = _constant_offsets((2, 16, 16), (-5, 0, 0))
    assert predictor_set(back, (1, 15, 15), -1, tgt, cfg) == [(-5, 0, 0)]
    with pytest.raises(ValueError):
        predictor_set(field, (2, 0, 0), 1, tgt, cfg)


def test_propagation_spreads_a_seeded_offset_over_a_duplicate():
    rng = np.random.default_rng(11)
    vec = rng.random((1, 60, 100, 4))
    vec[0, 10:40, 60:90] = vec[0, 10:40, 10:40]
    f = feature_field(vec)
    cfg = MatchConfig(seed=1)
    field = init_offsets(f, f, cfg)
    field.offsets[0, 10, 10] = (0, 50, 0)
    field.distance[0, 10, 10] = 0.0
    before = field.distance.copy()
    propagate_pass(f, f, field, cfg, 1)
    propagate_pass(f, f, field, cfg, -1)
    assert (field.distance <= before).all()
    region = field.offsets[0, 10:40, 10:40]
    correct = (region == (0, 50, 0)).all(axis=-1)
    assert correct.mean() >= 0.95
    assert (field.distance[0, 10:40, 10:40][correct] == 0).all()


def test_passes_never_increase_distance(random_field):
    cfg = MatchConfig(seed=2)
    field = init_offsets(random_field, random_field, cfg)
    total = field.distance.sum()
    for it in range(4):
        before = field.distance.copy()
        propagate_pass(random_field, random_field, field, cfg, 1 if it % 2 == 0 else -1)
        random_search_pass(random_field, random_field, field, cfg, np.random.default_rng(it))
        assert (field.distance <= before).all()
        _assert_admissible(field, random_field, cfg)
    assert field.distance.sum() <= total


def _row_index_target():
    # target rows carry their own index; the optimum is any column of row 50
    tgt = feature_field(np.repeat(np.arange(100.0)[None, :, None, None], 100, axis=2))
    src = feature_field(np.full((1, 1, 1, 1), 50.0))
    return src, tgt


def _random_search_hits(random_candidates, start_row, trials=2000):
    src, tgt = _row_index_target()
    cfg = MatchConfig(random_candidates=random_candidates)
    hits = 0
    for k in range(trials):
        field = OffsetField.unmatched((1, 1, 1))
        field.offsets[0, 0, 0] = (start_row, 0, 0)
        field.distance[0, 0, 0] = float((start_row - 50) ** 2)
        random_search_pass(src, tgt, field, cfg, np.random.default_rng(k))
        assert field.distance[0, 0, 0] <= (start_row - 50) ** 2
        hits += field.distance[0, 0, 0] == 0.0
    return hits


def test_random_search_hit_rate_matches_cube_sampling():
    # radius 4 first: rows 49-57 by columns 0-4, minus the centre; row 50 holds 5 of 44 cells
    trials = 2000
    expected = trials * 5 / 44
    assert _random_search_hits(3, 53, trials) >= 0.8 * expected


def test_random_search_recentres_on_the_best_candidate():
    # radius 2 then 1: row 50 is out of reach of the start row 53 and only
    # reachable after the first cube lands on row 51 (3 of 14 cells, then >= 3 of 8)
    trials = 2000
    expected = trials * (3 / 14) * (3 / 8)
    assert _random_search_hits(2, 53, trials) >= 0.8 * expected


def test_reverse_pass_offers_the_way_back(random_field):
    cfg = MatchConfig()
    field = OffsetField.unmatched(random_field.shape)
    field.offsets[1, 5, 5] = (0, 20, 0)
    d = ((random_field.vectors[1, 5, 5] - random_field.vectors[1, 5, 25]) ** 2).sum()
    field.distance[1, 5, 5] = d
    reverse_pass(random_field, random_field, field, cfg)
    assert tuple(field.offsets[1, 5, 25]) == (0, -20, 0)
    assert field.distance[1, 5, 25] == pytest.approx(d)
    assert int(field.matchable.sum()) == 2

    # an incumbent that is already better stays
    field.distance[1, 5, 25] = 0.0
    field.offsets[1, 5, 25] = (0, 0, 1)
    reverse_pass(random_field, random_field, field, cfg)
    assert tuple(field.offsets[1, 5, 25]) == (0, 0, 1)


def test_reverse_pass_from_a_coarse_grid(random_field):
    coarse = feature_field(random_field.vectors[:, ::4, ::4], level=1, stride=4)
    cfg = MatchConfig()
    field = OffsetField.unmatched(coarse.shape, level=1, stride=4)
    field.offsets[1, 1, 1] = (0, 22, 0)
    field.distance[1, 1, 1] = 1.0
    reverse_pass(coarse, random_field, field, cfg)
    # target pixel (4, 26) is nearest to coarse site (1, 7) at pixel (4, 28)
    src = coarse.vectors[1, 1, 7]
    d_neg = ((src - random_field.vectors[1, 4, 6]) ** 2).sum()
    d_back = ((src - random_field.vectors[1, 4, 4]) ** 2).sum()
    expected = (0, -22, 0) if d_neg <= d_back else (0, -24, 0)
    assert tuple(field.offsets[1, 1, 7]) == expected
    assert field.distance[1, 1, 7] == pytest.approx(min(d_neg, d_back))


def test_reverse_matches_can_be_disabled(random_field):
    on = patchmatch3d.run(random_field, random_field, MatchConfig(seed=1, iterations=2))
    off = patchmatch3d.run(random_field, random_field, MatchConfig(seed=1, iterations=2, reverse_matches=False))
    _assert_admissible(off, random_field, MatchConfig())
    assert not np.array_equal(on.distance, off.distance)


def test_run_recovers_rigid_clone():
    from forgegen import ForgerySpec, apply_copy_move, synth_texture

    video = synth_texture((2, 96, 96), "gaussian_blur_noise", np.random.default_rng(9))
    spec = ForgerySpec(center=(30, 30), radius=22, frame_span=(0, 1), displacement=(40, 30, 0), feather=0)
    forged = apply_copy_move(video, spec).forged
    feats = extract_field(forged, FeatureConfig())
    cfg = MatchConfig(seed=4)
    field = patchmatch3d.run(feats, feats, cfg)
    _assert_admissible(field, feats, cfg)
    # destination sites whose whole patch lies inside the copy
    rows, cols = np.mgrid[0:96, 0:96]
    inner = np.hypot(rows - 70, cols - 60) <= 22 - 8 - 1
    got = field.offsets[:, inner]
    correct = (got == (-40, -30, 0)).all(axis=-1)
    assert correct.mean() >= 0.9
    assert field.distance[:, inner][correct].max() <= 1e-10


def test_run_on_constant_video_reaches_zero():
    from video_io import Video

    feats = extract_field(Video(np.full((2, 40, 40), 0.3)), FeatureConfig())
    field = patchmatch3d.run(feats, feats, MatchConfig(iterations=1))
    assert field.matchable[feats.valid].all()
    assert field.distance[feats.valid].max() <= 1e-20


def test_run_is_deterministic_for_fixed_seed_and_threads(random_field):
    cfg = MatchConfig(seed=5, iterations=4)
    for threads in (1, 3):
        a = patchmatch3d.run(random_field, random_field, cfg, threads=threads)
        b = patchmatch3d.run(random_field, random_field, cfg, threads=threads)
        assert np.array_equal(a.offsets, b.offsets)
        assert np.array_equal(a.distance, b.distance)
        _assert_admissible(a, random_field, cfg)


def test_run_never_beats_exhaustive_search(random_field):
    cfg = MatchConfig(seed=6)
    approx = patchmatch3d.run(random_field, random_field, cfg)
    exact = exhaustive_search(random_field, random_field, cfg)
    assert exact.matchable.all()
    assert (approx.distance >= exact.distance - 1e-12).all()
    _assert_admissible(exact, random_field, cfg)


@pytest.mark.slow
def test_run_close_to_exhaustive_on_blur_noise():
    from forgegen import synth_texture

    cfg = MatchConfig(seed=0)
    for k in range(10):
        video = synth_texture((4, 48, 48), "gaussian_blur_noise", np.random.default_rng(k))
        feats = extract_field(video, FeatureConfig())
        approx = patchmatch3d.run(feats, feats, cfg)
        exact = exhaustive_search(feats, feats, cfg, threads=4)
        ok = exact.matchable
        assert approx.distance[ok].sum() <= 1.05 * exact.distance[ok].sum()


def test_warm_start_keeps_admissible_and_redraws_the_rest(random_field):
    cfg = MatchConfig(seed=8, iterations=1, random_search=False)
    warm = _constant_offsets(random_field.shape, (0, 20, 0))
    warm.offsets[:, :, 12:] = 0  # targets off the grid or too short
    field = patchmatch3d.run(random_field, random_field, cfg, initial=warm)
    assert field.matchable.all()
    _assert_admissible(field, random_field, cfg)
    kept = warm.targets()[:, :, :12]
    d_warm = ((random_field.vectors[:, :, :12] - random_field.vectors[kept[..., 0], kept[..., 1], kept[..., 2]]) ** 2).sum(-1)
    assert (field.distance[:, :, :12] <= d_warm + 1e-12).all()


def test_inactive_sites_carry_the_sentinel(random_field):
    active = np.zeros(random_field.shape, dtype=bool)
    active[1] = True
    field = patchmatch3d.run(random_field, random_field, MatchConfig(iterations=2), active=active)
    assert field.matchable[1].all()
    assert not field.matchable[[0, 2]].any()
    assert not field.offsets[[0, 2]].any()


def test_coarse_source_against_full_resolution_target(random_field):
    coarse = feature_field(random_field.vectors[:, ::4, ::4], level=1, stride=4)
    cfg = MatchConfig(iterations=2)
    field = patchmatch3d.run(coarse, random_field, cfg)
    assert field.shape == (3, 8, 8) and field.stride == 4
    _assert_admissible(field, random_field, cfg)
    with pytest.raises(ValueError):
        patchmatch3d.run(random_field, coarse, cfg)


def test_check_field_flags_short_offsets(random_field):
    field = _constant_offsets(random_field.shape, (1, 0, 0))
    with pytest.raises(InvariantError):
        check_field(field, random_field, random_field, MatchConfig())


def test_nnf_dump(tmp_path, random_field):
    field = patchmatch3d.run(random_field, random_field, MatchConfig(iterations=1))
    field.distance[0, 0, 0] = np.inf
    path = write_nnf_dump(field, tmp_path / "nnf.bin")
    assert path.stat().st_size == 20 + 16 * field.distance.size
    back = read_nnf_dump(path)
    assert np.array_equal(back.offsets, field.offsets)
    assert np.isinf(back.distance[0, 0, 0])
    assert np.allclose(back.distance[1:], field.distance[1:], rtol=1e-6)


@pytest.mark.slow
def test_first_order_predictors_follow_a_rotated_clone():
    from forgegen import ForgerySpec, apply_copy_move, synth_texture

    video = synth_texture((3, 128, 128), "gaussian_blur_noise", np.random.default_rng(12))
    spec = ForgerySpec(center=(36, 36), radius=26, frame_span=(0, 2), displacement=(56, 50, 0), rotation_deg=15.0)
    forged = apply_copy_move(video, spec).forged
    feats = extract_field(forged, FeatureConfig())
    field = patchmatch3d.run(feats, feats, MatchConfig(seed=2))
    rows, cols = np.mgrid[0:128, 0:128]
    yr, xr = rows - 92, cols - 86
    theta = np.radians(15.0)
    src_r = 36 + np.cos(theta) * yr + np.sin(theta) * xr
    src_c = 36 - np.sin(theta) * yr + np.cos(theta) * xr
    inner = np.hypot(yr, xr) <= 26 - 8 - 2
    tg = field.targets()[:, inner]
    err = np.hypot(tg[..., 1] - src_r[inner], tg[..., 2] - src_c[inner])
    assert ((err <= 1.0) & (tg[..., 0] == np.arange(3)[:, None])).mean() >= 0.7
