"""Masking strategies: counts, determinism, consistency, leak freedom."""

import numpy as np
import pytest

from pillarmae.masking import (
    MaskPlan,
    block_mask_inputs,
    patch_mask_inputs,
    point_mask_inputs,
    sample_mask,
    upsample_mask_grid,
)
from pillarmae.pillars import GridSpec, PointCloud, TokenSet, voxelize

GRID = GridSpec(0.0, 10.24, 0.0, 10.24, -2.0, 2.0, 0.32, 0.32)  # 32 x 32, level 2 is 8 x 8


def random_tokens(rng, m, dim=4, grid=GRID):
    w, h = grid.extents_at(0)
    flat = rng.choice(w * h, size=m, replace=False)
    coords = np.stack([flat % w, flat // w], axis=1)
    return TokenSet(rng.standard_normal((m, dim)), coords, 0, grid)


def test_sample_mask_count_floor():
    rng = np.random.default_rng(0)
    occ = np.stack([rng.permutation(100) % 32, rng.permutation(100) % 32], axis=1)
    occ = np.unique(occ, axis=0)
    m = occ.shape[0]
    mask = sample_mask(occ, 0.75, seed=1, extents=(32, 32), level=0)
    assert mask.masked.shape[0] == int(np.floor(0.75 * m))
    assert mask.masked.shape[0] + mask.visible.shape[0] == m


def test_sample_mask_two_of_three_floor():
    occ = np.array([[0, 0], [1, 0]])
    mask = sample_mask(occ, 0.75, seed=0, extents=(4, 4), level=0)
    assert mask.masked.shape[0] == 1  # floor(1.5)


def test_sample_mask_deterministic_and_seed_sensitive():
    occ = np.stack([np.arange(40) % 8, np.arange(40) // 8], axis=1)
    a = sample_mask(occ, 0.5, seed=7, extents=(8, 8), level=0)
    b = sample_mask(occ, 0.5, seed=7, extents=(8, 8), level=0)
    np.testing.assert_array_equal(a.masked, b.masked)
    np.testing.assert_array_equal(a.grid, b.grid)
    diffs = 0
    for s in range(100):
        c = sample_mask(occ, 0.5, seed=s, extents=(8, 8), level=0)
        if not np.array_equal(c.masked, a.masked):
            diffs += 1
    assert diffs > 90


def test_sample_mask_empty_input():
    mask = sample_mask(np.empty((0, 2), np.int64), 0.75, seed=0, extents=(4, 4), level=0)
    assert mask.masked.shape[0] == 0 and mask.visible.shape[0] == 0


def test_block_mask_preimage_removal():
    # mask the level-2 cell (1, 0): every level-0 token in [4..7] x [0..3] hides
    rng = np.random.default_rng(1)
    tokens = random_tokens(rng, 60)
    plan = MaskPlan("block", 0.75, seed=3)
    vis, mask = block_mask_inputs(tokens, plan)
    assert mask.level == 2
    for coord in vis.coords:
        cell = coord // 4
        assert not mask.grid[cell[1], cell[0]]
    removed = {tuple(c) for c in tokens.coords} - {tuple(c) for c in vis.coords}
    for coord in removed:
        cell = (coord[0] // 4, coord[1] // 4)
        assert mask.grid[cell[1], cell[0]]


def test_block_mask_single_cell_preimage_box():
    coords = np.array([[x, y] for x in range(4, 8) for y in range(0, 4)])
    tokens = TokenSet(np.ones((16, 2)), coords, 0, GRID)
    plan = MaskPlan("block", 0.5, seed=0)
    vis, mask = block_mask_inputs(tokens, plan)
    # all tokens share level-2 cell (1, 0); it is either fully kept or gone
    assert len(vis) in (0, 16)


def test_block_mask_visibility_matches_bruteforce_loop():
    rng = np.random.default_rng(2)
    for trial in range(10):
        tokens = random_tokens(rng, int(rng.integers(5, 120)))
        plan = MaskPlan("block", 0.75, seed=trial)
        vis, mask = block_mask_inputs(tokens, plan)
        masked_cells = {tuple(c) for c in mask.masked}
        expect_visible = [
            tuple(c) for c in tokens.coords
            if (c[0] // 4, c[1] // 4) not in masked_cells
        ]
        assert sorted(expect_visible) == [tuple(c) for c in vis.coords]


def test_block_mask_visibility_equals_upsampled_map():
    # preimage rule and upsample-then-index rule must agree exactly
    rng = np.random.default_rng(3)
    for trial in range(10):
        tokens = random_tokens(rng, int(rng.integers(5, 120)))
        plan = MaskPlan("block", 0.75, seed=100 + trial)
        vis, mask = block_mask_inputs(tokens, plan)
        up = upsample_mask_grid(mask, 4, GRID.extents_at(0))
        by_upsample = [tuple(c) for c in tokens.coords if not up[c[1], c[0]]]
        assert by_upsample == [tuple(c) for c in vis.coords]


def test_patch_mask_partition():
    rng = np.random.default_rng(4)
    tokens = random_tokens(rng, 4)
    vis, mask = patch_mask_inputs(tokens, MaskPlan("patch", 0.75, seed=0))
    assert len(vis) == 1 and mask.masked.shape[0] == 3
    all_coords = {tuple(c) for c in tokens.coords}
    assert {tuple(c) for c in mask.masked} | {tuple(c) for c in vis.coords} == all_coords
    assert not ({tuple(c) for c in mask.masked} & {tuple(c) for c in vis.coords})


def test_patch_mask_deterministic_over_trials():
    rng = np.random.default_rng(5)
    tokens = random_tokens(rng, 50)
    for seed in range(50):
        a = patch_mask_inputs(tokens, MaskPlan("patch", 0.75, seed=seed))[1]
        b = patch_mask_inputs(tokens, MaskPlan("patch", 0.75, seed=seed))[1]
        np.testing.assert_array_equal(a.masked, b.masked)


def cloud_in_grid(rng, n):
    pts = np.column_stack([
        rng.uniform(0.0, 10.2, n), rng.uniform(0.0, 10.2, n), rng.uniform(-1.9, 1.9, n)
    ])
    return PointCloud(pts)


def test_point_mask_counts():
    rng = np.random.default_rng(6)
    cloud = cloud_in_grid(rng, 4)
    res = point_mask_inputs(cloud, GRID, MaskPlan("point", 0.75, seed=0))
    assert len(res.visible) == 1
    total_masked = sum(len(v) for v in res.masked_points_per_pillar.values())
    assert total_masked == 3


def test_point_mask_conservation_random():
    rng = np.random.default_rng(7)
    for trial in range(10):
        n = int(rng.integers(10, 300))
        cloud = cloud_in_grid(rng, n)
        res = point_mask_inputs(cloud, GRID, MaskPlan("point", 0.75, seed=trial))
        total_masked = sum(len(v) for v in res.masked_points_per_pillar.values())
        assert len(res.visible) + total_masked == n


def test_point_mask_emptied_pillar_is_target_not_token():
    # one isolated point: ratio forces it out; its pillar must be a target
    pts = np.array([[5.0, 5.0, 0.0], [0.1, 0.1, 0.0], [0.1, 0.15, 0.0], [0.15, 0.1, 0.0]])
    cloud = PointCloud(pts)
    found = False
    for seed in range(50):
        res = point_mask_inputs(cloud, GRID, MaskPlan("point", 0.75, seed=seed))
        vox_vis = voxelize(res.visible, GRID)
        visible_pillars = {tuple(c) for c in vox_vis.occupied}
        target_pillars = set(res.masked_points_per_pillar)
        emptied = target_pillars - visible_pillars
        for cell in emptied:
            assert cell in {tuple(c) for c in res.mask.masked}
            found = True
    assert found


def test_point_mask_map_partitions_occupied_cells():
    rng = np.random.default_rng(8)
    cloud = cloud_in_grid(rng, 200)
    vox = voxelize(cloud, GRID)
    res = point_mask_inputs(cloud, GRID, MaskPlan("point", 0.75, seed=0))
    masked = {tuple(c) for c in res.mask.masked}
    visible = {tuple(c) for c in res.mask.visible}
    assert masked | visible == {tuple(c) for c in vox.occupied}
    assert not (masked & visible)


def test_leak_freedom_block_masking_through_encoder():
    from pillarmae.encoder import encode
    from pillarmae.tensor import reset_tape
    from tests_support import tiny_encoder_params

    rng = np.random.default_rng(9)
    params = tiny_encoder_params(rng)
    for trial in range(10):
        tokens = random_tokens(rng, int(rng.integers(10, 100)), dim=8)
        vis, mask = block_mask_inputs(tokens, MaskPlan("block", 0.75, seed=trial))
        if len(vis) == 0:
            continue
        enc = encode(vis, params)
        masked_cells = {tuple(c) for c in mask.masked}
        for c in enc[2].coords:
            assert tuple(c) not in masked_cells
        reset_tape()


def test_mask_plan_validation():
    with pytest.raises(ValueError, match="strategy"):
        MaskPlan("blockish", 0.5)
    with pytest.raises(ValueError, match="ratio"):
        MaskPlan("block", 1.0)
    with pytest.raises(ValueError, match="block"):
        block_mask_inputs(
            TokenSet(np.ones((1, 2)), np.array([[0, 0]]), 0, GRID), MaskPlan("patch", 0.5)
        )
