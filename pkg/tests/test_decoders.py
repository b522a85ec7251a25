"""Generative and baseline decoders vs dense reference computations."""

import numpy as np
import pytest

import pillarmae.tensor as T
from pillarmae.decoders import (
    bench_decoders,
    bench_report_csv,
    baseline_transformer_decode,
    generative_decode,
    init_baseline_params,
    init_gd_params,
    padded_extents,
    synthetic_multiscale,
)
from pillarmae.encoder import EncoderOutput
from pillarmae.pillars import GridSpec, TokenSet

from oracles import (
    attention_arrays,
    ref_generative_decode,
    ref_regional_attention,
)

GRID = GridSpec(0.0, 1.92, 0.0, 1.92, -2.0, 2.0, 0.32, 0.32)  # 6 x 6 cells
DIMS = (4, 6, 8)


def toy_encoder_output(rng, grid=GRID, counts=(6, 3, 2), dims=DIMS):
    sets = []
    for level, (m, dim) in enumerate(zip(counts, dims)):
        w, h = grid.extents_at(level)
        m = min(m, w * h)
        flat = rng.choice(w * h, size=m, replace=False)
        coords = np.stack([flat % w, flat // w], axis=1)
        sets.append(TokenSet(rng.standard_normal((m, dim)), coords, level, grid))
    return EncoderOutput(sets)


def consistent_encoder_output(rng, grid, m0, dims=DIMS):
    """Coords obey the floor chain, like real encoder outputs."""
    w, h = grid.extents_at(0)
    flat = rng.choice(w * h, size=m0, replace=False)
    coords = np.stack([flat % w, flat // w], axis=1)
    sets = []
    for level, dim in enumerate(dims):
        if level > 0:
            coords = np.unique(coords // 2, axis=0)
        sets.append(TokenSet(rng.standard_normal((coords.shape[0], dim)), coords, level, grid))
    return EncoderOutput(sets)


def test_generative_decode_matches_dense_reference_toy():
    rng = np.random.default_rng(0)
    enc = toy_encoder_output(rng)
    params = init_gd_params(rng, DIMS, target_level=0, width=5)
    for a in params.adapters:
        a.bias.data[:] = rng.standard_normal(a.bias.data.shape)
    params.fusion_bias.data[:] = rng.standard_normal(5)
    masked = np.array([[0, 0], [3, 2], [5, 5], [2, 4]])
    out = generative_decode(enc, masked, GRID, params)
    ref = ref_generative_decode(list(enc), masked, GRID, params, padded_extents)
    np.testing.assert_allclose(out.data, ref, atol=1e-10)


def test_generative_decode_matches_dense_reference_block_target():
    rng = np.random.default_rng(1)
    grid = GridSpec(0.0, 5.12, 0.0, 5.12, -2.0, 2.0, 0.32, 0.32)  # 16 cells, level2 4
    enc = consistent_encoder_output(rng, grid, m0=12)
    params = init_gd_params(rng, DIMS, target_level=2, width=5)
    masked = np.array([[0, 0], [1, 2], [3, 3]])
    out = generative_decode(enc, masked, grid, params)
    ref = ref_generative_decode(list(enc), masked, grid, params, padded_extents)
    np.testing.assert_allclose(out.data, ref, atol=1e-10)


def test_generative_decode_random_scenes_vs_dense_reference():
    rng = np.random.default_rng(2)
    for trial in range(10):
        side = int(rng.integers(4, 13)) * 0.32
        grid = GridSpec(0.0, side, 0.0, side, -2.0, 2.0, 0.32, 0.32)
        w, h = grid.extents_at(0)
        enc = consistent_encoder_output(rng, grid, m0=int(rng.integers(1, max(2, w * h // 2))))
        level = int(rng.choice([0, 2]))
        params = init_gd_params(rng, DIMS, target_level=level, width=4)
        wt, ht = grid.extents_at(level)
        t = int(rng.integers(1, wt * ht + 1))
        flat = rng.choice(wt * ht, size=t, replace=False)
        masked = np.stack([flat % wt, flat // wt], axis=1)
        out = generative_decode(enc, masked, grid, params)
        ref = ref_generative_decode(list(enc), masked, grid, params, padded_extents)
        np.testing.assert_allclose(out.data, ref, atol=1e-10)


def test_generative_decode_far_coord_equals_empty_scene_response():
    # a masked cell with no token in its composed receptive field sees only
    # the stacked biases: identical to decoding an empty scene
    rng = np.random.default_rng(3)
    grid = GridSpec(0.0, 7.68, 0.0, 7.68, -2.0, 2.0, 0.32, 0.32)  # 24 x 24
    params = init_gd_params(rng, DIMS, target_level=0, width=5)
    for a in params.adapters:
        a.bias.data[:] = rng.standard_normal(a.bias.data.shape)
    params.fusion_bias.data[:] = rng.standard_normal(5)

    sets = [
        TokenSet(rng.standard_normal((1, DIMS[0])), np.array([[0, 0]]), 0, grid),
        TokenSet(rng.standard_normal((1, DIMS[1])), np.array([[0, 0]]), 1, grid),
        TokenSet(rng.standard_normal((1, DIMS[2])), np.array([[0, 0]]), 2, grid),
    ]
    empty_sets = [
        TokenSet(np.zeros((0, DIMS[l])), np.empty((0, 2), np.int64), l, grid) for l in range(3)
    ]
    far = np.array([[16, 16]])  # far inside the map, outside every footprint
    out = generative_decode(EncoderOutput(sets), far, grid, params)
    out_empty = generative_decode(EncoderOutput(empty_sets), far, grid, params)
    np.testing.assert_array_equal(out.data, out_empty.data)


def test_generative_decode_adjacent_token_changes_output():
    rng = np.random.default_rng(4)
    params = init_gd_params(rng, DIMS, target_level=0, width=5)
    empty_sets = [
        TokenSet(np.zeros((0, DIMS[l])), np.empty((0, 2), np.int64), l, GRID) for l in range(3)
    ]
    near_sets = [
        TokenSet(rng.standard_normal((1, DIMS[0])), np.array([[2, 3]]), 0, GRID),
        TokenSet(np.zeros((0, DIMS[1])), np.empty((0, 2), np.int64), 1, GRID),
        TokenSet(np.zeros((0, DIMS[2])), np.empty((0, 2), np.int64), 2, GRID),
    ]
    masked = np.array([[3, 3]])  # 4-adjacent to the visible token
    out_empty = generative_decode(EncoderOutput(empty_sets), masked, GRID, params)
    out_near = generative_decode(EncoderOutput(near_sets), masked, GRID, params)
    assert not np.allclose(out_empty.data, out_near.data)


def test_generative_expansion_locality_far_perturbation():
    rng = np.random.default_rng(5)
    grid = GridSpec(0.0, 7.68, 0.0, 7.68, -2.0, 2.0, 0.32, 0.32)
    params = init_gd_params(rng, DIMS, target_level=0, width=5)
    near = np.array([[3, 3]])
    far = np.array([[20, 20]])

    def build(far_feat):
        sets = [
            TokenSet(np.vstack([np.ones((1, DIMS[0])), far_feat]), np.vstack([near, far]), 0, grid),
            TokenSet(np.zeros((0, DIMS[1])), np.empty((0, 2), np.int64), 1, grid),
            TokenSet(np.zeros((0, DIMS[2])), np.empty((0, 2), np.int64), 2, grid),
        ]
        return EncoderOutput(sets)

    masked = np.array([[4, 3]])
    a = generative_decode(build(np.full((1, DIMS[0]), 2.0)), masked, grid, params)
    b = generative_decode(build(np.full((1, DIMS[0]), -7.0)), masked, grid, params)
    np.testing.assert_array_equal(a.data, b.data)


def test_generative_decode_out_of_bounds_coord_raises():
    rng = np.random.default_rng(6)
    enc = toy_encoder_output(rng)
    params = init_gd_params(rng, DIMS, target_level=0, width=5)
    with pytest.raises(ValueError, match="out of extents"):
        generative_decode(enc, np.array([[6, 0]]), GRID, params)


# --- baseline decoder --------------------------------------------------------


def test_baseline_zero_blocks_returns_mask_embedding():
    rng = np.random.default_rng(7)
    params = init_baseline_params(rng, DIMS, target_level=0, width=6, num_blocks=0)
    enc = toy_encoder_output(rng)
    visible = np.array([[0, 0], [1, 1]])
    masked = np.array([[2, 2], [3, 3], [4, 4]])
    out = baseline_transformer_decode(enc, visible, masked, GRID, params)
    expected = np.tile(params.mask_embedding.data, (3, 1))
    np.testing.assert_allclose(out.data, expected, atol=1e-14)


def test_baseline_zero_blocks_independent_of_visible_features():
    rng = np.random.default_rng(8)
    params = init_baseline_params(rng, DIMS, target_level=0, width=6, num_blocks=0)
    enc_a = toy_encoder_output(np.random.default_rng(100))
    enc_b = toy_encoder_output(np.random.default_rng(200))
    masked = np.array([[2, 2]])
    out_a = baseline_transformer_decode(enc_a, np.array([[0, 0]]), masked, GRID, params)
    out_b = baseline_transformer_decode(enc_b, np.array([[0, 0]]), masked, GRID, params)
    np.testing.assert_array_equal(out_a.data, out_b.data)


def test_baseline_singleton_window_closed_form():
    rng = np.random.default_rng(9)
    params = init_baseline_params(
        rng, DIMS, target_level=0, width=6, num_blocks=1, heads=2, region_size=2
    )
    enc = toy_encoder_output(rng)
    masked = np.array([[4, 4]])  # alone in its size-2 window
    visible = np.array([[0, 0]])
    out = baseline_transformer_decode(enc, visible, masked, GRID, params)

    wt, ht = GRID.extents_at(0)
    denom = np.maximum(np.array([wt, ht], dtype=float) - 1.0, 1.0)
    pos = np.array([[4, 4]]) / denom * 2.0 - 1.0
    a = attention_arrays(params.blocks[0])
    x = params.mask_embedding.data[None, :]
    ref = ref_regional_attention(x, {(2, 2): np.array([0])}, a, 2, pos)
    np.testing.assert_allclose(out.data, ref, atol=1e-12)


def test_baseline_one_block_matches_dense_reference():
    rng = np.random.default_rng(10)
    params = init_baseline_params(
        rng, DIMS, target_level=0, width=6, num_blocks=1, heads=2, region_size=4
    )
    enc = toy_encoder_output(rng)
    visible = np.array([[0, 0], [1, 2], [5, 1]])
    masked = np.array([[2, 2], [3, 3], [0, 5], [5, 5]])
    out = baseline_transformer_decode(enc, visible, masked, GRID, params)

    # independent numpy route: dense adapters, kernel-1 fusion per pixel,
    # then one dense windowed attention block over the union
    from oracles import ref_conv2d, ref_conv_transpose2d, scatter_dense

    maps = []
    for level, (tokens, adapter) in enumerate(zip(enc, params.adapters)):
        ext = padded_extents(GRID, level)
        dense = scatter_dense(tokens.coords, tokens.features.data, ext)
        kern = adapter.kernel.data
        if adapter.kind == "conv":
            m = ref_conv2d(dense, kern, stride=adapter.stride, padding=adapter.padding)
        else:
            m = ref_conv_transpose2d(dense, kern, stride=adapter.stride, padding=adapter.padding)
        maps.append(m + adapter.bias.data[:, None, None])
    cat = np.concatenate(maps, axis=0)
    vis_feats = np.stack(
        [cat[:, iy, ix] for ix, iy in visible], axis=0
    ) @ params.fusion_w.data + params.fusion_bias.data
    union = np.concatenate([vis_feats, np.tile(params.mask_embedding.data, (4, 1))], axis=0)
    coords = np.concatenate([visible, masked], axis=0)
    wt, ht = GRID.extents_at(0)
    denom = np.maximum(np.array([wt, ht], dtype=float) - 1.0, 1.0)
    pos = coords / denom * 2.0 - 1.0
    groups = {}
    for i, c in enumerate(coords // 4):
        groups.setdefault((c[0], c[1]), []).append(i)
    groups = {k: np.array(v) for k, v in groups.items()}
    ref = ref_regional_attention(union, groups, attention_arrays(params.blocks[0]), 2, pos)
    np.testing.assert_allclose(out.data, ref[3:], atol=1e-10)


def test_baseline_rejects_overlap():
    rng = np.random.default_rng(11)
    params = init_baseline_params(rng, DIMS, target_level=0, width=6, num_blocks=0)
    enc = toy_encoder_output(rng)
    with pytest.raises(ValueError, match="overlap"):
        baseline_transformer_decode(
            enc, np.array([[1, 1], [2, 2]]), np.array([[2, 2]]), GRID, params
        )


# --- differentiability and bench --------------------------------------------


def test_decode_chamfer_gradient_end_to_end():
    from pillarmae.gradcheck import finite_diff_grad_check
    from pillarmae.reconstruction import TargetSet, chamfer_loss, predict_points, init_prediction_head

    rng = np.random.default_rng(12)
    grid = GridSpec(0.0, 1.92, 0.0, 1.92, -2.0, 2.0, 0.32, 0.32)
    feats0 = T.param(rng.standard_normal((3, DIMS[0])))
    coords0 = np.array([[0, 0], [2, 1], [4, 4]])
    params = init_gd_params(rng, DIMS, target_level=0, width=5)
    head = init_prediction_head(rng, 5, k=2)
    masked = np.array([[1, 0], [3, 3]])
    tgt = TargetSet(points=rng.standard_normal((2, 2, 3)), valid_counts=np.array([2, 1]))

    def f():
        sets = [
            TokenSet(feats0, coords0, 0, grid),
            TokenSet(np.zeros((0, DIMS[1])), np.empty((0, 2), np.int64), 1, grid),
            TokenSet(np.zeros((0, DIMS[2])), np.empty((0, 2), np.int64), 2, grid),
        ]
        e_mask = generative_decode(EncoderOutput(sets), masked, grid, params)
        return chamfer_loss(predict_points(e_mask, head), tgt)

    check_params = [feats0, head.w, head.b, params.fusion_bias] + params.fusion_taps[:2]
    check_params.append(params.adapters[0].kernel)
    report = finite_diff_grad_check(f, check_params, rel_tol=1e-4)
    assert report.passed, report.summary()


def test_bench_single_token_and_report_format():
    rows = bench_decoders([1], repetitions=1, assert_ordering=False)
    report = bench_report_csv(rows)
    lines = report.strip().split("\n")
    assert lines[0] == "decoder,tokens,median_ms,p90_ms"
    assert len(lines) == 3
    assert lines[1].startswith("generative,1,")
    assert lines[2].startswith("baseline,1,")


def test_bench_rejects_zero_repetitions():
    with pytest.raises(ValueError, match="repetition"):
        bench_decoders([10], repetitions=0)


def test_synthetic_multiscale_respects_floor_chain():
    rng = np.random.default_rng(13)
    grid = GridSpec(0.0, 10.24, 0.0, 10.24, -2.0, 2.0, 0.32, 0.32)
    enc, coords0 = synthetic_multiscale(rng, grid, 40, (4, 4, 4))
    np.testing.assert_array_equal(
        enc[1].coords, np.unique(enc[0].coords // 2, axis=0)
    )
    np.testing.assert_array_equal(
        enc[2].coords, np.unique(enc[1].coords // 2, axis=0)
    )
