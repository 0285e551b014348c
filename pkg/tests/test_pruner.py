import numpy as np
import pytest

from cuavid.errors import InvalidInputError
from cuavid.grid import CombinedMask, FeatureGrid, SpatialMask, TemporalMask
from cuavid.pruner import (
    combine,
    compute_masks,
    decode_packed,
    encode_packed,
    merge_adjacent_frame_masks,
    merge_adjacent_frames,
    pack,
    prune_pipeline,
    read_packed,
    scatter_back,
    write_packed,
)
from cuavid.stp import StpConfig
from cuavid.synth import DynamicRegion, SceneSpec, generate, static_background_suite
from cuavid.ttp import TtpConfig


def random_masks(rng, t, h, w):
    spatial = SpatialMask(rng.random((t, h, w)) < 0.6)
    tbits = rng.random((t, h * w)) < 0.5
    tbits[0] = True
    return spatial, TemporalMask(tbits)


def wallpaper_with_block(frames=10):
    spec = SceneSpec(
        grid_height=8, grid_width=8, frames=frames, background=(0.2, 0.4, 0.6),
        dynamic_regions=(DynamicRegion(1, 1, 2, 2, schedule=((0.9, 0.1, 0.1),), velocity=(0, 1)),),
    )
    return generate(spec)


def test_combine_identity():
    s = SpatialMask(np.ones((3, 2, 2), dtype=bool))
    t = TemporalMask(np.ones((3, 4), dtype=bool))
    assert combine(s, t).bits.all()


def test_combine_sparse_temporal():
    s = SpatialMask(np.ones((3, 2, 2), dtype=bool))
    tb = np.zeros((3, 4), dtype=bool)
    tb[0] = True
    c = combine(s, TemporalMask(tb))
    assert c.per_frame() == [4, 0, 0]


def test_combine_popcount_property():
    rng = np.random.default_rng(0)
    for _ in range(100):
        t, h, w = rng.integers(1, 6, size=3)
        s, tm = random_masks(rng, t, h, w)
        c = combine(s, tm)
        expected = sum(
            1 for k in range(t) for i in range(h) for j in range(w)
            if s.bits[k, i, j] and tm.bits[k, i * w + j]
        )
        assert c.popcount() == expected
        assert c.popcount() <= min(s.popcount(), tm.popcount())


def test_combine_shape_mismatch():
    with pytest.raises(InvalidInputError):
        combine(SpatialMask(np.ones((2, 2, 2), dtype=bool)), TemporalMask(np.ones((2, 5), dtype=bool)))


def test_merge_masks_examples():
    keep = np.ones((2, 3, 3), dtype=bool)
    assert merge_adjacent_frame_masks(SpatialMask(keep)).bits.tolist() == keep[:1].tolist()
    mixed = keep.copy()
    mixed[1] = False
    merged = merge_adjacent_frame_masks(SpatialMask(mixed)).bits
    assert merged.shape == (1, 3, 3) and not merged.any()


def test_merge_masks_odd_frames_against_bitwise_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        bits = rng.random((3, 4, 5)) < 0.5
        merged = merge_adjacent_frame_masks(SpatialMask(bits)).bits
        assert merged.shape == (2, 4, 5)
        for i in range(4):
            for j in range(5):
                prune = (not bits[0, i, j]) or (not bits[1, i, j])
                assert merged[0, i, j] == (not prune)
        assert np.array_equal(merged[1], bits[2])


def test_merge_frames_average():
    toks = np.arange(3 * 2 * 1, dtype=float).reshape(3, 2, 1)
    merged = merge_adjacent_frames(toks)
    assert merged[:, :, 0].tolist() == [[1.0, 2.0], [4.0, 5.0]]


def test_pack_all_and_none():
    rng = np.random.default_rng(1)
    toks = rng.normal(size=(3, 4, 2))
    full = pack(toks, CombinedMask(np.ones((3, 4), dtype=bool)))
    assert len(full) == 12
    assert np.array_equal(full.tokens, toks.reshape(12, 2))
    empty = pack(toks, CombinedMask(np.zeros((3, 4), dtype=bool)))
    assert len(empty) == 0 and empty.tokens.shape == (0, 2)


def test_pack_fuzzed_against_index_oracle():
    rng = np.random.default_rng(2)
    for _ in range(50):
        t, n, d = rng.integers(1, 8, size=3)
        toks = rng.normal(size=(t, n, d))
        mask = CombinedMask(rng.random((t, n)) < 0.4)
        seq = pack(toks, mask)
        assert len(seq) == mask.popcount()
        for k, (ft, fi) in enumerate(seq.provenance):
            assert mask.bits[ft, fi]
            assert np.array_equal(seq.tokens[k], toks[ft, fi])
        keys = [tuple(p) for p in seq.provenance]
        assert keys == sorted(set(keys))
        back = scatter_back(seq, t, n)
        assert np.array_equal(back, toks * mask.bits[:, :, None])


def test_pack_shape_mismatch():
    with pytest.raises(InvalidInputError):
        pack(np.zeros((2, 3, 1)), CombinedMask(np.ones((2, 4), dtype=bool)))


def test_pipeline_requires_a_variant():
    with pytest.raises(InvalidInputError):
        prune_pipeline(FeatureGrid(np.zeros((1, 2, 2, 1))))


def test_pipeline_and_inclusion():
    grid = wallpaper_with_block()
    _, both = prune_pipeline(grid, StpConfig(), TtpConfig())
    _, stp = prune_pipeline(grid, StpConfig(), None)
    _, ttp = prune_pipeline(grid, None, TtpConfig())
    assert both.kept_tokens <= stp.kept_tokens
    assert both.kept_tokens <= ttp.kept_tokens
    assert (both.variant, stp.variant, ttp.variant) == ("both", "stp-only", "ttp-only")
    assert both.thresholds == {"tau_s": 0.3, "tau_large": 40, "tau_t": 0.9999}


def test_pipeline_stp_only_forced_prune():
    _, report = prune_pipeline(FeatureGrid(np.zeros((1, 2, 2, 3))), StpConfig(0.3, 3), None)
    assert report.kept_tokens == 0
    assert report.per_frame_kept == [0]
    assert report.reduction_ratio == 0.0


def test_pipeline_ttp_only_static_video():
    rng = np.random.default_rng(0)
    frame = rng.normal(size=(5, 6, 4))
    grid = FeatureGrid(np.repeat(frame[None], 10, axis=0))
    _, report = prune_pipeline(grid, None, TtpConfig())
    assert report.kept_tokens == 30
    assert report.per_frame_kept == [30] + [0] * 9


def test_pipeline_kept_equals_mask_popcount():
    grid = wallpaper_with_block(7)
    masks = compute_masks(grid, StpConfig(), TtpConfig())
    seq, report = prune_pipeline(grid, StpConfig(), TtpConfig())
    assert report.kept_tokens == int((masks.spatial.flat() & masks.temporal.bits).sum()) == len(seq)
    assert 0.0 <= report.reduction_ratio <= 1.0


def test_pipeline_merge_adjacent():
    grid = wallpaper_with_block(7)
    masks = compute_masks(grid, StpConfig(), TtpConfig(), merge_adjacent=True)
    assert masks.spatial.frames == 4
    assert masks.temporal.bits.shape == (4, 64)
    seq, report = prune_pipeline(grid, StpConfig(), TtpConfig(), merge_adjacent=True)
    assert report.frames == 4 and report.total_tokens == 4 * 64
    assert report.merge_adjacent
    assert len(seq) == report.kept_tokens


def test_static_background_suite_halves_tokens():
    for frames in (10, 20):
        grid = generate(static_background_suite(frames))
        _, report = prune_pipeline(grid, StpConfig(), TtpConfig())
        assert report.reduction_ratio < 0.5


def test_packed_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    toks = rng.normal(size=(4, 6, 3)).astype(np.float32)
    seq = pack(toks, CombinedMask(rng.random((4, 6)) < 0.5))
    raw = encode_packed(seq)
    assert len(raw) == 8 + 8 * len(seq) + 4 * 3 * len(seq)
    back = decode_packed(raw)
    assert np.array_equal(back.tokens, seq.tokens)
    assert np.array_equal(back.provenance, seq.provenance)
    write_packed(tmp_path / "s.evpk", seq)
    assert np.array_equal(read_packed(tmp_path / "s.evpk").tokens, seq.tokens)
    empty = pack(toks, CombinedMask(np.zeros((4, 6), dtype=bool)))
    assert len(decode_packed(encode_packed(empty))) == 0
    with pytest.raises(InvalidInputError):
        decode_packed(raw[:-2])


def test_report_json():
    grid = wallpaper_with_block(3)
    _, report = prune_pipeline(grid, StpConfig(), TtpConfig())
    import json

    obj = json.loads(report.to_json())
    assert obj["kept_tokens"] == report.kept_tokens
    assert obj["variant"] == "both"
