import numpy as np
import pytest

import oracles
from cuavid.errors import InvalidInputError
from cuavid.grid import FeatureGrid
from cuavid.stp import StpConfig, UnionFind, build_components, neighbor_distances, spatial_mask


def block_frame():
    """6x6 background b with a 2x2 block f at rows 2-3, cols 2-3, ||b - f|| = 1."""
    frame = np.zeros((6, 6, 2))
    frame[2:4, 2:4] = [1.0, 0.0]
    return frame


def random_frame(rng, h, w, d, levels=3):
    # few distinct levels so that some neighbour pairs are identical
    return rng.integers(0, levels, size=(h, w, d)) * 0.2 + rng.normal(scale=0.05, size=(h, w, d))


def test_stp_defaults():
    cfg = StpConfig()
    assert cfg.tau_s == 0.3
    assert cfg.tau_large == 40


@pytest.mark.parametrize("kwargs", [{"tau_s": float("nan")}, {"tau_s": -0.1}, {"tau_large": 0}, {"tau_large": 2.5}])
def test_stp_config_rejects(kwargs):
    with pytest.raises(InvalidInputError):
        StpConfig(**kwargs)


def test_union_find_by_size():
    uf = UnionFind(6)
    uf.union(0, 1)
    uf.union(2, 3)
    uf.union(3, 4)
    assert uf.find(1) == uf.find(0)
    assert uf.find(4) == uf.find(2)
    assert uf.find(0) != uf.find(2)
    root = uf.union(0, 4)
    assert uf.size[root] == 5
    assert uf.find(5) == 5


def test_neighbor_distances_constant_frame():
    h, v = neighbor_distances(np.ones((3, 4, 2)))
    assert h.shape == (3, 3) and v.shape == (2, 4)
    assert not h.any() and not v.any()


def test_neighbor_distances_345():
    h, v = neighbor_distances(np.array([[[0.0, 0.0], [3.0, 4.0]]]))
    assert h.tolist() == [[5.0]]
    assert v.shape == (0, 2)


def test_neighbor_distances_degenerate_width():
    h, v = neighbor_distances(np.zeros((3, 1, 2)))
    assert h.shape == (3, 0)
    assert v.shape == (2, 1)


def test_neighbor_distances_match_pairwise_oracle():
    rng = np.random.default_rng(11)
    frame = rng.normal(size=(6, 6, 4))
    h, v = neighbor_distances(frame)
    for i in range(6):
        for j in range(5):
            assert h[i, j] == pytest.approx(oracles.l2(frame[i, j], frame[i, j + 1]), rel=1e-12)
    for i in range(5):
        for j in range(6):
            assert v[i, j] == pytest.approx(oracles.l2(frame[i, j], frame[i + 1, j]), rel=1e-12)


def test_components_constant_2x2():
    lab = build_components(np.zeros((2, 2, 3)), 0.3)
    assert lab.count == 1
    assert lab.sizes == {0: 4}
    assert (lab.labels == 0).all()


def test_components_all_far_apart():
    # every 4-neighbour pair at distance exactly 1
    frame = np.array([[[0.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [1.0, 1.0]]])
    lab = build_components(frame, 0.3)
    assert lab.count == 4
    assert lab.labels.tolist() == [[0, 1], [2, 3]]


def test_components_no_diagonal_edges():
    frame = np.array([[[0.0], [5.0]], [[5.0], [0.0]]])
    assert build_components(frame, 0.3).count == 4


def test_components_canonical_labels():
    frame = np.zeros((3, 3, 1))
    frame[:, 0] = 9.0
    frame[2, 2] = 4.0
    lab = build_components(frame, 0.3)
    assert lab.labels.tolist() == [[0, 1, 1], [0, 1, 1], [0, 1, 8]]
    assert lab.sizes == {0: 3, 1: 5, 8: 1}


def test_components_match_bfs_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        h, w, d = rng.integers(1, 17), rng.integers(1, 17), rng.integers(1, 9)
        frame = random_frame(rng, h, w, d)
        tau = float(rng.uniform(0.0, 0.6))
        lab = build_components(frame, tau)
        assert lab.labels.tolist() == oracles.bfs_labels(frame.tolist(), tau)


def test_distance_equal_to_tau_is_not_an_edge():
    frame = np.array([[[0.0, 0.0], [3.0, 4.0]]])
    assert build_components(frame, 5.0).count == 2
    assert build_components(frame, 5.000001).count == 1


def test_spatial_mask_forced_prune():
    grid = FeatureGrid(np.zeros((1, 2, 2, 3)))
    mask = spatial_mask(grid, StpConfig(0.3, 3))
    assert not mask.bits.any()


def test_spatial_mask_component_of_size_tau_large_is_kept():
    grid = FeatureGrid(np.zeros((1, 2, 2, 3)))
    assert spatial_mask(grid, StpConfig(0.3, 4)).bits.all()


def test_spatial_mask_background_block():
    frame = block_frame()
    sizes = {}
    for row in oracles.bfs_labels(frame.tolist(), 0.3):
        for lab in row:
            sizes[lab] = sizes.get(lab, 0) + 1
    assert sorted(sizes.values()) == [4, 32]

    mask = spatial_mask(FeatureGrid(frame[None]), StpConfig(0.3, 10)).bits[0]
    expected = np.zeros((6, 6), dtype=bool)
    expected[2:4, 2:4] = True
    assert np.array_equal(mask, expected)


def test_spatial_mask_large_tau_large_keeps_all():
    rng = np.random.default_rng(0)
    grid = FeatureGrid(np.zeros((2, 5, 7, 3)) + rng.normal(scale=0.01, size=(2, 5, 7, 3)))
    assert spatial_mask(grid, StpConfig(0.3, 35)).bits.all()


def test_spatial_mask_zero_tau_keeps_all():
    grid = FeatureGrid(np.zeros((2, 8, 8, 2)))
    assert spatial_mask(grid, StpConfig(0.0, 1)).bits.all()
    assert build_components(np.zeros((8, 8, 2)), -1.0).count == 64


def test_spatial_mask_frame_independence():
    rng = np.random.default_rng(5)
    data = np.stack([random_frame(rng, 8, 8, 3) for _ in range(4)])
    perm = [2, 0, 3, 1]
    cfg = StpConfig(0.3, 5)
    a = spatial_mask(FeatureGrid(data), cfg).bits
    b = spatial_mask(FeatureGrid(data[perm]), cfg).bits
    assert np.array_equal(a[perm], b)


def test_spatial_mask_monotone_in_tau_s():
    rng = np.random.default_rng(99)
    for _ in range(50):
        frame = random_frame(rng, 10, 10, 3)
        t1, t2 = sorted(rng.uniform(0, 0.6, size=2))
        cfg1, cfg2 = StpConfig(float(t1), 6), StpConfig(float(t2), 6)
        pruned1 = ~spatial_mask(FeatureGrid(frame[None]), cfg1).bits
        pruned2 = ~spatial_mask(FeatureGrid(frame[None]), cfg2).bits
        assert not (pruned1 & ~pruned2).any()


def test_invalid_frame():
    with pytest.raises(InvalidInputError):
        build_components(np.zeros((3, 3)), 0.3)
    with pytest.raises(InvalidInputError):
        build_components(np.zeros((2, 2, 1)), float("inf"))
