import tracemalloc

import numpy as np
import pytest

from deepmatch.descriptor import compute_descriptors
from deepmatch.pyramid import (
    CorrelationPyramid,
    PyramidLevel,
    aggregate_level,
    analytic_nbytes,
    atomic_correlation,
    atomic_grid,
    build_pyramid,
    build_pyramid_approx,
    extract_patches,
    map_shape,
    num_levels,
    parent_grid,
    pool_subsample,
)
from deepmatch.quantize import cluster_prototypes
from helpers import make_texture
from oracles import atomic_score, grids_oracle, pyramid_oracle


def fields(size=32, seed=0, size2=None):
    a = make_texture(size, seed=seed)
    b = make_texture(size2 or size, seed=seed + 1000)
    return compute_descriptors(a), compute_descriptors(b)


def test_atomic_scalar_oracle_8x8():
    f1, f2 = fields(8, seed=2)
    grid = atomic_grid(8, 8)
    maps = atomic_correlation(extract_patches(f1, grid), f2, lam=1.0)
    for k, (x, y) in enumerate(grid.positions):
        for qy in range(8):
            for qx in range(8):
                assert abs(maps[k, qy, qx] - atomic_score(f1, f2, (x, y), (qx, qy))) < 1e-6


def test_self_similarity_is_one_at_own_center():
    f1, _ = fields(16, seed=4)
    grid = atomic_grid(16, 16)
    maps = atomic_correlation(extract_patches(f1, grid), f1)
    for k, (x, y) in enumerate(grid.positions):
        assert abs(maps[k, y, x] - 1.0) < 1e-6
        assert maps[k, y, x] >= maps[k].max() - 1e-6


def test_flat_images_correlate_to_one_inside():
    f = compute_descriptors(np.full((12, 12), 0.5))
    maps = atomic_correlation(extract_patches(f, atomic_grid(12, 12)), f)
    # windows fully inside image 2 score exactly 1; border windows lose the missing pixels
    np.testing.assert_allclose(maps[:, 2:11, 2:11], 1.0, atol=1e-6)
    assert maps[:, 0, 0].max() < 1.0


def test_grid_sizes_and_membership():
    for w, h in [(32, 32), (37, 21), (64, 48), (4, 4), (9, 30)]:
        g0 = atomic_grid(w, h)
        assert len(g0) == (w // 4) * (h // 4)
        ref = grids_oracle(w, h)
        g = g0
        assert sorted(map(tuple, g.positions.tolist())) == sorted(ref[0])
        for level in range(1, len(ref)):
            g = parent_grid(g, w, h)
            assert sorted(map(tuple, g.positions.tolist())) == sorted(ref[level])
            assert np.all((g.children >= 0).sum(axis=1) >= 1)


def test_level_count():
    f1, f2 = fields(64)
    assert len(build_pyramid(f1, f2)) == 5 == num_levels(64, 64)
    f1, f2 = fields(4)
    assert len(build_pyramid(f1, f2)) == 1


def test_map_shapes_and_range():
    f1, f2 = fields(24, size2=(19, 27))
    pyr = build_pyramid(f1, f2)
    for level, lv in enumerate(pyr.levels):
        assert lv.maps.shape[1:] == map_shape((19, 27), level) == (-(-19 // 2**level), -(-27 // 2**level))
        assert len(lv.grid) == len(lv.maps)
        assert lv.maps.min() >= 0.0 and lv.maps.max() <= 1.0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_recursive_oracle(seed):
    f1, f2 = fields(32, seed=seed)
    ref = pyramid_oracle(f1, f2)
    pyr = build_pyramid(f1, f2)
    assert len(pyr.levels) == len(ref)
    for level, lv in enumerate(pyr.levels):
        assert len(lv.grid) == len(ref[level])
        for k, (x, y) in enumerate(lv.grid.positions):
            np.testing.assert_allclose(lv.map_for(k), ref[level][(int(x), int(y))], atol=1e-5)


def test_constant_children_give_constant_parent():
    c = 0.6
    grid0 = atomic_grid(16, 16)
    child = PyramidLevel(grid0, np.full((len(grid0), 16, 16), c, np.float32), np.arange(len(grid0)))
    parent = aggregate_level(child, parent_grid(grid0, 16, 16), lam=1.4)
    # interior of the map (away from the zero-filled shift border)
    np.testing.assert_allclose(parent.maps[:, 1:-1, 1:-1], c ** 1.4, rtol=1e-6)


def test_pool_subsample_window():
    rng = np.random.default_rng(0)
    m = rng.random((7, 9)).astype(np.float32)
    out = pool_subsample(m)
    assert out.shape == (4, 5)
    for qy in range(4):
        for qx in range(5):
            ys = slice(max(0, 2 * qy - 1), 2 * qy + 2)
            xs = slice(max(0, 2 * qx - 1), 2 * qx + 2)
            assert out[qy, qx] == m[ys, xs].max()


def test_lossless_dictionary_matches_exact():
    f1, f2 = fields(32, seed=7)
    exact = build_pyramid(f1, f2)
    d = cluster_prototypes(f1, 10_000)
    approx = build_pyramid_approx(f1, f2, d)
    for a, b in zip(exact.levels, approx.levels):
        for k in range(len(a.grid)):
            np.testing.assert_allclose(a.map_for(k), b.map_for(k), atol=1e-6)


def _sharing_oracle(pyr_exact, assignment):
    """Distinct maps per level predicted from the assignment histogram and child tuples."""
    labels = [tuple([int(a)]) for a in assignment]
    counts = [len(set(labels))]
    for lv in pyr_exact.levels[1:]:
        new = []
        for kids in lv.grid.children:
            new.append(tuple(labels[c] if c >= 0 else None for c in kids))
        labels = new
        counts.append(len(set(labels)))
    return counts


def test_approx_sharing_and_memory():
    img1 = make_texture(128, seed=11)
    img2 = make_texture(128, seed=12)
    f1, f2 = compute_descriptors(img1), compute_descriptors(img2)
    d = cluster_prototypes(f1, 64, seed=0)
    tracemalloc.start()
    exact = build_pyramid(f1, f2)
    _, peak_exact = tracemalloc.get_traced_memory()
    del exact
    tracemalloc.reset_peak()
    tracemalloc.stop()
    tracemalloc.start()
    approx = build_pyramid_approx(f1, f2, d)
    _, peak_approx = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert approx.stats["distinct_maps"][0] <= 64
    assert peak_approx < peak_exact
    exact = build_pyramid(f1, f2)
    predicted = _sharing_oracle(exact, d.assignment)
    assert approx.stats["distinct_maps"] == predicted
    area = [np.prod(lv.maps.shape[1:]) for lv in approx.levels]
    assert approx.nbytes == sum(n * a * 4 for n, a in zip(predicted, area))
    print(f"approx/exact peak ratio {peak_approx / peak_exact:.3f}")


def test_memory_high_water_256():
    img1 = make_texture(256, seed=21)
    img2 = make_texture(256, seed=22)
    f1, f2 = compute_descriptors(img1), compute_descriptors(img2)
    bound = analytic_nbytes((256, 256), (256, 256))
    tracemalloc.start()
    pyr = build_pyramid(f1, f2)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert pyr.nbytes == bound
    assert peak <= 1.2 * bound, peak / bound


def test_thread_count_does_not_change_maps():
    f1, f2 = fields(48, seed=3)
    a = build_pyramid(f1, f2, n_threads=1)
    b = build_pyramid(f1, f2, n_threads=4)
    for la, lb in zip(a.levels, b.levels):
        assert la.maps.tobytes() == lb.maps.tobytes()


def test_errors():
    f = compute_descriptors(np.zeros((3, 8)))
    with pytest.raises(ValueError):
        build_pyramid(f, f)
    f1, f2 = fields(16)
    d = cluster_prototypes(f1, 4)
    d.assignment = d.assignment[:-1]
    with pytest.raises(ValueError, match="atomic patches"):
        build_pyramid_approx(f1, f2, d)


def test_thin_image_stops_at_last_nonempty_level():
    f1 = compute_descriptors(make_texture((4, 9), seed=1))
    pyr = build_pyramid(f1, f1)
    assert all(len(lv.grid) > 0 for lv in pyr.levels)
    assert len(pyr.levels) < num_levels(9, 4)
