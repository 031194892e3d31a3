import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rgbdnerf.geometry import Camera, CameraIntrinsics, Pose, Ray, camera_dirs, pixel_grid
from rgbdnerf.sampling import (
    SamplingConfig,
    Strategy,
    compute_depth_error_maps,
    sample_gaussian,
    sample_ray,
    sample_rays,
    sample_stratified_global,
    sample_stratified_local,
    sigma_from_error,
)


def midpoints(lo, hi, n):
    return [lo + (i + 0.5) * (hi - lo) / n for i in range(n)]


# ---------------------------------------------------------------------------
# global stratified


def test_global_midpoints():
    s = sample_stratified_global(2.0, 6.0, 4, perturb=False)
    np.testing.assert_allclose(s.t, [2.5, 3.5, 4.5, 5.5])
    assert not s.from_depth


def test_global_one_sample_per_bin(rng):
    for _ in range(200):
        t = sample_stratified_global(2.0, 6.0, 4, rng).t
        for i in range(4):
            assert 2 + i <= t[i] < 3 + i
        assert np.all(np.diff(t) >= 0)


def test_global_first_sample_mean_monte_carlo(rng):
    cfg = SamplingConfig(Strategy.GLOBAL, n_samples=4)
    t, _ = sample_rays(np.full(100_000, 2.0), 6.0, None, None, cfg, rng)
    # first bin is U[2, 3): mean 2.5
    assert abs(t[:, 0].mean() - 2.5) < 0.01


# ---------------------------------------------------------------------------
# local stratified


def test_local_bounds(rng):
    for _ in range(100):
        s = sample_stratified_local(2.0, 0.3, 16, 0.5, 6.0, rng)
        assert s.from_depth
        assert np.all(s.t >= 1.7) and np.all(s.t <= 2.3)
        edges = 1.7 + 0.6 * np.arange(17) / 16
        assert np.all((s.t >= edges[:-1] - 1e-12) & (s.t <= edges[1:] + 1e-12))


def test_local_midpoints():
    s = sample_stratified_local(2.0, 0.3, 4, 0.5, 6.0, perturb=False)
    np.testing.assert_allclose(s.t, midpoints(1.7, 2.3, 4))
    np.testing.assert_allclose(s.t, [1.775, 1.925, 2.075, 2.225])


def test_local_fallback_outside_bounds(rng):
    s = sample_stratified_local(20.0, 0.3, 8, 0.5, 6.0, rng)
    assert not s.from_depth
    assert s.t.min() >= 0.5 and s.t.max() <= 6.0


def test_local_with_wide_window_equals_global():
    a = sample_stratified_local(3.0, 10.0, 8, 0.5, 6.0, np.random.default_rng(5))
    b = sample_stratified_global(0.5, 6.0, 8, np.random.default_rng(5))
    np.testing.assert_array_equal(a.t, b.t)


# ---------------------------------------------------------------------------
# Gaussian


def test_gaussian_zero_sigma():
    s = sample_gaussian(2.0, 0.0, 8, 0.5, 6.0, np.random.default_rng(0))
    np.testing.assert_array_equal(s.t, 2.0)


def test_gaussian_moments_monte_carlo(rng):
    s = sample_gaussian(2.0, 0.1, 100_000, 0.5, 6.0, rng)
    assert abs(s.t.mean() - 2.0) < 0.002
    assert abs(s.t.std() - 0.1) < 0.002


def test_gaussian_clamped_to_far(rng):
    s = sample_gaussian(2.0, 0.1, 64, 0.5, 2.0, rng)
    assert np.all(s.t <= 2.0)
    assert np.all(np.diff(s.t) >= 0)


def test_gaussian_deterministic_quantiles_are_symmetric():
    s = sample_gaussian(2.0, 0.1, 16, 0.5, 6.0, perturb=False)
    np.testing.assert_allclose(s.t - 2.0, -(s.t[::-1] - 2.0), atol=1e-12)


# ---------------------------------------------------------------------------
# adaptive spread


def test_sigma_from_error_examples():
    cfg = SamplingConfig(sigma_min=0.01, sigma_max=0.5, k_error=1.0)
    assert sigma_from_error(0.0, cfg) == pytest.approx(0.01)
    assert sigma_from_error(0.2, cfg) == pytest.approx(0.01 + 1.0 * 0.2)
    assert sigma_from_error(10.0, cfg) == pytest.approx(0.5)


@given(st.floats(0, 100), st.floats(0, 100), st.floats(0, 5))
def test_sigma_from_error_monotone(e1, e2, k):
    cfg = SamplingConfig(k_error=k)
    lo, hi = sorted((e1, e2))
    assert sigma_from_error(lo, cfg) <= sigma_from_error(hi, cfg)


def test_sigma_from_error_rejects_negative():
    with pytest.raises(ValueError):
        sigma_from_error(-0.1, SamplingConfig())


# ---------------------------------------------------------------------------
# dispatch


def _ray(scale=1.0):
    return Ray(np.zeros(3), np.array([0.0, 0.0, -1.0]), 0.5, 6.0, scale)


def test_dispatch_global_ignores_depth():
    cfg = SamplingConfig(Strategy.GLOBAL, n_samples=8)
    a = sample_ray(_ray(), 2.0, None, cfg, np.random.default_rng(3))
    b = sample_stratified_global(0.5, 6.0, 8, np.random.default_rng(3))
    np.testing.assert_array_equal(a.t, b.t)


def test_dispatch_adaptive_zero_error_is_gaussian_sigma_min():
    cfg = SamplingConfig(Strategy.ADAPTIVE, n_samples=8)
    a = sample_ray(_ray(), 2.0, 0.0, cfg, np.random.default_rng(3))
    b = sample_gaussian(2.0, cfg.sigma_min, 8, 0.5, 6.0, np.random.default_rng(3))
    np.testing.assert_array_equal(a.t, b.t)


@pytest.mark.parametrize("strategy", [Strategy.STRATIFIED, Strategy.GAUSSIAN, Strategy.ADAPTIVE])
@pytest.mark.parametrize("depth", [0.0, -1.0, np.nan, np.inf])
def test_dispatch_invalid_depth_falls_back(strategy, depth):
    cfg = SamplingConfig(strategy, n_samples=8)
    s = sample_ray(_ray(), depth, 0.0, cfg, np.random.default_rng(0))
    assert not s.from_depth
    width = 5.5 / 8
    for i, t in enumerate(s.t):
        assert 0.5 + i * width <= t <= 0.5 + (i + 1) * width


def test_dispatch_converts_z_depth_to_ray_distance():
    cfg = SamplingConfig(Strategy.GAUSSIAN, n_samples=4, sigma_fixed=0.0)
    s = sample_ray(_ray(scale=1.25), 2.0, None, cfg, np.random.default_rng(0))
    np.testing.assert_allclose(s.t, 2.5)


def test_fuzz_sorted_and_in_bounds(rng):
    strategies = list(Strategy)
    for _ in range(10_000):
        near = rng.uniform(0.01, 3.0)
        far = near + rng.uniform(0.01, 5.0)
        cfg = SamplingConfig(
            strategies[rng.integers(4)],
            n_samples=int(rng.integers(2, 33)),
            delta=rng.uniform(1e-3, 2.0),
            sigma_fixed=rng.uniform(0, 1.0),
            perturb=bool(rng.integers(2)),
        )
        depth = rng.choice([0.0, rng.uniform(0.0, 10.0)])
        s = sample_ray(Ray(np.zeros(3), np.array([1.0, 0, 0]), near, far, rng.uniform(1, 1.5)), depth, rng.uniform(0, 2), cfg, rng)
        assert len(s.t) == cfg.n_samples
        assert np.all(np.diff(s.t) >= 0)
        assert s.t[0] >= near and s.t[-1] <= far


def test_batch_fuzz_sorted_and_in_bounds(rng):
    for strategy in Strategy:
        cfg = SamplingConfig(strategy, n_samples=16, sigma_fixed=0.5)
        near = rng.uniform(0.1, 1.0, 5000)
        far = near + rng.uniform(0.1, 5.0, 5000)
        depth = np.where(rng.random(5000) < 0.2, 0.0, rng.uniform(0, 7, 5000))
        t, ok = sample_rays(near, far, depth, rng.uniform(0, 1, 5000), cfg, rng)
        assert np.all(np.diff(t, axis=1) >= 0)
        assert np.all(t >= near[:, None]) and np.all(t <= far[:, None])
        if strategy is Strategy.GLOBAL:
            assert not ok.any()


@pytest.mark.parametrize("strategy", list(Strategy))
def test_batch_matches_single_ray_without_jitter(strategy):
    cfg = SamplingConfig(strategy, n_samples=8, perturb=False)
    depth = np.array([2.0, 0.0, 5.9, 30.0])
    err = np.array([0.05, 0.1, 0.0, 0.3])
    t, ok = sample_rays(0.5, 6.0, depth, err, cfg, None)
    for k in range(4):
        s = sample_ray(_ray(), depth[k], err[k], cfg)
        np.testing.assert_allclose(t[k], s.t, rtol=1e-12)
        assert ok[k] == s.from_depth


@pytest.mark.parametrize("strategy", list(Strategy))
def test_same_seed_bit_identical(strategy):
    cfg = SamplingConfig(strategy)
    depth = np.linspace(0, 4, 300)
    a, _ = sample_rays(0.5, 6.0, depth, depth * 0.1, cfg, np.random.default_rng(9))
    b, _ = sample_rays(0.5, 6.0, depth, depth * 0.1, cfg, np.random.default_rng(9))
    assert a.tobytes() == b.tobytes()


def test_config_validation():
    with pytest.raises(ValueError):
        SamplingConfig(n_samples=1)
    with pytest.raises(ValueError):
        SamplingConfig(delta=0)
    with pytest.raises(ValueError):
        SamplingConfig(sigma_min=0.6, sigma_max=0.5)
    with pytest.raises(ValueError):
        SamplingConfig(k_error=-1)
    with pytest.raises(ValueError):
        SamplingConfig(strategy="uniform")
    assert SamplingConfig(strategy="nerf").strategy is Strategy.GLOBAL


# ---------------------------------------------------------------------------
# multiview depth error maps against an analytic plane


INTR = CameraIntrinsics(60.0, 60.0, 32.0, 24.0, 64, 48)


def plane_depth(cam, normal, offset):
    """Exact z-depth of the plane n.X = offset seen from ``cam`` (0 = miss)."""
    px, py = pixel_grid(cam)
    d_world = camera_dirs(cam, px, py) @ cam.pose.rotation.T  # camera z-component is -1
    normal = np.asarray(normal, float)
    s = (offset - normal @ cam.position) / (d_world @ normal)
    return np.where(s > 0, s, 0.0)


def two_views(normal=(0, 0, 1), offset=-3.0):
    a = Camera(INTR, Pose.identity())
    b = Camera(INTR, Pose(np.eye(3), np.array([0.3, 0.1, 0.0])))
    return [(a, plane_depth(a, normal, offset)), (b, plane_depth(b, normal, offset))]


def covisible(maps, fill):
    return maps.e != fill


def test_single_view_all_fill():
    (m,) = compute_depth_error_maps([(Camera(INTR), np.full((48, 64), 2.0))], e_max_fill=0.7)
    np.testing.assert_array_equal(m.e, 0.7)


@pytest.mark.parametrize("lookup", ["nearest", "bilinear"])
def test_consistent_plane_gives_zero_error(lookup):
    frames = two_views()
    maps = compute_depth_error_maps(frames, e_max_fill=9.0, lookup=lookup)
    for m in maps:
        mask = covisible(m, 9.0)
        assert mask.mean() > 0.5
        assert m.e[mask].max() <= 1e-3


def test_biased_view_raises_error():
    frames = two_views()
    cam_b, depth_b = frames[1]
    frames[1] = (cam_b, depth_b + 0.1)
    m = compute_depth_error_maps(frames, e_max_fill=9.0)[0]
    mask = covisible(m, 9.0)
    np.testing.assert_allclose(m.e[mask], 0.1, atol=0.01)


def test_tilted_plane_bilinear_lookup_is_accurate():
    frames = two_views(normal=(0.3, 0.2, 1.0), offset=-3.0)
    m = compute_depth_error_maps(frames, e_max_fill=9.0, lookup="bilinear")[0]
    mask = covisible(m, 9.0)
    assert m.e[mask].mean() <= 1e-3
    # nearest-pixel lookup is quantized on slanted surfaces
    near = compute_depth_error_maps(frames, e_max_fill=9.0, lookup="nearest")[0]
    assert near.e[mask].mean() > m.e[mask].mean()


def test_invalid_depth_gets_fill():
    frames = two_views()
    cam_a, depth_a = frames[0]
    depth_a = depth_a.copy()
    depth_a[:5] = 0.0
    m = compute_depth_error_maps([(cam_a, depth_a), frames[1]], e_max_fill=4.0)[0]
    np.testing.assert_array_equal(m.e[:5], 4.0)


def test_error_maps_reject_empty():
    with pytest.raises(ValueError):
        compute_depth_error_maps([])
