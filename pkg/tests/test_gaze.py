import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazevit.errors import AllSaccades, BadK, BadWindow, EmptyTrace, NoFixations, RoiOutOfBounds, ZeroDims
from gazevit.gaze import (
    Fixation,
    FixationConfig,
    GazeSample,
    GazeTrace,
    GridHeatmap,
    Heatmap,
    crop_and_resize,
    detect_fixations,
    downsample_heatmap,
    gathered_mask,
    render_heatmap,
    separated_mask,
)


def planted_trace(centers, rng, dwell_ms=400.0, dt=4.0, spread=1.0, jump=3):
    """Clusters within +-spread px of each centre joined by ``jump`` fast transit samples."""
    t, xs, ys = [], [], []
    now = 0.0
    prev = None
    for cx, cy in centers:
        if prev is not None:
            for f in np.linspace(0, 1, jump + 2)[1:-1]:
                t.append(now)
                xs.append(prev[0] + f * (cx - prev[0]))
                ys.append(prev[1] + f * (cy - prev[1]))
                now += dt
        for _ in range(int(dwell_ms / dt) + 1):
            t.append(now)
            xs.append(cx + rng.uniform(-spread, spread))
            ys.append(cy + rng.uniform(-spread, spread))
            now += dt
        prev = (cx, cy)
    return GazeTrace(t, xs, ys, np.ones(len(t), bool))


class TestDetectFixations:
    def test_constant_trace(self):
        trace = GazeTrace(np.linspace(0, 500, 50), np.full(50, 120.0), np.full(50, 80.0), np.ones(50, bool))
        (fix,) = detect_fixations(trace)
        assert (fix.cx, fix.cy) == (120.0, 80.0)
        assert fix.duration_ms == 500.0

    def test_two_clusters(self):
        rng = np.random.default_rng(0)
        trace = planted_trace([(100, 100), (300, 300)], rng)
        fixes = detect_fixations(trace, FixationConfig(dispersion_px=20, min_duration_ms=100))
        assert len(fixes) == 2
        assert np.hypot(fixes[0].cx - 100, fixes[0].cy - 100) <= 2
        assert np.hypot(fixes[1].cx - 300, fixes[1].cy - 300) <= 2

    def test_no_valid_samples(self):
        trace = GazeTrace([0, 10], [1, 2], [1, 2], [False, False])
        with pytest.raises(EmptyTrace):
            detect_fixations(trace)

    def test_all_saccades(self):
        # every sample 100 px from the last
        trace = GazeTrace(np.arange(50) * 4.0, np.arange(50) * 100.0, np.zeros(50), np.ones(50, bool))
        with pytest.raises(AllSaccades):
            detect_fixations(trace)

    def test_invalid_samples_dropped(self):
        n = 60
        x = np.full(n, 50.0)
        valid = np.ones(n, bool)
        x[10] = 5000.0  # a blink artefact, flagged invalid
        valid[10] = False
        fixes = detect_fixations(GazeTrace(np.arange(n) * 4.0, x, np.full(n, 50.0), valid))
        assert len(fixes) == 1 and fixes[0].cx == 50.0

    def test_bounds_clamp(self):
        trace = GazeTrace(np.linspace(0, 200, 30), np.full(30, -3.0), np.full(30, 500.0), np.ones(30, bool))
        (fix,) = detect_fixations(trace, bounds=(224, 224))
        assert (fix.cx, fix.cy) == (0.0, 223.0)

    def test_from_samples(self):
        samples = [GazeSample(i * 10.0, 5.0, 6.0) for i in range(20)]
        trace = GazeTrace.from_samples(samples)
        assert trace.samples() == samples

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 5))
    def test_windows_respect_thresholds(self, seed, n_clusters):
        rng = np.random.default_rng(seed)
        centers = rng.uniform(0, 400, (n_clusters, 2))
        trace = planted_trace([tuple(c) for c in centers], rng, spread=rng.uniform(0, 8))
        cfg = FixationConfig(dispersion_px=25, min_duration_ms=100)
        try:
            fixes = detect_fixations(trace, cfg)
        except AllSaccades:
            return
        for a, b in zip(fixes, fixes[1:]):
            assert a.end_ms < b.start_ms
        for f in fixes:
            sel = (trace.t >= f.start_ms) & (trace.t <= f.end_ms)
            assert np.ptp(trace.x[sel]) + np.ptp(trace.y[sel]) <= cfg.dispersion_px
            assert f.duration_ms >= cfg.min_duration_ms


class TestRenderHeatmap:
    def test_single_peak(self):
        hm = render_heatmap([Fixation(112, 112, 0, 300)], 224, 224, sigma=25)
        assert np.unravel_index(hm.values.argmax(), hm.values.shape) == (112, 112)
        assert hm.values[112, 112] == 1.0

    def test_two_equal_peaks(self):
        # closed form at either centre: 1 + exp(-(160^2 + 160^2) / (2 * 10^2)) = 1 + e^-256
        cross = np.exp(-(160.0**2 * 2) / 200.0)
        assert cross < 1e-30
        fixes = [Fixation(30, 30, 0, 100), Fixation(190, 190, 200, 700)]
        hm = render_heatmap(fixes, 224, 224, sigma=10, duration_weighted=False)
        v = hm.values
        assert v[30, 30] == pytest.approx(1.0, abs=1e-15)
        assert v[190, 190] == pytest.approx(1.0, abs=1e-15)
        for r, c in [(30, 30), (190, 190)]:
            assert v[r, c] == v[r - 1 : r + 2, c - 1 : c + 2].max()

    def test_duration_weighting(self):
        fixes = [Fixation(30, 30, 0, 100), Fixation(190, 190, 200, 600)]
        v = render_heatmap(fixes, 224, 224, sigma=10).values
        assert v[190, 190] == pytest.approx(1.0)
        assert v[30, 30] == pytest.approx(0.25)

    def test_empty(self):
        with pytest.raises(NoFixations):
            render_heatmap([], 10, 10, 2.0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        fixes = [Fixation(*rng.uniform(0, 64, 2), 0.0, float(rng.uniform(50, 500))) for _ in range(rng.integers(1, 8))]
        a = render_heatmap(fixes, 64, 48, 6.0).values
        b = render_heatmap([fixes[i] for i in rng.permutation(len(fixes))], 64, 48, 6.0).values
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
        assert a.min() >= 0 and a.max() == pytest.approx(1.0, abs=1e-15)


class TestDownsample:
    def test_constant(self):
        g = downsample_heatmap(Heatmap(np.ones((224, 224))), 14, 14)
        np.testing.assert_array_equal(g.values, np.ones((14, 14)))

    def test_block_means_224(self):
        rng = np.random.default_rng(1)
        v = rng.uniform(0, 1, (224, 224))
        g = downsample_heatmap(Heatmap(v), 14, 14).values
        blocks = v.reshape(14, 16, 14, 16).mean(axis=(1, 3))
        np.testing.assert_allclose(g, blocks / blocks.max(), rtol=1e-12)

    def test_hot_pixel(self):
        v = np.zeros((4, 4))
        v[0, 0] = 1.0
        # raw 2x2 block means: [[0.25, 0], [0, 0]] -> renormalised
        g = downsample_heatmap(Heatmap(v), 2, 2)
        np.testing.assert_array_equal(g.values.reshape(-1), [1.0, 0.0, 0.0, 0.0])

    def test_fractional_cells_conserve_mass(self):
        # 10 px onto 4 cells of 2.5 px; cell 0 = (0 + 1 + 0.5 * 2) / 2.5
        from gazevit.gaze import _area_weights

        w = _area_weights(10, 4)
        np.testing.assert_allclose(w.sum(axis=1), 1.0)
        np.testing.assert_allclose(w @ np.arange(10.0), [0.8, 3.2, 5.8, 8.2])
        np.testing.assert_allclose(w.sum(axis=0) * 2.5, 1.0)

    def test_scale_commutes(self):
        rng = np.random.default_rng(2)
        v = rng.uniform(0, 1, (50, 70))
        a = downsample_heatmap(Heatmap(v), 7, 5).values
        b = downsample_heatmap(Heatmap(3 * v), 7, 5).values
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_zero_dims(self):
        with pytest.raises(ZeroDims):
            downsample_heatmap(Heatmap(np.ones((4, 4))), 0, 2)


def topk_oracle(values: np.ndarray, k: int) -> set[int]:
    """Full sort by (-value, index), take the first k."""
    flat = values.reshape(-1)
    ranked = sorted(range(flat.size), key=lambda i: (-flat[i], i))
    return set(ranked[:k])


class TestSeparatedMask:
    def test_default_k(self):
        g = GridHeatmap(np.random.default_rng(0).uniform(size=(14, 14)))
        m = separated_mask(g)
        assert m.k == 49 and m.bits.sum() == 49

    def test_support_matches_positive_cells(self):
        v = np.zeros((14, 14))
        idx = np.random.default_rng(3).choice(196, 49, replace=False)
        v.reshape(-1)[idx] = np.random.default_rng(4).uniform(0.1, 1, 49)
        m = separated_mask(GridHeatmap(v), 49)
        assert set(np.flatnonzero(m.bits)) == set(idx)

    def test_uniform_ties(self):
        m = separated_mask(GridHeatmap(np.ones((14, 14))), 49)
        np.testing.assert_array_equal(np.flatnonzero(m.bits), np.arange(49))

    @pytest.mark.parametrize("k", [0, 197])
    def test_bad_k(self, k):
        with pytest.raises(BadK):
            separated_mask(GridHeatmap(np.ones((14, 14))), k)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 196), st.booleans())
    def test_against_sort_oracle(self, seed, k, coarse):
        rng = np.random.default_rng(seed)
        v = rng.integers(0, 4, (14, 14)).astype(float) if coarse else rng.uniform(size=(14, 14))
        m = separated_mask(GridHeatmap(v), k)
        assert set(np.flatnonzero(m.bits)) == topk_oracle(v, k)
        flat = v.reshape(-1)
        if k < 196:
            assert flat[m.bits].min() >= flat[~m.bits].max()


def window_ok(mask, ww, wh, argmax):
    g = mask.grid()
    rows = np.flatnonzero(g.any(axis=1))
    cols = np.flatnonzero(g.any(axis=0))
    contiguous = g[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1].all()
    return contiguous and len(rows) == wh and len(cols) == ww and g.sum() == ww * wh and g[argmax]


class TestGatheredMask:
    def test_centered(self):
        v = np.zeros((14, 14))
        v[6, 6] = 1
        g = gathered_mask(GridHeatmap(v), 7, 7).grid()
        expect = np.zeros((14, 14), bool)
        expect[3:10, 3:10] = True
        np.testing.assert_array_equal(g, expect)

    def test_corner_clamp(self):
        v = np.zeros((14, 14))
        v[0, 0] = 1
        g = gathered_mask(GridHeatmap(v), 7, 7).grid()
        assert g[0:7, 0:7].all() and g.sum() == 49

    def test_identity_window(self):
        v = np.zeros((14, 14))
        v[5, 9] = 1
        g = gathered_mask(GridHeatmap(v), 1, 1).grid()
        assert g.sum() == 1 and g[5, 9]

    def test_argmax_tie_lowest_index(self):
        v = np.zeros((14, 14))
        v[2, 12] = v[11, 1] = 1.0
        g = gathered_mask(GridHeatmap(v), 1, 1).grid()
        assert g[2, 12] and g.sum() == 1

    def test_bad_window(self):
        with pytest.raises(BadWindow):
            gathered_mask(GridHeatmap(np.ones((14, 14))), 15, 7)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 14), st.integers(1, 14))
    def test_window_property(self, seed, ww, wh):
        v = np.random.default_rng(seed).uniform(size=(14, 14))
        m = gathered_mask(GridHeatmap(v), ww, wh)
        assert window_ok(m, ww, wh, np.unravel_index(v.argmax(), v.shape))


class TestCropAndResize:
    def test_identity(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 255, (40, 40), dtype=np.uint8)
        hm = Heatmap(rng.uniform(size=(40, 40)))
        hm.values /= hm.values.max()
        out_img, out_hm = crop_and_resize(img, hm, (0, 0, 40, 40), 40)
        np.testing.assert_array_equal(out_img, img)
        np.testing.assert_array_equal(out_hm.values, hm.values)

    def test_resize_shape(self):
        img = np.zeros((1024, 1100), np.float32)
        hm = Heatmap(np.ones((1024, 1100)))
        out_img, out_hm = crop_and_resize(img, hm, (50, 0, 1024, 1024), 224)
        assert out_img.shape == (224, 224) and out_hm.values.shape == (224, 224)
        assert out_hm.values.max() == 1.0

    def test_out_of_bounds(self):
        with pytest.raises(RoiOutOfBounds):
            crop_and_resize(np.zeros((64, 64)), Heatmap(np.ones((64, 64))), (40, 0, 32, 32), 16)

    def test_bilinear_linear_ramp(self):
        # bilinear resampling reproduces a linear ramp exactly away from the clamped edges
        ramp = np.tile(np.arange(32, dtype=float), (32, 1))
        out, _ = crop_and_resize(ramp, Heatmap(np.ones((32, 32))), (0, 0, 32, 32), 16)
        np.testing.assert_allclose(out[0, 1:-1], np.arange(1, 15) * 2 + 0.5)
