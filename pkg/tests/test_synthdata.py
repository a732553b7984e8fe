"""Scene generation, teacher corruption spectra, and stream plumbing."""

import numpy as np
import pytest

from spectral_pgd.model import Task
from spectral_pgd.ndtensor.fourier import fft2_array, frequency_grid
from spectral_pgd.synthdata import (
    SceneConfig,
    Stream,
    denormalize_target,
    depth_to_disparity,
    depth_to_normals,
    gen_scene,
    hard_lowpass,
    make_eval_samples,
    make_sample,
    mix_streams,
    normalize_target,
    read_dataset,
    render_depth,
    sample_layout,
    teacher_pseudo,
    write_dataset,
)

SMALL = SceneConfig(height=32, width=32)


class TestSceneGeneration:
    def test_deterministic_per_seed(self):
        img_a, depth_a = gen_scene(42, SMALL)
        img_b, depth_b = gen_scene(42, SMALL)
        assert np.array_equal(img_a, img_b)
        assert np.array_equal(depth_a, depth_b)
        img_c, depth_c = gen_scene(43, SMALL)
        assert not np.array_equal(depth_a, depth_c)

    def test_shapes_and_ranges(self):
        img, depth = gen_scene(0, SMALL)
        assert img.shape == (3, 32, 32)
        assert depth.shape == (32, 32)
        assert img.min() >= -1.0 and img.max() <= 1.0
        assert depth.min() > 0.0

    @pytest.mark.parametrize("stream", list(Stream))
    def test_depth_bounds_hold_across_seeds(self, stream):
        cfg = SceneConfig.for_stream(stream, height=32, width=32)
        d_lo, d_hi = cfg.depth_range
        for seed in range(300):
            _, depth = gen_scene(seed, cfg)
            assert depth.min() > 0.0
            assert depth.max() <= d_hi + 1e-12
            assert depth.min() >= d_lo - 1e-12

    def test_object_count_respects_config(self):
        cfg = SceneConfig(height=32, width=32, min_objects=4, max_objects=4)
        layout = sample_layout(5, cfg)
        assert len(layout.objects) == 4

    def test_object_depths_pairwise_distinct(self):
        cfg = SceneConfig(height=32, width=32, min_objects=6, max_objects=8)
        for seed in range(50):
            depths = [o.depth for o in sample_layout(seed, cfg).objects]
            assert len(set(depths)) == len(depths)

    @pytest.mark.parametrize("seed", range(12))
    def test_occlusion_minimum_against_pixel_oracle(self, seed):
        cfg = SceneConfig(height=24, width=24, min_objects=3, max_objects=6)
        layout = sample_layout(seed, cfg)
        fast = render_depth(layout)
        yy = (np.arange(cfg.height) + 0.5) / cfg.height
        xx = (np.arange(cfg.width) + 0.5) / cfg.width
        for y in range(cfg.height):
            for x in range(cfg.width):
                gy, gx = layout.bg_gradient
                bg = layout.bg_near + gy * yy[y] + gx * xx[x] \
                    + layout.bg_curvature * ((yy[y] - 0.5) ** 2 + (xx[x] - 0.5) ** 2)
                candidates = [min(max(bg, cfg.depth_range[0]), cfg.depth_range[1])]
                for obj in layout.objects:
                    if bool(obj.covers(np.array(yy[y]), np.array(xx[x]))):
                        candidates.append(obj.depth)
                assert fast[y, x] == pytest.approx(min(candidates), abs=1e-12)

    def test_styles_produce_distinct_appearance(self):
        imgs = {}
        for stream in Stream:
            cfg = SceneConfig.for_stream(stream, height=32, width=32)
            imgs[stream], _ = gen_scene(7, cfg)
        assert not np.allclose(imgs[Stream.SYN_INDOOR], imgs[Stream.REAL_PROXY])
        assert not np.allclose(imgs[Stream.SYN_OUTDOOR], imgs[Stream.SYN_INDOOR])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SceneConfig(depth_range=(0.0, 5.0))
        with pytest.raises(ValueError):
            SceneConfig(min_objects=5, max_objects=2)
        with pytest.raises(ValueError):
            SceneConfig(style="underwater")
        with pytest.raises(ValueError):
            SceneConfig(teacher_bias_amplitude=0.2)
        with pytest.raises(ValueError):
            SceneConfig(teacher_artifact_amplitude=0.06)


class TestNormals:
    def test_unit_norm_everywhere(self):
        _, depth = gen_scene(3, SMALL)
        n = depth_to_normals(depth)
        norms = np.linalg.norm(n, axis=0)
        assert np.max(np.abs(norms - 1.0)) < 1e-12

    def test_flat_plane_points_at_camera(self):
        n = depth_to_normals(np.full((8, 8), 5.0))
        assert np.allclose(n[2], 1.0)
        assert np.allclose(n[:2], 0.0)

    def test_known_slope(self):
        depth = np.tile(np.arange(8.0), (8, 1))  # d/dx = 1
        n = depth_to_normals(depth)
        interior = n[:, :, 1:-1]
        assert np.allclose(interior[0], -1.0 / np.sqrt(2.0))
        assert np.allclose(interior[2], 1.0 / np.sqrt(2.0))


class TestDisparityAndNormalization:
    def test_disparity_self_inverse(self):
        _, depth = gen_scene(1, SMALL)
        disp = depth_to_disparity(depth)
        assert np.max(np.abs(depth_to_disparity(disp) - depth)) < 1e-12

    def test_nonpositive_depth_rejected(self):
        with pytest.raises(ValueError):
            depth_to_disparity(np.array([1.0, 0.0]))

    def test_normalize_full_range(self, rng):
        arr = rng.uniform(3.0, 9.0, size=(16, 16))
        out, norm = normalize_target(arr)
        assert out.min() == pytest.approx(-1.0)
        assert out.max() == pytest.approx(1.0)
        assert not norm.degenerate

    def test_roundtrip_within_tolerance(self, rng):
        arr = rng.uniform(-5.0, 5.0, size=(8, 8))
        out, norm = normalize_target(arr)
        back = denormalize_target(out, norm)
        assert np.max(np.abs(back - arr)) < 1e-12

    def test_constant_input_degenerates_to_zeros(self):
        out, norm = normalize_target(np.full((4, 4), 2.5))
        assert np.all(out == 0.0)
        assert norm.degenerate
        assert np.all(denormalize_target(out, norm) == 2.5)


class TestTeacher:
    def test_disabled_corruption_is_identity(self):
        cfg = SceneConfig(height=32, width=32, teacher_cutoff=1.0,
                          teacher_bias_amplitude=0.0, teacher_artifact_amplitude=0.0)
        _, depth = gen_scene(9, cfg)
        pseudo = teacher_pseudo(depth, 9, cfg)
        assert np.array_equal(pseudo, depth_to_disparity(depth))

    def test_band_limit_removes_high_band(self):
        cfg = SceneConfig(height=64, width=64, teacher_cutoff=0.1,
                          teacher_bias_amplitude=0.0, teacher_artifact_amplitude=0.0)
        _, depth = gen_scene(11, cfg)
        pseudo = teacher_pseudo(depth, 11, cfg)
        spec = np.abs(fft2_array(pseudo)) ** 2
        grid = frequency_grid(64, 64).norms
        assert spec[grid > 0.1].sum() / spec.sum() < 1e-20

    def test_bias_energy_sits_below_low_band_edge(self):
        cfg = SceneConfig(height=64, width=64, teacher_cutoff=0.1,
                          teacher_bias_amplitude=0.05, teacher_artifact_amplitude=0.0)
        _, depth = gen_scene(13, cfg)
        clean_low = hard_lowpass(depth_to_disparity(depth), 0.1)
        bias = teacher_pseudo(depth, 13, cfg) - clean_low
        spec = np.abs(fft2_array(bias)) ** 2
        grid = frequency_grid(64, 64).norms
        assert spec[grid < 0.05].sum() / spec.sum() > 0.95
        assert np.abs(bias).max() == pytest.approx(0.05, rel=1e-9)

    def test_artifacts_live_above_quarter_band(self):
        cfg = SceneConfig(height=64, width=64, teacher_cutoff=0.1,
                          teacher_bias_amplitude=0.0, teacher_artifact_amplitude=0.03)
        _, depth = gen_scene(17, cfg)
        art = teacher_pseudo(depth, 17, cfg) - hard_lowpass(depth_to_disparity(depth), 0.1)
        spec = np.abs(fft2_array(art)) ** 2
        grid = frequency_grid(64, 64).norms
        assert spec[grid <= 0.25].sum() / spec.sum() < 1e-20
        assert np.abs(art).max() == pytest.approx(0.03, rel=1e-9)

    def test_teacher_deterministic(self):
        cfg = SceneConfig.for_stream(Stream.REAL_PROXY, height=32, width=32)
        _, depth = gen_scene(19, cfg)
        assert np.array_equal(teacher_pseudo(depth, 19, cfg),
                              teacher_pseudo(depth, 19, cfg))
        assert not np.array_equal(teacher_pseudo(depth, 19, cfg),
                                  teacher_pseudo(depth, 20, cfg))

    def test_hard_lowpass_keeps_boundary_bin(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((16, 16))
        out = hard_lowpass(x, cutoff=float(np.sqrt(0.5)))
        assert np.max(np.abs(out - x)) < 1e-12


class TestSamples:
    def test_synthetic_sample_target_is_normalized_gt(self):
        s = make_sample(23, Stream.SYN_INDOOR, SMALL)
        _, depth = gen_scene(23, SMALL)
        want, norm = normalize_target(depth_to_disparity(depth))
        assert np.array_equal(s.target.data[0], want)
        assert s.norm == norm
        assert s.target.shape == (1, 32, 32)
        assert s.image.shape == (3, 32, 32)

    def test_real_proxy_sample_carries_pseudo_not_gt(self):
        cfg = SceneConfig.for_stream(Stream.REAL_PROXY, height=32, width=32)
        s = make_sample(29, Stream.REAL_PROXY, cfg)
        _, depth = gen_scene(29, cfg)
        gt_norm, _ = normalize_target(depth_to_disparity(depth))
        pseudo_norm, _ = normalize_target(teacher_pseudo(depth, 29, cfg))
        assert np.array_equal(s.target.data[0], pseudo_norm)
        assert not np.array_equal(s.target.data[0], gt_norm)
        assert not hasattr(s, "gt_disparity")

    def test_normal_task_target(self):
        s = make_sample(31, Stream.SYN_INDOOR, SMALL, task=Task.NORMAL)
        assert s.target.shape == (3, 32, 32)
        norms = np.linalg.norm(s.target.data, axis=0)
        assert np.max(np.abs(norms - 1.0)) < 1e-12

    def test_reconstruct_task_rejected(self):
        with pytest.raises(ValueError):
            make_sample(1, Stream.SYN_INDOOR, SMALL, task=Task.RECONSTRUCT)

    def test_eval_samples_expose_gt(self):
        evs = make_eval_samples([1, 2, 3], Stream.REAL_PROXY,
                                SceneConfig.for_stream(Stream.REAL_PROXY, 32, 32))
        assert len(evs) == 3
        for ev in evs:
            assert ev.gt_disparity.shape == (32, 32)
            assert ev.gt_disparity.min() > 0


class TestMixing:
    def test_empirical_rates_match_probs(self):
        rng = np.random.default_rng(123)
        draws = [mix_streams((0.6, 0.1, 0.3), rng) for _ in range(10_000)]
        counts = {s: draws.count(s) / len(draws) for s in Stream}
        assert counts[Stream.SYN_INDOOR] == pytest.approx(0.6, abs=0.02)
        assert counts[Stream.SYN_OUTDOOR] == pytest.approx(0.1, abs=0.02)
        assert counts[Stream.REAL_PROXY] == pytest.approx(0.3, abs=0.02)

    def test_validation(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            mix_streams((0.5, 0.5), rng)
        with pytest.raises(ValueError):
            mix_streams((0.7, 0.2, 0.2), rng)
        with pytest.raises(ValueError):
            mix_streams((-0.1, 0.6, 0.5), rng)

    def test_degenerate_distribution(self):
        rng = np.random.default_rng(0)
        assert all(mix_streams((0.0, 1.0, 0.0), rng) is Stream.SYN_OUTDOOR
                   for _ in range(50))


class TestDatasetIO:
    def test_write_read_roundtrip(self, tmp_path):
        cfg = SceneConfig.for_stream(Stream.SYN_INDOOR, 32, 32)
        write_dataset(tmp_path / "ds", seeds=[5, 6, 7], stream=Stream.SYN_INDOOR,
                      config=cfg)
        samples, cfg_back = read_dataset(tmp_path / "ds")
        assert cfg_back == cfg
        assert len(samples) == 3
        direct = make_sample(6, Stream.SYN_INDOOR, cfg)
        assert np.array_equal(samples[1].image.data, direct.image.data)
        assert np.array_equal(samples[1].target.data, direct.target.data)
        assert samples[1].norm == direct.norm
        assert samples[1].scene_seed == 6
