import numpy as np
import pytest
from scipy import stats as scipy_stats

from zipmo import synthkin as sk
from zipmo.trackdata import track_variance


class TestGenerate:
    def test_deterministic_per_seed(self):
        a = sk.generate("rotation-cw-ccw", seed=3, n_tracks=10, T=12, resolution=32)
        b = sk.generate("rotation-cw-ccw", seed=3, n_tracks=10, T=12, resolution=32)
        assert a.mode_id == b.mode_id
        assert np.array_equal(a.tracks.as_array(), b.tracks.as_array())
        assert np.array_equal(a.raster, b.raster)

    def test_unknown_family_rejected(self):
        with pytest.raises(sk.ScenarioError):
            sk.generate("zigzag", seed=0, n_tracks=4, T=8)

    @pytest.mark.parametrize("family", sk.FAMILIES)
    def test_tracks_satisfy_the_motion_law(self, family):
        scn = sk.generate(family, seed=11, n_tracks=14, T=24, resolution=32)
        orc = sk.oracle(scn.family, scn.params)
        ref = orc.modes[scn.mode_id][1](scn.tracks.starts(), np.arange(scn.tracks.T))
        assert np.abs(ref - scn.tracks.as_array()).max() <= 1e-9

    def test_rotation_law_formula(self):
        omega = np.pi / 32
        scn = sk.generate("rotation-cw-ccw", seed=2, n_tracks=6, T=16, resolution=32,
                          params={"omega": omega})
        c = np.asarray(scn.params["center"])
        sign = 1.0 if scn.mode_id == 0 else -1.0
        arr = scn.tracks.as_array()
        fg = scn.n_foreground
        for t in range(scn.tracks.T):
            ang = sign * omega * t
            R = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
            expect = c + (arr[:fg, 0] - c) @ R.T
            assert np.abs(arr[:fg, t] - expect).max() <= 1e-9

    def test_static_background_share(self):
        scn = sk.generate("bounce", seed=4, n_tracks=20, T=16, resolution=32)
        n_static = sum(track_variance(tr) < 1e-12 for tr in scn.tracks.tracks)
        assert n_static >= 0.2 * scn.tracks.N

    def test_coordinates_stay_in_box(self):
        for family in sk.FAMILIES:
            for seed in range(5):
                scn = sk.generate(family, seed=seed, n_tracks=16, T=64, resolution=32)
                assert np.abs(scn.tracks.as_array()).max() <= 1.0

    def test_mode_frequencies_match_oracle(self):
        # 10k draws of the two-goal family; empirical frequencies within +-2%
        counts = np.zeros(2)
        for seed in range(10_000):
            scn = sk.generate("linear-goal-choice", seed=seed, n_tracks=1, T=2, resolution=32)
            counts[scn.mode_id] += 1
        freq = counts / counts.sum()
        assert np.abs(freq - 0.5).max() <= 0.02


class TestOracle:
    def test_rotation_two_equal_modes(self):
        scn = sk.generate("rotation-cw-ccw", seed=1, n_tracks=4, T=8, resolution=32)
        orc = sk.oracle(scn.family, scn.params)
        assert orc.probabilities == (0.5, 0.5)

    def test_static_identity_single_mode(self):
        scn = sk.generate("static-background", seed=1, n_tracks=4, T=8, resolution=32)
        orc = sk.oracle(scn.family, scn.params)
        assert orc.probabilities == (1.0,)
        pts = scn.tracks.starts()
        ref = orc.modes[0][1](pts, np.arange(8))
        assert np.array_equal(ref, np.broadcast_to(pts[:, None], (4, 8, 2)))

    def test_goal_weights_echoed(self):
        scn = sk.generate("linear-goal-choice", seed=1, n_tracks=4, T=8, resolution=32,
                          params={"weights": [0.25, 0.75]})
        orc = sk.oracle(scn.family, scn.params)
        assert orc.probabilities == (0.25, 0.75)

    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(sk.ScenarioError):
            sk.ModeOracle(modes=((0.5, lambda p, t: p), (0.4, lambda p, t: p)))


class TestRasterize:
    def test_shape_and_range(self):
        scn = sk.generate("pendulum-arm", seed=6, n_tracks=8, T=8, resolution=224)
        assert scn.raster.shape == (224, 224)
        assert scn.raster.min() >= 0.0 and scn.raster.max() <= 1.0

    def test_minimum_resolution(self):
        with pytest.raises(sk.ScenarioError):
            sk.rasterize_params("static-background", {}, 16)

    def test_mode_independent(self):
        scn = sk.generate("rotation-cw-ccw", seed=8, n_tracks=6, T=8, resolution=32)
        a = sk.rasterize_params(scn.family, scn.params, 32)
        assert np.array_equal(a, scn.raster)

    def test_foreground_brighter_than_background(self):
        scn = sk.generate("bounce", seed=9, n_tracks=12, T=8, resolution=64)
        img = scn.raster
        fg = scn.tracks.starts()[:scn.n_foreground]
        bg_mean = img.mean()
        for x, y in fg:
            col = int((x + 1) / 2 * 64)
            row = int((y + 1) / 2 * 64)
            lo_r, hi_r = max(0, row - 2), min(64, row + 3)
            lo_c, hi_c = max(0, col - 2), min(64, col + 3)
            assert img[lo_r:hi_r, lo_c:hi_c].mean() > bg_mean

    def test_pgm_round_trip(self, tmp_path):
        scn = sk.generate("rotation-cw-ccw", seed=2, n_tracks=4, T=8, resolution=48)
        path = tmp_path / "f.pgm"
        sk.save_pgm(scn.raster, path)
        loaded = sk.load_pgm(path)
        assert loaded.shape == scn.raster.shape
        assert np.abs(loaded - scn.raster).max() <= 0.5 / 255 + 1e-12


class TestSpawnDistributions:
    def test_background_marginals_uniform(self):
        # static-background spawns uniformly over the spawn box
        pts = []
        for seed in range(100):
            scn = sk.generate("static-background", seed=seed, n_tracks=100, T=2, resolution=32)
            pts.append(scn.tracks.starts())
        pts = np.concatenate(pts)[:10_000]
        for axis in range(2):
            u = (pts[:, axis] - sk.SPAWN_LO) / (sk.SPAWN_HI - sk.SPAWN_LO)
            p = scipy_stats.kstest(u, "uniform").pvalue
            assert p > 0.01

    def test_rotation_spawn_uniform_in_annulus(self):
        rng = np.random.default_rng(0)
        params = {"center": [0.0, 0.0], "radius": 0.4, "inner": 0.12}
        pts = sk._sample_support("rotation-cw-ccw", params, rng, 10_000)
        r = np.linalg.norm(pts, axis=1)
        u = (r ** 2 - 0.12 ** 2) / (0.4 ** 2 - 0.12 ** 2)
        assert scipy_stats.kstest(u, "uniform").pvalue > 0.01
        th = np.arctan2(pts[:, 1], pts[:, 0]) / (2 * np.pi) + 0.5
        assert scipy_stats.kstest(th, "uniform").pvalue > 0.01


class TestScenarioFiles:
    def test_write_read_round_trip(self, tmp_path):
        scn = sk.generate("linear-goal-choice", seed=3, n_tracks=6, T=8, resolution=32)
        sk.write_scenario(scn, tmp_path, "s0")
        back = sk.read_scenario(tmp_path, "s0")
        assert back.family == scn.family
        assert back.mode_id == scn.mode_id
        assert back.label == scn.label
        assert np.allclose(back.tracks.as_array(), scn.tracks.as_array())
        assert np.abs(back.raster - scn.raster).max() <= 0.5 / 255 + 1e-12
