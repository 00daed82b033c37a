import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zipmo import synthkin as sk
from zipmo.trackdata import (PixelSpace, Track, TrackError, TrackSet, denormalize,
                             filter_static, load_track_file, load_tracks, normalize,
                             save_tracks, subsample_time, track_variance, window)

SPACE = PixelSpace(128, 128)


class TestNormalize:
    def test_pixel_center_maps_to_origin(self):
        assert np.allclose(normalize(np.array([63.5, 63.5]), SPACE), [0.0, 0.0])

    def test_corner_pixel(self):
        out = normalize(np.array([0.0, 0.0]), SPACE)
        assert np.allclose(out, [-0.9921875, -0.9921875])

    def test_denormalize_examples(self):
        assert np.allclose(denormalize(np.array([0.0, 0.0]), SPACE), [63.5, 63.5])
        assert np.allclose(denormalize(np.array([-1.0, -1.0]), SPACE), [-0.5, -0.5])

    def test_round_trip_many(self):
        rng = np.random.default_rng(0)
        px = rng.uniform([0, 0], [SPACE.width - 1, SPACE.height - 1], size=(1000, 2))
        back = denormalize(normalize(px, SPACE), SPACE)
        assert np.abs(back - px).max() <= 1e-12

    def test_out_of_range_pixels_rejected(self):
        with pytest.raises(TrackError):
            normalize(np.array([-0.1, 5.0]), SPACE)
        with pytest.raises(TrackError):
            normalize(np.array([128.0, 5.0]), SPACE)

    def test_denormalize_rejects_outside_unit_box(self):
        with pytest.raises(TrackError):
            denormalize(np.array([1.2, 0.0]), SPACE)

    @given(st.integers(8, 512), st.integers(8, 512), st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, w, h, seed):
        space = PixelSpace(w, h)
        rng = np.random.default_rng(seed)
        px = rng.uniform([0, 0], [w - 1, h - 1], size=(8, 2))
        assert np.abs(denormalize(normalize(px, space), space) - px).max() <= 1e-9


def _track_from_offsets(start, offsets):
    positions = np.asarray(start) + np.asarray(offsets)
    return Track.from_positions(positions)


def _moving_set(n=4, T=10, seed=0):
    rng = np.random.default_rng(seed)
    tracks = []
    for _ in range(n):
        start = rng.uniform(-0.5, 0.5, 2)
        drift = rng.uniform(-0.4, 0.4, 2) / T
        pos = start + np.outer(np.arange(T), drift)
        tracks.append(Track.from_positions(pos))
    return TrackSet(tracks=tuple(tracks), frame_id="move")


class TestTrackValidation:
    def test_needs_two_steps(self):
        with pytest.raises(TrackError):
            Track.from_positions(np.zeros((1, 2)))

    def test_rejects_nan(self):
        pos = np.zeros((3, 2))
        pos[1, 0] = np.nan
        with pytest.raises(TrackError):
            Track.from_positions(pos)

    def test_rejects_out_of_range(self):
        pos = np.zeros((3, 2))
        pos[2, 1] = 1.5
        with pytest.raises(TrackError):
            Track.from_positions(pos)

    def test_start_must_match_first_position(self):
        with pytest.raises(TrackError):
            Track(start=np.array([0.5, 0.5]), positions=np.zeros((3, 2)))

    def test_mixed_horizons_rejected(self):
        a = Track.from_positions(np.zeros((3, 2)))
        b = Track.from_positions(np.zeros((4, 2)))
        with pytest.raises(TrackError):
            TrackSet(tracks=(a, b), frame_id="x")


class TestFilterStatic:
    def test_constant_track_removed(self):
        const = Track.from_positions(np.full((8, 2), 0.25))
        ts = TrackSet(tracks=(const,), frame_id="s")
        out = filter_static(ts, 1e-6)
        assert out.is_empty

    def test_zero_threshold_keeps_moving(self):
        ts = _moving_set()
        assert filter_static(ts, 0.0).N == ts.N

    def test_mixed_set_keeps_exactly_the_rotating(self):
        rng = np.random.default_rng(3)
        static = [Track.from_positions(np.tile(rng.uniform(-0.8, 0.8, 2), (12, 1)))
                  for _ in range(10)]
        rotating = []
        for _ in range(10):
            c = rng.uniform(-0.2, 0.2, 2)
            r = rng.uniform(0.2, 0.4)
            th0 = rng.uniform(0, 2 * np.pi)
            th = th0 + np.arange(12) * 0.2
            rotating.append(Track.from_positions(
                c + r * np.stack([np.cos(th), np.sin(th)], axis=-1)))
        ts = TrackSet(tracks=tuple(static + rotating), frame_id="mix")

        # naive loop oracle for the variance statistic
        def loop_var(tr):
            xs = [p[0] for p in tr.positions]
            ys = [p[1] for p in tr.positions]
            mx, my = sum(xs) / len(xs), sum(ys) / len(ys)
            vx = sum((x - mx) ** 2 for x in xs) / len(xs)
            vy = sum((y - my) ** 2 for y in ys) / len(ys)
            return vx + vy

        for tr in ts.tracks:
            assert abs(loop_var(tr) - track_variance(tr)) < 1e-12
        thr = max(loop_var(tr) for tr in static) + 1e-9
        out = filter_static(ts, thr)
        assert out.N == 10
        assert all(any(tr is r for r in rotating) for tr in out.tracks)

    def test_idempotent_and_order_preserving(self):
        ts = _moving_set(6)
        once = filter_static(ts, 1e-7)
        twice = filter_static(once, 1e-7)
        assert [id(t) for t in once.tracks] == [id(t) for t in twice.tracks]


class TestWindowing:
    def test_full_window_is_single(self):
        ts = _moving_set(3, T=64)
        assert len(window(ts, 64, 1)) == 1

    def test_window_count_arithmetic(self):
        ts = _moving_set(3, T=64)
        assert len(window(ts, 16, 16)) == 4

    def test_window_contents_match_slicing(self):
        ts = _moving_set(4, T=20, seed=9)
        wins = window(ts, 6, 3)
        arr = ts.as_array()
        for j, w in enumerate(wins):
            ref = arr[:, 3 * j:3 * j + 6]
            assert np.allclose(w.as_array(), ref)
            assert np.allclose(w.starts(), ref[:, 0])

    def test_window_too_long_rejected(self):
        with pytest.raises(TrackError):
            window(_moving_set(2, T=8), 9, 1)

    def test_subsample_identity(self):
        ts = _moving_set(3, T=10)
        assert subsample_time(ts, 1) is ts

    def test_subsample_64_to_16(self):
        ts = _moving_set(2, T=64)
        out = subsample_time(ts, 4)
        assert out.T == 16
        assert np.allclose(out.starts(), ts.starts())

    def test_subsample_matches_stride_indexing(self):
        ts = _moving_set(3, T=17, seed=2)
        out = subsample_time(ts, 5)
        assert np.allclose(out.as_array(), ts.as_array()[:, ::5])

    def test_window_subsample_commute_when_aligned(self):
        ts = _moving_set(3, T=40, seed=4)
        k, T_w, s = 2, 5, 3
        a = window(subsample_time(ts, k), T_w, s)
        b = [subsample_time(w, k) for w in window(ts, (T_w - 1) * k + 1, s * k)]
        assert len(a) == len(b)
        for wa, wb in zip(a, b):
            assert np.allclose(wa.as_array(), wb.as_array())


class TestTrackFiles:
    def test_round_trip_identity(self, tmp_path):
        ts = _moving_set(5, T=12, seed=7)
        path = tmp_path / "t.tracks.json"
        save_tracks(ts, path, width=64, height=64)
        loaded, meta = load_track_file(path)
        assert meta == {"width": 64, "height": 64}
        assert loaded.frame_id == ts.frame_id
        assert np.array_equal(loaded.as_array(), ts.as_array())

    def test_truncated_file_is_parse_error(self, tmp_path):
        ts = _moving_set(2, T=6)
        path = tmp_path / "t.tracks.json"
        save_tracks(ts, path)
        path.write_text(path.read_text()[:-40])
        with pytest.raises(TrackError):
            load_tracks(path)

    def test_row_count_mismatch_names_record(self, tmp_path):
        ts = _moving_set(2, T=6)
        path = tmp_path / "t.tracks.json"
        save_tracks(ts, path)
        doc = json.loads(path.read_text())
        doc["tracks"][1]["xy"] = doc["tracks"][1]["xy"][:-1]
        path.write_text(json.dumps(doc))
        with pytest.raises(TrackError, match=r"tracks\[1\]"):
            load_tracks(path)

    def test_nan_coordinate_names_record(self, tmp_path):
        ts = _moving_set(2, T=6)
        path = tmp_path / "t.tracks.json"
        save_tracks(ts, path)
        doc = json.loads(path.read_text())
        doc["tracks"][0]["xy"][2][1] = float("nan")
        path.write_text(json.dumps(doc))
        with pytest.raises(TrackError, match=r"tracks\[0\].xy\[2\]\[1\]"):
            load_tracks(path)

    def test_synthkin_file_matches_generator_config(self, tmp_path):
        scn = sk.generate("rotation-cw-ccw", seed=1, n_tracks=9, T=12, resolution=32)
        sk.write_scenario(scn, tmp_path, "scene")
        loaded = load_tracks(tmp_path / "scene.tracks.json")
        assert loaded.N == 9
        assert loaded.T == 12
