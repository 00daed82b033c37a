"""Canonical trajectory data model and on-disk track format.

Tracks live in a normalized coordinate grid: both axes span [-1, 1], with
pixel <-> normalized conversion using center-of-pixel convention so the two
maps are exact inverses of each other.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRACK_FILE_VERSION = 1


class TrackError(ValueError):
    """Invalid track data (range, shape, or file format)."""


@dataclass(frozen=True)
class PixelSpace:
    """A discrete raster of width x height pixels."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise TrackError(f"pixel space must be >= 1x1, got {self.width}x{self.height}")


@dataclass(frozen=True)
class Track:
    """One point trajectory over T frames, coordinates in [-1, 1].

    ``start`` anchors the trajectory identity and must equal ``positions[0]``.
    """

    start: np.ndarray          # (2,)
    positions: np.ndarray      # (T, 2)
    visible: np.ndarray | None = None  # (T,) bool

    def __post_init__(self):
        start = np.asarray(self.start, dtype=np.float64).reshape(2)
        positions = np.asarray(self.positions, dtype=np.float64)
        if positions.ndim != 2 or positions.shape[1] != 2:
            raise TrackError(f"positions must be (T, 2), got {positions.shape}")
        if positions.shape[0] < 2:
            raise TrackError("a track needs at least 2 timesteps")
        if not np.all(np.isfinite(positions)):
            raise TrackError("track contains non-finite coordinates")
        if np.any(np.abs(positions) > 1.0):
            raise TrackError("track coordinates must lie in [-1, 1]")
        if not np.allclose(positions[0], start, atol=0.0):
            raise TrackError("positions[0] must equal start")
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "positions", positions)
        if self.visible is not None:
            vis = np.asarray(self.visible, dtype=bool)
            if vis.shape != (positions.shape[0],):
                raise TrackError(f"visible must be (T,), got {vis.shape}")
            object.__setattr__(self, "visible", vis)
        positions.setflags(write=False)
        start.setflags(write=False)

    @property
    def T(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def from_positions(cls, positions, visible=None) -> "Track":
        positions = np.asarray(positions, dtype=np.float64)
        return cls(start=positions[0].copy(), positions=positions, visible=visible)


@dataclass(frozen=True)
class TrackSet:
    """N tracks sharing one horizon T and one start frame.

    N == 0 is allowed only as the flagged-empty result of filtering; model
    entry points reject empty sets.
    """

    tracks: tuple[Track, ...]
    frame_id: str
    fps_hint: float | None = None

    def __post_init__(self):
        tracks = tuple(self.tracks)
        if not self.frame_id:
            raise TrackError("frame_id must be non-empty")
        if tracks:
            T = tracks[0].T
            for i, tr in enumerate(tracks):
                if tr.T != T:
                    raise TrackError(f"tracks[{i}] has T={tr.T}, expected {T}")
        object.__setattr__(self, "tracks", tracks)

    @property
    def N(self) -> int:
        return len(self.tracks)

    @property
    def T(self) -> int:
        if not self.tracks:
            raise TrackError("empty TrackSet has no horizon")
        return self.tracks[0].T

    @property
    def is_empty(self) -> bool:
        return not self.tracks

    def as_array(self) -> np.ndarray:
        """Positions as an (N, T, 2) float64 array."""
        if self.is_empty:
            return np.zeros((0, 0, 2))
        return np.stack([tr.positions for tr in self.tracks])

    def starts(self) -> np.ndarray:
        if self.is_empty:
            return np.zeros((0, 2))
        return np.stack([tr.start for tr in self.tracks])

    @classmethod
    def from_array(cls, positions, frame_id: str, visible=None, fps_hint=None) -> "TrackSet":
        """Build from an (N, T, 2) array; ``visible`` optionally (N, T)."""
        positions = np.asarray(positions, dtype=np.float64)
        if positions.ndim != 3 or positions.shape[2] != 2:
            raise TrackError(f"expected (N, T, 2) array, got {positions.shape}")
        tracks = []
        for i in range(positions.shape[0]):
            vis = None if visible is None else np.asarray(visible)[i]
            tracks.append(Track.from_positions(positions[i], visible=vis))
        return cls(tracks=tuple(tracks), frame_id=frame_id, fps_hint=fps_hint)


def normalize(points, space: PixelSpace) -> np.ndarray:
    """Pixel coordinates -> normalized [-1, 1], center-of-pixel convention.

    x = 2 * (px + 0.5) / width - 1, and analogously for y.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[-1] != 2:
        raise TrackError(f"points must have a trailing axis of 2, got {pts.shape}")
    px, py = pts[..., 0], pts[..., 1]
    if np.any(px < 0.0) or np.any(px >= space.width) or np.any(py < 0.0) or np.any(py >= space.height):
        raise TrackError("pixel coordinates out of range [0, width) x [0, height)")
    out = np.empty_like(pts)
    out[..., 0] = 2.0 * (px + 0.5) / space.width - 1.0
    out[..., 1] = 2.0 * (py + 0.5) / space.height - 1.0
    return out


def denormalize(points, space: PixelSpace) -> np.ndarray:
    """Normalized [-1, 1] -> continuous pixel coordinates.

    px = (x + 1) / 2 * width - 0.5; exact inverse of :func:`normalize`.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[-1] != 2:
        raise TrackError(f"points must have a trailing axis of 2, got {pts.shape}")
    if np.any(np.abs(pts) > 1.0):
        raise TrackError("normalized coordinates must lie in [-1, 1]")
    out = np.empty_like(pts)
    out[..., 0] = (pts[..., 0] + 1.0) / 2.0 * space.width - 0.5
    out[..., 1] = (pts[..., 1] + 1.0) / 2.0 * space.height - 0.5
    return out


def track_variance(track: Track) -> float:
    """Sum of per-axis temporal variances, the static-track test statistic."""
    return float(np.var(track.positions[:, 0]) + np.var(track.positions[:, 1]))


def filter_static(ts: TrackSet, var_threshold: float) -> TrackSet:
    """Keep tracks whose summed per-axis temporal variance exceeds the threshold.

    Order is preserved. May return an empty TrackSet (``is_empty``); the
    caller decides how to handle it.
    """
    if var_threshold < 0:
        raise TrackError("var_threshold must be >= 0")
    kept = tuple(tr for tr in ts.tracks if track_variance(tr) > var_threshold)
    return TrackSet(tracks=kept, frame_id=ts.frame_id, fps_hint=ts.fps_hint)


def window(ts: TrackSet, T_w: int, stride: int) -> list[TrackSet]:
    """Split into temporal windows of length T_w, re-anchoring each start.

    Produces floor((T - T_w) / stride) + 1 windows.
    """
    if ts.is_empty:
        raise TrackError("cannot window an empty TrackSet")
    T = ts.T
    if not (2 <= T_w <= T):
        raise TrackError(f"window length must satisfy 2 <= T_w <= T={T}, got {T_w}")
    if stride < 1:
        raise TrackError("stride must be >= 1")
    out = []
    for off in range(0, T - T_w + 1, stride):
        tracks = []
        for tr in ts.tracks:
            vis = None if tr.visible is None else tr.visible[off:off + T_w]
            tracks.append(Track.from_positions(tr.positions[off:off + T_w], visible=vis))
        out.append(TrackSet(tracks=tuple(tracks), frame_id=ts.frame_id, fps_hint=ts.fps_hint))
    return out


def subsample_time(ts: TrackSet, keep_every: int) -> TrackSet:
    """Keep every ``keep_every``-th frame, always including frame 0.

    New horizon is ceil(T / keep_every); the start anchor is unchanged.
    """
    if keep_every < 1:
        raise TrackError("keep_every must be >= 1")
    if keep_every == 1:
        return ts
    if ts.is_empty:
        raise TrackError("cannot subsample an empty TrackSet")
    idx = np.arange(0, ts.T, keep_every)
    tracks = []
    for tr in ts.tracks:
        vis = None if tr.visible is None else tr.visible[idx]
        tracks.append(Track.from_positions(tr.positions[idx], visible=vis))
    return TrackSet(tracks=tuple(tracks), frame_id=ts.frame_id, fps_hint=ts.fps_hint)


def save_tracks(ts: TrackSet, path, *, width: int = 128, height: int = 128) -> None:
    """Write the JSON track file (coordinates stored normalized)."""
    doc = {
        "version": TRACK_FILE_VERSION,
        "frame_id": ts.frame_id,
        "width": int(width),
        "height": int(height),
        "T": int(ts.T),
        "tracks": [],
    }
    for tr in ts.tracks:
        rec = {"xy": [[float(x), float(y)] for x, y in tr.positions]}
        if tr.visible is not None:
            rec["visible"] = [bool(v) for v in tr.visible]
        doc["tracks"].append(rec)
    Path(path).write_text(json.dumps(doc))


def load_track_file(path) -> tuple[TrackSet, dict]:
    """Parse a track file; returns the TrackSet plus header metadata.

    Raises TrackError naming the offending record on malformed input.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise TrackError(f"{path}: cannot parse track file: {e}") from e
    if not isinstance(doc, dict):
        raise TrackError(f"{path}: track file must be a JSON object")
    for key in ("version", "frame_id", "width", "height", "T", "tracks"):
        if key not in doc:
            raise TrackError(f"{path}: missing header field '{key}'")
    if doc["version"] != TRACK_FILE_VERSION:
        raise TrackError(f"{path}: unsupported version {doc['version']}")
    T = doc["T"]
    tracks = []
    for i, rec in enumerate(doc["tracks"]):
        xy = rec.get("xy")
        if xy is None or len(xy) != T:
            raise TrackError(f"{path}: tracks[{i}].xy has {0 if xy is None else len(xy)} rows, header says T={T}")
        arr = np.asarray(xy, dtype=np.float64)
        if arr.shape != (T, 2):
            raise TrackError(f"{path}: tracks[{i}].xy is not a Tx2 list")
        bad = np.argwhere(~np.isfinite(arr))
        if bad.size:
            t, c = bad[0]
            raise TrackError(f"{path}: tracks[{i}].xy[{t}][{c}] is not finite")
        try:
            tracks.append(Track.from_positions(arr, visible=rec.get("visible")))
        except TrackError as e:
            raise TrackError(f"{path}: tracks[{i}]: {e}") from e
    meta = {"width": int(doc["width"]), "height": int(doc["height"])}
    return TrackSet(tracks=tuple(tracks), frame_id=str(doc["frame_id"])), meta


def load_tracks(path) -> TrackSet:
    return load_track_file(path)[0]
