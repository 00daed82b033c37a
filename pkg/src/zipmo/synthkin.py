"""Synthetic scenes with analytic multi-modal motion laws.

Each family defines a spatial support (the moving object) and a small set of
discrete motion modes with closed-form trajectory functions. The law is total:
query points inside the support follow the mode's motion, points outside stay
static. That makes the same law usable for generating training tracks, for
ground truth at arbitrary decoder query points, and for distributional metric
references.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .trackdata import Track, TrackSet, save_tracks

FAMILIES = (
    "linear-goal-choice",
    "rotation-cw-ccw",
    "pendulum-arm",
    "bounce",
    "static-background",
)

LABELS = {name: i for i, name in enumerate(FAMILIES)}

SPAWN_LO, SPAWN_HI = -0.9, 0.9   # background spawn box
BOUNCE_LO, BOUNCE_HI = -0.95, 0.95


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ModeOracle:
    """Closed-form trajectory law per discrete mode.

    Each entry is (probability, fn) with fn(points[N,2], ts[K]) -> [N,K,2].
    """

    modes: tuple[tuple[float, Callable], ...]

    def __post_init__(self):
        probs = [p for p, _ in self.modes]
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ScenarioError(f"mode probabilities must sum to 1, got {sum(probs)}")

    @property
    def probabilities(self) -> tuple[float, ...]:
        return tuple(p for p, _ in self.modes)


@dataclass(frozen=True)
class Scenario:
    family: str
    params: dict
    mode_id: int
    tracks: TrackSet
    label: int
    raster: np.ndarray  # (res, res) grayscale in [0, 1]

    @property
    def n_foreground(self) -> int:
        return int(self.params["n_foreground"])


# ---------------------------------------------------------------------------
# per-family parameter draws


def _draw_params(family: str, rng: np.random.Generator, T: int) -> dict:
    if family == "linear-goal-choice":
        center = rng.uniform(-0.2, 0.2, size=2)
        base = rng.uniform(0.0, 2.0 * math.pi)
        n_goals = 2
        goals = [
            [0.65 * math.cos(base + k * 2.0 * math.pi / n_goals),
             0.65 * math.sin(base + k * 2.0 * math.pi / n_goals)]
            for k in range(n_goals)
        ]
        return {
            "center": center.tolist(),
            "radius": 0.15,
            "goals": goals,
            "weights": [1.0 / n_goals] * n_goals,
        }
    if family == "rotation-cw-ccw":
        center = rng.uniform(-0.25, 0.25, size=2)
        r_max = 0.92 - float(np.max(np.abs(center)))
        radius = float(min(rng.uniform(0.3, 0.42), r_max))
        return {
            "center": center.tolist(),
            "radius": radius,
            "inner": 0.3 * radius,
            "omega": float(rng.uniform(math.pi / 80.0, math.pi / 32.0)),
        }
    if family == "pendulum-arm":
        pivot = np.array([rng.uniform(-0.15, 0.15), rng.uniform(0.1, 0.35)])
        return {
            "pivot": pivot.tolist(),
            "length": float(rng.uniform(0.3, 0.5)),
            "width": 0.05,
            "amplitude": float(rng.uniform(math.pi / 6, math.pi / 3)),
            "period": float(T),
            "rest_angle": -math.pi / 2.0,
        }
    if family == "bounce":
        center = rng.uniform(-0.3, 0.3, size=2)
        base = rng.uniform(0.0, 2.0 * math.pi)
        dirs = [
            [math.cos(base), math.sin(base)],
            [math.cos(base + math.pi / 2), math.sin(base + math.pi / 2)],
        ]
        return {
            "center": center.tolist(),
            "radius": 0.12,
            "speed": float(rng.uniform(2.0, 3.0)),
            "dirs": dirs,
            "weights": [0.5, 0.5],
        }
    if family == "static-background":
        return {}
    raise ScenarioError(f"unknown scenario family '{family}'")


# ---------------------------------------------------------------------------
# spatial supports


def _in_support(family: str, params: dict, pts: np.ndarray) -> np.ndarray:
    """Boolean mask: which points belong to the moving object."""
    if family == "static-background":
        return np.zeros(pts.shape[0], dtype=bool)
    if family in ("linear-goal-choice", "bounce"):
        c = np.asarray(params["center"])
        return np.linalg.norm(pts - c, axis=-1) <= params["radius"]
    if family == "rotation-cw-ccw":
        c = np.asarray(params["center"])
        return np.linalg.norm(pts - c, axis=-1) <= params["radius"]
    if family == "pendulum-arm":
        pivot = np.asarray(params["pivot"])
        L, w = params["length"], params["width"]
        a = params["rest_angle"]
        axis = np.array([math.cos(a), math.sin(a)])
        rel = pts - pivot
        along = rel @ axis
        perp = rel - np.outer(along, axis)
        return (along >= 0.0) & (along <= L) & (np.linalg.norm(perp, axis=-1) <= w)
    raise ScenarioError(f"unknown scenario family '{family}'")


def _sample_support(family: str, params: dict, rng: np.random.Generator, n: int) -> np.ndarray:
    if family == "linear-goal-choice" or family == "bounce":
        c = np.asarray(params["center"])
        r = params["radius"] * np.sqrt(rng.uniform(0.0, 1.0, n))
        th = rng.uniform(0.0, 2.0 * math.pi, n)
        return c + np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)
    if family == "rotation-cw-ccw":
        c = np.asarray(params["center"])
        r0, r1 = params["inner"], params["radius"]
        r = np.sqrt(rng.uniform(0.0, 1.0, n) * (r1 * r1 - r0 * r0) + r0 * r0)
        th = rng.uniform(0.0, 2.0 * math.pi, n)
        return c + np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)
    if family == "pendulum-arm":
        pivot = np.asarray(params["pivot"])
        a = params["rest_angle"]
        axis = np.array([math.cos(a), math.sin(a)])
        normal = np.array([-axis[1], axis[0]])
        along = rng.uniform(0.05 * params["length"], params["length"], n)
        perp = rng.uniform(-params["width"], params["width"], n)
        return pivot + np.outer(along, axis) + np.outer(perp, normal)
    raise ScenarioError(f"family '{family}' has no foreground support")


def _sample_background(family: str, params: dict, rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform over the spawn box, excluding the (slightly inflated) support."""
    pts = np.empty((0, 2))
    inflated = dict(params)
    for key in ("radius", "width"):
        if key in inflated:
            inflated[key] = inflated[key] + 0.05
    while pts.shape[0] < n:
        cand = rng.uniform(SPAWN_LO, SPAWN_HI, size=(max(2 * n, 16), 2))
        if family != "static-background":
            cand = cand[~_in_support(family, inflated, cand)]
        pts = np.concatenate([pts, cand])
    return pts[:n]


# ---------------------------------------------------------------------------
# closed-form mode laws


def _rotate_about(pts: np.ndarray, center: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotate [N,2] points about center by [K] angles -> [N,K,2]."""
    rel = pts - center  # [N,2]
    c, s = np.cos(angles), np.sin(angles)  # [K]
    x = rel[:, None, 0] * c[None, :] - rel[:, None, 1] * s[None, :]
    y = rel[:, None, 0] * s[None, :] + rel[:, None, 1] * c[None, :]
    return center + np.stack([x, y], axis=-1)


def _fold(u: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Reflect values into [lo, hi] (triangle-wave folding)."""
    span = hi - lo
    y = np.mod(u - lo, 2.0 * span)
    return lo + np.where(y <= span, y, 2.0 * span - y)


def _mode_fn(family: str, params: dict, mode: int, T: int) -> Callable:
    """Closed-form law for one mode. Static outside the support."""

    def apply(points, ts):
        pts = np.asarray(points, dtype=np.float64)
        ts_arr = np.asarray(ts, dtype=np.float64)
        static = np.broadcast_to(pts[:, None, :], (pts.shape[0], ts_arr.shape[0], 2)).copy()
        mask = _in_support(family, params, pts)
        if not mask.any():
            return static
        fg = pts[mask]
        if family == "linear-goal-choice":
            c = np.asarray(params["center"])
            goal = np.asarray(params["goals"][mode])
            frac = ts_arr / float(T - 1)
            moved = fg[:, None, :] + (goal - c)[None, None, :] * frac[None, :, None]
        elif family == "rotation-cw-ccw":
            sign = 1.0 if mode == 0 else -1.0
            angles = sign * params["omega"] * ts_arr
            moved = _rotate_about(fg, np.asarray(params["center"]), angles)
        elif family == "pendulum-arm":
            sign = 1.0 if mode == 0 else -1.0
            delta = sign * params["amplitude"] * np.sin(2.0 * math.pi * ts_arr / params["period"])
            moved = _rotate_about(fg, np.asarray(params["pivot"]), delta)
        elif family == "bounce":
            d = np.asarray(params["dirs"][mode])
            step = params["speed"] / float(T - 1)
            raw = fg[:, None, :] + d[None, None, :] * (step * ts_arr)[None, :, None]
            moved = _fold(raw, BOUNCE_LO, BOUNCE_HI)
        elif family == "static-background":
            moved = np.broadcast_to(fg[:, None, :], (fg.shape[0], ts_arr.shape[0], 2)).copy()
        else:
            raise ScenarioError(f"unknown scenario family '{family}'")
        static[mask] = moved
        return static

    return apply


def oracle(family: str, params: dict) -> ModeOracle:
    """Every mode's exact trajectory map for a drawn parameter set."""
    if family not in FAMILIES:
        raise ScenarioError(f"unknown scenario family '{family}'")
    T = int(params.get("horizon", params.get("period", 64)))
    if family == "linear-goal-choice":
        probs = list(params["weights"])
    elif family in ("rotation-cw-ccw", "pendulum-arm"):
        probs = [0.5, 0.5]
    elif family == "bounce":
        probs = list(params["weights"])
    else:
        probs = [1.0]
    modes = tuple((float(p), _mode_fn(family, params, m, T)) for m, p in enumerate(probs))
    return ModeOracle(modes=modes)


# ---------------------------------------------------------------------------
# generation


def generate(family: str, seed: int, n_tracks: int, T: int, *,
             resolution: int = 64, params: dict | None = None) -> Scenario:
    """Deterministically generate one scenario.

    Moving families include >= 20% static background tracks; the realized
    mode is drawn from the family's mode probabilities.
    """
    if family not in FAMILIES:
        raise ScenarioError(f"unknown scenario family '{family}'")
    if n_tracks < 1 or T < 2:
        raise ScenarioError("need n_tracks >= 1 and T >= 2")
    rng = np.random.default_rng([int(seed), LABELS[family]])
    drawn = _draw_params(family, rng, T)
    if params:
        drawn.update(params)
    drawn["horizon"] = int(T)

    orc = oracle(family, drawn)
    mode = int(rng.choice(len(orc.modes), p=list(orc.probabilities)))

    if family == "static-background":
        n_bg = n_tracks
        n_fg = 0
        points = _sample_background(family, drawn, rng, n_bg)
    else:
        n_bg = max(1, int(round(0.25 * n_tracks))) if n_tracks > 1 else 0
        n_fg = n_tracks - n_bg
        fg = _sample_support(family, drawn, rng, n_fg)
        bg = _sample_background(family, drawn, rng, n_bg)
        points = np.concatenate([fg, bg]) if n_bg else fg
    drawn["n_foreground"] = int(n_fg)

    ts = np.arange(T)
    positions = orc.modes[mode][1](points, ts)
    tracks = TrackSet.from_array(positions, frame_id=f"{family}-{seed}")
    raster = rasterize_params(family, drawn, resolution)
    return Scenario(family=family, params=drawn, mode_id=mode,
                    tracks=tracks, label=LABELS[family], raster=raster)


# ---------------------------------------------------------------------------
# rasterization

_DOT_SPACING = 8  # background lattice, in units of resolution/64


def _pixel_grid(resolution: int):
    xs = 2.0 * (np.arange(resolution) + 0.5) / resolution - 1.0
    return np.meshgrid(xs, xs, indexing="xy")  # gx[i,j] = x of column j


def _draw_disk(img, gx, gy, center, radius, value):
    mask = (gx - center[0]) ** 2 + (gy - center[1]) ** 2 <= radius * radius
    img[mask] = value


def rasterize_params(family: str, params: dict, resolution: int) -> np.ndarray:
    """Grayscale start-frame plate from scenario geometry (mode-independent)."""
    if resolution < 32:
        raise ScenarioError("raster resolution must be >= 32")
    img = np.full((resolution, resolution), 0.10)
    gx, gy = _pixel_grid(resolution)
    # fixed lattice dots so even empty scenes carry spatial texture
    step = max(2, int(round(_DOT_SPACING * resolution / 64)))
    img[step // 2::step, step // 2::step] = 0.25

    if family == "linear-goal-choice":
        for g in params["goals"]:
            _draw_disk(img, gx, gy, g, 0.04, 0.6)
        _draw_disk(img, gx, gy, params["center"], params["radius"], 0.9)
    elif family == "rotation-cw-ccw":
        _draw_disk(img, gx, gy, params["center"], params["radius"], 0.9)
        _draw_disk(img, gx, gy, params["center"], params["inner"] * 0.5, 0.45)
    elif family == "pendulum-arm":
        pivot = np.asarray(params["pivot"])
        a = params["rest_angle"]
        axis = np.array([math.cos(a), math.sin(a)])
        rel = np.stack([gx - pivot[0], gy - pivot[1]], axis=-1)
        along = rel @ axis
        perp = rel - along[..., None] * axis
        bar = (along >= 0) & (along <= params["length"]) & (np.linalg.norm(perp, axis=-1) <= params["width"])
        img[bar] = 0.9
        _draw_disk(img, gx, gy, pivot, 0.035, 0.6)
    elif family == "bounce":
        _draw_disk(img, gx, gy, params["center"], params["radius"], 0.9)
        border = max(1, resolution // 48)
        img[:border, :] = img[-border:, :] = 0.35
        img[:, :border] = img[:, -border:] = 0.35
    return np.clip(img, 0.0, 1.0)


def rasterize(scenario: Scenario, resolution: int) -> np.ndarray:
    return rasterize_params(scenario.family, scenario.params, resolution)


# ---------------------------------------------------------------------------
# PGM + dataset files


def save_pgm(img: np.ndarray, path) -> None:
    """8-bit binary PGM (P5) from a [0,1] grayscale array."""
    h, w = img.shape
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def load_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ScenarioError(f"{path}: not a binary PGM file")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(f.readline())
        data = np.frombuffer(f.read(w * h), dtype=np.uint8)
    return data.reshape(h, w).astype(np.float64) / float(maxval)


def write_scenario(scn: Scenario, out_dir, stem: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = scn.raster.shape[0]
    save_tracks(scn.tracks, out / f"{stem}.tracks.json", width=res, height=res)
    sidecar = {"family": scn.family, "params": scn.params,
               "mode_id": scn.mode_id, "label": scn.label}
    (out / f"{stem}.scene.json").write_text(json.dumps(sidecar))
    save_pgm(scn.raster, out / f"{stem}.pgm")


def read_scenario(out_dir, stem: str) -> Scenario:
    out = Path(out_dir)
    from .trackdata import load_tracks

    sidecar = json.loads((out / f"{stem}.scene.json").read_text())
    tracks = load_tracks(out / f"{stem}.tracks.json")
    raster = load_pgm(out / f"{stem}.pgm")
    return Scenario(family=sidecar["family"], params=sidecar["params"],
                    mode_id=int(sidecar["mode_id"]), tracks=tracks,
                    label=int(sidecar["label"]), raster=raster)
