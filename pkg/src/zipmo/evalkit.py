"""Distributional motion metrics on the [0, 128] evaluation grid.

All distance metrics place normalized tracks on a pixel grid via
trackdata.denormalize; distances are translation-invariant, so the exact
offset convention does not affect any value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .motiongen import Poke
from .trackdata import PixelSpace, TrackSet, denormalize
from .synthkin import ModeOracle

DEFAULT_METRIC_GRID = 128
DEFAULT_PCK_SPACE = 256
DEFAULT_PCK_THRESHOLDS = (1.0, 2.0, 4.0, 8.0, 16.0)


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class SampleSet:
    """K generated TrackSets sharing (N, T, frame_id) plus provenance."""

    samples: tuple[TrackSet, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.samples:
            N, T = self.samples[0].N, self.samples[0].T
            for i, s in enumerate(self.samples):
                if s.N != N or s.T != T:
                    raise MetricError(f"samples[{i}] shape ({s.N},{s.T}) != ({N},{T})")

    @property
    def K(self) -> int:
        return len(self.samples)

    def as_array(self) -> np.ndarray:
        return np.stack([s.as_array() for s in self.samples])


@dataclass
class MetricReport:
    min_mse: float | None = None
    mean_mse: float | None = None
    epe: float | None = None
    pck: dict[str, float] = field(default_factory=dict)
    delta_avg: float | None = None
    knn_acc: float | None = None
    counts: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.min_mse is not None and self.mean_mse is not None:
            if self.min_mse > self.mean_mse + 1e-9:
                raise MetricError(f"min_mse {self.min_mse} > mean_mse {self.mean_mse}")
        for key, frac in self.pck.items():
            if not (0.0 <= frac <= 1.0):
                raise MetricError(f"pck[{key}]={frac} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"min_mse": self.min_mse, "mean_mse": self.mean_mse, "epe": self.epe,
                "pck": self.pck, "delta_avg": self.delta_avg, "knn_acc": self.knn_acc,
                "counts": self.counts, "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))


def _grid(ts: TrackSet, size: int) -> np.ndarray:
    return denormalize(ts.as_array(), PixelSpace(size, size))


def min_mean_mse(gt: TrackSet, samples: SampleSet, grid: int = DEFAULT_METRIC_GRID) -> tuple[float, float]:
    """Min and mean squared distance of K samples to the ground truth.

    MSE(k) = mean over (track, time) of squared L2 distance, in grid units.
    """
    if samples.K == 0:
        raise MetricError("need at least one sample")
    gt_px = _grid(gt, grid)
    batch = np.stack([_grid(s, grid) for s in samples.samples])
    if batch.shape[1:] != gt_px.shape:
        raise MetricError(f"sample shape {batch.shape[1:]} != gt shape {gt_px.shape}")
    per = _kernels.mse_per_sample(gt_px, batch)
    return float(per.min()), float(per.mean())


def epe(pokes: list[Poke], samples: SampleSet, grid: int = DEFAULT_METRIC_GRID) -> float:
    """Endpoint error: distance between position at t_star and the poke target.

    Sample track j corresponds to poke j (samples are decoded at poke anchors
    in order); the per-sample mean over pokes is averaged over the K samples.
    """
    if samples.K == 0:
        raise MetricError("need at least one sample")
    if not pokes:
        raise MetricError("need at least one poke")
    if samples.samples[0].N != len(pokes):
        raise MetricError(f"{samples.samples[0].N} sample tracks vs {len(pokes)} pokes")
    space = PixelSpace(grid, grid)
    tracks = np.stack([_grid(s, grid) for s in samples.samples])
    targets = denormalize(np.stack([p.target for p in pokes]), space)
    t_stars = np.array([p.t_star for p in pokes], dtype=np.int64)
    T = samples.samples[0].T
    if np.any(t_stars < 0) or np.any(t_stars >= T):
        raise MetricError("poke t_star outside the sample horizon")
    per = _kernels.epe_per_sample(tracks, targets, t_stars)
    return float(per.mean())


@dataclass(frozen=True)
class PckResult:
    fractions: dict[str, float]
    delta_avg: float


def pck(gt: TrackSet, pred: TrackSet, thresholds=DEFAULT_PCK_THRESHOLDS,
        space: PixelSpace | None = None) -> PckResult:
    """Fraction of (point, time) pairs with error < delta, plus the ladder mean.

    Default ladder {1,2,4,8,16} px on a 256 grid; pass a single threshold and
    a 128 space for the 1-px variant.
    """
    thresholds = tuple(float(t) for t in thresholds)
    if not thresholds:
        raise MetricError("thresholds must be non-empty")
    if space is None:
        space = PixelSpace(DEFAULT_PCK_SPACE, DEFAULT_PCK_SPACE)
    if gt.N != pred.N or gt.T != pred.T:
        raise MetricError(f"gt ({gt.N},{gt.T}) and pred ({pred.N},{pred.T}) shapes differ")
    gt_px = denormalize(gt.as_array(), space)
    pred_px = denormalize(pred.as_array(), space)
    counts = _kernels.pck_counts(gt_px, pred_px, np.asarray(thresholds))
    total = gt.N * gt.T
    fracs = {str(d): float(c) / total for d, c in zip(thresholds, counts)}
    return PckResult(fractions=fracs, delta_avg=float(np.mean(list(fracs.values()))))


def knn_accuracy(latents, labels, k: int = 1) -> float:
    """Leave-one-out k-NN accuracy under cosine distance.

    Vote ties break to the label with the smaller summed distance, then the
    lower label. Every class needs at least k+1 members.
    """
    X = np.asarray(latents, dtype=np.float64)
    if X.ndim != 2:
        X = X.reshape(len(labels), -1)
    y = np.asarray(labels)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise MetricError("kNN accuracy needs at least 2 classes")
    if np.any(counts < k + 1):
        short = classes[counts < k + 1]
        raise MetricError(f"classes {short.tolist()} have fewer than k+1={k + 1} members")
    norms = np.linalg.norm(X, axis=1)
    norms = np.where(norms == 0, 1e-12, norms)
    sims = (X / norms[:, None]) @ (X / norms[:, None]).T
    dist = 1.0 - sims
    correct = 0
    for i in range(len(y)):
        d = dist[i].copy()
        d[i] = np.inf
        nn = np.argsort(d, kind="stable")[:k]
        votes: dict = {}
        for j in nn:
            lbl = y[j]
            cnt, dsum = votes.get(lbl, (0, 0.0))
            votes[lbl] = (cnt + 1, dsum + d[j])
        winner = min(votes.items(), key=lambda kv: (-kv[1][0], kv[1][1], kv[0]))[0]
        correct += int(winner == y[i])
    return correct / len(y)


def mode_coverage(oracle: ModeOracle, samples: SampleSet, eps: float,
                  grid: int = DEFAULT_METRIC_GRID) -> tuple[list[bool], float]:
    """Which oracle modes are hit by at least one sample (MSE < eps).

    Each sample is compared to the mode law evaluated at that sample's own
    start points, on the metric grid.
    """
    if samples.K == 0:
        raise MetricError("need at least one sample")
    T = samples.samples[0].T
    ts = np.arange(T)
    hits = []
    for _, fn in oracle.modes:
        hit = False
        for s in samples.samples:
            ref = fn(s.starts(), ts)
            ref_px = denormalize(ref, PixelSpace(grid, grid))
            s_px = _grid(s, grid)
            mse = float(_kernels.mse_per_sample(ref_px, s_px[None])[0])
            if mse < eps:
                hit = True
                break
        hits.append(hit)
    return hits, float(np.mean(hits))


# -- CSV summaries -------------------------------------------------------------

CSV_FIELDS = ("run", "min_mse", "mean_mse", "epe", "delta_avg", "knn_acc")


def metric_csv_header() -> str:
    return ",".join(CSV_FIELDS)


def metric_csv_row(run: str, report: MetricReport) -> str:
    def fmt(v):
        return "" if v is None else f"{v:.6g}"

    return ",".join([run, fmt(report.min_mse), fmt(report.mean_mse), fmt(report.epe),
                     fmt(report.delta_avg), fmt(report.knn_acc)])
