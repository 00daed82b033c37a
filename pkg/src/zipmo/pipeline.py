"""End-to-end wiring: datasets -> models -> samples -> metrics.

Shared by the CLI commands, the sampling service, and the acceptance suite so
that every surface reports identical numbers for identical inputs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import evalkit, motiongen, motionvae, synthkin, trackdata
from .motiongen import Condition, LatentStats, Poke, VectorFieldModel, tracks_to_pokes
from .motionvae import FrameEmbedding, LatentGrid, VaeModel
from .seeding import derive_seed
from .trackdata import TrackSet


@dataclass(frozen=True)
class EvalOptions:
    num_samples: int = 8
    nfe: int = 10
    n_pokes: int = 0
    encode_tracks: int = 16
    metric_grid: int = 128
    pck_space: int = 256
    pck_thresholds: tuple[float, ...] = evalkit.DEFAULT_PCK_THRESHOLDS
    knn_k: int = 1
    var_threshold: float | None = 1e-4
    max_eval_tracks: int | None = 24
    seed: int = 0


def load_dataset(path, limit: int | None = None) -> list[synthkin.Scenario]:
    """Read scenarios listed in a dataset directory's manifest.json."""
    path = Path(path)
    manifest = path / "manifest.json"
    if not manifest.exists():
        raise FileNotFoundError(f"dataset manifest not found: {manifest}")
    stems = json.loads(manifest.read_text())["stems"]
    if limit is not None:
        stems = stems[:limit]
    return [synthkin.read_scenario(path, stem) for stem in stems]


def eval_tracks(scn: synthkin.Scenario, opts: EvalOptions) -> TrackSet:
    """Ground-truth tracks scored by the metrics: the non-static subset."""
    ts = scn.tracks
    if opts.var_threshold is not None:
        moving = trackdata.filter_static(ts, opts.var_threshold)
        if not moving.is_empty:
            ts = moving
    if opts.max_eval_tracks is not None and ts.N > opts.max_eval_tracks:
        ts = TrackSet(tracks=ts.tracks[:opts.max_eval_tracks], frame_id=ts.frame_id)
    return ts


def clamp_tracks(positions: np.ndarray, frame_id: str) -> TrackSet:
    """Model outputs are unconstrained; clip into the normalized box."""
    return TrackSet.from_array(np.clip(positions, -1.0, 1.0), frame_id=frame_id)


def sample_latents(gen: VectorFieldModel, stats: LatentStats, cond: Condition,
                   num: int, nfe: int, seed: int) -> np.ndarray:
    """Batched Euler sampling; sample k is keyed by (seed, k)."""
    dtype = gen._dtype()
    shape = gen.cfg.latent_shape
    z0 = np.stack([np.random.default_rng(derive_seed(seed, "sample-z0", k)).standard_normal(shape)
                   for k in range(num)])
    z = torch.from_numpy(z0).to(dtype)
    packed = gen.pack_conditions([cond] * num)

    def f(zz, t):
        with torch.no_grad():
            return gen(zz, torch.full((num,), t, dtype=dtype), *packed)

    out = motiongen.euler_integrate(f, z, nfe)
    return stats.unwhiten(out.double().numpy())


def decode_latents(vae: VaeModel, latents: np.ndarray, queries: np.ndarray,
                   f0: FrameEmbedding) -> np.ndarray:
    """Decode [K, ...] latents at shared queries -> [K, Q, T, 2] (unclamped)."""
    dtype = vae._dtype()
    K = latents.shape[0]
    q = torch.from_numpy(np.asarray(queries, dtype=np.float64)[None]).to(dtype).expand(K, -1, -1)
    z = torch.from_numpy(latents).to(dtype)
    feats = torch.from_numpy(f0.features[None]).to(dtype).expand(K, -1, -1, -1)
    with torch.no_grad():
        out = vae.decode_batch(q, z, feats)
    return out.double().numpy()


@dataclass
class SceneResult:
    gt: TrackSet
    samples: evalkit.SampleSet
    pokes_all: list[Poke]          # end-frame pokes of every scored track
    pokes_given: list[Poke]        # the subset handed to the generator
    min_mse: float
    mean_mse: float
    epe: float


def run_scene(vae: VaeModel, gen: VectorFieldModel, stats: LatentStats,
              scn: synthkin.Scenario, opts: EvalOptions, scene_key: str) -> SceneResult:
    gt = eval_tracks(scn, opts)
    if gt.is_empty:
        raise evalkit.MetricError(f"scene {scene_key} has no non-static tracks to score")
    f0 = vae.encode_frame(scn.raster)
    pokes_all = tracks_to_pokes(gt, [gt.T - 1])
    pokes_given = pokes_all[:opts.n_pokes] if opts.n_pokes > 0 else []
    cond = Condition(pokes=tuple(pokes_given), label=scn.label, frame=f0)
    seed = derive_seed(opts.seed, "scene", scene_key)
    latents = sample_latents(gen, stats, cond, opts.num_samples, opts.nfe, seed)
    decoded = decode_latents(vae, latents, gt.starts(), f0)
    sample_sets = tuple(clamp_tracks(decoded[k], gt.frame_id) for k in range(opts.num_samples))
    samples = evalkit.SampleSet(samples=sample_sets, provenance={
        "seed": seed, "nfe": opts.nfe, "n_pokes": len(pokes_given)})
    mn, mean = evalkit.min_mean_mse(gt, samples, grid=opts.metric_grid)
    e = evalkit.epe(pokes_all, samples, grid=opts.metric_grid)
    return SceneResult(gt=gt, samples=samples, pokes_all=pokes_all,
                       pokes_given=pokes_given, min_mse=mn, mean_mse=mean, epe=e)


def reconstruct(vae: VaeModel, scn: synthkin.Scenario, opts: EvalOptions,
                queries: np.ndarray | None = None):
    """Autoencode a scene: encode its eval tracks, decode at their starts.

    Returns (gt TrackSet, pred TrackSet, Posterior).
    """
    gt = eval_tracks(scn, opts)
    enc = gt
    if enc.N > opts.encode_tracks:
        enc = TrackSet(tracks=enc.tracks[:opts.encode_tracks], frame_id=enc.frame_id)
    f0 = vae.encode_frame(scn.raster)
    post = vae.encode(enc, f0)
    z = LatentGrid(z=post.mean, config={})
    q = gt.starts() if queries is None else queries
    pred = vae.decode(q, z, f0)
    return gt, clamp_tracks(pred, gt.frame_id), post


def evaluate_dataset(vae: VaeModel, gen: VectorFieldModel | None, stats: LatentStats | None,
                     scenarios: list[synthkin.Scenario], opts: EvalOptions) -> evalkit.MetricReport:
    """Aggregate metrics over scenes.

    Generation metrics (min/mean MSE, EPE) need a generator; reconstruction
    PCK and kNN come from the VAE alone.
    """
    mins, means, epes = [], [], []
    pck_fracs: dict[str, list[float]] = {}
    latvecs, labels = [], []
    for i, scn in enumerate(scenarios):
        key = f"{scn.family}-{i}"
        if gen is not None:
            res = run_scene(vae, gen, stats, scn, opts, key)
            mins.append(res.min_mse)
            means.append(res.mean_mse)
            epes.append(res.epe)
        gt, pred, post = reconstruct(vae, scn, opts)
        result = evalkit.pck(gt, pred, thresholds=opts.pck_thresholds,
                             space=trackdata.PixelSpace(opts.pck_space, opts.pck_space))
        for k, v in result.fractions.items():
            pck_fracs.setdefault(k, []).append(v)
        latvecs.append(post.mean.reshape(-1))
        labels.append(scn.label)

    pck_mean = {k: float(np.mean(v)) for k, v in pck_fracs.items()}
    knn = None
    uniq, counts = np.unique(labels, return_counts=True)
    if len(uniq) >= 2 and counts.min() >= opts.knn_k + 1:
        knn = evalkit.knn_accuracy(np.stack(latvecs), labels, k=opts.knn_k)
    return evalkit.MetricReport(
        min_mse=float(np.mean(mins)) if mins else None,
        mean_mse=float(np.mean(means)) if means else None,
        epe=float(np.mean(epes)) if epes else None,
        pck=pck_mean,
        delta_avg=float(np.mean(list(pck_mean.values()))) if pck_mean else None,
        knn_acc=knn,
        counts={"scenes": len(scenarios), "num_samples": opts.num_samples if gen else 0},
        config={"nfe": opts.nfe, "n_pokes": opts.n_pokes, "metric_grid": opts.metric_grid,
                "pck_space": opts.pck_space, "seed": opts.seed},
    )


def default_query_grid(n: int = 16) -> np.ndarray:
    """n x n grid of query points spanning the normalized frame interior."""
    xs = np.linspace(-1.0, 1.0, n + 2)[1:-1]
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=-1)


def sampling_throughput(gen: VectorFieldModel, stats: LatentStats, nfe: int = 10,
                        repeats: int = 3, seed: int = 0) -> float:
    """Latent timesteps generated per second of wall clock (compression proxy)."""
    cond = Condition()
    # warmup compiles nothing but stabilizes allocator caches
    sample_latents(gen, stats, cond, 1, nfe, seed)
    t0 = time.perf_counter()
    for r in range(repeats):
        sample_latents(gen, stats, cond, 1, nfe, derive_seed(seed, r))
    dt = (time.perf_counter() - t0) / repeats
    return gen.cfg.horizon / dt
