"""Conditional flow matching over latent motion grids.

A transformer vector field denoises whitened latents along linear
noise-to-data paths. Goal conditioning enters through cross-attention: one
token per poke (Fourier-embedded target position and timestep, rotary anchor
position) plus an optional learned label token; the start-frame embedding is
cross-attended and randomly dropped during training. Sampling is plain Euler
integration from a standard normal prior.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .nnkit import (AttentionConfig, CrossAttentionBlock, FeedForward, FourierFeatures,
                    FourierSpec, RMSNorm, RopeSpec, SelfAttentionBlock, rope_angles,
                    load_state_dict_arrays, save_checkpoint, load_checkpoint,
                    state_dict_arrays)
from .motionvae import FrameEmbedding, LatentGrid, VaeConfig
from .seeding import derive_seed
from .trackdata import TrackSet

QUARTER = 0.25


class GenConfigError(ValueError):
    pass


class FlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class Poke:
    """Goal constraint: anchor start position, target position, target timestep."""

    anchor: np.ndarray
    target: np.ndarray
    t_star: int

    def __post_init__(self):
        anchor = np.asarray(self.anchor, dtype=np.float64).reshape(2)
        target = np.asarray(self.target, dtype=np.float64).reshape(2)
        if np.any(np.abs(anchor) > 1.0) or np.any(np.abs(target) > 1.0):
            raise GenConfigError("poke coordinates must lie in [-1, 1]")
        if self.t_star < 0:
            raise GenConfigError("t_star must be >= 0")
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "target", target)


@dataclass(frozen=True)
class Condition:
    pokes: tuple[Poke, ...] = ()
    label: int | None = None
    frame: FrameEmbedding | None = None
    drop_frame: bool = False


@dataclass(frozen=True)
class FlowState:
    z_t: np.ndarray
    t: float

    def __post_init__(self):
        z = np.asarray(self.z_t, dtype=np.float64)
        if not np.all(np.isfinite(z)):
            raise FlowError("flow state must be finite")
        if not (0.0 <= self.t <= 1.0):
            raise FlowError(f"flow time must be in [0, 1], got {self.t}")
        object.__setattr__(self, "z_t", z)


@dataclass(frozen=True)
class LatentStats:
    """Per-channel whitening statistics over the training latent corpus."""

    mean: np.ndarray  # (D,)
    std: np.ndarray   # (D,)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if mean.shape != std.shape:
            raise GenConfigError("mean/std length mismatch")
        if np.any(std <= 0):
            raise GenConfigError("latent std must be > 0 per channel")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def from_corpus(cls, latents: np.ndarray, floor: float = 1e-6) -> "LatentStats":
        flat = latents.reshape(-1, latents.shape[-1])
        return cls(mean=flat.mean(axis=0), std=np.maximum(flat.std(axis=0), floor))

    def whiten(self, z: np.ndarray) -> np.ndarray:
        return (z - self.mean) / self.std

    def unwhiten(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean


def interpolate(z0: np.ndarray, z1: np.ndarray, t: float) -> FlowState:
    """Linear path z_t = (1 - t) z0 + t z1."""
    return FlowState(z_t=(1.0 - t) * np.asarray(z0) + t * np.asarray(z1), t=t)


def target_flow(z0: np.ndarray, z1: np.ndarray) -> np.ndarray:
    """The constant target field v* = z1 - z0 (independent of t)."""
    return np.asarray(z1, dtype=np.float64) - np.asarray(z0, dtype=np.float64)


@dataclass(frozen=True)
class GenConfig:
    horizon: int = 64
    t_z: int = 1
    grid_h: int = 8
    grid_w: int = 8
    latent_dim: int = 8
    nn: AttentionConfig = field(default_factory=AttentionConfig)
    fourier: FourierSpec = field(default_factory=lambda: FourierSpec(seed=1))
    n_labels: int = 8
    p_drop: float = 0.1
    sigma_aug: float = 0.05
    frame_dim: int = 64
    rope_base: float = 1.0e4
    spatial_bias: bool = True

    def __post_init__(self):
        if not (0.0 <= self.p_drop <= 1.0):
            raise GenConfigError("p_drop must be in [0, 1]")
        if self.sigma_aug < 0:
            raise GenConfigError("sigma_aug must be >= 0")

    @property
    def latent_tokens(self) -> int:
        return self.t_z * self.grid_h * self.grid_w

    @property
    def latent_shape(self) -> tuple[int, int, int, int]:
        return (self.t_z, self.grid_h, self.grid_w, self.latent_dim)

    @classmethod
    def from_vae(cls, vae_cfg: VaeConfig, **overrides) -> "GenConfig":
        base = dict(horizon=vae_cfg.horizon, t_z=vae_cfg.t_z, grid_h=vae_cfg.grid_h,
                    grid_w=vae_cfg.grid_w, latent_dim=vae_cfg.latent_dim,
                    frame_dim=vae_cfg.frame_dim)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return {"horizon": self.horizon, "t_z": self.t_z, "grid_h": self.grid_h,
                "grid_w": self.grid_w, "latent_dim": self.latent_dim,
                "nn": self.nn.to_dict(), "fourier": self.fourier.to_dict(),
                "n_labels": self.n_labels, "p_drop": self.p_drop,
                "sigma_aug": self.sigma_aug, "frame_dim": self.frame_dim,
                "rope_base": self.rope_base, "spatial_bias": self.spatial_bias}

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        d["nn"] = AttentionConfig.from_dict(d["nn"])
        d["fourier"] = FourierSpec.from_dict(d["fourier"])
        return cls(**d)


class _FieldLayer(nn.Module):
    def __init__(self, cfg: AttentionConfig, spatial_bias: bool):
        super().__init__()
        self.sa = SelfAttentionBlock(cfg, spatial_bias=spatial_bias)
        self.ca_frame = CrossAttentionBlock(cfg, spatial_bias=spatial_bias)
        self.ca_cond = CrossAttentionBlock(cfg)  # few condition tokens: stay global
        self.ff = FeedForward(cfg)

    def forward(self, x, angles, pos, frame_tokens, frame_angles, frame_pos, frame_mask,
                cond_tokens, cond_angles, cond_mask):
        x = self.sa(x, angles, pos=pos)
        if frame_tokens is not None:
            x = self.ca_frame(x, frame_tokens, angles_q=angles, angles_k=frame_angles,
                              key_mask=frame_mask, pos_q=pos, pos_k=frame_pos)
        if cond_tokens is not None and cond_tokens.shape[1] > 0:
            x = self.ca_cond(x, cond_tokens, angles_q=angles, angles_k=cond_angles,
                             key_mask=cond_mask)
        return self.ff(x)


class VectorFieldModel(nn.Module):
    """Transformer denoiser over whitened latent grids."""

    def __init__(self, cfg: GenConfig, seed: int = 0):
        super().__init__()
        torch.manual_seed(derive_seed(seed, "gen-init"))
        self.cfg = cfg
        d = cfg.nn.d_model
        dk = cfg.nn.head_dim
        per = cfg.fourier.width_per_scalar

        self.fourier = FourierFeatures(cfg.fourier)
        self.in_proj = nn.Linear(cfg.latent_dim, d)
        self.t_mlp = nn.Sequential(nn.Linear(per, d), nn.SiLU(), nn.Linear(d, d))
        self.poke_mlp = nn.Sequential(nn.Linear(3 * per, d), nn.SiLU(), nn.Linear(d, d))
        self.label_emb = nn.Embedding(cfg.n_labels, d)
        self.frame_proj = nn.Linear(cfg.frame_dim, d)

        if cfg.t_z > 1:
            self.rope_latent = RopeSpec(dk, (("tz", QUARTER), ("h", QUARTER), ("w", QUARTER), ("empty", QUARTER)),
                                        base=cfg.rope_base)
        else:
            self.rope_latent = RopeSpec(dk, (("h", QUARTER), ("w", QUARTER), ("empty", 0.5)), base=cfg.rope_base)
        self.rope_anchor = RopeSpec(dk, (("x0", QUARTER), ("y0", QUARTER), ("empty", 0.5)), base=cfg.rope_base)
        self.rope_frame = RopeSpec(dk, (("h", QUARTER), ("w", QUARTER), ("empty", 0.5)), base=cfg.rope_base)

        self.layers = nn.ModuleList(_FieldLayer(cfg.nn, cfg.spatial_bias)
                                    for _ in range(cfg.nn.depth))
        self.out_norm = RMSNorm(d, cfg.nn.norm_eps)
        self.out_head = nn.Linear(d, cfg.latent_dim)
        nn.init.zeros_(self.out_head.weight)
        nn.init.zeros_(self.out_head.bias)

    def _dtype(self):
        return next(self.parameters()).dtype

    def _latent_state(self, dtype, device):
        cfg = self.cfg
        tz = torch.arange(cfg.t_z, dtype=dtype, device=device)
        hh = torch.arange(cfg.grid_h, dtype=dtype, device=device)
        ww = torch.arange(cfg.grid_w, dtype=dtype, device=device)
        grid = torch.cartesian_prod(tz, hh, ww)
        pos = grid if cfg.t_z > 1 else grid[:, 1:]
        centers = torch.stack([-1.0 + (grid[:, 2] + 0.5) * 2.0 / cfg.grid_w,
                               -1.0 + (grid[:, 1] + 0.5) * 2.0 / cfg.grid_h], dim=-1)
        return rope_angles(self.rope_latent, pos), centers

    def embed_condition(self, cond: Condition):
        """Context tokens for one condition: k poke tokens + optional label token.

        Returns (tokens [M, d], angles [M, dk/2]); M may be zero.
        """
        cfg = self.cfg
        dtype = self._dtype()
        tokens, angles = [], []
        n_pairs = cfg.nn.head_dim // 2
        for p in cond.pokes:
            if p.t_star >= cfg.horizon:
                raise GenConfigError(f"poke t_star={p.t_star} outside horizon {cfg.horizon}")
            raw = torch.tensor([p.target[0], p.target[1], p.t_star / cfg.horizon], dtype=dtype)
            tokens.append(self.poke_mlp(self.fourier(raw)))
            anchor = torch.from_numpy(p.anchor.reshape(1, 2)).to(dtype)
            angles.append(rope_angles(self.rope_anchor, anchor)[0])
        if cond.label is not None:
            if not (0 <= cond.label < cfg.n_labels):
                raise GenConfigError(f"label {cond.label} outside table of {cfg.n_labels}")
            tokens.append(self.label_emb(torch.tensor(cond.label)))
            angles.append(torch.zeros(n_pairs, dtype=dtype))
        if not tokens:
            d = cfg.nn.d_model
            return torch.zeros(0, d, dtype=dtype), torch.zeros(0, n_pairs, dtype=dtype)
        return torch.stack(tokens), torch.stack(angles)

    def pack_conditions(self, conds: list[Condition], frame_override: torch.Tensor | None = None):
        """Pad a list of conditions into batch tensors with validity masks."""
        dtype = self._dtype()
        embedded = [self.embed_condition(c) for c in conds]
        M = max((t.shape[0] for t, _ in embedded), default=0)
        B = len(conds)
        d = self.cfg.nn.d_model
        n_pairs = self.cfg.nn.head_dim // 2
        cond_tokens = torch.zeros(B, M, d, dtype=dtype)
        cond_angles = torch.zeros(B, M, n_pairs, dtype=dtype)
        cond_mask = torch.zeros(B, M, dtype=torch.bool)
        for i, (t, a) in enumerate(embedded):
            m = t.shape[0]
            cond_tokens[i, :m] = t
            cond_angles[i, :m] = a
            cond_mask[i, :m] = True

        frame_tokens = frame_angles = frame_mask = frame_pos = None
        frames = [c.frame for c in conds]
        if frame_override is not None or any(f is not None for f in frames):
            if frame_override is not None:
                feats = frame_override.to(dtype)
            else:
                shapes = {f.features.shape for f in frames if f is not None}
                if len(shapes) != 1:
                    raise GenConfigError(f"mixed frame feature shapes in batch: {shapes}")
                shape = next(iter(shapes))
                stacked = np.stack([f.features if f is not None else np.zeros(shape) for f in frames])
                feats = torch.from_numpy(stacked).to(dtype)
            if feats.shape[-1] != self.cfg.frame_dim:
                raise GenConfigError(f"frame feature channels {feats.shape[-1]} != {self.cfg.frame_dim}")
            B_, Hf, Wf, _ = feats.shape
            frame_tokens = self.frame_proj(feats.reshape(B_, Hf * Wf, -1))
            hh = torch.arange(Hf, dtype=dtype)
            ww = torch.arange(Wf, dtype=dtype)
            fgrid = torch.cartesian_prod(hh, ww)
            frame_angles = rope_angles(self.rope_frame, fgrid).expand(B_, -1, -1)
            frame_pos = torch.stack([-1.0 + (fgrid[:, 1] + 0.5) * 2.0 / Wf,
                                     -1.0 + (fgrid[:, 0] + 0.5) * 2.0 / Hf],
                                    dim=-1).expand(B_, -1, -1)
            present = torch.tensor([f is not None and not c.drop_frame
                                    for f, c in zip(frames, conds)], dtype=torch.bool)
            if frame_override is not None:
                present = torch.tensor([not c.drop_frame for c in conds], dtype=torch.bool)
            frame_mask = present[:, None].expand(B_, Hf * Wf)
        return cond_tokens, cond_angles, cond_mask, frame_tokens, frame_angles, frame_mask, frame_pos

    def forward(self, z_t: torch.Tensor, t: torch.Tensor, cond_tokens=None, cond_angles=None,
                cond_mask=None, frame_tokens=None, frame_angles=None, frame_mask=None,
                frame_pos=None):
        cfg = self.cfg
        if tuple(z_t.shape[1:]) != cfg.latent_shape:
            raise GenConfigError(f"latent shape {tuple(z_t.shape[1:])} != configured {cfg.latent_shape}")
        B = z_t.shape[0]
        x = self.in_proj(z_t.reshape(B, cfg.latent_tokens, cfg.latent_dim))
        t_tok = self.t_mlp(self.fourier(t.to(x.dtype).reshape(B, 1)))  # [B, d]
        x = x + t_tok[:, None, :]
        angles, centers = self._latent_state(x.dtype, x.device)
        angles = angles.expand(B, -1, -1)
        pos = centers.expand(B, -1, -1)
        for layer in self.layers:
            x = layer(x, angles, pos, frame_tokens, frame_angles, frame_pos, frame_mask,
                      cond_tokens, cond_angles, cond_mask)
        v = self.out_head(self.out_norm(x))
        return v.reshape(B, *cfg.latent_shape)

    def vfield(self, state: FlowState, cond: Condition) -> np.ndarray:
        """Single whitened-space field evaluation for a FlowState."""
        dtype = self._dtype()
        packed = self.pack_conditions([cond])
        z = torch.from_numpy(state.z_t[None]).to(dtype)
        with torch.no_grad():
            v = self(z, torch.tensor([state.t], dtype=dtype), *packed)
        return v[0].double().numpy()


# ---------------------------------------------------------------------------
# loss and sampling


def fm_loss(model: VectorFieldModel, stats: LatentStats, z1: np.ndarray,
            conds: list[Condition], seed: int) -> torch.Tensor:
    """Flow-matching MSE on one batch of raw latents z1 [B, T_z, H, W, D].

    Whitens z1, draws t ~ U(0,1) and z0 ~ N(0,I) keyed by seed, and drops the
    start frame per element with probability cfg.p_drop (or when the condition
    requests it).
    """
    cfg = model.cfg
    dtype = model._dtype()
    z1w = torch.from_numpy(stats.whiten(np.asarray(z1, dtype=np.float64))).to(dtype)
    B = z1w.shape[0]
    if len(conds) != B:
        raise GenConfigError(f"{len(conds)} conditions for a batch of {B}")
    rng = np.random.default_rng(derive_seed(seed, "fm-draws"))
    t = torch.from_numpy(rng.uniform(0.0, 1.0, B)).to(dtype)
    z0 = torch.from_numpy(rng.standard_normal(tuple(z1w.shape))).to(dtype)
    drop_u = rng.uniform(0.0, 1.0, B)
    conds = [Condition(pokes=c.pokes, label=c.label, frame=c.frame,
                       drop_frame=c.drop_frame or (drop_u[i] < cfg.p_drop))
             for i, c in enumerate(conds)]

    tb = t.reshape(B, *([1] * (z1w.dim() - 1)))
    z_t = (1.0 - tb) * z0 + tb * z1w
    v_star = z1w - z0
    packed = model.pack_conditions(conds)
    v_hat = model(z_t, t, *packed)
    return (v_hat - v_star).pow(2).mean()


def euler_integrate(field, z0: torch.Tensor, nfe: int) -> torch.Tensor:
    """z <- z + (1/nfe) field(z, k/nfe) for k = 0..nfe-1."""
    if nfe < 1:
        raise FlowError("nfe must be >= 1")
    z = z0
    for k in range(nfe):
        v = field(z, k / nfe)
        if not torch.isfinite(v).all():
            raise FlowError(f"non-finite vector field at integration step {k}")
        z = z + v / nfe
    return z


def sample(model: VectorFieldModel, stats: LatentStats, cond: Condition,
           nfe: int, seed: int) -> LatentGrid:
    """Euler-integrate from N(0, I); returns the un-whitened latent grid."""
    cfg = model.cfg
    dtype = model._dtype()
    rng = np.random.default_rng(seed)
    z0 = torch.from_numpy(rng.standard_normal((1, *cfg.latent_shape))).to(dtype)
    packed = model.pack_conditions([cond])

    def field(z, t):
        with torch.no_grad():
            return model(z, torch.tensor([t], dtype=dtype), *packed)

    z = euler_integrate(field, z0, nfe)
    z_np = stats.unwhiten(z[0].double().numpy())
    return LatentGrid(z=z_np, config={"t_z": cfg.t_z, "grid_h": cfg.grid_h,
                                      "grid_w": cfg.grid_w, "latent_dim": cfg.latent_dim})


def tracks_to_pokes(ts: TrackSet, t_stars: list[int]) -> list[Poke]:
    """One poke per (track, t*): anchor = start, target = positions[t*]."""
    pokes = []
    for tr in ts.tracks:
        for t_star in t_stars:
            if not (0 <= t_star < tr.T):
                raise GenConfigError(f"t_star={t_star} outside horizon {tr.T}")
            pokes.append(Poke(anchor=tr.start, target=tr.positions[t_star], t_star=int(t_star)))
    return pokes


# ---------------------------------------------------------------------------
# latent dataset + training


@dataclass(frozen=True)
class LatentSample:
    z1: np.ndarray            # posterior mean (T_z, H, W, D)
    frame: FrameEmbedding
    label: int | None
    tracks: TrackSet


def build_latent_dataset(vae, scenarios, *, encode_tracks: int = 16, seed: int = 0,
                         batch_size: int = 8) -> list[LatentSample]:
    """Encode scenarios with the frozen VAE; z1 = posterior mean."""
    samples = []
    rng = np.random.default_rng(derive_seed(seed, "latent-dataset"))
    dtype = vae._dtype()
    for lo in range(0, len(scenarios), batch_size):
        chunk = scenarios[lo:lo + batch_size]
        tracks = []
        rasters = []
        for s in chunk:
            arr = s.tracks.as_array()
            if arr.shape[0] > encode_tracks:
                sel = rng.choice(arr.shape[0], size=encode_tracks, replace=False)
                arr = arr[sel]
            tracks.append(torch.from_numpy(arr).to(dtype))
            rasters.append(torch.from_numpy(s.raster).to(dtype))
        n_min = min(t.shape[0] for t in tracks)
        tracks = torch.stack([t[:n_min] for t in tracks])
        raster = torch.stack(rasters)
        with torch.no_grad():
            feats = vae.frame_features(raster)
            mean, _ = vae.encode_batch(tracks, feats)
        for i, s in enumerate(chunk):
            samples.append(LatentSample(
                z1=mean[i].double().numpy(),
                frame=FrameEmbedding(features=feats[i].double().numpy(), source="learned-patch"),
                label=s.label, tracks=s.tracks))
    return samples


def _training_condition(sample: LatentSample, cfg: GenConfig, rng: np.random.Generator,
                        max_pokes: int = 8) -> Condition:
    n_pokes = int(rng.integers(0, max_pokes + 1))
    pokes = []
    arr = sample.tracks.as_array()
    for _ in range(n_pokes):
        j = int(rng.integers(arr.shape[0]))
        t_star = cfg.horizon - 1 if rng.uniform() < 0.5 else int(rng.integers(1, cfg.horizon))
        pokes.append(Poke(anchor=arr[j, 0], target=arr[j, t_star], t_star=t_star))
    feats = sample.frame.features
    if cfg.sigma_aug > 0:
        feats = feats + rng.normal(0.0, cfg.sigma_aug, feats.shape)
    return Condition(pokes=tuple(pokes), label=sample.label,
                     frame=FrameEmbedding(features=feats, source=sample.frame.source))


def train_generator(latent_dataset: list[LatentSample], cfg: GenConfig, opt_cfg,
                    seed: int, out_dir=None, *, vae_hash: str = "",
                    vae_checkpoint: str | None = None, log_every: int = 25,
                    max_pokes: int = 8):
    """Train the vector field on encoded latents; returns (model, stats, log)."""
    if not latent_dataset:
        raise GenConfigError("latent dataset is empty")
    stats = LatentStats.from_corpus(np.stack([s.z1 for s in latent_dataset]))
    model = VectorFieldModel(cfg, seed=seed)
    opt = torch.optim.AdamW(model.parameters(), lr=opt_cfg.lr, betas=opt_cfg.betas,
                            weight_decay=opt_cfg.weight_decay)
    order_rng = np.random.default_rng(derive_seed(seed, "gen-batch-order"))
    rows = []
    for step in range(opt_cfg.steps):
        step_seed = derive_seed(seed, "gen-step", step)
        idx = order_rng.choice(len(latent_dataset),
                               size=min(opt_cfg.batch_size, len(latent_dataset)), replace=False)
        cond_rng = np.random.default_rng(step_seed)
        batch = [latent_dataset[i] for i in idx]
        conds = [_training_condition(s, cfg, cond_rng, max_pokes=max_pokes) for s in batch]
        z1 = np.stack([s.z1 for s in batch])

        for group in opt.param_groups:
            group["lr"] = opt_cfg.lr_at(step)
        loss = fm_loss(model, stats, z1, conds, step_seed)
        if not torch.isfinite(loss):
            raise RuntimeError(f"generator training diverged at step {step}: loss={loss.item()}")
        opt.zero_grad()
        loss.backward()
        if opt_cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), opt_cfg.grad_clip)
        opt.step()
        if step % log_every == 0 or step == opt_cfg.steps - 1:
            rows.append({"step": step, "loss": loss.item()})

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "gen_loss_log.csv", "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["step", "loss"])
            writer.writeheader()
            writer.writerows(rows)
        save_generator(model, stats, out / "gen.ckpt.npz", vae_hash=vae_hash,
                       vae_checkpoint=vae_checkpoint)
    return model, stats, rows


# ---------------------------------------------------------------------------
# checkpoint bundle


def save_generator(model: VectorFieldModel, stats: LatentStats, path, *,
                   vae_hash: str = "", vae_checkpoint: str | None = None) -> str:
    arrays = state_dict_arrays(model)
    arrays["stats.latent_mean"] = stats.mean.copy()
    arrays["stats.latent_std"] = stats.std.copy()
    config = {"gen": model.cfg.to_dict(), "vae_hash": vae_hash,
              "vae_checkpoint": str(vae_checkpoint) if vae_checkpoint else None}
    return save_checkpoint(path, arrays, config, kind="motion-generator")


def load_generator(path):
    """Returns (model, stats, meta) with meta = {vae_hash, vae_checkpoint, hash}."""
    ckpt = load_checkpoint(path)
    if ckpt.kind != "motion-generator":
        raise GenConfigError(f"{path}: checkpoint kind '{ckpt.kind}' is not a motion-generator")
    full_hash = ckpt.content_hash
    stats = LatentStats(mean=ckpt.arrays.pop("stats.latent_mean"),
                        std=ckpt.arrays.pop("stats.latent_std"))
    model = VectorFieldModel(GenConfig.from_dict(ckpt.config["gen"]))
    load_state_dict_arrays(model, ckpt.arrays)
    model.eval()
    meta = {"vae_hash": ckpt.config.get("vae_hash", ""),
            "vae_checkpoint": ckpt.config.get("vae_checkpoint"),
            "hash": full_hash}
    return model, stats, meta
