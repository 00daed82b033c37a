"""Trajectory VAE: sparse tracks + start frame -> latent motion grid -> tracks.

The encoder jointly self-attends over trajectory tokens and latent-grid tokens
(partial rotary embeddings carry start position, time, and grid coordinates)
with interleaved cross-attention to start-frame features. The decoder turns
arbitrary query points into per-(query, t) tokens that cross-attend to the
latent grid and the frame; queries are processed independently, so decoding is
permutation-equivariant and can be chunked.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .nnkit import (AttentionConfig, Attention, CrossAttentionBlock, FeedForward,
                    FourierFeatures, FourierSpec, RMSNorm, RopeSpec,
                    SelfAttentionBlock, rope_angles, load_state_dict_arrays,
                    save_checkpoint, load_checkpoint, state_dict_arrays, content_hash)
from .seeding import derive_seed
from .trackdata import TrackSet

VALID_T_C = (2, 4, 8, 16, 32, 64)


class VaeConfigError(ValueError):
    pass


class CapacityError(RuntimeError):
    pass


@dataclass(frozen=True)
class VaeConfig:
    horizon: int = 64          # T
    t_c: int = 64              # temporal compression factor
    grid_h: int = 8
    grid_w: int = 8
    latent_dim: int = 8        # channels D
    kl_weight: float = 1.0e-7
    mae_fraction: float = 0.25
    nn: AttentionConfig = field(default_factory=AttentionConfig)
    fourier: FourierSpec = field(default_factory=FourierSpec)
    frame_dim: int = 64
    patch_size: int = 8
    rope_base: float = 1.0e4
    spatial_bias: bool = True
    max_encoder_tokens: int = 300_000

    def __post_init__(self):
        if self.t_c not in VALID_T_C:
            raise VaeConfigError(f"t_c must be one of {VALID_T_C}, got {self.t_c}")
        if self.horizon % self.t_c != 0:
            raise VaeConfigError(f"t_c={self.t_c} must divide horizon={self.horizon}")
        if self.kl_weight < 0:
            raise VaeConfigError("kl_weight must be >= 0")
        if not (0.0 < self.mae_fraction < 1.0):
            raise VaeConfigError("mae_fraction must be in (0, 1)")

    @property
    def t_z(self) -> int:
        return self.horizon // self.t_c

    @property
    def latent_tokens(self) -> int:
        return self.t_z * self.grid_h * self.grid_w

    @property
    def latent_shape(self) -> tuple[int, int, int, int]:
        return (self.t_z, self.grid_h, self.grid_w, self.latent_dim)

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon, "t_c": self.t_c, "grid_h": self.grid_h,
            "grid_w": self.grid_w, "latent_dim": self.latent_dim,
            "kl_weight": self.kl_weight, "mae_fraction": self.mae_fraction,
            "nn": self.nn.to_dict(), "fourier": self.fourier.to_dict(),
            "frame_dim": self.frame_dim, "patch_size": self.patch_size,
            "rope_base": self.rope_base, "spatial_bias": self.spatial_bias,
            "max_encoder_tokens": self.max_encoder_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VaeConfig":
        d = dict(d)
        d["nn"] = AttentionConfig.from_dict(d["nn"])
        d["fourier"] = FourierSpec.from_dict(d["fourier"])
        return cls(**d)

    @classmethod
    def desk(cls, **overrides) -> "VaeConfig":
        return cls(**overrides)

    @classmethod
    def paper_preset(cls) -> "VaeConfig":
        """Full-scale hyperparameters; kept for reference, not exercised in CI."""
        return cls(grid_h=16, grid_w=16, latent_dim=16,
                   nn=AttentionConfig(d_model=768, n_heads=12, depth=12),
                   frame_dim=768, patch_size=14)


@dataclass(frozen=True)
class FrameEmbedding:
    features: np.ndarray  # (H_f, W_f, D_f)
    source: str           # "learned-patch" | "file"

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 3 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise VaeConfigError(f"frame features must be (H_f, W_f, D_f), got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise VaeConfigError("frame features must be finite")
        object.__setattr__(self, "features", feats)


@dataclass(frozen=True)
class Posterior:
    mean: np.ndarray    # (T_z, H, W, D)
    logvar: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        logvar = np.asarray(self.logvar, dtype=np.float64)
        if mean.shape != logvar.shape:
            raise VaeConfigError(f"mean/logvar shape mismatch: {mean.shape} vs {logvar.shape}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(logvar))):
            raise VaeConfigError("posterior parameters must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "logvar", logvar)


@dataclass(frozen=True)
class LatentGrid:
    z: np.ndarray       # (T_z, H, W, D)
    config: dict

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        if not np.all(np.isfinite(z)):
            raise VaeConfigError("latent grid must be finite")
        object.__setattr__(self, "z", z)


def kl_divergence(p: Posterior) -> float:
    """Closed-form KL(q || N(0, I)), summed over all latent coordinates."""
    mu, logvar = p.mean, p.logvar
    return float(0.5 * np.sum(mu ** 2 + np.exp(logvar) - 1.0 - logvar))


def reparameterize(p: Posterior, seed: int) -> LatentGrid:
    """z = mean + exp(logvar / 2) * eps with eps ~ N(0, I) keyed by seed."""
    eps = np.random.default_rng(seed).standard_normal(p.mean.shape)
    z = p.mean + np.exp(0.5 * p.logvar) * eps
    return LatentGrid(z=z, config={"shape": list(p.mean.shape)})


# ---------------------------------------------------------------------------
# torch model


class FramePatchEncoder(nn.Module):
    """Non-overlapping patches of a square grayscale raster -> feature grid."""

    def __init__(self, patch_size: int, frame_dim: int):
        super().__init__()
        self.patch_size = patch_size
        self.proj = nn.Linear(patch_size * patch_size, frame_dim)

    def forward(self, raster: torch.Tensor) -> torch.Tensor:
        # raster [B, S, S] -> [B, S/P, S/P, frame_dim]
        if raster.dim() != 3 or raster.shape[1] != raster.shape[2]:
            raise VaeConfigError(f"raster must be square [B, S, S], got {tuple(raster.shape)}")
        S = raster.shape[1]
        P = self.patch_size
        if S % P != 0:
            raise VaeConfigError(f"raster size {S} not divisible by patch size {P}")
        g = S // P
        x = raster.reshape(-1, g, P, g, P).permute(0, 1, 3, 2, 4).reshape(-1, g, g, P * P)
        return self.proj(x - 0.5)


class _EncoderLayer(nn.Module):
    def __init__(self, cfg: AttentionConfig, with_cross: bool, spatial_bias: bool):
        super().__init__()
        self.sa = SelfAttentionBlock(cfg, spatial_bias=spatial_bias)
        self.ca = CrossAttentionBlock(cfg, spatial_bias=spatial_bias) if with_cross else None
        self.ff = FeedForward(cfg)

    def forward(self, x, angles, pos, frame_tokens, frame_angles, frame_pos):
        x = self.sa(x, angles, pos=pos)
        if self.ca is not None:
            x = self.ca(x, frame_tokens, angles_q=angles, angles_k=frame_angles,
                        pos_q=pos, pos_k=frame_pos)
        return self.ff(x)


class _DecoderLayer(nn.Module):
    """Cross-attention to the latent grid and the start frame, then FFN.

    Query tokens never attend to each other, so decoding is independent per
    query and permutation-equivariant by construction.
    """

    def __init__(self, cfg: AttentionConfig, spatial_bias: bool):
        super().__init__()
        self.ca_z = CrossAttentionBlock(cfg, spatial_bias=spatial_bias)
        self.ca_f = CrossAttentionBlock(cfg, spatial_bias=spatial_bias)
        self.ff = FeedForward(cfg)

    def forward(self, x, angles, pos, z_tokens, z_angles, z_pos, frame_tokens,
                frame_angles, frame_pos):
        x = self.ca_z(x, z_tokens, angles_q=angles, angles_k=z_angles, pos_q=pos, pos_k=z_pos)
        x = self.ca_f(x, frame_tokens, angles_q=angles, angles_k=frame_angles,
                      pos_q=pos, pos_k=frame_pos)
        return self.ff(x)


def _coord_mlp(in_dim: int, d_model: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(in_dim, d_model), nn.SiLU(), nn.Linear(d_model, d_model))


QUARTER = 0.25


class VaeModel(nn.Module):
    """Stage-1 trajectory autoencoder (torch core + numpy-facing entry points)."""

    def __init__(self, cfg: VaeConfig, seed: int = 0):
        super().__init__()
        torch.manual_seed(derive_seed(seed, "vae-init"))
        self.cfg = cfg
        d = cfg.nn.d_model
        dk = cfg.nn.head_dim
        feat = 2 * cfg.fourier.width_per_scalar  # x and y components

        self.fourier = FourierFeatures(cfg.fourier)
        self.token_mlp = _coord_mlp(feat, d)
        # query content also Fourier-embeds the timestep: with a cross-attention-only
        # decoder the FFN path needs direct t features, not just rotary phase
        self.query_mlp = _coord_mlp(feat + cfg.fourier.width_per_scalar, d)
        self.latent_seed = nn.Parameter(torch.randn(d) * 0.02)
        self.frame_patch = FramePatchEncoder(cfg.patch_size, cfg.frame_dim)
        self.frame_proj = nn.Linear(cfg.frame_dim, d)
        self.z_proj = nn.Linear(cfg.latent_dim, d)

        self.rope_traj = RopeSpec(dk, (("x0", QUARTER), ("y0", QUARTER), ("t", QUARTER), ("empty", QUARTER)),
                                  base=cfg.rope_base)
        if cfg.t_z > 1:
            self.rope_latent = RopeSpec(dk, (("tz", QUARTER), ("h", QUARTER), ("w", QUARTER), ("empty", QUARTER)),
                                        base=cfg.rope_base)
        else:
            self.rope_latent = RopeSpec(dk, (("h", QUARTER), ("w", QUARTER), ("empty", 0.5)), base=cfg.rope_base)
        self.rope_frame = RopeSpec(dk, (("h", QUARTER), ("w", QUARTER), ("empty", 0.5)), base=cfg.rope_base)

        self.enc_layers = nn.ModuleList(
            _EncoderLayer(cfg.nn, with_cross=(i % 2 == 1), spatial_bias=cfg.spatial_bias)
            for i in range(cfg.nn.depth))
        self.post_norm = RMSNorm(d, cfg.nn.norm_eps)
        self.post_head = nn.Linear(d, 2 * cfg.latent_dim)
        self.dec_layers = nn.ModuleList(
            _DecoderLayer(cfg.nn, spatial_bias=cfg.spatial_bias) for _ in range(cfg.nn.depth))
        self.out_norm = RMSNorm(d, cfg.nn.norm_eps)
        self.out_head = nn.Linear(d, 2)
        # small but non-zero posterior weights: a dead-zero latent at init makes
        # the decoder ignore z for a long time; quiet logvar keeps early noise low
        nn.init.normal_(self.post_head.weight, std=0.05)
        with torch.no_grad():
            self.post_head.bias[:cfg.latent_dim] = 0.0
            self.post_head.bias[cfg.latent_dim:] = -4.0

        self._decode_chunk = 8192

    # -- positional helpers -------------------------------------------------

    def _latent_positions(self, dtype, device) -> torch.Tensor:
        cfg = self.cfg
        tz = torch.arange(cfg.t_z, dtype=dtype, device=device)
        hh = torch.arange(cfg.grid_h, dtype=dtype, device=device)
        ww = torch.arange(cfg.grid_w, dtype=dtype, device=device)
        grid = torch.cartesian_prod(tz, hh, ww)  # [L, 3] in (tz, h, w) order
        if cfg.t_z > 1:
            return grid
        return grid[:, 1:]

    def _frame_state(self, frame_feats: torch.Tensor):
        # frame_feats [B, Hf, Wf, Df] -> tokens [B, F, d], angles [B, F, dk/2], centers [B, F, 2]
        if frame_feats.dim() != 4 or frame_feats.shape[-1] != self.cfg.frame_dim:
            raise VaeConfigError(
                f"frame features must be [B, Hf, Wf, {self.cfg.frame_dim}], got {tuple(frame_feats.shape)}")
        B, Hf, Wf, _ = frame_feats.shape
        tokens = self.frame_proj(frame_feats.reshape(B, Hf * Wf, -1))
        hh = torch.arange(Hf, dtype=frame_feats.dtype, device=frame_feats.device)
        ww = torch.arange(Wf, dtype=frame_feats.dtype, device=frame_feats.device)
        pos = torch.cartesian_prod(hh, ww)
        ang = rope_angles(self.rope_frame, pos).expand(B, -1, -1)
        centers = torch.stack([-1.0 + (pos[:, 1] + 0.5) * 2.0 / Wf,
                               -1.0 + (pos[:, 0] + 0.5) * 2.0 / Hf], dim=-1)
        return tokens, ang, centers.expand(B, -1, -1)

    def _latent_centers(self, dtype, device) -> torch.Tensor:
        cfg = self.cfg
        grid = self._latent_positions(dtype, device)
        hh = grid[:, -2]
        ww = grid[:, -1]
        return torch.stack([-1.0 + (ww + 0.5) * 2.0 / cfg.grid_w,
                            -1.0 + (hh + 0.5) * 2.0 / cfg.grid_h], dim=-1)

    def _track_token_state(self, tracks: torch.Tensor, mlp: nn.Module):
        # tracks [B, N, T, 2] -> tokens [B, N*T, d], angles [B, N*T, dk/2]
        B, N, T, _ = tracks.shape
        content = mlp(self.fourier(tracks)).reshape(B, N * T, -1)
        starts = tracks[:, :, 0, :]  # [B, N, 2]
        t_idx = torch.arange(T, dtype=tracks.dtype, device=tracks.device)
        pos = torch.cat([
            starts[:, :, None, :].expand(B, N, T, 2),
            t_idx[None, None, :, None].expand(B, N, T, 1),
        ], dim=-1).reshape(B, N * T, 3)
        return content, rope_angles(self.rope_traj, pos)

    # -- torch-facing core ---------------------------------------------------

    def encode_batch(self, tracks: torch.Tensor, frame_feats: torch.Tensor):
        """tracks [B, N, T, 2] + frame feats -> posterior (mean, logvar) tensors."""
        cfg = self.cfg
        B, N, T, _ = tracks.shape
        if T != cfg.horizon:
            raise VaeConfigError(f"track horizon {T} != configured horizon {cfg.horizon}")
        L = cfg.latent_tokens
        if N * T + L > cfg.max_encoder_tokens:
            raise CapacityError(f"{N * T + L} encoder tokens exceed budget {cfg.max_encoder_tokens}")

        tok, ang = self._track_token_state(tracks, self.token_mlp)
        lat_pos = self._latent_positions(tracks.dtype, tracks.device)
        lat_ang = rope_angles(self.rope_latent, lat_pos).expand(B, -1, -1)
        lat_tok = self.latent_seed.to(tracks.dtype).expand(B, L, -1)
        frame_tok, frame_ang, frame_pos = self._frame_state(frame_feats)

        starts2d = tracks[:, :, 0, :][:, :, None, :].expand(B, N, T, 2).reshape(B, N * T, 2)
        lat_centers = self._latent_centers(tracks.dtype, tracks.device).expand(B, L, 2)
        seq_pos = torch.cat([starts2d, lat_centers], dim=1)

        seq = torch.cat([tok, lat_tok], dim=1)
        angles = torch.cat([ang, lat_ang], dim=1)
        for layer in self.enc_layers:
            seq = layer(seq, angles, seq_pos, frame_tok, frame_ang, frame_pos)
        stats = self.post_head(self.post_norm(seq[:, N * T:, :]))  # [B, L, 2D]
        mean, logvar = stats.chunk(2, dim=-1)
        shape = (B, cfg.t_z, cfg.grid_h, cfg.grid_w, cfg.latent_dim)
        return mean.reshape(shape), logvar.reshape(shape)

    def decode_batch(self, queries: torch.Tensor, z: torch.Tensor, frame_feats: torch.Tensor,
                     time_indices=None):
        """queries [B, Q, 2] + latent z [B, T_z, H, W, D] -> tracks [B, Q, T, 2].

        ``time_indices`` restricts decoding to a subset of timesteps (used for
        stochastic supervision during training).
        """
        cfg = self.cfg
        if queries.dim() != 3 or queries.shape[1] == 0:
            raise VaeConfigError("decode needs a non-empty [B, Q, 2] query batch")
        B, Q, _ = queries.shape
        z_tok = self.z_proj(z.reshape(B, cfg.latent_tokens, cfg.latent_dim))
        lat_pos = self._latent_positions(queries.dtype, queries.device)
        z_ang = rope_angles(self.rope_latent, lat_pos).expand(B, -1, -1)
        z_pos = self._latent_centers(queries.dtype, queries.device).expand(B, -1, -1)
        frame_tok, frame_ang, frame_pos = self._frame_state(frame_feats)

        if time_indices is None:
            t_idx = torch.arange(cfg.horizon, dtype=queries.dtype, device=queries.device)
        else:
            t_idx = torch.as_tensor(np.asarray(time_indices), dtype=queries.dtype,
                                    device=queries.device)
        T = t_idx.shape[0]
        pos = torch.cat([
            queries[:, :, None, :].expand(B, Q, T, 2),
            t_idx[None, None, :, None].expand(B, Q, T, 1),
        ], dim=-1).reshape(B, Q * T, 3)
        content_in = torch.cat([pos[..., :2], pos[..., 2:] / cfg.horizon], dim=-1)
        tokens = self.query_mlp(self.fourier(content_in))
        angles = rope_angles(self.rope_traj, pos)

        outs = []
        chunk = max(T, (self._decode_chunk // T) * T)  # whole trajectories per chunk
        for lo in range(0, Q * T, chunk):
            hi = min(lo + chunk, Q * T)
            x = tokens[:, lo:hi]
            a = angles[:, lo:hi]
            qp = pos[:, lo:hi, :2]
            for layer in self.dec_layers:
                x = layer(x, a, qp, z_tok, z_ang, z_pos, frame_tok, frame_ang, frame_pos)
            outs.append(self.out_head(self.out_norm(x)))
        return torch.cat(outs, dim=1).reshape(B, Q, T, 2)

    def frame_features(self, raster: torch.Tensor) -> torch.Tensor:
        return self.frame_patch(raster)

    # -- numpy-facing entry points -------------------------------------------

    def _dtype(self):
        return next(self.parameters()).dtype

    def encode_frame(self, raster: np.ndarray | None = None, path=None) -> FrameEmbedding:
        """Learned-patch embedding of a raster, or verbatim load of a feature file."""
        if (raster is None) == (path is None):
            raise VaeConfigError("encode_frame takes exactly one of raster or path")
        if path is not None:
            feats = np.load(path)
            if feats.ndim != 3:
                raise VaeConfigError(f"{path}: feature file must be (H_f, W_f, D_f), got {feats.shape}")
            if feats.shape[-1] != self.cfg.frame_dim:
                raise VaeConfigError(
                    f"{path}: feature channels {feats.shape[-1]} != configured {self.cfg.frame_dim}")
            return FrameEmbedding(features=feats.astype(np.float64), source="file")
        arr = np.asarray(raster, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise VaeConfigError(f"raster must be square (S, S), got {arr.shape}")
        if arr.shape[0] < 32:
            raise VaeConfigError("raster must be at least 32 px")
        with torch.no_grad():
            t = torch.from_numpy(arr[None]).to(self._dtype())
            feats = self.frame_patch(t)[0].double().numpy()
        return FrameEmbedding(features=feats, source="learned-patch")

    def _frame_tensor(self, f0: FrameEmbedding) -> torch.Tensor:
        return torch.from_numpy(f0.features[None]).to(self._dtype())

    def encode(self, ts: TrackSet, f0: FrameEmbedding) -> Posterior:
        if ts.is_empty:
            raise VaeConfigError("cannot encode an empty TrackSet")
        tracks = torch.from_numpy(ts.as_array()[None]).to(self._dtype())
        with torch.no_grad():
            mean, logvar = self.encode_batch(tracks, self._frame_tensor(f0))
        return Posterior(mean=mean[0].double().numpy(), logvar=logvar[0].double().numpy())

    def decode(self, queries: np.ndarray, z: LatentGrid, f0: FrameEmbedding) -> np.ndarray:
        queries = np.asarray(queries, dtype=np.float64)
        if queries.ndim != 2 or queries.shape[0] == 0 or queries.shape[1] != 2:
            raise VaeConfigError(f"queries must be a non-empty (Q, 2) array, got {queries.shape}")
        q = torch.from_numpy(queries[None]).to(self._dtype())
        zt = torch.from_numpy(z.z[None]).to(self._dtype())
        with torch.no_grad():
            out = self.decode_batch(q, zt, self._frame_tensor(f0))
        return out[0].double().numpy()


# ---------------------------------------------------------------------------
# objective


def vae_loss(model: VaeModel, tracks: torch.Tensor, frame_feats: torch.Tensor, seed: int,
             time_subset: int | None = None) -> dict:
    """Three-term objective on one batch.

    tracks [B, N, T, 2]; the N tracks are split per cfg.mae_fraction into an
    encoder set and a held-out set (disjoint). Returns tensors keyed
    total/recon/masked/kl. ``time_subset`` supervises a random subset of
    timesteps (rescaled to keep the expectation equal to the full-T loss);
    None means the exact objective.
    """
    cfg = model.cfg
    B, N, T, _ = tracks.shape
    n_mae = int(round(cfg.mae_fraction * N))
    n_mae = min(max(n_mae, 1), N - 1)
    n_enc = N - n_mae
    if n_enc < 1 or n_mae < 1:
        raise VaeConfigError(f"mae split needs both sides non-empty (N={N}, mae_fraction={cfg.mae_fraction})")

    rng = np.random.default_rng(derive_seed(seed, "mae-split"))
    perms = np.stack([rng.permutation(N) for _ in range(B)])
    order = torch.from_numpy(perms).to(tracks.device)
    shuffled = torch.take_along_dim(tracks, order[:, :, None, None], dim=1)
    enc_tracks = shuffled[:, :n_enc]

    mean, logvar = model.encode_batch(enc_tracks, frame_feats)
    eps = torch.from_numpy(
        np.random.default_rng(derive_seed(seed, "reparam")).standard_normal(tuple(mean.shape))
    ).to(mean.dtype)
    z = mean + torch.exp(0.5 * logvar) * eps

    starts = shuffled[:, :, 0, :]  # [B, N, 2]
    target = shuffled
    scale = 1.0
    if time_subset is not None and time_subset < T:
        keep = np.sort(np.random.default_rng(derive_seed(seed, "t-subset")).choice(
            T, size=time_subset, replace=False))
        pred = model.decode_batch(starts, z, frame_feats, time_indices=keep)
        target = shuffled[:, :, keep]
        scale = T / time_subset
    else:
        pred = model.decode_batch(starts, z, frame_feats)
    l1 = (pred - target).abs().sum(dim=(2, 3)) * scale  # [B, N] per-track L1 over (T, 2)
    recon = l1[:, :n_enc].mean(dim=1).mean()
    masked = l1[:, n_enc:].mean(dim=1).mean()
    kl = 0.5 * (mean.pow(2) + logvar.exp() - 1.0 - logvar).sum(dim=(1, 2, 3, 4)).mean()
    total = recon + masked + cfg.kl_weight * kl
    return {"total": total, "recon": recon, "masked": masked, "kl": kl}


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class OptimConfig:
    steps: int = 500
    batch_size: int = 8
    lr: float = 1.0e-4
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.01
    warmup: int = 50
    grad_clip: float = 1.0
    lr_schedule: str = "constant"  # "constant" | "cosine"

    def __post_init__(self):
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule '{self.lr_schedule}'")

    def lr_at(self, step: int) -> float:
        lr = self.lr * min(1.0, (step + 1) / max(1, self.warmup))
        if self.lr_schedule == "cosine":
            lr *= 0.1 + 0.9 * 0.5 * (1.0 + math.cos(math.pi * step / max(1, self.steps)))
        return lr

    def to_dict(self) -> dict:
        d = {"steps": self.steps, "batch_size": self.batch_size, "lr": self.lr,
             "betas": list(self.betas), "weight_decay": self.weight_decay,
             "warmup": self.warmup, "grad_clip": self.grad_clip,
             "lr_schedule": self.lr_schedule}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OptimConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


def _scenario_tensors(scenarios, dtype=torch.float32):
    tracks = [torch.from_numpy(s.tracks.as_array()).to(dtype) for s in scenarios]
    rasters = [torch.from_numpy(s.raster).to(dtype) for s in scenarios]
    return tracks, rasters


def train_vae(scenarios, cfg: VaeConfig, opt_cfg: OptimConfig, seed: int,
              out_dir=None, *, tracks_per_scene: int = 16, time_subset: int | None = None,
              log_every: int = 25):
    """Train on a list of synthkin scenarios; returns (model, log_rows).

    Deterministic per seed. Writes loss_log.csv and vae.ckpt.npz to out_dir
    when given. Aborts with a diagnostic if the loss turns non-finite.
    """
    if not scenarios:
        raise VaeConfigError("training dataset is empty")
    model = VaeModel(cfg, seed=seed)
    all_tracks, all_rasters = _scenario_tensors(scenarios)
    n_min = min(t.shape[0] for t in all_tracks)
    n_use = min(tracks_per_scene, n_min)
    if n_use < 2:
        raise VaeConfigError("need at least 2 tracks per scenario for the mae split")

    opt = torch.optim.AdamW(model.parameters(), lr=opt_cfg.lr, betas=opt_cfg.betas,
                            weight_decay=opt_cfg.weight_decay)
    rows = []
    order_rng = np.random.default_rng(derive_seed(seed, "batch-order"))
    for step in range(opt_cfg.steps):
        step_seed = derive_seed(seed, "vae-step", step)
        idx = order_rng.choice(len(scenarios), size=min(opt_cfg.batch_size, len(scenarios)), replace=False)
        pick_rng = np.random.default_rng(step_seed)
        batch_tracks = []
        batch_raster = []
        for i in idx:
            sel = pick_rng.choice(all_tracks[i].shape[0], size=n_use, replace=False)
            batch_tracks.append(all_tracks[i][sel])
            batch_raster.append(all_rasters[i])
        tracks = torch.stack(batch_tracks)
        feats = model.frame_features(torch.stack(batch_raster))

        for group in opt.param_groups:
            group["lr"] = opt_cfg.lr_at(step)
        losses = vae_loss(model, tracks, feats, step_seed, time_subset=time_subset)
        if not torch.isfinite(losses["total"]):
            raise RuntimeError(f"vae training diverged at step {step}: total={losses['total'].item()}")
        opt.zero_grad()
        losses["total"].backward()
        if opt_cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), opt_cfg.grad_clip)
        opt.step()
        if step % log_every == 0 or step == opt_cfg.steps - 1:
            rows.append({"step": step, "total": losses["total"].item(),
                         "recon": losses["recon"].item(), "masked": losses["masked"].item(),
                         "kl": losses["kl"].item()})

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "loss_log.csv", "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["step", "total", "recon", "masked", "kl"])
            writer.writeheader()
            writer.writerows(rows)
        save_vae(model, out / "vae.ckpt.npz")
    return model, rows


# ---------------------------------------------------------------------------
# checkpoints


def save_vae(model: VaeModel, path) -> str:
    return save_checkpoint(path, state_dict_arrays(model),
                           {"vae": model.cfg.to_dict()}, kind="motion-vae")


def load_vae(path) -> tuple[VaeModel, str]:
    ckpt = load_checkpoint(path)
    if ckpt.kind != "motion-vae":
        raise VaeConfigError(f"{path}: checkpoint kind '{ckpt.kind}' is not a motion-vae")
    model = VaeModel(VaeConfig.from_dict(ckpt.config["vae"]))
    load_state_dict_arrays(model, ckpt.arrays)
    model.eval()
    return model, ckpt.content_hash


def vae_hash(model: VaeModel) -> str:
    return content_hash(state_dict_arrays(model), {"vae": model.cfg.to_dict()})
