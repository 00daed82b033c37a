"""Transformer building blocks: RMSNorm, SwiGLU, rotary attention."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .rope import rope_apply


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int = 128
    n_heads: int = 4
    depth: int = 4
    ffn_expansion: int = 3
    norm_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ShapeError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {"d_model": self.d_model, "n_heads": self.n_heads, "depth": self.depth,
                "ffn_expansion": self.ffn_expansion, "norm_eps": self.norm_eps}

    @classmethod
    def from_dict(cls, d: dict) -> "AttentionConfig":
        return cls(**d)


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))

    def forward(self, x):
        rms = torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps)
        return x * rms * self.weight


class SwiGLU(nn.Module):
    def __init__(self, dim: int, expansion: int = 3):
        super().__init__()
        hidden = expansion * dim
        self.gate = nn.Linear(dim, hidden, bias=False)
        self.up = nn.Linear(dim, hidden, bias=False)
        self.down = nn.Linear(hidden, dim, bias=False)

    def forward(self, x):
        return self.down(torch.nn.functional.silu(self.gate(x)) * self.up(x))


class Attention(nn.Module):
    """Multi-head attention with optional per-side rotary angles.

    ``angles_q`` / ``angles_k`` rotate queries / keys in their own positional
    frames. ``key_mask`` marks valid context tokens per batch element; rows
    whose context is fully masked contribute a zero attention output.

    ``spatial_bias=True`` adds a learnable per-head locality prior: pass
    ``pos_q`` / ``pos_k`` ([..., n, 2] shared coordinates) and scores receive
    -softplus(scale_h) * squared distance. Heads can learn the scale down to
    recover global attention.
    """

    def __init__(self, d_model: int, n_heads: int, spatial_bias: bool = False):
        super().__init__()
        if d_model % n_heads != 0:
            raise ShapeError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.wq = nn.Linear(d_model, d_model, bias=False)
        self.wk = nn.Linear(d_model, d_model, bias=False)
        self.wv = nn.Linear(d_model, d_model, bias=False)
        self.wo = nn.Linear(d_model, d_model, bias=False)
        if spatial_bias:
            # geometric spread of locality scales across heads
            init = torch.linspace(0.5, 12.0, n_heads)
            self.bias_scale = nn.Parameter(init)
        else:
            self.bias_scale = None

    def _split(self, x):
        return x.view(*x.shape[:-1], self.n_heads, self.head_dim)

    def forward(self, q_tokens, kv_tokens, *, angles_q=None, angles_k=None,
                key_mask=None, pos_q=None, pos_k=None, return_weights=False):
        if q_tokens.shape[-1] != self.wq.in_features or kv_tokens.shape[-1] != self.wq.in_features:
            raise ShapeError(
                f"token width {q_tokens.shape[-1]}/{kv_tokens.shape[-1]} != model width {self.wq.in_features}")
        q = self._split(self.wq(q_tokens))
        k = self._split(self.wk(kv_tokens))
        v = self._split(self.wv(kv_tokens))
        if angles_q is not None:
            q = rope_apply(q, angles_q)
        if angles_k is not None:
            k = rope_apply(k, angles_k)
        # [..., heads, n_q, n_k]
        scores = torch.einsum("...qhd,...khd->...hqk", q, k) / math.sqrt(self.head_dim)
        if self.bias_scale is not None and pos_q is not None and pos_k is not None:
            d2 = (pos_q.unsqueeze(-2) - pos_k.unsqueeze(-3)).pow(2).sum(-1)  # [..., n_q, n_k]
            scale = torch.nn.functional.softplus(self.bias_scale).to(scores.dtype)
            scores = scores - scale.view(-1, 1, 1) * d2.unsqueeze(-3)
        valid_row = None
        if key_mask is not None:
            valid_row = key_mask.any(dim=-1)  # [...]
            mask = key_mask[..., None, None, :]
            scores = scores.masked_fill(~mask, float("-inf"))
            # fully masked rows: flatten to uniform to keep softmax finite
            scores = torch.where(valid_row[..., None, None, None], scores, torch.zeros_like(scores))
        weights = torch.softmax(scores, dim=-1)
        out = torch.einsum("...hqk,...khd->...qhd", weights, v)
        if valid_row is not None:
            out = out * valid_row[..., None, None, None].to(out.dtype)
        out = self.wo(out.flatten(-2))
        if return_weights:
            return out, weights
        return out


class SelfAttentionBlock(nn.Module):
    def __init__(self, cfg: AttentionConfig, spatial_bias: bool = False):
        super().__init__()
        self.norm = RMSNorm(cfg.d_model, cfg.norm_eps)
        self.attn = Attention(cfg.d_model, cfg.n_heads, spatial_bias=spatial_bias)

    def forward(self, x, angles=None, key_mask=None, pos=None):
        h = self.norm(x)
        return x + self.attn(h, h, angles_q=angles, angles_k=angles, key_mask=key_mask,
                             pos_q=pos, pos_k=pos)


class CrossAttentionBlock(nn.Module):
    def __init__(self, cfg: AttentionConfig, spatial_bias: bool = False):
        super().__init__()
        self.norm_q = RMSNorm(cfg.d_model, cfg.norm_eps)
        self.norm_kv = RMSNorm(cfg.d_model, cfg.norm_eps)
        self.attn = Attention(cfg.d_model, cfg.n_heads, spatial_bias=spatial_bias)

    def forward(self, x, context, angles_q=None, angles_k=None, key_mask=None,
                pos_q=None, pos_k=None):
        return x + self.attn(self.norm_q(x), self.norm_kv(context),
                             angles_q=angles_q, angles_k=angles_k, key_mask=key_mask,
                             pos_q=pos_q, pos_k=pos_k)


class FeedForward(nn.Module):
    def __init__(self, cfg: AttentionConfig):
        super().__init__()
        self.norm = RMSNorm(cfg.d_model, cfg.norm_eps)
        self.ffn = SwiGLU(cfg.d_model, cfg.ffn_expansion)

    def forward(self, x):
        return x + self.ffn(self.norm(x))
