"""Random Fourier features for scalar coordinates."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import torch
from torch import nn


@dataclass(frozen=True)
class FourierSpec:
    """Frozen bank of random frequencies drawn from N(0, sigma^2).

    Each input scalar maps to 2 * n_freq features: [sin(2 pi f v), cos(2 pi f v)].
    """

    n_freq: int = 16
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_freq < 1:
            raise ValueError("n_freq must be >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")

    @cached_property
    def frequencies(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.normal(0.0, self.sigma, size=self.n_freq)

    @property
    def width_per_scalar(self) -> int:
        return 2 * self.n_freq

    def to_dict(self) -> dict:
        return {"n_freq": self.n_freq, "sigma": self.sigma, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "FourierSpec":
        return cls(**d)


def fourier_embed(v, spec: FourierSpec) -> np.ndarray:
    """Embed scalars (last axis = input components) -> [..., k * 2 * n_freq].

    Per component the layout is all sines followed by all cosines.
    """
    arr = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("fourier_embed requires finite inputs")
    scalar = arr.ndim == 0
    if scalar:
        arr = arr.reshape(1)
    phase = 2.0 * np.pi * arr[..., :, None] * spec.frequencies  # [..., k, n_freq]
    out = np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)  # [..., k, 2*n_freq]
    out = out.reshape(*arr.shape[:-1], arr.shape[-1] * spec.width_per_scalar)
    return out


class FourierFeatures(nn.Module):
    """Torch twin of :func:`fourier_embed`, sharing the spec's frequency bank."""

    def __init__(self, spec: FourierSpec):
        super().__init__()
        self.spec = spec
        self.register_buffer("freq", torch.from_numpy(spec.frequencies.copy()).float())

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        phase = 2.0 * torch.pi * v.unsqueeze(-1) * self.freq.to(v.dtype)
        out = torch.cat([torch.sin(phase), torch.cos(phase)], dim=-1)
        return out.reshape(*v.shape[:-1], v.shape[-1] * self.spec.width_per_scalar)
