"""Partial multi-axis rotary position embeddings.

A RopeSpec splits the head dimension into ordered blocks, one per position
axis plus an identity ("empty") block that is never rotated. Within a block,
consecutive dimension pairs rotate by angle position * theta_p with a
geometric frequency ladder theta_p = base^(-p / n_pairs).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

IDENTITY_AXIS = "empty"


class RopeLayoutError(ValueError):
    pass


@dataclass(frozen=True)
class RopeSpec:
    head_dim: int
    axis_layout: tuple[tuple[str, float], ...]
    base: float = 1.0e4

    def __post_init__(self):
        if self.head_dim % 8 != 0:
            raise RopeLayoutError(f"head_dim must be a multiple of 8, got {self.head_dim}")
        names = [n for n, _ in self.axis_layout]
        if IDENTITY_AXIS not in names:
            raise RopeLayoutError("axis_layout must include an 'empty' identity block")
        fracs = [f for _, f in self.axis_layout]
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise RopeLayoutError(f"axis fractions must sum to 1, got {sum(fracs)}")
        if dict(self.axis_layout)[IDENTITY_AXIS] <= 0:
            raise RopeLayoutError("identity block fraction must be > 0")
        for name, size in zip(names, self.block_sizes):
            if size <= 0 or size % 2 != 0:
                raise RopeLayoutError(f"block '{name}' must span a positive even width, got {size}")

    @property
    def block_sizes(self) -> tuple[int, ...]:
        sizes = [int(round(f * self.head_dim)) for _, f in self.axis_layout]
        sizes[-1] = self.head_dim - sum(sizes[:-1])
        return tuple(sizes)

    @property
    def axes(self) -> tuple[str, ...]:
        """Non-identity axis names, in layout order."""
        return tuple(n for n, _ in self.axis_layout if n != IDENTITY_AXIS)


def rope_angles(spec: RopeSpec, positions: torch.Tensor) -> torch.Tensor:
    """Per-pair rotation angles for a token batch.

    positions: [..., n_tokens, n_axes] with axes ordered as spec.axes.
    Returns [..., n_tokens, head_dim // 2]; identity pairs get angle 0.
    """
    n_axes = len(spec.axes)
    if positions.shape[-1] != n_axes:
        raise RopeLayoutError(
            f"positions must supply {n_axes} axis coordinates {spec.axes}, got {positions.shape[-1]}")
    chunks = []
    axis_idx = 0
    for (name, _), size in zip(spec.axis_layout, spec.block_sizes):
        n_pairs = size // 2
        if name == IDENTITY_AXIS:
            chunks.append(positions.new_zeros(*positions.shape[:-1], n_pairs))
        else:
            theta = spec.base ** (-torch.arange(n_pairs, dtype=positions.dtype, device=positions.device) / n_pairs)
            chunks.append(positions[..., axis_idx:axis_idx + 1] * theta)
            axis_idx += 1
    return torch.cat(chunks, dim=-1)


def rope_apply(x: torch.Tensor, angles: torch.Tensor) -> torch.Tensor:
    """Rotate consecutive dimension pairs of x by the given per-pair angles.

    x: [..., n_tokens, head_dim] or [..., n_tokens, n_heads, head_dim];
    angles: [..., n_tokens, head_dim // 2]. Norm-preserving.
    """
    if x.shape[-1] != 2 * angles.shape[-1]:
        raise RopeLayoutError(f"angles cover {2 * angles.shape[-1]} dims, x has {x.shape[-1]}")
    if x.dim() == angles.dim() + 1:
        angles = angles.unsqueeze(-2)  # broadcast over heads
    cos, sin = torch.cos(angles), torch.sin(angles)
    x1, x2 = x[..., 0::2], x[..., 1::2]
    y1 = x1 * cos - x2 * sin
    y2 = x1 * sin + x2 * cos
    return torch.stack([y1, y2], dim=-1).flatten(-2)
