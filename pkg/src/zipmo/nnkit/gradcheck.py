"""Analytic-vs-finite-difference gradient verification."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch


def grad_check(loss_fn: Callable[[], torch.Tensor], params: Sequence[torch.Tensor], *,
               eps: float = 1e-5, n_coords: int = 120, seed: int = 0) -> float:
    """Max relative error of autograd gradients vs central differences.

    ``loss_fn`` must be a deterministic closure over ``params`` evaluated in
    double precision; ``eps`` must lie in [1e-6, 1e-4] by contract. Samples
    ``n_coords`` scalar coordinates across all parameter tensors.
    """
    if not (1e-6 <= eps <= 1e-4):
        raise ValueError(f"eps must be in [1e-6, 1e-4], got {eps}")
    params = [p for p in params if p.requires_grad]
    if not params:
        raise ValueError("no trainable parameters supplied")
    for p in params:
        if p.dtype != torch.float64:
            raise ValueError("grad_check requires double-precision parameters")

    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]

    sizes = np.array([p.numel() for p in params], dtype=np.float64)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_coords):
        pi = int(rng.choice(len(params), p=sizes / sizes.sum()))
        flat = params[pi].view(-1)
        ci = int(rng.integers(flat.numel()))
        orig = flat[ci].item()
        with torch.no_grad():
            flat[ci] = orig + eps
        f_plus = loss_fn().item()
        with torch.no_grad():
            flat[ci] = orig - eps
        f_minus = loss_fn().item()
        with torch.no_grad():
            flat[ci] = orig
        fd = (f_plus - f_minus) / (2.0 * eps)
        ga = grads[pi].view(-1)[ci].item()
        denom = max(abs(ga), abs(fd), 1e-6)
        worst = max(worst, abs(ga - fd) / denom)
    return worst
