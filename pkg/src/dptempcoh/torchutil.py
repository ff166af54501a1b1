"""Small torch helpers shared across modules."""
from __future__ import annotations

import torch


def first_argmax(t: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Argmax with ties broken by the lowest index, independent of backend."""
    top = t.max(dim=dim, keepdim=True).values
    hit = t == top
    first = (hit.cumsum(dim) == 1) & hit
    return first.to(torch.int64).argmax(dim=dim)


def first_argmin(t: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return first_argmax(-t, dim=dim)


def squared_distances(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Pairwise squared Euclidean distances in float64, (len(a), len(b))."""
    a64 = a.detach().to(torch.float64)
    b64 = b.detach().to(torch.float64)
    d2 = (a64**2).sum(1, keepdim=True) - 2.0 * (a64 @ b64.T) + (b64**2).sum(1)
    return d2.clamp_min_(0.0)
