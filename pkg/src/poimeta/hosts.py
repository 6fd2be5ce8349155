"""Minimal host forecasters and the adapter that splices in the block.

Two structurally different hosts: a per-region temporal MLP that ignores
the graph, and a Chebyshev graph-conv host mixing neighboring regions
over the geographic adjacency.  Both emit pre-head features of width d;
a 1x1 baseline head turns those into predictions when the block is not
attached.
"""

from __future__ import annotations

import torch
from torch import nn

from .metablock import PoiMetaBlock


class TemporalLinearHost(nn.Module):
    """Two-layer map over each region's flattened window; graph-blind."""

    kind = "temporal_linear"

    def __init__(self, t_in: int, in_dim: int, d: int = 32):
        super().__init__()
        self.t_in = t_in
        self.in_dim = in_dim
        self.d = d
        self.fc1 = nn.Linear(t_in * in_dim, d).double()
        self.fc2 = nn.Linear(d, t_in * d).double()

    def forward(self, x: torch.Tensor,
                geo_basis: torch.Tensor | None = None) -> torch.Tensor:
        *lead, t, c = x.shape
        if t != self.t_in or c != self.in_dim:
            raise ValueError(f"expected window ({self.t_in}, {self.in_dim}), "
                             f"got ({t}, {c})")
        h = torch.relu(self.fc1(x.reshape(*lead, t * c)))
        return torch.relu(self.fc2(h)).reshape(*lead, t, self.d)


class GcnTemporalHost(nn.Module):
    """One Chebyshev graph-conv layer, then a per-position mixing layer."""

    kind = "gcn_temporal"

    def __init__(self, t_in: int, in_dim: int, d: int = 32, k: int = 3):
        super().__init__()
        self.t_in = t_in
        self.in_dim = in_dim
        self.d = d
        self.k = k
        self.theta = nn.Parameter(torch.zeros(k, in_dim, d,
                                              dtype=torch.float64))
        self.mix = nn.Linear(d, d).double()

    def forward(self, x: torch.Tensor,
                geo_basis: torch.Tensor) -> torch.Tensor:
        if geo_basis.shape[0] != self.k:
            raise ValueError(f"expected {self.k} basis matrices, "
                             f"got {geo_basis.shape[0]}")
        if geo_basis.shape[1] != x.shape[-3]:
            raise ValueError(
                f"graph regions {geo_basis.shape[1]} != input regions "
                f"{x.shape[-3]}")
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        conv = torch.zeros(*x.shape[:-1], self.d, dtype=x.dtype)
        for k in range(self.k):
            conv = conv + torch.einsum("nm,bmtc->bntc", geo_basis[k],
                                       x) @ self.theta[k]
        out = torch.relu(self.mix(conv))
        return out.squeeze(0) if squeeze else out


class BaselineHead(nn.Module):
    """Per-position 1x1 map from host features to data channels."""

    def __init__(self, d: int, out_dim: int = 1):
        super().__init__()
        self.proj = nn.Linear(d, out_dim).double()

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.proj(features)


class HostOnlyModel(nn.Module):
    """Host plus baseline head: the comparison point for the block."""

    def __init__(self, host: nn.Module, out_dim: int = 1):
        super().__init__()
        self.host = host
        self.head = BaselineHead(host.d, out_dim)

    def forward(self, x: torch.Tensor,
                geo_basis: torch.Tensor | None = None) -> torch.Tensor:
        return self.head(self.host(x, geo_basis))


class ComposedModel(nn.Module):
    """Host features feed the block; the host's own head is bypassed."""

    def __init__(self, host: nn.Module, block: PoiMetaBlock):
        super().__init__()
        if host.d != block.cfg.d:
            raise ValueError(
                f"host hidden width {host.d} != block width {block.cfg.d}")
        self.host = host
        self.block = block

    def forward(self, x: torch.Tensor, e_raw: torch.Tensor,
                p: torch.Tensor, basis: torch.Tensor,
                geo_basis: torch.Tensor | None = None) -> torch.Tensor:
        return self.block(self.host(x, geo_basis), e_raw, p, basis)


def integrate(host: nn.Module, block: PoiMetaBlock) -> ComposedModel:
    return ComposedModel(host, block)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
