"""Attention block conditioned on each region's POI profile.

Three stacked ideas: (1) self-attention over the time axis whose queries
and keys carry clock-time embeddings, so scores vary with the hour;
(2) a hypernetwork that turns each region's POI feature row into that
region's private attention matrices; (3) a Chebyshev graph convolution
over the POI-similarity graph, modulated by a learned region-to-region
attention, that smooths the attention output across functionally similar
regions.  A residual path and a 1x1 head map back to the data width.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .temporal import TemporalMLP

LN_EPS = 1e-5


@dataclass
class MetaBlockConfig:
    """Shape and ablation switches for the block.

    d is the incoming feature width (the host's hidden size); d_prime the
    internal attention width; poi_width the POI feature row length (twice
    the category count); out_dim the data channel count.
    """

    d: int
    d_prime: int = 16
    t_in: int = 4
    t_out: int = 4
    poi_width: int = 42
    k: int = 3
    out_dim: int = 1
    use_pg: bool = True       # per-region generated attention matrices
    use_ar: bool = True       # graph-conv refinement stage
    score_norm: bool = True   # layer-norm on attention scores
    scalar_theta: bool = False
    extractor_dim: int = 128
    generator_hidden: int = 256

    def __post_init__(self):
        if self.t_out != self.t_in:
            raise ValueError(
                "target window must equal input window: queries concatenate "
                f"time embeddings with the {self.t_in} traffic steps")
        for name in ("d", "d_prime", "t_in", "poi_width", "k", "out_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


class PoiParamGenerator(nn.Module):
    """Hypernetwork: POI feature row -> per-region (W_q, W_k, W_v).

    A tanh extractor lifts the row to 128 features; a pyramid MLP
    (tanh hidden layer of 256, linear output) emits the packed matrices,
    reshaped row-major in the fixed order W_q, W_k, W_v.
    """

    def __init__(self, cfg: MetaBlockConfig):
        super().__init__()
        d, dp = cfg.d, cfg.d_prime
        self.sizes = (2 * d * dp, 2 * d * dp, d * dp)
        self.shapes = ((2 * d, dp), (2 * d, dp), (d, dp))
        self.extract = nn.Linear(cfg.poi_width, cfg.extractor_dim).double()
        self.hidden = nn.Linear(cfg.extractor_dim,
                                cfg.generator_hidden).double()
        self.emit = nn.Linear(cfg.generator_hidden, sum(self.sizes)).double()

    def forward(self, p: torch.Tensor):
        n = p.shape[0]
        f = torch.tanh(self.extract(p))
        raw = self.emit(torch.tanh(self.hidden(f)))
        parts = torch.split(raw, self.sizes, dim=-1)
        return tuple(part.reshape(n, *shape)
                     for part, shape in zip(parts, self.shapes))


class GraphAttention(nn.Module):
    """Region-to-region attention from POI features (row-stochastic)."""

    def __init__(self, cfg: MetaBlockConfig):
        super().__init__()
        self.lift = nn.Linear(cfg.poi_width, cfg.d).double()
        self.wq = nn.Parameter(torch.zeros(cfg.d, cfg.d,
                                           dtype=torch.float64))
        self.wk = nn.Parameter(torch.zeros(cfg.d, cfg.d,
                                           dtype=torch.float64))

    def forward(self, p: torch.Tensor) -> torch.Tensor:
        lifted = torch.relu(self.lift(p))
        scores = (lifted @ self.wq) @ (lifted @ self.wk).T
        return torch.softmax(scores, dim=-1)


class ChebGraphConv(nn.Module):
    """Spectral filter with attention-modulated basis, no bias.

    Per time step: relu of the sum over k of (T_k had. S_att) Z theta_k.
    theta_k are d'xd' channel mixers; the scalar flag reduces them to one
    multiplier per order, matching the single-channel formula exactly.
    """

    def __init__(self, cfg: MetaBlockConfig):
        super().__init__()
        self.scalar = cfg.scalar_theta
        if self.scalar:
            self.theta = nn.Parameter(torch.zeros(cfg.k,
                                                  dtype=torch.float64))
        else:
            self.theta = nn.Parameter(torch.zeros(
                cfg.k, cfg.d_prime, cfg.d_prime, dtype=torch.float64))

    def forward(self, z: torch.Tensor, basis: torch.Tensor,
                s_att: torch.Tensor) -> torch.Tensor:
        if basis.shape[1] != z.shape[-3]:
            raise ValueError(
                f"basis regions {basis.shape[1]} != signal regions "
                f"{z.shape[-3]}")
        modulated = basis * s_att  # (K, N, N)
        out = torch.zeros_like(z)
        for k in range(basis.shape[0]):
            mixed = torch.einsum("nm,bmtp->bntp", modulated[k], z)
            if self.scalar:
                out = out + self.theta[k] * mixed
            else:
                out = out + mixed @ self.theta[k]
        return torch.relu(out)


class ResidualCombine(nn.Module):
    """layer-norm(relu(conv1x1(original) + processed)) over features."""

    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.proj = nn.Linear(d_in, d_out).double()
        self.norm = nn.LayerNorm(d_out, eps=LN_EPS).double()

    def forward(self, original: torch.Tensor,
                processed: torch.Tensor) -> torch.Tensor:
        return self.norm(torch.relu(self.proj(original) + processed))


class PoiMetaBlock(nn.Module):
    """The full block: host features in, per-channel predictions out.

    forward expects x (B, N, T, d), the one-hot time rows e_raw
    (B or broadcast, T+T', 103), the POI feature matrix p (N, 2C), and a
    Chebyshev basis stack (K, N, N) from the POI-similarity graph.
    Generated parameters are recomputed every pass so the hypernetwork
    trains; freeze_generated(p) caches them for inference on a fixed
    city.
    """

    def __init__(self, cfg: MetaBlockConfig):
        super().__init__()
        self.cfg = cfg
        d, dp = cfg.d, cfg.d_prime
        self.temporal = TemporalMLP(d)
        if cfg.use_pg:
            self.generator = PoiParamGenerator(cfg)
        else:
            self.wq = nn.Parameter(torch.zeros(2 * d, dp,
                                               dtype=torch.float64))
            self.wk = nn.Parameter(torch.zeros(2 * d, dp,
                                               dtype=torch.float64))
            self.wv = nn.Parameter(torch.zeros(d, dp,
                                               dtype=torch.float64))
        self.score_norm = (nn.LayerNorm(cfg.t_in, eps=LN_EPS).double()
                           if cfg.score_norm else None)
        if cfg.use_ar:
            self.graph_attention = GraphAttention(cfg)
            self.cheb = ChebGraphConv(cfg)
            self.refine_residual = ResidualCombine(dp, dp)
        self.block_residual = ResidualCombine(d, dp)
        self.head = nn.Linear(dp, cfg.out_dim).double()
        self._cache: dict | None = None

    def attention_params(self, p: torch.Tensor):
        """Per-region or shared (W_q, W_k, W_v) for POI rows p."""
        if self.cfg.use_pg:
            return self.generator(p)
        return self.wq, self.wk, self.wv

    def freeze_generated(self, p: torch.Tensor) -> None:
        """Cache POI-derived tensors; the POI matrix is static per city."""
        with torch.no_grad():
            cache = {"params": self.attention_params(p)}
            if self.cfg.use_ar:
                cache["s_att"] = self.graph_attention(p)
        self._cache = cache

    def unfreeze(self) -> None:
        self._cache = None

    def dynamic_attention(self, x, e1, e2, wq, wk, wv,
                          return_weights=False):
        cfg = self.cfg
        e1 = e1.unsqueeze(-3).expand(*x.shape[:-2], *e1.shape[-2:])
        e2 = e2.unsqueeze(-3).expand(*x.shape[:-2], *e2.shape[-2:])
        x1 = torch.cat([x, e1], dim=-1)  # keys carry input-window time
        x2 = torch.cat([x, e2], dim=-1)  # queries carry target-window time
        if self.cfg.use_pg:
            q = torch.einsum("bntc,ncp->bntp", x2, wq)
            k = torch.einsum("bntc,ncp->bntp", x1, wk)
            v = torch.einsum("bntc,ncp->bntp", x, wv)
        else:
            q = x2 @ wq
            k = x1 @ wk
            v = x @ wv
        scores = torch.einsum("bntp,bnsp->bnts", q, k)
        scores = scores / (2.0 * cfg.d) ** 0.5
        if self.score_norm is not None:
            scores = self.score_norm(scores)
        weights = torch.softmax(scores, dim=-1)
        attended = weights @ v
        if return_weights:
            return attended, weights
        return attended

    def forward(self, x: torch.Tensor, e_raw: torch.Tensor,
                p: torch.Tensor, basis: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[-1] != cfg.d:
            raise ValueError(f"expected feature width {cfg.d}, "
                             f"got {x.shape[-1]}")
        if x.shape[-2] != cfg.t_in:
            raise ValueError(f"expected {cfg.t_in} time steps, "
                             f"got {x.shape[-2]}")
        if p.shape[-1] != cfg.poi_width:
            raise ValueError(f"expected POI rows of width {cfg.poi_width}, "
                             f"got {p.shape[-1]}")
        if p.shape[0] != x.shape[1]:
            raise ValueError("POI rows do not match region count")
        if e_raw.dim() == 2:
            e_raw = e_raw.unsqueeze(0)
        e1, e2 = self.temporal(e_raw, cfg.t_in)

        if self._cache is not None:
            wq, wk, wv = self._cache["params"]
        else:
            wq, wk, wv = self.attention_params(p)
        attended = self.dynamic_attention(x, e1, e2, wq, wk, wv)

        if cfg.use_ar:
            if self._cache is not None:
                s_att = self._cache["s_att"]
            else:
                s_att = self.graph_attention(p)
            conv = self.cheb(attended, basis, s_att)
            refined = self.refine_residual(attended, conv)
        else:
            refined = attended

        combined = self.block_residual(x, refined)
        out = self.head(combined)
        return out.squeeze(0) if squeeze else out
