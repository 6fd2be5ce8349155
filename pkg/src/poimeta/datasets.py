"""Window datasets wiring flow tensors to trainable batches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .flows import FlowTensor, input_stats, window_samples
from .temporal import window_embedding

SPLITS = ("train", "val", "test")


@dataclass
class TrafficDataset:
    """Chronological sliding windows ready for batching.

    Inputs are standardized with statistics from the training windows
    only; targets stay in raw flow units.  Every sample carries the
    clock embedding rows for its own input and target slots.
    """

    inputs: torch.Tensor      # (S, N, t_in, D) normalized
    targets: torch.Tensor     # (S, N, t_out, D) raw
    e_raw: torch.Tensor       # (S, t_in + t_out, 103)
    p: torch.Tensor           # (N, poi_width)
    basis: torch.Tensor       # (K, N, N) functional-graph filters
    geo_basis: torch.Tensor | None
    splits: dict
    mean: float
    std: float

    def split_size(self, split: str) -> int:
        sl = self.splits[split]
        return sl.stop - sl.start

    def batch(self, split: str, idx: torch.Tensor | None = None) -> dict:
        sl = self.splits[split]
        x = self.inputs[sl]
        y = self.targets[sl]
        e = self.e_raw[sl]
        if idx is not None:
            x, y, e = x[idx], y[idx], e[idx]
        return {"x": x, "y": y, "e_raw": e, "p": self.p,
                "basis": self.basis, "geo_basis": self.geo_basis}

    @property
    def n_regions(self) -> int:
        return self.inputs.shape[1]


def chronological_splits(n_samples: int, train_frac: float,
                         val_frac: float, test_frac: float) -> dict:
    """Contiguous past/middle/future index ranges."""
    if abs(train_frac + val_frac + test_frac - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    n_train = int(np.floor(n_samples * train_frac))
    n_val = int(np.floor(n_samples * val_frac))
    if n_train < 1 or n_val < 1 or n_samples - n_train - n_val < 1:
        raise ValueError(f"{n_samples} samples cannot cover three splits")
    return {"train": slice(0, n_train),
            "val": slice(n_train, n_train + n_val),
            "test": slice(n_train + n_val, n_samples)}


def build_dataset(flow: FlowTensor, p: np.ndarray, basis: np.ndarray,
                  geo_basis: np.ndarray | None = None,
                  t_in: int = 4, t_out: int = 4, stride: int = 1,
                  train_frac: float = 0.7, val_frac: float = 0.1,
                  test_frac: float = 0.2, start_weekday: int = 0,
                  start_daily_slot: int = 0) -> TrafficDataset:
    samples = window_samples(flow, t_in=t_in, t_out=t_out, stride=stride)
    splits = chronological_splits(len(samples), train_frac, val_frac,
                                  test_frac)
    inputs = np.stack([s.input for s in samples])
    targets = np.stack([s.target for s in samples])
    e_raw = np.stack([
        window_embedding(s.slot_index, t_in, t_out,
                         start_weekday=start_weekday,
                         start_daily_slot=start_daily_slot)
        for s in samples])
    mean, std = input_stats(samples[splits["train"]])
    inputs = (inputs - mean) / std
    return TrafficDataset(
        inputs=torch.from_numpy(inputs),
        targets=torch.from_numpy(targets),
        e_raw=torch.from_numpy(e_raw),
        p=torch.from_numpy(np.asarray(p, dtype=np.float64)),
        basis=torch.from_numpy(np.asarray(basis, dtype=np.float64)),
        geo_basis=None if geo_basis is None
        else torch.from_numpy(np.asarray(geo_basis, dtype=np.float64)),
        splits=splits, mean=mean, std=std)


def build_model(config, n_regions: int, poi_width: int,
                out_dim: int = 1) -> torch.nn.Module:
    """Host alone or host + conditioning block, per the ablation flags."""
    from .hosts import ComposedModel, GcnTemporalHost, HostOnlyModel, \
        TemporalLinearHost
    from .metablock import MetaBlockConfig, PoiMetaBlock
    from .training import init_parameters

    if config.host == "temporal_linear":
        host = TemporalLinearHost(t_in=4, in_dim=out_dim, d=config.d)
    else:
        host = GcnTemporalHost(t_in=4, in_dim=out_dim, d=config.d,
                               k=config.k)
    if config.da:
        block_cfg = MetaBlockConfig(
            d=config.d, d_prime=config.d_prime, t_in=4, t_out=4,
            poi_width=poi_width, k=config.k, out_dim=out_dim,
            use_pg=config.pg, use_ar=config.ar)
        model = ComposedModel(host, PoiMetaBlock(block_cfg))
    else:
        model = HostOnlyModel(host, out_dim=out_dim)
    init_parameters(model, config.seed)
    return model
