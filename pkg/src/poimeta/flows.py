"""Trajectory records to per-region flow tensors and training windows.

Counting is transition-based: whenever two consecutive records of one
vehicle locate to different regions, the earlier region loses a vehicle
(outflow) and the later one gains it (inflow), attributed to the slot of
the later record.  A record on a road pixel or outside the raster counts
as region "none": leaving into none is one outflow, arriving from none is
one inflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .regions import GeoRef, RegionLabelMap

SLOT_SECONDS = 900


@dataclass(frozen=True)
class TrajectoryRecord:
    vehicle_id: str
    timestamp: float  # Unix seconds
    lon: float
    lat: float


@dataclass
class FlowTensor:
    """Per-region counts, one row per region, one column per 15-min slot."""

    values: np.ndarray  # (N, T_total, D), D=1
    start_time: int
    direction: str
    slot_seconds: int = SLOT_SECONDS

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        if self.values.ndim != 3:
            raise ValueError("flow values must be (N, T_total, D)")
        if self.values.shape[1] < 1:
            raise ValueError("flow tensor needs at least one slot")
        if (self.values < 0).any():
            raise ValueError("flow counts must be non-negative")
        if self.start_time % self.slot_seconds != 0:
            raise ValueError(
                f"start_time {self.start_time} not aligned to "
                f"{self.slot_seconds}s slots")
        if self.direction not in ("inflow", "outflow"):
            raise ValueError(f"unknown direction {self.direction!r}")

    @property
    def n_regions(self) -> int:
        return self.values.shape[0]

    @property
    def t_total(self) -> int:
        return self.values.shape[1]


@dataclass
class SampleWindow:
    """One training example: T past slots in, T' future slots out."""

    input: np.ndarray   # (N, T, D)
    target: np.ndarray  # (N, T', D)
    slot_index: int     # absolute index of the first input slot


def locate(labelmap: RegionLabelMap, georef: GeoRef,
           lon: float, lat: float) -> Optional[int]:
    """Region id containing a point, or None on road / outside the box."""
    h, w = labelmap.labels.shape
    pix = georef.pixel_of(lon, lat, h, w)
    if pix is None:
        return None
    label = int(labelmap.labels[pix])
    return label if label > 0 else None


def aggregate_flows(records: Iterable[TrajectoryRecord],
                    labelmap: RegionLabelMap, georef: GeoRef,
                    start: int, end: int):
    """Count region transitions into (inflow, outflow) FlowTensors.

    The span [start, end) must be aligned to 900 s.  Per-vehicle record
    order must be non-decreasing in time; interleaving across vehicles is
    free.  Transitions landing outside the span are dropped.
    """
    if start % SLOT_SECONDS or end % SLOT_SECONDS:
        raise ValueError("span boundaries must be multiples of 900 s")
    if end <= start:
        raise ValueError("empty time span")
    n = labelmap.region_count
    t_total = (end - start) // SLOT_SECONDS
    inflow = np.zeros((n, t_total), dtype=np.float64)
    outflow = np.zeros((n, t_total), dtype=np.float64)

    last: dict[str, tuple[float, Optional[int]]] = {}
    for rec in records:
        region = locate(labelmap, georef, rec.lon, rec.lat)
        prev = last.get(rec.vehicle_id)
        last[rec.vehicle_id] = (rec.timestamp, region)
        if prev is None:
            continue
        t_prev, r_prev = prev
        if rec.timestamp < t_prev:
            raise ValueError(
                f"records for vehicle {rec.vehicle_id!r} are out of order "
                f"({rec.timestamp} after {t_prev})")
        if r_prev == region:
            continue
        slot = int((rec.timestamp - start) // SLOT_SECONDS)
        if not 0 <= slot < t_total:
            continue
        if r_prev is not None:
            outflow[r_prev - 1, slot] += 1
        if region is not None:
            inflow[region - 1, slot] += 1
    return (FlowTensor(inflow, start, "inflow"),
            FlowTensor(outflow, start, "outflow"))


def window_samples(flow: FlowTensor, t_in: int = 4, t_out: int = 4,
                   stride: int = 1) -> list[SampleWindow]:
    """Sliding contiguous (input, target) pairs over the slot axis."""
    if stride < 1:
        raise ValueError("stride must be positive")
    t_total = flow.t_total
    if t_total < t_in + t_out:
        raise ValueError(
            f"need at least {t_in + t_out} slots, got {t_total}")
    out = []
    for off in range(0, t_total - t_in - t_out + 1, stride):
        out.append(SampleWindow(
            input=flow.values[:, off:off + t_in].copy(),
            target=flow.values[:, off + t_in:off + t_in + t_out].copy(),
            slot_index=off))
    return out


def input_stats(samples: list[SampleWindow]) -> tuple[float, float]:
    """Mean/std over all input values; std snaps to 1 when < 1e-8.

    Compute this on the training split only, then apply everywhere.
    """
    stacked = np.concatenate([s.input.ravel() for s in samples])
    mean = float(stacked.mean())
    std = float(stacked.std())
    if std < 1e-8:
        std = 1.0
    return mean, std


def normalize_inputs(samples: list[SampleWindow], mean: float,
                     std: float) -> list[SampleWindow]:
    """Mean-std transform on inputs; targets pass through untouched."""
    return [SampleWindow((s.input - mean) / std, s.target.copy(),
                         s.slot_index)
            for s in samples]


def denormalize(values: np.ndarray, mean: float, std: float) -> np.ndarray:
    return values * std + mean
