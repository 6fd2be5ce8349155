"""Irregular region partitioning of rasterized road maps.

A road map raster is binarized, the road ink dilated, and the remaining
free pixels split into 4-connected components.  Components become the
regions of the forecasting graph; adjacency is read off the pixel grid by
looking across thin road gaps.  Regions with persistently low flow can be
merged into the neighbor they share the longest boundary with.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class GeoRef:
    """Linear mapping between the raster and a lon/lat bounding box."""

    lon_min: float
    lat_min: float
    lon_max: float
    lat_max: float

    def __post_init__(self):
        if not (self.lon_min < self.lon_max and self.lat_min < self.lat_max):
            raise ValueError(f"degenerate bounding box: {self}")

    def pixel_of(self, lon: float, lat: float, height: int, width: int):
        """Containing (row, col) of a point, or None outside the box.

        Row 0 is the northern (lat_max) edge, matching image convention.
        """
        fx = (lon - self.lon_min) / (self.lon_max - self.lon_min)
        fy = (self.lat_max - lat) / (self.lat_max - self.lat_min)
        col = int(np.floor(fx * width))
        row = int(np.floor(fy * height))
        if 0 <= row < height and 0 <= col < width:
            return row, col
        return None

    def to_dict(self) -> dict:
        return {"lon_min": self.lon_min, "lat_min": self.lat_min,
                "lon_max": self.lon_max, "lat_max": self.lat_max}

    @classmethod
    def from_dict(cls, d: dict) -> "GeoRef":
        return cls(d["lon_min"], d["lat_min"], d["lon_max"], d["lat_max"])


@dataclass
class RoadRaster:
    """8-bit grayscale road map; 0 is road ink, 255 is open ground."""

    pixels: np.ndarray
    georef: GeoRef

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 2:
            raise ValueError("raster must be a 2D intensity grid")
        h, w = self.pixels.shape
        if h < 2 or w < 2:
            raise ValueError(f"raster too small: {h}x{w} (need at least 2x2)")


@dataclass
class BinaryRoadMask:
    """Boolean grid: True where a pixel is road."""

    road: np.ndarray

    def __post_init__(self):
        self.road = np.asarray(self.road, dtype=bool)
        if self.road.ndim != 2:
            raise ValueError("mask must be 2D")


@dataclass
class RegionLabelMap:
    """Per-pixel region ids; 0 is road/background, regions are 1..N."""

    labels: np.ndarray
    region_count: int = field(default=-1)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.region_count < 0:
            self.region_count = int(self.labels.max(initial=0))

    def sizes(self) -> np.ndarray:
        """Pixel count per region id 1..N."""
        return np.bincount(self.labels.ravel(),
                           minlength=self.region_count + 1)[1:]


@dataclass
class RegionGraph:
    """Symmetric binary adjacency over region ids 1..N."""

    n_regions: int
    adjacency: np.ndarray

    def edge_count(self) -> int:
        return int(np.triu(self.adjacency, k=1).sum())


def binarize_roadmap(raster: RoadRaster, cutoff: int = 128) -> BinaryRoadMask:
    """Threshold the raster: a pixel is road iff intensity <= cutoff."""
    if not 0 <= cutoff <= 255:
        raise ValueError(f"cutoff must be in 0..255, got {cutoff}")
    return BinaryRoadMask(raster.pixels <= cutoff)


def dilate_roads(mask: BinaryRoadMask, radius: int) -> BinaryRoadMask:
    """Grow roads by a square (Chebyshev-ball) structuring element."""
    if radius < 0:
        raise ValueError(f"radius must be non-negative, got {radius}")
    if radius == 0:
        return BinaryRoadMask(mask.road.copy())
    grown = ndimage.maximum_filter(mask.road.astype(np.uint8),
                                   size=2 * radius + 1,
                                   mode="constant", cval=0)
    return BinaryRoadMask(grown.astype(bool))


def label_regions(mask: BinaryRoadMask) -> RegionLabelMap:
    """4-connected components of the free pixels, numbered 1..N.

    Ids follow raster-scan order of each component's first pixel; roads
    stay 0.  An all-road mask yields region_count 0.
    """
    raw, n = ndimage.label(~mask.road, structure=FOUR_CONNECTED)
    if n == 0:
        return RegionLabelMap(np.zeros_like(raw, dtype=np.int32), 0)
    flat = raw.ravel()
    first_seen = np.full(n + 1, flat.size, dtype=np.int64)
    np.minimum.at(first_seen, flat, np.arange(flat.size))
    order = np.argsort(first_seen[1:], kind="stable")  # old_label-1 by first pixel
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, n + 1)
    return RegionLabelMap(remap[raw], n)


def boundary_pair_counts(labels: np.ndarray, gap: int,
                         n_regions: int | None = None) -> np.ndarray:
    """Count axis-aligned pixel pairs of distinct regions across road runs.

    A pair counts when the two free pixels share a row or column and every
    pixel strictly between them is road, with at most `gap` road pixels in
    between.  This is both the adjacency predicate (count > 0) and the
    boundary-length measure used to pick merge targets.
    """
    labels = np.asarray(labels)
    if n_regions is None:
        n_regions = int(labels.max(initial=0))
    counts = np.zeros((n_regions, n_regions), dtype=np.int64)
    if n_regions == 0 or gap <= 0:
        return counts
    for arr2d in (labels, labels.T):
        for line in arr2d:
            free = np.nonzero(line)[0]
            if free.size < 2:
                continue
            run = np.diff(free) - 1  # road pixels strictly between
            la = line[free[:-1]]
            lb = line[free[1:]]
            ok = (run >= 1) & (run <= gap) & (la != lb)
            if ok.any():
                np.add.at(counts, (la[ok] - 1, lb[ok] - 1), 1)
                np.add.at(counts, (lb[ok] - 1, la[ok] - 1), 1)
    return counts


def extract_adjacency(labelmap: RegionLabelMap, gap: int = 1) -> RegionGraph:
    """Region graph: regions adjacent iff separated by at most `gap` road
    pixels along some row or column.

    With a road grid dilated by radius r, gap = 2r + 1 makes regions on
    opposite sides of a dilated road adjacent.
    """
    if labelmap.region_count < 1:
        raise ValueError("labelmap has no regions")
    if gap < 1:
        raise ValueError(f"gap must be at least 1, got {gap}")
    counts = boundary_pair_counts(labelmap.labels, gap, labelmap.region_count)
    adjacency = (counts > 0).astype(np.int8)
    np.fill_diagonal(adjacency, 0)
    return RegionGraph(labelmap.region_count, adjacency)


def merge_small_regions(labelmap: RegionLabelMap,
                        inflow: np.ndarray,
                        outflow: np.ndarray,
                        min_flow: float = 10.0,
                        slot_fraction: float = 0.75,
                        gap: int = 1):
    """Fold persistently low-flow regions into their dominant neighbor.

    A region qualifies when inflow or outflow drops below `min_flow` in
    strictly more than `slot_fraction` of the time slots.  Qualifying
    regions (ascending id) are merged into the neighbor sharing the
    longest boundary (ties: lowest id); merged flows are summed and the
    test repeats until no region qualifies or one region remains.
    Returns (new labelmap re-compacted to 1..N', warning list).  A
    qualifying region with no neighbor is left alone and reported.
    """
    n = labelmap.region_count
    inflow = np.asarray(inflow, dtype=np.float64).reshape(n, -1)
    outflow = np.asarray(outflow, dtype=np.float64).reshape(n, -1)
    if inflow.shape != outflow.shape:
        raise ValueError("inflow/outflow shapes differ")
    t_total = inflow.shape[1]

    pair_counts = boundary_pair_counts(labelmap.labels, gap, n)
    group_of = np.arange(n)  # original label-1 -> group index
    group_in = inflow.copy()
    group_out = outflow.copy()
    group_boundary = pair_counts.astype(np.float64)
    alive = np.ones(n, dtype=bool)
    skipped: set[int] = set()
    warnings_list: list[str] = []

    def qualifies(g: int) -> bool:
        low = np.count_nonzero((group_in[g] < min_flow) | (group_out[g] < min_flow))
        return low > slot_fraction * t_total

    while alive.sum() > 1:
        candidates = [g for g in np.nonzero(alive)[0]
                      if g not in skipped and qualifies(g)]
        if not candidates:
            break
        g = candidates[0]
        neighbors = np.nonzero(alive & (group_boundary[g] > 0))[0]
        neighbors = neighbors[neighbors != g]
        if neighbors.size == 0:
            skipped.add(g)
            warnings_list.append(
                f"region group {g + 1} has persistently low flow but no "
                f"neighbor within gap {gap}; left unmerged")
            continue
        best = neighbors[np.argmax(group_boundary[g, neighbors])]
        # absorb g into best: flows add, boundaries add, g disappears
        group_in[best] += group_in[g]
        group_out[best] += group_out[g]
        group_boundary[best] += group_boundary[g]
        group_boundary[:, best] += group_boundary[:, g]
        group_boundary[best, best] = 0
        group_boundary[g, :] = 0
        group_boundary[:, g] = 0
        alive[g] = False
        group_of[group_of == g] = best

    if alive.sum() == 1 and any(qualifies(g) for g in np.nonzero(alive)[0]):
        g = int(np.nonzero(alive)[0][0])
        warnings_list.append(
            f"region group {g + 1} has persistently low flow but no "
            f"merge target remains; left unmerged")

    # compact to 1..N' in raster-scan order of each group's first pixel
    flat = labelmap.labels.ravel()
    first_seen = np.full(n + 1, flat.size, dtype=np.int64)
    np.minimum.at(first_seen, flat, np.arange(flat.size))
    group_first = {}
    for lbl in range(n):
        g = group_of[lbl]
        group_first[g] = min(group_first.get(g, flat.size), first_seen[lbl + 1])
    new_id = {g: i + 1 for i, g in
              enumerate(sorted(group_first, key=group_first.get))}
    remap = np.zeros(n + 1, dtype=np.int32)
    for lbl in range(n):
        remap[lbl + 1] = new_id[group_of[lbl]]
    return RegionLabelMap(remap[labelmap.labels], len(new_id)), warnings_list


def partition_raster(raster: RoadRaster, cutoff: int = 128,
                     dilate_radius: int = 1, gap: int | None = None):
    """Full pipeline: binarize, dilate, label, adjacency.

    Returns (labelmap, graph).  gap defaults to 2 * dilate_radius + 1.
    """
    if gap is None:
        gap = 2 * dilate_radius + 1
    mask = dilate_roads(binarize_roadmap(raster, cutoff), dilate_radius)
    labelmap = label_regions(mask)
    if labelmap.region_count == 0:
        warnings.warn("no free pixels after dilation; empty partition")
        return labelmap, RegionGraph(0, np.zeros((0, 0), dtype=np.int8))
    return labelmap, extract_adjacency(labelmap, gap)
