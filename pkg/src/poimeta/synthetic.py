"""Synthetic cities with function-driven traffic.

Regions come from a jittered rectilinear road grid; each region gets an
urban archetype (residential, office, leisure), a traffic scale, POI
counts concentrated on that archetype's category block and proportional
to the scale, and a Poisson traffic process whose rate follows smooth
archetype-specific daily curves.  Regions that share an archetype have
similar POI rows and similar expected traffic, and POI magnitude tracks
traffic volume, which is exactly the structure the conditioning block
exploits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flows import FlowTensor
from .poi_graph import POICountMatrix, default_category_names
from .regions import (GeoRef, RegionGraph, RegionLabelMap, RoadRaster,
                      partition_raster)

ARCHETYPES = ("residential", "office", "leisure")

# Daily rate bases: two Gaussians each, over the 96 daily slots.
# Entries are (center slot, sigma in slots, amplitude).
BASIS_PARAMS = {
    "residential": ((32, 8.0, 1.0), (72, 8.0, 0.3)),   # morning-peaked
    "office": ((36, 6.0, 0.8), (72, 6.0, 0.8)),        # double-peaked
    "leisure": ((80, 10.0, 1.0), (52, 8.0, 0.4)),      # evening-peaked
}

# Weekend multiplier per archetype curve; weekdays are 1.  Offices empty
# out, homes quiet down a little, leisure areas get busier.
WEEKEND_MULT = {"residential": 0.7, "office": 0.6, "leisure": 1.3}

SCALE_RANGE = (20.0, 120.0)
# geometric mid of the scale range; POI draws are scaled relative to it
SCALE_REF = float((SCALE_RANGE[0] * SCALE_RANGE[1]) ** 0.5)
POI_DRAWS = 200
OWN_BLOCK_WEIGHT = 0.7


@dataclass
class SyntheticCity:
    """A generated city: raster partition plus per-region metadata."""

    raster: RoadRaster
    labels: RegionLabelMap
    graph: RegionGraph
    archetypes: list
    weights: np.ndarray       # (N, 3) rows on the simplex
    scales: np.ndarray        # (N,) traffic magnitude per region
    poi: POICountMatrix
    seed: int

    @property
    def georef(self) -> GeoRef:
        return self.raster.georef

    @property
    def n_regions(self) -> int:
        return self.labels.region_count


def _factor_pair(n: int) -> tuple:
    """rows x cols = n, as close to square as divisors allow."""
    best = (1, n)
    for rows in range(2, int(np.sqrt(n)) + 1):
        if n % rows == 0:
            best = (rows, n // rows)
    return best


def _grid_raster(rows: int, cols: int, rng) -> RoadRaster:
    heights = rng.integers(6, 13, size=rows)
    widths = rng.integers(6, 13, size=cols)
    h = int(heights.sum()) + rows + 1
    w = int(widths.sum()) + cols + 1
    pixels = np.full((h, w), 255, dtype=np.uint8)
    y = 0
    pixels[y, :] = 0
    for hh in heights:
        y += int(hh) + 1
        pixels[y, :] = 0
    x = 0
    pixels[:, x] = 0
    for ww in widths:
        x += int(ww) + 1
        pixels[:, x] = 0
    return RoadRaster(pixels, GeoRef(0.0, 0.0, float(w), float(h)))


def generate_city(n: int, c: int = 21, seed: int = 0) -> SyntheticCity:
    """Build a seeded city with n regions and c POI categories."""
    if n < 4:
        raise ValueError("need at least 4 regions")
    rng = np.random.default_rng(seed)
    rows, cols = _factor_pair(n)
    raster = _grid_raster(rows, cols, rng)
    labels, graph = partition_raster(raster)
    if labels.region_count != n:
        raise RuntimeError(
            f"grid produced {labels.region_count} regions, wanted {n}")

    archetypes = [ARCHETYPES[i % 3] for i in range(n)]
    rng.shuffle(archetypes)
    weights = np.full((n, 3), (1.0 - OWN_BLOCK_WEIGHT) / 2.0)
    for i, name in enumerate(archetypes):
        weights[i, ARCHETYPES.index(name)] = OWN_BLOCK_WEIGHT
    scales = region_scales(n, rng)

    # busier regions carry proportionally more POIs, so POI magnitude
    # is informative about traffic volume as well as function
    draws = np.maximum(1, np.rint(POI_DRAWS * scales
                                  / SCALE_REF).astype(np.int64))
    blocks = np.array_split(np.arange(c), 3)
    counts = np.zeros((n, c), dtype=np.int64)
    for i in range(n):
        probs = np.zeros(c)
        for f, block in enumerate(blocks):
            probs[block] = weights[i, f] / len(block)
        counts[i] = rng.multinomial(draws[i], probs)
    poi = POICountMatrix(counts, default_category_names(c))
    return SyntheticCity(raster, labels, graph, archetypes, weights,
                         scales, poi, seed)


def daily_bases() -> np.ndarray:
    """(3, 96) archetype rate curves over one day's slots."""
    slots = np.arange(96, dtype=np.float64)
    rows = []
    for name in ARCHETYPES:
        curve = np.zeros(96)
        for center, sigma, amp in BASIS_PARAMS[name]:
            curve += amp * np.exp(-((slots - center) ** 2)
                                  / (2.0 * sigma ** 2))
        rows.append(curve)
    return np.stack(rows)


def expected_rates(city: SyntheticCity, days: int,
                   scales: np.ndarray) -> np.ndarray:
    """lambda(i, s) over days*96 slots, from weights, bases, and scale."""
    t_total = days * 96
    bases = daily_bases()
    daily_id = np.arange(t_total) % 96
    weekly_id = (np.arange(t_total) // 96) % 7
    weekend = weekly_id >= 5
    mult = np.ones((3, t_total))
    for f, name in enumerate(ARCHETYPES):
        mult[f, weekend] = WEEKEND_MULT[name]
    curves = bases[:, daily_id] * mult          # (3, T)
    return scales[:, None] * (city.weights @ curves)


def region_scales(n: int, rng) -> np.ndarray:
    low, high = SCALE_RANGE
    return np.exp(rng.uniform(np.log(low), np.log(high), size=n))


def generate_traffic(city: SyntheticCity, days: int,
                     seed: int = 0) -> tuple:
    """Seeded Poisson inflow/outflow pair over days*96 slots."""
    if days < 2:
        raise ValueError("need at least 2 days")
    rng = np.random.default_rng(seed)
    lam = expected_rates(city, days, city.scales)
    inflow = rng.poisson(lam).astype(np.float64)
    outflow = rng.poisson(lam).astype(np.float64)
    return (FlowTensor(inflow[..., None], start_time=0,
                       direction="inflow"),
            FlowTensor(outflow[..., None], start_time=0,
                       direction="outflow"))
