"""Experiment matrix: hosts x ablation rows x seeds on a city directory.

A city directory (as written by the synth command or by the partition /
aggregate pipeline) holds the raster, labels, edges, POI table, and flow
CSVs.  Each matrix cell trains one seeded configuration; cells are
independent, so they can fan out over worker processes.  The report
assembles in config order regardless of scheduling.
"""

from __future__ import annotations

import multiprocessing as mp
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .datasets import TrafficDataset, build_dataset, build_model
from .fileio import (read_edge_csv, read_flow_csv, read_json, read_pgm,
                     read_poi_csv, sidecar_path, write_edge_csv,
                     write_flow_csv, write_json, write_pgm, write_poi_csv)
from .flows import FlowTensor
from .poi_graph import (POICountMatrix, cheb_basis, functional_graph,
                        normalized_laplacian, scaled_laplacian)
from .training import TrainConfig, evaluate, load_checkpoint, train

ROW_FLAGS = {
    "none": (False, False, False),
    "DA": (True, False, False),
    "DA+PG": (True, True, False),
    "DA+PG+AR": (True, True, True),
}
ROW_ORDER = tuple(ROW_FLAGS)


@dataclass(frozen=True)
class CellSpec:
    host: str
    row: str
    seed: int

    @property
    def name(self) -> str:
        return f"{self.host}__{self.row}__s{self.seed}"


@dataclass
class CellResult:
    spec: CellSpec
    params: int
    best_epoch: int
    best_val_mae: float
    horizons: dict


@dataclass
class CityBundle:
    """Everything a training run needs, loaded from one directory."""

    poi: POICountMatrix
    geo_adjacency: np.ndarray
    inflow: FlowTensor
    outflow: FlowTensor
    meta: dict


def write_city_dir(out_dir, city, inflow: FlowTensor,
                   outflow: FlowTensor) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(out / "raster.pgm", city.raster.pixels)
    g = city.georef
    write_json(sidecar_path(out / "raster.pgm"),
               {"lon_min": g.lon_min, "lat_min": g.lat_min,
                "lon_max": g.lon_max, "lat_max": g.lat_max})
    write_pgm(out / "labels.pgm", city.labels.labels, maxval=65535)
    write_edge_csv(out / "edges.csv", city.graph.adjacency)
    write_poi_csv(out / "poi.csv", city.poi.counts,
                  city.poi.category_names)
    write_flow_csv(out / "inflow.csv", inflow.values, inflow.start_time,
                   "inflow")
    write_flow_csv(out / "outflow.csv", outflow.values,
                   outflow.start_time, "outflow")
    write_json(out / "city.json", {
        "n_regions": city.n_regions,
        "n_categories": len(city.poi.category_names),
        "seed": city.seed,
        "t_total": inflow.t_total,
        "archetypes": city.archetypes,
        "start_weekday": 0,
        "start_daily_slot": 0,
    })


def load_city_dir(data_dir) -> CityBundle:
    data = Path(data_dir)
    meta = read_json(data / "city.json")
    counts, names = read_poi_csv(data / "poi.csv")
    adjacency = read_edge_csv(data / "edges.csv", meta["n_regions"])
    flows = {}
    for direction in ("inflow", "outflow"):
        values, side = read_flow_csv(data / f"{direction}.csv")
        flows[direction] = FlowTensor(values[..., None],
                                      start_time=side["start_time"],
                                      direction=direction)
    return CityBundle(POICountMatrix(counts, names), adjacency,
                      flows["inflow"], flows["outflow"], meta)


def prepare_dataset(bundle: CityBundle, config: TrainConfig,
                    direction: str = "inflow") -> TrafficDataset:
    """Windows plus the two graph bases every cell shares."""
    info, _, _, basis = functional_graph(bundle.poi, config.threshold,
                                         k=config.k)
    geo = cheb_basis(
        scaled_laplacian(normalized_laplacian(
            bundle.geo_adjacency.astype(np.float64))), k=config.k)
    flow = bundle.inflow if direction == "inflow" else bundle.outflow
    p = info.P
    return build_dataset(
        flow, p, np.stack(basis.matrices),
        geo_basis=np.stack(geo.matrices),
        train_frac=config.train_frac, val_frac=config.val_frac,
        test_frac=config.test_frac,
        start_weekday=bundle.meta.get("start_weekday", 0),
        start_daily_slot=bundle.meta.get("start_daily_slot", 0))


def cell_config(base: TrainConfig, spec: CellSpec) -> TrainConfig:
    da, pg, ar = ROW_FLAGS[spec.row]
    fields = {name: getattr(base, name)
              for name in TrainConfig.__dataclass_fields__}
    fields.update(host=spec.host, seed=spec.seed, da=da, pg=pg, ar=ar)
    return TrainConfig(**fields)


def run_cell(dataset: TrafficDataset, base: TrainConfig, spec: CellSpec,
             out_dir=None) -> CellResult:
    torch.set_num_threads(1)
    config = cell_config(base, spec)
    model = build_model(config, dataset.n_regions,
                        poi_width=dataset.p.shape[1])
    params = sum(p.numel() for p in model.parameters())
    cell_out = None if out_dir is None else Path(out_dir) / spec.name
    try:
        result = train(config, dataset, model, out_dir=cell_out)
    except RuntimeError as err:
        raise RuntimeError(f"cell {spec.name}: {err}") from err
    model.load_state_dict(result.best_state)
    report = evaluate(model, dataset, split="test")
    return CellResult(spec, params, result.best_epoch,
                      result.best_val_mae, report.horizons)


_POOL_STATE: dict = {}


def _pool_cell(spec: CellSpec) -> CellResult:
    return run_cell(_POOL_STATE["dataset"], _POOL_STATE["base"], spec,
                    _POOL_STATE["out_dir"])


def run_matrix(dataset: TrafficDataset, base: TrainConfig, specs,
               out_dir=None, workers: int = 1) -> list:
    specs = list(specs)
    if workers <= 1 or len(specs) <= 1:
        return [run_cell(dataset, base, spec, out_dir) for spec in specs]
    _POOL_STATE.update(dataset=dataset, base=base, out_dir=out_dir)
    try:
        ctx = mp.get_context("fork")
        with ctx.Pool(processes=min(workers, len(specs))) as pool:
            return pool.map(_pool_cell, specs)
    finally:
        _POOL_STATE.clear()


def matrix_specs(hosts, rows, seeds):
    return [CellSpec(host, row, seed)
            for host in hosts for row in rows for seed in seeds]


def _median(values):
    finite = [v for v in values if v is not None]
    return float(np.median(finite)) if finite else None


def summarize(results) -> dict:
    """Median over seeds of each overall metric, per (host, row)."""
    groups = {}
    for res in results:
        groups.setdefault((res.spec.host, res.spec.row), []).append(res)
    table = {}
    for (host, row), cells in groups.items():
        overall = [c.horizons["overall"] for c in cells]
        table.setdefault(host, {})[row] = {
            "mae": _median([o["mae"] for o in overall]),
            "rmse": _median([o["rmse"] for o in overall]),
            "mape": _median([o["mape"] for o in overall]),
            "seeds": sorted(c.spec.seed for c in cells),
            "params": cells[0].params,
        }
    return table


def report_rows(results) -> list:
    rows = []
    for res in results:
        for horizon, block in res.horizons.items():
            rows.append({
                "host": res.spec.host, "row": res.spec.row,
                "seed": res.spec.seed, "params": res.params,
                "best_epoch": res.best_epoch, "horizon": horizon,
                **block})
    return rows


def write_report(out_dir, results, base: TrainConfig) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {
        "config": {name: getattr(base, name)
                   for name in TrainConfig.__dataclass_fields__
                   if name not in ("host", "seed", "da", "pg", "ar")},
        "cells": [{
            "host": r.spec.host, "row": r.spec.row, "seed": r.spec.seed,
            "params": r.params, "best_epoch": r.best_epoch,
            "best_val_mae": r.best_val_mae, "metrics": r.horizons,
        } for r in results],
        "medians": summarize(results),
    }
    write_json(out / "report.json", report)
    columns = ["host", "row", "seed", "params", "best_epoch", "horizon",
               "mae", "rmse", "mape", "count", "mape_excluded"]
    lines = [",".join(columns)]
    for row in report_rows(results):
        lines.append(",".join("" if row[c] is None else str(row[c])
                              for c in columns))
    (out / "report.csv").write_text("\n".join(lines) + "\n")
    return report


def plot_report(out_dir, results, dataset: TrafficDataset | None = None,
                base: TrainConfig | None = None) -> None:
    """Metric bars per row/host; optional predicted-vs-true curves."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    table = summarize(results)
    fig, ax = plt.subplots(figsize=(7, 4))
    hosts = sorted(table)
    rows = [r for r in ROW_ORDER
            if any(r in table[h] for h in hosts)]
    width = 0.8 / max(len(hosts), 1)
    for i, host in enumerate(hosts):
        maes = [table[host].get(row, {}).get("mae") for row in rows]
        xs = [j + i * width for j in range(len(rows))]
        ax.bar(xs, [m if m is not None else 0.0 for m in maes],
               width=width, label=host)
    ax.set_xticks([j + width * (len(hosts) - 1) / 2
                   for j in range(len(rows))])
    ax.set_xticklabels(rows)
    ax.set_ylabel("median overall test MAE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "mae_bars.png", metadata={"Software": None})
    plt.close(fig)

    if dataset is None or base is None:
        return
    best = min((r for r in results if r.spec.row != "none"),
               key=lambda r: r.horizons["overall"]["mae"], default=None)
    if best is None or not (out / best.spec.name / "best.json").exists():
        return
    config = cell_config(base, best.spec)
    model = build_model(config, dataset.n_regions,
                        poi_width=dataset.p.shape[1])
    load_checkpoint(out / best.spec.name / "best", model)
    model.eval()
    batch = dataset.batch("test")
    with torch.no_grad():
        from .training import _model_outputs
        pred = _model_outputs(model, batch)
    truth = batch["y"]
    span = min(192, pred.shape[0])
    regions = [0, dataset.n_regions // 2]
    fig, axes = plt.subplots(len(regions), 1, figsize=(8, 5),
                             sharex=True)
    for ax, region in zip(np.atleast_1d(axes), regions):
        ax.plot(truth[:span, region, 0, 0], label="true")
        ax.plot(pred[:span, region, 0, 0], label="predicted")
        ax.set_ylabel(f"region {region + 1}")
    np.atleast_1d(axes)[0].legend()
    np.atleast_1d(axes)[-1].set_xlabel("test window (first step)")
    fig.tight_layout()
    fig.savefig(out / "pred_curves.png", metadata={"Software": None})
    plt.close(fig)


def run_experiment(data_dir, out_dir, hosts=("temporal_linear",),
                   rows=ROW_ORDER, seeds=(1, 2, 3), epochs: int = 40,
                   lr_switch_epoch: int = 20, workers: int = 1,
                   plots: bool = True, **config_overrides) -> dict:
    bundle = load_city_dir(data_dir)
    base = TrainConfig(epochs=epochs, lr_switch_epoch=lr_switch_epoch,
                       **config_overrides)
    dataset = prepare_dataset(bundle, base)
    specs = matrix_specs(hosts, rows, seeds)
    results = run_matrix(dataset, base, specs, out_dir=out_dir,
                         workers=workers)
    report = write_report(out_dir, results, base)
    if plots:
        plot_report(out_dir, results, dataset, base)
    return report
