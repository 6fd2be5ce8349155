"""Command-line entry points for the partition/flow/train pipeline."""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from .experiments import (ROW_ORDER, load_city_dir, prepare_dataset,
                          run_experiment)
from .fileio import (read_flow_csv, read_json, read_pgm, read_poi_csv,
                     read_traj_csv, write_edge_csv, write_flow_csv,
                     write_json, write_matrix_csv, write_pgm)
from .flows import TrajectoryRecord, aggregate_flows
from .poi_graph import (POICountMatrix, build_poi_matrix,
                        cosine_similarity, threshold_adjacency)
from .regions import (GeoRef, RegionLabelMap, RoadRaster,
                      extract_adjacency, merge_small_regions,
                      partition_raster)
from .training import TrainConfig, evaluate, load_checkpoint, train


def _read_raster(raster_path: str, georef_path: str) -> RoadRaster:
    box = read_json(georef_path)
    georef = GeoRef(box["lon_min"], box["lat_min"], box["lon_max"],
                    box["lat_max"])
    return RoadRaster(read_pgm(raster_path), georef)


def _collect_warnings(func, *args, **kwargs):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = func(*args, **kwargs)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return result


def cmd_partition(args) -> int:
    raster = _read_raster(args.raster, args.georef)
    gap = args.gap if args.gap is not None else 2 * args.dilate_radius + 1
    labels, graph = _collect_warnings(
        partition_raster, raster, cutoff=args.cutoff,
        dilate_radius=args.dilate_radius, gap=gap)
    if args.flows:
        paths = args.flows.split(",")
        inflow, _ = read_flow_csv(paths[0])
        outflow = inflow if len(paths) == 1 \
            else read_flow_csv(paths[1])[0]
        labels, merge_warnings = merge_small_regions(
            labels, inflow, outflow, min_flow=args.min_flow,
            slot_fraction=args.slot_fraction, gap=gap)
        for message in merge_warnings:
            print(f"warning: {message}", file=sys.stderr)
        graph = extract_adjacency(labels, gap)
    write_pgm(args.out_labels, labels.labels, maxval=65535)
    write_edge_csv(args.out_edges, graph.adjacency)
    print(f"{labels.region_count} regions, {graph.edge_count()} edges")
    return 0


def cmd_aggregate(args) -> int:
    labels = RegionLabelMap(read_pgm(args.labels).astype(np.int32))
    box = read_json(args.georef)
    georef = GeoRef(box["lon_min"], box["lat_min"], box["lon_max"],
                    box["lat_max"])
    records = (TrajectoryRecord(vid, ts, lon, lat)
               for vid, ts, lon, lat in read_traj_csv(args.traj))
    inflow, outflow = aggregate_flows(records, labels, georef,
                                      args.start, args.end)
    prefix = Path(args.out_prefix)
    write_flow_csv(prefix.parent / f"{prefix.name}_inflow.csv",
                   inflow.values, inflow.start_time, "inflow")
    write_flow_csv(prefix.parent / f"{prefix.name}_outflow.csv",
                   outflow.values, outflow.start_time, "outflow")
    print(f"{inflow.n_regions} regions x {inflow.t_total} slots")
    return 0


def cmd_build_graph(args) -> int:
    counts, names = read_poi_csv(args.poi)
    info = build_poi_matrix(POICountMatrix(counts, names))
    sim = cosine_similarity(info)
    graph = _collect_warnings(threshold_adjacency, sim, args.threshold)
    write_matrix_csv(args.out_sim, sim)
    write_matrix_csv(args.out_adj, graph.A_sim)
    degree = graph.A_sim.sum(axis=1)
    print(f"{info.n_regions} regions, mean degree {degree.mean():.2f}")
    return 0


def cmd_train(args) -> int:
    config = TrainConfig.from_json(args.config)
    bundle = load_city_dir(args.data)
    dataset = prepare_dataset(bundle, config)
    from .datasets import build_model
    model = build_model(config, dataset.n_regions,
                        poi_width=dataset.p.shape[1])
    out = Path(args.out)
    result = train(config, dataset, model, out_dir=out)
    config.to_json(out / "config.json")
    write_json(out / "run.json", {
        "params": sum(p.numel() for p in model.parameters()),
        "input_mean": dataset.mean,
        "input_std": dataset.std,
        "windows": {name: dataset.split_size(name)
                    for name in ("train", "val", "test")},
        "best_epoch": result.best_epoch,
        "best_val_mae": result.best_val_mae,
    })
    print(f"best val MAE {result.best_val_mae:.6f} "
          f"at epoch {result.best_epoch}")
    return 0


def cmd_evaluate(args) -> int:
    prefix = Path(args.checkpoint)
    config = TrainConfig.from_json(prefix.parent / "config.json")
    bundle = load_city_dir(args.data)
    dataset = prepare_dataset(bundle, config)
    from .datasets import build_model
    model = build_model(config, dataset.n_regions,
                        poi_width=dataset.p.shape[1])
    load_checkpoint(prefix, model)
    report = evaluate(model, dataset, split=args.split)
    write_json(args.report, {
        "checkpoint": prefix.name,
        "split": args.split,
        "metrics": report.horizons,
    })
    print(f"{args.split} overall MAE {report.overall_mae():.6f}")
    return 0


def cmd_synth(args) -> int:
    from .experiments import write_city_dir
    from .synthetic import generate_city, generate_traffic
    city = generate_city(args.n, c=args.categories, seed=args.seed)
    inflow, outflow = generate_traffic(city, days=args.days,
                                       seed=args.seed)
    write_city_dir(args.out, city, inflow, outflow)
    print(f"{city.n_regions} regions, {inflow.t_total} slots "
          f"-> {args.out}")
    return 0


def cmd_ablate(args) -> int:
    rows = tuple(args.rows.split(",")) if args.rows else ROW_ORDER
    report = run_experiment(
        args.data, args.out, hosts=tuple(args.hosts.split(",")),
        rows=rows, seeds=tuple(int(s) for s in args.seeds.split(",")),
        epochs=args.epochs, lr_switch_epoch=args.lr_switch,
        workers=args.workers, plots=not args.no_plots)
    for host, table in report["medians"].items():
        for row, stats in table.items():
            print(f"{host:16s} {row:9s} median MAE {stats['mae']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poimeta",
        description="POI-conditioned traffic forecasting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("partition",
                       help="raster -> region labels and adjacency")
    p.add_argument("--raster", required=True)
    p.add_argument("--georef", required=True)
    p.add_argument("--cutoff", type=int, default=128)
    p.add_argument("--dilate-radius", type=int, default=1)
    p.add_argument("--gap", type=int, default=None)
    p.add_argument("--out-labels", required=True)
    p.add_argument("--out-edges", required=True)
    p.add_argument("--flows", default=None,
                   help="flow CSV (or IN.csv,OUT.csv) enabling the "
                        "small-region merge pass")
    p.add_argument("--min-flow", type=float, default=10.0)
    p.add_argument("--slot-fraction", type=float, default=0.75)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("aggregate",
                       help="trajectories -> inflow/outflow tensors")
    p.add_argument("--traj", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--georef", required=True)
    p.add_argument("--start", type=int, required=True)
    p.add_argument("--end", type=int, required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("build-graph",
                       help="POI counts -> similarity and adjacency")
    p.add_argument("--poi", required=True)
    p.add_argument("--threshold", type=float, default=0.4)
    p.add_argument("--out-sim", required=True)
    p.add_argument("--out-adj", required=True)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test",
                   choices=("train", "val", "test"))
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate a synthetic city")
    p.add_argument("--n", type=int, default=60)
    p.add_argument("--categories", type=int, default=21)
    p.add_argument("--days", type=int, default=60)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ablate", help="run the experiment matrix")
    p.add_argument("--data", required=True)
    p.add_argument("--hosts", default="temporal_linear")
    p.add_argument("--rows", default=None,
                   help="comma list from none,DA,DA+PG,DA+PG+AR")
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr-switch", type=int, default=20)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
