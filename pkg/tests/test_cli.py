"""End-to-end checks for the console entry points.

Every command is run twice and its outputs byte-compared, since the
pipeline promises deterministic reruns for identical inputs and seeds.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from poimeta.cli import main
from poimeta.fileio import (read_flow_csv, read_json, read_matrix_csv,
                            read_pgm, write_traj_csv)


def run(*argv) -> int:
    return main([str(a) for a in argv])


def file_bytes(*paths):
    return [Path(p).read_bytes() for p in paths]


@pytest.fixture(scope="module")
def city(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_city")
    out = root / "city9"
    assert run("synth", "--n", 9, "--categories", 6, "--days", 3,
               "--seed", 3, "--out", out) == 0
    return out


class TestSynth:
    def test_writes_city_dir(self, city):
        names = {p.name for p in city.iterdir()}
        assert {"raster.pgm", "raster.json", "labels.pgm", "edges.csv",
                "poi.csv", "inflow.csv", "inflow.json", "outflow.csv",
                "outflow.json", "city.json"} <= names
        meta = read_json(city / "city.json")
        assert meta["n_regions"] == 9
        assert meta["n_categories"] == 6
        assert meta["t_total"] == 3 * 96

    def test_rerun_identical(self, city, tmp_path):
        again = tmp_path / "again"
        run("synth", "--n", 9, "--categories", 6, "--days", 3,
            "--seed", 3, "--out", again)
        for name in ("raster.pgm", "labels.pgm", "edges.csv", "poi.csv",
                     "inflow.csv", "outflow.csv", "city.json"):
            assert (again / name).read_bytes() == \
                (city / name).read_bytes()

    def test_seed_changes_output(self, city, tmp_path):
        other = tmp_path / "other"
        run("synth", "--n", 9, "--categories", 6, "--days", 3,
            "--seed", 4, "--out", other)
        assert (other / "poi.csv").read_bytes() != \
            (city / "poi.csv").read_bytes()


class TestPartition:
    def test_labels_and_edges(self, city, tmp_path):
        labels = tmp_path / "labels.pgm"
        edges = tmp_path / "edges.csv"
        run("partition", "--raster", city / "raster.pgm",
            "--georef", city / "raster.json", "--cutoff", 128,
            "--dilate-radius", 1, "--gap", 3,
            "--out-labels", labels, "--out-edges", edges)
        grid = read_pgm(labels)
        assert grid.max() == 9
        rows = edges.read_text().splitlines()
        assert rows[0] == "src,dst"
        assert len(rows) - 1 == 12

    def test_matches_synth_labels(self, city, tmp_path):
        labels = tmp_path / "labels.pgm"
        run("partition", "--raster", city / "raster.pgm",
            "--georef", city / "raster.json", "--cutoff", 128,
            "--dilate-radius", 1, "--gap", 3,
            "--out-labels", labels, "--out-edges", tmp_path / "e.csv")
        assert labels.read_bytes() == (city / "labels.pgm").read_bytes()

    def test_rerun_identical(self, city, tmp_path):
        outs = []
        for tag in ("a", "b"):
            labels = tmp_path / f"{tag}.pgm"
            edges = tmp_path / f"{tag}.csv"
            run("partition", "--raster", city / "raster.pgm",
                "--georef", city / "raster.json", "--cutoff", 128,
                "--dilate-radius", 1, "--gap", 3,
                "--out-labels", labels, "--out-edges", edges)
            outs.append(file_bytes(labels, edges))
        assert outs[0] == outs[1]

    def test_flow_merge_pass(self, city, tmp_path):
        labels = tmp_path / "merged.pgm"
        edges = tmp_path / "merged.csv"
        run("partition", "--raster", city / "raster.pgm",
            "--georef", city / "raster.json", "--cutoff", 128,
            "--dilate-radius", 1, "--gap", 3,
            "--out-labels", labels, "--out-edges", edges,
            "--flows", f"{city}/inflow.csv,{city}/outflow.csv",
            "--min-flow", 2, "--slot-fraction", 0.75)
        grid = read_pgm(labels)
        assert 1 <= grid.max() <= 9


@pytest.fixture(scope="module")
def traj(city, tmp_path_factory):
    box = read_json(city / "raster.json")
    rng = np.random.default_rng(12)
    records = []
    for v in range(4):
        lon = rng.uniform(box["lon_min"], box["lon_max"])
        lat = rng.uniform(box["lat_min"], box["lat_max"])
        t = 0.0
        for _ in range(30):
            records.append((f"v{v}", t, lon, lat))
            lon = min(max(lon + rng.normal(0, 2.0), box["lon_min"]),
                      box["lon_max"] - 1e-9)
            lat = min(max(lat + rng.normal(0, 2.0), box["lat_min"]),
                      box["lat_max"] - 1e-9)
            t += rng.uniform(60.0, 300.0)
    path = tmp_path_factory.mktemp("traj") / "traj.csv"
    write_traj_csv(path, records)
    return path


class TestAggregate:
    def test_flow_pair(self, city, traj, tmp_path):
        prefix = tmp_path / "flows"
        run("aggregate", "--traj", traj, "--labels", city / "labels.pgm",
            "--georef", city / "raster.json", "--start", 0,
            "--end", 3600, "--out-prefix", prefix)
        inflow, meta_in = read_flow_csv(tmp_path / "flows_inflow.csv")
        outflow, meta_out = read_flow_csv(tmp_path / "flows_outflow.csv")
        assert inflow.shape == outflow.shape == (9, 4)
        assert meta_in["direction"] == "inflow"
        assert meta_out["direction"] == "outflow"
        # walks cross region borders, so both directions see traffic
        assert inflow.sum() > 0 and outflow.sum() > 0

    def test_rerun_identical(self, city, traj, tmp_path):
        outs = []
        for tag in ("a", "b"):
            prefix = tmp_path / tag / "flows"
            prefix.parent.mkdir()
            run("aggregate", "--traj", traj,
                "--labels", city / "labels.pgm",
                "--georef", city / "raster.json", "--start", 0,
                "--end", 3600, "--out-prefix", prefix)
            outs.append(file_bytes(f"{prefix}_inflow.csv",
                                   f"{prefix}_outflow.csv"))
        assert outs[0] == outs[1]


class TestBuildGraph:
    def test_matrices(self, city, tmp_path):
        sim_path = tmp_path / "sim.csv"
        adj_path = tmp_path / "adj.csv"
        run("build-graph", "--poi", city / "poi.csv",
            "--threshold", 0.4, "--out-sim", sim_path,
            "--out-adj", adj_path)
        sim = read_matrix_csv(sim_path)
        adj = read_matrix_csv(adj_path)
        assert sim.shape == adj.shape == (9, 9)
        assert np.allclose(sim, sim.T)
        assert set(np.unique(adj)) <= {0.0, 1.0}
        assert np.array_equal(adj, adj.T)
        # inclusive threshold keeps the unit diagonal
        assert np.all(np.diag(adj) == 1)
        assert np.array_equal(adj == 1.0, sim >= 0.4)

    def test_rerun_identical(self, city, tmp_path):
        outs = []
        for tag in ("a", "b"):
            sim_path = tmp_path / f"sim_{tag}.csv"
            adj_path = tmp_path / f"adj_{tag}.csv"
            run("build-graph", "--poi", city / "poi.csv",
                "--threshold", 0.4, "--out-sim", sim_path,
                "--out-adj", adj_path)
            outs.append(file_bytes(sim_path, adj_path))
        assert outs[0] == outs[1]


@pytest.fixture(scope="module")
def trained(city, tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_train")
    config = root / "config.json"
    config.write_text(json.dumps({
        "epochs": 2, "lr_switch_epoch": 1, "d": 8, "d_prime": 4,
        "k": 3, "seed": 1}))
    out = root / "run"
    assert run("train", "--config", config, "--data", city,
               "--out", out) == 0
    return config, out


class TestTrain:
    def test_run_dir_contents(self, trained):
        _, out = trained
        names = {p.name for p in out.iterdir()}
        assert {"best.json", "best.bin", "final.json", "final.bin",
                "train_log.csv", "config.json", "run.json"} <= names

    def test_log_schedule(self, trained):
        _, out = trained
        rows = (out / "train_log.csv").read_text().splitlines()
        assert rows[0] == "epoch,lr,train_loss,val_mae"
        lrs = [float(r.split(",")[1]) for r in rows[1:]]
        assert lrs == [0.01, 0.001]

    def test_rerun_identical(self, trained, city, tmp_path):
        config, out = trained
        again = tmp_path / "again"
        run("train", "--config", config, "--data", city, "--out", again)
        for name in ("best.bin", "best.json", "final.bin",
                     "train_log.csv", "run.json"):
            assert (again / name).read_bytes() == \
                (out / name).read_bytes()


class TestEvaluate:
    def test_report(self, trained, city, tmp_path):
        _, out = trained
        report = tmp_path / "report.json"
        run("evaluate", "--checkpoint", out / "best", "--data", city,
            "--split", "test", "--report", report)
        doc = read_json(report)
        assert doc["split"] == "test"
        assert set(doc["metrics"]) == {"15min", "30min", "60min",
                                       "overall"}
        overall = doc["metrics"]["overall"]
        assert overall["mae"] > 0
        assert overall["count"] > 0

    def test_rerun_identical(self, trained, city, tmp_path):
        _, out = trained
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for path in (a, b):
            run("evaluate", "--checkpoint", out / "best", "--data", city,
                "--split", "val", "--report", path)
        assert a.read_bytes() == b.read_bytes()


class TestAblate:
    def test_report_files(self, city, tmp_path):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            run("ablate", "--data", city, "--hosts", "temporal_linear",
                "--rows", "none", "--seeds", "1", "--epochs", 1,
                "--lr-switch", 1, "--workers", 1, "--no-plots",
                "--out", out)
            doc = read_json(out / "report.json")
            assert any(c["host"] == "temporal_linear"
                       and c["row"] == "none" and c["seed"] == 1
                       for c in doc["cells"])
            rows = (out / "report.csv").read_text().splitlines()
            assert rows[0].startswith("host,row,seed")
            outs.append(file_bytes(out / "report.json",
                                   out / "report.csv"))
        assert outs[0] == outs[1]


class TestParsing:
    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            run("bogus")

    def test_missing_required(self):
        with pytest.raises(SystemExit):
            run("partition", "--raster", "x.pgm")
