"""File formats shared by the CLI tools.

All writers emit canonical bytes (fixed header form, `repr` floats, sorted
JSON keys) so that rerunning a command with identical inputs produces
byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_json(path: str | Path):
    return json.loads(Path(path).read_text())


def sidecar_path(path: str | Path) -> Path:
    """Metadata twin of a data file: same name with a .json suffix."""
    return Path(path).with_suffix(".json")


# ---------------------------------------------------------------------------
# PGM (portable graymap, binary "P5")
# ---------------------------------------------------------------------------

def write_pgm(path: str | Path, pixels: np.ndarray, maxval: int | None = None) -> None:
    """Write a 2D uint array as binary PGM.

    With the default maxval (the array maximum) values <= 255 become 8-bit
    samples; a larger maxval forces 16-bit big-endian samples (the PGM
    convention for maxval > 255).  Label maps are written with
    maxval=65535 so readers always see 16-bit samples.
    """
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValueError(f"PGM needs a 2D array, got shape {pixels.shape}")
    if pixels.min() < 0:
        raise ValueError("PGM samples must be non-negative")
    h, w = pixels.shape
    if maxval is None:
        maxval = int(max(pixels.max(), 1))
    elif pixels.max() > maxval:
        raise ValueError(f"sample {pixels.max()} exceeds maxval {maxval}")
    if maxval <= 255:
        payload = pixels.astype(">u1").tobytes()
    elif maxval <= 65535:
        payload = pixels.astype(">u2").tobytes()
    else:
        raise ValueError(f"PGM maxval limited to 65535, got {maxval}")
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + payload)


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary PGM into uint16 (16-bit) or uint8 (8-bit) array."""
    data = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval per spec
    if fields[0] != b"P5":
        raise ValueError(f"not a binary PGM: magic {fields[0]!r}")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    dtype = ">u1" if maxval <= 255 else ">u2"
    count = w * h
    pixels = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    out_dtype = np.uint8 if maxval <= 255 else np.uint16
    return pixels.reshape(h, w).astype(out_dtype)


# ---------------------------------------------------------------------------
# CSV formats
# ---------------------------------------------------------------------------

def write_edge_csv(path: str | Path, adjacency: np.ndarray) -> None:
    """Undirected edge list from a symmetric 0/1 matrix, src < dst, sorted."""
    adjacency = np.asarray(adjacency)
    lines = ["src,dst"]
    src, dst = np.nonzero(np.triu(adjacency, k=1))
    for i, j in zip(src.tolist(), dst.tolist()):
        lines.append(f"{i + 1},{j + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_csv(path: str | Path, n_regions: int) -> np.ndarray:
    adj = np.zeros((n_regions, n_regions), dtype=np.int8)
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "src,dst":
        raise ValueError(f"{path}: expected 'src,dst' header")
    for line in lines[1:]:
        if not line:
            continue
        a, b = (int(x) for x in line.split(","))
        adj[a - 1, b - 1] = 1
        adj[b - 1, a - 1] = 1
    return adj


def write_matrix_csv(path: str | Path, matrix: np.ndarray) -> None:
    """Dense row-major matrix with header row,col_0..col_{N-1}."""
    matrix = np.asarray(matrix)
    n_rows, n_cols = matrix.shape
    lines = ["row," + ",".join(f"col_{j}" for j in range(n_cols))]
    for i in range(n_rows):
        lines.append(f"{i}," + ",".join(_fmt(v) for v in matrix[i]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path: str | Path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    rows = [[float(v) for v in line.split(",")[1:]] for line in lines[1:] if line]
    return np.asarray(rows, dtype=np.float64)


def write_flow_csv(path: str | Path, values: np.ndarray, start_time: int,
                   direction: str) -> None:
    """Sparse flow table (absent entries are zero) plus a JSON sidecar."""
    values = np.asarray(values)
    if values.ndim == 3:
        values = values[:, :, 0]
    n_regions, t_total = values.shape
    lines = ["region_id,slot_index,value"]
    for r, t in zip(*np.nonzero(values)):
        lines.append(f"{r + 1},{t},{_fmt(values[r, t])}")
    Path(path).write_text("\n".join(lines) + "\n")
    write_json(sidecar_path(path), {
        "n_regions": int(n_regions),
        "t_total": int(t_total),
        "start_time": int(start_time),
        "direction": direction,
    })


def read_flow_csv(path: str | Path):
    """Return (values[N, T], meta dict) from a flow CSV and its sidecar."""
    meta = read_json(sidecar_path(path))
    values = np.zeros((meta["n_regions"], meta["t_total"]), dtype=np.float64)
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "region_id,slot_index,value":
        raise ValueError(f"{path}: expected 'region_id,slot_index,value' header")
    for line in lines[1:]:
        if not line:
            continue
        r, t, v = line.split(",")
        values[int(r) - 1, int(t)] = float(v)
    return values, meta


def write_traj_csv(path: str | Path, records) -> None:
    """Trajectory rows as (vehicle_id, timestamp, lon, lat) tuples."""
    lines = ["vehicle_id,timestamp,lon,lat"]
    for vid, ts, lon, lat in records:
        lines.append(f"{vid},{_fmt(ts)},{_fmt(lon)},{_fmt(lat)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_traj_csv(path: str | Path):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "vehicle_id,timestamp,lon,lat":
        raise ValueError(f"{path}: expected 'vehicle_id,timestamp,lon,lat' header")
    out = []
    for line in lines[1:]:
        if not line:
            continue
        vid, ts, lon, lat = line.split(",")
        out.append((vid, float(ts), float(lon), float(lat)))
    return out


def write_poi_csv(path: str | Path, counts: np.ndarray,
                  category_names: list[str]) -> None:
    counts = np.asarray(counts)
    lines = ["region_id," + ",".join(category_names)]
    for i, row in enumerate(counts):
        lines.append(f"{i + 1}," + ",".join(str(int(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_poi_csv(path: str | Path):
    """Return (counts[N, C] int array, category name list)."""
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    if header[0] != "region_id":
        raise ValueError(f"{path}: expected 'region_id' as first column")
    names = header[1:]
    rows = []
    for line in lines[1:]:
        if not line:
            continue
        parts = line.split(",")
        rows.append((int(parts[0]), [int(v) for v in parts[1:]]))
    rows.sort(key=lambda r: r[0])
    counts = np.asarray([r[1] for r in rows], dtype=np.int64)
    return counts, names


def _fmt(v) -> str:
    f = float(v)
    return repr(int(f)) if f == int(f) else repr(f)
