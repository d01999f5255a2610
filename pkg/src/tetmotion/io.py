"""On-disk formats: binary array container, OBJ meshes, contour CSV.

The container is a small versioned layout chosen so that identical inputs
always produce identical bytes::

    b"TMCF" | u32 header length | header JSON (utf-8) | raw little-endian arrays

The header lists every array with its name, dtype, shape and byte offset.
"""

import csv
import json
import struct
from pathlib import Path

import numpy as np

from tetmotion.errors import InvalidArgument
from tetmotion.mesh import SurfaceMesh
from tetmotion.tetgrid import TetGrid

MAGIC = b"TMCF"
FORMAT_VERSION = 1


def write_container(path, header, arrays):
    """Write named arrays after a JSON header.  ``arrays`` is an ordered mapping."""
    table = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in ("|",) else arr.dtype
        data = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        table.append({"name": name, "dtype": dtype.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    full = dict(header)
    full["arrays"] = table
    head = json.dumps(full, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)
    return path


def read_container(path):
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise InvalidArgument(f"{path}: not a container file")
    (n,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + n].decode("utf-8"))
    base = 8 + n
    arrays = {}
    for entry in header.pop("arrays"):
        start = base + entry["offset"]
        buf = raw[start:start + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(buf, dtype=np.dtype(entry["dtype"])).reshape(
            entry["shape"]).copy()
    return header, arrays


# --- tet grids -------------------------------------------------------------

def save_grid(path, grid):
    """Write the grid container and its ``.json`` metadata sidecar."""
    path = Path(path)
    header = {
        "kind": "tetgrid",
        "format_version": FORMAT_VERSION,
        "resolution": grid.resolution,
        "counts": {"vertices": grid.num_vertices, "tets": grid.num_tets},
    }
    write_container(path, header, {
        "rest_positions": grid.rest_positions.astype("<f8"),
        "offsets": grid.offsets.astype("<f8"),
        "sdf": grid.sdf.astype("<f8"),
        "tets": grid.tets.astype("<u4"),
    })
    sidecar = dict(header)
    sidecar.update({
        "offset_bound": grid.offset_bound,
        "sdf_min": float(grid.sdf.min()),
        "sdf_max": float(grid.sdf.max()),
        "inside_vertices": int((grid.sdf < 0).sum()),
    })
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def load_grid(path):
    header, arrays = read_container(path)
    if header.get("kind") != "tetgrid":
        raise InvalidArgument(f"{path}: not a tet grid container")
    if header.get("format_version") != FORMAT_VERSION:
        raise InvalidArgument(f"{path}: unsupported format version {header.get('format_version')}")
    return TetGrid(
        resolution=int(header["resolution"]),
        rest_positions=arrays["rest_positions"].astype(np.float64),
        offsets=arrays["offsets"].astype(np.float64),
        sdf=arrays["sdf"].astype(np.float64),
        tets=arrays["tets"].astype(np.int64),
    )


# --- OBJ -------------------------------------------------------------------

def write_obj(path, mesh):
    """Positions and triangles only; 17 significant digits round-trip exactly."""
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.positions.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")
    return path


def read_obj(path):
    positions, triangles = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            positions.append([float(v) for v in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) for tok in parts[1:]]
            idx = [i - 1 if i > 0 else len(positions) + i for i in idx]
            # fan-triangulate polygons
            for k in range(1, len(idx) - 1):
                triangles.append([idx[0], idx[k], idx[k + 1]])
    return SurfaceMesh(np.array(positions, dtype=np.float64).reshape(-1, 3),
                       np.array(triangles, dtype=np.int64).reshape(-1, 3))


# --- contours --------------------------------------------------------------

def write_contours(path, points, plane_ids):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "z", "plane_id"])
        for (x, y, z), pid in zip(np.asarray(points).tolist(), np.asarray(plane_ids).tolist()):
            writer.writerow([repr(x), repr(y), repr(z), int(pid)])
    return path


def read_contours(path):
    points, ids = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            points.append([float(row["x"]), float(row["y"]), float(row["z"])])
            ids.append(int(row["plane_id"]))
    return np.array(points, dtype=np.float64).reshape(-1, 3), np.array(ids, dtype=np.int64)
