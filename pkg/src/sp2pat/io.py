"""Plain-text and binary serialization of fields and wave records."""

from __future__ import annotations

import csv
import struct

import numpy as np

from .acoustic import WaveRecord
from .mesh import Mesh2D

_MAGIC = b"WREC"
_HEADER = struct.Struct("<4sIId")  # magic, boundary nodes, samples per node, dt


def write_field_csv(mesh: Mesh2D, values, path, name: str = "value") -> None:
    """Rows of ``node, x, y, value`` (one column per field if ``values`` is 2-D)."""
    v = np.asarray(values, dtype=float)
    v = v[:, None] if v.ndim == 1 else v
    mesh.check_field(v[:, 0], name)
    names = [name] if v.shape[1] == 1 else [f"{name}_{j}" for j in range(v.shape[1])]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["node", "x", "y", *names])
        for k, (xy, row) in enumerate(zip(mesh.nodes, v)):
            wr.writerow([k, repr(float(xy[0])), repr(float(xy[1])), *map(repr, map(float, row))])


def read_field_csv(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    vals = data[:, 3:]
    return vals[:, 0] if vals.shape[1] == 1 else vals


def write_grid(mesh: Mesh2D, values, path) -> None:
    """Row-major ``(ny+1) x (nx+1)`` text grid, first row at ``y = y0``."""
    np.savetxt(path, mesh.grid(values), fmt="%.17g")


def write_record_csv(record: WaveRecord, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["time", "node", "value"])
        for k, t in enumerate(record.times):
            for i, node in enumerate(record.boundary_nodes):
                wr.writerow([repr(float(t)), int(node), repr(float(record.samples[i, k]))])


def read_record_csv(path) -> WaveRecord:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    times = np.unique(data[:, 0])
    nodes = list(dict.fromkeys(data[:, 1].astype(int)))
    samples = data[:, 2].reshape(len(times), len(nodes)).T
    dt = float(times[1] - times[0]) if len(times) > 1 else 0.0
    return WaveRecord(samples, np.array(nodes), dt, dt * (len(times) - 1))


def write_record_binary(record: WaveRecord, path) -> None:
    """Header (magic, counts, dt), node ids as int32, then float64 row-major samples."""
    nb, nt = record.samples.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, nb, nt, record.dt))
        fh.write(np.asarray(record.boundary_nodes, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(record.samples, dtype="<f8").tobytes())


def read_record_binary(path) -> WaveRecord:
    with open(path, "rb") as fh:
        magic, nb, nt, dt = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise ValueError(f"{path} is not a wave record file")
        nodes = np.frombuffer(fh.read(4 * nb), dtype="<i4").astype(np.int64)
        samples = np.frombuffer(fh.read(8 * nb * nt), dtype="<f8").reshape(nb, nt)
    return WaveRecord(samples.copy(), nodes, dt, dt * (nt - 1))
