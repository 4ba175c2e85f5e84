"""Deterministic CSV / manifest / binary-trajectory emission.

CSV contract: header row always present, LF line endings, floats at 17
significant digits so round-trips are exact and reruns byte-identical.
"""

import hashlib
import json
import struct
import time
from pathlib import Path

import numpy as np

from . import __version__

TRAJECTORY_MAGIC = b"PECT"
TRAJECTORY_VERSION = 1


def format_value(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path, header, rows):
    """Write rows (iterables or dicts keyed by header) to a CSV file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        if isinstance(row, dict):
            row = [row[h] for h in header]
        lines.append(",".join(format_value(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="ascii", newline="\n")
    return path


def write_trajectory_csv(path, traj):
    """Columns: t, then per-axis coordinates, then y, z."""
    mesh = traj.mesh
    pts = mesh.coords()
    axes = ["x"] if mesh.dimension == 1 else [f"x{a}" for a in range(mesh.dimension)]
    header = ["t"] + axes + ["y", "z"]
    rows = []
    for n, tn in enumerate(traj.t):
        for i in range(mesh.ndof):
            rows.append([tn] + list(pts[i]) + [traj.y[n, i], traj.z[n, i]])
    return write_csv(path, header, rows)


def write_trajectory_binary(path, traj):
    """Compact dump: magic 'PECT', u32 version, u32 dim, u32 per-axis
    counts, u32 nt, f64 extents, f64 T, then y and z as little-endian
    f64 arrays of shape (nt+1, ndof), C order."""
    mesh = traj.mesh
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(TRAJECTORY_MAGIC)
        f.write(struct.pack("<II", TRAJECTORY_VERSION, mesh.dimension))
        for c in mesh.counts:
            f.write(struct.pack("<I", c))
        f.write(struct.pack("<I", traj.nt))
        for e in mesh.extents:
            f.write(struct.pack("<d", e))
        f.write(struct.pack("<d", float(traj.t[-1])))
        f.write(np.ascontiguousarray(traj.y, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(traj.z, dtype="<f8").tobytes())
    return path


def read_trajectory_binary(path):
    """Inverse of write_trajectory_binary; returns a Trajectory."""
    from .mesh import build_mesh
    from .stepping import Trajectory, time_nodes

    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != TRAJECTORY_MAGIC:
            raise ValueError(f"bad magic {magic!r} in {path}")
        version, dim = struct.unpack("<II", f.read(8))
        if version != TRAJECTORY_VERSION:
            raise ValueError(f"unsupported trajectory version {version}")
        counts = [struct.unpack("<I", f.read(4))[0] for _ in range(dim)]
        nt = struct.unpack("<I", f.read(4))[0]
        extents = [struct.unpack("<d", f.read(8))[0] for _ in range(dim)]
        T = struct.unpack("<d", f.read(8))[0]
        mesh = build_mesh(dim, extents, counts)
        n = mesh.ndof
        y = np.frombuffer(f.read(8 * (nt + 1) * n), dtype="<f8").reshape(nt + 1, n)
        z = np.frombuffer(f.read(8 * (nt + 1) * n), dtype="<f8").reshape(nt + 1, n)
    return Trajectory(time_nodes(T, nt), y.copy(), z.copy(), mesh)


def config_hash(config):
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


class RunManifest:
    """Collects per-stage wall clock and emitted files for one run."""

    def __init__(self, config, kernel_flavor, tolerances=None):
        self.data = {
            "artifact_version": __version__,
            "config_hash": config_hash(config),
            "kernel": kernel_flavor,
            "tolerances": tolerances or {},
            "stages": {},
            "files": [],
        }
        self._t0 = {}

    def start(self, stage):
        self._t0[stage] = time.perf_counter()

    def stop(self, stage):
        self.data["stages"][stage] = time.perf_counter() - self._t0.pop(stage)

    def add_file(self, path):
        self.data["files"].append(str(path))

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        return path
