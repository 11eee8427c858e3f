"""Oriented point cloud files: ASCII XYZ+normals and PLY (ascii / binary_little_endian)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import PointCloudError
from .sampling import OrientedPointCloud, SimilarityTransform

TARGET_HALF_EXTENT = 0.9

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def normalizing_transform(points: np.ndarray) -> SimilarityTransform:
    lo, hi = points.min(axis=0), points.max(axis=0)
    half = float((hi - lo).max()) / 2
    scale = TARGET_HALF_EXTENT / half if half > 0 else 1.0
    return SimilarityTransform(center=(lo + hi) / 2, scale=scale)


def _finish(points: np.ndarray, normals: np.ndarray) -> OrientedPointCloud:
    if len(points) == 0:
        raise PointCloudError("point cloud file contains no points")
    norms = np.linalg.norm(normals, axis=1)
    if np.any(norms == 0):
        raise PointCloudError(f"zero-length normal at point {int(np.argmin(norms))}")
    tr = normalizing_transform(points)
    return OrientedPointCloud(tr.apply(points), normals / norms[:, None], transform=tr)


def _read_xyz(path: Path) -> OrientedPointCloud:
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) == 3:
            raise PointCloudError(f"normals required: line {lineno} has only x y z")
        if len(parts) != 6:
            raise PointCloudError(f"malformed line {lineno}: expected 6 values, got {len(parts)}")
        try:
            rows.append([float(x) for x in parts])
        except ValueError:
            raise PointCloudError(f"malformed line {lineno}: non-numeric value") from None
    data = np.array(rows, dtype=np.float64).reshape(-1, 6)
    return _finish(data[:, :3], data[:, 3:])


def _read_ply(path: Path) -> OrientedPointCloud:
    raw = path.read_bytes()
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise PointCloudError("not a PLY file")
    header_end = raw.index(b"\n", end) + 1
    header = raw[:header_end].decode("ascii").splitlines()
    fmt, n_vertex, props, in_vertex = None, 0, [], False
    for lineno, line in enumerate(header, start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                n_vertex = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise PointCloudError(f"list property in vertex element (header line {lineno})")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
    names = [p[0] for p in props]
    for key in ("x", "y", "z"):
        if key not in names:
            raise PointCloudError(f"PLY vertex element lacks property {key}")
    if not all(k in names for k in ("nx", "ny", "nz")):
        raise PointCloudError("normals required: PLY vertex element lacks nx, ny, nz")

    if fmt == "ascii":
        body = raw[header_end:].decode("ascii").splitlines()
        rows = []
        first = len(header) + 1
        for i in range(n_vertex):
            if i >= len(body):
                raise PointCloudError(f"PLY truncated at line {first + i}")
            parts = body[i].split()
            if len(parts) < len(props):
                raise PointCloudError(f"malformed line {first + i}: expected {len(props)} values")
            try:
                rows.append([float(x) for x in parts[: len(props)]])
            except ValueError:
                raise PointCloudError(f"malformed line {first + i}: non-numeric value") from None
        table = np.array(rows, dtype=np.float64).reshape(-1, len(props))
        col = {n: table[:, k] for k, n in enumerate(names)}
    elif fmt == "binary_little_endian":
        dtype = np.dtype([(n, "<" + t) for n, t in props])
        need = dtype.itemsize * n_vertex
        if len(raw) - header_end < need:
            raise PointCloudError("PLY binary body truncated")
        arr = np.frombuffer(raw, dtype=dtype, count=n_vertex, offset=header_end)
        col = {n: arr[n].astype(np.float64) for n in names}
    else:
        raise PointCloudError(f"unsupported PLY format {fmt!r}")
    pts = np.stack([col["x"], col["y"], col["z"]], axis=1)
    nrm = np.stack([col["nx"], col["ny"], col["nz"]], axis=1)
    return _finish(pts, nrm)


def load_point_cloud(path) -> OrientedPointCloud:
    """Read an oriented cloud and map it into [-0.9, 0.9]^3 (transform kept on the result)."""
    path = Path(path)
    if not path.exists():
        raise PointCloudError(f"no such file: {path}")
    if path.suffix.lower() == ".ply":
        return _read_ply(path)
    return _read_xyz(path)


def save_xyz(cloud: OrientedPointCloud, path) -> None:
    data = np.hstack([cloud.points, cloud.normals])
    Path(path).write_text("".join(" ".join(f"{v:.9g}" for v in row) + "\n" for row in data))


def save_ply(cloud: OrientedPointCloud, path, binary: bool = False) -> None:
    n = len(cloud)
    header = (
        "ply\n"
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
        f"element vertex {n}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property double nx\nproperty double ny\nproperty double nz\n"
        "end_header\n"
    )
    data = np.hstack([cloud.points, cloud.normals])
    if binary:
        Path(path).write_bytes(header.encode("ascii") + data.astype("<f8").tobytes())
    else:
        body = "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in data)
        Path(path).write_text(header + body)
