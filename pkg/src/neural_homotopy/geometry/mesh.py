"""Iso-surface extraction and mesh measurements."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc
from scipy.spatial import cKDTree
from skimage.measure import marching_cubes as _skimage_mc

from ..errors import InvalidInputError

AREA_EPS = 1e-12


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise InvalidInputError("triangle index out of range")

    @property
    def empty(self) -> bool:
        return len(self.triangles) == 0

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def grid_points(box=((-1, -1, -1), (1, 1, 1)), n: int = 64) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = np.asarray(box[0], dtype=np.float64), np.asarray(box[1], dtype=np.float64)
    """Vertices of a grid with ``n`` cells per axis, and the cell size."""
    axes = [np.linspace(lo[k], hi[k], n + 1) for k in range(3)]
    g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return g.reshape(-1, 3), (hi - lo) / n


def marching_cubes(field, box=((-1, -1, -1), (1, 1, 1)), n: int = 64, iso: float = 0.0) -> TriangleMesh:
    """Triangulate {field = iso} on a grid of n cells per axis over ``box``.

    ``field`` maps an (m, 3) array of points to m values.
    """
    if n < 2:
        raise InvalidInputError("resolution must be at least 2")
    pts, spacing = grid_points(box, n)
    vol = np.asarray(field(pts), dtype=np.float64).reshape(n + 1, n + 1, n + 1)
    if not np.all(np.isfinite(vol)):
        raise InvalidInputError("field is not finite on the grid")
    if vol.min() > iso or vol.max() < iso:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    verts, faces, normals, _ = _skimage_mc(vol, level=iso, spacing=tuple(spacing), method="lorensen")
    verts = verts + np.asarray(box[0], dtype=np.float64)
    mesh = TriangleMesh(verts, faces)
    keep = mesh.triangle_areas() > AREA_EPS
    # the field grows outward, so its gradient direction is the outward normal
    return TriangleMesh(verts, faces[keep], -normals)


def mesh_area(mesh: TriangleMesh) -> float:
    if mesh.empty:
        raise InvalidInputError("mesh is empty")
    return float(mesh.triangle_areas().sum())


def sample_surface(mesh: TriangleMesh, n: int, seed: int = 0) -> np.ndarray:
    """Area-uniform random points on the mesh."""
    if mesh.empty:
        raise InvalidInputError("mesh is empty")
    rng = np.random.default_rng(seed)
    areas = mesh.triangle_areas()
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    u, v = rng.uniform(size=(2, n))
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    a, b, c = (mesh.vertices[mesh.triangles[tri, k]] for k in range(3))
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


def chamfer(mesh_a: TriangleMesh, mesh_b: TriangleMesh, n: int = 30000, seed: int = 0) -> float:
    """Symmetric mean nearest-point distance between dense surface samplings."""
    pa = sample_surface(mesh_a, n, seed)
    pb = sample_surface(mesh_b, n, seed)
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    return float(0.5 * (d_ab.mean() + d_ba.mean()))


def connected_components(mesh: TriangleMesh) -> int:
    """Number of edge-connected triangle groups (isolated vertices are ignored)."""
    if mesh.empty:
        return 0
    t = mesh.triangles
    rows = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
    cols = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
    nv = len(mesh.vertices)
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(nv, nv))
    _, labels = _cc(adj, directed=False)
    return len(np.unique(labels[np.unique(t)]))


def write_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    has_n = mesh.normals is not None and len(mesh.normals) == len(mesh.vertices)
    if has_n:
        lines += [f"vn {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.normals]
        lines += [f"f {a + 1}//{a + 1} {b + 1}//{b + 1} {c + 1}//{c + 1}" for a, b, c in mesh.triangles]
    else:
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriangleMesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64))


def fibonacci_directions(k: int = 64) -> np.ndarray:
    i = np.arange(k) + 0.5
    z = 1 - 2 * i / k
    r = np.sqrt(1 - z * z)
    phi = np.pi * (3 - np.sqrt(5)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def ray_roots(fn, center, directions, s_max: float = 2.0, tol: float = 1e-8, max_iter: int = 60,
              return_iterations: bool = False):
    """Bisection for a sign change of s -> fn(center + s d) on [0, s_max], per direction.

    ``fn`` maps (m, 3) points to m values and must be negative at ``center``.
    Directions without a sign change get NaN.
    """
    center = np.asarray(center, dtype=np.float64)
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    lo = np.zeros(len(d))
    hi = np.full(len(d), s_max)
    f_lo = np.asarray(fn(center + lo[:, None] * d))
    f_hi = np.asarray(fn(center + hi[:, None] * d))
    ok = (f_lo < 0) & (f_hi > 0)
    mid = 0.5 * (lo + hi)
    done = ~ok
    iterations = 0
    for iterations in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        fm = np.asarray(fn(center + mid[:, None] * d))
        converged = (np.abs(fm) <= tol) | (hi - lo <= 2 * np.finfo(float).eps * s_max)
        done = done | converged
        if done.all():
            break
        go_hi = (fm > 0) & ~done
        go_lo = (fm <= 0) & ~done
        hi = np.where(go_hi, mid, hi)
        lo = np.where(go_lo, mid, lo)
    roots = np.where(ok, mid, np.nan)
    return (roots, iterations) if return_iterations else roots


def measure_radius(net, t: float, center=(0.0, 0.0, 0.0), directions=None, tol: float = 1e-8) -> np.ndarray:
    """Distances from ``center`` to the zero level set of f(., t) along each direction.

    Measures the network itself; NaN marks rays with no sign change on [0, 2].
    """
    from ..field import as_tensor, forward

    if net.input_dim != 4:
        raise InvalidInputError("measure_radius needs a space-time network")
    directions = fibonacci_directions(64) if directions is None else directions

    def fn(p):
        x = np.concatenate([p, np.full((len(p), 1), float(t))], axis=1)
        with torch.no_grad():
            return forward(net, as_tensor(x)).numpy()

    if fn(np.asarray(center, dtype=np.float64)[None])[0] >= 0:
        raise InvalidInputError("center must lie inside the surface (f(center, t) < 0)")
    return ray_roots(fn, center, directions, tol=tol)
