"""Oriented point clouds and training minibatches."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import InvalidInputError
from .sdf import Box, Capsule, Dumbbell, Sphere, Torus, sdf_eval

DOMAIN = (-1.0, 1.0)
OFF_SURFACE_GAP = 1e-3
DEFAULT_SPLIT = (0.5, 0.25, 0.25)


@dataclass
class SimilarityTransform:
    """x_normalized = (x - center) * scale."""

    center: np.ndarray
    scale: float

    def apply(self, x):
        return (np.asarray(x) - self.center) * self.scale

    def inverse(self, x):
        return np.asarray(x) / self.scale + self.center


@dataclass
class OrientedPointCloud:
    points: np.ndarray
    normals: np.ndarray
    transform: SimilarityTransform | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise InvalidInputError("point cloud is empty")
        if self.points.shape != self.normals.shape:
            raise InvalidInputError("points and normals differ in length")
        norms = np.linalg.norm(self.normals, axis=1)
        if np.any(np.abs(norms - 1) > 1e-6):
            raise InvalidInputError("normals must be unit length")

    def __len__(self):
        return len(self.points)


# --- surface sampling -------------------------------------------------------

def _unit_vectors(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_sphere(s: Sphere, rng, n):
    return np.asarray(s.center) + s.radius * _unit_vectors(rng, n)


def _sample_box(s: Box, rng, n):
    h = np.asarray(s.half_extents, dtype=np.float64)
    # faces by axis: area of the pair of faces normal to axis k is 2 * 4 * h_i * h_j
    areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
    axis = rng.choice(3, size=n, p=areas / areas.sum())
    side = rng.choice([-1.0, 1.0], size=n)
    pts = rng.uniform(-1, 1, size=(n, 3)) * h
    pts[np.arange(n), axis] = side * h[axis]
    return pts + np.asarray(s.center)


def _perpendicular_frame(axis):
    axis = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0, 0]) if abs(axis[0]) < 0.9 else np.array([0, 1.0, 0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    return axis, u, np.cross(axis, u)


def _sample_capsule(s: Capsule, rng, n):
    a, b = np.asarray(s.a, dtype=np.float64), np.asarray(s.b, dtype=np.float64)
    length = np.linalg.norm(b - a)
    axis, u, v = _perpendicular_frame(b - a)
    cyl = 2 * np.pi * s.radius * length
    caps = 4 * np.pi * s.radius**2
    on_cyl = rng.uniform(size=n) < cyl / (cyl + caps)
    out = np.empty((n, 3))
    m = int(on_cyl.sum())
    h = rng.uniform(size=m)
    ang = rng.uniform(0, 2 * np.pi, size=m)
    out[on_cyl] = a + h[:, None] * (b - a) + s.radius * (np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * v)
    dirs = _unit_vectors(rng, n - m)
    centers = np.where((dirs @ axis < 0)[:, None], a, b)
    out[~on_cyl] = centers + s.radius * dirs
    return out


def _sample_torus(s: Torus, rng, n):
    out = []
    while sum(len(o) for o in out) < n:
        k = 2 * n
        theta = rng.uniform(0, 2 * np.pi, size=k)
        phi = rng.uniform(0, 2 * np.pi, size=k)
        keep = rng.uniform(size=k) < (s.major + s.minor * np.cos(phi)) / (s.major + s.minor)
        theta, phi = theta[keep], phi[keep]
        rad = s.major + s.minor * np.cos(phi)
        out.append(np.stack([rad * np.cos(theta), rad * np.sin(theta), s.minor * np.sin(phi)], axis=1))
    return np.concatenate(out)[:n] + np.asarray(s.center)


def _sample_dumbbell(s: Dumbbell, rng, n):
    parts = s.parts
    areas = np.array([p.area() for p in parts])
    out, have = [], 0
    while have < n:
        k = 2 * n
        which = rng.choice(len(parts), size=k, p=areas / areas.sum())
        cand = np.concatenate([_SAMPLERS[type(p)](p, rng, int((which == i).sum())) for i, p in enumerate(parts)])
        value, _, _ = sdf_eval(s, cand)
        cand = cand[np.abs(value) <= 1e-12]
        out.append(cand)
        have += len(cand)
    pts = np.concatenate(out)
    return pts[rng.permutation(len(pts))[:n]]


_SAMPLERS = {
    Sphere: _sample_sphere,
    Box: _sample_box,
    Capsule: _sample_capsule,
    Torus: _sample_torus,
    Dumbbell: _sample_dumbbell,
}


def _project_to_zero_set(src, pts, iters=8):
    for _ in range(iters):
        v, g = src.value_and_gradient(pts)
        g2 = np.maximum((g * g).sum(-1), 1e-12)
        pts = pts - (v / g2)[:, None] * g
    return pts


def _sample_implicit(src, rng, n):
    from .mesh import marching_cubes, sample_surface

    mesh = marching_cubes(lambda p: src.value_and_gradient(p)[0], n=96)
    if mesh.empty:
        raise InvalidInputError("zero level set is empty inside the domain")
    pts = sample_surface(mesh, n, seed=int(rng.integers(2**31)))
    return _project_to_zero_set(src, pts)


def sample_cloud(src, n: int, seed: int = 0) -> OrientedPointCloud:
    """Area-uniform surface samples with exact normals.

    Analytic shapes are sampled in closed form; network-backed sources return their
    own cloud when they carry one, else mesh samples projected onto the zero set.
    """
    if getattr(src, "cloud", None) is not None:
        return src.cloud
    rng = np.random.default_rng(seed)
    sampler = _SAMPLERS.get(type(src), _sample_implicit)
    pts = sampler(src, rng, int(n))
    _, normals, _ = sdf_eval(src, pts)
    return OrientedPointCloud(pts, normals)


# --- minibatches ------------------------------------------------------------

@dataclass
class SampleBatch:
    free_p: torch.Tensor
    free_t: torch.Tensor
    on_p: torch.Tensor
    on_normal: torch.Tensor
    on_t: torch.Tensor
    on_cond: torch.Tensor
    on_index: torch.Tensor
    off_p: torch.Tensor
    off_sdf: torch.Tensor
    off_t: torch.Tensor
    off_cond: torch.Tensor

    @property
    def n_free(self):
        return self.free_p.shape[0]

    @property
    def n_on(self):
        return self.on_p.shape[0]

    @property
    def n_off(self):
        return self.off_p.shape[0]


def split_counts(total: int, split=DEFAULT_SPLIT) -> tuple[int, int, int]:
    split = tuple(float(s) for s in split)
    if len(split) != 3 or any(s < 0 for s in split) or abs(sum(split) - 1) > 1e-9:
        raise InvalidInputError(f"split {split} must be three nonnegative ratios summing to 1")
    l2 = int(round(total * split[1]))
    l3 = int(round(total * split[2]))
    l1 = total - l2 - l3
    if min(l1, l2, l3) <= 0:
        raise InvalidInputError(f"batch of {total} is too small for split {split}")
    return l1, l2, l3


def _share(count: int, parts: int) -> list[int]:
    return [count // parts + (i < count % parts) for i in range(parts)]


def cloud_indices(size: int, count: int, seed: int, epoch: int, cond: int) -> np.ndarray:
    """Indices of the cloud points used at ``epoch``.

    Consecutive epochs walk through a fresh permutation of the cloud, so each
    point is used exactly once per pass before any repeats.
    """
    flat = epoch * count + np.arange(count)
    cycles = flat // size
    pos = flat % size
    out = np.empty(count, dtype=np.int64)
    for c in np.unique(cycles):
        perm = np.random.default_rng([seed, 7919, cond, int(c)]).permutation(size)
        sel = cycles == c
        out[sel] = perm[pos[sel]]
    return out


def _off_surface(src, rng, n):
    pts, vals = [], []
    have = 0
    while have < n:
        cand = rng.uniform(*DOMAIN, size=(2 * (n - have) + 8, 3))
        v, _, _ = sdf_eval(src, cand)
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("condition source returned non-finite distances")
        keep = np.abs(v) >= OFF_SURFACE_GAP
        pts.append(cand[keep])
        vals.append(v[keep])
        have += int(keep.sum())
    return np.concatenate(pts)[:n], np.concatenate(vals)[:n]


def draw_batch(problem, clouds, total: int, split=DEFAULT_SPLIT, seed: int = 0, epoch: int = 0) -> SampleBatch:
    """One minibatch of space-time, on-surface and off-surface samples.

    Deterministic in (seed, epoch). ``clouds[i]`` is the point cloud of condition i.
    """
    l1, l2, l3 = split_counts(total, split)
    conds = problem.conditions
    if len(clouds) != len(conds):
        raise InvalidInputError("one point cloud per condition required")
    rng = np.random.default_rng([seed, epoch])
    a, b = problem.interval

    free_p = rng.uniform(*DOMAIN, size=(l1, 3))
    free_t = rng.uniform(a, b, size=l1)

    on_p, on_n, on_t, on_c, on_i = [], [], [], [], []
    for i, (cond, cloud, k) in enumerate(zip(conds, clouds, _share(l2, len(conds)))):
        idx = cloud_indices(len(cloud), k, seed, epoch, i)
        on_p.append(cloud.points[idx])
        on_n.append(cloud.normals[idx])
        on_t.append(np.full(k, cond.time))
        on_c.append(np.full(k, i))
        on_i.append(idx)

    off_p, off_v, off_t, off_c = [], [], [], []
    for i, (cond, k) in enumerate(zip(conds, _share(l3, len(conds)))):
        pts, vals = _off_surface(cond.source, rng, k)
        off_p.append(pts)
        off_v.append(vals)
        off_t.append(np.full(k, cond.time))
        off_c.append(np.full(k, i))

    t = lambda xs: torch.as_tensor(np.concatenate(xs))
    return SampleBatch(
        free_p=torch.as_tensor(free_p),
        free_t=torch.as_tensor(free_t),
        on_p=t(on_p),
        on_normal=t(on_n),
        on_t=t(on_t).to(torch.float64),
        on_cond=t(on_c),
        on_index=t(on_i),
        off_p=t(off_p),
        off_sdf=t(off_v),
        off_t=t(off_t).to(torch.float64),
        off_cond=t(off_c),
    )
