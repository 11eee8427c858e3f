"""Signed distance sources: closed-form shapes, fitted networks, and homotopy slices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import InvalidInputError
from ..field import SirenNetwork, jet, spatial_jet

DEGENERATE_NORMAL = 1e-6
EIKONAL_SANITY = 0.05


def _points(p) -> np.ndarray:
    if isinstance(p, torch.Tensor):
        p = p.detach().numpy()
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != 3:
        raise InvalidInputError(f"expected 3-vectors, got shape {p.shape}")
    return p.reshape(-1, 3)


def _unit(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.linalg.norm(v, axis=-1)
    bad = n < DEGENERATE_NORMAL
    safe = np.where(bad, 1.0, n)
    return v / safe[:, None], bad


@dataclass(frozen=True)
class Sphere:
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.5

    def value_and_gradient(self, p):
        d = p - np.asarray(self.center)
        r = np.linalg.norm(d, axis=-1)
        return r - self.radius, d / np.where(r > 0, r, 1.0)[:, None]

    def area(self):
        return 4 * np.pi * self.radius**2


@dataclass(frozen=True)
class Box:
    center: tuple = (0.0, 0.0, 0.0)
    half_extents: tuple = (0.3, 0.3, 0.3)

    def value_and_gradient(self, p):
        d = p - np.asarray(self.center)
        q = np.abs(d) - np.asarray(self.half_extents)
        qpos = np.maximum(q, 0.0)
        outside_len = np.linalg.norm(qpos, axis=-1)
        inside = q.max(axis=-1)
        value = outside_len + np.minimum(inside, 0.0)
        sgn = np.sign(d)
        grad_out = sgn * qpos / np.where(outside_len > 0, outside_len, 1.0)[:, None]
        k = q.argmax(axis=-1)
        grad_in = np.zeros_like(p)
        grad_in[np.arange(len(p)), k] = sgn[np.arange(len(p)), k]
        grad = np.where((outside_len > 0)[:, None], grad_out, grad_in)
        return value, grad

    def area(self):
        hx, hy, hz = self.half_extents
        return 8 * (hx * hy + hy * hz + hx * hz)


@dataclass(frozen=True)
class Capsule:
    a: tuple = (-0.3, 0.0, 0.0)
    b: tuple = (0.3, 0.0, 0.0)
    radius: float = 0.1

    def value_and_gradient(self, p):
        a, b = np.asarray(self.a), np.asarray(self.b)
        ba = b - a
        h = np.clip(((p - a) @ ba) / (ba @ ba), 0.0, 1.0)
        d = p - (a + h[:, None] * ba)
        r = np.linalg.norm(d, axis=-1)
        return r - self.radius, d / np.where(r > 0, r, 1.0)[:, None]

    def area(self):
        length = np.linalg.norm(np.asarray(self.b) - np.asarray(self.a))
        return 4 * np.pi * self.radius**2 + 2 * np.pi * self.radius * length


@dataclass(frozen=True)
class Torus:
    """Torus around the z-axis through ``center``."""

    center: tuple = (0.0, 0.0, 0.0)
    major: float = 0.5
    minor: float = 0.15

    def value_and_gradient(self, p):
        d = p - np.asarray(self.center)
        rxy = np.linalg.norm(d[:, :2], axis=-1)
        q0 = rxy - self.major
        q = np.stack([q0, d[:, 2]], axis=-1)
        qn = np.linalg.norm(q, axis=-1)
        safe_q = np.where(qn > 0, qn, 1.0)
        safe_r = np.where(rxy > 0, rxy, 1.0)
        grad = np.stack(
            [q0 * d[:, 0] / safe_r, q0 * d[:, 1] / safe_r, d[:, 2]], axis=-1
        ) / safe_q[:, None]
        return qn - self.minor, grad

    def area(self):
        return 4 * np.pi**2 * self.major * self.minor


@dataclass(frozen=True)
class Dumbbell:
    """Two spheres joined by a capsule neck, combined with min (exact only outside)."""

    sphere_radius: float = 0.3
    offset: float = 0.45
    neck_radius: float = 0.12

    @property
    def parts(self):
        c = self.offset
        return (
            Sphere((-c, 0.0, 0.0), self.sphere_radius),
            Sphere((c, 0.0, 0.0), self.sphere_radius),
            Capsule((-c, 0.0, 0.0), (c, 0.0, 0.0), self.neck_radius),
        )

    def value_and_gradient(self, p):
        vals, grads = zip(*(part.value_and_gradient(p) for part in self.parts))
        vals = np.stack(vals)
        k = vals.argmin(axis=0)
        idx = np.arange(len(p))
        return vals[k, idx], np.stack(grads)[k, idx]


ANALYTIC_SHAPES = {"sphere": Sphere, "box": Box, "capsule": Capsule, "torus": Torus, "dumbbell": Dumbbell}


@dataclass(frozen=True)
class CloudFit:
    """A 3-input network fitted to an oriented point cloud."""

    cloud: object
    net: SirenNetwork
    check: bool = True

    def __post_init__(self):
        if self.net.input_dim != 3:
            raise InvalidInputError("CloudFit needs a network of input dimension 3")
        if self.check:
            err = eikonal_error(self)
            if err > EIKONAL_SANITY:
                raise InvalidInputError(
                    f"fitted network fails the Eikonal sanity check: mean |1-|grad g|| = {err:.4f} > {EIKONAL_SANITY}"
                )

    def value_and_gradient(self, p):
        with torch.no_grad():
            j = spatial_jet(self.net, p)
        return j.value.numpy(), j.grad.numpy()


@dataclass(frozen=True)
class Slice:
    """The time-t slice of a space-time network."""

    net: SirenNetwork
    time: float

    def __post_init__(self):
        if self.net.input_dim != 4:
            raise InvalidInputError("Slice needs a network of input dimension 4")

    def value_and_gradient(self, p):
        with torch.no_grad():
            j = jet(self.net, p, self.time)
        return j.value.numpy(), j.grad.numpy()


@dataclass(frozen=True)
class ClosedForm:
    """Any callable (p, t) -> value with an optional gradient, evaluated at a fixed time."""

    fn: object
    time: float = 0.0
    grad_fn: object = None

    def value_and_gradient(self, p):
        v = np.asarray(self.fn(p, self.time), dtype=np.float64)
        if self.grad_fn is not None:
            return v, np.asarray(self.grad_fn(p, self.time))
        h = 1e-6
        g = np.stack(
            [(np.asarray(self.fn(p + h * e, self.time)) - np.asarray(self.fn(p - h * e, self.time))) / (2 * h)
             for e in np.eye(3)],
            axis=-1,
        )
        return v, g


def sdf_eval(src, p) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Value, unit normal and degenerate-normal flags for points ``p`` (n, 3)."""
    p = _points(p)
    value, grad = src.value_and_gradient(p)
    normal, bad = _unit(np.asarray(grad, dtype=np.float64))
    return np.asarray(value, dtype=np.float64), normal, bad


def sdf_value(src, p) -> torch.Tensor:
    value, _ = src.value_and_gradient(_points(p))
    return torch.as_tensor(np.asarray(value, dtype=np.float64))


def eikonal_error(src, n: int = 1000, seed: int = 0) -> float:
    p = np.random.default_rng(seed).uniform(-1, 1, size=(n, 3))
    _, grad = src.value_and_gradient(p)
    return float(np.mean(np.abs(1 - np.linalg.norm(grad, axis=-1))))
