"""Closed-form solutions of the supported PDEs and jets computed directly from them.

These are the oracles: they never touch a network. ``closed_form_jet`` differentiates
a torch expression with autograd, independently of the network jet recursion.
"""
from __future__ import annotations

import math

import numpy as np
import torch

from .field import Jet2, as_tensor
from .pde import TwistField


def closed_form_jet(fn, p, t) -> Jet2:
    """Jet of ``fn(p, t)`` (torch, batched over rows of p) by autograd."""
    p = as_tensor(p).reshape(-1, 3).clone().requires_grad_(True)
    t = as_tensor(t).reshape(-1)
    t = (t.expand(p.shape[0]) if t.numel() == 1 else t).clone().requires_grad_(True)
    value = fn(p, t)
    gp, gt = torch.autograd.grad(value.sum(), (p, t), create_graph=True, allow_unused=True)
    gt = torch.zeros_like(t) if gt is None else gt
    rows = []
    for a in range(3):
        r = None
        if gp[:, a].requires_grad:
            (r,) = torch.autograd.grad(gp[:, a].sum(), p, retain_graph=True, allow_unused=True)
        rows.append(torch.zeros_like(p) if r is None else r)
    hess = torch.stack(rows, dim=1)
    return Jet2(value.detach(), gt.detach(), gp.detach(), hess.detach())


def _norm(x):
    return torch.sqrt((x * x).sum(-1))


def sphere_sdf(center=(0.0, 0.0, 0.0), radius=0.5):
    c = as_tensor(center)
    return lambda p: _norm(p - c) - radius


def shrinking_sphere(r0: float, alpha: float, center=(0.0, 0.0, 0.0)):
    """Level-set mean-curvature solution with f(., 0) = |p - c| - r0.

    Every level set is a sphere obeying d(rho)/dt = -2 alpha / rho; the zero level
    has radius sqrt(r0^2 - 4 alpha t).
    """
    c = as_tensor(center)

    def f(p, t):
        d = p - c
        return torch.sqrt((d * d).sum(-1) + 4 * alpha * t) - r0

    return f


def shrinking_sphere_radius(r0: float, alpha: float, t):
    """Zero-level radius; NaN once the sphere has vanished."""
    with np.errstate(invalid="ignore"):
        return np.sqrt(r0**2 - 4 * alpha * np.asarray(t, dtype=np.float64))


def translated(g, v):
    """f(p, t) = g(p - t v): transport along a constant field."""
    v = as_tensor(v)
    return lambda p, t: g(p - t[..., None] * v)


def twisted(g):
    """f(p, t) = g(Phi_{-t}(p)) for the twist about the y-axis."""
    twist = TwistField()
    return lambda p, t: g(twist.flow(p, -t))


def interpolation_spheres(r1: float, r2: float, center=(0.0, 0.0, 0.0)):
    """f = g2 + (g1 - g2) exp(-t) for concentric sphere SDFs g1, g2."""
    g1, g2 = sphere_sdf(center, r1), sphere_sdf(center, r2)
    return lambda p, t: g2(p) + (g1(p) - g2(p)) * torch.exp(-t)


def interpolation_radius(r1: float, r2: float, t):
    return r2 - (r2 - r1) * np.exp(-np.asarray(t, dtype=np.float64))


def dumbbell_mcf(shape, alpha: float):
    """Min-union of each primitive's own shrinking closed form.

    Spheres shrink as sqrt(r^2 - 4 alpha t), the neck as a cylinder sqrt(r^2 - 2 alpha t).
    Only the topology of the result is meaningful: the neck vanishes first.
    """
    s1, s2, neck = shape.parts

    def f(p, t):
        p = np.asarray(p, dtype=np.float64)
        out = []
        for s in (s1, s2):
            r2 = s.radius**2 - 4 * alpha * t
            d = np.linalg.norm(p - np.asarray(s.center), axis=-1)
            out.append(d - math.sqrt(r2) if r2 > 0 else d + 1.0)
        r2 = neck.radius**2 - 2 * alpha * t
        v, _ = neck.value_and_gradient(p)
        out.append(v + neck.radius - math.sqrt(r2) if r2 > 0 else v + neck.radius + 1.0)
        return np.min(out, axis=0)

    return f


def as_numpy_field(fn, t):
    """Wrap a torch closed form (p, t) -> value as a numpy point evaluator at fixed t."""

    def field(p):
        with torch.no_grad():
            pt = as_tensor(p)
            return fn(pt, torch.full((pt.shape[0],), float(t), dtype=torch.float64)).numpy()

    return field
