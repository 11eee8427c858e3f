"""Vector fields, PDE residuals and the homotopy training loss."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import torch

from .errors import DegenerateGradientError, InvalidInputError
from .field import Jet2, SirenNetwork, as_tensor, jet

EPS_GRAD = 1e-6
SOURCE_SINK_SIGMA2 = 0.18


# --- vector fields ----------------------------------------------------------

@dataclass(frozen=True)
class ConstantField:
    v: tuple[float, float, float]

    def __call__(self, p, t):
        p = as_tensor(p)
        return as_tensor(self.v).expand(p.shape)


@dataclass(frozen=True)
class TwistField:
    """Twist of space about the y-axis: V(x, y, z) = y * (-z, 0, x)."""

    def __call__(self, p, t):
        p = as_tensor(p)
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        return torch.stack([-y * z, torch.zeros_like(y), y * x], dim=-1)

    def flow(self, p, t):
        """Flow map: rotation about the y-axis by angle y * t."""
        p = as_tensor(p)
        t = as_tensor(t)
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        ang = y * t
        c, s = torch.cos(ang), torch.sin(ang)
        return torch.stack([c * x - s * z, y, s * x + c * z], dim=-1)


@dataclass(frozen=True)
class SourceSinkField:
    """Sum of Gaussian-weighted radial fields exp(-|p - c|^2 / sigma2) (p - c), one per center."""

    centers: tuple[tuple[float, float, float], ...]
    signs: tuple[float, ...] = (1.0, -1.0)
    sigma2: float = SOURCE_SINK_SIGMA2

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise InvalidInputError("sigma2 must be positive")
        if len(self.centers) != len(self.signs):
            raise InvalidInputError("one sign per center required")

    def __call__(self, p, t):
        p = as_tensor(p)
        out = torch.zeros_like(p)
        for c, s in zip(self.centers, self.signs):
            d = p - as_tensor(c)
            out = out + s * torch.exp(-(d * d).sum(-1, keepdim=True) / self.sigma2) * d
        return out


@dataclass(frozen=True)
class CustomField:
    fn: Callable
    description: str = "custom"

    def __call__(self, p, t):
        return as_tensor(self.fn(as_tensor(p), as_tensor(t)))


VectorField = ConstantField | TwistField | SourceSinkField | CustomField


def eval_field(v: VectorField, p, t=0.0) -> torch.Tensor:
    return v(p, t)


# --- problems ---------------------------------------------------------------

@dataclass(frozen=True)
class LevelSet:
    field: VectorField


@dataclass(frozen=True)
class MeanCurvature:
    alpha: float


@dataclass(frozen=True)
class Interpolation:
    target: object  # an SdfSource; g2 in the residual


@dataclass(frozen=True)
class Condition:
    time: float
    source: object  # SdfSource


@dataclass(frozen=True)
class PdeProblem:
    kind: LevelSet | MeanCurvature | Interpolation
    interval: tuple[float, float]
    conditions: tuple[Condition, ...]

    def __post_init__(self):
        a, b = self.interval
        if not a < b:
            raise InvalidInputError(f"empty time interval ({a}, {b})")
        if not self.conditions:
            raise InvalidInputError("at least one condition is required")
        times = [c.time for c in self.conditions]
        if len(set(times)) != len(times):
            raise InvalidInputError("condition times must be distinct")
        for tc in times:
            if not a <= tc <= b:
                raise InvalidInputError(f"condition time {tc} outside [{a}, {b}]")
        if isinstance(self.kind, Interpolation) and len(self.conditions) > 2:
            raise InvalidInputError("interpolation takes g1 and at most one extra data condition for g2")


@dataclass(frozen=True)
class LossWeights:
    pde: float = 1.0
    dirichlet: float = 100.0
    eikonal: float = 50.0
    neumann: float = 50.0

    def __post_init__(self):
        vals = (self.pde, self.dirichlet, self.eikonal, self.neumann)
        if not all(math.isfinite(v) and v >= 0 for v in vals):
            raise InvalidInputError("loss weights must be finite and nonnegative")
        if not any(vals):
            raise InvalidInputError("at least one loss weight must be positive")


# --- residuals --------------------------------------------------------------

def residual_level_set(j: Jet2, v) -> torch.Tensor:
    return j.dt + (j.grad * as_tensor(v)).sum(-1)


def nondegenerate(j: Jet2, eps: float = EPS_GRAD) -> torch.Tensor:
    return j.grad.norm(dim=-1) >= eps


def _curvature(j: Jet2) -> torch.Tensor:
    g = j.grad
    g2 = (g * g).sum(-1)
    tr = torch.diagonal(j.hess, dim1=-2, dim2=-1).sum(-1)
    ghg = torch.einsum("na,nab,nb->n", g, j.hess, g)
    return (g2 * tr - ghg) / g2.pow(1.5)


def mean_curvature(j: Jet2, eps: float = EPS_GRAD) -> torch.Tensor:
    """Divergence of grad f / |grad f|; positive on convex shapes with outward normals."""
    bad = ~nondegenerate(j, eps)
    if bool(bad.any()):
        raise DegenerateGradientError(
            f"{int(bad.sum())} samples have |grad f| < {eps}", count=int(bad.sum())
        )
    return _curvature(j)


def residual_mean_curvature(j: Jet2, alpha: float, eps: float = EPS_GRAD) -> torch.Tensor:
    return j.dt - alpha * j.grad.norm(dim=-1) * mean_curvature(j, eps)


def residual_interpolation(j: Jet2, g2_value) -> torch.Tensor:
    return j.dt - j.grad.norm(dim=-1) * (as_tensor(g2_value) - j.value)


def pde_residual(problem: PdeProblem, j: Jet2, p, t) -> tuple[torch.Tensor, int]:
    """Residual over a batch, with degenerate curvature samples dropped.

    Returns the residuals of the kept samples and the number skipped.
    """
    kind = problem.kind
    if isinstance(kind, LevelSet):
        return residual_level_set(j, kind.field(p, t)), 0
    if isinstance(kind, MeanCurvature):
        keep = nondegenerate(j)
        skipped = int((~keep).sum())
        return residual_mean_curvature(j.select(keep), kind.alpha), skipped
    if isinstance(kind, Interpolation):
        from .geometry import sdf_value

        g2 = sdf_value(kind.target, p)
        return residual_interpolation(j, g2), 0
    raise InvalidInputError(f"unknown PDE kind {kind!r}")


def needs_hessian(problem: PdeProblem) -> bool:
    return isinstance(problem.kind, MeanCurvature)


# --- loss -------------------------------------------------------------------

@dataclass
class LossTerms:
    total: torch.Tensor
    pde: float
    dirichlet: float
    eikonal: float
    neumann: float
    skipped: int
    components: dict = field(default_factory=dict)


def _penalty(x: torch.Tensor, mode: str) -> torch.Tensor:
    return x.abs() if mode == "l1" else x * x


def _mean(x: torch.Tensor) -> torch.Tensor:
    return x.mean() if x.numel() else x.new_zeros(())


def assemble_loss(
    net: SirenNetwork,
    problem: PdeProblem,
    batch,
    w: LossWeights | None = None,
    mode: str = "l1",
) -> LossTerms:
    """Weighted PDE + Dirichlet + Neumann + Eikonal loss on one minibatch.

    Differentiable with respect to whatever tensors ``net`` holds. Per-condition
    data terms are summed over conditions; each term is a Monte Carlo mean.
    """
    w = w or LossWeights()
    if mode not in ("l1", "squared"):
        raise InvalidInputError(f"unknown loss mode {mode!r}")
    if batch.n_free == 0 or batch.n_on == 0 or batch.n_off == 0:
        raise InvalidInputError("every batch partition must be nonempty")

    jf = jet(net, batch.free_p, batch.free_t, hessian=needs_hessian(problem))
    res, skipped = pde_residual(problem, jf, batch.free_p, batch.free_t)
    pde = _mean(_penalty(res, mode))

    jon = jet(net, batch.on_p, batch.on_t, hessian=False)
    joff = jet(net, batch.off_p, batch.off_t, hessian=False)
    dirichlet = jf.value.new_zeros(())
    eikonal = jf.value.new_zeros(())
    neumann = jf.value.new_zeros(())
    for i in range(len(problem.conditions)):
        on = batch.on_cond == i
        off = batch.off_cond == i
        if not bool(on.any()) and not bool(off.any()):
            continue
        j_on, j_off = jon.select(on), joff.select(off)
        dirichlet = dirichlet + _mean(_penalty(j_off.value - batch.off_sdf[off], mode))
        dirichlet = dirichlet + _mean(_penalty(j_on.value, mode))
        align = (j_on.grad * batch.on_normal[on]).sum(-1)
        neumann = neumann + _mean(_penalty(1 - align, mode))
        norms = torch.cat([j_on.grad.norm(dim=-1), j_off.grad.norm(dim=-1)])
        eikonal = eikonal + _mean(_penalty(1 - norms, mode))

    total = w.pde * pde + w.dirichlet * dirichlet + w.eikonal * eikonal + w.neumann * neumann
    return LossTerms(
        total=total,
        pde=float(pde.detach()),
        dirichlet=float(dirichlet.detach()),
        eikonal=float(eikonal.detach()),
        neumann=float(neumann.detach()),
        skipped=skipped,
    )
