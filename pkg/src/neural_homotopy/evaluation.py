"""Held-out constraint metrics and closed-form oracle comparisons."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import torch

from . import exact
from .errors import InvalidInputError
from .field import SirenNetwork, evaluate_chunked, jet
from .geometry import (
    chamfer,
    connected_components,
    marching_cubes,
    measure_radius,
    mesh_area,
    sample_cloud,
)
from .geometry.sampling import DOMAIN
from .geometry.sdf import sdf_eval
from .parallel import map_chunks
from .pde import ConstantField, PdeProblem, TwistField, pde_residual

CONSTRAINT_HEADER = ["constraint", "mean", "max", "n", "seed"]
ORACLE_HEADER = ["time", "expected", "measured", "abs_err"]


@dataclass
class ConstraintRow:
    constraint: str
    mean: float
    max: float
    n: int
    seed: int


@dataclass
class OracleRow:
    time: float
    expected: float
    measured: float
    abs_err: float
    missing: int = 0


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    oracles: dict = field(default_factory=dict)
    skipped: int = 0

    def row(self, name: str) -> ConstraintRow:
        for r in self.rows:
            if r.constraint == name:
                return r
        raise KeyError(name)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CONSTRAINT_HEADER)
            for r in self.rows:
                w.writerow([r.constraint, repr(r.mean), repr(r.max), r.n, r.seed])


def write_oracle_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ORACLE_HEADER)
        for r in rows:
            w.writerow([repr(r.time), repr(r.expected), repr(r.measured), repr(r.abs_err)])


def _stats(name, x, seed) -> ConstraintRow:
    x = np.abs(np.asarray(x, dtype=np.float64))
    return ConstraintRow(name, float(x.mean()), float(x.max()), int(x.size), int(seed))


def _net_at(net, p, t):
    x = np.concatenate([p, np.full((len(p), 1), float(t))], axis=1)
    return evaluate_chunked(net, x)


def evaluate_constraints(net: SirenNetwork, problem: PdeProblem, n: int = 1000, seed: int = 1,
                         train_seed: int | None = None) -> EvalReport:
    """Mean/max of |f(., t_i) - g_i| on and off the surfaces and of |F| over space-time.

    All samples are fresh draws from ``seed``, which must differ from the training seed.
    """
    if train_seed is not None and seed == train_seed:
        raise InvalidInputError("evaluation seed must differ from the training seed")
    rng = np.random.default_rng([seed, 424242])
    on_err, off_err = [], []
    for i, cond in enumerate(problem.conditions):
        k = n // len(problem.conditions) + (i < n % len(problem.conditions))
        cloud = sample_cloud(cond.source, k, seed=int(rng.integers(2**31)))
        pts = cloud.points if len(cloud) == k else cloud.points[rng.choice(len(cloud), k, replace=False)]
        g_on, _, _ = sdf_eval(cond.source, pts)
        on_err.append(_net_at(net, pts, cond.time) - g_on)
        off = rng.uniform(*DOMAIN, size=(k, 3))
        g_off, _, _ = sdf_eval(cond.source, off)
        off_err.append(_net_at(net, off, cond.time) - g_off)

    a, b = problem.interval
    p = rng.uniform(*DOMAIN, size=(n, 3))
    t = rng.uniform(a, b, size=n)

    def residuals(lo, hi):
        pt, tt = torch.as_tensor(p[lo:hi]), torch.as_tensor(t[lo:hi])
        with torch.no_grad():
            r, k = pde_residual(problem, jet(net, pt, tt), pt, tt)
        return r.numpy(), k

    chunks = map_chunks(residuals, n, 4096)
    res = [r for r, _ in chunks]
    skipped = sum(k for _, k in chunks)
    report = EvalReport(skipped=skipped)
    report.rows.append(_stats("on_surface", np.concatenate(on_err), seed))
    report.rows.append(_stats("off_surface", np.concatenate(off_err), seed))
    report.rows.append(_stats("pde", np.concatenate(res), seed))
    return report


# --- oracles ----------------------------------------------------------------

def mcf_sphere_check(net: SirenNetwork, alpha: float, r0: float, times, center=(0.0, 0.0, 0.0), k: int = 64):
    """Measured zero-level radius against sqrt(r0^2 - 4 alpha t)."""
    from .geometry import fibonacci_directions

    rows = []
    for t in times:
        expected = float(exact.shrinking_sphere_radius(r0, alpha, t))
        if not np.isfinite(expected):
            raise InvalidInputError(f"sphere has vanished before t={t}")
        roots = measure_radius(net, t, center, fibonacci_directions(k))
        missing = int(np.isnan(roots).sum())
        measured = float(np.nanmean(roots)) if missing < len(roots) else float("nan")
        rows.append(OracleRow(float(t), expected, measured, abs(measured - expected), missing))
    return rows


def _net_slice_field(net, t):
    return lambda p: _net_at(net, p, t)


def transport_check(net: SirenNetwork, field, g, times, resolution: int = 64, samples: int = 30000):
    """Chamfer distance between the mesh of f(., t) and the mesh of the transported initial SDF.

    ``g`` is a torch closed form p -> value; ``field`` a ConstantField or TwistField.
    """
    if isinstance(field, ConstantField):
        sol = exact.translated(g, field.v)
    elif isinstance(field, TwistField):
        sol = exact.twisted(g)
    else:
        raise InvalidInputError("transport oracle needs a constant or twist field")
    rows = []
    for t in times:
        m_net = marching_cubes(_net_slice_field(net, t), n=resolution)
        m_ref = marching_cubes(exact.as_numpy_field(sol, t), n=resolution)
        if m_net.empty:
            rows.append(OracleRow(float(t), 0.0, float("inf"), float("inf"), 1))
            continue
        c = chamfer(m_net, m_ref, n=samples)
        rows.append(OracleRow(float(t), 0.0, c, c))
    return rows


def interpolation_check(net: SirenNetwork, r1: float, r2: float, times, n: int = 1000, seed: int = 5,
                        center=(0.0, 0.0, 0.0)):
    """Value errors against g2 + (g1 - g2) e^{-t} and zero-level radius per time.

    Returns (value_rows, radius_rows): value rows are ConstraintRows named ``value_t=<t>``.
    """
    sol = exact.interpolation_spheres(r1, r2, center)
    rng = np.random.default_rng([seed, 99])
    value_rows, radius_rows = [], []
    for t in times:
        p = rng.uniform(*DOMAIN, size=(n, 3))
        ref = exact.as_numpy_field(sol, t)(p)
        value_rows.append(_stats(f"value_t={t:g}", _net_at(net, p, t) - ref, seed))
        expected = float(exact.interpolation_radius(r1, r2, t))
        roots = measure_radius(net, t, center)
        missing = int(np.isnan(roots).sum())
        measured = float(np.nanmean(roots)) if missing < len(roots) else float("nan")
        radius_rows.append(OracleRow(float(t), expected, measured, abs(measured - expected), missing))
    return value_rows, radius_rows


def slice_areas(fn_at_time, times, resolution: int = 96) -> list[float]:
    """Mesh area of the zero level of ``fn_at_time(t)`` (a point evaluator) for each t."""
    out = []
    for t in times:
        mesh = marching_cubes(fn_at_time(t), n=resolution)
        out.append(mesh_area(mesh) if not mesh.empty else 0.0)
    return out


def area_monotonicity_check(net: SirenNetwork, times, band: float = 0.02, strict: bool = False,
                            resolution: int = 96):
    """Areas at increasing times and whether they decrease.

    Non-strict: each step may grow by at most ``band`` x initial area. Strict: each
    step must shrink by more than ``band`` x initial area.
    """
    times = sorted(times)
    areas = slice_areas(lambda t: _net_slice_field(net, t), times, resolution)
    slack = band * areas[0]
    steps = np.diff(areas)
    ok = bool(np.all(steps < -slack)) if strict else bool(np.all(steps <= slack))
    return areas, ok


def component_counts(fn_at_time, times, resolution: int = 96) -> list[int]:
    return [connected_components(marching_cubes(fn_at_time(t), n=resolution)) for t in times]
