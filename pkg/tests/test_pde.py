import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from neural_homotopy import exact
from neural_homotopy.errors import DegenerateGradientError, InvalidInputError
from neural_homotopy.field import Jet2, SirenNetwork, init_from_condition, init_standard, jet
from neural_homotopy.geometry import Sphere, draw_batch, sample_cloud
from neural_homotopy.optim import FitConfig, fit_condition
from neural_homotopy.pde import (
    Condition,
    ConstantField,
    Interpolation,
    LevelSet,
    LossWeights,
    MeanCurvature,
    PdeProblem,
    SourceSinkField,
    TwistField,
    assemble_loss,
    eval_field,
    mean_curvature,
    pde_residual,
    residual_interpolation,
    residual_level_set,
    residual_mean_curvature,
)


def scalar_jet(value=0.0, dt=0.0, grad=(1.0, 0.0, 0.0), hess=None):
    hess = torch.zeros(3, 3) if hess is None else torch.as_tensor(hess, dtype=torch.float64)
    t = lambda x: torch.as_tensor([x], dtype=torch.float64)
    return Jet2(t(value), t(dt), torch.as_tensor([grad], dtype=torch.float64), hess[None])


def points(rng, n=100, lo=-1, hi=1):
    return torch.as_tensor(rng.uniform(lo, hi, (n, 3))), torch.as_tensor(rng.uniform(0, 1, n))


# --- vector fields -----------------------------------------------------------

def test_twist_values():
    tw = TwistField()
    assert torch.allclose(eval_field(tw, [1.0, 1.0, 0.0]), torch.tensor([0.0, 0.0, 1.0]))
    assert torch.all(eval_field(tw, [0.3, 0.0, -0.7]) == 0)


def test_twist_flow_integrates_field(rng):
    tw = TwistField()
    p = torch.as_tensor(rng.uniform(-1, 1, (20, 3)))
    h = 1e-6
    deriv = (tw.flow(p, 0.3 + h) - tw.flow(p, 0.3 - h)) / (2 * h)
    assert torch.allclose(deriv, tw(tw.flow(p, 0.3), 0.3), atol=1e-8)


def test_source_sink_single_source():
    f = SourceSinkField(((0.0, 0.0, 0.0),), (1.0,))
    v = eval_field(f, [0.3, 0.0, 0.0])
    assert v[0].item() == pytest.approx(math.exp(-0.5) * 0.3)
    assert v[0].item() == pytest.approx(0.18196, abs=1e-5)
    assert v[1].item() == v[2].item() == 0


def test_source_sink_is_source_minus_sink():
    f = SourceSinkField(((0.2, 0, 0), (-0.2, 0, 0)))
    p = np.array([0.1, 0.3, -0.2])
    ref = np.zeros(3)
    for c, s in (((0.2, 0, 0), 1), ((-0.2, 0, 0), -1)):
        d = p - np.array(c)
        ref += s * math.exp(-d @ d / 0.18) * d
    assert np.allclose(eval_field(f, p).numpy(), ref, atol=1e-15)


def test_source_sink_rejects_bad_bandwidth():
    with pytest.raises(InvalidInputError):
        SourceSinkField(((0, 0, 0),), (1.0,), sigma2=0.0)


def test_constant_field():
    assert torch.equal(eval_field(ConstantField((0.2, 0, 0)), [0.5, 0.5, 0.5]), torch.tensor([0.2, 0.0, 0.0]))


# --- problem and weights validation ------------------------------------------

@pytest.mark.parametrize(
    "interval,times",
    [((0.0, 0.0), (0.0,)), ((1.0, 0.0), (0.0,)), ((0.0, 1.0), ()), ((0.0, 1.0), (0.5, 0.5)), ((0.0, 1.0), (2.0,))],
)
def test_problem_validation(interval, times):
    conds = tuple(Condition(t, Sphere()) for t in times)
    with pytest.raises(InvalidInputError):
        PdeProblem(MeanCurvature(0.05), interval, conds)


def test_interpolation_allows_at_most_two_conditions():
    conds = tuple(Condition(t, Sphere()) for t in (0.0, 0.5, 1.0))
    with pytest.raises(InvalidInputError):
        PdeProblem(Interpolation(Sphere()), (0.0, 1.0), conds)


@pytest.mark.parametrize("w", [(0, 0, 0, 0), (-1, 1, 1, 1), (math.nan, 1, 1, 1), (math.inf, 1, 1, 1)])
def test_loss_weight_validation(w):
    with pytest.raises(InvalidInputError):
        LossWeights(*w)


# --- level-set residual --------------------------------------------------------

def test_level_set_cancellation():
    j = scalar_jet(dt=1.0, grad=(1.0, 0.0, 0.0))
    assert residual_level_set(j, torch.tensor([-1.0, 0.0, 0.0])).item() == 0.0


def test_translated_sphere_is_exact(rng):
    v = torch.tensor([0.2, -0.1, 0.3])
    sol = exact.translated(exact.sphere_sdf((0.1, 0, 0), 0.4), v)
    p, t = points(rng)
    j = exact.closed_form_jet(sol, p, t)
    assert residual_level_set(j, v).abs().max().item() <= 1e-9


def test_twisted_sphere_is_exact(rng):
    sol = exact.twisted(exact.sphere_sdf((0.3, 0.1, 0.0), 0.4))
    p, t = points(rng)
    j = exact.closed_form_jet(sol, p, t)
    assert residual_level_set(j, TwistField()(p, t)).abs().max().item() <= 1e-8


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=10, max_size=10))
def test_level_set_rotation_invariance(xs):
    a = torch.tensor(xs[:4], dtype=torch.float64)
    q = a / a.norm().clamp_min(1e-9) if a.norm() > 1e-3 else torch.tensor([1.0, 0, 0, 0])
    w, x, y, z = q
    rot = torch.stack([
        torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)]),
        torch.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)]),
        torch.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)]),
    ])
    grad, v = torch.tensor(xs[4:7]), torch.tensor(xs[7:10])
    j1 = scalar_jet(dt=0.3, grad=tuple(grad.tolist()))
    j2 = scalar_jet(dt=0.3, grad=tuple((rot @ grad).tolist()))
    assert residual_level_set(j1, v).item() == pytest.approx(residual_level_set(j2, rot @ v).item(), abs=1e-12)


# --- curvature ---------------------------------------------------------------

@pytest.mark.parametrize("rho", [0.2, 0.5, 0.9])
def test_sphere_curvature(rho, rng):
    d = rng.normal(size=3)
    p = torch.as_tensor(rho * d / np.linalg.norm(d))
    j = exact.closed_form_jet(lambda q, t: exact.sphere_sdf((0, 0, 0), 0.5)(q), p, 0.0)
    assert mean_curvature(j).item() == pytest.approx(2 / rho, rel=1e-12)


def test_plane_curvature():
    j = exact.closed_form_jet(lambda q, t: q[:, 0], torch.tensor([0.3, -0.2, 0.5]), 0.0)
    assert mean_curvature(j).item() == 0.0


@pytest.mark.parametrize("rho", [0.25, 0.6])
def test_cylinder_curvature(rho):
    cyl = lambda q, t: torch.sqrt(q[:, 0] ** 2 + q[:, 1] ** 2) - 0.4
    j = exact.closed_form_jet(cyl, torch.tensor([rho * 0.6, rho * 0.8, 0.3]), 0.0)
    assert mean_curvature(j).item() == pytest.approx(1 / rho, rel=1e-12)


def test_curvature_scales_inversely(rng):
    g = rng.normal(size=3)
    h = rng.normal(size=(3, 3))
    h = h + h.T
    s = 2.5
    k1 = mean_curvature(scalar_jet(grad=tuple(g), hess=h)).item()
    k2 = mean_curvature(scalar_jet(grad=tuple(g), hess=h / s)).item()
    assert k2 == pytest.approx(k1 / s, rel=1e-12)


def test_degenerate_gradient_raises_with_count():
    j = scalar_jet(grad=(1e-8, 0.0, 0.0))
    with pytest.raises(DegenerateGradientError) as info:
        mean_curvature(j)
    assert info.value.count == 1


def test_degenerate_samples_are_skipped_and_counted():
    jets = [scalar_jet(grad=(1.0, 0, 0)), scalar_jet(grad=(0.0, 0, 0)), scalar_jet(grad=(0, 2.0, 0))]
    j = Jet2(*(torch.cat([getattr(x, f) for x in jets]) for f in ("value", "dt", "grad", "hess")))
    prob = PdeProblem(MeanCurvature(0.1), (0.0, 1.0), (Condition(0.0, Sphere()),))
    res, skipped = pde_residual(prob, j, torch.zeros(3, 3), torch.zeros(3))
    assert skipped == 1 and res.shape == (2,)


# --- mean curvature residual -----------------------------------------------------

def test_mcf_arithmetic_identity():
    j = scalar_jet(dt=0.2, grad=(1.0, 0, 0), hess=np.diag([0.0, 1.0, 1.0]))
    assert mean_curvature(j).item() == pytest.approx(2.0)
    assert residual_mean_curvature(j, 0.1).item() == pytest.approx(0.0, abs=1e-15)


def test_static_plane_is_mcf_solution(rng):
    p, t = points(rng, 10)
    j = exact.closed_form_jet(lambda q, s: q[:, 0], p, t)
    assert residual_mean_curvature(j, 0.3).abs().max().item() == 0.0


def test_shrinking_sphere_is_exact(rng):
    r0, alpha = 0.5, 0.05
    p, t = points(rng)
    j = exact.closed_form_jet(exact.shrinking_sphere(r0, alpha), p, t * 0.5)
    assert residual_mean_curvature(j, alpha).abs().max().item() <= 1e-8


def test_moving_radius_form_is_exact_on_its_zero_level(rng):
    """|p| - sqrt(r0^2 - 4 alpha t) solves the flow on the zero level set only."""
    r0, alpha = 0.5, 0.05
    f = lambda q, s: q.norm(dim=-1) - torch.sqrt(r0**2 - 4 * alpha * s)
    t = torch.as_tensor(rng.uniform(0, 0.5, 100))
    d = torch.as_tensor(rng.normal(size=(100, 3)))
    p = d / d.norm(dim=-1, keepdim=True) * torch.sqrt(r0**2 - 4 * alpha * t)[:, None]
    j = exact.closed_form_jet(f, p, t)
    assert residual_mean_curvature(j, alpha).abs().max().item() <= 1e-8
    off = exact.closed_form_jet(f, 1.5 * p, t)
    assert residual_mean_curvature(off, alpha).abs().max().item() > 1e-3


# --- interpolation residual ------------------------------------------------------

def test_interpolation_arithmetic_identity():
    j = scalar_jet(value=1.0, dt=-0.5, grad=(0.0, 1.0, 0.0))
    assert residual_interpolation(j, 0.5).item() == 0.0


def test_interpolation_fixed_point():
    assert residual_interpolation(scalar_jet(value=0.3, dt=0.0), 0.3).item() == 0.0


def test_interpolation_closed_form_is_exact(rng):
    sol = exact.interpolation_spheres(0.3, 0.6)
    p, t = points(rng)
    j = exact.closed_form_jet(sol, p, t)
    g2 = p.norm(dim=-1) - 0.6
    assert residual_interpolation(j, g2).abs().max().item() <= 1e-8


@settings(max_examples=100, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.01, 3))
def test_interpolation_inflates_inside(value, g2, gnorm):
    r = residual_interpolation(scalar_jet(value=value, dt=0.0, grad=(gnorm, 0, 0)), g2).item()
    if g2 > value:
        assert r < 0
    else:
        assert r >= 0


# --- loss ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def sphere_fit():
    return fit_condition(Sphere((0, 0, 0), 0.5), FitConfig(widths=(3, 32, 32), omega0=5.0, epochs=800, lr=1e-3, seed=2))


def _batch(problem, total=400, seed=0, epoch=0):
    clouds = [sample_cloud(c.source, 2000, seed=3) for c in problem.conditions]
    return draw_batch(problem, clouds, total, seed=seed, epoch=epoch)


def test_embedded_fit_has_zero_transport_residual(sphere_fit):
    sphere = Sphere((0, 0, 0), 0.5)
    prob = PdeProblem(LevelSet(ConstantField((0.0, 0.0, 0.0))), (0.0, 1.0), (Condition(0.0, sphere),))
    f = init_from_condition(sphere_fit, (4, 48, 48))
    batch = _batch(prob)
    terms = assemble_loss(f, prob, batch)
    assert terms.pde <= 1e-9

    c = sample_cloud(sphere, 1000, seed=9)
    jg = jet(f, c.points, 0.0)
    fit_dirichlet = jg.value.abs().mean().item()
    fit_neumann = (1 - (jg.grad * torch.as_tensor(c.normals)).sum(-1)).abs().mean().item()
    assert terms.dirichlet <= 3 * fit_dirichlet + 5e-3
    assert terms.neumann <= 3 * fit_neumann + 5e-3



def test_exact_transport_has_zero_pde_loss(rng):
    v = (0.2, 0.0, 0.0)
    sol = exact.translated(exact.sphere_sdf((0, 0, 0), 0.4), torch.tensor(v))
    prob = PdeProblem(LevelSet(ConstantField(v)), (0.0, 1.0), (Condition(0.0, Sphere((0, 0, 0), 0.4)),))
    batch = _batch(prob)
    j = exact.closed_form_jet(sol, batch.free_p, batch.free_t)
    res, _ = pde_residual(prob, j, batch.free_p, batch.free_t)
    loss = 1.0 * res.abs().mean() + 0.0
    assert loss.item() <= 1e-8


def test_pde_term_is_mean_absolute_residual(small_net):
    prob = PdeProblem(MeanCurvature(0.05), (0.0, 0.5), (Condition(0.0, Sphere()),))
    batch = _batch(prob)
    terms = assemble_loss(small_net, prob, batch, LossWeights(1, 0, 0, 0))
    per_sample = []
    for p, t in zip(batch.free_p, batch.free_t):
        j = jet(small_net, p[None], t[None])
        per_sample.append(abs(residual_mean_curvature(j, 0.05).item()))
    assert terms.pde == pytest.approx(sum(per_sample) / len(per_sample), rel=1e-12)
    assert terms.total.item() == pytest.approx(terms.pde, rel=1e-12)


def test_loss_is_nonnegative_and_squared_mode(small_net):
    prob = PdeProblem(LevelSet(TwistField()), (0.0, 1.0), (Condition(0.0, Sphere()),))
    batch = _batch(prob)
    l1 = assemble_loss(small_net, prob, batch)
    sq = assemble_loss(small_net, prob, batch, mode="squared")
    assert l1.total.item() >= 0 and sq.total.item() >= 0
    assert l1.total.item() != sq.total.item()
    with pytest.raises(InvalidInputError):
        assemble_loss(small_net, prob, batch, mode="huber")


def test_loss_parameter_gradient_matches_finite_differences(rng):
    net = init_standard([4, 8, 8], omega0=2.0, seed=4)
    prob = PdeProblem(MeanCurvature(0.05), (0.0, 0.5), (Condition(0.0, Sphere((0, 0, 0), 0.5)),))
    batch = _batch(prob, total=16)
    w = LossWeights()
    fn = lambda n: assemble_loss(n, prob, batch, w, mode="squared").total
    leaves = {k: v.clone().requires_grad_(True) for k, v in net.named_parameters().items()}
    got = torch.autograd.grad(fn(SirenNetwork.from_parameters(leaves, net.omega0)), list(leaves.values()))
    h = 1e-6
    num, den = 0.0, 0.0
    for (name, p), g in zip(leaves.items(), got):
        base = {k: v.detach().clone() for k, v in leaves.items()}
        flat = base[name].view(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + h
            up = fn(SirenNetwork.from_parameters(base, net.omega0)).item()
            flat[i] = old - h
            dn = fn(SirenNetwork.from_parameters(base, net.omega0)).item()
            flat[i] = old
            fd = (up - dn) / (2 * h)
            num = max(num, abs(g.reshape(-1)[i].item() - fd))
            den = max(den, abs(fd))
    assert num / den <= 1e-3


def test_interpolation_loss_uses_target(small_net):
    prob = PdeProblem(Interpolation(Sphere((0, 0, 0), 0.6)), (0.0, 1.0), (Condition(0.0, Sphere((0, 0, 0), 0.3)),))
    terms = assemble_loss(small_net, prob, _batch(prob))
    assert math.isfinite(terms.total.item()) and terms.pde > 0
