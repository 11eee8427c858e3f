import csv
import math

import numpy as np
import pytest
import torch

from neural_homotopy import exact
from neural_homotopy.errors import InvalidInputError
from neural_homotopy.evaluation import (
    CONSTRAINT_HEADER,
    ORACLE_HEADER,
    EvalReport,
    area_monotonicity_check,
    component_counts,
    evaluate_constraints,
    interpolation_check,
    mcf_sphere_check,
    slice_areas,
    transport_check,
    write_oracle_csv,
)
from neural_homotopy.field import init_from_condition, init_standard
from neural_homotopy.geometry import Dumbbell, Sphere, marching_cubes
from neural_homotopy.optim import FitConfig, fit_condition
from neural_homotopy.pde import Condition, ConstantField, LevelSet, MeanCurvature, PdeProblem, TwistField

SPHERE = Sphere((0, 0, 0), 0.5)


@pytest.fixture(scope="module")
def embedded_sphere():
    g = fit_condition(SPHERE, FitConfig(widths=(3, 32, 32), omega0=5.0, epochs=1500, lr=1e-3, seed=1))
    return g, init_from_condition(g, (4, 32, 32))


def test_constraint_report_on_an_exact_static_solution(embedded_sphere, tmp_path):
    _, f = embedded_sphere
    prob = PdeProblem(LevelSet(ConstantField((0.0, 0.0, 0.0))), (0.0, 1.0), (Condition(0.0, SPHERE),))
    report = evaluate_constraints(f, prob, n=1000, seed=11, train_seed=1)
    assert [r.constraint for r in report.rows] == ["on_surface", "off_surface", "pde"]
    assert report.row("pde").max <= 1e-8
    for r in report.rows:
        assert r.max >= r.mean >= 0 and r.n == 1000 and r.seed == 11
    report.write_csv(tmp_path / "c.csv")
    with open(tmp_path / "c.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CONSTRAINT_HEADER == ["constraint", "mean", "max", "n", "seed"]
    assert len(rows) == 4


def test_evaluation_seed_must_differ_from_training(embedded_sphere):
    _, f = embedded_sphere
    prob = PdeProblem(MeanCurvature(0.05), (0.0, 0.5), (Condition(0.0, SPHERE),))
    with pytest.raises(InvalidInputError):
        evaluate_constraints(f, prob, n=10, seed=3, train_seed=3)


def test_evaluation_is_reproducible(embedded_sphere):
    _, f = embedded_sphere
    prob = PdeProblem(MeanCurvature(0.05), (0.0, 0.5), (Condition(0.0, SPHERE),))
    a = evaluate_constraints(f, prob, n=200, seed=4)
    b = evaluate_constraints(f, prob, n=200, seed=4)
    assert [(r.mean, r.max) for r in a.rows] == [(r.mean, r.max) for r in b.rows]


# --- closed forms used as oracles -------------------------------------------------

def test_shrinking_radius_values():
    assert exact.shrinking_sphere_radius(0.5, 0.05, 0.0) == 0.5
    assert exact.shrinking_sphere_radius(0.5, 0.05, 0.4) == pytest.approx(math.sqrt(0.17))
    assert exact.shrinking_sphere_radius(0.5, 0.05, 0.4) == pytest.approx(0.41231, abs=1e-5)
    assert np.all(exact.shrinking_sphere_radius(0.5, 0.0, [0, 0.3, 1]) == 0.5)


def test_interpolation_closed_form_limits(rng):
    sol = exact.interpolation_spheres(0.3, 0.6)
    p = torch.as_tensor(rng.uniform(-1, 1, (50, 3)))
    r = p.norm(dim=-1)
    assert torch.allclose(sol(p, torch.zeros(50)), r - 0.3)
    assert torch.allclose(sol(p, torch.full((50,), 60.0)), r - 0.6)
    radius = exact.interpolation_radius(0.3, 0.6, 1.0)
    assert radius == pytest.approx(0.6 - 0.3 * math.exp(-1)) and radius == pytest.approx(0.48964, abs=1e-5)
    d = torch.tensor([[radius, 0.0, 0.0]])
    assert sol(d, torch.ones(1)).abs().item() <= 1e-15


def test_translated_oracle_is_shifted_sphere():
    sol = exact.translated(exact.sphere_sdf((0, 0, 0), 0.4), torch.tensor([0.2, 0.0, 0.0]))
    p = torch.tensor([[0.6, 0.0, 0.0], [-0.2, 0.0, 0.0], [0.2, 0.4, 0.0]])
    assert torch.allclose(sol(p, torch.ones(3)), torch.zeros(3), atol=1e-15)


def test_twist_oracle_preimage_is_rotation_by_minus_y_t():
    g = lambda q: q[:, 0]
    sol = exact.twisted(g)
    p = torch.tensor([[1.0, 1.0, 0.0]])
    for t in (0.0, 0.5, 1.3):
        # rotating (1, 1, 0) about the y-axis by angle -t gives x = cos(t)
        assert sol(p, torch.tensor([t])).item() == pytest.approx(math.cos(t), abs=1e-15)


def test_closed_form_areas_strictly_decrease():
    r = exact.shrinking_sphere_radius(0.5, 0.05, [0, 0.1, 0.2, 0.4])
    areas = 4 * np.pi * r**2
    assert np.all(np.diff(areas) < 0)
    assert areas == pytest.approx(4 * np.pi * (0.25 - 0.2 * np.array([0, 0.1, 0.2, 0.4])))


# --- oracle tables on networks -----------------------------------------------------

def test_mcf_check_against_frozen_network(embedded_sphere):
    g, f = embedded_sphere
    rows = mcf_sphere_check(f, 0.0, 0.5, [0.0, 0.2, 0.4])
    assert all(r.expected == 0.5 for r in rows)
    # a time-independent network keeps one radius: the fit's, for every t
    assert len({round(r.measured, 12) for r in rows}) == 1
    assert rows[0].abs_err <= 2e-2 and rows[0].missing == 0


def test_mcf_check_rejects_vanished_sphere(embedded_sphere):
    _, f = embedded_sphere
    with pytest.raises(InvalidInputError):
        mcf_sphere_check(f, 0.05, 0.5, [2.0])


def test_transport_check_at_time_zero_equals_fit_error(embedded_sphere):
    g, f = embedded_sphere
    rows = transport_check(f, ConstantField((0.2, 0.0, 0.0)), exact.sphere_sdf((0, 0, 0), 0.5), [0.0, 1.0])
    assert rows[0].abs_err <= 1e-2
    # the static network does not move, so it misses the translated sphere by about |v| t / 2 per side
    assert rows[1].abs_err > 5e-2


def test_transport_check_twist_runs(embedded_sphere):
    _, f = embedded_sphere
    rows = transport_check(f, TwistField(), exact.sphere_sdf((0, 0, 0), 0.5), [0.5], resolution=32)
    assert rows[0].abs_err <= 2e-2  # a centred sphere is invariant under the twist


def test_transport_check_rejects_other_fields(embedded_sphere):
    from neural_homotopy.pde import SourceSinkField

    _, f = embedded_sphere
    with pytest.raises(InvalidInputError):
        transport_check(f, SourceSinkField(((0, 0, 0),), (1.0,)), exact.sphere_sdf(), [0.0])


def test_interpolation_check_shapes(embedded_sphere):
    _, f = embedded_sphere
    values, radii = interpolation_check(f, 0.5, 0.6, [0.0, 1.0], n=300)
    assert [r.constraint for r in values] == ["value_t=0", "value_t=1"]
    assert values[0].mean <= 2e-2 < values[1].mean
    assert radii[0].expected == 0.5 and radii[1].expected == pytest.approx(0.6 - 0.1 * math.exp(-1))


def test_frozen_network_has_constant_area(embedded_sphere):
    _, f = embedded_sphere
    areas, ok = area_monotonicity_check(f, [0.0, 0.2, 0.4], band=0.02, resolution=48)
    assert ok and max(areas) - min(areas) <= 1e-9 * areas[0]
    _, strict = area_monotonicity_check(f, [0.0, 0.2, 0.4], band=0.01, strict=True, resolution=48)
    assert not strict


def test_closed_form_sphere_areas_decrease():
    sol = exact.shrinking_sphere(0.5, 0.05)
    areas = slice_areas(lambda t: exact.as_numpy_field(sol, t), [0.0, 0.1, 0.2, 0.4], resolution=64)
    steps = np.diff(areas)
    assert np.all(steps < -0.01 * areas[0])
    expected = 4 * np.pi * (0.25 - 0.2 * np.array([0.0, 0.1, 0.2, 0.4]))
    assert np.allclose(areas, expected, rtol=0.02)


def test_cube_shrinks_under_curvature_flow_closed_form_proxy():
    """Area of a box level set drops as its corners round off; checked on offset surfaces."""
    from neural_homotopy.geometry import Box, mesh_area

    box = Box((0, 0, 0), (0.4, 0.4, 0.4))
    field = lambda p: box.value_and_gradient(p)[0]
    a0 = mesh_area(marching_cubes(field, n=64))
    # an inward offset of the cube is what curvature flow produces first on its flat faces
    a1 = mesh_area(marching_cubes(lambda p: field(p) + 0.02, n=64))
    assert a1 < a0


def test_dumbbell_closed_form_pinches(tmp_path):
    fn = exact.dumbbell_mcf(Dumbbell(), 0.05)
    counts = component_counts(lambda t: (lambda p: fn(p, t)), [0.0, 0.2], resolution=64)
    assert counts == [1, 2]


def test_oracle_csv_header(tmp_path):
    from neural_homotopy.evaluation import OracleRow

    write_oracle_csv([OracleRow(0.0, 0.5, 0.49, 0.01)], tmp_path / "o.csv")
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[0].split(",") == ORACLE_HEADER == ["time", "expected", "measured", "abs_err"]
    assert len(lines) == 2


def test_empty_report_writes_header_only(tmp_path):
    EvalReport().write_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "constraint,mean,max,n,seed\n"
