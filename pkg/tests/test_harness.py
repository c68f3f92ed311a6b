import csv
import io
import math
import re

import numpy as np
import pytest

import brinkman_mfem.assembly as assembly
import brinkman_mfem.harness as harness
from brinkman_mfem.assembly import ModelParams, SolutionState, build_loads
from brinkman_mfem.harness import (
    COLUMNS,
    STAR,
    ErrorReport,
    ErrorRow,
    compute_errors,
    consistency_rate,
    convergence_study,
    experimental_rate,
    export_vtk,
    interpolate_exact,
    report,
    run_property_suite,
)
from brinkman_mfem.manufactured import ManufacturedCase, exact_case_2d
from brinkman_mfem.reference import quadrature
from brinkman_mfem.solver import newton_solve
from brinkman_mfem.spaces import build_spaces

FD = 1e-5


def fd_grad(f, x, y):
    return np.stack([(f(x + FD, y) - f(x - FD, y)) / (2 * FD),
                     (f(x, y + FD) - f(x, y - FD)) / (2 * FD)], axis=-1)


@pytest.fixture
def points(rng):
    return rng.random(100) * 2.0, rng.random(100)


# ---------------------------------------------------------------- exact case


def test_velocity_is_solenoidal(case, points):
    x, y = points
    div = (fd_grad(lambda a, b: case.u(a, b)[..., 0], x, y)[..., 0]
           + fd_grad(lambda a, b: case.u(a, b)[..., 1], x, y)[..., 1])
    np.testing.assert_allclose(div, 0.0, atol=1e-9)
    assert not case.div_u(x, y).any()


@pytest.mark.parametrize("mu_prime", [1.0, 4.0])
def test_vorticity_at_origin(mu_prime):
    case = exact_case_2d(ModelParams(mu_prime=mu_prime))
    assert case.omega(0.0, 0.0) == pytest.approx(-2 * math.pi * math.sqrt(mu_prime))


def test_vorticity_is_scaled_curl(case, points):
    x, y = points
    du2 = fd_grad(lambda a, b: case.u(a, b)[..., 1], x, y)[..., 0]
    du1 = fd_grad(lambda a, b: case.u(a, b)[..., 0], x, y)[..., 1]
    np.testing.assert_allclose(case.omega(x, y), du2 - du1, atol=1e-8)
    grad = fd_grad(case.omega, x, y)
    np.testing.assert_allclose(case.curl_omega(x, y), np.stack([grad[..., 1], -grad[..., 0]], -1),
                               atol=1e-7)


def test_pressure_corner_value(case):
    assert case.p(2.0, 1.0) == 7.0


def test_temperature_derivatives(case, points):
    x, y = points
    np.testing.assert_allclose(case.grad_T(x, y), fd_grad(case.T, x, y), atol=1e-8)
    lap = sum((case.grad_T(x + FD * e[0], y + FD * e[1])[..., d]
               - case.grad_T(x - FD * e[0], y - FD * e[1])[..., d]) / (2 * FD)
              for d, e in enumerate([(1, 0), (0, 1)]))
    np.testing.assert_allclose(case.laplace_T(x, y), lap, atol=1e-7)


@pytest.mark.parametrize("prm", [ModelParams(), ModelParams(mu=2.0, kappa=0.5, mu_prime=3.0, rho=1.5,
                                                            beta=0.3, T0=0.2, gravity=(0.5, -2.0),
                                                            sigma0=2.0, alpha=0.7, c_prime=4.0)])
def test_source_terms_against_finite_differences(prm, points):
    """Force and heat source rebuilt from the strong equations with numerical derivatives."""
    case = ManufacturedCase(prm)
    x, y = points
    u = case.u(x, y)
    omega_grad = fd_grad(case.omega, x, y)
    curl_omega = np.stack([omega_grad[..., 1], -omega_grad[..., 0]], axis=-1)
    force = (prm.mu / prm.kappa * u + math.sqrt(prm.mu_prime) * curl_omega + fd_grad(case.p, x, y)
             + prm.rho * prm.beta * (case.T(x, y) - prm.T0)[:, None] * np.array(prm.gravity))
    np.testing.assert_allclose(case.force(x, y), force, atol=1e-6)

    grad_T = fd_grad(case.T, x, y)
    lap_T = ((case.T(x + FD, y) - 2 * case.T(x, y) + case.T(x - FD, y))
             + (case.T(x, y + FD) - 2 * case.T(x, y) + case.T(x, y - FD))) / FD ** 2
    heat = (prm.sigma0 * case.T(x, y) + np.sum(u * grad_T, axis=-1) - prm.alpha * lap_T
            - prm.mu / (prm.kappa * prm.c_prime * prm.rho) * np.sum(u * u, axis=-1))
    np.testing.assert_allclose(case.heat_source(x, y), heat, atol=1e-4)


# ---------------------------------------------------------------- errors


class PolynomialCase(ManufacturedCase):
    """Fields inside CG_2 x RT_1 x DG_1 x CG_2, so their interpolants are exact."""

    def u(self, x, y):
        return np.stack([1 + y + x * (x - 2 * y), 2 - x + y * (x - 2 * y)], axis=-1)

    def div_u(self, x, y):
        return 3 * (x - 2 * y)

    def omega(self, x, y):
        return x + y ** 2

    def curl_omega(self, x, y):
        return np.stack(np.broadcast_arrays(2 * y, -1.0 + 0 * x), axis=-1)

    def p(self, x, y):
        return 1 + x - y

    def T(self, x, y):
        return x * y

    def grad_T(self, x, y):
        return np.stack([y, x], axis=-1)


def test_self_comparison_gives_zero_errors(crossed_mesh):
    spaces = build_spaces(crossed_mesh, 1)
    case = PolynomialCase()
    row = compute_errors(interpolate_exact(spaces, case), case, spaces)
    assert max(row.errors) < 1e-12


def test_solver_error_within_interpolation_error(mesh_sequence, params, case):
    """Quasi-optimality sanity check: discrete errors are at most 10 times the interpolation errors."""
    for k in (0, 1):
        spaces = build_spaces(mesh_sequence[2], k)
        solved = newton_solve(spaces, params, build_loads(spaces, params, case))
        interp = compute_errors(interpolate_exact(spaces, case), case, spaces)
        row = compute_errors(solved.state, case, spaces, solved.iterations)
        assert row.iterations == solved.iterations
        for e, ei in zip(row.errors, interp.errors):
            assert e <= 10 * ei


def test_interpolation_errors_decay_at_optimal_rate(mesh_sequence, case):
    for k in (0, 1):
        rows = []
        for mesh in mesh_sequence[1:]:
            spaces = build_spaces(mesh, k)
            rows.append(compute_errors(interpolate_exact(spaces, case), case, spaces))
        for a, b in zip(rows[-2].errors, rows[-1].errors):
            assert experimental_rate(a, b, rows[-2].h, rows[-1].h) == pytest.approx(k + 1, abs=0.15)


def test_rate_formula():
    assert experimental_rate(4.0, 1.0, 0.5, 0.25) == pytest.approx(2.0)
    assert experimental_rate(1.0, 1.0, 0.5, 0.25) == 0.0


def test_zero_state_errors_are_field_norms(crossed_mesh, case):
    spaces = build_spaces(crossed_mesh, 0)
    row = compute_errors(SolutionState.zeros(spaces), case, spaces)
    # ||p||_0^2 = int_0^2 int_0^1 (x^4/2 - y^4)^2 = 128/9 - 32/25 + 2/9
    assert row.e_p == pytest.approx(math.sqrt(128 / 9 - 32 / 25 + 2 / 9), rel=1e-10)
    assert row.div_inf == 0.0


# ---------------------------------------------------------------- studies


def test_short_study(case):
    study = convergence_study(0, 3)
    assert [r.dofs for r in study.rows] == [132, 486, 1866]
    assert [r.h for r in study.rows] == pytest.approx([0.5, 0.25, 0.125])
    assert study.rates()[0] is None
    assert len(study.final_rates()) == 4


@pytest.mark.parametrize("k, levels", [(2, 3), (0, 2)])
def test_study_arguments(k, levels):
    with pytest.raises(ValueError):
        convergence_study(k, levels)


def test_rates_settle_near_optimal(study_k0, study_k1):
    """From the fourth level onward each rate lies within 0.2 of k + 1, and within 0.1 at the finest."""
    for study in (study_k0, study_k1):
        rates = study.rates()
        for level_rates in rates[3:]:
            assert np.all(np.abs(np.array(level_rates) - (study.k + 1)) <= 0.2)
        assert np.all(np.abs(np.array(rates[-1]) - (study.k + 1)) <= 0.1)


def test_temperature_rate_k0(study_k0):
    assert study_k0.final_rates()[3] == pytest.approx(1.0, abs=0.1)


# ---------------------------------------------------------------- reports


def sample_report(levels):
    rows = [ErrorRow(132 * 4 ** i, 0.5 / 2 ** i, 8.87 / 2 ** i, 0.425 / 2 ** i, 0.781 / 2 ** i,
                     4.3 / 2 ** i, 1e-15, 4) for i in range(levels)]
    return ErrorReport(0, rows)


def test_single_level_report_has_stars():
    text = report(sample_report(1), "md")
    body = text.strip().splitlines()[2:]
    assert len(body) == 1
    assert body[0].count(STAR) == 4


def test_csv_layout():
    rows = list(csv.reader(io.StringIO(report(sample_report(3), "csv"))))
    assert rows[0] == COLUMNS
    assert len(rows) == 4
    assert rows[1][:4] == ["132", "0.5000", "8.87e+00", STAR]
    assert rows[2][3] == "1.00"


def test_markdown_number_formats():
    text = report(sample_report(2), "markdown")
    header, rule, first, second = text.strip().splitlines()
    assert header == "| " + " | ".join(COLUMNS) + " |"
    cells = [c.strip() for c in second.strip("|").split("|")]
    for i in (2, 4, 6, 8, 10):
        assert re.fullmatch(r"\d\.\d{2}e[+-]\d{2}", cells[i])
    for i in (3, 5, 7, 9):
        assert re.fullmatch(r"-?\d+\.\d{2}", cells[i])
    assert cells[1] == "0.2500"


def test_unknown_report_format():
    with pytest.raises(ValueError):
        report(sample_report(1), "html")


# ---------------------------------------------------------------- property suite


def test_property_suite_passes():
    results = run_property_suite()
    failed = [r.line() for r in results if not r.passed]
    assert not failed, "\n".join(failed)
    assert {r.module for r in results} == {"reference", "spaces", "assembly", "solver"}


def flipped_b1(original):
    def assemble(*args, **kwargs):
        blocks = original(*args, **kwargs)
        blocks["B1"] = -blocks["B1"]
        return blocks

    return assemble


def test_b1_sign_flip_breaks_consistency(monkeypatch):
    monkeypatch.setattr(assembly, "assemble_brinkman_blocks", flipped_b1(assembly.assemble_brinkman_blocks))
    assert consistency_rate(0) < 0.8
    failed = {r.invariant for r in run_property_suite() if not r.passed}
    assert "consistency rate k=0" in failed and "consistency rate k=1" in failed


def test_under_integration_breaks_energy_balance(monkeypatch):
    """A dissipation load integrated with a one-point rule no longer balances the dissipated power."""
    original = harness.assemble_dissipation_load
    monkeypatch.setattr(harness, "assemble_dissipation_load",
                        lambda spaces, params, u, degree=None: original(spaces, params, u, 1))
    results = {r.invariant: r for r in run_property_suite()}
    for k in (0, 1):
        check = results[f"dissipation energy balance k={k}"]
        assert not check.passed
        assert check.value > 1e-6


# ---------------------------------------------------------------- vtk


def parse_vtk(path):
    tokens = open(path).read().split()
    out = {"header": open(path).readline().strip()}
    i = 0
    while i < len(tokens):
        t = tokens[i]
        if t == "POINTS":
            n = int(tokens[i + 1])
            out["points"] = np.array(tokens[i + 3:i + 3 + 3 * n], float).reshape(n, 3)
            i += 3 + 3 * n
        elif t == "CELLS":
            n, size = int(tokens[i + 1]), int(tokens[i + 2])
            out["cells"] = np.array(tokens[i + 3:i + 3 + size], int).reshape(n, 4)
            i += 3 + size
        elif t == "CELL_TYPES":
            n = int(tokens[i + 1])
            out["types"] = np.array(tokens[i + 2:i + 2 + n], int)
            i += 2 + n
        elif t in ("POINT_DATA", "CELL_DATA"):
            out["n_" + t.lower()] = int(tokens[i + 1])
            out["_count"] = int(tokens[i + 1])
            i += 2
        elif t == "SCALARS":
            n = out["_count"]
            out[tokens[i + 1]] = np.array(tokens[i + 6:i + 6 + n], float)
            i += 6 + n
        elif t == "VECTORS":
            n = out["_count"]
            out[tokens[i + 1]] = np.array(tokens[i + 3:i + 3 + 3 * n], float).reshape(n, 3)
            i += 3 + 3 * n
        else:
            i += 1
    return out


def test_vtk_zero_state(tmp_path, crossed_mesh):
    spaces = build_spaces(crossed_mesh, 0)
    path = tmp_path / "zero.vtk"
    export_vtk(SolutionState.zeros(spaces), spaces, path)
    data = parse_vtk(path)
    assert data["header"] == "# vtk DataFile Version 3.0"
    assert "DATASET UNSTRUCTURED_GRID" in path.read_text()
    for name in ("omega", "temperature", "velocity", "pressure"):
        assert not data[name].any()
    assert len(data["cells"]) == crossed_mesh.n_cells
    assert np.all(data["types"] == 5)


def test_vtk_roundtrip(tmp_path, mesh_sequence, case):
    for k in (0, 1):
        spaces = build_spaces(mesh_sequence[1], k)
        state = interpolate_exact(spaces, case)
        path = tmp_path / f"exact{k}.vtk"
        export_vtk(state, spaces, path)
        data = parse_vtk(path)
        mesh = spaces.mesh
        np.testing.assert_array_equal(data["cells"][:, 1:], mesh.cells)
        assert np.all(data["cells"][:, 0] == 3)
        np.testing.assert_allclose(data["points"][:, :2], mesh.vertices, rtol=1e-15)
        np.testing.assert_allclose(data["omega"], state.omega[:mesh.n_vertices], rtol=1e-15)
        np.testing.assert_allclose(data["temperature"], state.T[:mesh.n_vertices], rtol=1e-15)
        # cell averages: DG pressure mean and RT mean flux
        area_weighted = np.sum(data["pressure"] * mesh.areas)
        assert area_weighted == pytest.approx(np.sum(mesh.areas * project_mean(spaces, state.p)), rel=1e-12)
        assert data["n_cell_data"] == mesh.n_cells
        np.testing.assert_allclose(data["velocity"][:, 2], 0.0)


def project_mean(spaces, p):
    rule = quadrature(4)
    vals, _ = spaces.Q.evaluate(p, rule.points)
    return vals @ (rule.weights / rule.weights.sum())


def test_vtk_bad_path(crossed_mesh, tmp_path):
    spaces = build_spaces(crossed_mesh, 0)
    with pytest.raises(OSError):
        export_vtk(SolutionState.zeros(spaces), spaces, tmp_path / "missing" / "out.vtk")
