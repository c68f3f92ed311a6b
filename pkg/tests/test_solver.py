import numpy as np
import pytest
import scipy.sparse as sp

from brinkman_mfem.assembly import (
    CoupledSystem,
    ModelParams,
    assemble_a3,
    assemble_dissipation_load,
    build_loads,
    zero_loads,
)
from brinkman_mfem.manufactured import exact_case_2d
from brinkman_mfem.mesh import Tag
from brinkman_mfem.reference import quadrature
from brinkman_mfem.solver import (
    ConvergenceError,
    LinearSolverError,
    SolverConfig,
    impose_essential,
    linear_solve,
    newton_solve,
    picard_solve,
    solve_brinkman_given_T,
    solve_energy_given_u,
)
from brinkman_mfem.spaces import build_spaces, curl_to_rt, interpolate_cg

COLD = ModelParams(T0=0.0)


def solenoidal_velocity(spaces, rng):
    psi = rng.standard_normal(spaces.Z.ndofs)
    psi[spaces.Z.boundary_dofs(Tag.GAMMA)] = 0.0
    return curl_to_rt(spaces.Z, spaces.V, psi)


def test_impose_without_dofs_is_noop(rng):
    A = sp.random(6, 6, density=0.5, random_state=1, format="csr")
    b = rng.standard_normal(6)
    A2, b2 = impose_essential(A, b, [], [])
    assert abs(A2 - A).max() == 0
    np.testing.assert_array_equal(b2, b)


def test_all_dofs_constrained(rng):
    A = sp.csr_matrix(rng.standard_normal((5, 5)))
    values = rng.standard_normal(5)
    A2, b2 = impose_essential(A, rng.standard_normal(5), np.arange(5), values)
    np.testing.assert_array_equal(linear_solve(A2, b2), values)


def test_impose_rejects_conflicting_duplicates():
    A = sp.identity(3, format="csr")
    with pytest.raises(ValueError):
        impose_essential(A, np.zeros(3), [1, 1], [0.0, 1.0])
    A2, b2 = impose_essential(A, np.zeros(3), [1, 1], [2.0, 2.0])
    assert b2[1] == 2.0


def test_impose_keeps_symmetry(rng):
    M = rng.standard_normal((8, 8))
    A = sp.csr_matrix(M + M.T)
    A2, _ = impose_essential(A, np.zeros(8), [0, 5], [1.0, -1.0])
    assert abs(A2 - A2.T).max() == 0


def test_linear_patch_reproduced(spaces):
    """Dirichlet data on the whole boundary and ``sigma0 T`` as source reproduce a linear T."""
    prm = ModelParams()
    Y, mesh = spaces.Y, spaces.mesh
    exact = lambda x, y: 1.0 + 2.0 * x - 0.5 * y  # noqa: E731
    rule = quadrature(6)
    X = mesh.map_points(rule.points)
    tab = Y.tabulate(rule.points)
    local = np.einsum("cn,cn,cni->ci", rule.weights * mesh.dets[:, None],
                      prm.sigma0 * exact(X[..., 0], X[..., 1]), tab.values)
    rhs = np.bincount(Y.cell_dofs.ravel(), local.ravel(), Y.ndofs)
    bnd = np.union1d(Y.boundary_dofs(Tag.GAMMA), Y.boundary_dofs(Tag.SIGMA))
    nodal = interpolate_cg(Y, exact)
    A, b = impose_essential(assemble_a3(spaces, prm), rhs, bnd, nodal[bnd])
    np.testing.assert_allclose(linear_solve(A, b), nodal, atol=1e-12)


def test_identity_solve(rng):
    b = rng.standard_normal(7)
    np.testing.assert_array_equal(linear_solve(sp.identity(7), b), b)


def test_zero_rhs():
    assert not linear_solve(sp.identity(3), np.zeros(3)).any()


def test_spd_against_dense_oracle(rng):
    R = sp.random(50, 50, density=0.1, random_state=3)
    A = (R @ R.T + 5 * sp.identity(50)).tocsr()
    b = rng.standard_normal(50)
    np.testing.assert_allclose(linear_solve(A, b), np.linalg.solve(A.toarray(), b), rtol=1e-10, atol=1e-12)


def test_saddle_point_toy():
    # minimise x1^2 + x2^2 subject to x1 + x2 = 0 with linear terms (1, 3): x = (-1/2, 1/2), lambda = 2
    A = sp.csr_matrix([[2.0, 0.0, 1.0], [0.0, 2.0, 1.0], [1.0, 1.0, 0.0]])
    np.testing.assert_allclose(linear_solve(A, [1.0, 3.0, 0.0]), [-0.5, 0.5, 2.0], atol=1e-15)


def test_singular_matrix_is_reported():
    A = sp.csr_matrix([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(LinearSolverError):
        linear_solve(A, [1.0, 0.0])


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol_abs=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_newton=0)


def test_newton_zero_data(spaces):
    result = newton_solve(spaces, COLD, zero_loads(spaces))
    assert result.iterations == 1
    assert not result.state.to_vector().any()


def test_newton_manufactured(spaces, params, case):
    loads = build_loads(spaces, params, case)
    result = newton_solve(spaces, params, loads)
    assert result.iterations <= 5
    assert result.history[-1] <= 1e-8
    loose = newton_solve(spaces, params, loads, SolverConfig(tol_abs=1e-4, tol_rel=1e-4))
    assert loose.iterations <= min(4, result.iterations)


def test_newton_reports_history_on_failure(spaces, params, case):
    loads = build_loads(spaces, params, case)
    with pytest.raises(ConvergenceError) as info:
        newton_solve(spaces, params, loads, SolverConfig(tol_abs=1e-30, tol_rel=1e-30, max_newton=2))
    assert len(info.value.history) == 3


def test_newton_from_solution_stops_at_once(spaces, params, case):
    loads = build_loads(spaces, params, case)
    first = newton_solve(spaces, params, loads)
    again = newton_solve(spaces, params, loads, initial_state=first.state)
    assert again.iterations == 1
    np.testing.assert_allclose(again.state.to_vector(), first.state.to_vector(), atol=1e-9)


def test_brinkman_reference_temperature_gives_rest(spaces):
    prm = ModelParams(T0=0.7)
    omega, u, p = solve_brinkman_given_T(spaces, prm, np.full(spaces.Y.ndofs, 0.7), zero_loads(spaces))
    for part in (omega, u, p):
        np.testing.assert_allclose(part, 0.0, atol=1e-13)


def test_brinkman_velocity_is_divergence_free(spaces, params, case, rng):
    loads = build_loads(spaces, params, case)
    system = CoupledSystem(spaces, params, loads)
    _, u, _ = solve_brinkman_given_T(spaces, params, rng.standard_normal(spaces.Y.ndofs), system=system)
    _, div = spaces.V.evaluate(u, spaces.Q.basis.nodes)
    assert np.abs(div).max() <= 1e-10


def test_brinkman_superposition(spaces, rng):
    loads = zero_loads(spaces)
    T1, T2 = rng.standard_normal((2, spaces.Y.ndofs))
    a = np.concatenate(solve_brinkman_given_T(spaces, COLD, T1, loads))
    b = np.concatenate(solve_brinkman_given_T(spaces, COLD, T2, loads))
    ab = np.concatenate(solve_brinkman_given_T(spaces, COLD, T1 + T2, loads))
    np.testing.assert_allclose(ab, a + b, atol=1e-10)


def test_energy_at_rest_without_data(spaces):
    T = solve_energy_given_u(spaces, COLD, np.zeros(spaces.V.ndofs), zero_loads(spaces))
    assert not T.any()


def test_energy_at_rest_matches_symmetric_oracle(spaces, rng):
    loads = zero_loads(spaces)
    loads.T = rng.standard_normal(spaces.Y.ndofs)
    T = solve_energy_given_u(spaces, COLD, np.zeros(spaces.V.ndofs), loads)
    free = np.setdiff1d(np.arange(spaces.Y.ndofs), spaces.Y.boundary_dofs(Tag.SIGMA))
    A = assemble_a3(spaces, COLD).toarray()[np.ix_(free, free)]
    np.testing.assert_allclose(T[free], np.linalg.solve(A, loads.T[free]), rtol=1e-10, atol=1e-12)
    assert not T[spaces.Y.boundary_dofs(Tag.SIGMA)].any()


def test_energy_balance(spaces, rng):
    """Testing with S = T: sigma0 |T|^2 + alpha |grad T|^2 = G(T) + c2(u, u; T); convection drops out."""
    loads = zero_loads(spaces)
    loads.T = rng.standard_normal(spaces.Y.ndofs)
    u = solenoidal_velocity(spaces, rng)
    T = solve_energy_given_u(spaces, COLD, u, loads)
    lhs = T @ assemble_a3(spaces, COLD) @ T
    rhs = T @ loads.T + T @ assemble_dissipation_load(spaces, COLD, u)
    assert lhs == pytest.approx(rhs, rel=1e-9)


def test_energy_warns_on_compressible_velocity(spaces, rng):
    with pytest.warns(RuntimeWarning, match="divergence"):
        solve_energy_given_u(spaces, COLD, rng.standard_normal(spaces.V.ndofs), zero_loads(spaces))


def test_picard_zero_data(spaces):
    result = picard_solve(spaces, COLD, zero_loads(spaces))
    assert result.iterations == 1


def test_picard_matches_newton(spaces, params, case):
    loads = build_loads(spaces, params, case)
    newton = newton_solve(spaces, params, loads)
    picard = picard_solve(spaces, params, loads)
    assert np.linalg.norm(newton.state.to_vector() - picard.state.to_vector()) <= 1e-7


def test_picard_strong_coupling_fails_cleanly(crossed_mesh):
    spaces = build_spaces(crossed_mesh, 0)
    case = exact_case_2d(ModelParams(beta=100.0))
    loads = build_loads(spaces, case.params, case)
    with pytest.raises(ConvergenceError) as info:
        picard_solve(spaces, case.params, loads)
    assert info.value.history
