"""Essential conditions, sparse direct solves, Newton and Picard iterations."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import (
    CoupledSystem,
    Loads,
    ModelParams,
    SolutionState,
    assemble_dissipation_load,
    assemble_energy_operator,
)
from .spaces import MixedSpaces

log = logging.getLogger(__name__)

PIVOT_TOL = 1e-14
RESIDUAL_TOL = 1e-10


class LinearSolverError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, history):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class SolverConfig:
    tol_abs: float = 1e-8
    tol_rel: float = 1e-8
    max_newton: int = 20
    max_picard: int = 200
    picard_tol: float = 1e-8

    def __post_init__(self):
        if min(self.tol_abs, self.tol_rel, self.picard_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_newton < 1 or self.max_picard < 1:
            raise ValueError("iteration caps must be at least 1")


class SolveResult(NamedTuple):
    state: SolutionState
    iterations: int
    history: list


def impose_essential(A, b, dofs, values):
    """Symmetric elimination of prescribed DOFs.

    Known columns move to the right-hand side; constrained rows and columns
    become identity rows carrying the prescribed value.  Duplicate DOFs are
    allowed only with identical values.
    """
    A = sp.csr_matrix(A)
    b = np.array(b, dtype=float)
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    if len(dofs) == 0:
        return A, b
    uniq, first, inverse = np.unique(dofs, return_index=True, return_inverse=True)
    if len(uniq) != len(dofs):
        if not np.allclose(values, values[first][inverse], rtol=1e-12, atol=1e-12):
            raise ValueError("conflicting values prescribed for the same DOF")
        dofs, values = uniq, values[first]
    x = np.zeros(A.shape[1])
    x[dofs] = values
    b -= A @ x
    b[dofs] = values
    keep = np.ones(A.shape[0])
    keep[dofs] = 0.0
    K = sp.diags(keep)
    A = (K @ A @ K + sp.diags(1.0 - keep)).tocsr()
    return A, b


def linear_solve(A, b) -> np.ndarray:
    """Sparse LU (COLAMD column ordering, partial pivoting) with a residual check."""
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(A.shape[1])
    A = sp.csc_matrix(A)
    try:
        lu = splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise LinearSolverError(f"sparse LU failed: {exc}") from exc
    pivots = np.abs(lu.U.diagonal())
    if pivots.min() < PIVOT_TOL * pivots.max():
        raise LinearSolverError(
            f"matrix is numerically singular (pivot ratio {pivots.min() / pivots.max():.2e})"
        )
    x = lu.solve(b)
    rel = np.linalg.norm(A @ x - b) / bnorm
    if rel > RESIDUAL_TOL:
        x += lu.solve(b - A @ x)
        rel = np.linalg.norm(A @ x - b) / bnorm
    if not rel <= RESIDUAL_TOL:
        raise LinearSolverError(f"relative algebraic residual {rel:.2e} above {RESIDUAL_TOL:.0e}")
    return x


def _constrained_residual(system: CoupledSystem, x: np.ndarray) -> np.ndarray:
    r = system.residual(x)
    d = system.essential_dofs
    r[d] = x[d] - system.essential_values
    return r


def newton_solve(spaces: MixedSpaces, params: ModelParams, loads: Loads | None = None,
                 config: SolverConfig = SolverConfig(), initial_state: SolutionState | None = None,
                 system: CoupledSystem | None = None) -> SolveResult:
    """Monolithic Newton-Raphson on the coupled system.

    Stops as soon as the l2 residual is below ``tol_abs`` or below
    ``tol_rel`` times the initial residual.  The iteration count is the number
    of linear solves performed (at least one).
    """
    system = system or CoupledSystem(spaces, params, loads)
    x = (np.zeros(spaces.ndofs) if initial_state is None
         else initial_state.to_vector().astype(float))
    d, g = system.essential_dofs, system.essential_values
    r = _constrained_residual(system, x)
    r0 = np.linalg.norm(r)
    history = [r0]
    for it in range(1, config.max_newton + 1):
        J = system.jacobian(x)
        A, rhs = impose_essential(J, -r, d, g - x[d])
        x += linear_solve(A, rhs)
        r = _constrained_residual(system, x)
        rn = np.linalg.norm(r)
        history.append(rn)
        log.info("newton %d: |r| = %.3e", it, rn)
        if rn <= config.tol_abs or rn <= config.tol_rel * r0:
            return SolveResult(SolutionState.from_vector(spaces, x), it, history)
        if not np.isfinite(rn):
            break
    raise ConvergenceError(
        f"Newton did not converge in {config.max_newton} iterations "
        f"(residuals {', '.join(f'{v:.2e}' for v in history)})", history)


# --------------------------------------------------------------------------
# decoupled solves


def solve_brinkman_given_T(spaces: MixedSpaces, params: ModelParams, T_coeffs, loads: Loads | None = None,
                           system: CoupledSystem | None = None):
    """Linear saddle-point solve for ``(omega, u, p)`` with buoyancy from ``T_coeffs``."""
    system = system or CoupledSystem(spaces, params, loads)
    b = system.blocks
    K = sp.bmat([
        [b["A1"], b["B1"].T, None],
        [b["B1"], -b["A2"], b["B2"].T],
        [None, b["B2"], None],
    ], format="csr")
    rw, ru, rp, _ = spaces.split(system.rhs)
    rhs = np.concatenate([rw, ru + b["FT"] @ np.asarray(T_coeffs), rp])
    n = K.shape[0]
    d, g = system.essential_dofs, system.essential_values
    sel = d < n
    A, rhs = impose_essential(K, rhs, d[sel], g[sel])
    x = linear_solve(A, rhs)
    o = spaces.offsets
    return x[:o[1]], x[o[1]:o[2]], x[o[2]:o[3]]


def solve_energy_given_u(spaces: MixedSpaces, params: ModelParams, u_coeffs, loads: Loads | None = None,
                         system: CoupledSystem | None = None) -> np.ndarray:
    """Linear advection-diffusion-reaction solve for ``T`` with dissipation from ``u``."""
    system = system or CoupledSystem(spaces, params, loads)
    u_coeffs = np.asarray(u_coeffs, dtype=float)
    div = system.blocks["B2"] @ u_coeffs
    if np.linalg.norm(div) > 1e-8 * max(1.0, np.linalg.norm(u_coeffs)):
        warnings.warn("velocity is not discretely divergence free", RuntimeWarning, stacklevel=2)
    A = assemble_energy_operator(spaces, params, u_coeffs, system.degree)
    rhs = spaces.split(system.rhs)[3] + assemble_dissipation_load(spaces, params, u_coeffs, system.degree)
    o3 = spaces.offsets[3]
    d, g = system.essential_dofs, system.essential_values
    sel = d >= o3
    A, rhs = impose_essential(A, rhs, d[sel] - o3, g[sel])
    return linear_solve(A, rhs)


def picard_solve(spaces: MixedSpaces, params: ModelParams, loads: Loads | None = None,
                 config: SolverConfig = SolverConfig(), system: CoupledSystem | None = None) -> SolveResult:
    """Fixed-point iteration alternating the Brinkman and energy solves from ``T = 0``.

    Converges when the l2 increment of ``T`` drops below ``picard_tol``.
    """
    system = system or CoupledSystem(spaces, params, loads)
    T = np.zeros(spaces.Y.ndofs)
    history = []
    for it in range(1, config.max_picard + 1):
        omega, u, p = solve_brinkman_given_T(spaces, params, T, system=system)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            T_new = solve_energy_given_u(spaces, params, u, system=system)
        inc = np.linalg.norm(T_new - T)
        history.append(inc)
        T = T_new
        log.info("picard %d: |dT| = %.3e", it, inc)
        if inc <= config.picard_tol:
            return SolveResult(SolutionState(omega, u, p, T), it, history)
        if not np.isfinite(inc) or inc > 1e12:
            break
    raise ConvergenceError(
        f"Picard iteration did not converge in {len(history)} iterations "
        f"(last increment {history[-1]:.2e})", history)
