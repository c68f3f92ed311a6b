"""Manufactured-solution verification: error norms, convergence studies, reports."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    CoupledSystem,
    ModelParams,
    SolutionState,
    assemble_convection,
    assemble_dissipation_load,
    build_loads,
)
from .manufactured import DOMAIN, ManufacturedCase, exact_case_2d
from .mesh import Mesh, Tag, build_rect_mesh, refine_uniform
from .reference import MAX_QUADRATURE_DEGREE, quadrature
from .solver import (
    ConvergenceError,
    SolverConfig,
    impose_essential,
    linear_solve,
    newton_solve,
    picard_solve,
)
from .spaces import (
    MixedSpaces,
    build_spaces,
    curl_to_rt,
    interpolate_cg,
    interpolate_rt,
    project_dg,
    project_dg_values,
)

log = logging.getLogger(__name__)

ERROR_DEGREE = 10
STAR = "★"
COLUMNS = ["DoF", "h", "e_curl_s", "rate", "e_rdiv", "rate", "e0", "rate", "e1", "rate",
           "div_inf", "it"]


@dataclass
class ErrorRow:
    dofs: int
    h: float
    e_omega: float
    e_u: float
    e_p: float
    e_T: float
    div_inf: float
    iterations: int = 0

    @property
    def errors(self) -> tuple[float, float, float, float]:
        return (self.e_omega, self.e_u, self.e_p, self.e_T)


@dataclass
class ErrorReport:
    k: int
    rows: list = field(default_factory=list)

    def rates(self) -> list:
        """Per level, the four experimental rates (``None`` on the first level)."""
        out = [None]
        for a, b in zip(self.rows[:-1], self.rows[1:]):
            out.append(tuple(experimental_rate(ea, eb, a.h, b.h)
                             for ea, eb in zip(a.errors, b.errors)))
        return out[:len(self.rows)]

    def final_rates(self) -> tuple:
        return self.rates()[-1]


def experimental_rate(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> float:
    return (math.log(e_coarse) - math.log(e_fine)) / (math.log(h_coarse) - math.log(h_fine))


def interpolate_exact(spaces: MixedSpaces, case: ManufacturedCase) -> SolutionState:
    """Canonical interpolants of the exact fields (L2 projection for pressure)."""
    return SolutionState(
        interpolate_cg(spaces.Z, case.omega),
        interpolate_rt(spaces.V, case.u),
        project_dg(spaces.Q, case.p),
        interpolate_cg(spaces.Y, case.T),
    )


def divergence_sup(spaces: MixedSpaces, u_coeffs) -> float:
    """Largest |div u_h| over the nodes of the pressure space."""
    _, div = spaces.V.evaluate(u_coeffs, spaces.Q.basis.nodes)
    return float(np.abs(div).max())


def compute_errors(state: SolutionState, case: ManufacturedCase, spaces: MixedSpaces,
                   iterations: int = 0) -> ErrorRow:
    """Errors in the norms ``curl_s`` (omega), ``r,div`` (u), L2 (p) and H1 (T).

    ``||z||_{curl_s} = ||z||_0 + ||curl z||_{L^s}`` and
    ``||v||_{r,div} = ||v||_{L^r} + ||div v||_0`` with ``r``, ``s`` from the
    case parameters; each fractional-power integral is accumulated over all
    quadrature points and rooted once.
    """
    prm = case.params
    mesh = spaces.mesh
    rule = quadrature(ERROR_DEGREE)
    w = rule.weights[None, :] * mesh.dets[:, None]
    X = mesh.map_points(rule.points)
    x, y = X[..., 0], X[..., 1]

    def lp(values, p):
        return float(np.sum(w * np.abs(values) ** p) ** (1.0 / p))

    wh, grad_wh = spaces.Z.evaluate(state.omega, rule.points)
    uh, div_uh = spaces.V.evaluate(state.u, rule.points)
    ph, _ = spaces.Q.evaluate(state.p, rule.points)
    Th, grad_Th = spaces.Y.evaluate(state.T, rule.points)

    curl_err = np.linalg.norm(case.curl_omega(x, y) - np.stack([grad_wh[..., 1], -grad_wh[..., 0]], -1), axis=-1)
    e_omega = lp(case.omega(x, y) - wh, 2) + lp(curl_err, prm.s)
    e_u = lp(np.linalg.norm(case.u(x, y) - uh, axis=-1), prm.r) + lp(case.div_u(x, y) - div_uh, 2)
    e_p = lp(case.p(x, y) - ph, 2)
    e_T = math.hypot(lp(case.T(x, y) - Th, 2),
                     lp(np.linalg.norm(case.grad_T(x, y) - grad_Th, axis=-1), 2))
    return ErrorRow(spaces.ndofs, mesh.h, e_omega, e_u, e_p, e_T,
                    divergence_sup(spaces, state.u), iterations)


def base_mesh(nx: int = 4, ny: int = 2, diagonal: str = "crossed", rect=DOMAIN) -> Mesh:
    return build_rect_mesh(nx, ny, rect, diagonal=diagonal)


def mesh_levels(levels: int, nx: int = 4, ny: int = 2, diagonal: str = "crossed"):
    mesh = base_mesh(nx, ny, diagonal)
    for _ in range(levels):
        yield mesh
        mesh = refine_uniform(mesh)


def solve_level(mesh: Mesh, k: int, case: ManufacturedCase, config: SolverConfig = SolverConfig(),
                method: str = "newton"):
    spaces = build_spaces(mesh, k)
    loads = build_loads(spaces, case.params, case)
    system = CoupledSystem(spaces, case.params, loads)
    solve = newton_solve if method == "newton" else picard_solve
    result = solve(spaces, case.params, loads, config, system=system)
    return spaces, result


def convergence_study(k: int, levels: int, nx: int = 4, ny: int = 2, diagonal: str = "crossed",
                      params: ModelParams | None = None, config: SolverConfig = SolverConfig()) -> ErrorReport:
    """Solve the manufactured case on ``levels`` uniformly refined meshes."""
    if k not in (0, 1):
        raise ValueError("k must be 0 or 1")
    if levels < 3:
        raise ValueError("a convergence study needs at least 3 levels")
    case = exact_case_2d(params)
    report = ErrorReport(k)
    for level, mesh in enumerate(mesh_levels(levels, nx, ny, diagonal)):
        try:
            spaces, result = solve_level(mesh, k, case, config)
        except ConvergenceError as exc:
            raise ConvergenceError(f"level {level} (h = {mesh.h:.4g}): {exc}", exc.history) from exc
        row = compute_errors(result.state, case, spaces, result.iterations)
        log.info("k=%d level %d: %d DOFs, h=%.4f, errors %s", k, level, row.dofs, row.h,
                 ", ".join(f"{e:.3e}" for e in row.errors))
        report.rows.append(row)
    return report


# --------------------------------------------------------------------------
# output


def _fmt_err(v: float) -> str:
    return f"{v:.2e}"


def _table(report: ErrorReport) -> list:
    body = []
    for row, rates in zip(report.rows, report.rates()):
        cells = [str(row.dofs), f"{row.h:.4f}"]
        for i, e in enumerate(row.errors):
            cells += [_fmt_err(e), STAR if rates is None else f"{rates[i]:.2f}"]
        cells += [_fmt_err(row.div_inf), str(row.iterations)]
        body.append(cells)
    return body


def report(error_report: ErrorReport, fmt: str = "markdown") -> str:
    """Render the error history as ``csv`` or ``markdown`` (alias ``md``)."""
    body = _table(error_report)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        writer.writerows(body)
        return buf.getvalue()
    if fmt in ("markdown", "md"):
        lines = ["| " + " | ".join(COLUMNS) + " |",
                 "|" + "|".join("---:" for _ in COLUMNS) + "|"]
        lines += ["| " + " | ".join(r) + " |" for r in body]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def export_vtk(state: SolutionState, spaces: MixedSpaces, path) -> None:
    """Legacy ASCII VTK (3.0) unstructured grid.

    Point data: omega and T at the vertices.  Cell data: cell-averaged
    velocity and pressure.
    """
    mesh = spaces.mesh
    V, C = mesh.n_vertices, mesh.n_cells
    rule = quadrature(4)
    w = rule.weights / rule.weights.sum()
    u, _ = spaces.V.evaluate(state.u, rule.points)
    p, _ = spaces.Q.evaluate(state.p, rule.points)
    u_avg = np.einsum("n,cnd->cd", w, u)
    p_avg = p @ w
    omega = np.asarray(state.omega)[:V]
    T = np.asarray(state.T)[:V]

    out = ["# vtk DataFile Version 3.0", "brinkman_mfem solution", "ASCII",
           "DATASET UNSTRUCTURED_GRID", f"POINTS {V} double"]
    out += [f"{x:.16e} {y:.16e} 0.0" for x, y in mesh.vertices]
    out.append(f"CELLS {C} {4 * C}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.cells]
    out.append(f"CELL_TYPES {C}")
    out += ["5"] * C
    out += [f"POINT_DATA {V}", "SCALARS omega double 1", "LOOKUP_TABLE default"]
    out += [f"{v:.16e}" for v in omega]
    out += ["SCALARS temperature double 1", "LOOKUP_TABLE default"]
    out += [f"{v:.16e}" for v in T]
    out += [f"CELL_DATA {C}", "VECTORS velocity double"]
    out += [f"{a:.16e} {b:.16e} 0.0" for a, b in u_avg]
    out += ["SCALARS pressure double 1", "LOOKUP_TABLE default"]
    out += [f"{v:.16e}" for v in p_avg]
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


# --------------------------------------------------------------------------
# property suite


@dataclass
class CheckResult:
    module: str
    invariant: str
    value: float
    tolerance: float
    passed: bool
    kind: str = "max"  # "max": value <= tolerance, "min": value >= tolerance

    def line(self) -> str:
        op = "<=" if self.kind == "max" else ">="
        status = "PASS" if self.passed else "FAIL"
        return f"{status} [{self.module}] {self.invariant}: {self.value:.3e} (need {op} {self.tolerance:.1e})"


def _check(module, invariant, value, tolerance, kind="max") -> CheckResult:
    value = float(value)
    ok = value <= tolerance if kind == "max" else value >= tolerance
    return CheckResult(module, invariant, value, tolerance, bool(ok and np.isfinite(value)), kind)


def consistency_residuals(k: int, levels: int = 3, params: ModelParams | None = None,
                          nx: int = 4, ny: int = 2, diagonal: str = "crossed"):
    """l2 norm of the free rows of the discrete residual at the interpolated exact solution.

    Returns ``(h, norms)`` per level.
    """
    case = exact_case_2d(params)
    hs, norms = [], []
    for mesh in mesh_levels(levels, nx, ny, diagonal):
        spaces = build_spaces(mesh, k)
        system = CoupledSystem(spaces, case.params, build_loads(spaces, case.params, case))
        r = system.residual(interpolate_exact(spaces, case).to_vector())
        r[system.essential_dofs] = 0.0
        hs.append(mesh.h)
        norms.append(float(np.linalg.norm(r)))
    return hs, norms


def consistency_rate(k: int, levels: int = 3, params: ModelParams | None = None) -> float:
    """Observed decay rate of the consistency residual on the finest pair of levels."""
    hs, norms = consistency_residuals(k, levels, params)
    return experimental_rate(norms[-2], norms[-1], hs[-2], hs[-1])


def _quadrature_oracle() -> float:
    """Worst relative error over all monomials integrated by every supported rule."""
    worst = 0.0
    for degree in range(MAX_QUADRATURE_DEGREE + 1):
        rule = quadrature(degree)
        x, y = rule.points[:, 0], rule.points[:, 1]
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
                worst = max(worst, abs(rule.weights @ (x ** a * y ** b) - exact) / exact)
    return worst


def _fortin_defect(spaces: MixedSpaces) -> float:
    """Coefficientwise ``|P_Q div u - div(Pi_V u)|`` for a non-solenoidal field."""

    def field_(x, y):
        return np.stack([np.sin(x) * np.exp(y), x ** 2 * y], axis=-1)

    def div_(x, y):
        return np.cos(x) * np.exp(y) + x ** 2

    u = interpolate_rt(spaces.V, field_)
    lhs = project_dg_values(spaces.Q, lambda ref: spaces.V.evaluate(u, ref)[1])
    return float(np.abs(lhs - project_dg(spaces.Q, div_)).max())


def _skew_defect(spaces: MixedSpaces) -> float:
    """``|C1 + C1^T|`` on temperature DOFs free of Sigma for a solenoidal ``u``.

    ``u = curl psi`` with ``psi`` vanishing on Gamma, so ``u.n = 0`` there.
    """
    rng = np.random.default_rng(7)
    psi = rng.standard_normal(spaces.Z.ndofs)
    psi[spaces.Z.boundary_dofs(Tag.GAMMA)] = 0.0
    u = curl_to_rt(spaces.Z, spaces.V, psi)
    C = assemble_convection(spaces, u)
    free = np.setdiff1d(np.arange(spaces.Y.ndofs), spaces.Y.boundary_dofs(Tag.SIGMA))
    S = (C + C.T)[free][:, free]
    scale = abs(C).max()
    return float(abs(S).max() / scale) if S.nnz else 0.0


def _jacobian_defect(spaces: MixedSpaces, params: ModelParams, step: float = 1e-6) -> float:
    """Relative gap between ``J v`` and a central difference of the residual."""
    rng = np.random.default_rng(11)
    system = CoupledSystem(spaces, params)
    x = rng.standard_normal(spaces.ndofs)
    v = rng.standard_normal(spaces.ndofs)
    jv = system.jacobian(x) @ v
    fd = (system.residual(x + step * v) - system.residual(x - step * v)) / (2 * step)
    return float(np.linalg.norm(fd - jv) / np.linalg.norm(jv))


def _energy_balance_defect(spaces: MixedSpaces, params: ModelParams, u) -> float:
    """Total assembled dissipation load against ``mu/(kappa c' rho) ||u||^2`` by an exact rule.

    The temperature basis sums to one, so the entries of the load vector add
    up to the global dissipated power.
    """
    total = assemble_dissipation_load(spaces, params, u).sum()
    rule = quadrature(MAX_QUADRATURE_DEGREE)
    vals, _ = spaces.V.evaluate(u, rule.points)
    exact = params.dissipation * np.sum(rule.weights[None, :] * spaces.mesh.dets[:, None]
                                        * np.sum(vals * vals, axis=-1))
    return float(abs(total - exact) / abs(exact))


def _linear_solver_residual(system: CoupledSystem, x: np.ndarray) -> float:
    r = system.residual(x)
    A, b = impose_essential(system.jacobian(x), -r, system.essential_dofs,
                            np.zeros(len(system.essential_dofs)))
    dx = linear_solve(A, b)
    return float(np.linalg.norm(A @ dx - b) / np.linalg.norm(b))


def run_property_suite(params: ModelParams | None = None) -> list:
    """Run every structural invariant; returns one :class:`CheckResult` each."""
    case = exact_case_2d(params)
    prm = case.params
    results = [_check("reference", "quadrature monomial oracle (degree <= 20)", _quadrature_oracle(), 1e-13)]
    coarse = list(mesh_levels(2))
    rng = np.random.default_rng(3)
    for k in (0, 1):
        spaces = build_spaces(coarse[0], k)
        results += [
            _check("spaces", f"Fortin commuting identity k={k}", _fortin_defect(spaces), 1e-11),
            _check("assembly", f"c1 skew-symmetry k={k}", _skew_defect(spaces), 1e-11),
            _check("assembly", f"Jacobian vs central differences k={k}", _jacobian_defect(spaces, prm), 1e-5),
            _check("assembly", f"dissipation energy balance k={k}",
                   _energy_balance_defect(spaces, prm, rng.standard_normal(spaces.V.ndofs)), 1e-12),
        ]
        gap, lin = 0.0, 0.0
        for mesh in coarse:
            spaces, newton = solve_level(mesh, k, case)
            _, picard = solve_level(mesh, k, case, method="picard")
            gap = max(gap, float(np.linalg.norm(newton.state.to_vector() - picard.state.to_vector())))
            system = CoupledSystem(spaces, prm, build_loads(spaces, prm, case))
            lin = max(lin, _linear_solver_residual(system, newton.state.to_vector() * 0.5))
        results += [
            _check("solver", f"Picard/Newton agreement k={k}", gap, 1e-7),
            _check("solver", f"linear solve relative residual k={k}", lin, 1e-10),
            _check("assembly", f"consistency rate k={k}", consistency_rate(k, 3, params), k + 0.8, "min"),
        ]
    return results
