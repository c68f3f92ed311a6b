"""Bilinear, trilinear and load forms of the coupled Brinkman-energy system.

Unknowns are ordered ``[omega, u, p, T]`` and the discrete equations read::

    A1 w + B1^T u                  = L_w
    B1 w - A2 u + B2^T p - FT T    = F0 + L_u
    B2 u                           = 0
    A3 T + C1(u) T - c2(u, u)      = G + L_T

with ``B1[v, z] = -sqrt(mu') (curl z, v)``, ``B2[q, v] = (q, div v)``,
``FT[v, S] = rho beta (S g, v)`` and ``F0 = -rho beta T0 (g, v)``.  The
natural-boundary loads ``L_w``, ``L_u``, ``L_T`` and the volume data in
``L_u`` and ``G`` come from :func:`build_loads`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .mesh import LOCAL_EDGES, Tag
from .reference import REF_VERTICES, edge_points, edge_quadrature, quadrature, rot_cw
from .spaces import FESpace, MixedSpaces, essential_dofs

LOAD_DEGREE = 10


def interior_degree(k: int) -> int:
    """Quadrature degree for the volume forms; covers c2 (degree 3k + 3)."""
    return max(3 * k + 4, 8)


@dataclass(frozen=True)
class ModelParams:
    """Physical coefficients; the defaults are the unit values of the 2D test."""

    mu: float = 1.0
    mu_prime: float = 1.0
    kappa: float = 1.0
    rho: float = 1.0
    c_prime: float = 1.0
    sigma0: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    T0: float = 1.0
    gravity: tuple = (0.0, -1.0)
    r: float = 6.0
    s: float = 6.0 / 5.0

    def __post_init__(self):
        for name in ("mu", "mu_prime", "kappa", "rho", "c_prime", "sigma0", "alpha", "beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if len(self.gravity) != 2:
            raise ValueError("gravity must be a 2-vector")
        if self.r <= 1 or self.s <= 1 or abs(1.0 / self.r + 1.0 / self.s - 1.0) > 1e-12:
            raise ValueError("Lebesgue exponents must satisfy 1/r + 1/s = 1")
        object.__setattr__(self, "gravity", tuple(float(g) for g in self.gravity))

    @property
    def drag(self) -> float:
        return self.mu / self.kappa

    @property
    def dissipation(self) -> float:
        return self.mu / (self.kappa * self.c_prime * self.rho)


# --------------------------------------------------------------------------
# low-level helpers


def _matrix(test: FESpace, trial: FESpace, local: np.ndarray) -> sp.csr_matrix:
    C, nt, ns = local.shape
    rows = np.broadcast_to(test.cell_dofs[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(trial.cell_dofs[:, None, :], local.shape).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)),
                         shape=(test.ndofs, trial.ndofs)).tocsr()


def _vector(test: FESpace, local: np.ndarray) -> np.ndarray:
    return np.bincount(test.cell_dofs.ravel(), weights=local.ravel(), minlength=test.ndofs)


def _rule(spaces: MixedSpaces, degree: int | None):
    rule = quadrature(interior_degree(spaces.k) if degree is None else degree)
    wdet = rule.weights[None, :] * spaces.mesh.dets[:, None]
    X = spaces.mesh.map_points(rule.points)
    return rule, wdet, X


def _curl(grads: np.ndarray) -> np.ndarray:
    return np.stack([grads[..., 1], -grads[..., 0]], axis=-1)


def _check_same_mesh(spaces: MixedSpaces) -> None:
    mesh = spaces.mesh
    if any(s.mesh is not mesh for s in (spaces.Z, spaces.V, spaces.Q, spaces.Y)):
        raise ValueError("all spaces must be built on the same mesh")


# --------------------------------------------------------------------------
# forms


def assemble_brinkman_blocks(spaces: MixedSpaces, params: ModelParams, degree: int | None = None) -> dict:
    """Blocks ``A1`` (Z x Z), ``B1`` (V x Z), ``A2`` (V x V) and ``B2`` (Q x V)."""
    _check_same_mesh(spaces)
    rule, wdet, _ = _rule(spaces, degree)
    Z = spaces.Z.tabulate(rule.points)
    V = spaces.V.tabulate(rule.points)
    Q = spaces.Q.tabulate(rule.points)
    curl_z = _curl(Z.derivs)
    A1 = np.einsum("cn,cni,cnj->cij", wdet, Z.values, Z.values)
    B1 = -np.sqrt(params.mu_prime) * np.einsum("cn,cnid,cnjd->cij", wdet, V.values, curl_z)
    A2 = params.drag * np.einsum("cn,cnid,cnjd->cij", wdet, V.values, V.values)
    B2 = np.einsum("cn,cni,cnj->cij", wdet, Q.values, V.derivs)
    return {
        "A1": _matrix(spaces.Z, spaces.Z, A1),
        "B1": _matrix(spaces.V, spaces.Z, B1),
        "A2": _matrix(spaces.V, spaces.V, A2),
        "B2": _matrix(spaces.Q, spaces.V, B2),
    }


def assemble_a3(spaces: MixedSpaces, params: ModelParams, degree: int | None = None) -> sp.csr_matrix:
    rule, wdet, _ = _rule(spaces, degree)
    Y = spaces.Y.tabulate(rule.points)
    local = (params.sigma0 * np.einsum("cn,cni,cnj->cij", wdet, Y.values, Y.values)
             + params.alpha * np.einsum("cn,cnid,cnjd->cij", wdet, Y.derivs, Y.derivs))
    return _matrix(spaces.Y, spaces.Y, local)


def assemble_convection(spaces: MixedSpaces, u_coeffs: np.ndarray, degree: int | None = None) -> sp.csr_matrix:
    """``C1(u)[i, j] = ((u . grad S_j), S_i)``, the non-symmetrised convective form."""
    rule, wdet, _ = _rule(spaces, degree)
    Y = spaces.Y.tabulate(rule.points)
    u, _ = spaces.V.evaluate(u_coeffs, rule.points)
    adv = np.einsum("cnd,cnjd->cnj", u, Y.derivs)
    return _matrix(spaces.Y, spaces.Y, np.einsum("cn,cni,cnj->cij", wdet, Y.values, adv))


def assemble_energy_operator(spaces: MixedSpaces, params: ModelParams, u_coeffs: np.ndarray,
                             degree: int | None = None) -> sp.csr_matrix:
    """``A3 + C1(u)`` acting on temperature DOFs."""
    return (assemble_a3(spaces, params, degree)
            + assemble_convection(spaces, u_coeffs, degree)).tocsr()


def assemble_dissipation_load(spaces: MixedSpaces, params: ModelParams, u_coeffs: np.ndarray,
                              degree: int | None = None) -> np.ndarray:
    """``c2(u, u; S_i) = mu / (kappa c' rho) (|u|^2, S_i)``."""
    rule, wdet, _ = _rule(spaces, degree)
    Y = spaces.Y.tabulate(rule.points)
    u, _ = spaces.V.evaluate(u_coeffs, rule.points)
    local = params.dissipation * np.einsum("cn,cn,cni->ci", wdet, np.sum(u * u, axis=-1), Y.values)
    return _vector(spaces.Y, local)


class Buoyancy(NamedTuple):
    load: np.ndarray  # F(T; v_i) over V
    block: sp.csr_matrix  # linear part, V x Y
    constant: np.ndarray  # F0 over V, from -T0


def assemble_buoyancy(spaces: MixedSpaces, params: ModelParams, T_coeffs: np.ndarray | None = None,
                      degree: int | None = None) -> Buoyancy:
    """``F(S; v) = rho beta ((S - T0) g, v)`` split as ``block @ S + constant``."""
    rule, wdet, _ = _rule(spaces, degree)
    V = spaces.V.tabulate(rule.points)
    Y = spaces.Y.tabulate(rule.points)
    coef = params.rho * params.beta
    gv = np.einsum("cnid,d->cni", V.values, np.asarray(params.gravity))
    block = _matrix(spaces.V, spaces.Y, coef * np.einsum("cn,cni,cnj->cij", wdet, gv, Y.values))
    constant = _vector(spaces.V, -coef * params.T0 * np.einsum("cn,cni->ci", wdet, gv))
    T = np.zeros(spaces.Y.ndofs) if T_coeffs is None else T_coeffs
    return Buoyancy(block @ T + constant, block, constant)


def assemble_linearized_energy_coupling(spaces: MixedSpaces, params: ModelParams, u_coeffs, T_coeffs,
                                        degree: int | None = None) -> sp.csr_matrix:
    """Derivative of ``c1(u; T, S) - c2(u, u; S)`` with respect to ``u`` (Y x V)."""
    rule, wdet, _ = _rule(spaces, degree)
    V = spaces.V.tabulate(rule.points)
    Y = spaces.Y.tabulate(rule.points)
    u, _ = spaces.V.evaluate(u_coeffs, rule.points)
    _, gradT = spaces.Y.evaluate(T_coeffs, rule.points)
    w = gradT - 2.0 * params.dissipation * u
    wv = np.einsum("cnd,cnjd->cnj", w, V.values)
    return _matrix(spaces.Y, spaces.V, np.einsum("cn,cni,cnj->cij", wdet, Y.values, wv))


def energy_nonlinearity(spaces: MixedSpaces, params: ModelParams, u_coeffs, T_coeffs,
                        degree: int | None = None) -> np.ndarray:
    """``c1(u; T, S_i) - c2(u, u; S_i)``."""
    rule, wdet, _ = _rule(spaces, degree)
    Y = spaces.Y.tabulate(rule.points)
    u, _ = spaces.V.evaluate(u_coeffs, rule.points)
    _, gradT = spaces.Y.evaluate(T_coeffs, rule.points)
    integrand = np.sum(u * gradT, axis=-1) - params.dissipation * np.sum(u * u, axis=-1)
    return _vector(spaces.Y, np.einsum("cn,cn,cni->ci", wdet, integrand, Y.values))


# --------------------------------------------------------------------------
# data


def _boundary_integral(space: FESpace, tag: Tag, integrand, degree: int = LOAD_DEGREE) -> np.ndarray:
    """``sum_e int_e integrand(x, n) * phi_i ds`` over edges tagged ``tag``.

    ``integrand(x, y, n)`` returns scalars for scalar spaces and vectors for
    RT (contracted with the basis values).
    """
    mesh = space.mesh
    out = np.zeros(space.ndofs)
    edges = mesh.edges_with_tag(tag)
    if len(edges) == 0:
        return out
    cells = mesh.edge_cells[edges, 0]
    local = np.argmax(mesh.cell_edges[cells] == edges[:, None], axis=1)
    t, w = edge_quadrature(degree)
    for le in range(3):
        sel = local == le
        if not np.any(sel):
            continue
        c = cells[sel]
        ref = edge_points(le, t)
        tab = space.tabulate(ref)
        a, b = REF_VERTICES[LOCAL_EDGES[le]]
        scaled_normal = rot_cw(np.einsum("cij,j->ci", mesh.jacobians[c], b - a))
        length = np.linalg.norm(scaled_normal, axis=1)
        normal = scaled_normal / length[:, None]
        X = mesh.map_points(ref)[c]
        f = integrand(X[..., 0], X[..., 1], normal[:, None, :])
        wl = w[None, :] * length[:, None]
        vals = tab.values[c]
        if space.kind == "RT":
            contrib = np.einsum("cn,cnd,cnid->ci", wl, f, vals)
        else:
            contrib = np.einsum("cn,cn,cni->ci", wl, f, vals)
        np.add.at(out, space.cell_dofs[c], contrib)
    return out


def assemble_natural_boundary_loads(spaces: MixedSpaces, params: ModelParams, exact,
                                    degree: int = LOAD_DEGREE):
    """Loads from non-homogeneous natural data of the exact solution ``exact``.

    Returns ``(L_w, L_u, L_T)``:

    - ``L_w = sqrt(mu') int_Sigma (u . t) zeta`` with ``t = (-n_y, n_x)``,
    - ``L_u = int_Sigma p (v . n)``,
    - ``L_T = alpha int_Gamma (grad T . n) S``.
    """
    mesh = spaces.mesh
    if len(mesh.edges_with_tag(Tag.GAMMA)) + len(mesh.edges_with_tag(Tag.SIGMA)) != len(mesh.boundary_edges):
        raise ValueError("mesh boundary is not fully tagged")

    def tangential_u(x, y, n):
        u = exact.u(x, y)
        return np.sqrt(params.mu_prime) * (u[..., 1] * n[..., 0] - u[..., 0] * n[..., 1])

    def pressure_normal(x, y, n):
        return exact.p(x, y)[..., None] * n

    def heat_flux(x, y, n):
        return params.alpha * np.sum(exact.grad_T(x, y) * n, axis=-1)

    return (
        _boundary_integral(spaces.Z, Tag.SIGMA, tangential_u, degree),
        _boundary_integral(spaces.V, Tag.SIGMA, pressure_normal, degree),
        _boundary_integral(spaces.Y, Tag.GAMMA, heat_flux, degree),
    )


def assemble_volume_loads(spaces: MixedSpaces, exact, degree: int = LOAD_DEGREE):
    """``(-(f, v_i), (g, S_i))`` for the manufactured force and heat source."""
    rule = quadrature(degree)
    wdet = rule.weights[None, :] * spaces.mesh.dets[:, None]
    X = spaces.mesh.map_points(rule.points)
    x, y = X[..., 0], X[..., 1]
    V = spaces.V.tabulate(rule.points)
    Y = spaces.Y.tabulate(rule.points)
    Lu = -_vector(spaces.V, np.einsum("cn,cnd,cnid->ci", wdet, exact.force(x, y), V.values))
    G = _vector(spaces.Y, np.einsum("cn,cn,cni->ci", wdet, exact.heat_source(x, y), Y.values))
    return Lu, G


@dataclass
class Loads:
    """Right-hand sides and essential data of one problem instance.

    ``omega``, ``u``, ``T`` are load vectors over Z, V, Y (natural-boundary
    plus volume terms; the buoyancy constant is added by the system).
    ``essential`` maps ``"omega"``, ``"u"``, ``"T"`` to (dofs, values) in the
    numbering of the corresponding space.
    """

    omega: np.ndarray
    u: np.ndarray
    T: np.ndarray
    essential: dict = field(default_factory=dict)

    def global_essential(self, spaces: MixedSpaces):
        o = spaces.offsets
        offset = {"omega": o[0], "u": o[1], "T": o[3]}
        dofs, vals = [], []
        for name, (d, v) in self.essential.items():
            dofs.append(np.asarray(d, dtype=np.int64) + offset[name])
            vals.append(np.asarray(v, dtype=float))
        if not dofs:
            return np.empty(0, dtype=np.int64), np.empty(0)
        return np.concatenate(dofs), np.concatenate(vals)


def homogeneous_essential(spaces: MixedSpaces) -> dict:
    """Essential DOF sets (omega, u.n on Gamma; T on Sigma) with zero values."""
    out = {}
    for name, space, tag in (("omega", spaces.Z, Tag.GAMMA), ("u", spaces.V, Tag.GAMMA),
                             ("T", spaces.Y, Tag.SIGMA)):
        d = space.boundary_dofs(tag)
        out[name] = (d, np.zeros(len(d)))
    return out


def zero_loads(spaces: MixedSpaces) -> Loads:
    Z, V, _, Y = spaces.sizes
    return Loads(np.zeros(Z), np.zeros(V), np.zeros(Y), homogeneous_essential(spaces))


def build_loads(spaces: MixedSpaces, params: ModelParams, exact) -> Loads:
    """Volume, natural-boundary and essential data for a manufactured solution."""
    Lw, Lu_nat, LT_nat = assemble_natural_boundary_loads(spaces, params, exact)
    Lu_vol, G = assemble_volume_loads(spaces, exact)
    essential = {
        "omega": essential_dofs(spaces.Z, Tag.GAMMA, exact.omega),
        "u": essential_dofs(spaces.V, Tag.GAMMA, exact.u),
        "T": essential_dofs(spaces.Y, Tag.SIGMA, exact.T),
    }
    return Loads(Lw, Lu_nat + Lu_vol, LT_nat + G, essential)


# --------------------------------------------------------------------------
# coupled system


@dataclass
class SolutionState:
    omega: np.ndarray
    u: np.ndarray
    p: np.ndarray
    T: np.ndarray

    @classmethod
    def zeros(cls, spaces: MixedSpaces) -> "SolutionState":
        return cls(*(np.zeros(n) for n in spaces.sizes))

    @classmethod
    def from_vector(cls, spaces: MixedSpaces, x: np.ndarray) -> "SolutionState":
        if len(x) != spaces.ndofs:
            raise ValueError(f"state has {len(x)} entries, expected {spaces.ndofs}")
        return cls(*(np.array(part) for part in spaces.split(x)))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.omega, self.u, self.p, self.T])


class CoupledSystem:
    """Assembled linear blocks plus the nonlinear energy terms of one problem."""

    def __init__(self, spaces: MixedSpaces, params: ModelParams, loads: Loads | None = None,
                 degree: int | None = None):
        self.spaces = spaces
        self.params = params
        self.loads = loads if loads is not None else zero_loads(spaces)
        self.degree = interior_degree(spaces.k) if degree is None else degree
        blocks = assemble_brinkman_blocks(spaces, params, self.degree)
        buoy = assemble_buoyancy(spaces, params, None, self.degree)
        A3 = assemble_a3(spaces, params, self.degree)
        self.blocks = dict(blocks, FT=buoy.block, A3=A3)
        A1, B1, A2, B2 = blocks["A1"], blocks["B1"], blocks["A2"], blocks["B2"]
        self.linear = sp.bmat([
            [A1, B1.T, None, None],
            [B1, -A2, B2.T, -buoy.block],
            [None, B2, None, None],
            [None, None, None, A3],
        ], format="csr")
        self.rhs = spaces.join(self.loads.omega, buoy.constant + self.loads.u,
                               np.zeros(spaces.Q.ndofs), self.loads.T)
        self.essential_dofs, self.essential_values = self.loads.global_essential(spaces)

    def _parts(self, x):
        x = np.asarray(x, dtype=float)
        if len(x) != self.spaces.ndofs:
            raise ValueError(f"state has {len(x)} entries, expected {self.spaces.ndofs}")
        _, u, _, T = self.spaces.split(x)
        return x, u, T

    def residual(self, x) -> np.ndarray:
        """Residual of all four equations, before any essential-condition treatment."""
        x, u, T = self._parts(x)
        r = self.linear @ x - self.rhs
        r[self.spaces.offsets[3]:] += energy_nonlinearity(self.spaces, self.params, u, T, self.degree)
        return r

    def jacobian(self, x) -> sp.csr_matrix:
        x, u, T = self._parts(x)
        sps = self.spaces
        D = assemble_linearized_energy_coupling(sps, self.params, u, T, self.degree)
        C1 = assemble_convection(sps, u, self.degree)
        nZ, nV, nQ, _ = sps.sizes
        nonlinear = sp.bmat([
            [sp.csr_matrix((nZ, nZ)), None, None, None],
            [None, sp.csr_matrix((nV, nV)), None, None],
            [None, None, sp.csr_matrix((nQ, nQ)), None],
            [None, D, None, C1],
        ], format="csr")
        return (self.linear + nonlinear).tocsr()


def assemble_residual(spaces: MixedSpaces, params: ModelParams, state: SolutionState,
                      loads: Loads | None = None) -> np.ndarray:
    return CoupledSystem(spaces, params, loads).residual(state.to_vector())


def assemble_jacobian(spaces: MixedSpaces, params: ModelParams, state: SolutionState) -> sp.csr_matrix:
    return CoupledSystem(spaces, params).jacobian(state.to_vector())
