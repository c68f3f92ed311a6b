"""Global finite element spaces, interpolation and L2 projection.

DOF numbering
-------------
CG_m : vertices first, then (m = 2) one DOF per edge midpoint at ``V + e``.
DG_k : ``k`` -> cell-local nodal P_k basis, DOF ``c * nloc + i``.
RT_k : edge moments ``e * (k + 1) + j`` against shifted Legendre polynomials
       along the global edge direction, with the global normal
       ``rot_cw(x_hi - x_lo) / |x_hi - x_lo|``; for k = 1 two interior DOFs per
       cell follow at ``(k + 1) * E + 2 * c + i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import LOCAL_EDGES, Mesh, Tag
from .reference import (
    REF_VERTICES,
    UnsupportedOrder,
    edge_points,
    edge_quadrature,
    quadrature,
    rot_cw,
    rt_basis,
    scalar_basis,
    shifted_legendre,
)

INTERP_DEGREE = 10


@dataclass(frozen=True)
class Tabulation:
    """Physical basis data at mapped reference points for every cell.

    ``values``: (C, n, nloc) for scalar spaces, (C, n, nloc, 2) for RT.
    ``derivs``: gradients (C, n, nloc, 2) for scalar spaces, divergences
    (C, n, nloc) for RT.  Orientation signs are already applied.
    """

    values: np.ndarray
    derivs: np.ndarray


class FESpace:
    """One of CG_m (m = 1, 2), DG_k (k = 0, 1) or RT_k (k = 0, 1) over a mesh."""

    def __init__(self, mesh: Mesh, kind: str, order: int):
        kind = kind.upper()
        self.mesh = mesh
        self.kind = kind
        self.order = int(order)
        C, V, E = mesh.n_cells, mesh.n_vertices, mesh.n_edges
        if kind == "CG":
            if self.order not in (1, 2):
                raise UnsupportedOrder(f"CG order {order} not supported (use 1 or 2)")
            self.basis = scalar_basis(self.order)
            dofs = [mesh.cells] if self.order == 1 else [mesh.cells, V + mesh.cell_edges]
            self.cell_dofs = np.hstack(dofs)
            self.ndofs = V if self.order == 1 else V + E
            self.cell_signs = np.ones(self.cell_dofs.shape)
        elif kind == "DG":
            if self.order not in (0, 1):
                raise UnsupportedOrder(f"DG order {order} not supported (use 0 or 1)")
            self.basis = scalar_basis(self.order)
            nloc = self.basis.dim
            self.cell_dofs = np.arange(C * nloc).reshape(C, nloc)
            self.ndofs = C * nloc
            self.cell_signs = np.ones(self.cell_dofs.shape)
        elif kind == "RT":
            if self.order not in (0, 1):
                raise UnsupportedOrder(f"RT order {order} not supported (use 0 or 1)")
            k = self.order
            self.basis = rt_basis(k)
            ne = k + 1
            edge_dofs = (mesh.cell_edges[:, :, None] * ne + np.arange(ne)).reshape(C, 3 * ne)
            # local moment j = s^(j+1) * global moment (normal and parameter both flip)
            s = mesh.cell_edge_signs[:, :, None]
            edge_signs = (s ** (np.arange(ne) + 1)).reshape(C, 3 * ne)
            if k == 0:
                self.cell_dofs, self.cell_signs = edge_dofs, edge_signs
            else:
                interior = ne * E + 2 * np.arange(C)[:, None] + np.arange(2)
                self.cell_dofs = np.hstack([edge_dofs, interior])
                self.cell_signs = np.hstack([edge_signs, np.ones((C, 2))])
            self.ndofs = ne * E + (2 * C if k == 1 else 0)
        else:
            raise ValueError(f"unknown space kind {kind!r}")
        self.cell_dofs = self.cell_dofs.astype(np.int64)
        self._cache: dict = {}

    def __repr__(self) -> str:
        return f"FESpace({self.kind}{self.order}, ndofs={self.ndofs})"

    @property
    def is_vector(self) -> bool:
        return self.kind == "RT"

    @property
    def nloc(self) -> int:
        return self.cell_dofs.shape[1]

    # ------------------------------------------------------------------
    def tabulate(self, ref_points: np.ndarray) -> Tabulation:
        key = ref_points.tobytes()
        if key in self._cache:
            return self._cache[key]
        mesh = self.mesh
        vals, ders = self.basis(ref_points)
        sg = self.cell_signs[:, None, :]
        if self.kind == "RT":
            J, det = mesh.jacobians, mesh.dets
            values = np.einsum("cij,nlj->cnli", J, vals) / det[:, None, None, None]
            values *= sg[..., None]
            derivs = ders[None] / det[:, None, None] * sg
        else:
            values = np.broadcast_to(vals, (mesh.n_cells,) + vals.shape)
            derivs = np.einsum("cji,nlj->cnli", mesh.inverse_jacobians, ders)
        tab = Tabulation(values, derivs)
        self._cache[key] = tab
        return tab

    def local_coefficients(self, coeffs: np.ndarray) -> np.ndarray:
        return np.asarray(coeffs)[self.cell_dofs] * self.cell_signs

    def evaluate(self, coeffs: np.ndarray, ref_points: np.ndarray):
        """Field values and gradients (scalar) or divergences (RT) at mapped points."""
        tab = self.tabulate(ref_points)
        loc = np.asarray(coeffs)[self.cell_dofs]  # signs live in the tabulation
        if self.kind == "RT":
            return (np.einsum("cnli,cl->cni", tab.values, loc),
                    np.einsum("cnl,cl->cn", tab.derivs, loc))
        return (np.einsum("cnl,cl->cn", tab.values, loc),
                np.einsum("cnli,cl->cni", tab.derivs, loc))

    # ------------------------------------------------------------------
    def node_coordinates(self) -> np.ndarray:
        """Coordinates of the nodal DOFs of CG and DG spaces."""
        mesh = self.mesh
        if self.kind == "CG":
            coords = [mesh.vertices]
            if self.order == 2:
                coords.append(mesh.edge_midpoints())
            return np.vstack(coords)
        if self.kind == "DG":
            return mesh.map_points(self.basis.nodes).reshape(-1, 2)
        raise ValueError("RT DOFs are moments, not nodal values")

    def boundary_dofs(self, tag: Tag) -> np.ndarray:
        """DOFs attached to edges carrying ``tag`` (corners included)."""
        tag = _check_tag(tag)
        mesh = self.mesh
        edges = mesh.edges_with_tag(tag)
        if self.kind == "DG":
            return np.empty(0, dtype=np.int64)
        if self.kind == "RT":
            ne = self.order + 1
            return (edges[:, None] * ne + np.arange(ne)).ravel()
        dofs = [mesh.edges[edges].ravel()]
        if self.order == 2:
            dofs.append(mesh.n_vertices + edges)
        return np.unique(np.concatenate(dofs))

    def boundary_partition(self, essential_tag: Tag) -> dict:
        """Disjoint boundary DOF sets; shared corner DOFs go to ``essential_tag``."""
        essential_tag = _check_tag(essential_tag)
        other = Tag.SIGMA if essential_tag == Tag.GAMMA else Tag.GAMMA
        ess = self.boundary_dofs(essential_tag)
        return {essential_tag: ess,
                other: np.setdiff1d(self.boundary_dofs(other), ess)}


def _check_tag(tag) -> Tag:
    try:
        tag = Tag(tag)
    except ValueError:
        raise ValueError(f"unknown boundary tag {tag!r}") from None
    if tag == Tag.INTERIOR:
        raise ValueError("essential data needs a boundary tag (GAMMA or SIGMA)")
    return tag


def build_space(mesh: Mesh, kind: str) -> FESpace:
    """Build a space from a short name such as ``"CG2"``, ``"RT0"`` or ``"DG1"``."""
    name = kind.strip().upper()
    return FESpace(mesh, name[:2], int(name[2:]))


@dataclass(frozen=True, eq=False)
class MixedSpaces:
    """Vorticity, velocity, pressure and temperature spaces for degree ``k``.

    ``Z = CG_{k+1}``, ``V = RT_k``, ``Q = DG_k``, ``Y = CG_{k+1}``; unknowns are
    concatenated in that order.
    """

    mesh: Mesh
    k: int
    Z: FESpace
    V: FESpace
    Q: FESpace
    Y: FESpace

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        return (self.Z.ndofs, self.V.ndofs, self.Q.ndofs, self.Y.ndofs)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    @property
    def ndofs(self) -> int:
        return int(sum(self.sizes))

    def split(self, x: np.ndarray):
        o = self.offsets
        return tuple(x[o[i]:o[i + 1]] for i in range(4))

    def join(self, omega, u, p, T) -> np.ndarray:
        return np.concatenate([omega, u, p, T])


def build_spaces(mesh: Mesh, k: int) -> MixedSpaces:
    if k not in (0, 1):
        raise UnsupportedOrder(f"polynomial degree k={k} not supported (use 0 or 1)")
    return MixedSpaces(
        mesh=mesh,
        k=k,
        Z=FESpace(mesh, "CG", k + 1),
        V=FESpace(mesh, "RT", k),
        Q=FESpace(mesh, "DG", k),
        Y=FESpace(mesh, "CG", k + 1),
    )


# --------------------------------------------------------------------------
# interpolation and projection


def cell_evaluator(mesh: Mesh, f: Callable) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap ``f(x, y)`` as ``ref_points -> values at F_K(ref_points)`` for all cells."""

    def evaluate(ref_points: np.ndarray) -> np.ndarray:
        X = mesh.map_points(ref_points)
        return np.asarray(f(X[..., 0], X[..., 1]), dtype=float)

    return evaluate


def interpolate_cg(space: FESpace, f: Callable) -> np.ndarray:
    """Nodal (Lagrange) interpolant of ``f(x, y)``."""
    if space.kind != "CG":
        raise ValueError("interpolate_cg needs a CG space")
    X = space.node_coordinates()
    return np.broadcast_to(np.asarray(f(X[:, 0], X[:, 1]), dtype=float), (len(X),)).copy()


def rt_dofs_cellwise(space: FESpace, evaluate: Callable, degree: int = INTERP_DEGREE) -> np.ndarray:
    """Canonical RT interpolant from a cellwise evaluator.

    ``evaluate(ref_points)`` returns physical vector values (C, n, 2) at the
    images of ``ref_points`` in every cell.  Edge moments use the normal flux
    of each cell; on interior edges both cells give the same value for
    normally continuous fields.
    """
    if space.kind != "RT":
        raise ValueError("RT interpolation needs an RT space")
    mesh, k = space.mesh, space.order
    ne = k + 1
    coeffs = np.zeros(space.ndofs)
    t, w = edge_quadrature(degree)
    J = mesh.jacobians

    for e in range(3):
        a, b = REF_VERTICES[LOCAL_EDGES[e]]
        vals = evaluate(edge_points(e, t))  # (C, n, 2)
        normal = rot_cw(np.einsum("cij,j->ci", J, b - a))  # outward, times |edge|
        flux = np.einsum("cni,ci->cn", vals, normal)
        s = mesh.cell_edge_signs[:, e]
        for j in range(ne):
            local = flux @ (w * shifted_legendre(j, t))
            coeffs[mesh.cell_edges[:, e] * ne + j] = s ** (j + 1) * local
    if k == 1:
        q = quadrature(degree)
        vals = evaluate(q.points)
        # pull back: v_hat = det J J^{-1} v
        vhat = np.einsum("cij,cnj->cni", mesh.inverse_jacobians, vals) * mesh.dets[:, None, None]
        moments = np.einsum("n,cni->ci", q.weights, vhat)
        coeffs[ne * mesh.n_edges:] = moments.ravel()
    return coeffs


def interpolate_rt(space: FESpace, f: Callable, degree: int = INTERP_DEGREE) -> np.ndarray:
    """Canonical RT interpolant of the vector field ``f(x, y) -> (..., 2)``."""
    return rt_dofs_cellwise(space, cell_evaluator(space.mesh, f), degree)


def curl_to_rt(zspace: FESpace, vspace: FESpace, psi: np.ndarray) -> np.ndarray:
    """RT coefficients of ``curl psi = (d psi/dy, -d psi/dx)`` for a CG field ``psi``.

    Exact whenever CG order = RT order + 1, since then curl psi lies in RT_k.
    """

    def evaluate(ref_points):
        _, grad = zspace.evaluate(psi, ref_points)
        return np.stack([grad[..., 1], -grad[..., 0]], axis=-1)

    return rt_dofs_cellwise(vspace, evaluate)


def project_dg(space: FESpace, q: Callable, degree: int = INTERP_DEGREE) -> np.ndarray:
    """Cellwise L2 projection of ``q(x, y)`` onto DG_k."""
    if space.kind != "DG":
        raise ValueError("project_dg needs a DG space")
    return project_dg_values(space, cell_evaluator(space.mesh, q), degree)


def project_dg_values(space: FESpace, evaluate: Callable, degree: int = INTERP_DEGREE) -> np.ndarray:
    rule = quadrature(degree)
    phi, _ = space.basis(rule.points)
    mass = np.einsum("n,ni,nj->ij", rule.weights, phi, phi)
    vals = evaluate(rule.points)  # (C, n)
    rhs = np.einsum("n,cn,ni->ci", rule.weights, vals, phi)
    return np.linalg.solve(mass, rhs.T).T.ravel()


def essential_dofs(space: FESpace, tag: Tag, trace: Callable, degree: int = INTERP_DEGREE):
    """DOF indices and values realising an essential condition on ``tag`` edges.

    CG: nodal values of the scalar ``trace`` at nodes on tagged edges.
    RT: Legendre edge moments of ``trace . n`` for the vector ``trace`` on
    tagged edges.
    """
    tag = _check_tag(tag)
    mesh = space.mesh
    if space.kind == "CG":
        dofs = space.boundary_dofs(tag)
        X = space.node_coordinates()[dofs]
        vals = np.broadcast_to(np.asarray(trace(X[:, 0], X[:, 1]), dtype=float), dofs.shape)
        return dofs, vals.copy()
    if space.kind == "RT":
        ne = space.order + 1
        edges = mesh.edges_with_tag(tag)
        xa = mesh.vertices[mesh.edges[edges, 0]]
        xb = mesh.vertices[mesh.edges[edges, 1]]
        t, w = edge_quadrature(degree)
        pts = xa[:, None, :] + t[None, :, None] * (xb - xa)[:, None, :]
        vals = np.asarray(trace(pts[..., 0], pts[..., 1]), dtype=float)
        flux = np.einsum("eni,ei->en", vals, rot_cw(xb - xa))
        dofs = (edges[:, None] * ne + np.arange(ne)).ravel()
        moments = np.stack([flux @ (w * shifted_legendre(j, t)) for j in range(ne)], axis=1)
        return dofs, moments.ravel()
    raise ValueError("DG spaces carry no essential boundary DOFs")

