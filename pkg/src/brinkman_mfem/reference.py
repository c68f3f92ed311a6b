"""Reference triangle: quadrature, Lagrange and Raviart-Thomas bases, Piola map.

The reference triangle has vertices (0, 0), (1, 0), (0, 1).  Quadrature rules
are collapsed (conical) Gauss products, which are positive and exist for any
degree; they are built once per degree and cached.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy.special import roots_jacobi, roots_legendre

from .mesh import LOCAL_EDGES

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
MAX_QUADRATURE_DEGREE = 20


class UnsupportedOrder(ValueError):
    pass


def rot_cw(t: np.ndarray) -> np.ndarray:
    """Rotate vectors by -90 degrees: (tx, ty) -> (ty, -tx)."""
    t = np.asarray(t)
    return np.stack([t[..., 1], -t[..., 0]], axis=-1)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray  # (n, 2) reference coordinates
    weights: np.ndarray  # (n,), sum 1/2
    degree: int

    @property
    def barycentric(self) -> np.ndarray:
        x, y = self.points[:, 0], self.points[:, 1]
        return np.column_stack([1.0 - x - y, x, y])

    def __len__(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=None)
def quadrature(degree: int) -> QuadratureRule:
    """Rule on the reference triangle exact for polynomials of total degree ``degree``."""
    degree = int(degree)
    if degree < 0:
        raise ValueError("quadrature degree must be non-negative")
    if degree > MAX_QUADRATURE_DEGREE:
        raise UnsupportedOrder(
            f"quadrature degree {degree} exceeds the maximum supported degree "
            f"{MAX_QUADRATURE_DEGREE}"
        )
    n = degree // 2 + 1
    # int_T f = int_0^1 int_0^1 f(s, (1 - s) t) (1 - s) dt ds
    xs, ws = roots_jacobi(n, 1.0, 0.0)
    s = 0.5 * (xs + 1.0)
    ws = ws / 4.0
    xt, wt = roots_legendre(n)
    t = 0.5 * (xt + 1.0)
    wt = wt / 2.0
    S, Tt = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt)
    points = np.column_stack([S.ravel(), ((1.0 - S) * Tt).ravel()])
    return QuadratureRule(points=points, weights=W.ravel(), degree=degree)


@lru_cache(maxsize=None)
def edge_quadrature(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1] exact up to ``degree``."""
    n = int(degree) // 2 + 1
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


def shifted_legendre(j: int, t: np.ndarray) -> np.ndarray:
    coeffs = np.zeros(j + 1)
    coeffs[j] = 1.0
    return legendre.legval(2.0 * np.asarray(t) - 1.0, coeffs)


def edge_points(local_edge: int, t: np.ndarray) -> np.ndarray:
    """Reference points at parameters ``t`` along local edge (counterclockwise)."""
    a, b = REF_VERTICES[LOCAL_EDGES[local_edge]]
    return a + np.asarray(t)[:, None] * (b - a)


# --------------------------------------------------------------------------
# Lagrange bases


class ScalarBasis:
    """Nodal P_m basis on the reference triangle, m in {0, 1, 2}.

    Node order: vertices, then midpoints of local edges 0, 1, 2.  For m = 0
    the single node is the centroid.
    """

    def __init__(self, m: int):
        if m not in (0, 1, 2):
            raise UnsupportedOrder(f"Lagrange order {m} not supported (use 0, 1 or 2)")
        self.m = m
        self.dim = (m + 1) * (m + 2) // 2
        if m == 0:
            self.nodes = np.array([[1.0 / 3.0, 1.0 / 3.0]])
        elif m == 1:
            self.nodes = REF_VERTICES.copy()
        else:
            mids = 0.5 * (REF_VERTICES[LOCAL_EDGES[:, 0]] + REF_VERTICES[LOCAL_EDGES[:, 1]])
            self.nodes = np.vstack([REF_VERTICES, mids])

    def __call__(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Values (n, dim) and reference gradients (n, dim, 2) at ``points``."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(p)
        x, y = p[:, 0], p[:, 1]
        lam = np.column_stack([1.0 - x - y, x, y])
        dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        if self.m == 0:
            return np.ones((n, 1)), np.zeros((n, 1, 2))
        if self.m == 1:
            return lam, np.broadcast_to(dlam, (n, 3, 2)).copy()
        vals = np.empty((n, 6))
        grads = np.empty((n, 6, 2))
        for i in range(3):
            vals[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
            grads[:, i] = (4.0 * lam[:, i] - 1.0)[:, None] * dlam[i]
        for e, (a, b) in enumerate(LOCAL_EDGES):
            vals[:, 3 + e] = 4.0 * lam[:, a] * lam[:, b]
            grads[:, 3 + e] = 4.0 * (lam[:, a, None] * dlam[b] + lam[:, b, None] * dlam[a])
        return vals, grads


@lru_cache(maxsize=None)
def scalar_basis(m: int) -> ScalarBasis:
    return ScalarBasis(m)


def eval_scalar_basis(m: int, points) -> tuple[np.ndarray, np.ndarray]:
    return scalar_basis(m)(points)


# --------------------------------------------------------------------------
# Raviart-Thomas


def _rt_prime(k: int, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Monomial spanning set of RT_k = P_k^2 + x P_k: values (n, dim, 2), div (n, dim)."""
    x, y = points[:, 0], points[:, 1]
    one, zero = np.ones_like(x), np.zeros_like(x)
    if k == 0:
        vals = [(one, zero), (zero, one), (x, y)]
        divs = [zero, zero, 2.0 * one]
    else:
        vals = [(one, zero), (x, zero), (y, zero), (zero, one), (zero, x), (zero, y),
                (x * x, x * y), (x * y, y * y)]
        divs = [zero, one, zero, zero, zero, one, 3.0 * x, 3.0 * y]
    values = np.stack([np.stack(v, axis=-1) for v in vals], axis=1)
    return values, np.stack(divs, axis=1)


class RTBasis:
    """RT_k basis on the reference triangle dual to moment degrees of freedom.

    Local DOF ``e * (k + 1) + j`` is ``int_e (v . n_e) L_j ds`` on local edge
    ``e`` with outward unit normal ``n_e`` and shifted Legendre polynomial
    ``L_j`` in the counterclockwise edge parameter.  For k = 1 the last two
    DOFs are ``int_K v_x`` and ``int_K v_y``.
    """

    def __init__(self, k: int):
        if k not in (0, 1):
            raise UnsupportedOrder(f"Raviart-Thomas order {k} not supported (use 0 or 1)")
        self.k = k
        self.dim = (k + 1) * (k + 3)
        self.n_edge_dofs = k + 1
        D = self.dof_functionals(lambda pts: _rt_prime(k, pts)[0])
        self.coefficients = np.linalg.inv(D)

    def dof_functionals(self, field) -> np.ndarray:
        """Apply all local DOFs to ``field(points) -> (n, ..., 2)``.

        Returns an array with the DOF axis first.
        """
        k = self.k
        t, w = edge_quadrature(2 * k + 2)
        rows = []
        for e in range(3):
            a, b = REF_VERTICES[LOCAL_EDGES[e]]
            normal = rot_cw(b - a)  # outward, scaled by the edge length
            vn = np.einsum("n...i,i->n...", field(edge_points(e, t)), normal)
            for j in range(k + 1):
                rows.append(np.einsum("n,n...->...", w * shifted_legendre(j, t), vn))
        if k == 1:
            q = quadrature(2)
            v = field(q.points)
            rows.append(np.einsum("n,n...->...", q.weights, v[..., 0]))
            rows.append(np.einsum("n,n...->...", q.weights, v[..., 1]))
        return np.array(rows)

    def __call__(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Values (n, dim, 2) and divergences (n, dim) at ``points``."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        vals, divs = _rt_prime(self.k, p)
        C = self.coefficients
        return np.einsum("nmi,mj->nji", vals, C), divs @ C


@lru_cache(maxsize=None)
def rt_basis(k: int) -> RTBasis:
    return RTBasis(k)


def eval_rt_basis(k: int, points) -> tuple[np.ndarray, np.ndarray]:
    return rt_basis(k)(points)


def piola_map(J: np.ndarray, ref_values: np.ndarray, ref_divs: np.ndarray | None = None):
    """Contravariant Piola transform of reference vector fields.

    ``J`` is (2, 2) or (C, 2, 2); ``ref_values`` has trailing axis 2.  Returns
    physical values ``J v / det J`` (with a leading cell axis when ``J`` is
    batched) and, if given, divergences ``div v / det J``.
    """
    J = np.asarray(J, dtype=float)
    batched = J.ndim == 3
    Jb = J if batched else J[None]
    det = Jb[:, 0, 0] * Jb[:, 1, 1] - Jb[:, 0, 1] * Jb[:, 1, 0]
    scale = np.abs(Jb).reshape(len(Jb), -1).max(axis=1) ** 2
    if np.any(np.abs(det) <= 1e-14 * scale):
        raise ValueError("degenerate cell map (det J = 0)")
    vals = np.einsum("cij,...j->c...i", Jb, ref_values)
    vals /= det.reshape((-1,) + (1,) * (vals.ndim - 1))
    divs = None
    if ref_divs is not None:
        divs = ref_divs[None] / det.reshape((-1,) + (1,) * np.ndim(ref_divs))
    if not batched:
        vals = vals[0]
        divs = None if divs is None else divs[0]
    return vals if ref_divs is None else (vals, divs)
