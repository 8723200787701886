"""Lowest-order edge elements on tetrahedra and quadrature-based assembly.

Every discrete space used by the package is described by a
:class:`QuadratureSpace`: sparse operators that map a coefficient vector to
field values and curls at the quadrature points, the quadrature weights, and
the discrete gradient from potentials into the space.  Bilinear forms are then
``C.T @ blockdiag(w * mu^-1) @ C`` and ``E.T @ blockdiag(w * V) @ E``, and the
nonlinear terms are evaluated on exactly the same points.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.io
import scipy.sparse as sp

from . import quadrature
from .mesh import TET_EDGES, Mesh

SPACE_TAGS = ("full", "V", "W", "Vplus", "Vtilde", "V0")
TOL_DIV = 1e-10


@dataclass
class FieldVector:
    """Coefficients over the interior edges, tagged with the subspace they lie in."""

    coefficients: np.ndarray
    space_tag: str = "full"

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.space_tag not in SPACE_TAGS:
            raise ValueError(f"unknown space tag {self.space_tag!r}")

    def __len__(self):
        return len(self.coefficients)


def coeffs(e) -> np.ndarray:
    return e.coefficients if isinstance(e, FieldVector) else np.asarray(e, dtype=float)


class CoefficientField:
    """Symmetric positive definite 3x3 tensor field x -> K(x).

    ``profiles`` is set for tensors of the uniaxial form diag(a, a, b), where
    ``a`` and ``b`` are functions of (r, x3).
    """

    def __init__(self, evaluator, c_min, c_max, name="", profiles=None):
        if not (0 < c_min <= c_max):
            raise ValueError(f"need 0 < c_min <= c_max, got {c_min}, {c_max}")
        self.evaluator = evaluator
        self.c_min = float(c_min)
        self.c_max = float(c_max)
        self.name = name
        self.profiles = profiles

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        K = np.asarray(self.evaluator(x), dtype=float)
        return np.broadcast_to(K, (len(x), 3, 3)).copy() if K.shape == (3, 3) else K

    def __repr__(self):
        return f"CoefficientField({self.name or 'custom'}, [{self.c_min:g}, {self.c_max:g}])"

    @classmethod
    def constant(cls, matrix, name=None):
        K = np.array(matrix, dtype=float)
        if K.ndim == 0:
            K = K * np.eye(3)
        elif K.ndim == 1:
            K = np.diag(K)
        if not np.allclose(K, K.T, rtol=0, atol=1e-14 * np.abs(K).max()):
            raise ValueError("coefficient matrix is not symmetric")
        ev = np.linalg.eigvalsh(K)
        if ev[0] <= 0:
            raise ValueError(f"coefficient matrix is not positive definite (eigenvalues {ev})")
        profiles = None
        off = K - np.diag(np.diag(K))
        if not off.any() and K[0, 0] == K[1, 1]:
            a, b = K[0, 0], K[2, 2]
            profiles = (lambda r, z, a=a: np.full(np.shape(r), a), lambda r, z, b=b: np.full(np.shape(r), b))
        return cls(lambda x: K, ev[0], ev[-1], name=name or f"const{np.round(np.diag(K), 6).tolist()}", profiles=profiles)

    @classmethod
    def identity(cls, scale=1.0):
        return cls.constant(scale * np.eye(3), name=f"{scale:g}*Id")

    @classmethod
    def uniaxial(cls, a, b, bounds, name="uniaxial"):
        """diag(a(r, x3), a(r, x3), b(r, x3)) with declared eigenvalue bounds."""

        def ev(x):
            r = np.hypot(x[:, 0], x[:, 1])
            av = np.broadcast_to(a(r, x[:, 2]), r.shape)
            bv = np.broadcast_to(b(r, x[:, 2]), r.shape)
            K = np.zeros((len(x), 3, 3))
            K[:, 0, 0] = K[:, 1, 1] = av
            K[:, 2, 2] = bv
            return K

        return cls(ev, bounds[0], bounds[1], name=name, profiles=(a, b))

    @classmethod
    def piecewise(cls, regions, default, name="piecewise"):
        """Axis-aligned boxes ``(lo, hi, matrix)``; first match wins, else ``default``."""
        mats = [np.array(m, dtype=float) for _, _, m in regions] + [np.array(default, dtype=float)]
        mats = [np.diag(m) if m.ndim == 1 else m for m in mats]
        evs = np.concatenate([np.linalg.eigvalsh(m) for m in mats])
        boxes = [(np.asarray(lo, float), np.asarray(hi, float)) for lo, hi, _ in regions]

        def evaluate(x):
            K = np.broadcast_to(mats[-1], (len(x), 3, 3)).copy()
            done = np.zeros(len(x), dtype=bool)
            for (lo, hi), m in zip(boxes, mats):
                inside = ~done & np.all((x >= lo) & (x <= hi), axis=1)
                K[inside] = m
                done |= inside
            return K

        return cls(evaluate, evs.min(), evs.max(), name=name)

    def scaled(self, c: float) -> "CoefficientField":
        prof = None
        if self.profiles is not None:
            a, b = self.profiles
            prof = (lambda r, z: c * a(r, z), lambda r, z: c * b(r, z))
        return CoefficientField(lambda x: c * self(x), c * self.c_min, c * self.c_max, f"{c:g}*{self.name}", prof)

    def validate(self, x) -> np.ndarray:
        """Evaluate at ``x`` and check symmetry and the declared bounds."""
        K = self(x)
        asym = np.abs(K - np.swapaxes(K, 1, 2)).max(axis=(1, 2))
        scale = np.abs(K).max(axis=(1, 2))
        bad = np.flatnonzero(asym > 1e-14 * np.maximum(scale, 1.0))
        if bad.size:
            i = bad[0]
            raise ValueError(f"{self!r} not symmetric at x={x[i].tolist()} (asymmetry {asym[i]:.3e})")
        ev = np.linalg.eigvalsh(K)
        lo = ev[:, 0] < self.c_min * (1 - 1e-12)
        hi = ev[:, -1] > self.c_max * (1 + 1e-12)
        bad = np.flatnonzero(lo | hi)
        if bad.size:
            i = bad[0]
            raise ValueError(
                f"{self!r} not uniformly positive definite within declared bounds at x={x[i].tolist()}: "
                f"eigenvalues {ev[i].tolist()}"
            )
        return K


@dataclass(eq=False)
class QuadratureSpace:
    """Discrete field space seen through its quadrature points.

    ``values`` and ``curls`` have 3 rows per quadrature point (row 3q+c is the
    c-th component at point q).  For the meridian reductions the components
    are taken in the local frame (e_r, e_theta, e_x3) at the point (r, 0, x3).
    """

    kind: str
    points: np.ndarray
    weights: np.ndarray
    values: sp.csr_matrix
    curls: sp.csr_matrix
    gradient: sp.csr_matrix
    element_of_point: np.ndarray
    mesh: object = None
    dof_entities: np.ndarray | None = None
    potential_entities: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n_dofs(self) -> int:
        return self.values.shape[1]

    @property
    def n_potentials(self) -> int:
        return self.gradient.shape[1]

    @property
    def n_points(self) -> int:
        return len(self.weights)

    def field_at_points(self, e) -> np.ndarray:
        return (self.values @ coeffs(e)).reshape(-1, 3)

    def curl_at_points(self, e) -> np.ndarray:
        return (self.curls @ coeffs(e)).reshape(-1, 3)


def blockdiag(blocks: np.ndarray) -> sp.csr_matrix:
    """Sparse block-diagonal matrix from an (n, 3, 3) array."""
    n = len(blocks)
    return sp.bsr_matrix((blocks, np.arange(n), np.arange(n + 1)), shape=(3 * n, 3 * n)).tocsr()


_EDGE_SPACES: "weakref.WeakKeyDictionary[Mesh, QuadratureSpace]" = weakref.WeakKeyDictionary()


def barycentric_gradients(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the barycentric coordinates, shape (T, 4, 3), and volumes."""
    p = mesh.vertices[mesh.tets]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=2)
    inv = np.linalg.inv(jac)
    grads = np.empty((mesh.n_tets, 4, 3))
    grads[:, 1:] = inv
    grads[:, 0] = -inv.sum(axis=1)
    return grads, np.abs(np.linalg.det(jac)) / 6.0


def edge_space(mesh: Mesh) -> QuadratureSpace:
    """Whitney edge-element space on the interior edges of ``mesh`` (cached)."""
    if mesh in _EDGE_SPACES:
        return _EDGE_SPACES[mesh]
    bary, wq = quadrature.tet14()
    nq = len(wq)
    T = mesh.n_tets
    grads, vol = barycentric_gradients(mesh)

    dof_of_edge = np.full(mesh.n_edges, -1, dtype=np.int64)
    interior = mesh.interior_edges
    dof_of_edge[interior] = np.arange(len(interior))
    pot_of_vertex = np.full(mesh.n_vertices, -1, dtype=np.int64)
    ivert = mesh.interior_vertices
    pot_of_vertex[ivert] = np.arange(len(ivert))

    i, j = TET_EDGES[:, 0], TET_EDGES[:, 1]
    sign = mesh.tet_edge_signs.astype(float)  # (T, 6)
    gi, gj = grads[:, i], grads[:, j]  # (T, 6, 3)
    # phi_ij = l_i grad l_j - l_j grad l_i at each quadrature point
    li, lj = bary[:, i], bary[:, j]  # (nq, 6)
    vals = li[None, :, :, None] * gj[:, None] - lj[None, :, :, None] * gi[:, None]  # (T, nq, 6, 3)
    vals *= sign[:, None, :, None]
    curl = 2.0 * np.cross(gi, gj) * sign[..., None]  # (T, 6, 3)
    curls = np.broadcast_to(curl[:, None], vals.shape)

    cols = dof_of_edge[mesh.tet_edges]  # (T, 6)
    rows = (3 * np.arange(T * nq)).reshape(T, nq)[:, :, None, None] + np.arange(3)[None, None, None, :]
    rows = np.broadcast_to(rows, (T, nq, 6, 3))
    colsb = np.broadcast_to(cols[:, None, :, None], (T, nq, 6, 3))
    keep = colsb >= 0
    shape = (3 * T * nq, len(interior))
    values = sp.csr_matrix((vals[keep], (rows[keep], colsb[keep])), shape=shape)
    curlop = sp.csr_matrix((curls[keep], (rows[keep], colsb[keep])), shape=shape)

    e = mesh.edges[interior]
    gr, gc, gv = [], [], []
    for end, s in ((1, 1.0), (0, -1.0)):
        p = pot_of_vertex[e[:, end]]
        ok = p >= 0
        gr.append(np.flatnonzero(ok))
        gc.append(p[ok])
        gv.append(np.full(ok.sum(), s))
    G = sp.csr_matrix((np.concatenate(gv), (np.concatenate(gr), np.concatenate(gc))), shape=(len(interior), len(ivert)))

    verts = mesh.vertices[mesh.tets]  # (T, 4, 3)
    points = np.einsum("qa,tak->tqk", bary, verts).reshape(-1, 3)
    weights = (vol[:, None] * wq[None, :]).ravel()
    space = QuadratureSpace(
        kind="edge3d",
        points=points,
        weights=weights,
        values=values,
        curls=curlop,
        gradient=G,
        element_of_point=np.repeat(np.arange(T), nq),
        mesh=mesh,
        dof_entities=interior,
        potential_entities=ivert,
    )
    _EDGE_SPACES[mesh] = space
    return space


def _space(obj) -> QuadratureSpace:
    return obj if isinstance(obj, QuadratureSpace) else edge_space(obj)


def _sym(A):
    A = A.tocsr()
    return ((A + A.T) * 0.5).tocsr()


def assemble_curlcurl(m, mu: CoefficientField) -> sp.csr_matrix:
    """Stiffness matrix of (mu^-1 curl u, curl v) on the interior edges."""
    space = _space(m)
    K = mu.validate(space.points)
    D = blockdiag(space.weights[:, None, None] * np.linalg.inv(K))
    C = space.curls
    return _sym(C.T @ D @ C)


def assemble_mass(m, V: CoefficientField) -> sp.csr_matrix:
    """Mass matrix of (V u, v) on the interior edges."""
    space = _space(m)
    K = V.validate(space.points)
    D = blockdiag(space.weights[:, None, None] * K)
    E = space.values
    return _sym(E.T @ D @ E)


def assemble_gradient(m) -> sp.csr_matrix:
    """Discrete gradient: interior-vertex potentials -> interior-edge coefficients."""
    return _space(m).gradient


def integrate_field_functional(m, e, g: Callable[[np.ndarray], np.ndarray]) -> float:
    """Quadrature sum of ``g(u(x_q)) w_q``; ``g`` maps an (n, 3) array to (n,)."""
    space = _space(m)
    u = space.field_at_points(e)
    vals = np.asarray(g(u), dtype=float).reshape(-1)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        q = bad[0]
        raise FloatingPointError(
            f"non-finite integrand {vals[q]} at quadrature point {q} "
            f"(element {space.element_of_point[q]}, x={space.points[q].tolist()})"
        )
    return float(vals @ space.weights)


def interpolate(mesh: Mesh, fn: Callable[[np.ndarray], np.ndarray], n_line: int = 5) -> FieldVector:
    """Edge-element interpolant: tangential line integrals over the interior edges."""
    s, w = quadrature.line(n_line)
    e = mesh.edges[mesh.interior_edges]
    a, b = mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]
    t = b - a
    pts = a[:, None, :] + s[None, :, None] * t[:, None, :]
    vals = np.asarray(fn(pts.reshape(-1, 3))).reshape(len(e), len(s), 3)
    return FieldVector(np.einsum("eqk,ek,q->e", vals, t, w))


def vertex_average(mesh: Mesh, e) -> np.ndarray:
    """Edge field averaged to vertices (visualization only)."""
    space = edge_space(mesh)
    u = space.field_at_points(e).reshape(mesh.n_tets, -1, 3).mean(axis=1)
    acc = np.zeros((mesh.n_vertices, 3))
    cnt = np.zeros(mesh.n_vertices)
    for k in range(4):
        np.add.at(acc, mesh.tets[:, k], u)
        np.add.at(cnt, mesh.tets[:, k], 1.0)
    return acc / cnt[:, None]


def write_matrix_market(path, A) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), symmetry="symmetric", field="real")


@dataclass(eq=False)
class MaxwellOperators:
    """Assembled stiffness ``A``, mass ``M`` and gradient ``G`` on one space.

    ``cache`` holds factorizations shared by the spectrum, decomposition and
    critical-point code; the operators themselves are never modified.
    """

    space: QuadratureSpace
    mu: CoefficientField
    V: CoefficientField
    A: sp.csr_matrix
    M: sp.csr_matrix
    G: sp.csr_matrix
    cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def assemble(cls, m, mu: CoefficientField, V: CoefficientField) -> "MaxwellOperators":
        space = _space(m)
        return cls(space, mu, V, assemble_curlcurl(space, mu), assemble_mass(space, V), space.gradient)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_potentials(self) -> int:
        return self.G.shape[1]

    def energy_norm_sq(self, e) -> float:
        c = coeffs(e)
        return float(c @ (self.A @ c) + c @ (self.M @ c))
