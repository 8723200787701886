"""Cylindrically symmetric fields: meridian reductions, lifting and the frame splitting.

A rotation-invariant field on a cylinder splits pointwise into

    E_tau  = alpha(r, x3) (-x2, x1, 0)     (azimuthal)
    E_rho  = beta(r, x3)  (x1, x2, 0)      (radial)
    E_zeta = gamma(r, x3) (0, 0, 1)        (axial)

The two invariant subspaces {E = E_tau} and {E = E_rho + E_zeta} are solved
on a triangulated half-section {(r, x3)}.  Reduced spaces are
:class:`~nlmaxwell.fem.QuadratureSpace` objects whose points sit in the
half-plane (r, 0, x3); there the cylindrical frame coincides with the
Cartesian one, so the 3D coefficient fields are evaluated unchanged and all
integrals carry the weight 2 pi r.

Reduced integrands (r-derivatives written with subscripts):
  * azimuthal, u = r alpha e_theta:
    curl u = -r alpha_z e_r + (2 alpha + r alpha_r) e_z
  * meridional, u = E_r e_r + E_z e_z with E_r = r beta, E_z = gamma:
    curl u = (d_z E_r - d_r E_z) e_theta
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import quadrature
from .critical import CriticalPointResult, FieldProblem, ground_state, estimate_linking_level
from .decomposition import check_V_membership, helmholtz_project
from .fem import TOL_DIV, CoefficientField, FieldVector, MaxwellOperators, QuadratureSpace, coeffs, edge_space, interpolate
from .mesh import Mesh, build_cylinder_mesh, rotation_vertex_map
from .nonlinearity import NonlinearityModel, evaluate_on_space
from .spectrum import maxwell_eigenpairs, spectral_split

TRI_EDGES = np.array([(0, 1), (0, 2), (1, 2)])


class SymmetryError(ValueError):
    pass


# ---------------------------------------------------------------------------------------
# meridian mesh


@dataclass(frozen=True, eq=False)
class MeridianMesh:
    """Structured triangulation of [0, R] x [0, H] in the (r, x3) half-plane.

    Triangle vertex indices are stored in ascending order, so every local
    edge is oriented like its global edge.
    """

    nodes: np.ndarray
    tris: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    axis_flags: np.ndarray
    outer_flags: np.ndarray
    edge_outer_flags: np.ndarray
    radius: float
    height: float
    n_r: int
    n_z: int

    @property
    def interior_nodes(self) -> np.ndarray:
        """Nodes off the outer contour (the axis is not part of the boundary)."""
        return np.flatnonzero(~self.outer_flags)

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(~self.edge_outer_flags)

    def locate(self, r, z):
        """Triangle index and barycentric coordinates of points (r, z)."""
        r = np.asarray(r, dtype=float)
        z = np.asarray(z, dtype=float)
        hr, hz = self.radius / self.n_r, self.height / self.n_z
        i = np.clip(np.floor(r / hr).astype(np.int64), 0, self.n_r - 1)
        j = np.clip(np.floor(z / hz).astype(np.int64), 0, self.n_z - 1)
        s = r / hr - i
        t = z / hz - j
        upper = t > s
        tri = 2 * (i * self.n_z + j) + upper
        p = self.nodes[self.tris[tri]]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        rhs = np.stack([r, z], axis=1) - p[:, 0]
        lam12 = np.linalg.solve(jac, rhs[..., None])[..., 0]
        bary = np.column_stack([1 - lam12.sum(axis=1), lam12])
        return tri, bary


def build_meridian_mesh(radius: float = 1.0, height: float = 1.0, n_r: int = 4, n_z: int = 4) -> MeridianMesh:
    if n_r < 1 or n_z < 1 or not (radius > 0 and height > 0):
        raise ValueError("meridian mesh needs positive sizes and counts")
    rs = np.linspace(0.0, radius, n_r + 1)
    zs = np.linspace(0.0, height, n_z + 1)
    nodes = np.array([(r, z) for r in rs for z in zs])

    def nid(i, j):
        return i * (n_z + 1) + j

    tris = []
    for i in range(n_r):
        for j in range(n_z):
            a, b, c, d = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
            tris.append(sorted((a, b, c)))  # below the diagonal
            tris.append(sorted((a, c, d)))  # above the diagonal
    tris = np.array(tris, dtype=np.int64)
    loc = tris[:, TRI_EDGES].reshape(-1, 2)
    edges, inv = np.unique(loc, axis=0, return_inverse=True)
    tri_edges = inv.reshape(-1, 3)
    r, z = nodes[:, 0], nodes[:, 1]
    axis = r <= 1e-14
    outer = np.isclose(r, radius) | np.isclose(z, 0.0) | np.isclose(z, height)
    edge_outer = outer[edges[:, 0]] & outer[edges[:, 1]]
    # an edge joining two outer nodes lies on the contour unless it cuts a corner cell
    same_line = (
        (np.isclose(r[edges[:, 0]], radius) & np.isclose(r[edges[:, 1]], radius))
        | (np.isclose(z[edges[:, 0]], 0.0) & np.isclose(z[edges[:, 1]], 0.0))
        | (np.isclose(z[edges[:, 0]], height) & np.isclose(z[edges[:, 1]], height))
    )
    edge_outer &= same_line
    for arr in (nodes, tris, edges, tri_edges, axis, outer, edge_outer):
        arr.setflags(write=False)
    return MeridianMesh(nodes, tris, edges, tri_edges, axis, outer, edge_outer, float(radius), float(height), n_r, n_z)


def _tri_geometry(mm: MeridianMesh):
    p = mm.nodes[mm.tris]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    inv = np.linalg.inv(jac)
    grads = np.empty((len(mm.tris), 3, 2))
    grads[:, 1:] = inv
    grads[:, 0] = -inv.sum(axis=1)
    return grads, 0.5 * np.abs(np.linalg.det(jac))


def _quad_points(mm: MeridianMesh):
    bary, wq = quadrature.tri7()
    grads, area = _tri_geometry(mm)
    p = mm.nodes[mm.tris]
    pts = np.einsum("qa,tak->tqk", bary, p)  # (T, nq, 2)
    w = area[:, None] * wq[None, :] * 2.0 * np.pi * pts[..., 0]
    return bary, grads, pts, w


def _rows(T, nq, comp):
    return (3 * np.arange(T * nq)).reshape(T, nq) + comp


def tau_space(mm: MeridianMesh) -> QuadratureSpace:
    """Nodal P1 profiles alpha (zero on the outer contour) for u = r alpha e_theta."""
    bary, grads, pts, w = _quad_points(mm)
    T, nq = pts.shape[:2]
    dof = np.full(len(mm.nodes), -1)
    inner = mm.interior_nodes
    dof[inner] = np.arange(len(inner))
    cols = dof[mm.tris]  # (T, 3)
    r = pts[..., 0]  # (T, nq)
    phi = np.broadcast_to(bary[None], (T, nq, 3))
    dr = np.broadcast_to(grads[:, None, :, 0], (T, nq, 3))
    dz = np.broadcast_to(grads[:, None, :, 1], (T, nq, 3))
    colsb = np.broadcast_to(cols[:, None, :], (T, nq, 3))
    keep = colsb >= 0
    shape = (3 * T * nq, len(inner))

    def mat(entries):
        data, rows = [], []
        for comp, val in entries:
            rr = np.broadcast_to(_rows(T, nq, comp)[..., None], (T, nq, 3))
            data.append(val[keep])
            rows.append(rr[keep])
        return sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate([colsb[keep]] * len(entries)))), shape=shape)

    values = mat([(1, r[..., None] * phi)])
    curls = mat([(0, -r[..., None] * dz), (2, 2.0 * phi + r[..., None] * dr)])
    points = np.column_stack([pts[..., 0].ravel(), np.zeros(T * nq), pts[..., 1].ravel()])
    return QuadratureSpace(
        kind="tau",
        points=points,
        weights=w.ravel(),
        values=values,
        curls=curls,
        gradient=sp.csr_matrix((len(inner), 0)),
        element_of_point=np.repeat(np.arange(T), nq),
        mesh=mm,
        dof_entities=inner,
        potential_entities=np.zeros(0, dtype=np.int64),
    )


def meridional_space(mm: MeridianMesh) -> QuadratureSpace:
    """Edge elements for (E_r, E_z) = (r beta, gamma) with P1 potentials for W."""
    bary, grads, pts, w = _quad_points(mm)
    T, nq = pts.shape[:2]
    dof = np.full(len(mm.edges), -1)
    inner = mm.interior_edges
    dof[inner] = np.arange(len(inner))
    i, j = TRI_EDGES[:, 0], TRI_EDGES[:, 1]
    gi, gj = grads[:, i], grads[:, j]  # (T, 3, 2)
    li, lj = bary[:, i], bary[:, j]  # (nq, 3)
    vals = li[None, :, :, None] * gj[:, None] - lj[None, :, :, None] * gi[:, None]  # (T, nq, 3, 2)
    # curl_theta = d_z E_r - d_r E_z = -2 (g_i x g_j)
    cross = gi[..., 0] * gj[..., 1] - gi[..., 1] * gj[..., 0]
    ctheta = np.broadcast_to((-2.0 * cross)[:, None, :], (T, nq, 3))
    cols = np.broadcast_to(dof[mm.tri_edges][:, None, :], (T, nq, 3))
    keep = cols >= 0
    shape = (3 * T * nq, len(inner))

    def mat(entries):
        data, rows = [], []
        for comp, val in entries:
            rr = np.broadcast_to(_rows(T, nq, comp)[..., None], (T, nq, 3))
            data.append(val[keep])
            rows.append(rr[keep])
        return sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate([cols[keep]] * len(entries)))), shape=shape)

    values = mat([(0, vals[..., 0]), (2, vals[..., 1])])
    curls = mat([(1, ctheta)])

    pot = np.full(len(mm.nodes), -1)
    pnodes = mm.interior_nodes
    pot[pnodes] = np.arange(len(pnodes))
    e = mm.edges[inner]
    gr, gc, gv = [], [], []
    for end, s in ((1, 1.0), (0, -1.0)):
        p = pot[e[:, end]]
        ok = p >= 0
        gr.append(np.flatnonzero(ok))
        gc.append(p[ok])
        gv.append(np.full(ok.sum(), s))
    G = sp.csr_matrix((np.concatenate(gv), (np.concatenate(gr), np.concatenate(gc))), shape=(len(inner), len(pnodes)))
    points = np.column_stack([pts[..., 0].ravel(), np.zeros(T * nq), pts[..., 1].ravel()])
    return QuadratureSpace(
        kind="betagamma",
        points=points,
        weights=w.ravel(),
        values=values,
        curls=curls,
        gradient=G,
        element_of_point=np.repeat(np.arange(T), nq),
        mesh=mm,
        dof_entities=inner,
        potential_entities=pnodes,
    )


def _require_uniaxial(name, K: CoefficientField):
    if K.profiles is None:
        raise SymmetryError(f"{name} must be of the form diag(a, a, b) with profiles a(r, x3), b(r, x3); got {K!r}")


def assemble_reduced_tau(mm: MeridianMesh, mu: CoefficientField, V: CoefficientField) -> MaxwellOperators:
    _require_uniaxial("mu", mu)
    _require_uniaxial("V", V)
    return MaxwellOperators.assemble(tau_space(mm), mu, V)


def assemble_reduced_betagamma(mm: MeridianMesh, mu: CoefficientField, V: CoefficientField) -> MaxwellOperators:
    _require_uniaxial("mu", mu)
    _require_uniaxial("V", V)
    return MaxwellOperators.assemble(meridional_space(mm), mu, V)


# ---------------------------------------------------------------------------------------
# evaluation and lifting


def full_nodal(mm: MeridianMesh, alpha_dofs) -> np.ndarray:
    out = np.zeros(len(mm.nodes))
    out[mm.interior_nodes] = coeffs(alpha_dofs)
    return out


def eval_alpha(mm: MeridianMesh, alpha_dofs, r, z) -> np.ndarray:
    tri, bary = mm.locate(r, z)
    return np.einsum("nk,nk->n", full_nodal(mm, alpha_dofs)[mm.tris[tri]], bary)


def eval_meridional(mm: MeridianMesh, dofs, r, z) -> tuple[np.ndarray, np.ndarray]:
    """(E_r, E_z) of a meridional edge field at points (r, z)."""
    full = np.zeros(len(mm.edges))
    full[mm.interior_edges] = coeffs(dofs)
    tri, bary = mm.locate(r, z)
    grads, _ = _tri_geometry(mm)
    g = grads[tri]  # (n, 3, 2)
    out = np.zeros((len(tri), 2))
    for k, (a, b) in enumerate(TRI_EDGES):
        phi = bary[:, a, None] * g[:, b] - bary[:, b, None] * g[:, a]
        out += full[mm.tri_edges[tri, k]][:, None] * phi
    return out[:, 0], out[:, 1]


def _meridian_grads(mm: MeridianMesh, tri):
    grads, _ = _tri_geometry(mm)
    return grads[tri]


def tau_fields(mm: MeridianMesh, alpha_dofs, x: np.ndarray):
    """Lifted azimuthal field u = alpha (-x2, x1, 0) and its curl at 3D points."""
    r = np.minimum(np.hypot(x[:, 0], x[:, 1]), mm.radius)
    tri, bary = mm.locate(r, x[:, 2])
    nodal = full_nodal(mm, alpha_dofs)[mm.tris[tri]]
    a = np.einsum("nk,nk->n", nodal, bary)
    da = np.einsum("nk,nkd->nd", nodal, _meridian_grads(mm, tri))  # (alpha_r, alpha_z)
    zero = np.zeros(len(x))
    u = a[:, None] * np.column_stack([-x[:, 1], x[:, 0], zero])
    # curl = -r alpha_z e_r + (2 alpha + r alpha_r) e_z, with r e_r = (x1, x2, 0)
    curl = np.column_stack([-da[:, 1] * x[:, 0], -da[:, 1] * x[:, 1], 2 * a + r * da[:, 0]])
    return u, curl


def meridional_fields(mm: MeridianMesh, dofs, x: np.ndarray):
    """Lifted meridional field E_r e_r + E_z e_z and its azimuthal curl at 3D points."""
    r = np.hypot(x[:, 0], x[:, 1])
    rr = np.minimum(r, mm.radius)
    full = np.zeros(len(mm.edges))
    full[mm.interior_edges] = coeffs(dofs)
    tri, bary = mm.locate(rr, x[:, 2])
    g = _meridian_grads(mm, tri)
    val = np.zeros((len(x), 2))
    ct = np.zeros(len(x))
    for k, (i, j) in enumerate(TRI_EDGES):
        c = full[mm.tri_edges[tri, k]]
        val += c[:, None] * (bary[:, i, None] * g[:, j] - bary[:, j, None] * g[:, i])
        ct += c * -2.0 * (g[:, i, 0] * g[:, j, 1] - g[:, i, 1] * g[:, j, 0])
    rs = np.where(r > 0, r, 1.0)
    cx = np.where(r > 0, x[:, 0] / rs, 0.0)
    cy = np.where(r > 0, x[:, 1] / rs, 0.0)
    u = np.column_stack([val[:, 0] * cx, val[:, 0] * cy, val[:, 1]])
    curl = ct[:, None] * np.column_stack([-cy, cx, np.zeros(len(x))])
    return u, curl


def tau_field_function(mm: MeridianMesh, alpha_dofs):
    return lambda x: tau_fields(mm, alpha_dofs, x)[0]


def meridional_field_function(mm: MeridianMesh, dofs):
    return lambda x: meridional_fields(mm, dofs, x)[0]


@dataclass
class LiftResult:
    field: FieldVector
    raw: np.ndarray
    removed_gradient_fraction: float
    div_residual: float
    method: str = "ritz"


def _riesz(ops3d: MaxwellOperators):
    if "riesz" not in ops3d.cache:
        ops3d.cache["riesz"] = spla.splu((ops3d.A + ops3d.M).tocsc())
    return ops3d.cache["riesz"]


def lift(mesh3d: Mesh, fields, ops3d: MaxwellOperators, method: str = "ritz") -> LiftResult:
    """Bring a lifted analytic field into the 3D edge space, then project onto V.

    ``fields(x)`` returns the field and its curl at points ``x``.  The default
    ``"ritz"`` method is the orthogonal projection in the energy inner product
    (mu^-1 curl, curl) + (V ., .), whose error in the quadratic energies is of
    second order; ``"interpolate"`` takes tangential edge moments instead.
    On cylinder meshes the result is averaged over the discrete rotation group,
    removing the symmetry defects that point location rounding introduces
    where the profiles jump across meridian triangles.
    """
    if method == "ritz":
        space = ops3d.space
        u, curl = fields(space.points)
        mu_inv = np.linalg.inv(ops3d.mu.validate(space.points))
        Vx = ops3d.V.validate(space.points)
        w = space.weights[:, None]
        rhs = space.curls.T @ (w * np.einsum("nij,nj->ni", mu_inv, curl)).ravel()
        rhs += space.values.T @ (w * np.einsum("nij,nj->ni", Vx, u)).ravel()
        raw = _riesz(ops3d).solve(rhs)
    elif method == "interpolate":
        raw = interpolate(mesh3d, lambda x: fields(x)[0]).coefficients
    else:
        raise ValueError(f"unknown lift method {method!r}")
    if mesh3d.meta.get("kind") == "cylinder":
        raw = symmetrize(mesh3d, raw)
    hs = helmholtz_project(ops3d, raw)
    v = hs.v_part.coefficients
    w = hs.w_part.coefficients
    nm = float(raw @ (ops3d.M @ raw))
    frac = math.sqrt(max(float(w @ (ops3d.M @ w)), 0.0) / nm) if nm > 0 else 0.0
    return LiftResult(FieldVector(v, "V"), raw, frac, check_V_membership(ops3d, v), method)


# ---------------------------------------------------------------------------------------
# rotation action and frame splitting


def rotation_edge_action(mesh: Mesh, angle: float) -> sp.csr_matrix:
    """Matrix R with (R e) the pushforward of e under the rotation about the x3-axis."""
    key = ("rot", round(angle, 14))
    cache = mesh.meta.setdefault("_cache", {})
    if key in cache:
        return cache[key]
    perm = rotation_vertex_map(mesh, angle)
    img = np.sort(perm[mesh.edges], axis=1)
    sign = np.where(perm[mesh.edges[:, 0]] < perm[mesh.edges[:, 1]], 1.0, -1.0)
    lookup = {tuple(e): i for i, e in enumerate(map(tuple, mesh.edges))}
    target = np.array([lookup[tuple(e)] for e in img])
    dof = np.full(mesh.n_edges, -1)
    inner = mesh.interior_edges
    dof[inner] = np.arange(len(inner))
    rows = dof[target[inner]]
    if (rows < 0).any():
        raise SymmetryError("rotation maps an interior edge to a boundary edge")
    R = sp.csr_matrix((sign[inner], (rows, np.arange(len(inner)))), shape=(len(inner), len(inner)))
    cache[key] = R
    return R


def symmetrize(mesh: Mesh, e) -> np.ndarray:
    """Average of e over the discrete rotation group of the cylinder mesh."""
    n = mesh.meta["n_angular"]
    R = rotation_edge_action(mesh, 2 * np.pi / n)
    acc = np.zeros_like(coeffs(e))
    cur = coeffs(e).copy()
    for _ in range(n):
        acc += cur
        cur = R @ cur
    return acc / n


def rotation_residual(mesh: Mesh, e) -> float:
    c = coeffs(e)
    R = rotation_edge_action(mesh, 2 * np.pi / mesh.meta["n_angular"])
    nrm = np.linalg.norm(c)
    return float(np.linalg.norm(R @ c - c) / nrm) if nrm > 0 else 0.0


def frame(points: np.ndarray):
    """Unit fields e_theta, e_r, e_z at points off the axis."""
    r = np.hypot(points[:, 0], points[:, 1])
    if np.any(r <= 0):
        raise SymmetryError("frame undefined on the axis")
    et = np.column_stack([-points[:, 1] / r, points[:, 0] / r, np.zeros(len(r))])
    er = np.column_stack([points[:, 0] / r, points[:, 1] / r, np.zeros(len(r))])
    ez = np.tile([0.0, 0.0, 1.0], (len(r), 1))
    return et, er, ez


def frame_components(points: np.ndarray, u: np.ndarray):
    """Pointwise split u = u_tau + u_rho + u_zeta and the profiles alpha, beta, gamma."""
    r = np.hypot(points[:, 0], points[:, 1])
    et, er, ez = frame(points)
    ct = np.einsum("ni,ni->n", u, et)
    cr = np.einsum("ni,ni->n", u, er)
    cz = u[:, 2]
    return (ct[:, None] * et, cr[:, None] * er, cz[:, None] * ez), (ct / r, cr / r, cz)


@dataclass
class CylindricalDecomposition:
    e_tau: FieldVector
    e_rho: FieldVector
    e_zeta: FieldVector
    alpha: np.ndarray  # profiles at the quadrature points
    beta: np.ndarray
    gamma: np.ndarray
    rotation_residual: float
    representation_defect: dict = field(default_factory=dict)

    def recombination_residual(self, e) -> float:
        c = coeffs(e)
        s = self.e_tau.coefficients + self.e_rho.coefficients + self.e_zeta.coefficients
        return float(np.linalg.norm(s - c) / max(np.linalg.norm(c), 1e-300))


def _l2_solver(space: QuadratureSpace):
    if "l2" not in space.extra:
        E = space.values
        W = sp.diags(np.repeat(space.weights, 3))
        space.extra["l2"] = spla.splu((E.T @ W @ E).tocsc())
    return space.extra["l2"]


def decompose_cylindrical(mesh: Mesh, e, tol: float = 1e-8) -> CylindricalDecomposition:
    """Split a rotation-invariant edge field into azimuthal, radial and axial parts.

    Each part is the pointwise frame projection at the quadrature points,
    brought back to the edge space by the L2 projection, so the parts add up
    to ``e`` up to solver precision.
    """
    if mesh.meta.get("kind") != "cylinder":
        raise SymmetryError("decompose_cylindrical needs a cylinder mesh")
    res = rotation_residual(mesh, e)
    if res > tol:
        raise SymmetryError(f"field is not rotation invariant (relative residual {res:.3e} > {tol:g})")
    space = edge_space(mesh)
    u = space.field_at_points(e)
    parts, (a, b, g) = frame_components(space.points, u)
    lu = _l2_solver(space)
    W = np.repeat(space.weights, 3)
    out = []
    defect = {}
    unorm = math.sqrt(float(W @ (u.ravel() ** 2))) or 1.0
    for name, up in zip(("tau", "rho", "zeta"), parts):
        c = lu.solve(space.values.T @ (W * up.ravel()))
        out.append(c)
        back = space.values @ c - up.ravel()
        defect[name] = math.sqrt(float(W @ back**2)) / unorm
    return CylindricalDecomposition(
        FieldVector(out[0]), FieldVector(out[1]), FieldVector(out[2]), a, b, g, res, defect
    )


def s1_action(mesh: Mesh, e) -> np.ndarray:
    d = decompose_cylindrical(mesh, e)
    return d.e_tau.coefficients - d.e_rho.coefficients - d.e_zeta.coefficients


def s2_action(mesh: Mesh, e) -> np.ndarray:
    d = decompose_cylindrical(mesh, e)
    return -d.e_tau.coefficients + d.e_rho.coefficients + d.e_zeta.coefficients


# ---------------------------------------------------------------------------------------
# symmetric ground states


@dataclass
class SymmetricConfig:
    mu: CoefficientField
    V: CoefficientField
    model: NonlinearityModel
    radius: float = 1.0
    height: float = 1.0
    n_r: int = 6
    n_z: int = 6
    n_starts: int = 6
    seed: int = 0
    tol: float = 1e-7
    K: int | None = None
    near_one_tol: float | None = None
    threads: int = 1
    lift_mesh: tuple | None = None  # (n_radial, n_axial, n_angular) of a 3D validation mesh
    lift_angular: tuple = ()  # angular counts for the lifted-energy refinement study


def _reduced_solve(cfg: SymmetricConfig, kind: str) -> CriticalPointResult:
    if not cfg.model.uniaxial:
        raise SymmetryError("nonlinearity must commute with rotations (Gamma of the form diag(a, a, b))")
    mm = build_meridian_mesh(cfg.radius, cfg.height, cfg.n_r, cfg.n_z)
    ops = (assemble_reduced_tau if kind == "tau" else assemble_reduced_betagamma)(mm, cfg.mu, cfg.V)
    split = maxwell_eigenpairs(ops, cfg.K, near_one_tol=cfg.near_one_tol)
    bases = spectral_split(ops, split)
    problem = FieldProblem(ops, cfg.model, bases)
    res = ground_state(problem, cfg.n_starts, cfg.seed, cfg.tol, cfg.threads)
    t_u = res.extra["t_u"]
    gate = estimate_linking_level(problem, [f * t_u for f in (0.1, 0.2, 0.3, 0.5)], seed=cfg.seed)
    res.extra.update(
        {
            "kind": kind,
            "meridian_mesh": mm,
            "ops": ops,
            "problem": problem,
            "eigenvalues": split.eigenvalues.tolist(),
            "dim_tilde": bases.dim_tilde,
            "linking_level": gate,
            "positive_energy_gate": bool(res.energy >= gate["a"] > 0 or (res.energy > 0 and gate["a"] == 0.0)),
        }
    )
    if cfg.lift_mesh is not None:
        res.extra["lift"] = validate_lift(res, cfg)
    if cfg.lift_angular:
        res.extra["lift_energy_study"] = lift_energy_study(res, cfg, cfg.lift_angular)
    return res


def solve_tau_ground_state(cfg: SymmetricConfig) -> CriticalPointResult:
    """Least-energy azimuthal solution found on the meridian reduction."""
    return _reduced_solve(cfg, "tau")


def solve_betagamma_ground_state(cfg: SymmetricConfig) -> CriticalPointResult:
    """Least-energy meridional solution found on the meridian reduction."""
    return _reduced_solve(cfg, "betagamma")


def lifted_energy(space: QuadratureSpace, mu: CoefficientField, V: CoefficientField, model: NonlinearityModel, fields) -> dict:
    """Energy of an analytically lifted field integrated with a 3D quadrature.

    The field and its curl are evaluated exactly at the 3D quadrature points,
    so the only differences from the reduced energy are geometric (polygonal
    cross-section) and quadrature effects.
    """
    u, curl = fields(space.points)
    w = space.weights
    mu_inv = np.linalg.inv(mu.validate(space.points))
    Vx = V.validate(space.points)
    curl_e = float(w @ np.einsum("ni,nij,nj->n", curl, mu_inv, curl))
    mass = float(w @ np.einsum("ni,nij,nj->n", u, Vx, u))
    nl = float(w @ model.F(space.points, u))
    return {"curl": curl_e, "mass": mass, "F": nl, "J": 0.5 * (curl_e - mass) - nl}


def validate_lift(res: CriticalPointResult, cfg: SymmetricConfig) -> dict:
    """Lift the reduced solution to a 3D cylinder mesh and compare energies and residuals."""
    mm = res.extra["meridian_mesh"]
    nr, nz, na = cfg.lift_mesh
    mesh3d = build_cylinder_mesh(nr, nz, na, cfg.radius, cfg.height)
    ops3d = MaxwellOperators.assemble(mesh3d, cfg.mu, cfg.V)
    fields = tau_fields if res.extra["kind"] == "tau" else meridional_fields
    fx = lambda x: fields(mm, res.x, x)  # noqa: E731
    quad = lifted_energy(ops3d.space, cfg.mu, cfg.V, cfg.model, fx)
    lr = lift(mesh3d, fx, ops3d)
    e = lr.field.coefficients
    ev = evaluate_on_space(ops3d.space, cfg.model, e)
    J3 = float(0.5 * e @ (ops3d.A @ e) - 0.5 * e @ (ops3d.M @ e) - ev.value)
    r = ops3d.A @ e - ops3d.M @ e - ev.gradient
    dual = math.sqrt(max(float(r @ _riesz(ops3d).solve(r)), 0.0))
    scale = math.sqrt(max(ops3d.energy_norm_sq(e), 1e-300))
    return {
        "mesh": [nr, nz, na],
        "energy_reduced": res.energy,
        "energy_3d": quad["J"],
        "relative_gap": abs(quad["J"] - res.energy) / abs(res.energy),
        "energy_3d_discrete": J3,
        "relative_gap_discrete": abs(J3 - res.energy) / abs(res.energy),
        "div_residual": lr.div_residual,
        "removed_gradient_fraction": lr.removed_gradient_fraction,
        "residual_3d": dual,
        "relative_residual_3d": dual / scale,
        "rotation_residual": rotation_residual(mesh3d, e),
        "field": e,
        "mesh3d": mesh3d,
        "ops3d": ops3d,
    }


def lift_energy_study(res: CriticalPointResult, cfg: SymmetricConfig, angular=(24, 48, 96)) -> list[dict]:
    """3D energy of the lifted solution on cylinder meshes with growing angular count.

    The radial and axial counts equal those of the meridian mesh, so every
    3D vertex lattice contains the meridian lattice and the remaining gap is
    the polygonal approximation of the circular cross-section.
    """
    mm = res.extra["meridian_mesh"]
    fields = tau_fields if res.extra["kind"] == "tau" else meridional_fields
    out = []
    for na in angular:
        space = edge_space(build_cylinder_mesh(mm.n_r, mm.n_z, na, mm.radius, mm.height))
        q = lifted_energy(space, cfg.mu, cfg.V, cfg.model, lambda x: fields(mm, res.x, x))
        out.append({"n_angular": int(na), "energy_3d": q["J"], "relative_gap": abs(q["J"] - res.energy) / abs(res.energy)})
    return out


def write_meridian_csv(path, mm: MeridianMesh, res: CriticalPointResult) -> None:
    """Nodal profiles: alpha for the azimuthal shape, beta and gamma for the meridional one."""
    r, z = mm.nodes[:, 0], mm.nodes[:, 1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if res.extra["kind"] == "tau":
            a = full_nodal(mm, res.x)
            w.writerow(["r", "x3", "alpha"])
            for row in zip(r, z, a):
                w.writerow([repr(float(v)) for v in row])
        else:
            # sample slightly inside the section so every node has a containing triangle
            rr = np.clip(r, 1e-9 * mm.radius, mm.radius * (1 - 1e-12))
            er, ez = eval_meridional(mm, res.x, rr, np.clip(z, 0.0, mm.height * (1 - 1e-12)))
            beta = er / rr
            w.writerow(["r", "x3", "beta", "gamma"])
            for row in zip(r, z, beta, ez):
                w.writerow([repr(float(v)) for v in row])
