"""Tetrahedral meshes of the unit cube and of a polygonal cylinder."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# local vertex pairs of the six tet edges, in the order used everywhere
TET_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
TET_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable tetrahedral complex with edge and boundary tables.

    Edges are oriented from the lower to the higher global vertex index.
    ``tet_edges[t, i]`` is the global edge of local edge ``TET_EDGES[i]`` and
    ``tet_edge_signs[t, i]`` is +1 when the local direction agrees with the
    global one.
    """

    vertices: np.ndarray
    tets: np.ndarray
    edges: np.ndarray
    tet_edges: np.ndarray
    tet_edge_signs: np.ndarray
    faces: np.ndarray
    boundary_faces: np.ndarray
    boundary_edge_flags: np.ndarray
    boundary_vertex_flags: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_edge_flags)

    @property
    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_vertex_flags)

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces - self.n_tets

    def volumes(self) -> np.ndarray:
        p = self.vertices[self.tets]
        return np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p[:, 3] - p[:, 0]) / 6.0


def _signed_volumes(vertices, tets):
    p = vertices[tets]
    return np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p[:, 3] - p[:, 0]) / 6.0


def _orient(vertices, tets):
    tets = np.array(tets, dtype=np.int64)
    neg = _signed_volumes(vertices, tets) < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    return tets


def from_tets(vertices, tets, meta=None) -> Mesh:
    """Build all topology tables from vertex coordinates and tet connectivity.

    Tets are re-oriented to positive volume; a zero-volume tet is rejected.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    tets = _orient(vertices, tets)
    vol = _signed_volumes(vertices, tets)
    if np.any(vol <= 0.0):
        raise ValueError(f"degenerate tetrahedron at index {int(np.argmin(vol))}")

    local = tets[:, TET_EDGES]  # (T, 6, 2)
    signs = np.where(local[..., 0] < local[..., 1], 1, -1).astype(np.int8)
    pairs = np.sort(local, axis=-1).reshape(-1, 2)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    tet_edges = inverse.reshape(-1, 6)

    tri = np.sort(tets[:, TET_FACES], axis=-1).reshape(-1, 3)
    faces, face_inv, counts = np.unique(tri, axis=0, return_inverse=True, return_counts=True)
    if np.any(counts > 2):
        raise ValueError("non-manifold mesh: a face is shared by more than two tets")
    boundary_faces = faces[counts == 1]

    bverts = np.zeros(len(vertices), dtype=bool)
    bverts[boundary_faces.ravel()] = True
    bedge_pairs = np.concatenate(
        [boundary_faces[:, [0, 1]], boundary_faces[:, [0, 2]], boundary_faces[:, [1, 2]]]
    )
    bedge_pairs = np.unique(bedge_pairs, axis=0)
    eidx = {tuple(e): i for i, e in enumerate(map(tuple, edges))}
    bedges = np.zeros(len(edges), dtype=bool)
    bedges[[eidx[tuple(e)] for e in bedge_pairs]] = True

    for arr in (vertices, tets, edges, tet_edges, signs, faces, boundary_faces, bedges, bverts):
        arr.setflags(write=False)
    return Mesh(
        vertices=vertices,
        tets=tets,
        edges=edges,
        tet_edges=tet_edges,
        tet_edge_signs=signs,
        faces=faces,
        boundary_faces=boundary_faces,
        boundary_edge_flags=bedges,
        boundary_vertex_flags=bverts,
        meta=dict(meta or {}),
    )


def build_cube_mesh(n: int) -> Mesh:
    """Unit cube split into n^3 hexahedra, each cut into 6 tets along its main diagonal."""
    if int(n) != n or n < 1:
        raise ValueError(f"cube subdivisions must be a positive integer, got {n!r}")
    n = int(n)
    g = np.linspace(0.0, 1.0, n + 1)
    z, y, x = np.meshgrid(g, g, g, indexing="ij")
    vertices = np.column_stack([x.ravel(), y.ravel(), z.ravel()])

    def vid(i, j, k):
        return i + (n + 1) * (j + (n + 1) * k)

    unit = np.eye(3, dtype=int)
    tets = []
    for k, j, i in itertools.product(range(n), repeat=3):
        base = np.array([i, j, k])
        for perm in itertools.permutations(range(3)):
            path = [base.copy()]
            for ax in perm:
                path.append(path[-1] + unit[ax])
            tets.append([vid(*p) for p in path])
    return from_tets(vertices, tets, meta={"kind": "cube", "n": n})


def _polygon_disk(n_radial: int, n_angular: int, radius: float):
    """Triangulate a regular n_angular-gon by n_radial concentric polygonal rings.

    Returns points, triangles, ring index per point and a rank per point such
    that within every triangle the ranks are pairwise distinct and the order is
    preserved by rotation through 2*pi/n_angular.
    """
    corners = np.column_stack(
        [np.cos(2 * np.pi * np.arange(n_angular) / n_angular), np.sin(2 * np.pi * np.arange(n_angular) / n_angular)]
    )
    pts = [np.zeros(2)]
    ring = [0]
    start = [0]
    for k in range(1, n_radial + 1):
        start.append(len(pts))
        for j in range(n_angular):
            c0, c1 = corners[j], corners[(j + 1) % n_angular]
            for s in range(k):
                pts.append(radius * k / n_radial * ((1 - s / k) * c0 + (s / k) * c1))
                ring.append(k)

    def P(k, j, s):
        if k == 0:
            return 0
        j = (j + s // k) % n_angular
        s = s % k
        return start[k] + j * k + s

    tris = []
    for k in range(1, n_radial + 1):
        for j in range(n_angular):
            for s in range(k):
                tris.append((P(k - 1, j, s), P(k, j, s), P(k, j, s + 1)))
            for s in range(k - 1):
                tris.append((P(k - 1, j, s), P(k - 1, j, s + 1), P(k, j, s + 1)))
    return np.array(pts), np.array(tris), np.array(ring)


def _ccw_less(p, q, ring, start_of, per_ring):
    """Rotation-invariant order on the two ends of a disk edge."""
    if ring[p] != ring[q]:
        return ring[p] < ring[q]
    # same ring: q is the counter-clockwise neighbour of p
    n = per_ring[ring[p]]
    return (q - start_of[ring[p]]) == ((p - start_of[ring[p]]) + 1) % n


def build_cylinder_mesh(n_radial: int, n_axial: int, n_angular: int, radius: float = 1.0, height: float = 1.0) -> Mesh:
    """Prism over the inscribed regular n_angular-gon, extruded along x3 in [0, height].

    The mesh is mapped onto itself by the rotation through 2*pi/n_angular about
    the x3-axis (vertex sets and tets, up to relabeling).
    """
    for name, val in (("n_radial", n_radial), ("n_axial", n_axial)):
        if int(val) != val or val < 1:
            raise ValueError(f"{name} must be a positive integer, got {val!r}")
    if int(n_angular) != n_angular or n_angular < 3:
        raise ValueError(f"n_angular must be an integer >= 3, got {n_angular!r}")
    if not (radius > 0 and height > 0 and np.isfinite(radius) and np.isfinite(height)):
        raise ValueError(f"radius and height must be positive and finite, got {radius!r}, {height!r}")
    n_radial, n_axial, n_angular = int(n_radial), int(n_axial), int(n_angular)

    pts2, tris, ring = _polygon_disk(n_radial, n_angular, float(radius))
    start_of = {0: 0}
    per_ring = {0: 1}
    for k in range(1, n_radial + 1):
        start_of[k] = int(np.flatnonzero(ring == k)[0])
        per_ring[k] = n_angular * k

    np2 = len(pts2)
    zs = np.linspace(0.0, float(height), n_axial + 1)
    vertices = np.column_stack([np.tile(pts2, (n_axial + 1, 1)), np.repeat(zs, np.full(n_axial + 1, np.int64(np2)))])

    tets = []
    for tri in tris:
        a, b, c = tri
        # order the triangle so that a < b < c in the rotation-invariant order
        order = sorted(
            (a, b, c),
            key=lambda v: sum(_ccw_less(w, v, ring, start_of, per_ring) for w in (a, b, c) if w != v),
        )
        a, b, c = order
        for layer in range(n_axial):
            lo, hi = layer * np2, (layer + 1) * np2
            tets.append([a + lo, b + lo, c + lo, c + hi])
            tets.append([a + lo, b + lo, b + hi, c + hi])
            tets.append([a + lo, a + hi, b + hi, c + hi])
    meta = {
        "kind": "cylinder",
        "n_radial": n_radial,
        "n_axial": n_axial,
        "n_angular": n_angular,
        "radius": float(radius),
        "height": float(height),
    }
    return from_tets(vertices, tets, meta=meta)


def mesh_quality(m: Mesh) -> tuple[float, float]:
    """Longest edge and smallest dihedral angle (radians)."""
    d = m.vertices[m.edges[:, 1]] - m.vertices[m.edges[:, 0]]
    h_max = float(np.sqrt((d * d).sum(axis=1)).max())
    p = m.vertices[m.tets]
    normals = []
    for f in TET_FACES:
        opp = ({0, 1, 2, 3} - set(f)).pop()
        nrm = np.cross(p[:, f[1]] - p[:, f[0]], p[:, f[2]] - p[:, f[0]])
        # outward orientation
        flip = np.einsum("ij,ij->i", nrm, p[:, opp] - p[:, f[0]]) > 0
        nrm[flip] *= -1
        normals.append(nrm / np.linalg.norm(nrm, axis=1, keepdims=True))
    angles = []
    for i, j in itertools.combinations(range(4), 2):
        cosang = -np.einsum("ij,ij->i", normals[i], normals[j])
        angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return h_max, float(np.min(angles))


def audit(m: Mesh) -> None:
    """Raise ``AssertionError`` when a structural invariant is broken."""
    assert np.all(m.volumes() > 0), "non-positive tet volume"
    tri = np.sort(m.tets[:, TET_FACES], axis=-1).reshape(-1, 3)
    _, counts = np.unique(tri, axis=0, return_counts=True)
    assert set(np.unique(counts)) <= {1, 2}, "face shared by more than two tets"
    on_bface = np.zeros(m.n_edges, dtype=bool)
    lookup = {tuple(e): i for i, e in enumerate(map(tuple, m.edges))}
    for f in m.boundary_faces:
        for a, b in ((0, 1), (0, 2), (1, 2)):
            on_bface[lookup[(f[a], f[b])]] = True
    assert np.array_equal(on_bface, m.boundary_edge_flags), "boundary edge flags disagree with faces"


def rotation_vertex_map(m: Mesh, angle: float, tol: float = 1e-10) -> np.ndarray:
    """Vertex permutation induced by a rotation about the x3-axis.

    ``perm[i]`` is the index of the image of vertex ``i``. Raises ``ValueError``
    when the vertex set is not mapped onto itself.
    """
    from scipy.spatial import cKDTree

    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    img = m.vertices @ rot.T
    dist, idx = cKDTree(m.vertices).query(img)
    if np.max(dist) > tol:
        raise ValueError(f"mesh is not invariant under rotation by {angle} (max mismatch {np.max(dist):.3e})")
    return idx


def write_vtk(path, m: Mesh, point_vectors: dict | None = None, point_scalars: dict | None = None) -> None:
    """Write a legacy ASCII VTK unstructured grid (cell type 10)."""
    path = Path(path)
    lines = ["# vtk DataFile Version 3.0", "nlmaxwell mesh", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {m.n_vertices} double")
    lines.extend(" ".join(f"{x:.17g}" for x in v) for v in m.vertices)
    lines.append(f"CELLS {m.n_tets} {5 * m.n_tets}")
    lines.extend("4 " + " ".join(str(int(i)) for i in t) for t in m.tets)
    lines.append(f"CELL_TYPES {m.n_tets}")
    lines.extend(["10"] * m.n_tets)
    if point_vectors or point_scalars:
        lines.append(f"POINT_DATA {m.n_vertices}")
        for name, vals in (point_scalars or {}).items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{x:.17g}" for x in np.asarray(vals).ravel())
        for name, vals in (point_vectors or {}).items():
            lines.append(f"VECTORS {name} double")
            lines.extend(" ".join(f"{x:.17g}" for x in v) for v in np.asarray(vals).reshape(-1, 3))
    path.write_text("\n".join(lines) + "\n")
