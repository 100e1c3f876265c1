"""Triangulated round 2-sphere: icosphere meshes, P1 gradients, balls and charts.

Energies are computed on flat triangles whose vertices lie on the unit
sphere; the round metric enters only through vertex positions.  The
stereographic chart used throughout sends the north pole to 0 and the
south pole to infinity.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

MAX_LEVEL = 8
NORTH = np.array([0.0, 0.0, 1.0])


class MeshError(ValueError):
    pass


# ---------------------------------------------------------------------------
# stereographic chart
# ---------------------------------------------------------------------------

def chart_homogeneous(points):
    """Homogeneous chart coordinates (p, q) with z = p / q.

    Uses z = (x + iy) / (1 + z3) on the northern half and the equivalent
    (1 - z3) / (x - iy) on the southern half, so (p, q) never both vanish.
    """
    x = np.asarray(points, dtype=float)
    north = x[..., 2] >= 0.0
    p = np.where(north, x[..., 0] + 1j * x[..., 1], 1.0 - x[..., 2])
    q = np.where(north, 1.0 + x[..., 2], x[..., 0] - 1j * x[..., 1])
    return p, q


def from_homogeneous(P, Q):
    """Inverse stereographic projection of w = P / Q (Q = 0 means infinity)."""
    P = np.asarray(P, dtype=complex)
    Q = np.asarray(Q, dtype=complex)
    pq = P * np.conj(Q)
    a2 = np.abs(P) ** 2
    b2 = np.abs(Q) ** 2
    den = a2 + b2
    out = np.stack([2.0 * pq.real, 2.0 * pq.imag, b2 - a2], axis=-1)
    return out / den[..., None]


def stereographic(points):
    """Chart coordinate z of points on S^2 (complex; inf at the south pole)."""
    p, q = chart_homogeneous(points)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = p / q
    return np.where(q == 0, np.inf + 0j, z)


def inverse_stereographic(w):
    w = np.asarray(w, dtype=complex)
    finite = np.isfinite(w)
    P = np.where(finite, w, 1.0)
    Q = np.where(finite, 1.0, 0.0)
    return from_homogeneous(P, Q)


def chart_radius(points, center=NORTH):
    """|z| in the stereographic chart centred at `center` (inf at the antipode)."""
    p, q = chart_homogeneous(np.asarray(points, dtype=float) @ rotation_to_north(center).T)
    aq = np.abs(q)
    with np.errstate(divide="ignore"):
        return np.where(aq == 0, np.inf, np.abs(p) / np.where(aq == 0, 1.0, aq))


def rotation_to_north(center):
    """Rotation matrix taking the unit vector `center` to the north pole."""
    c = np.asarray(center, dtype=float)
    c = c / np.linalg.norm(c)
    axis = np.cross(c, NORTH)
    s = np.linalg.norm(axis)
    cth = float(np.dot(c, NORTH))
    if s < 1e-15:
        if cth > 0:
            return np.eye(3)
        return np.diag([1.0, -1.0, -1.0])  # half turn about the x-axis
    k = axis / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * K + (1 - cth) * (K @ K)


def geodesic_distance(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # atan2 form stays accurate for nearly equal and nearly antipodal points
    cr = np.linalg.norm(np.cross(a, b), axis=-1)
    return np.arctan2(cr, np.sum(a * b, axis=-1))


# ---------------------------------------------------------------------------
# mesh
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TriMesh:
    """Flat-faced triangulation of the unit sphere.

    ``face_area`` is the spherical triangle area (steradians, sums to 4 pi);
    ``flat_area`` is the planar triangle area, which is the quadrature weight
    used by every energy in the package.
    """

    vertices: np.ndarray
    faces: np.ndarray
    subdivision_level: int = 0

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if np.any(self.flat_area <= 1e-300):
            bad = int(np.argmin(self.flat_area))
            raise MeshError(f"degenerate face {bad} (zero area)")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def edges(self) -> np.ndarray:
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    @cached_property
    def _corners(self):
        return self.vertices[self.faces]  # (F, 3 corners, 3 coords)

    @cached_property
    def _raw_normals(self):
        c = self._corners
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    @cached_property
    def flat_area(self) -> np.ndarray:
        a = 0.5 * np.linalg.norm(self._raw_normals, axis=1)
        a.setflags(write=False)
        return a

    @cached_property
    def face_area(self) -> np.ndarray:
        c = self._corners
        a = signed_solid_angle(c[:, 0], c[:, 1], c[:, 2])
        a.setflags(write=False)
        return a

    @cached_property
    def face_normals(self) -> np.ndarray:
        return self._raw_normals / (2.0 * self.flat_area)[:, None]

    @cached_property
    def barycenters(self) -> np.ndarray:
        return self._corners.mean(axis=1)

    @cached_property
    def barycenter_directions(self) -> np.ndarray:
        b = self.barycenters
        return b / np.linalg.norm(b, axis=1)[:, None]

    @cached_property
    def vertex_dual_area(self) -> np.ndarray:
        """Barycentric dual area: a third of every incident face."""
        d = np.bincount(self.faces.ravel(), weights=np.repeat(self.flat_area / 3.0, 3),
                        minlength=self.n_vertices)
        d.setflags(write=False)
        return d

    @cached_property
    def gradient_basis(self) -> np.ndarray:
        """(F, 3, 3): in-plane gradient of each corner's hat function."""
        c = self._corners
        n = self.face_normals
        two_a = (2.0 * self.flat_area)[:, None]
        g0 = np.cross(n, c[:, 2] - c[:, 1]) / two_a
        g1 = np.cross(n, c[:, 0] - c[:, 2]) / two_a
        g2 = np.cross(n, c[:, 1] - c[:, 0]) / two_a
        return np.stack([g0, g1, g2], axis=1)

    @cached_property
    def stiffness_local(self) -> np.ndarray:
        """(F, 3, 3) products grad(phi_i) . grad(phi_j) (area not included)."""
        G = self.gradient_basis
        return np.einsum("fis,fjs->fij", G, G)

    @cached_property
    def max_edge_length(self) -> float:
        e = self.edges
        return float(np.max(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)))

    @cached_property
    def mean_edge_length(self) -> float:
        e = self.edges
        return float(np.mean(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)))

    @cached_property
    def face_neighbors(self):
        """CSR (indptr, indices) of faces sharing at least one vertex."""
        vf_ptr, vf_idx = self.vertex_faces
        rows = []
        for corner in range(3):
            vids = self.faces[:, corner]
            counts = vf_ptr[vids + 1] - vf_ptr[vids]
            starts = vf_ptr[vids]
            face_ids = np.repeat(np.arange(self.n_faces), counts)
            offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
            rows.append(np.stack([face_ids, vf_idx[np.repeat(starts, counts) + offsets]], axis=1))
        pairs = np.unique(np.concatenate(rows), axis=0)
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        indptr = np.searchsorted(pairs[:, 0], np.arange(self.n_faces + 1))
        return indptr, pairs[:, 1]

    @cached_property
    def vertex_faces(self):
        """CSR (indptr, indices) of faces incident to each vertex."""
        order = np.argsort(self.faces.ravel(), kind="stable")
        face_of = order // 3
        counts = np.bincount(self.faces.ravel(), minlength=self.n_vertices)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        return indptr, face_of

    @cached_property
    def _kdtree(self):
        return cKDTree(self.vertices)

    @cached_property
    def barycenter_tree(self):
        """KD-tree of projected face barycenters (for geodesic ball queries)."""
        return cKDTree(self.barycenter_directions)

    def faces_in_ball(self, center, radius: float) -> np.ndarray:
        """Indices of faces whose barycenter lies within geodesic `radius` of `center`."""
        c = np.asarray(center, dtype=float)
        c = c / np.linalg.norm(c)
        chord = 2.0 * np.sin(min(radius, np.pi) / 2.0) * (1 + 1e-12)
        idx = np.asarray(self.barycenter_tree.query_ball_point(c, chord), dtype=np.int64)
        if len(idx):
            idx = idx[geodesic_distance(self.barycenter_directions[idx], c[None, :]) <= radius]
        return np.sort(idx)

    @cached_property
    def _corner_inverse(self):
        return np.linalg.inv(np.transpose(self._corners, (0, 2, 1)))

    def locate(self, points, tol=1e-12):
        """Face containing each point (by central projection) and barycentrics.

        Raises MeshError if some point cannot be located.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        faces = np.full(len(pts), -1, dtype=np.int64)
        bary = np.zeros((len(pts), 3))
        vf_ptr, vf_idx = self.vertex_faces
        pending = np.arange(len(pts))
        for k in (1, 6, 24):
            if len(pending) == 0:
                break
            _, near = self._kdtree.query(pts[pending], k=k)
            near = near.reshape(len(pending), k)
            found = np.zeros(len(pending), dtype=bool)
            for col in range(k):
                vids = near[:, col]
                start, stop = vf_ptr[vids], vf_ptr[vids + 1]
                for j in range(int(np.max(stop - start))):
                    slot = start + j
                    ok = (slot < stop) & ~found
                    cand = vf_idx[np.where(ok, slot, 0)]
                    lam = np.einsum("qij,qj->qi", self._corner_inverse[cand], pts[pending])
                    hit = ok & np.all(lam >= -tol, axis=1)
                    faces[pending[hit]] = cand[hit]
                    bary[pending[hit]] = lam[hit] / lam[hit].sum(axis=1)[:, None]
                    found |= hit
            pending = pending[~found]
        if len(pending):
            raise MeshError(f"{len(pending)} point(s) could not be located on the mesh")
        return faces, bary


def signed_solid_angle(a, b, c):
    """Signed area of the spherical triangle (a, b, c) on the unit sphere."""
    num = np.einsum("...i,...i->...", a, np.cross(b, c))
    den = 1.0 + np.einsum("...i,...i->...", a, b) + np.einsum("...i,...i->...", b, c) \
        + np.einsum("...i,...i->...", c, a)
    return 2.0 * np.arctan2(num, den)


def _icosahedron():
    z0 = 1.0 / np.sqrt(5.0)
    s0 = 2.0 / np.sqrt(5.0)
    k = np.arange(5)
    upper = np.stack([s0 * np.cos(2 * np.pi * k / 5), s0 * np.sin(2 * np.pi * k / 5), np.full(5, z0)], 1)
    lower = np.stack([s0 * np.cos(2 * np.pi * (k + 0.5) / 5), s0 * np.sin(2 * np.pi * (k + 0.5) / 5),
                      np.full(5, -z0)], 1)
    verts = np.vstack([[0, 0, 1], upper, lower, [0, 0, -1]])
    U = 1 + k
    L = 6 + k
    Un = 1 + (k + 1) % 5
    Ln = 6 + (k + 1) % 5
    faces = np.vstack([
        np.stack([np.zeros(5, int), U, Un], 1),
        np.stack([U, L, Un], 1),
        np.stack([Un, L, Ln], 1),
        np.stack([np.full(5, 11), Ln, L], 1),
    ])
    c = verts[faces]
    n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    flip = np.einsum("ij,ij->i", n, c.mean(axis=1)) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return verts, faces


def _subdivide(verts, faces):
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges, inv = np.unique(np.sort(e, axis=1), axis=0, return_inverse=True)
    inv = inv.ravel()
    mid = verts[edges[:, 0]] + verts[edges[:, 1]]
    mid /= np.linalg.norm(mid, axis=1)[:, None]
    nv = len(verts)
    nf = len(faces)
    ab = nv + inv[:nf]
    bc = nv + inv[nf:2 * nf]
    ca = nv + inv[2 * nf:]
    a, b, c = faces.T
    new_faces = np.concatenate([
        np.stack([a, ab, ca], 1),
        np.stack([b, bc, ab], 1),
        np.stack([c, ca, bc], 1),
        np.stack([ab, bc, ca], 1),
    ])
    return np.vstack([verts, mid]), new_faces


def build_icosphere(subdivision_level: int) -> TriMesh:
    """Icosahedron (vertices at both poles) subdivided `subdivision_level` times."""
    level = int(subdivision_level)
    if level < 0 or level > MAX_LEVEL:
        raise MeshError(f"subdivision level must be in [0, {MAX_LEVEL}], got {subdivision_level}")
    v, f = _icosahedron()
    for _ in range(level):
        v, f = _subdivide(v, f)
    v /= np.linalg.norm(v, axis=1)[:, None]
    return TriMesh(v, f, level)


def build_log_polar_mesh(s_min: float, s_max: float, n_theta: int = 128, center=NORTH) -> TriMesh:
    """Sphere mesh uniform in (log|z|, arg z) of the chart centred at `center`.

    Rings sit at log|z| = s_min ... s_max with spacing close to
    (sqrt 3 / 2)(2 pi / n_theta), alternate rings shifted by half a step so
    the triangles are near-equilateral in the conformal metric.  The two
    remaining caps are closed by fans to the center and its antipode.
    Resolution relative to |z| is the same at every scale, which suits
    maps with structure spread over many decades (long necks, tiny bubbles).
    subdivision_level is -1 for these meshes.
    """
    n = int(n_theta)
    if n < 8 or not s_max > s_min:
        raise MeshError("need n_theta >= 8 and s_max > s_min")
    ds = 0.5 * np.sqrt(3.0) * 2 * np.pi / n
    n_ring = int(np.ceil((s_max - s_min) / ds)) + 1
    s = np.linspace(s_min, s_max, n_ring)
    i, j = np.meshgrid(np.arange(n_ring), np.arange(n), indexing="ij")
    theta = 2 * np.pi * (j + 0.5 * (i % 2)) / n
    z = np.exp(s[i] + 1j * theta).ravel()
    Q = rotation_to_north(center)
    ring_pts = inverse_stereographic(z)
    verts = np.vstack([[0.0, 0.0, 1.0], ring_pts, [0.0, 0.0, -1.0]]) @ Q
    top, bottom = 0, 1 + n_ring * n

    def vid(ii, jj):
        return 1 + ii * n + jj % n

    jj = np.arange(n)
    tris = [np.stack([np.full(n, top), vid(0, jj + 1), vid(0, jj)], 1)]
    for ii in range(n_ring - 1):
        a, b = vid(ii, jj), vid(ii, jj + 1)
        if ii % 2 == 0:
            c, d = vid(ii + 1, jj), vid(ii + 1, jj - 1)
            tris += [np.stack([a, b, c], 1), np.stack([a, c, d], 1)]
        else:
            c, d = vid(ii + 1, jj), vid(ii + 1, jj + 1)
            tris += [np.stack([a, b, d], 1), np.stack([a, d, c], 1)]
    tris.append(np.stack([np.full(n, bottom), vid(n_ring - 1, jj), vid(n_ring - 1, jj + 1)], 1))
    faces = np.vstack(tris)
    c = verts[faces]
    nrm = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    flip = np.einsum("ij,ij->i", nrm, c.mean(axis=1)) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return TriMesh(verts, faces, -1)


def zoom_mesh(mesh: TriMesh, factor: float, center=NORTH) -> TriMesh:
    """Conformally regrade a mesh toward `center`.

    Vertices are moved by the Moebius dilation z -> factor * z in the
    stereographic chart centred at `center`; connectivity is unchanged.
    factor < 1 concentrates resolution at `center` (and coarsens the
    antipode by the same factor).
    """
    if factor <= 0:
        raise MeshError("zoom factor must be positive")
    Q = rotation_to_north(center)
    p, q = chart_homogeneous(mesh.vertices @ Q.T)
    moved = from_homogeneous(factor * p, q) @ Q
    return TriMesh(moved, mesh.faces.copy(), mesh.subdivision_level)


# ---------------------------------------------------------------------------
# gradients and integrals
# ---------------------------------------------------------------------------

def field_gradients(mesh: TriMesh, values) -> np.ndarray:
    """Per-face tangential gradients of a P1 field.

    Scalar fields give (F, 3); vector fields of shape (V, C) give (F, C, 3).
    Differences against the first corner are used so constant fields have
    exactly zero gradient.
    """
    u = np.asarray(values, dtype=float)
    if u.shape[0] != mesh.n_vertices:
        raise MeshError(f"field has {u.shape[0]} values, mesh has {mesh.n_vertices} vertices")
    G = mesh.gradient_basis
    uf = u[mesh.faces]
    d1 = uf[:, 1] - uf[:, 0]
    d2 = uf[:, 2] - uf[:, 0]
    if u.ndim == 1:
        return d1[:, None] * G[:, 1] + d2[:, None] * G[:, 2]
    return d1[:, :, None] * G[:, None, 1] + d2[:, :, None] * G[:, None, 2]


def face_gradient(mesh: TriMesh, values, face: int) -> np.ndarray:
    """Gradient of a P1 field on a single face."""
    u = np.asarray(values, dtype=float)
    if u.shape[0] != mesh.n_vertices:
        raise MeshError(f"field has {u.shape[0]} values, mesh has {mesh.n_vertices} vertices")
    if mesh.flat_area[face] <= 1e-300:
        raise MeshError(f"degenerate face {face}")
    G = mesh.gradient_basis[face]
    i, j, k = mesh.faces[face]
    d1 = u[j] - u[i]
    d2 = u[k] - u[i]
    return np.multiply.outer(d1, G[1]) + np.multiply.outer(d2, G[2])


def geodesic_ball_energy(mesh: TriMesh, density, center, radius: float) -> float:
    """Sum of density * flat area over faces with barycenter inside the geodesic ball."""
    if not 0.0 < radius <= np.pi:
        raise MeshError(f"radius must lie in (0, pi], got {radius}")
    c = np.asarray(center, dtype=float)
    c = c / np.linalg.norm(c)
    d = geodesic_distance(mesh.barycenter_directions, c[None, :])
    inside = d <= radius
    return float(np.sum(np.asarray(density)[inside] * mesh.flat_area[inside]))


# ---------------------------------------------------------------------------
# planar patches
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PlanarPatch:
    """Map values resampled on a square grid of D_R in a rescaled chart.

    Node ``z`` holds the map at the domain point whose stereographic
    coordinate (chart centred at ``center``) is ``scale * z``.  Nodes outside
    the disk carry NaN.
    """

    z: np.ndarray
    inside: np.ndarray
    v: np.ndarray
    f: np.ndarray
    center: np.ndarray
    scale: float
    R: float

    @property
    def spacing(self) -> float:
        return float(self.z[0, 1].real - self.z[0, 0].real)

    def energy(self, warp=None) -> float:
        """Dirichlet energy over D_R with target density psi(f).

        P1 on the grid (each cell split in two triangles); only cells with
        all four nodes inside the disk are counted.
        """
        h = self.spacing
        cell = self.inside[:-1, :-1] & self.inside[1:, :-1] & self.inside[:-1, 1:] & self.inside[1:, 1:]
        fields = np.concatenate([self.v, self.f[..., None]], axis=-1)
        a = fields[:-1, :-1]
        bx = fields[:-1, 1:]
        by = fields[1:, :-1]
        c = fields[1:, 1:]
        # lower-left triangle (a, bx, by), upper-right (c, by, bx)
        gx1 = (bx - a) / h
        gy1 = (by - a) / h
        gx2 = (c - by) / h
        gy2 = (c - bx) / h
        e1 = np.sum(gx1 ** 2 + gy1 ** 2, axis=-1)
        e2 = np.sum(gx2 ** 2 + gy2 ** 2, axis=-1)
        if warp is None:
            w1 = w2 = 1.0
        else:
            fa, fbx, fby, fc = a[..., 3], bx[..., 3], by[..., 3], c[..., 3]
            w1 = warp((fa + fbx + fby) / 3.0)
            w2 = warp((fc + fbx + fby) / 3.0)
        dens = 0.5 * (e1 * w1 + e2 * w2) * (0.5 * h * h)
        return float(np.sum(np.where(cell, dens, 0.0)))

    def sup_distance(self, reference) -> float:
        """Largest chordal distance of v to reference(z) over nodes in the disk."""
        ref = reference(self.z[self.inside])
        return float(np.max(np.linalg.norm(self.v[self.inside] - ref, axis=-1)))


def resample_stereographic(mesh: TriMesh, v, f, center, scale: float, R: float,
                           n_grid: int = 101) -> PlanarPatch:
    """Pull a mesh map back to a planar grid around `center` at `scale`."""
    if scale <= 0 or R <= 0:
        raise MeshError("scale and R must be positive")
    if scale * R >= 1.0:
        raise MeshError(f"chart guard violated: scale*R = {scale * R:.3g} >= 1; use a smaller R")
    c = np.asarray(center, dtype=float)
    c = c / np.linalg.norm(c)
    xs = np.linspace(-R, R, int(n_grid))
    X, Y = np.meshgrid(xs, xs)
    z = X + 1j * Y
    inside = np.abs(z) <= R * (1 + 1e-12)
    Q = rotation_to_north(c)
    pts = inverse_stereographic(scale * z[inside]) @ Q
    faces, bary = mesh.locate(pts)
    corners = mesh.faces[faces]
    v = np.asarray(v, dtype=float)
    f = np.asarray(f, dtype=float)
    vv = np.einsum("qk,qkc->qc", bary, v[corners])
    vv /= np.linalg.norm(vv, axis=1)[:, None]
    ff = np.einsum("qk,qk->q", bary, f[corners])
    V = np.full(z.shape + (3,), np.nan)
    F = np.full(z.shape, np.nan)
    V[inside] = vv
    F[inside] = ff
    return PlanarPatch(z, inside, V, F, c, float(scale), float(R))


# ---------------------------------------------------------------------------
# text I/O
# ---------------------------------------------------------------------------

def write_mesh_csv(path, mesh: TriMesh, v=None, f=None) -> None:
    """One vertex per line (x,y,z[,vx,vy,vz,f]) followed by face index triples."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# level={mesh.subdivision_level}\n")
        fh.write(f"# vertices {mesh.n_vertices}\n")
        if v is None:
            for x in mesh.vertices:
                fh.write("{:.17g},{:.17g},{:.17g}\n".format(*x))
        else:
            for x, vi, fi in zip(mesh.vertices, v, f):
                fh.write("{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n".format(*x, *vi, fi))
        fh.write(f"# faces {mesh.n_faces}\n")
        for tri in mesh.faces:
            fh.write("{},{},{}\n".format(*tri))


def read_mesh_csv(path):
    """Inverse of write_mesh_csv: returns (mesh, v, f) with v, f None if absent."""
    level = 0
    verts, faces = [], []
    section = None
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            tok = line[1:].split()
            if tok and tok[0].startswith("level="):
                level = int(tok[0].split("=")[1])
            elif tok and tok[0] in ("vertices", "faces"):
                section = tok[0]
            continue
        row = line.split(",")
        if section == "vertices":
            verts.append([float(x) for x in row])
        elif section == "faces":
            faces.append([int(x) for x in row])
        else:
            raise MeshError(f"data line outside a section in {path}")
    data = np.array(verts)
    mesh = TriMesh(data[:, :3], np.array(faces), level)
    if data.shape[1] == 7:
        return mesh, data[:, 3:6].copy(), data[:, 6].copy()
    return mesh, None, None
