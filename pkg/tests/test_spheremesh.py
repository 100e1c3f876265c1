import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import icosphere
from warp_harmonic.spheremesh import (MeshError, NORTH, build_icosphere, build_log_polar_mesh, chart_radius,
                                      face_gradient, field_gradients, geodesic_ball_energy, geodesic_distance,
                                      inverse_stereographic, read_mesh_csv, resample_stereographic,
                                      rotation_to_north, signed_solid_angle, stereographic, write_mesh_csv,
                                      zoom_mesh)

unit_vectors = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda p: 0.1 < np.linalg.norm(p)).map(
    lambda p: np.array(p) / np.linalg.norm(p))


def dirichlet(mesh, values):
    g = field_gradients(mesh, values)
    return float(np.sum(np.sum(g ** 2, axis=tuple(range(1, g.ndim))) * mesh.flat_area))


@pytest.mark.parametrize("level,V,F,E", [(0, 12, 20, 30), (1, 42, 80, 120), (2, 162, 320, 480)])
def test_icosphere_counts(level, V, F, E):
    m = build_icosphere(level)
    assert (m.n_vertices, m.n_faces, m.n_edges) == (V, F, E)
    assert m.euler_characteristic == 2


@pytest.mark.parametrize("level", [0, 1, 2, 3, 4, 5])
def test_icosphere_invariants(level):
    m = icosphere(level)
    np.testing.assert_allclose(np.linalg.norm(m.vertices, axis=1), 1.0, atol=1e-12)
    assert m.euler_characteristic == 2
    assert np.all(m.face_area > 0) and np.all(m.flat_area > 0)
    assert np.all(np.einsum("ij,ij->i", m.face_normals, m.barycenters) > 0)
    assert m.face_area.sum() == pytest.approx(4 * math.pi, rel=1e-12)


def test_level_guard():
    with pytest.raises(MeshError):
        build_icosphere(9)
    with pytest.raises(MeshError):
        build_icosphere(-1)


@pytest.mark.parametrize("level", [4, 5])
def test_area_sum(level):
    m = icosphere(level)
    assert abs(m.face_area.sum() / (4 * math.pi) - 1) < 1e-3
    assert abs(m.vertex_dual_area.sum() - m.flat_area.sum()) < 1e-12


def test_flat_area_sum_level5(mesh5):
    assert 0.999 <= mesh5.flat_area.sum() / (4 * math.pi) <= 1.001


def test_flat_area_deficit_is_second_order():
    d = [4 * math.pi - icosphere(L).flat_area.sum() for L in (3, 4, 5)]
    h = [icosphere(L).max_edge_length for L in (3, 4, 5)]
    slopes = [math.log(d[i] / d[i + 1]) / math.log(h[i] / h[i + 1]) for i in range(2)]
    assert all(1.7 <= s <= 2.3 for s in slopes)


def test_constant_field_zero_gradient(mesh3):
    g = field_gradients(mesh3, np.full(mesh3.n_vertices, 2.5))
    assert np.all(g == 0)
    assert np.all(face_gradient(mesh3, np.ones((mesh3.n_vertices, 3)), 7) == 0)


def test_gradient_exact_for_affine_and_tangent(mesh3):
    a = np.array([0.3, -1.2, 0.7])
    vals = mesh3.vertices @ a + 4.0
    g = field_gradients(mesh3, vals)
    # exact: the gradient is the projection of a onto each face plane
    n = mesh3.face_normals
    proj = a - np.einsum("ij,j->i", n, a)[:, None] * n
    np.testing.assert_allclose(g, proj, atol=1e-12)
    np.testing.assert_allclose(face_gradient(mesh3, vals, 11), proj[11], atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 31), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_gradient_linear(seed, a, b):
    m = icosphere(2)
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, m.n_vertices))
    np.testing.assert_allclose(field_gradients(m, a * x + b * y),
                               a * field_gradients(m, x) + b * field_gradients(m, y), atol=1e-9)


def test_coordinate_dirichlet_energy(mesh5):
    # int |grad x|^2 = 8 pi / 3 on the unit sphere
    assert dirichlet(mesh5, mesh5.vertices[:, 0]) == pytest.approx(8 * math.pi / 3, rel=1e-2)
    assert dirichlet(mesh5, mesh5.vertices) == pytest.approx(8 * math.pi, rel=1e-2)


def test_quadrature_refinement_order():
    levels = (3, 4, 5)
    errs, hs = [], []
    for L in levels:
        m = icosphere(L)
        x, y, z = m.vertices.T
        # degree-2 harmonic: int |grad Y|^2 = l(l+1) int Y^2 for Y = x y, int (xy)^2 = 4 pi / 15
        errs.append(abs(dirichlet(m, x * y) - 6 * 4 * math.pi / 15))
        hs.append(m.max_edge_length)
    slopes = [math.log(errs[i] / errs[i + 1]) / math.log(hs[i] / hs[i + 1]) for i in range(2)]
    assert all(1.7 <= s <= 2.3 for s in slopes), slopes


def test_geodesic_ball_energy(mesh4):
    ones = np.ones(mesh4.n_faces)
    assert geodesic_ball_energy(mesh4, ones, NORTH, math.pi) == pytest.approx(mesh4.flat_area.sum())
    assert geodesic_ball_energy(mesh4, ones, NORTH, math.pi / 2) == pytest.approx(2 * math.pi, rel=2e-2)
    spike = np.zeros(mesh4.n_faces)
    far = int(np.argmin(mesh4.barycenter_directions[:, 2]))
    spike[far] = 1e6
    assert geodesic_ball_energy(mesh4, spike, NORTH, 1.0) == 0.0
    with pytest.raises(MeshError):
        geodesic_ball_energy(mesh4, ones, NORTH, 0.0)


@settings(max_examples=25, deadline=None)
@given(c=unit_vectors, r1=st.floats(0.01, 3.1), r2=st.floats(0.01, 3.1), seed=st.integers(0, 1000))
def test_ball_energy_monotone(c, r1, r2, seed):
    m = icosphere(3)
    dens = np.random.default_rng(seed).random(m.n_faces)
    lo, hi = sorted((r1, r2))
    assert geodesic_ball_energy(m, dens, c, lo) <= geodesic_ball_energy(m, dens, c, hi)


@settings(max_examples=25, deadline=None)
@given(c=unit_vectors, r=st.floats(0.05, 3.0))
def test_faces_in_ball_agrees_with_brute_force(c, r):
    m = icosphere(3)
    brute = np.flatnonzero(geodesic_distance(m.barycenter_directions, c[None, :]) <= r)
    np.testing.assert_array_equal(m.faces_in_ball(c, r), brute)


@settings(max_examples=50, deadline=None)
@given(p=unit_vectors)
def test_stereographic_roundtrip(p):
    if p[2] < -0.999:
        return
    np.testing.assert_allclose(inverse_stereographic(stereographic(p)), p, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(c=unit_vectors)
def test_rotation_to_north(c):
    Q = rotation_to_north(c)
    np.testing.assert_allclose(Q @ c, NORTH, atol=1e-12)
    np.testing.assert_allclose(Q @ Q.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(Q) == pytest.approx(1.0)
    assert chart_radius(c[None, :], c)[0] == pytest.approx(0.0, abs=1e-7)


def test_chart_radius_equator_is_one():
    pts = np.array([[1.0, 0, 0], [0, -1.0, 0]])
    np.testing.assert_allclose(chart_radius(pts), 1.0)
    assert chart_radius(np.array([[0, 0, -1.0]]))[0] == np.inf


def test_signed_solid_angle_octant():
    e = np.eye(3)
    assert signed_solid_angle(e[0], e[1], e[2]) == pytest.approx(math.pi / 2)
    assert signed_solid_angle(e[0], e[2], e[1]) == pytest.approx(-math.pi / 2)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_locate_reconstructs_points(seed):
    m = icosphere(3)
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(20, 3))
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    faces, bary = m.locate(pts)
    recon = np.einsum("qk,qkc->qc", bary, m.vertices[m.faces[faces]])
    recon /= np.linalg.norm(recon, axis=1)[:, None]
    np.testing.assert_allclose(recon, pts, atol=1e-10)
    assert np.all(bary >= -1e-10)


def test_resample_constant_and_fixed_point(mesh4):
    v = np.tile([0.0, 0.6, 0.8], (mesh4.n_vertices, 1))
    f = np.full(mesh4.n_vertices, 0.1)
    patch = resample_stereographic(mesh4, v, f, NORTH, 0.05, 5.0, 21)
    np.testing.assert_allclose(patch.v[patch.inside], np.broadcast_to(v[0], (patch.inside.sum(), 3)), atol=1e-14)
    np.testing.assert_allclose(patch.f[patch.inside], 0.1, atol=1e-14)
    assert patch.energy() == pytest.approx(0.0, abs=1e-20)
    ident = resample_stereographic(mesh4, mesh4.vertices, f, NORTH, 1.0 / 1.5, 1.0, 21)
    c = ident.z.shape[0] // 2
    np.testing.assert_allclose(ident.v[c, c], NORTH, atol=1e-12)


def test_resample_chart_guard(mesh4):
    with pytest.raises(MeshError):
        resample_stereographic(mesh4, mesh4.vertices, np.zeros(mesh4.n_vertices), NORTH, 0.2, 10.0)


def test_resample_bubble(mesh6):
    lam = 0.05
    z = stereographic(mesh6.vertices)
    with np.errstate(invalid="ignore"):
        v = inverse_stereographic(np.where(np.isfinite(z), z / lam, np.inf))
    patch = resample_stereographic(mesh6, v, np.zeros(mesh6.n_vertices), NORTH, lam, 10.0, 101)
    assert patch.sup_distance(inverse_stereographic) < 0.05


def test_log_polar_mesh():
    m = build_log_polar_mesh(-10.0, 4.0, 48)
    assert m.euler_characteristic == 2
    assert m.subdivision_level == -1
    assert np.all(np.einsum("ij,ij->i", m.face_normals, m.barycenters) > 0)
    r = chart_radius(m.vertices)
    assert r[1:-1].min() == pytest.approx(math.exp(-10.0))
    assert r[1:-1].max() == pytest.approx(math.exp(4.0))
    with pytest.raises(MeshError):
        build_log_polar_mesh(1.0, 0.0, 48)


def test_zoom_mesh_keeps_topology(mesh3):
    z = zoom_mesh(mesh3, 0.1)
    assert z.euler_characteristic == 2
    np.testing.assert_allclose(np.linalg.norm(z.vertices, axis=1), 1.0, atol=1e-12)
    assert np.all(np.einsum("ij,ij->i", z.face_normals, z.barycenters) > 0)


def test_csv_roundtrip(tmp_path, mesh3):
    rng = np.random.default_rng(0)
    v = rng.normal(size=(mesh3.n_vertices, 3))
    f = rng.normal(size=mesh3.n_vertices)
    write_mesh_csv(tmp_path / "m.csv", mesh3, v, f)
    m2, v2, f2 = read_mesh_csv(tmp_path / "m.csv")
    np.testing.assert_array_equal(m2.vertices, mesh3.vertices)
    np.testing.assert_array_equal(m2.faces, mesh3.faces)
    np.testing.assert_array_equal(v2, v)
    np.testing.assert_array_equal(f2, f)
    assert m2.subdivision_level == 3
    write_mesh_csv(tmp_path / "bare.csv", mesh3)
    _, vb, fb = read_mesh_csv(tmp_path / "bare.csv")
    assert vb is None and fb is None
