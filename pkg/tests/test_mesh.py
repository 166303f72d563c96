import math

import numpy as np
import pytest

from sbsgraph.mesh import refine, triangulate
from sbsgraph.surface import builtin_surface, scale


def _euler(mesh):
    """V - E + F of the mesh on the glued surface (vertices and edges up to identification)."""
    d = mesh.dof[mesh.triangles]
    edges = np.sort(np.concatenate([d[:, [0, 1]], d[:, [1, 2]], d[:, [2, 0]]]), axis=1)
    n_edges = len({tuple(e) for e in edges})
    return mesh.n_dofs - n_edges + len(mesh.triangles)


@pytest.fixture(scope="module", params=["octagon", "decagon"])
def mesh(request):
    s = builtin_surface(request.param)
    return triangulate(s, 0.05 * s.diameter)


def test_mesh_is_a_closed_surface(mesh):
    assert _euler(mesh) == mesh.surface.euler_characteristic


def test_triangles_cover_the_polygons(mesh):
    areas = mesh.triangle_areas()
    assert np.all(areas > 0)
    assert areas.sum() == pytest.approx(mesh.surface.area, rel=1e-12)


def test_one_dof_per_cone_class(mesh):
    assert len(mesh.cone_dofs) == mesh.surface.n_zeros


def test_glued_edges_share_degrees_of_freedom(mesh):
    s = mesh.surface
    for a, b in s.pairings:
        na = mesh.dof[mesh.edge_nodes[a]]
        nb = mesh.dof[mesh.edge_nodes[b]]
        # partner edges run in opposite directions
        assert list(na) == list(nb[::-1])


def test_grading_towards_cones(mesh):
    tri = mesh.nodes[mesh.triangles]
    centers = tri.mean(axis=1)
    size = np.sqrt(2 * mesh.triangle_areas())
    s = mesh.surface
    verts = s.polygons[0]
    dist = np.min(np.abs((centers[:, 0] + 1j * centers[:, 1])[:, None] - verts[None, :]), axis=1)
    near = size[dist < 0.02 * s.diameter]
    far = size[dist > 0.4 * s.diameter]
    assert near.max() < 0.5 * np.median(far)


def test_minimum_angle(mesh):
    assert mesh.min_angles().min() > math.radians(15)


def test_refine_is_nested(mesh):
    fine = refine(mesh)
    assert len(fine.triangles) == 4 * len(mesh.triangles)
    assert np.allclose(fine.nodes[: mesh.n_nodes], mesh.nodes)
    assert _euler(fine) == mesh.surface.euler_characteristic
    assert fine.level == mesh.level + 1


def test_meshing_is_similarity_equivariant():
    s = builtin_surface("sheared-decagon", s=0.3, t=1.1)
    c = 2j
    m0 = triangulate(s, 0.05 * s.diameter)
    m1 = triangulate(scale(s, c), 0.05 * abs(c) * s.diameter)
    assert len(m0.triangles) == len(m1.triangles)
    z0 = m0.nodes[:, 0] + 1j * m0.nodes[:, 1]
    z1 = m1.nodes[:, 0] + 1j * m1.nodes[:, 1]
    assert np.max(np.abs(c * z0 - z1)) < 1e-9


def test_meshing_is_deterministic():
    s = builtin_surface("decagon")
    a = triangulate(s, 0.1)
    b = triangulate(s, 0.1)
    assert np.array_equal(a.nodes, b.nodes) and np.array_equal(a.triangles, b.triangles)
