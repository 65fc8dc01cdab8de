import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from swe_ocp.geometry import (
    ConfigurationError,
    FeSpace,
    MeshConfig,
    build_structured_mesh,
    mark_dirichlet,
    scalar_space,
    triangle_rule_degree3,
    vector_space,
)


def test_unit_subdivision_counts():
    mesh = build_structured_mesh(MeshConfig(nx=1, ny=1))
    assert mesh.n_vertices == 4
    assert mesh.n_triangles == 2
    assert len(mesh.boundary_vertices) == 4


def test_two_by_two_counts():
    mesh = build_structured_mesh(MeshConfig(nx=2, ny=2))
    assert mesh.n_vertices == 9
    assert mesh.n_triangles == 8
    assert len(mesh.boundary_vertices) == 8


def test_areas_positive_equal_and_sum_to_domain():
    mesh = build_structured_mesh(MeshConfig(nx=7, ny=5))
    area, _ = mesh.cell_geometry()
    assert np.all(area > 0)            # counter-clockwise orientation
    assert np.allclose(area, area[0])  # uniform structured grid
    assert abs(area.sum() - 100.0) < 1e-12


def test_boundary_vertex_count_formula():
    for nx, ny in [(1, 1), (3, 2), (5, 5), (8, 3)]:
        mesh = build_structured_mesh(MeshConfig(nx=nx, ny=ny))
        assert len(mesh.boundary_vertices) == 2 * (nx + ny)


def test_interior_vertex_valence_six():
    mesh = build_structured_mesh(MeshConfig(nx=2, ny=2))
    center = 4  # row-major, x fastest: vertex (1,1)
    assert center not in mesh.boundary_vertices
    incident = sum(center in tri for tri in mesh.triangles)
    assert incident == 6


def test_invalid_config_rejected():
    with pytest.raises(ConfigurationError):
        MeshConfig(nx=0, ny=3).validate()
    with pytest.raises(ConfigurationError):
        MeshConfig(x_min=1.0, x_max=0.0).validate()
    with pytest.raises(ConfigurationError):
        build_structured_mesh(MeshConfig(ny=-1))


def test_spaces_and_dirichlet_marking():
    mesh = build_structured_mesh(MeshConfig(nx=2, ny=2))
    hs = scalar_space(mesh)
    vs = vector_space(mesh)
    assert hs.dof_count == 9
    assert vs.dof_count == 18
    marked = mark_dirichlet(vs, mesh)
    assert len(marked.dirichlet_dofs) == 16  # 8 boundary vertices x 2 components
    assert mark_dirichlet(hs, mesh).dirichlet_dofs == frozenset()
    # the interior (center) vertex keeps both velocity dofs free
    assert 8 not in marked.dirichlet_dofs and 9 not in marked.dirichlet_dofs


def test_fespace_validation():
    with pytest.raises(ConfigurationError):
        FeSpace(kind="P2", dof_count=3)
    with pytest.raises(ConfigurationError):
        FeSpace(kind="scalar-P1", dof_count=3, dirichlet_dofs=frozenset({5}))


def _bary_integral(a, b, c):
    """Exact integral of lambda1^a lambda2^b lambda3^c over the reference
    triangle, normalized by the reference area."""
    import math
    return 2.0 * math.factorial(a) * math.factorial(b) * math.factorial(c) \
        / math.factorial(a + b + c + 2)


def test_quadrature_exact_to_degree_three():
    rule = triangle_rule_degree3()
    assert abs(rule.weights.sum() - 1.0) < 1e-14
    for exps in [(1, 0, 0), (2, 0, 0), (1, 1, 0), (3, 0, 0), (2, 1, 0), (1, 1, 1)]:
        approx = float(np.sum(
            rule.weights * np.prod(rule.points ** np.array(exps), axis=1)))
        assert abs(approx - _bary_integral(*exps)) < 1e-14, exps


def test_mesh_dump_format(tmp_path):
    mesh = build_structured_mesh(MeshConfig(nx=1, ny=1))
    path = tmp_path / "mesh.txt"
    mesh.dump(path)
    lines = path.read_text().splitlines()
    assert len(lines) == mesh.n_vertices + mesh.n_triangles
    assert all(l.startswith("v ") for l in lines[:4])
    assert all(l.startswith("t ") for l in lines[4:])


@settings(max_examples=25, deadline=None)
@given(nx=hst.integers(1, 8), ny=hst.integers(1, 8))
def test_structured_counts_property(nx, ny):
    mesh = build_structured_mesh(MeshConfig(nx=nx, ny=ny))
    assert mesh.n_vertices == (nx + 1) * (ny + 1)
    assert mesh.n_triangles == 2 * nx * ny
    area, _ = mesh.cell_geometry()
    assert abs(area.sum() - 100.0) < 1e-10 * 100.0
