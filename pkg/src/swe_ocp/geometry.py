"""Structured triangulation of a rectangular basin and P1 finite element spaces.

The mesh is a uniform grid of (nx+1)*(ny+1) vertices, each cell split into two
triangles along the same diagonal.  Vertex ordering is row-major with x running
fastest, so dof numbering is reproducible across runs and snapshot files stay
portable.  Vector-valued spaces interleave components per vertex as
(x-component, y-component).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class MeshConfig:
    x_min: float = 0.0
    x_max: float = 10.0
    y_min: float = 0.0
    y_max: float = 10.0
    nx: int = 15
    ny: int = 15

    def validate(self) -> None:
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ConfigurationError("domain corners must satisfy x_max > x_min, y_max > y_min")
        if self.nx < 1 or self.ny < 1:
            raise ConfigurationError("nx and ny must be >= 1")


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray        # (n_vert, 2)
    triangles: np.ndarray       # (n_tri, 3), counter-clockwise
    boundary_vertices: frozenset[int]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def cell_geometry(self) -> tuple[np.ndarray, np.ndarray]:
        """Signed areas (n_tri,) and P1 shape gradients (n_tri, 3, 2)."""
        p = self.vertices[self.triangles]          # (n_tri, 3, 2)
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        # gradient of barycentric coordinate i is perpendicular to the
        # opposite edge, scaled by 1/(2*area)
        grads = np.empty((self.n_triangles, 3, 2))
        for i in range(3):
            a = p[:, (i + 1) % 3]
            b = p[:, (i + 2) % 3]
            grads[:, i, 0] = (a[:, 1] - b[:, 1]) / (2.0 * area)
            grads[:, i, 1] = (b[:, 0] - a[:, 0]) / (2.0 * area)
        return area, grads

    def dump(self, path) -> None:
        """Debug text dump: one line `v x y` per vertex, `t i j k` per triangle."""
        with open(path, "w") as fh:
            for x, y in self.vertices:
                fh.write(f"v {x!r} {y!r}\n")
            for i, j, k in self.triangles:
                fh.write(f"t {i} {j} {k}\n")


def build_structured_mesh(cfg: MeshConfig) -> Mesh:
    """Uniform fixed-diagonal triangulation of the rectangle."""
    cfg.validate()
    xs = np.linspace(cfg.x_min, cfg.x_max, cfg.nx + 1)
    ys = np.linspace(cfg.y_min, cfg.y_max, cfg.ny + 1)
    xg, yg = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([xg.ravel(), yg.ravel()])

    def vid(i: int, j: int) -> int:
        return j * (cfg.nx + 1) + i

    tris = []
    for j in range(cfg.ny):
        for i in range(cfg.nx):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            # both CCW, shared diagonal v00-v11
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    triangles = np.array(tris, dtype=np.int64)

    boundary = set()
    for j in range(cfg.ny + 1):
        for i in range(cfg.nx + 1):
            if i in (0, cfg.nx) or j in (0, cfg.ny):
                boundary.add(vid(i, j))
    return Mesh(vertices=vertices, triangles=triangles, boundary_vertices=frozenset(boundary))


@dataclass(frozen=True)
class FeSpace:
    kind: str                   # "scalar-P1" | "vector-P1"
    dof_count: int
    dirichlet_dofs: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.kind not in ("scalar-P1", "vector-P1"):
            raise ConfigurationError(f"unknown space kind {self.kind!r}")
        bad = [d for d in self.dirichlet_dofs if not (0 <= d < self.dof_count)]
        if bad:
            raise ConfigurationError(f"dirichlet dofs out of range: {bad[:5]}")


def scalar_space(mesh: Mesh) -> FeSpace:
    return FeSpace(kind="scalar-P1", dof_count=mesh.n_vertices)


def vector_space(mesh: Mesh) -> FeSpace:
    return FeSpace(kind="vector-P1", dof_count=2 * mesh.n_vertices)


def mark_dirichlet(space: FeSpace, mesh: Mesh) -> FeSpace:
    """Constrain velocity dofs on the basin boundary; scalar spaces stay free.

    Only the velocity (and by inheritance the adjoint velocity) carries the
    homogeneous wall condition; elevation and control are unconstrained.
    """
    if space.kind == "scalar-P1":
        return space
    dofs = frozenset(2 * v + c for v in mesh.boundary_vertices for c in (0, 1))
    return FeSpace(kind=space.kind, dof_count=space.dof_count, dirichlet_dofs=dofs)


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points/weights on the reference triangle, weights sum to 1."""
    points: np.ndarray          # (nq, 3)
    weights: np.ndarray         # (nq,)


def triangle_rule_degree3() -> QuadratureRule:
    # classic 4-point symmetric rule, exact for total degree 3
    pts = np.array([
        [1 / 3, 1 / 3, 1 / 3],
        [0.6, 0.2, 0.2],
        [0.2, 0.6, 0.2],
        [0.2, 0.2, 0.6],
    ])
    wts = np.array([-27 / 48, 25 / 48, 25 / 48, 25 / 48])
    return QuadratureRule(points=pts, weights=wts)
