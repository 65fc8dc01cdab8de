"""Parameter-independent spatial operators for the wave basin.

Everything the solvers need is assembled once per mesh: the three mass
matrices, the velocity stiffness, the gravity-weighted elevation-gradient
coupling, and four sparse third-order tensors from which every nonlinear
matrix in the optimality system is a single contraction.  The quadratic
structure of the shallow water terms makes this decomposition exact, so no
interpolation of nonlinearities is ever needed.

Index convention for tensors: axes are (test, trial, coeff).  Contracting the
coeff axis with a coefficient vector recovers the usual "frozen coefficient"
matrices, e.g. the advection matrix at a given velocity field.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .geometry import FeSpace, Mesh, QuadratureRule, triangle_rule_degree3

_AXES = ("test", "trial", "coeff")


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Tensor3:
    """Sparse third-order tensor stored as deduplicated (i, j, k, value) triplets."""

    shape: tuple[int, int, int]
    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    vals: np.ndarray

    @property
    def nnz(self) -> int:
        return self.vals.size

    def contract(self, axis: str, w: np.ndarray, sign: float = 1.0) -> sp.csr_matrix:
        """Contract one axis with coefficients w; returns a matrix over the other two."""
        if axis not in _AXES:
            raise ValueError(f"axis must be one of {_AXES}, got {axis!r}")
        ax = _AXES.index(axis)
        w = np.asarray(w, dtype=float)
        if w.shape != (self.shape[ax],):
            raise DimensionError(
                f"coefficient length {w.shape} does not match axis {axis} of size {self.shape[ax]}"
            )
        idx = (self.i, self.j, self.k)
        rows, cols = (idx[m] for m in range(3) if m != ax)
        out_shape = tuple(self.shape[m] for m in range(3) if m != ax)
        vals = sign * self.vals * w[idx[ax]]
        return sp.coo_matrix((vals, (rows, cols)), shape=out_shape).tocsr()

    def restricted(self, drop: Iterable[int], axes: tuple[str, ...]) -> "Tensor3":
        """Drop every entry whose index on any of the given axes is in `drop`."""
        drop = np.asarray(sorted(set(drop)), dtype=np.int64)
        if drop.size == 0:
            return self
        keep = np.ones(self.nnz, dtype=bool)
        idx = {"test": self.i, "trial": self.j, "coeff": self.k}
        for ax in axes:
            keep &= ~np.isin(idx[ax], drop)
        return Tensor3(self.shape, self.i[keep], self.j[keep], self.k[keep], self.vals[keep])

    def dump(self, path) -> None:
        order = np.lexsort((self.k, self.j, self.i))
        with open(path, "w") as fh:
            for m in order:
                fh.write(f"{self.i[m]} {self.j[m]} {self.k[m]} {self.vals[m]!r}\n")


def _coalesce(shape, i, j, k, vals) -> Tensor3:
    lin = np.ravel_multi_index((i, j, k), shape)
    uniq, inv = np.unique(lin, return_inverse=True)
    acc = np.zeros(uniq.size)
    np.add.at(acc, inv, vals)
    ii, jj, kk = np.unravel_index(uniq, shape)
    return Tensor3(shape, ii, jj, kk, acc)


def _quadrature_pair_integrals(rule: QuadratureRule) -> np.ndarray:
    """Reference integrals of lambda_a * lambda_e, shape (3, 3)."""
    lam = rule.points
    return np.einsum("q,qa,qe->ae", rule.weights, lam, lam)


def assemble_mass(space: FeSpace, mesh: Mesh, rule: QuadratureRule | None = None) -> sp.csr_matrix:
    """M_ij = integral of phi_i . phi_j over the basin."""
    rule = rule or triangle_rule_degree3()
    area, _ = mesh.cell_geometry()
    q2 = _quadrature_pair_integrals(rule)
    tri = mesh.triangles
    rows, cols, vals = [], [], []
    for a in range(3):
        for b in range(3):
            rows.append(tri[:, a])
            cols.append(tri[:, b])
            vals.append(area * q2[a, b])
    m_scalar = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.n_vertices, mesh.n_vertices),
    ).tocsr()
    if space.kind == "scalar-P1":
        return m_scalar
    return sp.kron(m_scalar, sp.identity(2), format="csr")


def assemble_stiffness(space: FeSpace, mesh: Mesh) -> sp.csr_matrix:
    """K_ij = integral of grad(phi_i) : grad(phi_j) for the vector-P1 space."""
    if space.kind != "vector-P1":
        raise DimensionError("stiffness is assembled on the vector-P1 velocity space")
    area, grads = mesh.cell_geometry()
    tri = mesh.triangles
    rows, cols, vals = [], [], []
    for a in range(3):
        for b in range(3):
            rows.append(tri[:, a])
            cols.append(tri[:, b])
            vals.append(area * np.einsum("ec,ec->e", grads[:, a], grads[:, b]))
    k_scalar = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.n_vertices, mesh.n_vertices),
    ).tocsr()
    return sp.kron(k_scalar, sp.identity(2), format="csr")


def assemble_pressure_gradient(
    v_space: FeSpace, h_space: FeSpace, mesh: Mesh, g: float,
    rule: QuadratureRule | None = None,
) -> sp.csr_matrix:
    """D_ij = g * integral of phi_i . grad(psi_j); velocity rows, height columns."""
    if g <= 0:
        raise DimensionError("gravity must be positive")
    rule = rule or triangle_rule_degree3()
    area, grads = mesh.cell_geometry()
    lam1 = rule.weights @ rule.points       # reference integral of lambda_a
    tri = mesh.triangles
    rows, cols, vals = [], [], []
    for a in range(3):
        for b in range(3):
            for c in range(2):
                rows.append(2 * tri[:, a] + c)
                cols.append(tri[:, b])
                vals.append(g * area * lam1[a] * grads[:, b, c])
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(v_space.dof_count, h_space.dof_count),
    ).tocsr()


def assemble_nonlinear_tensors(
    v_space: FeSpace, h_space: FeSpace, mesh: Mesh, rule: QuadratureRule | None = None,
) -> tuple[Tensor3, Tensor3, Tensor3, Tensor3]:
    """Assemble (T_adv, T_div, T_gradscal, T_hgrad).

    T_adv[i,j,k]      = int  phi_i . (phi_k . grad) phi_j     (vel, vel, vel)
    T_div[i,j,k]      = int  psi_i  div(psi_j phi_k)          (scal, scal, vel)
    T_gradscal[i,j,k] = int  psi_i  (phi_k . grad psi_j)      (scal, scal, vel)
    T_hgrad[i,j,k]    = int (phi_i . grad psi_j) psi_k        (vel, scal, scal)
    """
    rule = rule or triangle_rule_degree3()
    area, grads = mesh.cell_geometry()
    q2 = _quadrature_pair_integrals(rule)
    tri = mesh.triangles
    n_tri = mesh.n_triangles
    nv, nh = v_space.dof_count, h_space.dof_count

    # pairwise mass on each element: pm[e, a, b] = int_e lambda_a lambda_b
    pm = area[:, None, None] * q2[None, :, :]

    # T_adv: entries over (a test vert, c comp) x (b trial vert, c) x (e coeff vert, f comp)
    A, B, E = np.meshgrid(np.arange(3), np.arange(3), np.arange(3), indexing="ij")
    base_val = pm[:, A.ravel(), E.ravel()]                                  # (n_tri, 27)
    gb = grads[:, B.ravel(), :]                                             # (n_tri, 27, 2)
    ga_idx = tri[:, A.ravel()]
    gb_idx = tri[:, B.ravel()]
    ge_idx = tri[:, E.ravel()]

    i_l, j_l, k_l, v_l = [], [], [], []
    for c in range(2):
        for f in range(2):
            i_l.append((2 * ga_idx + c).ravel())
            j_l.append((2 * gb_idx + c).ravel())
            k_l.append((2 * ge_idx + f).ravel())
            v_l.append((base_val * gb[:, :, f]).ravel())
    t_adv = _coalesce((nv, nv, nv),
                      np.concatenate(i_l), np.concatenate(j_l),
                      np.concatenate(k_l), np.concatenate(v_l))

    # T_div and T_gradscal share index structure (scal, scal, vel)
    i_l, j_l, k_l, vdiv_l, vgs_l = [], [], [], [], []
    val_ae_gb = base_val                                                    # int lam_a lam_e * grad_b
    val_ab = pm[:, A.ravel(), B.ravel()]
    ge_grad = grads[:, E.ravel(), :]
    for f in range(2):
        i_l.append(ga_idx.ravel())
        j_l.append(gb_idx.ravel())
        k_l.append((2 * ge_idx + f).ravel())
        vgs_l.append((val_ae_gb * gb[:, :, f]).ravel())
        vdiv_l.append((val_ae_gb * gb[:, :, f] + val_ab * ge_grad[:, :, f]).ravel())
    t_div = _coalesce((nh, nh, nv),
                      np.concatenate(i_l), np.concatenate(j_l),
                      np.concatenate(k_l), np.concatenate(vdiv_l))
    t_gradscal = _coalesce((nh, nh, nv),
                           np.concatenate(i_l), np.concatenate(j_l),
                           np.concatenate(k_l), np.concatenate(vgs_l))

    # T_hgrad: (vel test (a,c), scal trial b, scal coeff e)
    i_l, j_l, k_l, v_l = [], [], [], []
    for c in range(2):
        i_l.append((2 * ga_idx + c).ravel())
        j_l.append(gb_idx.ravel())
        k_l.append(ge_idx.ravel())
        v_l.append((base_val * gb[:, :, c]).ravel())
    t_hgrad = _coalesce((nv, nh, nh),
                        np.concatenate(i_l), np.concatenate(j_l),
                        np.concatenate(k_l), np.concatenate(v_l))
    del n_tri
    return t_adv, t_div, t_gradscal, t_hgrad


def contract_tensor(t: Tensor3, axis: str, w: np.ndarray, sign: float = 1.0) -> sp.csr_matrix:
    return t.contract(axis, w, sign)


# Frozen-coefficient matrices of the linearized optimality system.  The state
# side uses the first four; the remaining ones reproduce the hand-written
# adjoint operators and are kept for diagnostics (the solver derives its
# adjoint blocks by exact transposition instead).

def advection_matrix(t_adv: Tensor3, v: np.ndarray) -> sp.csr_matrix:
    return t_adv.contract("coeff", v)


def frozen_advection_matrix(t_adv: Tensor3, v: np.ndarray) -> sp.csr_matrix:
    return t_adv.contract("trial", v)


def divergence_matrix(t_div: Tensor3, v: np.ndarray) -> sp.csr_matrix:
    return t_div.contract("coeff", v)


def height_flux_matrix(t_div: Tensor3, h: np.ndarray) -> sp.csr_matrix:
    return t_div.contract("trial", h)


def adjoint_transport_matrix(t_gradscal: Tensor3, v: np.ndarray) -> sp.csr_matrix:
    return t_gradscal.contract("coeff", v, sign=-1.0)


def adjoint_height_gradient_matrix(t_hgrad: Tensor3, h: np.ndarray) -> sp.csr_matrix:
    return t_hgrad.contract("coeff", h, sign=-1.0)


def adjoint_transport_lin(t_gradscal: Tensor3, lam: np.ndarray) -> sp.csr_matrix:
    return t_gradscal.contract("trial", lam)


def adjoint_height_gradient_lin(t_hgrad: Tensor3, lam: np.ndarray) -> sp.csr_matrix:
    return t_hgrad.contract("trial", lam)


@dataclass(frozen=True)
class AffineOperatorSet:
    M_v: sp.csr_matrix
    M_h: sp.csr_matrix
    M_u: sp.csr_matrix
    K: sp.csr_matrix
    D: sp.csr_matrix
    T_adv: Tensor3
    T_div: Tensor3
    T_gradscal: Tensor3
    T_hgrad: Tensor3


def assemble_operator_set(
    mesh: Mesh, v_space: FeSpace, h_space: FeSpace, u_space: FeSpace, g: float,
) -> AffineOperatorSet:
    rule = triangle_rule_degree3()
    t_adv, t_div, t_gradscal, t_hgrad = assemble_nonlinear_tensors(v_space, h_space, mesh, rule)
    return AffineOperatorSet(
        M_v=assemble_mass(v_space, mesh, rule),
        M_h=assemble_mass(h_space, mesh, rule),
        M_u=assemble_mass(u_space, mesh, rule),
        K=assemble_stiffness(v_space, mesh),
        D=assemble_pressure_gradient(v_space, h_space, mesh, g, rule),
        T_adv=t_adv,
        T_div=t_div,
        T_gradscal=t_gradscal,
        T_hgrad=t_hgrad,
    )


def zero_rows(a: sp.spmatrix, dofs: Iterable[int]) -> sp.csr_matrix:
    dofs = list(dofs)
    a = a.tocsr().copy()
    if not dofs:
        return a
    mask = np.ones(a.shape[0])
    mask[np.asarray(dofs, dtype=np.int64)] = 0.0
    return (sp.diags(mask) @ a).tocsr()


def zero_rows_cols(a: sp.spmatrix, dofs: Iterable[int]) -> sp.csr_matrix:
    dofs = list(dofs)
    a = a.tocsr()
    if not dofs:
        return a.copy()
    mask = np.ones(a.shape[0])
    mask[np.asarray(dofs, dtype=np.int64)] = 0.0
    p = sp.diags(mask)
    return (p @ a @ p).tocsr()


def apply_dirichlet(
    a: sp.spmatrix, rhs: np.ndarray, dofs: Iterable[int], values: np.ndarray | None = None,
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Impose prescribed values: identity rows, columns folded into the rhs.

    Symmetric inputs stay symmetric, which keeps factorizations well behaved.
    """
    dofs = np.asarray(sorted(set(dofs)), dtype=np.int64)
    a = a.tocsr()
    rhs = np.array(rhs, dtype=float)
    if dofs.size == 0:
        return a.copy(), rhs
    n = a.shape[0]
    if dofs.min() < 0 or dofs.max() >= n:
        raise IndexError("dirichlet dof out of range")
    if values is None:
        values = np.zeros(dofs.size)
    values = np.asarray(values, dtype=float)
    full = np.zeros(n)
    full[dofs] = values
    rhs = rhs - a @ full
    mask = np.ones(n)
    mask[dofs] = 0.0
    p = sp.diags(mask)
    ind = np.zeros(n)
    ind[dofs] = 1.0
    a = (p @ a @ p + sp.diags(ind)).tocsr()
    rhs[dofs] = values
    return a, rhs


def dump_matrix(a: sp.spmatrix, path) -> None:
    coo = a.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        for m in order:
            fh.write(f"{coo.row[m]} {coo.col[m]} {coo.data[m]!r}\n")
