"""All-at-once space-time optimality system and the full-order Newton solver.

The unknown stacks every time step of the five fields into one vector,
ordered [velocity; elevation; control; adjoint velocity; adjoint elevation],
time-major inside each block.  Residual rows follow the same ordering
(adjoint equations pair with state variables, state equations with adjoint
variables), so the linearization is a generalized saddle-point matrix
[[A, B^T], [B, 0]] whose top-right block is the exact transpose of the
assembled bottom-left block.

The adjoint rows are built as the gradient of the discrete Lagrangian, i.e.
through transposition of the linearized state operator, not from separately
discretized adjoint PDEs.  This makes the saddle structure exact and the
finite-difference Jacobian check tight; the hand-derived adjoint matrices
remain available in `operators` for cross-checks.

Wall boundary conditions (velocity and adjoint velocity pinned to zero) are
imposed by zeroing constrained rows/columns of every velocity operator and
adding an identity coupling between each constrained velocity dof and its
adjoint partner, which keeps the system symmetric-structured and nonsingular.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import operators as ops
from .geometry import (
    ConfigurationError,
    Mesh,
    MeshConfig,
    build_structured_mesh,
    mark_dirichlet,
    scalar_space,
    vector_space,
)

PARAMETER_BOX = ((1e-5, 1.0), (0.01, 0.5), (0.1, 1.0))

VARIABLES = ("v", "h", "u", "chi", "lam")


class SolverError(RuntimeError):
    def __init__(self, message, residual_norm=None, history=None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.history = history or []


@dataclass(frozen=True)
class Parameters:
    """Physical and discretization parameters of one optimal control solve."""

    mu1: float
    mu2: float
    mu3: float
    alpha: float = 0.1
    g: float = 9.81
    T: float = 0.8
    nt: int = 8

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def mu(self) -> tuple[float, float, float]:
        return (self.mu1, self.mu2, self.mu3)

    def validate(self, box=PARAMETER_BOX) -> None:
        for name, value, (lo, hi) in zip(("mu1", "mu2", "mu3"), self.mu, box):
            if not (lo <= value <= hi):
                raise ConfigurationError(f"{name}={value} outside admissible range ({lo}, {hi})")
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigurationError(f"alpha={self.alpha} must lie in (0, 1]")
        if self.nt < 1 or self.T <= 0:
            raise ConfigurationError("time grid requires T > 0 and nt >= 1")


@dataclass(frozen=True)
class Layout:
    """Index bookkeeping for the monolithic space-time vector."""

    nt: int
    n_v: int
    n_h: int
    n_u: int

    @property
    def sizes(self) -> dict[str, int]:
        return {"v": self.n_v, "h": self.n_h, "u": self.n_u, "chi": self.n_v, "lam": self.n_h}

    @property
    def total(self) -> int:
        return self.nt * (2 * self.n_v + 2 * self.n_h + self.n_u)

    def block_slice(self, var: str) -> slice:
        off = 0
        for name in VARIABLES:
            n = self.nt * self.sizes[name]
            if name == var:
                return slice(off, off + n)
            off += n
        raise KeyError(var)


class SpaceTimeVector:
    """Flat coefficient vector with named per-variable (nt, n) views."""

    def __init__(self, layout: Layout, data: np.ndarray | None = None):
        self.layout = layout
        if data is None:
            data = np.zeros(layout.total)
        if data.shape != (layout.total,):
            raise ops.DimensionError(f"expected length {layout.total}, got {data.shape}")
        self.data = data

    def block(self, var: str) -> np.ndarray:
        n = self.layout.sizes[var]
        return self.data[self.layout.block_slice(var)].reshape(self.layout.nt, n)

    def copy(self) -> "SpaceTimeVector":
        return SpaceTimeVector(self.layout, self.data.copy())

    @classmethod
    def zeros(cls, layout: Layout) -> "SpaceTimeVector":
        return cls(layout)


@dataclass
class ProblemData:
    """Initial state and the tracked trajectory entering the cost."""

    v0: np.ndarray
    h0: np.ndarray
    vd: np.ndarray          # (nt, n_v)
    hd: np.ndarray          # (nt, n_h)


class Discretization:
    """Mesh, spaces and assembled operators shared by all solves on one grid."""

    def __init__(self, mesh_cfg: MeshConfig, g: float = 9.81):
        self.mesh_cfg = mesh_cfg
        self.g = g
        self.mesh: Mesh = build_structured_mesh(mesh_cfg)
        self.h_space = scalar_space(self.mesh)
        self.v_space = mark_dirichlet(vector_space(self.mesh), self.mesh)
        self.u_space = vector_space(self.mesh)
        self.ops = ops.assemble_operator_set(
            self.mesh, self.v_space, self.h_space, self.u_space, g)

        dofs = sorted(self.v_space.dirichlet_dofs)
        self.dirichlet = np.asarray(dofs, dtype=np.int64)
        o = self.ops
        self.M_vc = ops.zero_rows_cols(o.M_v, dofs)
        self.K_c = ops.zero_rows_cols(o.K, dofs)
        self.D_c = ops.zero_rows(o.D, dofs)
        self.Mu_c = ops.zero_rows(o.M_u, dofs)       # velocity-test rows zeroed
        ind = np.zeros(self.v_space.dof_count)
        ind[self.dirichlet] = 1.0
        self.I_c = sp.diags(ind).tocsr()
        self.T_adv_c = o.T_adv.restricted(dofs, ("test", "trial", "coeff"))
        self.T_div_c = o.T_div.restricted(dofs, ("coeff",))

    @property
    def n_v(self) -> int:
        return self.v_space.dof_count

    @property
    def n_h(self) -> int:
        return self.h_space.dof_count

    @property
    def n_u(self) -> int:
        return self.u_space.dof_count

    def layout(self, nt: int) -> Layout:
        return Layout(nt=nt, n_v=self.n_v, n_h=self.n_h, n_u=self.n_u)

    def ip_matrix(self, var: str) -> sp.csr_matrix:
        """Spatial inner-product weight: H1-type for velocities, L2 otherwise."""
        if var in ("v", "chi"):
            return (self.ops.M_v + self.ops.K).tocsr()
        if var in ("h", "lam"):
            return self.ops.M_h
        if var == "u":
            return self.ops.M_u
        raise KeyError(var)


def initial_conditions(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian mound of water at rest in the middle of the basin."""
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    h0 = 0.2 * (1.0 + 5.0 * np.exp(-(x - 5.0) ** 2 - (y - 5.0) ** 2 + 1.0))
    v0 = np.zeros(2 * mesh.n_vertices)
    return v0, h0


def desired_initial_height(mesh: Mesh) -> np.ndarray:
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    return 2.0 * np.exp(-(x - 5.0) ** 2 - (y - 5.0) ** 2 + 1.0)


def uncontrolled_forward_solve(
    disc: Discretization,
    params: Parameters,
    v0: np.ndarray,
    h0: np.ndarray,
    u: np.ndarray | None = None,
    tol: float = 1e-11,
    max_iter: int = 30,
) -> tuple[np.ndarray, np.ndarray]:
    """March the state equation forward with implicit Euler, Newton per step.

    Returns trajectories of shape (nt, n_v) and (nt, n_h); step k holds the
    solution at time (k+1)*dt.
    """
    dt, nt = params.dt, params.nt
    n_v, n_h = disc.n_v, disc.n_h
    v_traj = np.zeros((nt, n_v))
    h_traj = np.zeros((nt, n_h))
    m_lin = disc.M_vc + params.mu1 * dt * disc.K_c + disc.I_c

    v_prev, h_prev = v0.copy(), h0.copy()
    v_prev[disc.dirichlet] = 0.0
    for k in range(nt):
        vk, hk = v_prev.copy(), h_prev.copy()
        fu = dt * (disc.Mu_c @ u[k]) if u is not None else 0.0
        for it in range(max_iter):
            h_mat = disc.T_adv_c.contract("coeff", vk)
            g_mat = disc.T_div_c.contract("coeff", vk)
            rv = m_lin @ vk + params.mu2 * dt * (h_mat @ vk) \
                + dt * (disc.D_c @ hk) - disc.M_vc @ v_prev - fu
            rh = disc.ops.M_h @ (hk - h_prev) + dt * (g_mat @ hk)
            res = np.concatenate([rv, rh])
            if np.linalg.norm(res) <= tol * max(1.0, np.linalg.norm(disc.ops.M_h @ h_prev)):
                break
            hbar = disc.T_adv_c.contract("trial", vk)
            f_mat = disc.T_div_c.contract("trial", hk)
            jac = sp.bmat([
                [m_lin + params.mu2 * dt * (h_mat + hbar), dt * disc.D_c],
                [dt * f_mat, disc.ops.M_h + dt * g_mat],
            ], format="csc")
            delta = spla.splu(jac).solve(-res)
            vk += delta[:n_v]
            hk += delta[n_v:]
        else:
            raise SolverError(f"forward step {k + 1} did not converge", residual_norm=float(np.linalg.norm(res)))
        v_traj[k], h_traj[k] = vk, hk
        v_prev, h_prev = vk, hk
    return v_traj, h_traj


def desired_profile(
    disc: Discretization, params: Parameters,
) -> tuple[np.ndarray, np.ndarray]:
    """Tracked trajectory: mu3 times the free spreading of the reference mound."""
    h0d = desired_initial_height(disc.mesh)
    v0d = np.zeros(disc.n_v)
    vb, hb = uncontrolled_forward_solve(disc, params, v0d, h0d)
    return params.mu3 * vb, params.mu3 * hb


def make_problem_data(
    disc: Discretization,
    params: Parameters,
    base: tuple[np.ndarray, np.ndarray] | None = None,
) -> ProblemData:
    """Assemble the data of one tracking problem.

    If `base` (an unscaled desired trajectory) is given it is scaled by mu3;
    otherwise the desired trajectory is regenerated at this parameter.
    """
    v0, h0 = initial_conditions(disc.mesh)
    if base is None:
        vd, hd = desired_profile(disc, params)
    else:
        vd, hd = params.mu3 * base[0], params.mu3 * base[1]
    return ProblemData(v0=v0, h0=h0, vd=vd, hd=hd)


def _step_fields(w: SpaceTimeVector):
    return (w.block("v"), w.block("h"), w.block("u"), w.block("chi"), w.block("lam"))


def assemble_residual(
    disc: Discretization, w: SpaceTimeVector, params: Parameters, data: ProblemData,
) -> np.ndarray:
    """Nonlinear optimality residual, rows ordered like the unknown blocks."""
    dt, nt = params.dt, params.nt
    v, h, u, chi, lam = _step_fields(w)
    m_lin = (disc.M_vc + params.mu1 * dt * disc.K_c + disc.I_c).tocsr()

    r_v = np.zeros_like(v)
    r_h = np.zeros_like(h)
    r_u = np.zeros_like(u)
    r_chi = np.zeros_like(chi)
    r_lam = np.zeros_like(lam)

    for k in range(nt):
        h_mat = disc.T_adv_c.contract("coeff", v[k])
        hbar = disc.T_adv_c.contract("trial", v[k])
        g_mat = disc.T_div_c.contract("coeff", v[k])
        f_mat = disc.T_div_c.contract("trial", h[k])

        # adjoint rows = gradient of the Lagrangian w.r.t. state
        r_v[k] = dt * (disc.M_vc @ (v[k] - data.vd[k])) \
            + m_lin.T @ chi[k] + params.mu2 * dt * ((h_mat + hbar).T @ chi[k]) \
            + dt * (f_mat.T @ lam[k])
        r_h[k] = dt * (disc.ops.M_h @ (h[k] - data.hd[k])) \
            + dt * (disc.D_c.T @ chi[k]) + disc.ops.M_h @ lam[k] \
            + dt * (g_mat.T @ lam[k])
        if k + 1 < nt:
            r_v[k] -= disc.M_vc @ chi[k + 1]
            r_h[k] -= disc.ops.M_h @ lam[k + 1]

        r_u[k] = params.alpha * dt * (disc.ops.M_u @ u[k]) - dt * (disc.Mu_c.T @ chi[k])

        # state rows
        r_chi[k] = m_lin @ v[k] + params.mu2 * dt * (h_mat @ v[k]) \
            + dt * (disc.D_c @ h[k]) - dt * (disc.Mu_c @ u[k])
        r_lam[k] = disc.ops.M_h @ h[k] + dt * (g_mat @ h[k])
        if k == 0:
            r_chi[k] -= disc.M_vc @ data.v0
            r_lam[k] -= disc.ops.M_h @ data.h0
        else:
            r_chi[k] -= disc.M_vc @ v[k - 1]
            r_lam[k] -= disc.ops.M_h @ h[k - 1]

    return np.concatenate([b.ravel() for b in (r_v, r_h, r_u, r_chi, r_lam)])


def _bidiagonal_chain(diag_blocks, sub_block) -> sp.csr_matrix:
    nt = len(diag_blocks)
    grid = [[None] * nt for _ in range(nt)]
    for k in range(nt):
        grid[k][k] = diag_blocks[k]
        if k > 0:
            grid[k][k - 1] = -sub_block
    return sp.bmat(grid, format="csr")


def assemble_jacobian(
    disc: Discretization, w: SpaceTimeVector, params: Parameters,
) -> sp.csr_matrix:
    """Linearized optimality system [[A, B^T], [B, 0]]."""
    dt, nt = params.dt, params.nt
    v, h, _, chi, lam = _step_fields(w)
    m_lin = (disc.M_vc + params.mu1 * dt * disc.K_c + disc.I_c).tocsr()
    eye = sp.identity(nt, format="csr")

    a_vv, a_vh, a_hv = [], [], []
    b_vv_diag, b_hv, b_hh_diag = [], [], []
    for k in range(nt):
        h_mat = disc.T_adv_c.contract("coeff", v[k])
        hbar = disc.T_adv_c.contract("trial", v[k])
        g_mat = disc.T_div_c.contract("coeff", v[k])
        f_mat = disc.T_div_c.contract("trial", h[k])
        ca = disc.T_adv_c.contract("test", chi[k])
        cd = disc.T_div_c.contract("test", lam[k])

        a_vv.append(dt * disc.M_vc + params.mu2 * dt * (ca + ca.T))
        a_vh.append(dt * cd.T)
        a_hv.append(dt * cd)
        b_vv_diag.append(m_lin + params.mu2 * dt * (h_mat + hbar))
        b_hv.append(dt * f_mat)
        b_hh_diag.append(disc.ops.M_h + dt * g_mat)

    a_vv = sp.block_diag(a_vv, format="csr")
    a_vh = sp.block_diag(a_vh, format="csr")
    a_hv = sp.block_diag(a_hv, format="csr")
    a_hh = sp.kron(eye, dt * disc.ops.M_h, format="csr")
    a_uu = sp.kron(eye, params.alpha * dt * disc.ops.M_u, format="csr")

    b_vv = _bidiagonal_chain(b_vv_diag, disc.M_vc)
    b_vh = sp.kron(eye, dt * disc.D_c, format="csr")
    b_vu = sp.kron(eye, -dt * disc.Mu_c, format="csr")
    b_hv = sp.block_diag(b_hv, format="csr")
    b_hh = _bidiagonal_chain(b_hh_diag, disc.ops.M_h)

    return sp.bmat([
        [a_vv, a_vh, None, b_vv.T, b_hv.T],
        [a_hv, a_hh, None, b_vh.T, b_hh.T],
        [None, None, a_uu, b_vu.T, None],
        [b_vv, b_vh, b_vu, None, None],
        [b_hv, b_hh, None, None, None],
    ], format="csr")


def initial_guess(
    disc: Discretization, params: Parameters, data: ProblemData,
) -> SpaceTimeVector:
    """Uncontrolled state trajectory, zeros for control and adjoints."""
    layout = disc.layout(params.nt)
    w = SpaceTimeVector.zeros(layout)
    v_traj, h_traj = uncontrolled_forward_solve(disc, params, data.v0, data.h0)
    w.block("v")[:] = v_traj
    w.block("h")[:] = h_traj
    return w


def truth_newton_solve(
    disc: Discretization,
    params: Parameters,
    data: ProblemData,
    init: SpaceTimeVector | None = None,
    tol_abs: float = 1e-10,
    tol_rel: float = 1e-8,
    max_iter: int = 20,
) -> tuple[SpaceTimeVector, dict]:
    """Newton on the monolithic system with a sparse direct solver per step.

    Plain Newton with a halving damping fallback that activates only when the
    residual norm would increase.
    """
    w = init.copy() if init is not None else initial_guess(disc, params, data)
    r = assemble_residual(disc, w, params, data)
    rnorm = np.linalg.norm(r)
    tol = tol_abs + tol_rel * rnorm
    history = [rnorm]

    for it in range(max_iter):
        if rnorm <= tol:
            break
        jac = assemble_jacobian(disc, w, params).tocsc()
        try:
            lu = spla.splu(jac)
        except RuntimeError as exc:
            raise SolverError(f"factorization failed at iteration {it}: {exc}",
                              residual_norm=rnorm, history=history) from exc
        delta = lu.solve(-r)
        step = 1.0
        for _ in range(8):
            trial = SpaceTimeVector(w.layout, w.data + step * delta)
            r_trial = assemble_residual(disc, trial, params, data)
            rn_trial = np.linalg.norm(r_trial)
            if rn_trial < rnorm or step < 1e-2:
                break
            step *= 0.5
        w, r, rnorm = trial, r_trial, rn_trial
        history.append(rnorm)
    else:
        raise SolverError(
            f"Newton did not converge in {max_iter} iterations (residual {rnorm:.3e})",
            residual_norm=rnorm, history=history)

    if w.block("h").min() <= 0.0:
        warnings.warn("water height is not positive everywhere at the optimum", RuntimeWarning)
    return w, {"iterations": len(history) - 1, "residual_norms": history}


def evaluate_cost(
    disc: Discretization, w: SpaceTimeVector, params: Parameters, data: ProblemData,
) -> float:
    """Tracking-plus-penalty cost, time-integrated with the Euler weights."""
    dt = params.dt
    v, h, u = w.block("v"), w.block("h"), w.block("u")
    total = 0.0
    for k in range(params.nt):
        dv = v[k] - data.vd[k]
        dh = h[k] - data.hd[k]
        total += 0.5 * dt * (dv @ (disc.ops.M_v @ dv) + dh @ (disc.ops.M_h @ dh))
        total += 0.5 * params.alpha * dt * (u[k] @ (disc.ops.M_u @ u[k]))
    return total


def dump_solution_csv(disc: Discretization, w: SpaceTimeVector, prefix: str) -> list[str]:
    """One CSV per time step: x,y,vx,vy,h,ux,uy,chix,chiy,lambda per vertex."""
    v, h, u, chi, lam = _step_fields(w)
    paths = []
    xy = disc.mesh.vertices
    for k in range(w.layout.nt):
        path = f"{prefix}_t{k + 1}.csv"
        vv = v[k].reshape(-1, 2)
        uu = u[k].reshape(-1, 2)
        cc = chi[k].reshape(-1, 2)
        with open(path, "w") as fh:
            fh.write("x,y,vx,vy,h,ux,uy,chix,chiy,lambda\n")
            for m in range(disc.mesh.n_vertices):
                row = (xy[m, 0], xy[m, 1], vv[m, 0], vv[m, 1], h[k][m],
                       uu[m, 0], uu[m, 1], cc[m, 0], cc[m, 1], lam[k][m])
                fh.write(",".join(repr(float(x)) for x in row) + "\n")
        paths.append(path)
    return paths
