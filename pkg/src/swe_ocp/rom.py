"""Aggregated reduced spaces, offline Galerkin projection, online Newton.

State and adjoint bases of the same physical field are aggregated into one
trial space (velocity block shared by v and chi, elevation block shared by h
and lambda), which is what keeps the reduced saddle-point system solvable.
Aggregated columns are interleaved one state/adjoint pair per mode before the
Gram-Schmidt sweep, so the first 2n columns of the size-N build span exactly
the size-n aggregate: one offline projection serves every n <= N by prefix
slicing.

The quadratic nonlinearities reduce exactly to two dense third-order tensors
(advection over the velocity basis, mass-flux over elevation x velocity), so
the online residual and Jacobian are assembled purely from reduced arrays.
A module-level counter tracks every full-order-sized operation; the online
solver is required to leave it untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from . import pod as podmod
from . import spacetime as st
from .geometry import ConfigurationError
from .operators import DimensionError

#: incremented by every operation that touches full-order-length data;
#: online_solve must not advance it (asserted in the test suite)
FULL_ORDER_OPS = [0]


def _touch_full_order(count: int = 1) -> None:
    FULL_ORDER_OPS[0] += count


@dataclass(frozen=True)
class AggregatedBases:
    """Space-time reduced bases: velocity block 2N columns, elevation block 2N,
    control N.  Velocity block serves both v and chi, elevation block both
    h and lambda."""

    z_v: np.ndarray      # (nt*n_v, 2N)
    z_h: np.ndarray      # (nt*n_h, 2N)
    z_u: np.ndarray      # (nt*n_u, N)
    nt: int

    @property
    def n_modes(self) -> int:
        return self.z_u.shape[1]

    @property
    def n_total(self) -> int:
        return 9 * self.n_modes

    def __post_init__(self):
        n = self.n_modes
        if self.z_v.shape[1] != 2 * n or self.z_h.shape[1] != 2 * n:
            raise ConfigurationError(
                f"aggregated blocks must have 2N={2*n} columns, got "
                f"{self.z_v.shape[1]} / {self.z_h.shape[1]}")


def _interleave(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty((a.shape[0], a.shape[1] + b.shape[1]))
    out[:, 0::2] = a
    out[:, 1::2] = b
    return out


def aggregate_spaces(
    disc: st.Discretization,
    params: st.Parameters,
    bases: dict[str, np.ndarray],
) -> AggregatedBases:
    """Merge the five POD bases into the three aggregated trial blocks.

    Interleaving before re-orthonormalization makes every 2n-column prefix
    span the n-mode aggregate, which the per-N online slicing relies on.
    """
    n_set = {bases[v].shape[1] for v in st.VARIABLES}
    if len(n_set) != 1:
        raise ConfigurationError(f"per-variable mode counts differ: {sorted(n_set)}")
    ip_v = podmod.variable_ip(disc, "v", params)
    ip_h = podmod.variable_ip(disc, "h", params)
    z_v = podmod.gram_schmidt(_interleave(bases["v"], bases["chi"]), ip_v)
    z_h = podmod.gram_schmidt(_interleave(bases["h"], bases["lam"]), ip_h)
    _touch_full_order()
    return AggregatedBases(z_v=z_v, z_h=z_h, z_u=bases["u"].copy(), nt=params.nt)


@dataclass
class RomOperators:
    """Parameter-independent reduced arrays; mu and dt enter only as scalars."""

    n_modes: int
    nt: int
    # reduced matrices, velocity block (2N, 2N)
    m_v: np.ndarray
    k_stiff: np.ndarray
    i_c: np.ndarray
    m_vshift: np.ndarray
    d_r: np.ndarray          # (2N, 2N) velocity x elevation
    m_vu: np.ndarray         # (2N, N) velocity x control
    # elevation block
    m_h: np.ndarray
    m_hshift: np.ndarray
    # control block
    m_u: np.ndarray          # (N, N)
    # dense reduced tensors (test, trial, coeff)
    r_adv: np.ndarray        # (2N, 2N, 2N)
    r_div: np.ndarray        # (2N, 2N, 2N): elevation, elevation, velocity
    # data vectors (unscaled desired base trajectory; multiplied by mu3 online)
    g_vd: np.ndarray         # (2N,)
    g_hd: np.ndarray         # (2N,)
    g_v0: np.ndarray         # (2N,)
    g_h0: np.ndarray         # (2N,)

    def sliced(self, n: int) -> "RomOperators":
        """Restriction to the leading n modes (prefix property of aggregation)."""
        if not (1 <= n <= self.n_modes):
            raise DimensionError(f"need 1 <= n <= {self.n_modes}, got {n}")
        if n == self.n_modes:
            return self
        m = 2 * n
        return RomOperators(
            n_modes=n, nt=self.nt,
            m_v=self.m_v[:m, :m], k_stiff=self.k_stiff[:m, :m],
            i_c=self.i_c[:m, :m], m_vshift=self.m_vshift[:m, :m],
            d_r=self.d_r[:m, :m], m_vu=self.m_vu[:m, :n],
            m_h=self.m_h[:m, :m], m_hshift=self.m_hshift[:m, :m],
            m_u=self.m_u[:n, :n],
            r_adv=self.r_adv[:m, :m, :m], r_div=self.r_div[:m, :m, :m],
            g_vd=self.g_vd[:m], g_hd=self.g_hd[:m],
            g_v0=self.g_v0[:m], g_h0=self.g_h0[:m],
        )

    def as_sections(self) -> dict[str, np.ndarray]:
        meta = np.array([float(self.n_modes), float(self.nt)])
        return {
            "meta": meta, "Mv": self.m_v, "Kst": self.k_stiff, "Ic": self.i_c,
            "Mvshift": self.m_vshift, "Dr": self.d_r, "Mvu": self.m_vu,
            "Mh": self.m_h, "Mhshift": self.m_hshift, "Mu": self.m_u,
            "Ra": self.r_adv, "Rd": self.r_div,
            "gvd": self.g_vd, "ghd": self.g_hd, "gv0": self.g_v0, "gh0": self.g_h0,
        }

    @classmethod
    def from_sections(cls, sections: dict[str, np.ndarray]) -> "RomOperators":
        meta = sections["meta"].ravel()
        vec = lambda k: sections[k].ravel()
        return cls(
            n_modes=int(meta[0]), nt=int(meta[1]),
            m_v=sections["Mv"], k_stiff=sections["Kst"], i_c=sections["Ic"],
            m_vshift=sections["Mvshift"], d_r=sections["Dr"], m_vu=sections["Mvu"],
            m_h=sections["Mh"], m_hshift=sections["Mhshift"], m_u=sections["Mu"],
            r_adv=sections["Ra"], r_div=sections["Rd"],
            g_vd=vec("gvd"), g_hd=vec("ghd"), g_v0=vec("gv0"), g_h0=vec("gh0"),
        )


def _steps(z: np.ndarray, nt: int) -> np.ndarray:
    """View an aggregated block as per-step slices (nt, n_spatial, cols)."""
    return z.reshape(nt, -1, z.shape[1])


def project_operators(
    disc: st.Discretization,
    bases: AggregatedBases,
    base_profile: tuple[np.ndarray, np.ndarray],
    data: st.ProblemData | None = None,
) -> RomOperators:
    """Offline Galerkin projection of every affine piece and both tensors.

    `base_profile` is the unscaled desired trajectory (scaled by mu3 online);
    `data` only supplies the initial condition (defaults to the standard one).
    """
    nt = bases.nt
    zv = _steps(bases.z_v, nt)
    zh = _steps(bases.z_h, nt)
    zu = _steps(bases.z_u, nt)
    m2, n1 = bases.z_v.shape[1], bases.z_u.shape[1]

    if data is None:
        v0, h0 = st.initial_conditions(disc.mesh)
    else:
        v0, h0 = data.v0, data.h0
    vdb, hdb = base_profile

    m_v = np.zeros((m2, m2)); k_st = np.zeros((m2, m2)); i_c = np.zeros((m2, m2))
    m_vsh = np.zeros((m2, m2)); d_r = np.zeros((m2, m2)); m_vu = np.zeros((m2, n1))
    m_h = np.zeros((m2, m2)); m_hsh = np.zeros((m2, m2)); m_u = np.zeros((n1, n1))
    r_adv = np.zeros((m2, m2, m2)); r_div = np.zeros((m2, m2, m2))
    g_vd = np.zeros(m2); g_hd = np.zeros(m2)

    for k in range(nt):
        m_v += zv[k].T @ (disc.M_vc @ zv[k])
        k_st += zv[k].T @ (disc.K_c @ zv[k])
        i_c += zv[k].T @ (disc.I_c @ zv[k])
        d_r += zv[k].T @ (disc.D_c @ zh[k])
        m_vu += zv[k].T @ (disc.Mu_c @ zu[k])
        m_h += zh[k].T @ (disc.ops.M_h @ zh[k])
        m_u += zu[k].T @ (disc.ops.M_u @ zu[k])
        if k >= 1:
            m_vsh += zv[k].T @ (disc.M_vc @ zv[k - 1])
            m_hsh += zh[k].T @ (disc.ops.M_h @ zh[k - 1])
        g_vd += zv[k].T @ (disc.M_vc @ vdb[k])
        g_hd += zh[k].T @ (disc.ops.M_h @ hdb[k])
        for g in range(m2):
            h_g = disc.T_adv_c.contract("coeff", zv[k][:, g])
            r_adv[:, :, g] += zv[k].T @ (h_g @ zv[k])
            g_mat = disc.T_div_c.contract("coeff", zv[k][:, g])
            r_div[:, :, g] += zh[k].T @ (g_mat @ zh[k])
    g_v0 = zv[0].T @ (disc.M_vc @ v0)
    g_h0 = zh[0].T @ (disc.ops.M_h @ h0)
    _touch_full_order()

    return RomOperators(
        n_modes=n1, nt=nt,
        m_v=m_v, k_stiff=k_st, i_c=i_c, m_vshift=m_vsh, d_r=d_r, m_vu=m_vu,
        m_h=m_h, m_hshift=m_hsh, m_u=m_u, r_adv=r_adv, r_div=r_div,
        g_vd=g_vd, g_hd=g_hd, g_v0=g_v0, g_h0=g_h0,
    )


@dataclass
class ReducedVector:
    """Coefficients [v_N; h_N; u_N; chi_N; lam_N] of lengths [2n,2n,n,2n,2n]."""

    n_modes: int
    data: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.data is None:
            self.data = np.zeros(9 * self.n_modes)
        if self.data.shape != (9 * self.n_modes,):
            raise DimensionError(
                f"reduced vector needs length {9 * self.n_modes}, got {self.data.shape}")

    def block_slice(self, var: str) -> slice:
        n = self.n_modes
        bounds = {"v": (0, 2 * n), "h": (2 * n, 4 * n), "u": (4 * n, 5 * n),
                  "chi": (5 * n, 7 * n), "lam": (7 * n, 9 * n)}
        lo, hi = bounds[var]
        return slice(lo, hi)

    def block(self, var: str) -> np.ndarray:
        return self.data[self.block_slice(var)]


def reduced_system(
    y: ReducedVector, params: st.Parameters, rop: RomOperators,
) -> tuple[np.ndarray, np.ndarray]:
    """Reduced residual and Jacobian, assembled from reduced arrays only.

    The Jacobian keeps the saddle shape [[A, B^T], [B, 0]] with the top-right
    block taken as the literal transpose of the assembled bottom-left block.
    """
    if y.n_modes != rop.n_modes:
        raise DimensionError(f"vector has {y.n_modes} modes, operators {rop.n_modes}")
    dt, mu1, mu2, mu3, alpha = params.dt, params.mu1, params.mu2, params.mu3, params.alpha
    yv, yh, yu = y.block("v"), y.block("h"), y.block("u")
    yc, yl = y.block("chi"), y.block("lam")
    ra, rd = rop.r_adv, rop.r_div

    m_lin = rop.m_v + mu1 * dt * rop.k_stiff + rop.i_c

    h_r = ra @ yv                              # [a,b] = sum_c Ra[a,b,c] yv[c]
    hbar_r = np.einsum("abc,b->ac", ra, yv)
    ca_r = np.einsum("abc,a->bc", ra, yc)
    g_r = rd @ yv
    f_r = np.einsum("abc,b->ac", rd, yh)
    cd_r = np.einsum("abc,a->bc", rd, yl)

    b_vv = m_lin - rop.m_vshift + mu2 * dt * (h_r + hbar_r)
    b_hh = rop.m_h - rop.m_hshift + dt * g_r

    r1 = dt * (rop.m_v @ yv - mu3 * rop.g_vd) + b_vv.T @ yc + dt * (f_r.T @ yl)
    r2 = dt * (rop.m_h @ yh - mu3 * rop.g_hd) + dt * (rop.d_r.T @ yc) + b_hh.T @ yl
    r3 = alpha * dt * (rop.m_u @ yu) - dt * (rop.m_vu.T @ yc)
    r4 = m_lin @ yv - rop.m_vshift @ yv + mu2 * dt * (h_r @ yv) \
        + dt * (rop.d_r @ yh) - dt * (rop.m_vu @ yu) - rop.g_v0
    r5 = rop.m_h @ yh - rop.m_hshift @ yh + dt * (g_r @ yh) - rop.g_h0
    residual = np.concatenate([r1, r2, r3, r4, r5])

    n, m = rop.n_modes, 2 * rop.n_modes
    a_vv = dt * rop.m_v + mu2 * dt * (ca_r + ca_r.T)
    a_vh = dt * cd_r.T
    a_uu = alpha * dt * rop.m_u
    b = np.zeros((4 * n, 5 * n))
    b[:m, :m] = b_vv
    b[:m, m:2 * m] = dt * rop.d_r
    b[:m, 2 * m:] = -dt * rop.m_vu
    b[m:, :m] = dt * f_r
    b[m:, m:2 * m] = b_hh

    a = np.zeros((5 * n, 5 * n))
    a[:m, :m] = a_vv
    a[:m, m:2 * m] = a_vh
    a[m:2 * m, :m] = a_vh.T
    a[m:2 * m, m:2 * m] = dt * rop.m_h
    a[2 * m:, 2 * m:] = a_uu

    jac = np.zeros((9 * n, 9 * n))
    jac[:5 * n, :5 * n] = a
    jac[:5 * n, 5 * n:] = b.T
    jac[5 * n:, :5 * n] = b
    return residual, jac


def online_solve(
    params: st.Parameters,
    rop: RomOperators,
    n: int | None = None,
    init: ReducedVector | None = None,
    tol_abs: float = 1e-11,
    tol_rel: float = 1e-9,
    max_iter: int = 30,
) -> tuple[ReducedVector, dict]:
    """Dense Newton on the 9n x 9n reduced optimality system."""
    if n is not None:
        rop = rop.sliced(n)
    y = init if init is not None else ReducedVector(rop.n_modes)
    y = ReducedVector(rop.n_modes, y.data.copy())
    r, jac = reduced_system(y, params, rop)
    rnorm = np.linalg.norm(r)
    tol = tol_abs + tol_rel * rnorm
    history = [rnorm]
    for _ in range(max_iter):
        if rnorm <= tol:
            break
        try:
            delta = la.solve(jac, -r)
        except la.LinAlgError as exc:
            raise st.SolverError(f"reduced Jacobian singular: {exc}",
                                 residual_norm=rnorm, history=history) from exc
        step = 1.0
        for _ in range(10):
            trial = ReducedVector(rop.n_modes, y.data + step * delta)
            r_t, j_t = reduced_system(trial, params, rop)
            rn_t = np.linalg.norm(r_t)
            if rn_t < rnorm or step < 1e-3:
                break
            step *= 0.5
        y, r, jac, rnorm = trial, r_t, j_t, rn_t
        history.append(rnorm)
    else:
        raise st.SolverError(
            f"reduced Newton did not converge (residual {rnorm:.3e})",
            residual_norm=rnorm, history=history)
    return y, {"iterations": len(history) - 1, "residual_norms": history}


def reconstruct(
    y: ReducedVector, bases: AggregatedBases, layout: st.Layout,
) -> st.SpaceTimeVector:
    """Lift reduced coefficients to a full-order space-time vector Z y."""
    n = y.n_modes
    m = 2 * n
    if bases.n_modes < n:
        raise DimensionError(f"bases hold {bases.n_modes} modes, vector needs {n}")
    w = st.SpaceTimeVector.zeros(layout)
    w.block("v")[:] = (bases.z_v[:, :m] @ y.block("v")).reshape(layout.nt, -1)
    w.block("h")[:] = (bases.z_h[:, :m] @ y.block("h")).reshape(layout.nt, -1)
    w.block("u")[:] = (bases.z_u[:, :n] @ y.block("u")).reshape(layout.nt, -1)
    w.block("chi")[:] = (bases.z_v[:, :m] @ y.block("chi")).reshape(layout.nt, -1)
    w.block("lam")[:] = (bases.z_h[:, :m] @ y.block("lam")).reshape(layout.nt, -1)
    _touch_full_order()
    return w


def project(
    w: st.SpaceTimeVector,
    bases: AggregatedBases,
    disc: st.Discretization,
    params: st.Parameters,
    n: int | None = None,
) -> ReducedVector:
    """Orthogonal projection of a full-order vector onto the reduced space."""
    n = n if n is not None else bases.n_modes
    m = 2 * n
    ip_v = podmod.variable_ip(disc, "v", params)
    ip_h = podmod.variable_ip(disc, "h", params)
    ip_u = podmod.variable_ip(disc, "u", params)
    y = ReducedVector(n)
    y.block("v")[:] = bases.z_v[:, :m].T @ ip_v.apply(w.block("v").ravel())
    y.block("chi")[:] = bases.z_v[:, :m].T @ ip_v.apply(w.block("chi").ravel())
    y.block("h")[:] = bases.z_h[:, :m].T @ ip_h.apply(w.block("h").ravel())
    y.block("lam")[:] = bases.z_h[:, :m].T @ ip_h.apply(w.block("lam").ravel())
    y.block("u")[:] = bases.z_u[:, :n].T @ ip_u.apply(w.block("u").ravel())
    _touch_full_order()
    return y
