"""Partitioned proper orthogonal decomposition of space-time snapshots.

Each converged truth solve contributes one space-time column per variable;
the five variables get independent PODs in Δt-weighted spatial norms (H1-type
for the velocities and their adjoints, L2 for elevation, control and the
elevation adjoint).  Basis vectors come from the usual correlation-matrix
eigenproblem, rescaled by 1/sqrt(N_max * theta_n), then re-orthonormalized
with modified Gram-Schmidt to clean up rounding in near-degenerate tails.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from . import spacetime as st
from .operators import DimensionError

EIG_CUTOFF = 1e-12


class BasisDeficiencyError(RuntimeError):
    def __init__(self, message, retainable=None):
        super().__init__(message)
        self.retainable = retainable


def sample_parameters(n: int, seed: int, box=st.PARAMETER_BOX) -> np.ndarray:
    """n uniform draws from the admissible parameter box, shape (n, 3)."""
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    return lo + (hi - lo) * rng.random((n, len(box)))


@dataclass(frozen=True)
class SpaceTimeIP:
    """Inner product Σ_k Δt (a_k, X b_k) on stacked trajectories."""

    x: sp.csr_matrix
    dt: float
    nt: int

    def apply(self, s: np.ndarray) -> np.ndarray:
        """Weight a stacked trajectory (or a matrix of columns) by Δt·blockdiag(X)."""
        squeeze = s.ndim == 1
        n = self.x.shape[0]
        if s.shape[0] != self.nt * n:
            raise DimensionError(
                f"trajectory length {s.shape[0]} != nt*n = {self.nt * n}")
        s3 = s.reshape(self.nt, n, -1)
        out = np.empty_like(s3, dtype=float)
        for t in range(self.nt):
            out[t] = self.dt * (self.x @ s3[t])
        out = out.reshape(s.shape[0], -1)
        return out[:, 0] if squeeze else out

    def dot(self, a: np.ndarray, b: np.ndarray) -> float:
        if a.shape != b.shape:
            raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
        return float(a @ self.apply(b))

    def norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(max(self.dot(a, a), 0.0)))

    def gram(self, s: np.ndarray) -> np.ndarray:
        return s.T @ self.apply(s)


def variable_ip(disc: st.Discretization, var: str, params: st.Parameters) -> SpaceTimeIP:
    return SpaceTimeIP(x=disc.ip_matrix(var), dt=params.dt, nt=params.nt)


def correlation_matrix(s: np.ndarray, ip: SpaceTimeIP) -> np.ndarray:
    """C_ml = (1/N_max)(s_m, s_l)_ip, symmetrized against rounding."""
    if s.ndim != 2 or s.shape[1] < 1:
        raise DimensionError("snapshot matrix needs at least one column")
    c = ip.gram(s) / s.shape[1]
    return 0.5 * (c + c.T)


def pod_eigendecompose(
    c: np.ndarray, n: int, cutoff: float = EIG_CUTOFF,
) -> tuple[np.ndarray, np.ndarray]:
    """Top-n eigenpairs of the correlation matrix, descending.

    Pairs with theta < cutoff * theta_1 are unusable (the 1/sqrt(theta) basis
    scaling would blow up); asking for more than the retainable count raises.
    """
    if n < 1 or n > c.shape[0]:
        raise DimensionError(f"need 1 <= n <= {c.shape[0]}, got {n}")
    theta, vecs = la.eigh(c)
    order = np.argsort(theta)[::-1]
    theta, vecs = theta[order], vecs[:, order]
    retainable = int(np.sum(theta > cutoff * max(theta[0], 0.0)))
    if retainable < n:
        raise BasisDeficiencyError(
            f"only {retainable} modes above cutoff, {n} requested", retainable=retainable)
    return theta[:n].copy(), vecs[:, :n].copy()


def gram_schmidt(z: np.ndarray, ip: SpaceTimeIP, passes: int = 2) -> np.ndarray:
    """Modified Gram-Schmidt in the ip inner product (in place on a copy)."""
    z = np.array(z, dtype=float)
    for _ in range(passes):
        for j in range(z.shape[1]):
            wj = ip.apply(z[:, j])
            nrm = np.sqrt(max(float(z[:, j] @ wj), 0.0))
            if nrm < 1e-14:
                raise BasisDeficiencyError(f"column {j} numerically zero in Gram-Schmidt")
            z[:, j] /= nrm
            if j + 1 < z.shape[1]:
                coeffs = z[:, j] @ ip.apply(z[:, j + 1:])
                z[:, j + 1:] -= np.outer(z[:, j], coeffs)
    return z


def build_basis(
    s: np.ndarray, ip: SpaceTimeIP, theta: np.ndarray, vecs: np.ndarray,
) -> np.ndarray:
    """POD modes zeta_n = S x_n / sqrt(N_max theta_n), re-orthonormalized."""
    n_max = s.shape[1]
    z = (s @ vecs) / np.sqrt(n_max * theta)[None, :]
    return gram_schmidt(z, ip)


def pod_basis(
    s: np.ndarray, ip: SpaceTimeIP, n: int, cutoff: float = EIG_CUTOFF,
) -> tuple[np.ndarray, np.ndarray]:
    """Convenience wrapper: returns (basis with n columns, full spectrum)."""
    c = correlation_matrix(s, ip)
    theta_all = np.sort(la.eigvalsh(c))[::-1]
    theta, vecs = pod_eigendecompose(c, n, cutoff)
    return build_basis(s, ip, theta, vecs), theta_all


# ---------------------------------------------------------------------------
# snapshot collection

_WORKER_DISC: dict[tuple, st.Discretization] = {}


def _solve_one(mesh_cfg, params: st.Parameters, base):
    key = (mesh_cfg, params.g)
    disc = _WORKER_DISC.get(key)
    if disc is None:
        disc = st.Discretization(mesh_cfg, g=params.g)
        _WORKER_DISC[key] = disc
    data = st.make_problem_data(disc, params, base=base)
    w, info = st.truth_newton_solve(disc, params, data)
    return {var: w.block(var).ravel().copy() for var in st.VARIABLES}, info


def collect_snapshots(
    disc: st.Discretization,
    params_list: list[st.Parameters],
    base=None,
    jobs: int = 1,
):
    """Truth-solve every training parameter and stack the space-time columns.

    Returns (snapshots dict var -> (nt*n_var, n_ok), solved parameter list,
    failures list of (params, message)).  Failed solves are excluded, not
    fatal: a bad corner of the parameter box should not abort training.
    """
    results, solved, failures = [], [], []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(_solve_one, disc.mesh_cfg, p, base) for p in params_list]
            for p, fut in zip(params_list, futs):
                try:
                    cols, _ = fut.result()
                except st.SolverError as exc:
                    failures.append((p, str(exc)))
                    continue
                results.append(cols)
                solved.append(p)
    else:
        for p in params_list:
            try:
                cols, _ = _solve_one(disc.mesh_cfg, p, base)
            except st.SolverError as exc:
                failures.append((p, str(exc)))
                continue
            results.append(cols)
            solved.append(p)
    if not results:
        raise BasisDeficiencyError("every training solve failed", retainable=0)
    snapshots = {
        var: np.column_stack([cols[var] for cols in results]) for var in st.VARIABLES
    }
    return snapshots, solved, failures


def write_eigs_csv(path, spectra: dict[str, np.ndarray]) -> None:
    """Eigenvalue report: variable,n,theta_n,cumulative_energy."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable", "n", "theta_n", "cumulative_energy"])
        for var, theta in spectra.items():
            total = float(np.sum(theta))
            cum = 0.0
            for n, t in enumerate(theta, start=1):
                cum += float(t)
                writer.writerow([var, n, repr(float(t)), repr(cum / total)])
