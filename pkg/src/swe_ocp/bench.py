"""Error metrics, error-vs-N sweeps, speedup measurement, report files.

Errors are relative space-time norms (H1-type in space for the velocities and
their adjoints, L2 for elevation, control, and the elevation adjoint), i.e.
the same Δt-weighted quantities used as POD inner products.  Timings compare
one full-order Newton solve against one reduced online solve; the offline
phase is excluded by the usual reduced-order-modeling accounting.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import pod as podmod
from . import rom as rommod
from . import spacetime as st
from .operators import DimensionError

_ABS_FLOOR = 1e-14


def relative_errors(
    disc: st.Discretization,
    params: st.Parameters,
    truth: st.SpaceTimeVector,
    approx: st.SpaceTimeVector,
) -> dict[str, float]:
    """Per-variable relative space-time errors (absolute when truth is ~0)."""
    if truth.layout != approx.layout:
        raise DimensionError("space-time layouts differ")
    out = {}
    for var in st.VARIABLES:
        ip = podmod.variable_ip(disc, var, params)
        diff = approx.block(var).ravel() - truth.block(var).ravel()
        denom = ip.norm(truth.block(var).ravel())
        err = ip.norm(diff)
        out[var] = err / denom if denom >= _ABS_FLOOR else err
    return out


def mass_conservation_check(disc: st.Discretization, h_traj: np.ndarray,
                            h0: np.ndarray) -> float:
    """max_k |integral(h_k) - integral(h_0)| / |integral(h_0)|."""
    ones = np.ones(disc.n_h)
    m0 = float(ones @ (disc.ops.M_h @ h0))
    masses = h_traj @ (disc.ops.M_h @ ones)
    return float(np.max(np.abs(masses - m0)) / abs(m0))


def lifted_cost(disc: st.Discretization, params: st.Parameters,
                data: st.ProblemData, u_traj: np.ndarray) -> float:
    """Cost of the feasible point induced by a control trajectory.

    The state equation is re-solved under u_traj, so the returned cost is
    attained by an admissible state/control pair and can never undercut the
    full-order optimum (up to solver tolerance).
    """
    v_traj, h_traj = st.uncontrolled_forward_solve(disc, params, data.v0,
                                                   data.h0, u=u_traj)
    w = st.SpaceTimeVector.zeros(disc.layout(params.nt))
    w.block("v")[:] = v_traj
    w.block("h")[:] = h_traj
    w.block("u")[:] = u_traj
    return st.evaluate_cost(disc, w, params, data)


@dataclass
class ErrorReport:
    """Mean relative errors per variable per basis size, plus raw per-point data."""

    n_list: list[int]
    mean_errors: dict[int, dict[str, float]]
    point_errors: dict[int, list[dict[str, float]]]
    failures: list[tuple[st.Parameters, str]] = field(default_factory=list)
    costs: dict[int, list[tuple[float, float]]] = field(default_factory=dict)


def error_sweep(
    disc: st.Discretization,
    rop: rommod.RomOperators,
    bases: rommod.AggregatedBases,
    base_profile,
    test_params: list[st.Parameters],
    n_list: list[int],
    truths: list[st.SpaceTimeVector] | None = None,
) -> ErrorReport:
    """Mean relative errors over a test set for each basis size in n_list.

    Truth solutions can be passed in to avoid re-solving; failed points are
    recorded and skipped, not fatal.
    """
    layout = disc.layout(rop.nt)
    solved, failures = [], []
    if truths is None:
        truths = []
        for p in test_params:
            data = st.make_problem_data(disc, p, base=base_profile)
            try:
                w, _ = st.truth_newton_solve(disc, p, data)
            except st.SolverError as exc:
                failures.append((p, f"truth: {exc}"))
                continue
            truths.append(w)
            solved.append((p, data))
    else:
        for p, w in zip(test_params, truths):
            data = st.make_problem_data(disc, p, base=base_profile)
            solved.append((p, data))

    mean_errors, point_errors, costs = {}, {}, {}
    for n in n_list:
        pts, cost_rows = [], []
        for (p, data), w_truth in zip(solved, truths):
            try:
                y, _ = rommod.online_solve(p, rop, n=n)
            except st.SolverError as exc:
                failures.append((p, f"online n={n}: {exc}"))
                continue
            w_rom = rommod.reconstruct(y, bases, layout)
            pts.append(relative_errors(disc, p, w_truth, w_rom))
            cost_rows.append((st.evaluate_cost(disc, w_truth, p, data),
                              lifted_cost(disc, p, data, w_rom.block("u"))))
        if not pts:
            raise st.SolverError(f"no test point succeeded at n={n}")
        mean_errors[n] = {var: float(np.mean([e[var] for e in pts])) for var in st.VARIABLES}
        point_errors[n] = pts
        costs[n] = cost_rows
    return ErrorReport(n_list=list(n_list), mean_errors=mean_errors,
                       point_errors=point_errors, failures=failures, costs=costs)


def measure_speedup(
    disc: st.Discretization,
    rop: rommod.RomOperators,
    params_list: list[st.Parameters],
    base_profile,
    n_list: list[int],
    truth_seconds: float | None = None,
    repeats: int = 3,
) -> list[dict[str, float]]:
    """Wall-clock truth vs online times, averaged over params_list, per n.

    A pre-measured truth time can be supplied to avoid re-solving.
    """
    if truth_seconds is None:
        times = []
        for p in params_list:
            data = st.make_problem_data(disc, p, base=base_profile)
            t0 = time.perf_counter()
            st.truth_newton_solve(disc, p, data)
            times.append(time.perf_counter() - t0)
        truth_seconds = float(np.mean(times))

    rows = []
    for n in n_list:
        online_times = []
        for p in params_list:
            best = np.inf
            for _ in range(repeats):
                t0 = time.perf_counter()
                rommod.online_solve(p, rop, n=n)
                best = min(best, time.perf_counter() - t0)
            online_times.append(best)
        online_seconds = float(np.mean(online_times))
        rows.append({"N": n, "truth_s": truth_seconds, "online_s": online_seconds,
                     "speedup": truth_seconds / online_seconds})
    return rows


def write_errors_csv(path, report: ErrorReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["N", "err_v", "err_h", "err_u", "err_chi", "err_lambda"])
        for n in report.n_list:
            e = report.mean_errors[n]
            writer.writerow([n] + [repr(e[var]) for var in st.VARIABLES])


def write_timings_csv(path, rows: list[dict[str, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["N", "truth_s", "online_s", "speedup"])
        for row in rows:
            writer.writerow([row["N"], repr(row["truth_s"]),
                             repr(row["online_s"]), repr(row["speedup"])])
