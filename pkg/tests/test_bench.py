import csv

import numpy as np
import pytest

from swe_ocp import bench as benchmod
from swe_ocp import rom as rommod
from swe_ocp import spacetime as st
from swe_ocp.operators import DimensionError


def test_relative_errors_identities(tiny):
    p = tiny.test_params[0]
    w = tiny.test_truths[0]
    zero = st.SpaceTimeVector.zeros(tiny.layout)
    errs = benchmod.relative_errors(tiny.disc, p, w, w)
    assert all(v == 0.0 for v in errs.values())
    errs = benchmod.relative_errors(tiny.disc, p, w, zero)
    for var in st.VARIABLES:
        assert abs(errs[var] - 1.0) < 1e-12
    # scaling invariance
    c = 7.0
    wc = st.SpaceTimeVector(tiny.layout, c * w.data)
    approx = st.SpaceTimeVector(tiny.layout, w.data + 0.01 * np.ones(tiny.layout.total))
    approx_c = st.SpaceTimeVector(tiny.layout, c * approx.data)
    e1 = benchmod.relative_errors(tiny.disc, p, w, approx)
    e2 = benchmod.relative_errors(tiny.disc, p, wc, approx_c)
    for var in st.VARIABLES:
        assert abs(e1[var] - e2[var]) < 1e-13 * max(1.0, e1[var])
    with pytest.raises(DimensionError):
        other = st.SpaceTimeVector.zeros(tiny.disc.layout(tiny.ref.nt + 1))
        benchmod.relative_errors(tiny.disc, p, w, other)


def test_mass_check_constant_state(tiny):
    h0 = np.full(tiny.disc.n_h, 0.4)
    traj = np.tile(h0, (tiny.ref.nt, 1))
    assert benchmod.mass_conservation_check(tiny.disc, traj, h0) == 0.0


@pytest.fixture(scope="module")
def report(tiny):
    n_list = [1, 2, tiny.n_retained]
    return benchmod.error_sweep(tiny.disc, tiny.rop, tiny.agg, tiny.base,
                                tiny.test_params, n_list, truths=tiny.test_truths)


def test_error_sweep_means_match_points(tiny, report):
    for n in report.n_list:
        for var in st.VARIABLES:
            mean = np.mean([e[var] for e in report.point_errors[n]])
            assert abs(report.mean_errors[n][var] - mean) < 1e-14


def test_error_sweep_decay_and_span(tiny, report):
    full = tiny.n_retained
    for var in st.VARIABLES:
        assert report.mean_errors[full][var] <= 1.1 * report.mean_errors[1][var]


def test_cost_domination(tiny, report):
    full = tiny.n_retained
    for (cost_truth, cost_rom) in report.costs[full]:
        assert cost_rom >= cost_truth - 1e-8
    for p, data, w0, w in zip(tiny.test_params, tiny.test_data,
                              tiny.test_inits, tiny.test_truths):
        assert st.evaluate_cost(tiny.disc, w, p, data) \
            <= st.evaluate_cost(tiny.disc, w0, p, data) + 1e-12


def test_lifted_cost_identities(tiny):
    p = tiny.test_params[0]
    data = tiny.test_data[0]
    w = tiny.test_truths[0]
    w0 = tiny.test_inits[0]
    c_truth = st.evaluate_cost(tiny.disc, w, p, data)
    # re-solving under the optimal control recovers the optimal cost
    c_lift = benchmod.lifted_cost(tiny.disc, p, data, w.block("u"))
    assert abs(c_lift - c_truth) < 1e-8 * max(c_truth, 1.0)
    assert c_lift >= c_truth - 1e-8
    # zero control reproduces the uncontrolled (feasible initial-guess) cost
    zero_u = np.zeros_like(w.block("u"))
    c_zero = benchmod.lifted_cost(tiny.disc, p, data, zero_u)
    assert abs(c_zero - st.evaluate_cost(tiny.disc, w0, p, data)) \
        < 1e-10 * max(c_zero, 1.0)


def test_csv_outputs(tmp_path, tiny, report):
    epath = tmp_path / "errors.csv"
    benchmod.write_errors_csv(epath, report)
    with open(epath, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["N", "err_v", "err_h", "err_u", "err_chi", "err_lambda"]
    assert len(rows) == 1 + len(report.n_list)
    assert float(rows[1][1]) == report.mean_errors[report.n_list[0]]["v"]

    rows_t = benchmod.measure_speedup(tiny.disc, tiny.rop, tiny.test_params[:1],
                                      tiny.base, [2], truth_seconds=1.0, repeats=1)
    tpath = tmp_path / "timings.csv"
    benchmod.write_timings_csv(tpath, rows_t)
    with open(tpath, newline="") as fh:
        trows = list(csv.reader(fh))
    assert trows[0] == ["N", "truth_s", "online_s", "speedup"]
    assert float(trows[1][3]) > 0


def test_measure_speedup_runs_truth_when_unmeasured(tiny):
    rows = benchmod.measure_speedup(tiny.disc, tiny.rop, tiny.test_params[:1],
                                    tiny.base, [tiny.n_retained], repeats=1)
    assert rows[0]["speedup"] > 1.0
    assert rows[0]["truth_s"] > rows[0]["online_s"] > 0
