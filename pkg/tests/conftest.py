"""Shared fixtures: a cheap 6x6 pipeline for unit tests and the full desk-scale
15x15 pipeline (built once per session) for the acceptance criteria."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from swe_ocp import pod as podmod
from swe_ocp import rom as rommod
from swe_ocp import spacetime as st
from swe_ocp.geometry import MeshConfig

TRUTH_TOL = dict(tol_abs=1e-10, tol_rel=1e-12)


@dataclass
class Pipeline:
    disc: st.Discretization
    ref: st.Parameters
    base: tuple                                   # unscaled desired trajectory
    train_params: list
    snapshots: dict
    spectra: dict                                 # full eigenvalue spectra per variable
    n_retained: int                               # min retained rank across variables
    bases: dict                                   # per-variable POD bases at n_retained
    agg: rommod.AggregatedBases
    rop: rommod.RomOperators
    layout: st.Layout
    test_params: list = field(default_factory=list)
    test_data: list = field(default_factory=list)
    test_truths: list = field(default_factory=list)
    test_inits: list = field(default_factory=list)
    truth_seconds: float = 0.0


def build_pipeline(mesh_cfg: MeshConfig, n_max: int, seed: int,
                   test_size: int = 0, test_seed: int | None = None,
                   n_cap: int | None = None) -> Pipeline:
    disc = st.Discretization(mesh_cfg)
    ref = st.Parameters(mu1=0.1, mu2=0.5, mu3=1.0)
    base = st.desired_profile(disc, st.Parameters(mu1=0.1, mu2=0.5, mu3=1.0))

    mus = podmod.sample_parameters(n_max, seed=seed)
    train_params = [st.Parameters(mu1=a, mu2=b, mu3=c) for a, b, c in mus]
    snapshots, solved, failures = podmod.collect_snapshots(disc, train_params, base=base)
    assert not failures, f"training solves failed: {failures}"

    spectra, retained = {}, []
    for var in st.VARIABLES:
        ip = podmod.variable_ip(disc, var, ref)
        c = podmod.correlation_matrix(snapshots[var], ip)
        theta = np.sort(np.linalg.eigvalsh(c))[::-1]
        spectra[var] = theta
        retained.append(int(np.sum(theta > podmod.EIG_CUTOFF * theta[0])))
    n_retained = min(retained)
    if n_cap is not None:
        n_retained = min(n_retained, n_cap)

    bases = {}
    for var in st.VARIABLES:
        ip = podmod.variable_ip(disc, var, ref)
        bases[var], _ = podmod.pod_basis(snapshots[var], ip, n_retained)
    agg = rommod.aggregate_spaces(disc, ref, bases)
    rop = rommod.project_operators(disc, agg, base)

    pipe = Pipeline(disc=disc, ref=ref, base=base, train_params=solved,
                    snapshots=snapshots, spectra=spectra, n_retained=n_retained,
                    bases=bases, agg=agg, rop=rop, layout=disc.layout(ref.nt))
    if test_size:
        mus = podmod.sample_parameters(test_size, seed=test_seed)
        times = []
        for mu in mus:
            p = st.Parameters(mu1=mu[0], mu2=mu[1], mu3=mu[2])
            data = st.make_problem_data(disc, p, base=base)
            w0 = st.initial_guess(disc, p, data)
            t0 = time.perf_counter()
            w, _ = st.truth_newton_solve(disc, p, data, init=w0, **TRUTH_TOL)
            times.append(time.perf_counter() - t0)
            pipe.test_params.append(p)
            pipe.test_data.append(data)
            pipe.test_truths.append(w)
            pipe.test_inits.append(w0)
        pipe.truth_seconds = float(np.mean(times))
    return pipe


@pytest.fixture(scope="session")
def tiny():
    return build_pipeline(MeshConfig(nx=6, ny=6), n_max=8, seed=3,
                          test_size=3, test_seed=4)


@pytest.fixture(scope="session")
def desk():
    return build_pipeline(MeshConfig(nx=15, ny=15), n_max=20, seed=0,
                          test_size=10, test_seed=1)


@pytest.fixture()
def small_disc():
    return st.Discretization(MeshConfig(nx=5, ny=5))
