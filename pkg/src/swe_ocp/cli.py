"""Command line pipeline: truth / offline / online / validate / bench.

The workdir (config `paths.workdir`, or the SWE_OCP_WORKDIR environment
variable, or the current directory) gets a fixed layout:

    snapshots/   training snapshot matrices (binary container)
    basis/       aggregated reduced bases
    rom/         reduced operators + provenance manifest
    reports/     CSV reports and solution dumps

The desired trajectory is, by default, the frozen uncontrolled evolution at
the reference parameters scaled by mu3, used consistently by the truth and
reduced solvers; `truth --desired regenerate` recomputes it at the requested
parameter instead (the discrepancy between the two conventions is what the
manifest's `desired = fixed-base` line records).
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile

import numpy as np

from . import bench as benchmod
from . import pod as podmod
from . import rom as rommod
from . import spacetime as st
from . import storage
from .config import Config, config_text, parse_config
from .geometry import ConfigurationError

REFERENCE_MU12 = (0.1, 0.5)


def _clip(value, lo, hi):
    return min(max(value, lo), hi)


def reference_parameters(cfg: Config) -> st.Parameters:
    """Reference parameter for the frozen desired-trajectory base."""
    mu1 = _clip(REFERENCE_MU12[0], *cfg.box[0])
    mu2 = _clip(REFERENCE_MU12[1], *cfg.box[1])
    return st.Parameters(mu1=mu1, mu2=mu2, mu3=cfg.box[2][1],
                         alpha=cfg.alpha, g=cfg.g, T=cfg.t_final, nt=cfg.nt)


def make_parameters(cfg: Config, mu) -> st.Parameters:
    p = st.Parameters(mu1=mu[0], mu2=mu[1], mu3=mu[2],
                      alpha=cfg.alpha, g=cfg.g, T=cfg.t_final, nt=cfg.nt)
    p.validate(box=cfg.box)
    return p


def build_discretization(cfg: Config) -> st.Discretization:
    return st.Discretization(cfg.mesh, g=cfg.g)


def compute_base_profile(disc: st.Discretization, cfg: Config):
    """Unscaled desired trajectory at the reference parameters."""
    ref = reference_parameters(cfg)
    h0d = st.desired_initial_height(disc.mesh)
    v0d = np.zeros(disc.n_v)
    return st.uncontrolled_forward_solve(disc, ref, v0d, h0d)


def _workdir_paths(cfg: Config) -> dict[str, str]:
    root = cfg.resolve_workdir()
    paths = {name: os.path.join(root, name)
             for name in ("snapshots", "basis", "rom", "reports")}
    paths["root"] = root
    return paths


def _ensure_workdir(cfg: Config) -> dict[str, str]:
    paths = _workdir_paths(cfg)
    for name in ("snapshots", "basis", "rom", "reports"):
        os.makedirs(paths[name], exist_ok=True)
    return paths


class MissingArtifactError(FileNotFoundError):
    pass


def run_offline(cfg: Config, jobs: int = 1, seed: int | None = None) -> dict[str, str]:
    """Sample, truth-solve, build POD bases and reduced operators, persist all."""
    paths = _ensure_workdir(cfg)
    seed = cfg.seed if seed is None else seed
    disc = build_discretization(cfg)
    base = compute_base_profile(disc, cfg)
    ref = reference_parameters(cfg)

    mus = podmod.sample_parameters(cfg.n_max, seed=seed, box=cfg.box)
    plist = [make_parameters(cfg, mu) for mu in mus]
    snapshots, solved, failures = podmod.collect_snapshots(
        disc, plist, base=base, jobs=jobs)
    storage.write_sections(os.path.join(paths["snapshots"], "snapshots.bin"), snapshots)

    bases, spectra = {}, {}
    for var in st.VARIABLES:
        ip = podmod.variable_ip(disc, var, ref)
        bases[var], spectra[var] = podmod.pod_basis(
            snapshots[var], ip, cfg.n, cutoff=cfg.cutoff)
    podmod.write_eigs_csv(os.path.join(paths["reports"], "eigs.csv"), spectra)

    agg = rommod.aggregate_spaces(disc, ref, bases)
    storage.write_sections(os.path.join(paths["basis"], "basis.bin"),
                           {"Zv": agg.z_v, "Zh": agg.z_h, "Zu": agg.z_u})

    rop = rommod.project_operators(disc, agg, base)
    storage.write_sections(os.path.join(paths["rom"], "rom.bin"), rop.as_sections())

    with open(os.path.join(paths["rom"], "manifest.txt"), "w") as fh:
        fh.write(f"n = {cfg.n}\n")
        fh.write(f"n_max = {cfg.n_max}\n")
        fh.write(f"snapshots_used = {len(solved)}\n")
        fh.write(f"failures = {len(failures)}\n")
        fh.write(f"nt = {cfg.nt}\n")
        fh.write(f"n_v = {disc.n_v}\n")
        fh.write(f"n_h = {disc.n_h}\n")
        fh.write(f"n_u = {disc.n_u}\n")
        fh.write(f"reduced_dimension = {9 * cfg.n}\n")
        fh.write(f"seed = {seed}\n")
        fh.write(f"config_hash = {storage.config_hash(config_text(cfg))}\n")
        fh.write("desired = fixed-base\n")
        for p, msg in failures:
            fh.write(f"failure {p.mu} : {msg}\n")
    return paths


def load_artifacts(cfg: Config) -> tuple[rommod.AggregatedBases, rommod.RomOperators]:
    paths = _workdir_paths(cfg)
    basis_path = os.path.join(paths["basis"], "basis.bin")
    rom_path = os.path.join(paths["rom"], "rom.bin")
    for p in (basis_path, rom_path):
        if not os.path.exists(p):
            raise MissingArtifactError(
                f"missing offline artifact {p}; run the offline stage first")
    sections = storage.read_sections(basis_path)
    rop = rommod.RomOperators.from_sections(storage.read_sections(rom_path))
    agg = rommod.AggregatedBases(z_v=sections["Zv"], z_h=sections["Zh"],
                                 z_u=sections["Zu"], nt=rop.nt)
    return agg, rop


def _parse_mu(text: str):
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigurationError(f"--mu expects three comma-separated values, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigurationError(f"--mu has a non-numeric entry: {text!r}") from exc


def cmd_truth(cfg: Config, args) -> int:
    paths = _ensure_workdir(cfg)
    disc = build_discretization(cfg)
    params = make_parameters(cfg, _parse_mu(args.mu))
    if args.desired == "fixed":
        base = compute_base_profile(disc, cfg)
        data = st.make_problem_data(disc, params, base=base)
    else:
        data = st.make_problem_data(disc, params)
    w, info = st.truth_newton_solve(disc, params, data,
                                    tol_abs=cfg.tol_abs, tol_rel=cfg.tol_rel,
                                    max_iter=cfg.max_iter)
    prefix = args.out or os.path.join(paths["reports"], "truth")
    files = st.dump_solution_csv(disc, w, prefix)
    cost = st.evaluate_cost(disc, w, params, data)
    print(f"truth solve converged in {info['iterations']} iterations, "
          f"residual {info['residual_norms'][-1]:.3e}, cost {cost:.6e}")
    print(f"wrote {len(files)} time-step files at {prefix}_t*.csv")
    return 0


def cmd_offline(cfg: Config, args) -> int:
    paths = run_offline(cfg, jobs=args.jobs, seed=args.seed)
    print(f"offline stage complete; artifacts under {paths['root']}")
    return 0


def cmd_online(cfg: Config, args) -> int:
    paths = _ensure_workdir(cfg)
    agg, rop = load_artifacts(cfg)
    params = make_parameters(cfg, _parse_mu(args.mu))
    n = args.n or rop.n_modes
    y, info = rommod.online_solve(params, rop, n=n)
    disc = build_discretization(cfg)
    w = rommod.reconstruct(y, agg, disc.layout(cfg.nt))
    prefix = args.out or os.path.join(paths["reports"], "online")
    files = st.dump_solution_csv(disc, w, prefix)
    print(f"online solve (n = {n}) converged in {info['iterations']} iterations, "
          f"residual {info['residual_norms'][-1]:.3e}")
    print(f"wrote {len(files)} time-step files at {prefix}_t*.csv")
    return 0


def cmd_validate(cfg: Config, args) -> int:
    """Fast built-in oracle/property checks on a coarse configuration."""
    rng = np.random.default_rng(0)
    small = Config(mesh=type(cfg.mesh)(nx=5, ny=5), t_final=cfg.t_final, nt=4,
                   g=cfg.g, alpha=cfg.alpha, box=cfg.box, n_max=4, n=2)
    disc = build_discretization(small)
    params = make_parameters(small, tuple(_clip(m, lo, hi) for m, (lo, hi)
                                          in zip((0.1, 0.5, 1.0), small.box)))
    data = st.make_problem_data(disc, params)
    layout = disc.layout(small.nt)
    w = st.SpaceTimeVector(layout, 0.05 * rng.standard_normal(layout.total))
    w.block("h")[:] += 0.3

    r = st.assemble_residual(disc, w, params, data)
    jac = st.assemble_jacobian(disc, w, params)
    dw = rng.standard_normal(layout.total)
    eps = 1e-6
    wp = st.SpaceTimeVector(layout, w.data + eps * dw)
    wm = st.SpaceTimeVector(layout, w.data - eps * dw)
    fd = (st.assemble_residual(disc, wp, params, data)
          - st.assemble_residual(disc, wm, params, data)) / (2 * eps)
    rel = np.linalg.norm(fd - jac @ dw) / np.linalg.norm(jac @ dw)
    assert rel < 1e-6, f"finite-difference Jacobian check failed: {rel:.3e}"
    print(f"ok: finite-difference Jacobian ({rel:.2e})")

    n_a = layout.block_slice("u").stop
    jd = jac.tocsr()
    top_right = jd[:n_a, n_a:]
    bottom_left = jd[n_a:, :n_a]
    assert (top_right != bottom_left.T).nnz == 0, "saddle transpose violated"
    assert abs(jd[n_a:, n_a:]).max() == 0.0, "zero block violated"
    print("ok: saddle-point structure (transpose + zero block)")

    s = rng.standard_normal((layout.sizes["h"] * small.nt, 4))
    ip = podmod.variable_ip(disc, "h", params)
    c = podmod.correlation_matrix(s, ip)
    z, theta = podmod.pod_basis(s, ip, 3)
    gram = z.T @ ip.apply(z)
    assert np.abs(gram - np.eye(3)).max() < 1e-10, "POD basis not orthonormal"
    proj = z @ (z.T @ ip.apply(s))
    resid = np.mean([ip.dot(s[:, m] - proj[:, m], s[:, m] - proj[:, m])
                     for m in range(4)])
    tail = float(np.sum(theta[3:]))
    assert abs(resid - tail) < 1e-8 * max(tail, 1.0), "POD optimality identity failed"
    print("ok: POD orthonormality + projection-error identity")

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "round.bin")
        payload = {"a": rng.standard_normal((7, 3)),
                   "b": rng.standard_normal((2, 3, 4)),
                   "c": rng.standard_normal(5)}
        storage.write_sections(path, payload)
        back = storage.read_sections(path)
        for tag, a in payload.items():
            assert back[tag].reshape(a.reshape(a.shape[0], -1).shape).tobytes() \
                == a.reshape(a.shape[0], -1).tobytes(), f"round trip broke {tag}"
    print("ok: binary container round trip (bit-identical)")
    print("validate: all checks passed")
    return 0


def cmd_bench(cfg: Config, args) -> int:
    paths = _ensure_workdir(cfg)
    agg, rop = load_artifacts(cfg)
    disc = build_discretization(cfg)
    base = compute_base_profile(disc, cfg)

    if args.n_list:
        n_list = sorted({int(x) for x in args.n_list.split(",")})
    else:
        n = rop.n_modes
        n_list = sorted({max(1, n // 8), max(1, n // 4), max(1, n // 2), n})
    bad = [n for n in n_list if n > rop.n_modes]
    if bad:
        raise ConfigurationError(f"requested N {bad} exceed the built basis ({rop.n_modes})")

    seed = (args.seed if args.seed is not None else cfg.seed) + 1  # distinct from training
    mus = podmod.sample_parameters(args.test_size, seed=seed, box=cfg.box)
    test_params = [make_parameters(cfg, mu) for mu in mus]

    report = benchmod.error_sweep(disc, rop, agg, base, test_params, n_list)
    benchmod.write_errors_csv(os.path.join(paths["reports"], "errors.csv"), report)
    timing_params = test_params[:min(3, len(test_params))]
    rows = benchmod.measure_speedup(disc, rop, timing_params, base, n_list)
    benchmod.write_timings_csv(os.path.join(paths["reports"], "timings.csv"), rows)

    for n in n_list:
        e = report.mean_errors[n]
        print("N=%3d  " % n + "  ".join(
            f"{var}={e[var]:.3e}" for var in st.VARIABLES))
    for row in rows:
        print(f"N={row['N']:3d}  truth {row['truth_s']:.3f}s  "
              f"online {row['online_s'] * 1e3:.2f}ms  speedup {row['speedup']:.1f}x")
    if report.failures:
        print(f"{len(report.failures)} test-point failures (recorded, non-fatal)")
    print(f"reports written under {paths['reports']}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="swe-ocp",
        description="Space-time optimal control of shallow water flows "
                    "with a POD-Galerkin reduced order model.")
    parser.add_argument("--config", help="path to a sectioned config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p_truth = sub.add_parser("truth", help="full-order optimality solve at one parameter")
    p_truth.add_argument("--mu", required=True, help="mu1,mu2,mu3")
    p_truth.add_argument("--out", help="output prefix for solution dumps")
    p_truth.add_argument("--desired", choices=("fixed", "regenerate"), default="fixed")
    p_truth.set_defaults(func=cmd_truth)

    p_off = sub.add_parser("offline", help="sample, solve, build bases and reduced operators")
    p_off.add_argument("--jobs", type=int, default=1)
    p_off.add_argument("--seed", type=int, default=None)
    p_off.set_defaults(func=cmd_offline)

    p_on = sub.add_parser("online", help="reduced solve at one parameter")
    p_on.add_argument("--mu", required=True, help="mu1,mu2,mu3")
    p_on.add_argument("--N", dest="n", type=int, default=None)
    p_on.add_argument("--out", help="output prefix for solution dumps")
    p_on.set_defaults(func=cmd_online)

    p_val = sub.add_parser("validate", help="run built-in oracle/property checks")
    p_val.set_defaults(func=cmd_validate)

    p_bench = sub.add_parser("bench", help="error sweep and speedup measurement")
    p_bench.add_argument("--N", dest="n_list", help="comma-separated basis sizes")
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.add_argument("--test-size", type=int, default=10)
    p_bench.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
        return args.func(cfg, args)
    except (ConfigurationError, st.SolverError, storage.StorageError,
            MissingArtifactError, AssertionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
