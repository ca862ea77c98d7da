"""Orchestration: reduced main loop, compare pipeline, CLI, serialization."""

import json
import os

import numpy as np
import pytest

from picrom import cli, driver, report as report_mod
from picrom.config import RunConfig
from picrom.diagnostics import RunReport
from picrom.errors import ConfigurationError, StepFailureError
from picrom.fem import (
    ChargeConfig,
    PoissonOperator,
    build_mesh,
    deposit_charge,
    eval_basis,
    eval_basis_grad,
)
from picrom.fullorder import VlasovSystem
from picrom.reduction import complex_svd_basis, select_parameter_subset
from picrom.sampling import BENCHMARKS, build_initial_ensemble, sample_parameters


# -- independent dense reference for the no-hyper reduced loop ---------------


def _jn(n):
    half = n // 2
    top = np.hstack([np.zeros((half, half)), np.eye(half)])
    bot = np.hstack([-np.eye(half), np.zeros((half, half))])
    return np.vstack([top, bot])


def _ref_gradient(mesh, charge, poisson, u, z):
    half = u.shape[0] // 2
    x = u[:half] @ z
    v = u[half:] @ z
    coef = charge.charge_weight / charge.particle_mass
    cols = []
    for j in range(x.shape[1]):
        basis = eval_basis(mesh, x[:, j])
        phi = poisson.solve(deposit_charge(basis, charge))
        grad = eval_basis_grad(mesh, x[:, j])
        cols.append(coef * grad.matvec(phi))
    return np.concatenate([np.stack(cols, axis=1), v], axis=0)


def _ref_xcal(u, zs, g):
    big, n = u.shape
    jn = _jn(n)
    jbig = _jn(big)
    s = zs @ zs.T + jn.T @ zs @ zs.T @ jn
    rhs = (np.eye(big) - u @ u.T) @ (jbig @ g @ zs.T - g @ zs.T @ jn.T)
    return np.linalg.solve(s.T, rhs.T).T


def _ref_retract(u, xi):
    w = xi - 0.5 * u @ (u.T @ xi)
    omega = w @ u.T - u @ w.T
    eye = np.eye(u.shape[0])
    return np.linalg.solve(eye - 0.5 * omega, (eye + 0.5 * omega) @ u)


def _ref_tangent(u, xi, r, x_eval):
    n = u.shape[1]
    w = xi - 0.5 * u @ (u.T @ xi)
    omega = w @ u.T - u @ w.T
    ups = np.linalg.solve((u.T @ r + np.eye(n)).T, (2.0 * x_eval - omega @ x_eval).T).T
    return (-u @ np.linalg.solve(r.T @ u + np.eye(n), (r + u).T @ ups)
            + ups - u @ (ups.T @ u))


def _ref_reduced_run(mesh, charge, x0, v0, n, sub_count, dt, num_steps, fp_tol, fp_max_iter):
    poisson = PoissonOperator(mesh)
    u, z = complex_svd_basis(x0, v0, n)
    sub = np.sort(select_parameter_subset(z, sub_count))
    jn = _jn(n)
    for _ in range(num_steps):
        g_sub = _ref_gradient(mesh, charge, poisson, u, z[:, sub])
        xi1 = _ref_xcal(u, z[:, sub], g_sub)
        u_mid = _ref_retract(u, 0.5 * dt * xi1)
        k = np.zeros_like(z)
        for _ in range(fp_max_iter):
            ghat = u_mid.T @ _ref_gradient(mesh, charge, poisson, u_mid, z + 0.5 * dt * k)
            k_new = jn @ ghat
            num = float(np.linalg.norm(k_new - k))
            den = max(float(np.linalg.norm(k_new)), np.finfo(float).tiny)
            k = k_new
            if num <= fp_tol * den:
                break
        z_mid = z + 0.5 * dt * k
        z = z + dt * k
        g_mid = _ref_gradient(mesh, charge, poisson, u_mid, z_mid[:, sub])
        xi_mid = _ref_xcal(u_mid, z_mid[:, sub], g_mid)
        xi2 = _ref_tangent(u, 0.5 * dt * xi1, u_mid, xi_mid)
        u = _ref_retract(u, dt * xi2)
    return u, z


def _tiny_problem(num_particles=240, num_cells=16, num_params=6):
    bench = BENCHMARKS["weak_landau"]
    params = sample_parameters(bench.alpha_range, bench.sigma_range, num_params)
    mesh = build_mesh(bench.length, num_cells)
    charge = ChargeConfig(num_particles=num_particles, length=bench.length)
    x0, v0 = build_initial_ensemble(bench, params, num_particles)
    system = VlasovSystem(mesh, charge)
    return bench, params, mesh, charge, system, x0, v0


def test_reduced_loop_matches_dense_reference():
    _, params, mesh, charge, system, x0, v0 = _tiny_problem()
    dt, steps = 0.02, 5
    rec = driver.run_reduced(
        system, params, x0, v0, basis_dim=4, subsample=4, window=3,
        deim_dim=8, deim_period=3, deim_update=2, dt=dt, t_final=dt * steps,
        hyper_reduction=False, snapshot_stride=steps, decomp_stride=10**9)
    u_ref, z_ref = _ref_reduced_run(mesh, charge, x0, v0, 4, 4, dt, steps,
                                    fp_tol=1e-9, fp_max_iter=100)
    u_got, z_got = rec.bases[-1]
    assert rec.snapshot_times[-1] == pytest.approx(dt * steps)
    np.testing.assert_allclose(u_got, u_ref, atol=1e-12)
    np.testing.assert_allclose(z_got, z_ref, atol=1e-12)


def test_full_subsample_without_hyper_equals_reference():
    # the documented degenerate configuration: no hyper-reduction and the
    # subsample covering every parameter reduces to the plain dynamical RB
    _, params, mesh, charge, system, x0, v0 = _tiny_problem(num_params=5)
    dt, steps = 0.02, 4
    rec = driver.run_reduced(
        system, params, x0, v0, basis_dim=4, subsample=5, window=2,
        deim_dim=8, deim_period=1, deim_update=1, dt=dt, t_final=dt * steps,
        hyper_reduction=False, snapshot_stride=steps, decomp_stride=10**9)
    u_ref, z_ref = _ref_reduced_run(mesh, charge, x0, v0, 4, 5, dt, steps,
                                    fp_tol=1e-9, fp_max_iter=100)
    u_got, z_got = rec.bases[-1]
    np.testing.assert_allclose(u_got, u_ref, atol=1e-12)
    np.testing.assert_allclose(z_got, z_ref, atol=1e-12)


def test_reduced_run_is_deterministic():
    _, params, _, _, system, x0, v0 = _tiny_problem(num_particles=200, num_params=5)
    kwargs = dict(basis_dim=4, subsample=4, window=2, deim_dim=12, deim_period=2,
                  deim_update=4, dt=0.01, t_final=0.12, snapshot_stride=4,
                  decomp_stride=10**9)
    rec1 = driver.run_reduced(system, params, x0, v0, **kwargs)
    rec2 = driver.run_reduced(system, params, x0, v0, **kwargs)
    assert rec1.hyper_engaged and rec2.hyper_engaged
    np.testing.assert_array_equal(rec1.bases[-1][0], rec2.bases[-1][0])
    np.testing.assert_array_equal(rec1.bases[-1][1], rec2.bases[-1][1])
    np.testing.assert_array_equal(rec1.electric_energy, rec2.electric_energy)


def test_short_run_never_engages_hyper_reduction():
    _, params, _, _, system, x0, v0 = _tiny_problem(num_particles=200, num_params=5)
    rec = driver.run_reduced(
        system, params, x0, v0, basis_dim=4, subsample=4, window=3,
        deim_dim=8, deim_period=1, deim_update=1, dt=0.01, t_final=0.03,
        decomp_stride=10**9)
    assert not rec.hyper_engaged
    assert rec.notes.get("no_hyper_reduction_engaged") is True


def test_compare_workers_agree():
    over = dict(num_particles=400, num_cells=16, dt=0.01, t_final=0.1,
                num_params=6, subsample=4, basis_dim=4, window=3,
                energy_stride=2, snapshot_stride=5, decomp_stride=10**9,
                deim_dim=16)
    r1 = driver.run_compare(RunConfig.from_benchmark("weak_landau", **over).validate())
    r3 = driver.run_compare(
        RunConfig.from_benchmark("weak_landau", workers=3, **over).validate())
    np.testing.assert_allclose(np.array(r3.energy_fom), np.array(r1.energy_fom),
                               rtol=0, atol=1e-12)
    np.testing.assert_allclose(np.array(r3.eps_x), np.array(r1.eps_x),
                               rtol=0, atol=1e-10)


def test_failed_coefficient_stage_reports_step_context():
    _, params, _, _, system, x0, v0 = _tiny_problem(num_particles=200, num_params=5)
    with pytest.raises(StepFailureError, match="step 1 "):
        driver.run_reduced(
            system, params, x0, v0, basis_dim=4, subsample=4, window=3,
            deim_dim=8, deim_period=1, deim_update=1, dt=0.01, t_final=0.05,
            fp_tol=1e-300, fp_max_iter=1, decomp_stride=10**9)


# -- compare pipeline + serialization ----------------------------------------


@pytest.fixture(scope="module")
def tiny_report():
    cfg = RunConfig.from_benchmark(
        "weak_landau", num_particles=400, num_cells=16, dt=0.01, t_final=0.3,
        num_params=6, subsample=4, basis_dim=4, window=3, deim_dim=16,
        energy_stride=3, snapshot_stride=10, decomp_stride=20).validate()
    return cfg, driver.run_compare(cfg)


def test_compare_report_contents(tiny_report):
    cfg, rep = tiny_report
    assert rep.mode == "compare"
    assert len(rep.params) == 6
    assert len(rep.times) == len(rep.energy_fom) == len(rep.energy_rom)
    assert np.shape(rep.energy_fom)[1] == 6
    assert rep.eps_x is not None and len(rep.eps_x) == len(rep.error_times)
    assert max(rep.ham_rel_error) < 0.2
    assert any("rate fit skipped" in w for w in rep.warnings) or rep.rates


def test_serialization_round_trip(tiny_report, tmp_path):
    _, rep = tiny_report
    outdir = tmp_path / "out"
    files = report_mod.write_report(rep, outdir, figures=True)
    names = {os.path.basename(f) for f in files}
    assert {"config.json", "summary.json", "rates.json", "energies.csv",
            "errors.csv", "ranks.csv", "hamiltonian.csv", "timings.csv",
            "structure.csv"} <= names
    assert any(name.endswith(".png") for name in names)
    with open(outdir / "summary.json") as fh:
        loaded = json.load(fh)
    assert loaded == report_mod.build_summary(rep)
    # config echoed verbatim
    with open(outdir / "config.json") as fh:
        echoed = json.load(fh)
    assert echoed == report_mod._jsonify(rep.config)


def test_energies_csv_column_count(tiny_report, tmp_path):
    _, rep = tiny_report
    outdir = tmp_path / "cols"
    report_mod.serialize(rep, outdir)
    with open(outdir / "energies.csv") as fh:
        header = fh.readline().strip().split(",")
        first = fh.readline().strip().split(",")
    assert len(header) == 1 + 2 * 6
    assert len(first) == len(header)
    assert header[0] == "time"


def test_empty_report_writes_headers_only(tmp_path):
    cfg = RunConfig.from_benchmark("weak_landau", num_params=4, subsample=4).validate()
    rep = RunReport(config=cfg.to_dict(), mode="rom", params=[])
    outdir = tmp_path / "empty"
    report_mod.serialize(rep, outdir)
    for name in ("energies.csv", "errors.csv", "ranks.csv", "hamiltonian.csv",
                 "timings.csv", "structure.csv"):
        with open(outdir / name) as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        assert len(lines) == 1, f"{name} should carry only its header"


def test_summary_json_round_trip_identity(tiny_report, tmp_path):
    _, rep = tiny_report
    summary = report_mod.build_summary(rep)
    path = tmp_path / "summary.json"
    with open(path, "w") as fh:
        json.dump(summary, fh)
    assert report_mod.parse_summary(path) == summary


# -- CLI ---------------------------------------------------------------------


def _cli_overrides():
    return ["num_particles=300", "num_cells=16", "dt=0.01", "t_final=0.05",
            "num_params=5", "subsample=4", "basis_dim=4", "deim_dim=12",
            "energy_stride=2", "snapshot_stride=2", "record_snapshots=false"]


def test_cli_full_run(tmp_path, capsys):
    out = tmp_path / "cli_full"
    args = ["full", "--benchmark", "weak_landau", "--output", str(out),
            "--no-figures"]
    for item in _cli_overrides():
        args += ["--override", item]
    assert cli.main(args) == 0
    assert (out / "summary.json").exists()
    assert not list(out.glob("*.png"))
    text = capsys.readouterr().out
    assert "wrote" in text


def test_cli_rom_renders_figures(tmp_path):
    out = tmp_path / "cli_rom"
    args = ["rom", "--benchmark", "weak_landau", "--output", str(out)]
    for item in _cli_overrides():
        args += ["--override", item]
    assert cli.main(args) == 0
    assert list(out.glob("*.png")), "report path must render figures"
    with open(out / "config.json") as fh:
        echoed = json.load(fh)
    assert echoed["num_particles"] == 300
    assert echoed["mode"] == "rom"


def test_cli_requires_exactly_one_source(capsys):
    assert cli.main(["full"]) == 2
    assert cli.main(["full", "--benchmark", "weak_landau",
                     "--config", "/nonexistent.json"]) == 2


def test_cli_rejects_unknown_override(capsys):
    code = cli.main(["full", "--benchmark", "weak_landau",
                     "--override", "not_a_field=3"])
    assert code == 2
    assert "not_a_field" in capsys.readouterr().err


def test_cli_config_file_round_trip(tmp_path):
    cfg = RunConfig.from_benchmark(
        "weak_landau", num_particles=300, num_cells=16, dt=0.01, t_final=0.05,
        num_params=5, subsample=4, deim_dim=12, record_snapshots=False)
    path = tmp_path / "cfg.json"
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh)
    out = tmp_path / "from_file"
    assert cli.main(["full", "--config", str(path), "--output", str(out),
                     "--no-figures"]) == 0
    with open(out / "config.json") as fh:
        echoed = json.load(fh)
    assert echoed["num_particles"] == 300


def test_cli_selftest_quiet():
    assert cli.main(["selftest", "--quiet"]) == 0
