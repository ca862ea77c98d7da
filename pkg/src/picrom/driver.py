"""Run orchestration: full-order batches, the reduced main loop, comparisons.

The reduced path follows one fixed interval schedule. At the start of step
tau the exact subsample gradients at (U, Z) are assembled; their byproducts
(the subsample potential and its basis-weighted particle samples) are pushed
into the sliding windows. Once the windows hold T+1 aligned samples the DMD
and DEIM models are (re)fit and the partitioned RK step runs with the
hyper-reduced coefficient gradient; before that the coefficient stage solves
the unreduced projected system (warm-up). Reconstruction-based diagnostics
are computed outside all solver timers.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .diagnostics import (
    PhaseTimers,
    RunReport,
    amplitude_rate,
    hamiltonian_relative_error,
    numerical_rank,
    relative_errors,
    split_two_phase_windows,
    target_projection_errors,
    total_relative_error,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    EvaluationError,
    FitFailureError,
    StepFailureError,
)
from .fem import ChargeConfig, build_mesh, deposit_charge, electric_energy, eval_basis_pair
from .fullorder import ParticleEnsemble, RecordOptions, VlasovSystem, run_full_order
from .hyper import fit_deim, fit_parametric_dmd, hyper_hamiltonian, make_hyper_stage
from .reduction import (
    complex_svd_basis,
    orthosymplectic_residuals,
    prk2_step,
    reconstruct,
    select_parameter_subset,
)
from .sampling import BenchmarkSpec, build_initial_ensemble

__all__ = [
    "exact_gradients",
    "make_full_stage",
    "RomRecord",
    "run_reduced",
    "run",
    "run_full",
    "run_rom",
    "run_compare",
]


def exact_gradients(system, u, z):
    """Full-state Hamiltonian gradients at the reconstructed columns U z.

    Returns (g, phi, lam_phi): the stacked gradient (2N, p'), the
    self-consistent nodal potential (N_x, p'), and the basis-weighted
    potential at the particles (N, p') harvested for the DEIM window.
    """
    xr, vr = reconstruct(u, z)
    basis, grad = eval_basis_pair(system.mesh, xr)
    rho = deposit_charge(basis, system.charge)
    phi = system.poisson.solve(rho)
    coef = system.charge.charge_weight / system.charge.particle_mass
    g = np.concatenate([coef * grad.matvec(phi), vr], axis=0)
    return g, phi, basis.matvec(phi)


def make_full_stage(system):
    """Warm-up coefficient gradient: the exactly projected full gradient."""

    def factory(u_mid):
        def g(z):
            gfull, _, _ = exact_gradients(system, u_mid, z)
            return u_mid.T @ gfull

        return g

    return factory


@dataclass
class RomRecord:
    """Time series and reduced snapshots from a reduced run."""

    times: np.ndarray
    energy_times: np.ndarray
    electric_energy: np.ndarray       # (T_e, p), from reconstructed states
    hamiltonian: np.ndarray
    snapshot_times: np.ndarray
    bases: list                       # [(U, Z)] at snapshot times
    ortho_residuals: np.ndarray       # per step, after the step
    sympl_residuals: np.ndarray
    fp_iterations: np.ndarray
    dmd_ranks: np.ndarray
    s_conds: np.ndarray
    decomp_times: np.ndarray
    dh_total: np.ndarray
    dh_coeff: np.ndarray
    dh_coeff_dd: np.ndarray
    timers: PhaseTimers
    dmd_imag_defect: float
    hyper_engaged: bool
    notes: dict = field(default_factory=dict)


def run_reduced(system, params, x0, v0, *, basis_dim, subsample, window, deim_dim,
                deim_period, deim_update, dt, t_final, svd_tol_dmd=1e-5, fp_tol=1e-9,
                fp_max_iter=100, hyper_reduction=True, printed_subset_variant=False,
                printed_deim_ranking=False, energy_stride=10, snapshot_stride=None,
                decomp_stride=50, record_snapshots=True, timers=None) -> RomRecord:
    """Reduced-order run over all parameter columns.

    x0, v0 are the (N, p) initial particle data; params the (p, 2) parameter
    rows whose subsample drives the basis and the model fits.
    """
    params = np.asarray(params, dtype=float)
    num_steps = int(round(t_final / dt))
    snap_stride = (max(1, int(snapshot_stride)) if snapshot_stride is not None
                   else max(1, num_steps // 40))
    timers = timers or PhaseTimers()
    mesh, charge = system.mesh, system.charge

    u, z = complex_svd_basis(x0, v0, basis_dim)
    sub = np.sort(select_parameter_subset(z, subsample, printed_variant=printed_subset_variant))

    pot_window = deque(maxlen=window + 1)
    deim_window = deque(maxlen=window + 1)
    dmd_model = None
    deim_model = None
    main_counter = 0
    imag_defect = 0.0
    hyper_engaged = False

    full_stage = make_full_stage(system)

    def grad_sub(u_eval, z_sub):
        return exact_gradients(system, u_eval, z_sub)[0]

    # diagnostics storage
    energy_times, energies, hams = [], [], []
    snap_times, bases = [], []
    ortho_res = np.zeros(num_steps + 1)
    sympl_res = np.zeros(num_steps + 1)
    fp_iters = np.zeros(num_steps, dtype=int)
    dmd_ranks = np.zeros(num_steps, dtype=int)
    s_conds = np.zeros(num_steps)
    decomp_times, dh_tot, dh_z, dh_zdd = [], [], [], []

    def reconstruct_diagnostics(tau, u_now, z_now):
        t_now = tau * dt
        if tau % energy_stride == 0 or tau == num_steps:
            xr, vr = reconstruct(u_now, z_now)
            basis, _ = eval_basis_pair(mesh, xr)
            phi = system.poisson.solve(deposit_charge(basis, charge))
            ee = np.atleast_1d(electric_energy(system.poisson, phi, charge))
            kin = 0.5 * np.einsum("ij,ij->j", vr, vr)
            energy_times.append(t_now)
            energies.append(ee)
            hams.append(kin + ee)
        if record_snapshots and (tau % snap_stride == 0 or tau == num_steps):
            snap_times.append(t_now)
            bases.append((u_now.copy(), z_now.copy()))

    ortho_res[0], sympl_res[0] = orthosymplectic_residuals(u)
    reconstruct_diagnostics(0, u, z)

    for tau in range(1, num_steps + 1):
        t_prev = (tau - 1) * dt
        try:
            with timers.phase("rom_basis"):
                g_sub0, phi_sub, lam_sub = exact_gradients(system, u, z[:, sub])
            pot_window.append(phi_sub)
            deim_window.append(lam_sub)

            hyper_now = hyper_reduction and len(pot_window) == window + 1
            if hyper_now:
                hyper_engaged = True
                with timers.phase("dmd_fit"):
                    dmd_model = fit_parametric_dmd(
                        list(pot_window), dt, t_prev, params, sub, svd_tol=svd_tol_dmd
                    )
                with timers.phase("deim_fit"):
                    block = np.stack(deim_window).transpose(1, 2, 0)
                    samples = block.reshape(block.shape[0], -1)
                    deim_model = fit_deim(
                        samples, deim_dim, charge, prev=deim_model,
                        full=(main_counter % deim_period == 0), n_update=deim_update,
                        printed_ranking=printed_deim_ranking,
                    )
                main_counter += 1
                stage = make_hyper_stage(
                    dmd_model, deim_model, t_prev + 0.5 * dt, mesh, charge, params
                )
            else:
                stage = full_stage

            res = prk2_step(u, z, dt, sub, grad_sub, g_sub0, stage,
                            fp_tol=fp_tol, fp_max_iter=fp_max_iter, timers=timers)
        except EvaluationError as err:
            raise DivergenceError(
                f"reduced state diverged during step {tau} (t = {tau * dt:.6g})",
                time=tau * dt,
            ) from err
        except StepFailureError as err:
            raise StepFailureError(
                f"step {tau} (t = {tau * dt:.6g}): {err}",
                iterations=err.iterations,
                residual_trace=err.residual_trace,
            ) from err

        u_prev, z_prev = u, z
        u, z = res.u, res.z
        timers.flush_step()

        # per-step structure diagnostics (outside solver timers)
        ortho_res[tau], sympl_res[tau] = orthosymplectic_residuals(u)
        fp_iters[tau - 1] = res.fp_iterations
        s_conds[tau - 1] = res.s_cond
        if hyper_now:
            dmd_ranks[tau - 1] = dmd_model.rank
            imag_defect = max(imag_defect, dmd_model.imag_defect)

        if hyper_now and decomp_stride and tau % decomp_stride == 0:
            h_new = system.hamiltonian(*reconstruct(u, z))
            h_prev = system.hamiltonian(*reconstruct(u_prev, z_prev))
            h_mid_new = system.hamiltonian(*reconstruct(res.u_mid, z))
            h_mid_prev = system.hamiltonian(*reconstruct(res.u_mid, z_prev))
            hdd_new = hyper_hamiltonian(dmd_model, deim_model, res.u_mid, z,
                                        tau * dt, mesh, charge)
            hdd_prev = hyper_hamiltonian(dmd_model, deim_model, res.u_mid, z_prev,
                                         t_prev, mesh, charge)
            decomp_times.append(tau * dt)
            dh_tot.append(float(np.linalg.norm(np.atleast_1d(h_new - h_prev))))
            dh_z.append(float(np.linalg.norm(np.atleast_1d(h_mid_new - h_mid_prev))))
            dh_zdd.append(float(np.linalg.norm(np.atleast_1d(hdd_new - hdd_prev))))

        reconstruct_diagnostics(tau, u, z)

    notes = {}
    if not hyper_engaged:
        notes["no_hyper_reduction_engaged"] = True

    return RomRecord(
        times=dt * np.arange(num_steps + 1),
        energy_times=np.asarray(energy_times),
        electric_energy=np.asarray(energies),
        hamiltonian=np.asarray(hams),
        snapshot_times=np.asarray(snap_times),
        bases=bases,
        ortho_residuals=ortho_res,
        sympl_residuals=sympl_res,
        fp_iterations=fp_iters,
        dmd_ranks=dmd_ranks,
        s_conds=s_conds,
        decomp_times=np.asarray(decomp_times),
        dh_total=np.asarray(dh_tot),
        dh_coeff=np.asarray(dh_z),
        dh_coeff_dd=np.asarray(dh_zdd),
        timers=timers,
        dmd_imag_defect=imag_defect,
        hyper_engaged=hyper_engaged,
        notes=notes,
    )


def _bench_from_config(config: RunConfig) -> BenchmarkSpec:
    return BenchmarkSpec(
        name=config.benchmark,
        wavenumber=config.wavenumber,
        velocity_model=config.velocity_model,
        alpha_range=tuple(config.alpha_range),
        sigma_range=tuple(config.sigma_range),
        beam_speed=config.beam_speed,
    )


def _setup(config: RunConfig):
    bench = _bench_from_config(config)
    params = config.resolve_params()
    mesh = build_mesh(bench.length, config.num_cells)
    charge = ChargeConfig(num_particles=config.num_particles, length=bench.length)
    system = VlasovSystem(mesh, charge, workers=config.workers)
    x0, v0 = build_initial_ensemble(bench, params, config.num_particles)
    return bench, params, mesh, charge, system, x0, v0


def _fom_record_options(config: RunConfig) -> RecordOptions:
    return RecordOptions(
        energy_stride=config.energy_stride,
        snapshot_stride=config.snapshot_stride,
        record_snapshots=config.record_snapshots,
    )


def _run_fom(config, system, x0, v0):
    ens0 = ParticleEnsemble(x0.copy(), v0.copy(), 0.0)
    return run_full_order(system, ens0, config.dt, config.t_final,
                          record=_fom_record_options(config))


def _run_rom(config, system, params, x0, v0):
    return run_reduced(
        system, params, x0, v0,
        basis_dim=config.basis_dim, subsample=config.subsample, window=config.window,
        deim_dim=config.deim_dim, deim_period=config.deim_period,
        deim_update=config.deim_update, dt=config.dt, t_final=config.t_final,
        svd_tol_dmd=config.svd_tol_dmd, fp_tol=config.fp_tol,
        fp_max_iter=config.fp_max_iter, hyper_reduction=config.hyper_reduction,
        printed_subset_variant=config.printed_subset_variant,
        printed_deim_ranking=config.printed_deim_ranking,
        energy_stride=config.energy_stride, snapshot_stride=config.snapshot_stride,
        decomp_stride=config.decomp_stride, record_snapshots=config.record_snapshots,
    )


def _fit_rates(config, times, energy_matrix):
    """Per-parameter field-amplitude rates with benchmark-dependent windows."""
    rates = {"damping": [], "growth": [], "windows": [], "failures": []}
    if config.benchmark == "two_stream":
        return None
    for j in range(energy_matrix.shape[1]):
        series = energy_matrix[:, j]
        try:
            if config.benchmark == "nonlinear_landau":
                damp_w, grow_w = split_two_phase_windows(times, series)
                # quoted damping rates are initial-phase slopes; only the
                # first two peaks predate the nonlinear envelope bend
                damp = amplitude_rate(times, series, window=damp_w,
                                      drop_first=False, max_peaks=2, min_peaks=2)
                # drop_first discards the trough peak the window starts on
                grow = amplitude_rate(times, series, window=grow_w)
                rates["damping"].append(damp.rate)
                rates["growth"].append(grow.rate)
                rates["windows"].append([list(damp_w), list(grow_w)])
            else:
                # weak damping reaches the particle-noise floor late in the
                # run; the first few clean peaks carry the linear-phase signal
                fit = amplitude_rate(times, series, max_peaks=4)
                rates["damping"].append(fit.rate)
                rates["growth"].append(None)
                rates["windows"].append(None)
        except FitFailureError as err:
            rates["damping"].append(None)
            rates["growth"].append(None)
            rates["windows"].append(None)
            rates["failures"].append([j, str(err)])
    return rates


def run_full(config: RunConfig) -> RunReport:
    bench, params, mesh, charge, system, x0, v0 = _setup(config)
    fom = _run_fom(config, system, x0, v0)
    report = RunReport(config=config.to_dict(), mode="full", params=params)
    report.times = fom.energy_times
    report.energy_fom = fom.electric_energy
    report.hamiltonian_fom = fom.hamiltonian
    report.rank_times = fom.potential_times
    report.rank_potential = np.array([
        numerical_rank(fom.potentials[k], config.rank_tol)
        for k in range(fom.potentials.shape[0])
    ])
    if fom.snapshots_x.size:
        report.notes["state_rank_times"] = fom.snapshot_times.tolist()
        report.notes["state_rank_complex"] = [
            numerical_rank(fom.snapshots_x[k] + 1j * fom.snapshots_v[k], config.rank_tol)
            for k in range(fom.snapshots_x.shape[0])
        ]
    report.fom_step_seconds = fom.step_seconds
    report.phase_totals = dict(fom.phase_seconds)
    report.phase_series = {"fom_step": fom.step_seconds}
    try:
        report.rates = {"fom": _fit_rates(config, fom.energy_times, fom.electric_energy)}
    except Exception as err:  # rates are a post-processing convenience in full mode
        report.warnings.append(f"rate fit skipped: {err}")
    return report


def run_rom(config: RunConfig) -> RunReport:
    bench, params, mesh, charge, system, x0, v0 = _setup(config)
    rom = _run_rom(config, system, params, x0, v0)
    report = RunReport(config=config.to_dict(), mode="rom", params=params)
    report.times = rom.energy_times
    report.energy_rom = rom.electric_energy
    report.hamiltonian_rom = rom.hamiltonian
    _attach_rom_series(report, rom)
    try:
        report.rates = {"rom": _fit_rates(config, rom.energy_times, rom.electric_energy)}
    except Exception as err:
        report.warnings.append(f"rate fit skipped: {err}")
    return report


def _attach_rom_series(report, rom):
    report.ortho_residuals = rom.ortho_residuals
    report.sympl_residuals = rom.sympl_residuals
    report.fp_iterations = rom.fp_iterations
    report.dmd_ranks = rom.dmd_ranks
    report.s_conds = rom.s_conds
    report.ham_error_times = rom.decomp_times
    report.dh_total = rom.dh_total
    report.dh_coeff = rom.dh_coeff
    report.dh_coeff_dd = rom.dh_coeff_dd
    report.dmd_imag_defect = rom.dmd_imag_defect
    report.phase_totals = {**report.phase_totals, **rom.timers.totals}
    report.phase_series = {**report.phase_series, **rom.timers.series_arrays()}
    report.notes.update(rom.notes)


def run_compare(config: RunConfig) -> RunReport:
    bench, params, mesh, charge, system, x0, v0 = _setup(config)
    fom = _run_fom(config, system, x0, v0)
    rom = _run_rom(config, system, params, x0, v0)
    report = RunReport(config=config.to_dict(), mode="compare", params=params)

    report.times = fom.energy_times
    report.energy_fom = fom.electric_energy
    report.hamiltonian_fom = fom.hamiltonian
    report.energy_rom = rom.electric_energy
    report.hamiltonian_rom = rom.hamiltonian
    report.fom_step_seconds = fom.step_seconds
    report.phase_totals = dict(fom.phase_seconds)
    report.phase_series = {"fom_step": fom.step_seconds}
    _attach_rom_series(report, rom)

    # Hamiltonian relative error on the shared energy time axis
    if rom.energy_times.size and fom.energy_times.size:
        if rom.energy_times.shape != fom.energy_times.shape \
                or not np.allclose(rom.energy_times, fom.energy_times):
            raise ConfigurationError("energy time axes of the two runs diverged")
        report.ham_rel_error = np.array([
            hamiltonian_relative_error(fom.hamiltonian[k], rom.hamiltonian[k])
            for k in range(fom.hamiltonian.shape[0])
        ])

    # state errors and targets at shared snapshot times
    if config.record_snapshots and fom.snapshots_x.size and rom.bases:
        n_shared = min(fom.snapshots_x.shape[0], len(rom.bases))
        err_t, ex, ev, tx, tv, et, tt = [], [], [], [], [], [], []
        rank_c = []
        for k in range(n_shared):
            sx, sv = fom.snapshots_x[k], fom.snapshots_v[k]
            uk, zk = rom.bases[k]
            xr, vr = reconstruct(uk, zk)
            e_x, e_v = relative_errors(sx, sv, xr, vr)
            t_x, t_v = target_projection_errors(sx, sv, config.basis_dim)
            err_t.append(fom.snapshot_times[k])
            ex.append(e_x)
            ev.append(e_v)
            tx.append(t_x)
            tv.append(t_v)
            et.append(total_relative_error(sx, sv, xr, vr))
            u_t, z_t = complex_svd_basis(sx, sv, config.basis_dim)
            pxr, pvr = reconstruct(u_t, z_t)
            tt.append(total_relative_error(sx, sv, pxr, pvr))
            rank_c.append(numerical_rank(sx + 1j * sv, config.rank_tol))
        report.error_times = np.asarray(err_t)
        report.eps_x = np.asarray(ex)
        report.eps_v = np.asarray(ev)
        report.target_x = np.asarray(tx)
        report.target_v = np.asarray(tv)
        report.eps_total = np.asarray(et)
        report.target_total = np.asarray(tt)
        report.rank_x = np.asarray(rank_c)
        report.notes["state_rank_times"] = err_t

    report.rank_times = fom.potential_times
    report.rank_potential = np.array([
        numerical_rank(fom.potentials[k], config.rank_tol)
        for k in range(fom.potentials.shape[0])
    ])

    try:
        report.rates = {
            "fom": _fit_rates(config, fom.energy_times, fom.electric_energy),
            "rom": _fit_rates(config, rom.energy_times, rom.electric_energy),
        }
    except Exception as err:
        report.warnings.append(f"rate fit skipped: {err}")
    return report


def run(config: RunConfig) -> RunReport:
    config.validate()
    if config.mode == "full":
        return run_full(config)
    if config.mode == "rom":
        return run_rom(config)
    return run_compare(config)
