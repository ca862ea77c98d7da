"""Serialization of run reports and figure rendering.

Every run writes one directory: config.json (verbatim echo), energies.csv,
errors.csv, ranks.csv, hamiltonian.csv, structure.csv, timings.csv,
rates.json, summary.json, and a set of PNG figures. CSV numerics are
full-precision decimal (shortest round-trip repr); a report with no data
still produces every CSV with its header line.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .diagnostics import RunReport

__all__ = [
    "serialize",
    "build_summary",
    "parse_summary",
    "load_summary",
    "render_figures",
    "write_report",
]

RATE_CONVENTION = ("field-amplitude exponential rate: half the log-slope of the "
                   "electric-energy peaks")


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (np.floating, float)):
        return repr(float(value))
    if isinstance(value, (np.integer, int)):
        return str(int(value))
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _num_params(report):
    if report.params is None:
        return 0
    return int(np.asarray(report.params).shape[0])


def _energy_table(report):
    p = _num_params(report)
    header = ["time"]
    blocks = []
    if report.mode in ("full", "compare"):
        header += [f"fom_{j}" for j in range(p)]
        blocks.append(report.energy_fom)
    if report.mode in ("rom", "compare"):
        header += [f"rom_{j}" for j in range(p)]
        blocks.append(report.energy_rom)
    rows = []
    if report.times is not None and all(b is not None for b in blocks) and blocks:
        for k, t in enumerate(np.asarray(report.times)):
            row = [t]
            for b in blocks:
                row.extend(np.asarray(b)[k])
            rows.append(row)
    return header, rows


def _error_table(report):
    header = ["time", "eps_x", "eps_v", "target_x", "target_v",
              "eps_total", "target_total"]
    rows = []
    series = (report.eps_x, report.eps_v, report.target_x,
              report.target_v, report.eps_total, report.target_total)
    if report.error_times is not None and all(s is not None for s in series):
        for k, t in enumerate(np.asarray(report.error_times)):
            rows.append([t] + [float(np.asarray(s)[k]) for s in series])
    return header, rows


def _rank_table(report):
    header = ["time", "series", "rank"]
    rows = []
    if report.rank_times is not None and report.rank_potential is not None:
        for t, r in zip(np.asarray(report.rank_times), np.asarray(report.rank_potential)):
            rows.append([t, "potential", int(r)])
    state_times = report.notes.get("state_rank_times") if report.notes else None
    if report.rank_x is not None and state_times is not None:
        for t, r in zip(state_times, np.asarray(report.rank_x)):
            rows.append([t, "state_complex", int(r)])
    return header, rows


def _hamiltonian_table(report):
    header = ["time", "series", "value"]
    rows = []
    if report.times is not None and report.ham_rel_error is not None:
        for t, v in zip(np.asarray(report.times), np.asarray(report.ham_rel_error)):
            rows.append([t, "rel_error", v])
    if report.ham_error_times is not None:
        for name, data in (("dh_total", report.dh_total),
                           ("dh_coeff", report.dh_coeff),
                           ("dh_coeff_dd", report.dh_coeff_dd)):
            if data is None:
                continue
            for t, v in zip(np.asarray(report.ham_error_times), np.asarray(data)):
                rows.append([t, name, v])
    return header, rows


def _structure_table(report):
    header = ["step", "time", "ortho_residual", "sympl_residual",
              "fp_iterations", "dmd_rank", "s_cond"]
    rows = []
    if report.ortho_residuals is None:
        return header, rows
    ortho = np.asarray(report.ortho_residuals)
    sympl = np.asarray(report.sympl_residuals)
    num_steps = ortho.shape[0] - 1
    cfg = report.config or {}
    dt = float(cfg.get("dt", 1.0))
    for tau in range(num_steps + 1):
        fp = report.fp_iterations[tau - 1] if tau >= 1 and report.fp_iterations is not None else None
        dr = report.dmd_ranks[tau - 1] if tau >= 1 and report.dmd_ranks is not None else None
        sc = report.s_conds[tau - 1] if tau >= 1 and report.s_conds is not None else None
        rows.append([tau, tau * dt, ortho[tau], sympl[tau], fp, dr, sc])
    return header, rows


def _timing_table(report):
    header = ["phase", "total_seconds", "num_intervals", "per_interval_median_seconds"]
    rows = []
    for phase in sorted(report.phase_totals or {}):
        total = report.phase_totals[phase]
        series = (report.phase_series or {}).get(phase)
        if series is not None and len(series):
            arr = np.asarray(series, dtype=float)
            rows.append([phase, total, arr.size, float(np.median(arr))])
        else:
            rows.append([phase, total, 0, None])
    return header, rows


def _jsonify(value):
    if isinstance(value, dict):
        return {str(k): _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonify(v) for v in value.tolist()]
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def build_summary(report: RunReport) -> dict:
    """Acceptance-relevant scalars plus the verbatim config echo."""
    summary = {
        "config": _jsonify(report.config),
        "mode": report.mode,
        "num_params": _num_params(report),
        "params": _jsonify(report.params) if report.params is not None else [],
        "warnings": _jsonify(report.warnings or []),
        "notes": _jsonify(report.notes or {}),
        "rates": _jsonify(report.rates or {}),
        "phase_totals": _jsonify(report.phase_totals or {}),
        "dmd_imag_defect": float(report.dmd_imag_defect),
    }
    if report.ortho_residuals is not None:
        summary["max_ortho_residual"] = float(np.max(report.ortho_residuals))
        summary["max_sympl_residual"] = float(np.max(report.sympl_residuals))
    if report.fp_iterations is not None and np.size(report.fp_iterations):
        summary["max_fp_iterations"] = int(np.max(report.fp_iterations))
    if report.ham_rel_error is not None and np.size(report.ham_rel_error):
        summary["max_hamiltonian_rel_error"] = float(np.max(report.ham_rel_error))
    if report.eps_total is not None and np.size(report.eps_total):
        summary["final_eps_total"] = _jsonify(np.asarray(report.eps_total)[-1])
        summary["final_target_total"] = _jsonify(np.asarray(report.target_total)[-1])
    if report.rank_potential is not None and np.size(report.rank_potential):
        summary["max_potential_rank"] = int(np.max(report.rank_potential))
    series = report.phase_series or {}
    medians = {}
    for phase, data in series.items():
        if data is not None and len(data):
            medians[phase] = float(np.median(np.asarray(data, dtype=float)))
    if medians:
        summary["phase_medians"] = medians
    return summary


def parse_summary(path) -> dict:
    with open(path) as handle:
        return json.load(handle)


load_summary = parse_summary


def serialize(report: RunReport, outdir) -> dict:
    """Write the delimited and JSON outputs; returns {name: path}."""
    os.makedirs(outdir, exist_ok=True)
    paths = {}

    def emit(name, table):
        path = os.path.join(outdir, name)
        _write_csv(path, *table)
        paths[name] = path

    try:
        emit("energies.csv", _energy_table(report))
        emit("errors.csv", _error_table(report))
        emit("ranks.csv", _rank_table(report))
        emit("hamiltonian.csv", _hamiltonian_table(report))
        emit("structure.csv", _structure_table(report))
        emit("timings.csv", _timing_table(report))

        config_path = os.path.join(outdir, "config.json")
        with open(config_path, "w") as handle:
            json.dump(_jsonify(report.config), handle, indent=2)
        paths["config.json"] = config_path

        rates_path = os.path.join(outdir, "rates.json")
        with open(rates_path, "w") as handle:
            json.dump({"convention": RATE_CONVENTION,
                       "rates": _jsonify(report.rates or {})}, handle, indent=2)
        paths["rates.json"] = rates_path

        summary_path = os.path.join(outdir, "summary.json")
        with open(summary_path, "w") as handle:
            json.dump(build_summary(report), handle, indent=2)
        paths["summary.json"] = summary_path
    except OSError as err:
        raise OSError(f"failed writing report files under {outdir}: {err}") from err
    return paths


def render_figures(report: RunReport, outdir) -> dict:
    """Render the PNG figures next to the delimited output."""
    import matplotlib
    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    os.makedirs(outdir, exist_ok=True)
    paths = {}

    def save(fig, name):
        path = os.path.join(outdir, name)
        fig.savefig(path, dpi=130, bbox_inches="tight")
        plt.close(fig)
        paths[name] = path

    floor = 1e-300

    if report.times is not None and (report.energy_fom is not None
                                     or report.energy_rom is not None):
        fig, ax = plt.subplots(figsize=(7.0, 4.2))
        t = np.asarray(report.times)
        for data, style, label in ((report.energy_fom, "-", "full order"),
                                   (report.energy_rom, "--", "reduced")):
            if data is None:
                continue
            arr = np.maximum(np.asarray(data), floor)
            ax.semilogy(t, arr[:, 0], style, lw=1.1, label=label)
            if arr.shape[1] > 1:
                ax.semilogy(t, arr[:, 1:], style, lw=0.5, alpha=0.35)
        ax.set_xlabel("t")
        ax.set_ylabel("electric energy")
        ax.legend(loc="best")
        ax.set_title("Electric energy per parameter")
        save(fig, "energies.png")

    if report.error_times is not None and report.eps_x is not None:
        fig, axes = plt.subplots(1, 2, figsize=(10.0, 4.0), sharey=True)
        t = np.asarray(report.error_times)
        for ax, err, tgt, name in ((axes[0], report.eps_x, report.target_x, "position"),
                                   (axes[1], report.eps_v, report.target_v, "velocity")):
            ax.semilogy(t, np.maximum(np.asarray(err), floor), "-", lw=0.7, alpha=0.7)
            if tgt is not None:
                ax.semilogy(t, np.maximum(np.asarray(tgt), floor), "k--", lw=0.7, alpha=0.5)
            ax.set_xlabel("t")
            ax.set_title(f"{name} error vs cSVD target (dashed)")
        axes[0].set_ylabel("relative error")
        save(fig, "errors.png")

    has_ham = report.times is not None and report.ham_rel_error is not None
    has_decomp = report.ham_error_times is not None and report.dh_total is not None \
        and np.size(report.ham_error_times)
    if has_ham or has_decomp:
        fig, ax = plt.subplots(figsize=(7.0, 4.2))
        if has_ham:
            ax.semilogy(np.asarray(report.times),
                        np.maximum(np.asarray(report.ham_rel_error), floor),
                        "-", label="relative error")
        if has_decomp:
            td = np.asarray(report.ham_error_times)
            for data, label in ((report.dh_total, "dH total"),
                                (report.dh_coeff, "dH coefficient stage"),
                                (report.dh_coeff_dd, "dH hyper-reduced")):
                if data is not None and np.size(data):
                    ax.semilogy(td, np.maximum(np.asarray(data), floor), "o--",
                                ms=3, lw=0.8, label=label)
        ax.set_xlabel("t")
        ax.set_ylabel("Hamiltonian error")
        ax.legend(loc="best")
        save(fig, "hamiltonian.png")

    if report.rank_times is not None and report.rank_potential is not None \
            and np.size(report.rank_times):
        fig, ax = plt.subplots(figsize=(7.0, 4.0))
        ax.step(np.asarray(report.rank_times), np.asarray(report.rank_potential),
                where="post", label="potential snapshots")
        state_times = (report.notes or {}).get("state_rank_times")
        if report.rank_x is not None and state_times is not None:
            ax.step(np.asarray(state_times), np.asarray(report.rank_x),
                    where="post", label="complex state snapshots")
        ax.set_xlabel("t")
        ax.set_ylabel("numerical rank")
        ax.legend(loc="best")
        save(fig, "ranks.png")

    if report.phase_totals:
        fig, ax = plt.subplots(figsize=(6.5, 4.0))
        names = sorted(report.phase_totals)
        ax.bar(range(len(names)), [report.phase_totals[n] for n in names])
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylabel("seconds")
        ax.set_title("Wall time per phase")
        save(fig, "timings.png")

    rates = report.rates or {}
    damping = None
    for key in ("rom", "fom"):
        block = rates.get(key)
        if isinstance(block, dict) and block.get("damping"):
            damping = [r for r in block["damping"] if r is not None]
            if len(damping) == _num_params(report) and len(damping) >= 4:
                break
            damping = None
    if damping is not None and report.params is not None:
        params = np.asarray(report.params)
        fig, ax = plt.subplots(figsize=(5.6, 4.4))
        sc = ax.scatter(params[:, 0], params[:, 1], c=damping, cmap="viridis", s=40)
        fig.colorbar(sc, ax=ax, label="damping rate")
        ax.set_xlabel("perturbation amplitude")
        ax.set_ylabel("thermal spread")
        ax.set_title("Fitted damping rate over the parameter box")
        save(fig, "rates.png")

    return paths


def write_report(report: RunReport, outdir, figures=True) -> dict:
    paths = serialize(report, outdir)
    if figures:
        paths.update(render_figures(report, outdir))
    return paths
