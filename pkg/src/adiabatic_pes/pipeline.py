"""End-to-end study driver: reference dynamics, optional degradation, inversion, energies."""
from __future__ import annotations

import csv
import json
import logging
import platform
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import RunConfig, validate_config, ConfigError
from .exact2e import adiabatic_run, ground_state, instantaneous_overlap, density as pair_density
from .fci import DeterminantBasis, FCIHamiltonian, fci_adiabatic_run, ground_state_fci, s_squared
from .grid import Grid1D
from .inversion import InversionSettings, initial_inversion, ks_selfcheck, ks_trajectory_inversion, occupations_for
from .measurement import (
    NoiseSpec,
    SmoothingSpec,
    apply_rdm_noise,
    noisy_trajectory,
    smoothed_trajectory,
    spline_interpolate_derivatives,
)
from .multiproduct import MultiproductScheme, PairSplitSystem, mp_step
from .pes import EnergyBreakdown, assemble_pes, line_integral_accumulate
from .systems import HarmonicTrap, Schedule, SoftCoulombLiH, external_potential
from .trajectory import DensityTrajectory, write_binary

log = logging.getLogger(__name__)

MANIFEST_SCHEMA = 1


def build_grid(cfg: RunConfig) -> Grid1D:
    return Grid1D(cfg.system.n_points, cfg.system.dx, cfg.system.x0)


def build_system(cfg: RunConfig):
    s = cfg.system
    if s.kind == "lih":
        return SoftCoulombLiH(s.soft_a, s.soft_b, 0.6 if s.soft_ee is None else s.soft_ee)
    if s.kind == "harmonic":
        return HarmonicTrap(
            cfg.schedule.start, cfg.schedule.end, 4.0 if s.soft_ee is None else s.soft_ee, s.prefactor
        )
    raise ConfigError(f"unknown system kind {s.kind!r}")


def build_schedule(cfg: RunConfig) -> Schedule:
    sch = cfg.schedule
    return Schedule(sch.total_time, sch.start, sch.end, sch.mode)


@dataclass
class ReferenceData:
    """Exact per-channel trajectories on the fine reference mesh plus what the inversion needs."""

    channels: dict
    rdm0: dict
    occupations: dict
    initial_energy: float
    final_overlap: float
    ground_energy: object
    diagnostics: dict = field(default_factory=dict)
    initial_amplitudes: np.ndarray | None = None


def reference_run(cfg: RunConfig, grid: Grid1D, system, schedule: Schedule) -> ReferenceData:
    sch = cfg.schedule
    ref_dt = sch.reference_dt or sch.dt
    t_end = schedule.total_time
    v_end = external_potential(system, schedule, t_end, grid)
    if cfg.system.kind == "lih":
        spin = cfg.system.spin
        run = adiabatic_run(system, grid, schedule, ref_dt, symmetry=spin, record_stride=1)
        channel = "total" if spin == "singlet" else "alpha"

        def e_gs(v):
            return ground_state(system, grid, symmetry=spin, v_ext=v)[1]

        return ReferenceData(
            channels={channel: run.trajectory},
            rdm0={channel: run.rdms[0]},
            occupations={channel: occupations_for(spin)},
            initial_energy=run.initial_energy,
            final_overlap=instantaneous_overlap(run.final_state, system, v_end),
            ground_energy=e_gs,
            diagnostics={"norm_drift": run.norm_drift, "symmetry_residual": run.symmetry_residual},
            initial_amplitudes=run.initial_state.amplitudes,
        )
    s = cfg.system
    run = fci_adiabatic_run(system, grid, schedule, ref_dt, s.n_alpha, s.n_beta, record_stride=1)
    ham = FCIHamiltonian(system, grid, DeterminantBasis(grid.n_points, s.n_alpha, s.n_beta))

    def e_gs(v):
        return ground_state_fci(ham, v)[1]

    gs_end, _ = ground_state_fci(ham, v_end)
    return ReferenceData(
        channels=dict(run.trajectories),
        rdm0={ch: r[0] for ch, r in run.rdms.items()},
        occupations={ch: occupations_for(int(round(tr.n_electrons))) for ch, tr in run.trajectories.items()},
        initial_energy=run.initial_energy,
        final_overlap=float(abs(gs_end.overlap(run.final_state)) ** 2),
        ground_energy=e_gs,
        diagnostics={
            "norm_drift": run.norm_drift,
            "s_squared_initial": s_squared(run.initial_state),
            "s_squared_final": s_squared(run.final_state),
        },
    )


def _on_mesh(traj: DensityTrajectory, every: int) -> DensityTrajectory:
    idx = np.arange(0, len(traj), every)
    return replace(
        traj, times=traj.times[idx], rho=traj.rho[idx], drho_dt=traj.drho_dt[idx],
        d2rho_dt2=traj.d2rho_dt2[idx], stride=traj.stride * every, meta=dict(traj.meta),
    )


def multiproduct_samples(system, grid, schedule, psi0, interval: float, n_steps: int, scheme=None):
    """Pair densities after each multiproduct step of length ``interval``, t=0 included."""
    scheme = scheme or MultiproductScheme((1, 2, 6))
    split = PairSplitSystem(system, grid, schedule)
    psi = np.asarray(psi0, dtype=complex)
    rho = [2.0 * grid.dx * np.sum(np.abs(psi) ** 2, axis=1)]
    deficits = []
    for k in range(n_steps):
        psi, d = mp_step(psi, scheme, split, k * interval, interval)
        psi = psi / (grid.dx * np.linalg.norm(psi))
        rho.append(2.0 * grid.dx * np.sum(np.abs(psi) ** 2, axis=1))
        deficits.append(d)
    return np.array(rho), np.array(deficits)


@dataclass
class Targets:
    channels: dict
    rdm0: dict
    raw: dict = field(default_factory=dict)


def build_targets(cfg: RunConfig, ref: ReferenceData, grid, system, schedule) -> Targets:
    sch, p = cfg.schedule, cfg.pipeline
    ref_dt = sch.reference_dt or sch.dt
    every = int(round(sch.dt / ref_dt)) * sch.record_stride
    mesh = {ch: _on_mesh(tr, every) for ch, tr in ref.channels.items()}
    if p.kind == "exact":
        return Targets(mesh, dict(ref.rdm0))
    if p.kind == "sparse_spline":
        stride = int(round(p.sample_interval / ref_dt))
        n_samples = int(round(sch.total_time / p.sample_interval))
        out = {}
        raw = {}
        for ch, tr in ref.channels.items():
            idx = np.arange(0, len(tr), stride)
            sample_t = tr.times[idx]
            if p.sample_source == "multiproduct":
                samples, deficits = multiproduct_samples(
                    system, grid, schedule, ref.initial_amplitudes, p.sample_interval, n_samples
                )
                raw["mp_norm_deficit"] = float(np.mean(np.abs(deficits)))
            else:
                samples = tr.rho[idx]
            fine = mesh[ch]
            rho, d1, d2 = spline_interpolate_derivatives(sample_t, samples, fine.times, cfg.smoothing.spline_degree)
            out[ch] = DensityTrajectory(
                grid, fine.times, rho, d1, d2, provenance="sampled", n_electrons=tr.n_electrons,
                stride=fine.stride, meta={"n_samples": len(idx) - 1},
            )
            raw[ch] = samples
        return Targets(out, dict(ref.rdm0), raw)
    if p.kind == "noisy_smoothed":
        nz = cfg.noise
        sm = SmoothingSpec(cfg.smoothing.lowess_window, cfg.smoothing.spline_degree,
                           cfg.smoothing.knot_stride, cfg.smoothing.renormalize)
        out, rdm0, raw = {}, {}, {}
        for ci, (ch, tr) in enumerate(sorted(mesh.items())):
            spec = NoiseSpec(nz.shots, nz.seed + 1000003 * ci, nz.model)
            noisy = noisy_trajectory(tr, spec)
            smooth = smoothed_trajectory(noisy, sm)
            out[ch] = smooth
            raw[ch] = noisy.rho
            if nz.noisy_rdm:
                rdm0[ch] = apply_rdm_noise(ref.rdm0[ch], grid.dx, tr.n_electrons, spec, diagonal=smooth.rho[0])
            else:
                rdm0[ch] = ref.rdm0[ch]
        return Targets(out, rdm0, raw)
    raise ConfigError(f"pipeline {p.kind!r} does not produce density targets")


@dataclass
class RunResult:
    config: RunConfig
    pes: EnergyBreakdown
    full_line_integral: np.ndarray
    inversions: dict
    reference: ReferenceData
    targets: Targets
    summary: dict
    density_errors: dict


def run_pipeline(cfg: RunConfig) -> RunResult:
    rep = validate_config(cfg)
    if not rep.ok:
        raise ConfigError("; ".join(rep.errors))
    grid, system, schedule = build_grid(cfg), build_system(cfg), build_schedule(cfg)
    t0 = time.perf_counter()
    ref = reference_run(cfg, grid, system, schedule)
    t_ref = time.perf_counter() - t0
    targets = build_targets(cfg, ref, grid, system, schedule)

    def v_fn(t):
        return external_potential(system, schedule, t, grid)

    inv_cfg = cfg.inversion
    settings = InversionSettings(
        regularization=inv_cfg.regularization, prior=inv_cfg.prior, predictor=inv_cfg.predictor,
        propagator=inv_cfg.propagator, feedback_rho=inv_cfg.feedback_rho,
        feedback_rate=inv_cfg.feedback_rate, drift_threshold=inv_cfg.drift_threshold,
        selfcheck_stride=cfg.pipeline.reference_stride,
    )
    inversions, initial = {}, {}
    v0 = v_fn(0.0)
    for ch, tr in targets.channels.items():
        ks = initial_inversion(
            tr.rho[0], targets.rdm0[ch], v0, ref.occupations[ch], grid,
            tol=inv_cfg.tol, max_iter=inv_cfg.max_iter, spin_channel=ch,
        )
        initial[ch] = ks
        inversions[ch] = ks_trajectory_inversion(ks, tr, v_fn, settings)

    chans = list(targets.channels)
    first = targets.channels[chans[0]]
    times = first.times
    li = line_integral_accumulate(
        [inversions[c].v_ks for c in chans], [targets.channels[c].drho_dt for c in chans], grid.dx, first.dt
    )
    v_series = np.array([v_fn(t) for t in times])
    params = np.array([schedule.parameter(t) for t in times])
    pes = assemble_pes(
        times, params, [inversions[c].t_s for c in chans], v_series,
        [targets.channels[c].rho for c in chans], li, ref.initial_energy, grid.dx,
    )

    idx = np.arange(0, len(times), cfg.pipeline.reference_stride)
    if idx[-1] != len(times) - 1:
        idx = np.append(idx, len(times) - 1)
    e_exact = np.array([ref.ground_energy(v_series[i]) for i in idx])
    # self-check on the total density at the reference points
    rho_exact = {c: _on_mesh(ref.channels[c], int(round(cfg.schedule.dt / (cfg.schedule.reference_dt or cfg.schedule.dt))) * cfg.schedule.record_stride) for c in chans}
    dens_err = np.empty(len(idx))
    per_channel = {c: np.empty(len(idx)) for c in chans}
    for k, i in enumerate(idx):
        tot_tilde = 0.0
        tot_target = 0.0
        for c in chans:
            rt, e = ks_selfcheck(inversions[c].v_ks[i], v_series[i], ref.occupations[c],
                                 rho_exact[c].rho[i], grid)
            per_channel[c][k] = e
            tot_tilde = tot_tilde + rt
            tot_target = tot_target + rho_exact[c].rho[i]
        dens_err[k] = np.sqrt(grid.dx * np.sum((tot_target - tot_tilde) ** 2))
    pes_ref = pes.subset(idx).with_reference(e_exact, dens_err)

    summary = {
        "line_integral": float(li[-1]),
        "endpoint_energy_error": float(pes_ref.energy_error[-1]),
        "max_abs_energy_error": float(np.max(np.abs(pes_ref.energy_error))),
        "endpoint_density_error": float(dens_err[-1]),
        "max_density_error": float(np.max(dens_err)),
        "final_overlap": float(ref.final_overlap),
        "initial_energy": float(ref.initial_energy),
        "final_exact_energy": float(e_exact[-1]),
        "n_steps": int(len(times) - 1),
        "reference_seconds": round(t_ref, 3),
        "initial_inversion": {c: {"converged": bool(k.converged), "residual": float(k.residual)} for c, k in initial.items()},
        "flagged_windows": {c: inversions[c].flagged_windows for c in chans},
        "max_condition": {c: float(inversions[c].max_condition) for c in chans},
        "orthonormality_error": {c: float(inversions[c].orthonormality_error) for c in chans},
    }
    summary.update({k: float(v) for k, v in ref.diagnostics.items()})
    if "mp_norm_deficit" in targets.raw:
        summary["mp_norm_deficit"] = targets.raw["mp_norm_deficit"]
    return RunResult(cfg, pes_ref, li, inversions, ref, targets, summary,
                     {"times": times[idx], "total": dens_err, **per_channel})


def _write_rows(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(r)
    return path


def _fmt(x) -> str:
    return repr(float(x))


def write_artifacts(result: RunResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    written = []
    wanted = set(cfg.outputs.csv)
    chans = list(result.inversions)
    if "pes" in wanted:
        written.append(result.pes.to_csv(out / "pes.csv"))
    if "vks" in wanted:
        n_x = cfg.system.n_points
        rows = []
        for c in chans:
            inv = result.inversions[c]
            for i in range(0, len(inv.times), cfg.outputs.vks_stride):
                rows.append([_fmt(inv.times[i]), c] + [_fmt(v) for v in inv.v_ks[i]])
        written.append(_write_rows(out / "vks.csv", ["t", "channel"] + [f"v{j}" for j in range(n_x)], rows))
    if "density_error" in wanted:
        de = result.density_errors
        rows = []
        for k, t in enumerate(de["times"]):
            rows.append([_fmt(t), "total", _fmt(de["total"][k]), ""])
        for c in chans:
            inv = result.inversions[c]
            for t, e in zip(inv.selfcheck_times, inv.density_error):
                i = int(round((t - inv.times[0]) / (inv.times[1] - inv.times[0])))
                rows.append([_fmt(t), c, _fmt(e), _fmt(inv.density_deviation[i])])
        written.append(_write_rows(out / "density_error.csv", ["t", "channel", "density_error", "density_deviation"], rows))
    if "smoothing_report" in wanted and cfg.pipeline.kind == "noisy_smoothed":
        c = chans[0]
        tgt = result.targets.channels[c]
        step = int(round(cfg.schedule.dt / (cfg.schedule.reference_dt or cfg.schedule.dt))) * cfg.schedule.record_stride
        exact = _on_mesh(result.reference.channels[c], step)
        j = cfg.system.n_points // 2
        rows = [
            [_fmt(t), _fmt(exact.rho[i, j]), _fmt(result.targets.raw[c][i, j]), _fmt(tgt.rho[i, j]),
             _fmt(exact.d2rho_dt2[i, j]), _fmt(tgt.d2rho_dt2[i, j])]
            for i, t in enumerate(tgt.times)
        ]
        written.append(_write_rows(out / "smoothing_report.csv",
                                   ["t", "exact", "noisy", "smoothed", "d2_exact", "d2_spline"], rows))
    if "trajectory" in wanted:
        for c, tr in result.targets.channels.items():
            written.append(write_binary(tr, out / f"trajectory_{c}.bin"))
    return written


def versions() -> dict:
    return {
        "adiabatic_pes": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def write_manifest(out_dir, cfg: RunConfig, status: str, wall: float, summary=None, error=None,
                   artifacts=()) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "schema_version": MANIFEST_SCHEMA,
        "status": status,
        "config": cfg.to_dict(),
        "seeds": {"noise": cfg.noise.seed},
        "versions": versions(),
        "wall_time_seconds": round(wall, 3),
        "artifacts": sorted(Path(a).name for a in artifacts),
        "summary": summary or {},
    }
    if error is not None:
        doc["error"] = error
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)
