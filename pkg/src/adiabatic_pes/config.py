"""Strict TOML run configuration.

Every section is a dataclass; keys not declared on the dataclass are rejected
with the offending section and key named. All quantities are atomic units.
"""
from __future__ import annotations

import json
import math
import sys
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class SystemConfig:
    kind: str = "lih"
    n_points: int = 32
    dx: float = 0.6
    x0: float | None = None
    spin: str = "singlet"
    n_alpha: int = 1
    n_beta: int = 1
    soft_a: float = 0.7
    soft_b: float = 2.25
    soft_ee: float | None = None
    prefactor: float = 0.5


@dataclass
class ScheduleConfig:
    mode: str = "geometric"
    total_time: float = 144.0
    start: float = 0.25
    end: float = 4.25
    dt: float = 0.012
    reference_dt: float | None = None
    record_stride: int = 1


@dataclass
class PipelineConfig:
    kind: str = "exact"
    sample_interval: float = 0.4
    sample_source: str = "exact"
    reference_stride: int = 100


@dataclass
class NoiseConfig:
    shots: int = 10000
    seed: int = 0
    model: str = "gaussian_binomial"
    noisy_rdm: bool = True


@dataclass
class SmoothingConfig:
    lowess_window: int = 1000
    spline_degree: int = 4
    knot_stride: int = 300
    renormalize: bool = True


@dataclass
class InversionConfig:
    tol: float = 1e-8
    max_iter: int = 200
    regularization: float = 1e-12
    prior: str = "zero"
    predictor: bool = True
    propagator: str = "exact"
    feedback_rho: float = 100.0
    feedback_rate: float = 20.0
    drift_threshold: float = 1e-2


@dataclass
class BenchmarkConfig:
    dts: list = field(default_factory=lambda: [0.2, 0.1, 0.05])
    orders: list = field(default_factory=lambda: [1, 2, 3])
    t_final: float = 1.0
    n_points: int = 256
    length: float = 40.0


@dataclass
class OutputsConfig:
    directory: str = "runs/out"
    csv: list = field(default_factory=lambda: ["pes", "vks", "density_error"])
    vks_stride: int = 100


@dataclass
class RunConfig:
    name: str = "run"
    system: SystemConfig = field(default_factory=SystemConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    inversion: InversionConfig = field(default_factory=InversionConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    outputs: OutputsConfig = field(default_factory=OutputsConfig)

    @property
    def is_benchmark(self) -> bool:
        return self.pipeline.kind == "mp_benchmark"

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {f.name: f.default_factory for f in fields(RunConfig) if f.name != "name"}
_PIPELINES = ("exact", "sparse_spline", "noisy_smoothed", "mp_benchmark")


def _coerce(section: str, key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"[{section}] {key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"[{section}] {key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float) or default is None:
        if isinstance(value, bool):
            raise ConfigError(f"[{section}] {key}: expected a number, got {value!r}")
        if isinstance(value, (int, float)):
            return float(value)
        if default is None and isinstance(value, str):
            return value
        raise ConfigError(f"[{section}] {key}: expected a number, got {value!r}")
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"[{section}] {key}: expected a string, got {value!r}")
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"[{section}] {key}: expected a list, got {value!r}")
    return value


def _build_section(section: str, raw: dict):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{section}] must be a table")
    obj = _SECTIONS[section]()
    known = {f.name: f for f in fields(obj)}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{section}]; allowed: {', '.join(sorted(known))}")
        setattr(obj, key, _coerce(section, key, value, getattr(obj, key)))
    return obj


def config_from_dict(data: dict) -> RunConfig:
    cfg = RunConfig()
    for key, value in data.items():
        if key == "name":
            if not isinstance(value, str):
                raise ConfigError("name must be a string")
            cfg.name = value
        elif key in _SECTIONS:
            setattr(cfg, key, _build_section(key, value))
        else:
            raise ConfigError(f"unknown top-level key {key!r}; allowed: name, {', '.join(_SECTIONS)}")
    if cfg.pipeline.kind not in _PIPELINES:
        raise ConfigError(f"[pipeline] kind: unknown pipeline {cfg.pipeline.kind!r}")
    return cfg


def load_config(path) -> RunConfig:
    """Read a TOML config, or the ``config`` table of a run manifest (JSON)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if path.suffix == ".json":
        try:
            data = json.loads(text)["config"]
        except (json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"{path}: not a run manifest ({exc})") from exc
        return config_from_dict(_drop_none(data))
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data)


def _drop_none(d):
    if isinstance(d, dict):
        return {k: _drop_none(v) for k, v in d.items() if v is not None}
    return d


def _steps(total: float, step: float) -> int | None:
    n = round(total / step)
    return n if n > 0 and math.isclose(n * step, total, rel_tol=1e-9, abs_tol=1e-12) else None


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def lines(self) -> list[str]:
        out = [f"error: {e}" for e in self.errors] + [f"warning: {w}" for w in self.warnings]
        return out or ["OK"]


def validate_config(cfg: RunConfig) -> ValidationReport:
    """Cross-field feasibility checks; never touches the filesystem."""
    rep = ValidationReport()
    err, warn = rep.errors.append, rep.warnings.append
    if cfg.is_benchmark:
        b = cfg.benchmark
        if not b.dts or any(d <= 0 for d in b.dts):
            err("[benchmark] dts must be positive")
        for d in b.dts:
            if _steps(b.t_final, d) is None:
                err(f"[benchmark] dt={d} does not divide t_final={b.t_final}")
        if any(m not in (1, 2, 3) for m in b.orders):
            err("[benchmark] orders must be drawn from 1, 2, 3")
        return rep

    s, sch, p = cfg.system, cfg.schedule, cfg.pipeline
    if s.kind not in ("lih", "harmonic"):
        err(f"[system] kind: unknown system {s.kind!r}")
    if s.n_points < 2 or s.dx <= 0:
        err("[system] n_points must be >= 2 and dx positive")
    if s.kind == "lih" and s.spin not in ("singlet", "triplet"):
        err(f"[system] spin must be singlet or triplet, got {s.spin!r}")
    if s.kind == "harmonic":
        if s.n_alpha < 0 or s.n_beta < 0 or s.n_alpha + s.n_beta == 0:
            err("[system] need at least one electron")
        if max(s.n_alpha, s.n_beta) > s.n_points:
            err("[system] more electrons of one spin than grid points")
    if sch.mode not in ("geometric", "hamiltonian_mix"):
        err(f"[schedule] mode: unknown mode {sch.mode!r}")
    if sch.dt <= 0 or sch.total_time <= 0:
        err("[schedule] dt and total_time must be positive")
        return rep
    n_steps = _steps(sch.total_time, sch.dt)
    if n_steps is None:
        err(f"[schedule] dt={sch.dt} does not divide total_time={sch.total_time}")
        return rep
    if sch.record_stride < 1 or n_steps % sch.record_stride:
        err(f"[schedule] record_stride={sch.record_stride} does not divide {n_steps} steps")
    ref_dt = sch.reference_dt or sch.dt
    if _steps(sch.dt, ref_dt) is None:
        err(f"[schedule] reference_dt={ref_dt} does not divide dt={sch.dt}")
    n_rec = n_steps // max(sch.record_stride, 1) + 1
    if p.reference_stride < 1:
        err("[pipeline] reference_stride must be >= 1")

    length = s.n_points * s.dx
    if s.kind == "lih":
        reach = max(abs(sch.start), abs(sch.end)) / 2.0 + 3.0 * math.sqrt(s.soft_b)
        if reach > length / 2.0:
            warn(f"grid half-width {length / 2:.2f} is small next to nuclear reach {reach:.2f}")
        if s.dx > math.sqrt(s.soft_a):
            warn(f"dx={s.dx} exceeds the softening length {math.sqrt(s.soft_a):.3f}")
    if s.kind == "lih" and s.n_points > 64:
        warn("large pair grid; the exact engine stores N^2 amplitudes")

    if p.kind == "sparse_spline":
        if _steps(p.sample_interval, ref_dt) is None:
            err(f"[pipeline] sample_interval={p.sample_interval} is not a multiple of reference_dt={ref_dt}")
        n_samples = _steps(sch.total_time, p.sample_interval)
        if n_samples is None:
            err(f"[pipeline] sample_interval={p.sample_interval} does not divide total_time={sch.total_time}")
        elif n_samples + 1 < cfg.smoothing.spline_degree + 1:
            err(f"{n_samples + 1} samples cannot support a degree-{cfg.smoothing.spline_degree} spline")
        if p.sample_source not in ("exact", "multiproduct"):
            err(f"[pipeline] sample_source: unknown source {p.sample_source!r}")
        if p.sample_source == "multiproduct" and s.kind != "lih":
            err("[pipeline] multiproduct sampling is only wired for the two-electron engine")
    if p.kind == "noisy_smoothed":
        sm = cfg.smoothing
        if sm.lowess_window > n_rec:
            err(f"[smoothing] lowess_window={sm.lowess_window} exceeds series length {n_rec}")
        if sm.lowess_window < sm.spline_degree + 1:
            err("[smoothing] lowess_window must be at least spline_degree + 1")
        if sm.knot_stride < 1:
            err("[smoothing] knot_stride must be >= 1")
        else:
            n_knots = len(range(0, n_rec, sm.knot_stride)) + (1 if (n_rec - 1) % sm.knot_stride else 0)
            if n_knots < sm.spline_degree + 1:
                err(f"[smoothing] {n_knots} knots cannot support a degree-{sm.spline_degree} spline")
        if cfg.noise.shots < 1:
            err("[noise] shots must be >= 1")
        if cfg.noise.model not in ("gaussian_binomial", "multinomial"):
            err(f"[noise] model: unknown model {cfg.noise.model!r}")
    inv = cfg.inversion
    if inv.propagator not in ("exact", "split"):
        err(f"[inversion] propagator: unknown propagator {inv.propagator!r}")
    if inv.prior not in ("zero", "initial"):
        err(f"[inversion] prior: unknown prior {inv.prior!r}")
    if inv.regularization < 0:
        err("[inversion] regularization must be >= 0")
    bad_csv = set(cfg.outputs.csv) - {"pes", "vks", "density_error", "smoothing_report", "trajectory"}
    if bad_csv:
        err(f"[outputs] csv: unknown outputs {sorted(bad_csv)}")
    return rep
