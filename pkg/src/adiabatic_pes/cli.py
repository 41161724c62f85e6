"""Command-line entry point: run, validate, batch, mp-bench."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, load_config, validate_config

log = logging.getLogger("adiabatic_pes")


def _limit_threads(n):
    if n:
        from threadpoolctl import threadpool_limits

        threadpool_limits(int(n))


def _prepare(path, out=None, seed=None):
    cfg = load_config(path)
    if seed is not None:
        cfg.noise = replace(cfg.noise, seed=int(seed))
    out_dir = Path(out) if out else Path(cfg.outputs.directory)
    return cfg, out_dir


def run_one(path, out=None, seed=None) -> int:
    from .pipeline import run_pipeline, write_artifacts, write_manifest

    try:
        cfg, out_dir = _prepare(path, out, seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if cfg.is_benchmark:
        return bench_one(cfg, out_dir)
    start = time.perf_counter()
    try:
        result = run_pipeline(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, RuntimeError, ValueError, FloatingPointError) as exc:
        write_manifest(out_dir, cfg, "failed", time.perf_counter() - start, error=f"{type(exc).__name__}: {exc}")
        print(f"run failed: {exc}", file=sys.stderr)
        return 3
    files = write_artifacts(result, out_dir)
    write_manifest(out_dir, cfg, "ok", time.perf_counter() - start, result.summary, artifacts=files)
    s = result.summary
    print(
        f"{cfg.name}: line integral {s['line_integral']:.7f}  endpoint energy error "
        f"{s['endpoint_energy_error']:.2e}  max |energy error| {s['max_abs_energy_error']:.2e}  "
        f"endpoint density error {s['endpoint_density_error']:.2e}  -> {out_dir}"
    )
    return 0


def bench_one(cfg, out_dir) -> int:
    from .multiproduct import convergence_slopes, vandijk_benchmark
    from .pipeline import _write_rows, write_manifest

    start = time.perf_counter()
    b = cfg.benchmark
    rep = validate_config(cfg)
    if not rep.ok:
        print("config error: " + "; ".join(rep.errors), file=sys.stderr)
        return 2
    rows = vandijk_benchmark(b.dts, b.orders, b.t_final, b.n_points, b.length)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = _write_rows(
        out_dir / "mp_benchmark.csv", ["dt", "M", "error", "mean_norm_deficit"],
        [[repr(r.dt), r.order, repr(r.error), repr(r.mean_norm_deficit)] for r in rows],
    )
    slopes = convergence_slopes(rows)
    write_manifest(out_dir, cfg, "ok", time.perf_counter() - start,
                   {"slopes": {str(k): v for k, v in slopes.items()}}, artifacts=[path])
    for r in rows:
        print(f"dt={r.dt:<8g} M={r.order}  error={r.error:.3e}  norm deficit={r.mean_norm_deficit:.2e}")
    print("slopes: " + ", ".join(f"M={k}: {v:.2f}" for k, v in slopes.items()))
    return 0


def _run_in_dir(args):
    path, out_root, seed = args
    out = Path(out_root) / Path(path).stem if out_root else None
    return str(path), run_one(path, out, seed)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="adiabatic-pes", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one study config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", help="artifact directory (overrides [outputs] directory)")
    p_run.add_argument("--seed-override", type=int)
    p_run.add_argument("--threads", type=int, default=0, help="BLAS thread cap")

    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("--config", required=True)

    p_batch = sub.add_parser("batch", help="run several configs, each into its own directory")
    p_batch.add_argument("--config", required=True, nargs="+")
    p_batch.add_argument("--out", help="root directory; each run writes to <out>/<config stem>")
    p_batch.add_argument("--seed-override", type=int)
    p_batch.add_argument("--threads", type=int, default=1, help="concurrent runs")

    p_mp = sub.add_parser("mp-bench", help="multiproduct convergence table on the analytic benchmark")
    p_mp.add_argument("--config")
    p_mp.add_argument("--out", default="runs/mp_benchmark")
    p_mp.add_argument("--threads", type=int, default=0)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "validate":
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            print(f"error: {exc}")
            return 2
        rep = validate_config(cfg)
        for line in rep.lines():
            print(line)
        return 0 if rep.ok else 2
    if args.command == "run":
        _limit_threads(args.threads)
        return run_one(args.config, args.out, args.seed_override)
    if args.command == "batch":
        jobs = [(c, args.out, args.seed_override) for c in args.config]
        if args.threads > 1:
            with ProcessPoolExecutor(args.threads) as pool:
                results = list(pool.map(_run_in_dir, jobs))
        else:
            results = [_run_in_dir(j) for j in jobs]
        for path, code in results:
            print(f"{path}: exit {code}")
        return max(code for _, code in results)
    if args.command == "mp-bench":
        _limit_threads(args.threads)
        from .config import RunConfig, PipelineConfig

        if args.config:
            try:
                cfg = load_config(args.config)
            except ConfigError as exc:
                print(f"config error: {exc}", file=sys.stderr)
                return 2
        else:
            cfg = RunConfig(name="mp_benchmark", pipeline=PipelineConfig(kind="mp_benchmark"))
        return bench_one(cfg, Path(args.out))
    return 1


if __name__ == "__main__":
    sys.exit(main())
