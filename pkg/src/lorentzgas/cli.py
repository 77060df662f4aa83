"""Command-line runner.

    lorentzgas simulate [options]
    lorentzgas experiment NAME [options]

Each run writes ``report.json`` plus experiment-specific CSV files into the
output directory.  Outputs depend only on the resolved configuration and the
package version; the thread count never changes them.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import shutil
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    bump_observable,
    chaos_covariance,
    exponential_cdf,
    free_path_samples,
    ks_statistic,
    loop_probability,
    marginal_measure,
    report_json,
    tv_distance,
)
from .config import EXPERIMENTS, ExperimentConfig, parse_config
from .dynamics import (
    PhaseState,
    _loop_report,
    advance_boltzmann,
    advance_lorentz,
    advance_markovian,
    path_seeds,
    run_ensemble,
    start_states,
    trajectories_to_csv,
)
from .errors import LorentzGasError, ParseError, ValidationError
from .geometry import validate_params
from .oracles import OracleResult, passage_sum_direct, passage_sum_fourier, PassageProfile
from .rng import ObstacleDensity

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

ORACLE_BETAS = (0.05, 0.3, 0.7)
ORACLE_NS = (11, 101, 1001)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _est(name, value, stderr=0.0, n=0) -> dict:
    return {"name": name, "value": float(value), "stderr": float(stderr), "n": int(n)}


# ---------------------------------------------------------------------------
# experiments; each returns (estimates, histogram file names) and writes into ``out``


def _trajectory(cfg, start, seed, density, params):
    if cfg.process == "boltzmann":
        return advance_boltzmann(start, cfg.rate, cfg.t_max, seed)
    run = advance_lorentz if cfg.process == "lorentz" else advance_markovian
    return run(start, params, seed, density, cfg.t_max)


def run_simulate(cfg: ExperimentConfig, out: Path, threads: int):
    density = ObstacleDensity(cfg.phi)
    params = validate_params(cfg.epsilon, cfg.nu)
    starts = start_states(cfg.seed, cfg.n_paths, cfg.start_window)
    seeds = path_seeds(cfg.seed, cfg.n_paths)
    trajs = [
        _trajectory(cfg, PhaseState(s[:2], s[2:]), int(k), density, params) for s, k in zip(starts, seeds)
    ]
    with open(out / "trajectories.csv", "w", newline="", encoding="utf-8") as fh:
        trajectories_to_csv(trajs, fh)
    counts = np.array([t.n_collisions for t in trajs], dtype=float)
    se = counts.std(ddof=1) / math.sqrt(len(counts)) if len(counts) > 1 else 0.0
    return [_est("mean_collisions", counts.mean(), se, len(counts))], []


def run_free_path(cfg, out, threads):
    density = ObstacleDensity(cfg.phi)
    params = validate_params(cfg.epsilon, cfg.nu)
    res = run_ensemble(cfg.process, cfg.n_paths, cfg.t_max, cfg.seed, params=params, density=density,
                       rate=cfg.rate, window=cfg.start_window, threads=threads)
    samples = free_path_samples(res)
    gaps = samples.interior
    est = [
        _est("interior_gap_count", gaps.size, 0.0, gaps.size),
        _est("censored_gap_count", samples.censored.size, 0.0, samples.censored.size),
    ]
    if gaps.size:
        se = gaps.std(ddof=1) / math.sqrt(gaps.size) if gaps.size > 1 else 0.0
        est.append(_est("mean_interior_gap", gaps.mean(), se, gaps.size))
        est.append(_est("ks_vs_exponential", ks_statistic(gaps, exponential_cdf(2.0)), 0.0, gaps.size))
    ncoll = res.n_collisions.astype(float)
    est.append(_est("collision_rate", ncoll.sum() / (cfg.t_max * ncoll.size), 0.0, ncoll.size))
    edges = np.linspace(0.0, 4.0 / 2.0, 41)
    hist, _ = np.histogram(gaps, bins=edges)
    expected = gaps.size * np.diff(-np.exp(-2.0 * edges)) if gaps.size else np.zeros(len(hist))
    _write_csv(out / "free_path_histogram.csv", ["bin_left", "bin_right", "count", "expected_exp2"],
               [[_fmt(a), _fmt(b), int(c), _fmt(e)] for a, b, c, e in zip(edges[:-1], edges[1:], hist, expected)])
    return est, ["free_path_histogram.csv"]


def run_marginals(cfg, out, threads):
    density = ObstacleDensity(cfg.phi)
    params = validate_params(cfg.epsilon, cfg.nu)
    m = marginal_measure(cfg.process, params, density, cfg.t_max, cfg.n_paths, cfg.seed, cfg.start_window,
                         cfg.grid, rate=cfg.rate, threads=threads)
    ref = marginal_measure("boltzmann", None, None, cfg.t_max, cfg.n_paths, cfg.seed, cfg.start_window, cfg.grid,
                           rate=cfg.rate, threads=threads)
    with open(out / "marginal.csv", "w", newline="", encoding="utf-8") as fh:
        m.to_csv(fh)
    with open(out / "marginal_boltzmann.csv", "w", newline="", encoding="utf-8") as fh:
        ref.to_csv(fh)
    est = [_est("tv_to_boltzmann", tv_distance(m, ref), 0.0, cfg.n_paths)]
    return est, ["marginal.csv", "marginal_boltzmann.csv"]


def run_loops(cfg, out, threads):
    density = ObstacleDensity(cfg.phi)
    params = validate_params(cfg.epsilon, cfg.nu)
    if cfg.process == "boltzmann":
        return [_est("loop_probability", 0.0, 0.0, cfg.n_paths)], []
    e = loop_probability(params, density, cfg.process, cfg.t_max, cfg.n_paths, cfg.seed, cfg.start_window, threads)
    return [e.as_record("loop_probability")], []


def run_chaos(cfg, out, threads):
    density = ObstacleDensity(cfg.phi)
    params = validate_params(cfg.epsilon, cfg.nu)
    g1 = bump_observable((0.25, 0.0))
    g2 = bump_observable((-0.25, 0.0))
    e = chaos_covariance(g1, g2, params, density, cfg.t_max, cfg.n_paths, cfg.seed, cfg.start_window,
                         cfg.process, threads)
    return [e.as_record("covariance")], []


def run_oracle(cfg, out, threads):
    density = ObstacleDensity(cfg.phi)
    params = validate_params(cfg.epsilon, cfg.nu)
    profile = PassageProfile.indicator()
    rows, records = [], []
    worst = 0.0
    for beta in ORACLE_BETAS:
        y1 = -0.5 * math.tan(beta) + 0.01
        for n in ORACLE_NS:
            direct = passage_sum_direct(y1, beta, n, profile, params, density)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                four = passage_sum_fourier(y1, beta, n, profile, params, density)
            gap = abs(four.value - direct) / abs(direct)
            worst = max(worst, gap)
            rows.append([_fmt(beta), n, _fmt(y1), _fmt(direct), _fmt(four.value), _fmt(four.leading_term),
                         _fmt(four.remainder), _fmt(gap), four.k_max])
            inputs = {"epsilon": cfg.epsilon, "nu": cfg.nu, "phi": cfg.phi, "beta": beta, "n": n, "y1": y1}
            records.append(OracleResult(direct, 0.0, "direct summation", inputs).to_record())
            records.append(OracleResult(four.value, four.tail_estimate, "fourier-dirichlet",
                                        dict(inputs, k_max=four.k_max)).to_record())
    _write_csv(out / "oracle.csv",
               ["beta", "n", "y1", "direct", "fourier", "leading_term", "remainder", "relative_gap", "k_max"], rows)
    (out / "oracle_records.json").write_text(json.dumps(records, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return [_est("max_relative_gap", worst, 0.0, len(rows))], []


def run_coupling(cfg, out, threads):
    density = ObstacleDensity(cfg.phi)
    params = validate_params(cfg.epsilon, cfg.nu)
    starts = start_states(cfg.seed, cfg.n_paths, cfg.start_window)
    seeds = path_seeds(cfg.seed, cfg.n_paths)
    rows = []
    n_loop = 0
    all_ok = True
    for i, (s, k) in enumerate(zip(starts, seeds)):
        st = PhaseState(s[:2], s[2:])
        q = advance_lorentz(st, params, int(k), density, cfg.t_max)
        m = advance_markovian(st, params, int(k), density, cfg.t_max)
        report = _loop_report(q)
        has_loop = not report.is_empty
        n_loop += has_loop
        identical = q.same_events(m)
        if has_loop:
            cut = report.loop_events[0][0] / params.sqrt_eps
            nq = int(np.searchsorted(q.t, cut, side="left"))
            nm = int(np.searchsorted(m.t, cut, side="left"))
            prefix = nq == nm and q.t[:nq].tobytes() == m.t[:nm].tobytes() and q.x[:nq].tobytes() == m.x[:nm].tobytes()
        else:
            prefix = identical
            all_ok &= identical
        rows.append([i, str(has_loop).lower(), str(prefix).lower(), str(identical).lower()])
    _write_csv(out / "coupling.csv", ["path_id", "has_loop", "identical_prefix", "identical_full"], rows)
    frac = n_loop / cfg.n_paths
    est = [
        _est("loop_fraction", frac, math.sqrt(frac * (1.0 - frac) / cfg.n_paths), cfg.n_paths),
        _est("loop_free_paths_identical", 1.0 if all_ok else 0.0, 0.0, cfg.n_paths - n_loop),
    ]
    return est, []


RUNNERS = {
    "simulate": run_simulate,
    "free-path": run_free_path,
    "marginals": run_marginals,
    "loops": run_loops,
    "chaos": run_chaos,
    "oracle": run_oracle,
    "coupling": run_coupling,
}


def run_experiment(cfg: ExperimentConfig, out_dir: str | os.PathLike | None = None, threads: int = 1) -> Path:
    """Run one experiment and move its files into ``out_dir`` only on success."""
    target = Path(out_dir if out_dir is not None else cfg.out_dir)
    target.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=target))
    try:
        estimates, hists = RUNNERS[cfg.experiment](cfg, tmp, threads)
        report = report_json(
            cfg.experiment,
            {"epsilon": cfg.epsilon, "nu": cfg.nu, "phi": cfg.phi, "process": cfg.process},
            cfg.seed,
            estimates,
            histograms=hists,
            extra={"config": cfg.resolved(), "version": __version__},
        )
        (tmp / "report.json").write_text(report, encoding="utf-8")
        for f in sorted(tmp.iterdir()):
            os.replace(f, target / f.name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return target


# ---------------------------------------------------------------------------
# argument handling


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--out", help="output directory (overrides out_dir)")
    common.add_argument("--seed", help="64-bit seed, decimal or 0x-hex")
    common.add_argument("--threads", type=int, help="worker threads (default: LORENTZ_THREADS or CPU count)")
    common.add_argument("--epsilon")
    common.add_argument("--nu")
    common.add_argument("--phi", help="uniform-disk or smooth-bump")
    common.add_argument("--process", help="lorentz, markovian or boltzmann")
    common.add_argument("--t-max", dest="t_max")
    common.add_argument("--n-paths", dest="n_paths")
    parser = argparse.ArgumentParser(prog="lorentzgas", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write trajectories of n_paths runs")
    exp = sub.add_parser("experiment", parents=[common], help="run a named experiment")
    exp.add_argument("name", choices=[e for e in EXPERIMENTS])
    return parser


def _threads(arg) -> int:
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("LORENTZ_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _error(kind: str, exc: Exception, code: int) -> int:
    record = {"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, ParseError):
        record.update(line=exc.line, column=exc.column)
    if isinstance(exc, ValidationError):
        record["problems"] = exc.problems
    sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    experiment = "simulate" if args.command == "simulate" else args.name
    overrides = {k: getattr(args, k) for k in ("seed", "epsilon", "nu", "phi", "process", "t_max", "n_paths")}
    overrides["experiment"] = experiment
    try:
        text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
        cfg = parse_config(text, overrides)
        target = Path(args.out if args.out else cfg.out_dir)
        target.mkdir(parents=True, exist_ok=True)
        if not os.access(target, os.W_OK):
            raise ValidationError([f"output directory {str(target)!r} is not writable"])
    except (ParseError, ValidationError) as exc:
        return _error("config", exc, EXIT_CONFIG)
    except OSError as exc:
        return _error("config", exc, EXIT_CONFIG)
    try:
        run_experiment(cfg, target, _threads(args.threads))
    except (LorentzGasError, ValueError, OSError, ArithmeticError) as exc:
        return _error("runtime", exc, EXIT_RUNTIME)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
