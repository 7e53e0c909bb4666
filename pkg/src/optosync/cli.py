"""Command-line front end: single runs, parameter sweeps, robustness studies.

Every command loads a YAML description, simulates, and writes CSV/JSON
artifacts with fixed schemas (documented in the README); rows use decimal
notation with 12 significant digits so reruns with the same seeds are
byte-identical.  Exit codes: 0 success, 2 configuration error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import measures
from .config import ConfigError, Scenario, SweepSpec, load_scenario, load_sweep
from .dynamics import NonFinite, Trajectory, integrate
from .measures import NonPhysical, NoOscillation, limit_cycle_stats, lyapunov_exponent
from .model import MeanState

__all__ = ["run", "sweep", "robustness_study", "run_scenario", "main"]

TRAJ_HEADER = "t,q1,p1,q2,p2,re_a,im_a,c1,c2,sg"
SWEEP_HEADER = "value,sg_avg,lyap_max,neg_max,r"
SWEEP_HEADER_REPLICAS = "value,sg_avg,sg_std,lyap_max,neg_max,neg_std,r,r_std"
ROBUSTNESS_HEADER = "sigma,r_mean,r_std,replicas"

LYAPUNOV_EPS = 1e-6


def _fmt(x: float) -> str:
    """Decimal notation, 12 significant digits, deterministic."""
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return np.format_float_positional(x, precision=12, unique=False, fractional=False, trim="-")


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# --- run -------------------------------------------------------------------------


def run_scenario(scenario: Scenario) -> tuple[Trajectory, dict]:
    """Simulate one scenario and compute its summary block."""
    traj = integrate(
        scenario.params,
        scenario.law,
        cfg=scenario.integrator,
        rng_seed=scenario.seed,
        ctrl_noise=scenario.noise_sigma,
    )
    window = scenario.tail_window
    q_err, p_err = measures.first_order_errors(traj, scenario.h1, scenario.h2)
    mask = traj.window_mask(*window)
    summary: dict = {
        "scenario": scenario.to_dict(),
        "tail_window": list(window),
        "final": {
            "t": float(traj.t[-1]),
            "q_err": float(q_err[-1]),
            "p_err": float(p_err[-1]),
            "c1": float(traj.c1[-1]),
            "c2": float(traj.c2[-1]),
        },
        "tail_mean_q_err": float(q_err[mask].mean()),
        "tail_mean_abs_p_err": float(np.abs(p_err[mask]).mean()),
    }
    if traj.sg is not None:
        sync_avg, excluded = measures.time_averaged_sync(traj, window, return_excluded=True)
        summary["sync_avg"] = sync_avg
        summary["sync_samples_excluded"] = excluded
    else:
        summary["sync_avg"] = None
    try:
        stats = limit_cycle_stats(traj, 1, window)
        summary["limit_cycle"] = {
            "r": stats.r,
            "period": stats.period,
            "window": list(stats.window),
        }
    except NoOscillation as exc:
        summary["limit_cycle"] = {"error": str(exc)}
    return traj, summary


def write_trajectory_csv(path: Path, traj: Trajectory) -> None:
    lines = [TRAJ_HEADER]
    sg = traj.sg
    for i in range(len(traj)):
        lines.append(
            ",".join(
                (
                    _fmt(traj.t[i]),
                    _fmt(traj.q1[i]),
                    _fmt(traj.p1[i]),
                    _fmt(traj.q2[i]),
                    _fmt(traj.p2[i]),
                    _fmt(traj.a_re[i]),
                    _fmt(traj.a_im[i]),
                    _fmt(traj.c1[i]),
                    _fmt(traj.c2[i]),
                    "" if sg is None else _fmt(sg[i]),
                )
            )
        )
    _write_text(path, "\n".join(lines) + "\n")


def run(scenario: Scenario, out_dir: str | Path = ".") -> tuple[Path, Path]:
    """Write `<name>_traj.csv` and `<name>_summary.json` for one scenario."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj, summary = run_scenario(scenario)
    traj_path = out / f"{scenario.name}_traj.csv"
    summary_path = out / f"{scenario.name}_summary.json"
    write_trajectory_csv(traj_path, traj)
    _write_text(summary_path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return traj_path, summary_path


# --- sweep -----------------------------------------------------------------------


def _sweep_point_stats(scenario: Scenario, seed: int) -> tuple[float, float, float]:
    """(sg_avg, neg_max, r) for one replica of one sweep point.

    Per-column degeneracies are reported as nan without failing the point: a
    non-oscillating cycle has no radius, and a covariance heated to the point
    of losing its symplectic structure to roundoff has no meaningful
    negativity."""
    traj = integrate(
        scenario.params,
        scenario.law,
        cfg=scenario.integrator,
        rng_seed=seed,
        ctrl_noise=scenario.noise_sigma,
    )
    window = scenario.tail_window
    sg_avg = measures.time_averaged_sync(traj, window)
    try:
        neg_max = measures.max_negativity(traj, window)
    except NonPhysical:
        neg_max = math.nan
    try:
        r = limit_cycle_stats(traj, 1, window).r
    except NoOscillation:
        r = math.nan
    return sg_avg, neg_max, r


def _evaluate_sweep_point(args: tuple[SweepSpec, float]) -> dict:
    """One sweep row; integration blow-ups are recorded, not raised."""
    spec, value = args
    scenario = spec.point(value)
    cfg = replace(scenario.integrator, record_covariance=True)
    scenario = replace(scenario, integrator=cfg)
    try:
        rows = [
            _sweep_point_stats(scenario, scenario.seed + rep)
            for rep in range(spec.replicas)
        ]
        arr = np.array(rows)  # columns: sg_avg, neg_max, r
        lyap = lyapunov_exponent(
            scenario.params, scenario.law, MeanState.zeros(), LYAPUNOV_EPS, cfg
        )
        return {
            "value": value,
            "failed": False,
            "sg_avg": arr[:, 0].mean(),
            "sg_std": arr[:, 0].std(),
            "lyap_max": lyap,
            "neg_max": arr[:, 1].mean(),
            "neg_std": arr[:, 1].std(),
            "r": arr[:, 2].mean(),
            "r_std": arr[:, 2].std(),
        }
    except NonFinite as exc:
        return {"value": value, "failed": True, "fail_time": exc.time}


def sweep(spec: SweepSpec, out_dir: str | Path = ".", jobs: int = 1) -> Path:
    """Evaluate every axis value (optionally in parallel, order preserved) and
    write `<name>_<axis>_sweep.csv`.

    With replicas > 1 the averaged columns gain trailing std columns.  A
    failed point shows as an all-nan row; the sweep continues.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(spec, v) for v in spec.values]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evaluate_sweep_point, tasks))
    else:
        results = [_evaluate_sweep_point(t) for t in tasks]

    with_std = spec.replicas > 1
    header = SWEEP_HEADER_REPLICAS if with_std else SWEEP_HEADER
    n_cols = len(header.split(","))
    lines = [header]
    for res in results:
        if res["failed"]:
            cells = [_fmt(res["value"])] + ["nan"] * (n_cols - 1)
        elif with_std:
            cells = [_fmt(res["value"]), _fmt(res["sg_avg"]), _fmt(res["sg_std"]),
                     _fmt(res["lyap_max"]), _fmt(res["neg_max"]), _fmt(res["neg_std"]),
                     _fmt(res["r"]), _fmt(res["r_std"])]
        else:
            cells = [_fmt(res["value"]), _fmt(res["sg_avg"]), _fmt(res["lyap_max"]),
                     _fmt(res["neg_max"]), _fmt(res["r"])]
        lines.append(",".join(cells))
    path = out / f"{spec.base.name}_{spec.axis}_sweep.csv"
    _write_text(path, "\n".join(lines) + "\n")
    return path


# --- robustness ------------------------------------------------------------------


_ROB_CLEAN_CACHE: dict = {}


def _robustness_value(scenario: Scenario, sigma: float, seed: int) -> float:
    """R for one noisy replica against the scenario's clean run (cached)."""
    cfg = replace(scenario.integrator, record_covariance=False)
    key = (scenario.params, scenario.law, cfg, scenario.seed)
    if key not in _ROB_CLEAN_CACHE:
        clean = integrate(scenario.params, scenario.law, cfg=cfg,
                          rng_seed=scenario.seed, ctrl_noise=0.0)
        stats = limit_cycle_stats(clean, 1, scenario.tail_window)
        _ROB_CLEAN_CACHE[key] = (clean, stats)
    clean, stats = _ROB_CLEAN_CACHE[key]
    noisy = integrate(scenario.params, scenario.law, cfg=cfg,
                      rng_seed=seed, ctrl_noise=sigma)
    return measures.robustness(
        clean, noisy, stats, scenario.tail_window, scenario.h1, scenario.h2
    )


def _robustness_eval_star(args: tuple[Scenario, tuple[float, int]]) -> float:
    scenario, (sigma, seed) = args
    return _robustness_value(scenario, sigma, seed)


def robustness_study(
    scenario: Scenario,
    sigmas: Sequence[float],
    replicas: int,
    out_dir: str | Path = ".",
    jobs: int = 1,
) -> Path:
    """Mean and std of R per noise level over ``replicas`` distinct seeds,
    written to `<name>_robustness.csv`; a sigma = 0 control row (R = 1) is
    always included.  Covariance recording is skipped: R needs means only."""
    if replicas < 1:
        raise ConfigError("replicas", f"must be >= 1, got {replicas}")
    for s in sigmas:
        if s < 0.0:
            raise ConfigError("sigmas", f"must be >= 0, got {s}")
    levels = sorted(set(float(s) for s in sigmas) | {0.0})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    tasks: list[tuple[float, int]] = []
    for sigma in levels:
        if sigma == 0.0:
            tasks.append((0.0, scenario.seed + 1))  # any seed: no noise is drawn
        else:
            tasks.extend((sigma, scenario.seed + 1 + rep) for rep in range(replicas))

    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(_robustness_eval_star, [(scenario, t) for t in tasks]))
    else:
        values = [_robustness_value(scenario, sigma, seed) for sigma, seed in tasks]

    lines = [ROBUSTNESS_HEADER]
    i = 0
    for sigma in levels:
        n = 1 if sigma == 0.0 else replicas
        chunk = np.array(values[i : i + n])
        i += n
        lines.append(",".join((_fmt(sigma), _fmt(chunk.mean()), _fmt(chunk.std()), str(n))))
    path = out / f"{scenario.name}_robustness.csv"
    _write_text(path, "\n".join(lines) + "\n")
    return path


# --- entry point -----------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optosync",
        description="Simulate Lyapunov-controlled synchronization of two "
        "cavity-coupled mechanical oscillators.",
    )
    parser.add_argument("--out-dir", default=".", help="directory for output artifacts")
    parser.add_argument("--jobs", type=int, default=1, help="max concurrent sweep/replica jobs")
    parser.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="single scenario -> trajectory CSV + summary JSON")
    p_run.add_argument("file", help="scenario YAML file")

    p_sweep = sub.add_parser("sweep", help="axis sweep -> aggregated CSV")
    p_sweep.add_argument("file", help="sweep YAML file")

    p_rob = sub.add_parser("robustness", help="noise robustness -> CSV of R(sigma)")
    p_rob.add_argument("file", help="scenario YAML file")
    p_rob.add_argument("--sigmas", type=float, nargs="+", required=True,
                       help="noise standard deviations to probe")
    p_rob.add_argument("--replicas", type=int, default=20,
                       help="seeded replicas per noise level")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            scenario = load_scenario(args.file)
            if args.seed is not None:
                scenario = replace(scenario, seed=args.seed)
            traj_path, summary_path = run(scenario, args.out_dir)
            print(f"wrote {traj_path} and {summary_path}")
        elif args.command == "sweep":
            spec = load_sweep(args.file)
            if args.seed is not None:
                spec = replace(spec, base=replace(spec.base, seed=args.seed))
            path = sweep(spec, args.out_dir, args.jobs)
            print(f"wrote {path}")
        else:
            scenario = load_scenario(args.file)
            if args.seed is not None:
                scenario = replace(scenario, seed=args.seed)
            path = robustness_study(scenario, args.sigmas, args.replicas,
                                    args.out_dir, args.jobs)
            print(f"wrote {path}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NonFinite as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
