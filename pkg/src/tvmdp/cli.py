"""Command-line front end.

``tvmdp run CONFIG``
    Runs every (solver, seed) cell of an experiment config and writes, under the
    output directory::

        config.json                      normalized config with absolute paths
        trajectories/<label>_seed<k>.csv  t,x,y,state,action
        metrics/<label>_seed<k>.json      one run's metrics
        summary.json                      per-solver mean/std/min/max
        comparison.csv                    the same as a flat table

    The output directory is ``--out``, else ``$TVMDP_OUTPUT_DIR``, else the
    config's ``output_dir``.
``tvmdp emit-policy-map RUN_DIR``
    Solves each configured solver once from the start state and writes
    ``policy_maps/<label>.csv`` with ``state,x,y,action_ids,multi_hop_time,visit_likelihood``.
``tvmdp validate CONFIG``
    Checks a config against the schema.

Exit codes: 0 success, 1 a solver failed (the cell is named on stderr), 2 the
config or run directory is invalid.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, planner_params
from .sim import (
    METRIC_FIELDS,
    aggregate,
    write_json,
    write_trajectory_csv,
    _num,
)
from .solvers.atmdp import atmdp_solve
from .solvers.dtmdp import dtmdp_solve
from .solvers.mdp import solve_mdp
from .solvers.tvmdp import TVMDPOptions, tvmdp_solve
from .timing import one_hop_table, multi_hop_times
from .transition import action_pmfs, mixture_from_policy

OUTPUT_ENV = "TVMDP_OUTPUT_DIR"
EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("tvmdp")


# ---------------------------------------------------------------------------
# run


@lru_cache(maxsize=4)
def _scenario(doc_json: str, base_dir: str):
    return ExperimentConfig(json.loads(doc_json), Path(base_dir)).scenario()


def _run_cell(doc_json, base_dir, spec, seed):
    """Worker: one rollout. Returns ``(label, seed, trajectory, metrics, error)``."""
    try:
        sc = _scenario(doc_json, base_dir)
        traj, metrics = sc.run(spec["name"], seed, **planner_params(spec))
        return spec["label"], seed, traj, metrics, None
    except Exception as exc:  # reported per cell by the collector
        msg = f"{type(exc).__name__}: {exc}"
        log.debug("cell %s seed %d failed:\n%s", spec["label"], seed, traceback.format_exc())
        return spec["label"], seed, None, None, msg


def cell_name(label, seed) -> str:
    return f"{label}_seed{seed}"


def metrics_document(label, metrics) -> dict:
    doc = metrics.to_dict(timings=False)
    doc["label"] = label
    # wall-clock measurements vary between reruns; everything else is deterministic
    doc["timing"] = {"compute_time": metrics.compute_time, "linear_solve_time": metrics.linear_solve_time}
    return doc


def output_dir(cfg: ExperimentConfig, override=None) -> Path:
    if override:
        return Path(override)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env)
    out = Path(cfg.doc["output_dir"])
    return out if out.is_absolute() else cfg.base_dir / out


def run_experiment(cfg: ExperimentConfig, out: Path, jobs=1, seed_offset=0) -> int:
    out.mkdir(parents=True, exist_ok=True)
    (out / "trajectories").mkdir(exist_ok=True)
    (out / "metrics").mkdir(exist_ok=True)
    cfg = cfg.resolved()
    # validates the field file and grid before any cell runs
    cfg.scenario()
    (out / "config.json").write_text(cfg.dumps())
    doc_json = json.dumps(cfg.doc, sort_keys=True)
    base = str(cfg.base_dir)
    cells = [(spec, seed + seed_offset) for spec in cfg.solvers for seed in cfg.seeds]
    args = [(doc_json, base, spec, seed) for spec, seed in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, *zip(*args)))
    else:
        results = [_run_cell(*a) for a in args]

    # single collector writes every file
    runs = {spec["label"]: [] for spec in cfg.solvers}
    failures = []
    for label, seed, traj, metrics, err in results:
        name = cell_name(label, seed)
        if err is not None:
            failures.append({"label": label, "seed": seed, "error": err})
            print(f"error: cell {name} failed: {err}", file=sys.stderr)
            continue
        write_trajectory_csv(traj, out / "trajectories" / f"{name}.csv")
        write_json(metrics_document(label, metrics), out / "metrics" / f"{name}.json")
        runs[label].append(metrics)

    summary = {
        "solvers": {label: aggregate(r) for label, r in runs.items() if r},
        "cells": len(cells),
        "failures": failures,
        "seed_offset": seed_offset,
    }
    write_json(summary, out / "summary.json")
    write_comparison(summary["solvers"], out / "comparison.csv")
    return EXIT_FAILED if failures else EXIT_OK


def write_comparison(solvers: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "metric", "n", "timeouts", "mean", "std", "min", "max"])
        for label, agg in solvers.items():
            for metric in METRIC_FIELDS:
                s = agg[metric]
                w.writerow(
                    [label, metric, agg["n"], agg["timeouts"]]
                    + [_num(s[k]) for k in ("mean", "std", "min", "max")]
                )


# ---------------------------------------------------------------------------
# policy maps


def solve_for_map(sc, spec):
    """``(mask, multi_hop)`` of one solve from the scenario's start.

    TVMDP reports its own arrival-time estimate; for the other solvers the times
    come from the Kolmogorov system of their policy in the field at the start time.
    """
    g, f, r, n = sc.grid, sc.field, sc.reward, sc.noise
    name, tol = spec["name"], spec["tol"]
    if name == "tvmdp":
        opt = TVMDPOptions(tol=tol, **planner_params(spec).get("tvmdp", {}))
        res = tvmdp_solve(g, f, r, n, sc.s0, sc.t0, sc.speed, opt)
        return res.policy.mask, res.times.multi_hop
    if name == "mdp":
        mask = solve_mdp(g, f, r, n, t0=sc.t0, speed=sc.speed, tol=tol).policy.mask
    elif name == "atmdp":
        mask = atmdp_solve(g, f, r, n, sc.s0, sc.t0, sc.speed).policy.mask
    else:
        res = dtmdp_solve(g, f, r, n, spec["horizon"], spec["layers"], tol=tol, t0=sc.t0, speed=sc.speed)
        mask = res.policy.at_layer(0).mask
    pmfs = action_pmfs(g, f, sc.t0, n, sc.speed)
    hop = one_hop_table(g, f, sc.t0, n, sc.speed)
    tau, _ = multi_hop_times(g, sc.s0, mixture_from_policy(pmfs, mask), hop)
    return mask, tau


def visit_likelihood(grid, slot_pmf, s0, samples, rng, max_steps=None) -> np.ndarray:
    """Fraction of ``samples`` forward chains from ``s0`` that visit each state.

    Chains step through the per-state successor PMF ``slot_pmf`` (``(n, 9)``) and
    stop at the goal or after ``max_steps`` (default ``50 * n_states``).
    """
    if max_steps is None:
        max_steps = 50 * grid.n_states
    table = grid.successor_table
    cum = np.cumsum(np.nan_to_num(slot_pmf), axis=1)
    cum[:, -1] = np.maximum(cum[:, -1], 1.0)  # guards against round-off at the top
    visited = np.zeros((samples, grid.n_cells), dtype=bool)
    pos = np.full(samples, int(s0))
    idx = np.arange(samples)
    visited[idx, pos] = True
    active = pos != grid.goal
    for _ in range(max_steps):
        if not active.any():
            break
        a = np.flatnonzero(active)
        u = rng.random(a.size)
        slot = (cum[pos[a]] < u[:, None]).sum(axis=1)
        nxt = table[pos[a], np.minimum(slot, table.shape[1] - 1)]
        nxt = np.where(nxt >= 0, nxt, pos[a])
        pos[a] = nxt
        visited[a, nxt] = True
        active[a] = nxt != grid.goal
    freq = visited.mean(axis=0)
    freq[grid.blocked] = 0.0
    return freq


def policy_map_rows(sc, mask, tau, samples=1000, seed=0):
    grid = sc.grid
    at = sc.t0 + np.nan_to_num(np.minimum(tau, 1e6))
    slot = mixture_from_policy(action_pmfs(grid, sc.field, at, sc.noise, sc.speed), mask)
    rng = np.random.Generator(np.random.Philox(int(seed)))
    visits = visit_likelihood(grid, slot, sc.s0, samples, rng)
    for s in grid.states:
        x, y = grid.state_center(s)
        acts = " ".join(str(int(a)) for a in np.flatnonzero(mask[s]))
        yield int(s), float(x), float(y), acts, float(tau[s]), float(visits[s])


def write_policy_map(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "x", "y", "action_ids", "multi_hop_time", "visit_likelihood"])
        for s, x, y, acts, t, v in rows:
            w.writerow([s, _num(x), _num(y), acts, _num(t), _num(v)])


def emit_policy_maps(run_dir: Path, samples=None) -> list[Path]:
    cfg_path = run_dir / "config.json"
    if not cfg_path.is_file():
        raise ConfigError(f"{run_dir} is not a run directory (no config.json); use 'tvmdp run' first")
    cfg = ExperimentConfig.load(cfg_path)
    sc = cfg.scenario()
    pm = cfg.doc["policy_map"]
    samples = pm["samples"] if samples is None else samples
    out = run_dir / "policy_maps"
    out.mkdir(exist_ok=True)
    written = []
    for spec in cfg.solvers:
        mask, tau = solve_for_map(sc, spec)
        path = out / f"{spec['label']}.csv"
        write_policy_map(policy_map_rows(sc, mask, tau, samples, pm["seed"]), path)
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tvmdp", description="Time-varying MDP planning experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a solver x seed matrix")
    r.add_argument("config", type=Path)
    r.add_argument("--out", type=Path, default=None, help=f"output directory (overrides ${OUTPUT_ENV})")
    r.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    r.add_argument("--seed-offset", type=int, default=0, help="added to every configured seed")

    m = sub.add_parser("emit-policy-map", help="write policy maps for a run directory")
    m.add_argument("run_dir", type=Path)
    m.add_argument("--samples", type=int, default=None, help="forward chains for visit likelihoods")

    v = sub.add_parser("validate", help="check a config against the schema")
    v.add_argument("config", type=Path)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            ExperimentConfig.load(args.config)
            print(f"{args.config}: ok")
            return EXIT_OK
        if args.command == "run":
            if args.jobs < 1:
                raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
            if args.seed_offset < 0:
                raise ConfigError(f"--seed-offset must be >= 0, got {args.seed_offset}")
            cfg = ExperimentConfig.load(args.config)
            out = output_dir(cfg, args.out)
            code = run_experiment(cfg, out, args.jobs, args.seed_offset)
            print(f"wrote {out}")
            return code
        if args.samples is not None and args.samples < 1:
            raise ConfigError(f"--samples must be >= 1, got {args.samples}")
        for path in emit_policy_maps(args.run_dir, args.samples):
            print(f"wrote {path}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
