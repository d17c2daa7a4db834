"""Acceptance criteria 1-8.

Each test records a PASS/FAIL line (printed in the terminal summary) before
asserting, so a failing criterion still reports its numbers.
"""

import json
import time

import numpy as np
import pytest
from scipy import stats

from conftest import load_config
from oracles import OFFSETS, chain_hitting_times, first_crossing_times
from tvmdp.cli import run_experiment
from tvmdp.disturbance import UniformField, make_vortex, sample_series
from tvmdp.gridworld import IDLE, UNIT_DIRECTIONS, GridWorld, make_actions
from tvmdp.sim import Scenario
from tvmdp.solvers import RewardModel, dtmdp_solve, mdp_value_iteration, solve_mdp, tvmdp_solve
from tvmdp.timing import SolverOptions, multi_hop_times, one_hop_table
from tvmdp.transition import NoiseConfig, action_pmfs, discretize, mixture_pmf, motion_model

ALPHA = 0.05


def philox(seed):
    return np.random.Generator(np.random.Philox(seed))


def per_seed(run_dir, label, metric):
    vals = {}
    for p in (run_dir / "metrics").glob(f"{label}_seed*.json"):
        doc = json.loads(p.read_text())
        vals[doc["seed"]] = doc["timing"][metric] if metric in doc["timing"] else doc[metric]
    return np.array([vals[k] for k in sorted(vals)])


def one_sided_less(a, b):
    """p-value of the paired test that mean(a) < mean(b)."""
    return float(stats.ttest_rel(a, b, alternative="less").pvalue)


# ---------------------------------------------------------------- 1


def test_criterion_1_static_field_reduction(report):
    g = GridWorld(10, 10, goal=99)
    f = UniformField((0.2, -0.15))
    r, noise = RewardModel(), NoiseConfig.default()
    start = time.perf_counter()
    ref = solve_mdp(g, f, r, noise, tol=1e-8).policy
    res = tvmdp_solve(g, f, r, noise, 0)
    elapsed = time.perf_counter() - start
    diff = len(res.policy.differing_states(ref))
    ok = diff == 0 and elapsed < 10.0
    report(1, ok, f"{diff} states with different argmax sets, {elapsed:.2f} s")
    assert ok


# ---------------------------------------------------------------- 2


def _chain(width, fwd, idle, back):
    g = GridWorld(width, 1, goal=width - 1)
    P = np.zeros((width, 9))
    H = np.full((width, 9), np.nan)
    for s in range(width):
        P[s, 2] = fwd if s < width - 1 else 0.0
        P[s, 6] = back if s > 0 else 0.0
        P[s, IDLE] = 1.0 - P[s].sum()
        H[s, 2], H[s, 6], H[s, IDLE] = 1.0 + 0.1 * s, 1.2, 0.5
    return g, P, np.where(g.admissible, H, np.nan)


def _grid_case():
    g = GridWorld(5, 5, goal=24)
    f, noise = UniformField((0.2, -0.1)), NoiseConfig.default()
    mask = solve_mdp(g, f, RewardModel(), noise).policy.mask
    P = np.einsum("sa,saj->sj", mask.astype(float), action_pmfs(g, f, 0.0, noise, 1.0))
    return g, P / mask.sum(axis=1, keepdims=True), one_hop_table(g, f, 0.0, noise, 1.0)


def test_criterion_2_kolmogorov_vs_monte_carlo(report):
    # Direct neighbors of the origin equal one hop by definition; states the
    # chain rarely visits have too few hits for a 3% Monte-Carlo mean.
    cases = {"chain": _chain(10, 0.7, 0.2, 0.1), "grid": _grid_case(), "self-loop": _chain(5, 0.4, 0.6, 0.0)}
    rng = philox(3)
    start = time.perf_counter()
    worst, checked = {}, 0
    for name, (g, P, H) in cases.items():
        tau, _ = multi_hop_times(g, 0, P, H)
        mc, frac = chain_hitting_times(g.successor_table, P, np.nan_to_num(H), 0, g.goal, 100_000, rng)
        near = set(g.successor_table[0][g.successor_table[0] >= 0].tolist())
        sel = [s for s in g.states if s not in near and frac[s] >= 0.2]
        checked += len(sel)
        worst[name] = float(np.max(np.abs(tau[sel] / mc[sel] - 1)))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 0.03 and elapsed < 30.0 and checked >= 10
    detail = ", ".join(f"{k} {v:.2%}" for k, v in worst.items())
    report(2, ok, f"max rel. error {detail} over {checked} states, {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------- 3

ONE_HOP_CASES = [
    ((0.3, 0.0), np.diag([0.01, 0.04]), 2),
    ((0.0, 0.0), np.diag([0.01, 0.04]), 0),
    ((0.3, 0.0), np.diag([0.02, 0.02]), 1),
    ((-0.4, 0.0), np.diag([0.03, 0.03]), 2),
    ((0.2, 0.2), np.array([[0.05, 0.02], [0.02, 0.03]]), 1),
]


def test_criterion_3_one_hop_estimator(report):
    g = GridWorld(3, 3, goal=0)
    rng = philox(7)
    errors = []
    for d, cov, j in ONE_HOP_CASES:
        est = one_hop_table(g, UniformField(d), 0.0, NoiseConfig(cov, np.zeros((2, 2))), 1.0, states=[4])[0, j]
        target = OFFSETS[j] / np.linalg.norm(OFFSETS[j])
        # the oracle picks the heading whose resultant best points at the target
        res = [UNIT_DIRECTIONS[a] + np.asarray(d) for a in range(8)]
        a = max(range(8), key=lambda a: res[a] @ target / np.linalg.norm(res[a]))
        hits = first_crossing_times(res[a], target, np.linalg.norm(OFFSETS[j]), cov, 1.0, 100_000, rng)
        errors.append(abs(est / hits.mean() - 1))
    zero = NoiseConfig(np.zeros((2, 2)), np.zeros((2, 2)))
    det = one_hop_table(GridWorld(3, 3, cell_size=2.0, goal=0), UniformField(), 0.0, zero, 0.5, states=[4])[0]
    exact = det[2] == 2.0 / 0.5 and det[0] == 2.0 / 0.5
    ok = max(errors) < 0.05 and exact
    report(3, ok, "rel. errors " + ", ".join(f"{e:.2%}" for e in errors) + f"; deterministic limit exact: {exact}")
    assert ok


# ---------------------------------------------------------------- 4


@pytest.fixture(scope="module")
def vortex_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("vortex")
    start = time.perf_counter()
    status = run_experiment(load_config("vortex_benchmark.json"), out)
    return out, status, time.perf_counter() - start


def test_criterion_4_vortex_benchmark_ordering(report, vortex_run):
    out, status, elapsed = vortex_run
    pvals, means = {}, {}
    for metric in ("path_length", "travel_time"):
        tv = per_seed(out, "tvmdp", metric)
        means[metric] = {k: per_seed(out, k, metric).mean() for k in ("tvmdp", "mdp", "atmdp")}
        for base in ("mdp", "atmdp"):
            pvals[(metric, base)] = one_sided_less(tv, per_seed(out, base, metric))
    summary = json.loads((out / "summary.json").read_text())["solvers"]
    ordered = all(
        summary["tvmdp"][m]["mean"] < summary[b][m]["mean"] for m in means for b in ("mdp", "atmdp")
    )
    ok = status == 0 and ordered and max(pvals.values()) < ALPHA and elapsed < 600
    detail = "; ".join(
        f"{m} tvmdp {v['tvmdp']:.2f} mdp {v['mdp']:.2f} atmdp {v['atmdp']:.2f}" for m, v in means.items()
    )
    report(4, ok, f"{detail}; max p {max(pvals.values()):.2g}; {elapsed:.0f} s")
    assert ok


# ---------------------------------------------------------------- 5


@pytest.fixture(scope="module")
def dtmdp_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("dtmdp")
    status = run_experiment(load_config("dtmdp_layers.json"), out)
    return out, status


def test_criterion_5_dtmdp_resolution_trend(report, dtmdp_run):
    out, status = dtmdp_run
    layers = [2, 5, 10, 20, 40]
    cost = [per_seed(out, f"dtmdp-{k}", "path_length") for k in layers]
    means = [c.mean() for c in cost]
    trend = all(
        b.mean() <= a.mean() + np.sqrt((a.var(ddof=1) + b.var(ddof=1)) / len(a))
        for a, b in zip(cost, cost[1:])
    )
    # Superlinear growth: the log-log slope of compute time against layer count
    # must exceed 1 at 95% confidence. Solves are timed in shuffled rounds so
    # that drift in machine load cannot masquerade as growth with layer count.
    cfg = load_config("dtmdp_layers.json")
    sc = cfg.scenario()
    order = philox(5)
    x, y = [], []
    for _ in range(6):
        for k in order.permutation(layers):
            res = dtmdp_solve(sc.grid, sc.field, sc.reward, sc.noise, 20.0, int(k), t0=sc.t0, speed=sc.speed)
            x.append(np.log(k))
            y.append(np.log(res.compute_time))
    fit = stats.linregress(x, y)
    lower = fit.slope - 1.96 * fit.stderr
    superlinear = lower > 1.0
    ok = status == 0 and trend and superlinear
    report(
        5, ok,
        "mean length " + " ".join(f"{m:.2f}" for m in means)
        + f" (trend {'ok' if trend else 'violated'}); compute-time exponent {fit.slope:.2f}"
        + f" (95% lower bound {lower:.2f}, superlinear: {superlinear})",
    )
    assert ok


# ---------------------------------------------------------------- 6


def test_criterion_6_scale(report):
    n = 32
    g = GridWorld(n, n, goal=n * n - 1)
    f = make_vortex((n / 2, n / 2), 0.6 / n, angular_rate=2 * np.pi / (4 * n), orbit_radius=n / 5, horizon=400)
    start = time.perf_counter()
    res = tvmdp_solve(g, f, RewardModel(), NoiseConfig.default(), 0)
    elapsed = time.perf_counter() - start
    share = res.linear_solve_time / res.compute_time
    ok = elapsed < 120 and share > 0.5
    report(6, ok, f"{g.n_states} states in {elapsed:.1f} s, linear solves {share:.0%} of compute time")
    assert ok


# ---------------------------------------------------------------- 7


def _random_cov(rng):
    a, b = rng.uniform(1e-3, 0.5, 2)
    c = rng.uniform(-0.9, 0.9) * np.sqrt(a * b)
    return np.array([[a, c], [c, b]])


def test_criterion_7_invariant_suite(report):
    rng = philox(11)
    actions = make_actions(1.0)
    results = {}

    worst = 0.0
    for _ in range(1000):
        w, h = rng.integers(1, 8, 2)
        g = GridWorld(int(w), int(h) + (w == 1), cell_size=float(rng.choice([0.5, 1.0, 2.0])), goal=0)
        s = int(rng.integers(g.n_cells))
        a = int(rng.choice(np.flatnonzero(g.admissible[s])))
        noise = NoiseConfig(_random_cov(rng), np.zeros((2, 2)))
        m = motion_model(g, s, actions[a], UniformField(tuple(rng.uniform(-1.5, 1.5, 2))), 0.0, noise)
        p = np.array([q for _, q in discretize(m, s, g).entries])
        assert np.all(p >= 0)
        worst = max(worst, abs(p.sum() - 1))
    results["pmf"] = worst < 1e-12

    g = GridWorld(5, 5, goal=24)
    ok_mix = True
    for k in range(1, 10):
        tied = [actions[a] for a in rng.choice(9, k, replace=False)]
        f, noise = UniformField(tuple(rng.uniform(-0.5, 0.5, 2))), NoiseConfig(_random_cov(rng), np.zeros((2, 2)))
        mix = mixture_pmf(g, 12, tied, f, 0.0, noise).as_dict()
        parts = [discretize(motion_model(g, 12, a, f, 0.0, noise), 12, g).as_dict() for a in tied]
        ok_mix &= all(abs(p - sum(d.get(s, 0.0) for d in parts) / k) < 1e-14 for s, p in mix.items())
    results["mixture"] = ok_mix

    sc = Scenario(GridWorld(6, 6, goal=35), make_vortex((3, 3), 0.1, angular_rate=0.3, orbit_radius=1.0))
    same = True
    for solver in ("mdp", "tvmdp"):
        a, _ = sc.run(solver, 5)
        b, _ = sc.run(solver, 5)
        same &= np.array_equal(a.positions, b.positions) and np.array_equal(a.actions, b.actions)
    results["determinism"] = same

    contraction = True
    for _ in range(10):
        n = int(rng.integers(3, 8))
        g = GridWorld(n, n, goal=int(rng.integers(n * n)))
        r = RewardModel(discount=float(rng.uniform(0.5, 0.97)))
        pmfs = action_pmfs(g, UniformField(tuple(rng.uniform(-0.4, 0.4, 2))), 0.0, NoiseConfig.default(), 1.0)
        hist = [np.zeros(g.n_cells)]
        mdp_value_iteration(g, pmfs, r, tol=1e-9, history=hist)
        steps = [np.max(np.abs(y - x)) for x, y in zip(hist, hist[1:])]
        contraction &= all(b <= r.discount * a * (1 + 1e-9) for a, b in zip(steps, steps[1:]) if a > 1e-10)
    results["contraction"] = contraction

    g, P, H = _grid_case()
    linear = True
    for method in ("direct", "krylov"):
        opt = SolverOptions(method=method, tol=1e-10)
        base, _ = multi_hop_times(g, 0, P, H, opt)
        for c in (0.5, 3.0):
            scaled, _ = multi_hop_times(g, 0, P, c * H, opt)
            ok = base < opt.sentinel
            linear &= bool(np.allclose(scaled[ok], c * base[ok], rtol=1e-8, atol=0))
    results["linearity"] = linear

    ok = all(results.values())
    report(7, ok, ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in results.items()))
    assert ok


# ---------------------------------------------------------------- 8


@pytest.fixture(scope="module")
def gridded_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("gridded")
    cfg = load_config("gridded_benchmark.json")
    return cfg, out, run_experiment(cfg, out)


def test_criterion_8_gridded_field(report, gridded_run):
    cfg, out, status = gridded_run
    series = cfg.field()
    nodes = True
    xs = cfg.grid().centers
    for k, t in enumerate(series.times):
        got = series.query(xs, np.full(len(xs), t))
        nodes &= np.array_equal(got[:, 0], series.u[k].ravel()) and np.array_equal(got[:, 1], series.v[k].ravel())
    # sampling an analytic field and reading it back at nodes is exact too
    f = make_vortex((5, 5), 0.12, angular_rate=0.2, orbit_radius=1.5)
    resampled = sample_series(f, 10, 10, np.linspace(0, 14, 8))
    for k, t in enumerate(resampled.times):
        got = resampled.query(xs, np.full(len(xs), t))
        nodes &= np.array_equal(got, f.query(xs, np.full(len(xs), t)))
    tv = per_seed(out, "tvmdp", "path_length")
    at = per_seed(out, "atmdp", "path_length")
    p = one_sided_less(tv, at)
    ok = status == 0 and nodes and tv.mean() < at.mean() and len(tv) == 30
    report(8, ok, f"nodes exact: {nodes}; mean length tvmdp {tv.mean():.3f} atmdp {at.mean():.3f} (p {p:.2g})")
    assert ok
