"""Real-valued transition times.

One-hop times come from the displacement Gaussian rotated onto the direction of
travel: the positive-part expectation of the along-track displacement, given zero
cross-track displacement, divided by the step duration gives a speed, and the
center-to-center distance over that speed gives the time.

Multi-hop times ``t(s0, e)`` solve first-step (Kolmogorov) linear systems, one per
end state ``e``: ``t(i, e) = sum_j P_ij (t(i, j) + t(j, e))`` with ``t(e, e) = 0``.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import bicgstab, gmres, splu
from scipy.special import ndtr

from .gridworld import ACTION_OFFSETS, IDLE, N_ACTIONS, UNIT_DIRECTIONS, GridWorld
from .transition import slots_to_matrix, step_duration

log = logging.getLogger(__name__)

UNREACHABLE_TIME = 1e6
EPS_VEL = 1e-6
# Relative residual a backward-stable direct solve reliably reaches on these chains.
ATTAINABLE_RESIDUAL = 1e-10


class SolverError(RuntimeError):
    def __init__(self, message, residual=float("nan"), end_state=None):
        super().__init__(message)
        self.residual = residual
        self.end_state = end_state


@dataclass
class SolverOptions:
    tol: float = 1e-8
    maxiter_factor: int = 10
    condition_on_arrival: bool = True
    arrival_floor: float = 1e-6
    sentinel: float = UNREACHABLE_TIME
    # "auto" uses the shared fundamental matrix when the chain is absorbing and
    # has at most `direct_max` reachable states, else batched BiCGSTAB ("krylov").
    method: str = "auto"
    direct_max: int = 3000

    def __post_init__(self):
        if self.method not in ("auto", "direct", "krylov"):
            raise ValueError(f"unknown solver method {self.method!r}")


@dataclass
class SolveStats:
    systems: int = 0
    iterations: int = 0
    clamped: int = 0
    # systems that needed the sparse LU fallback
    direct: int = 0
    seconds: float = 0.0

    def add(self, other: "SolveStats"):
        self.systems += other.systems
        self.iterations += other.iterations
        self.clamped += other.clamped
        self.direct += other.direct
        self.seconds += other.seconds


# ---------------------------------------------------------------------------
# one-hop


def _positive_part_mean(m, s):
    """``E[X 1{X > 0}]`` for ``X ~ N(m, s^2)``; ``s`` may be zero."""
    m = np.asarray(m, dtype=float)
    s = np.asarray(s, dtype=float)
    safe = np.where(s > 0, s, 1.0)
    z = m / safe
    smooth = m * ndtr(z) + safe * np.exp(-0.5 * z**2) / np.sqrt(2 * np.pi)
    return np.where(s > 0, smooth, np.maximum(m, 0.0))


def one_hop_table(
    grid: GridWorld, field_, times, noise, speed, duration=None, eps_vel=EPS_VEL, states=None
) -> np.ndarray:
    """``(n_cells, 9)`` one-hop times by neighbor slot.

    Slot ``IDLE`` holds the idle dwell time ``cell_size / speed``. Inadmissible
    slots are ``nan``; pairs with no forward progress are ``inf``. With
    ``states`` only those rows are computed and returned, in that order.
    """
    if duration is None:
        duration = step_duration(grid, speed)
    rows = np.arange(grid.n_cells) if states is None else np.atleast_1d(np.asarray(states))
    times = np.broadcast_to(np.asarray(times, dtype=float), (rows.size,))
    d = np.asarray(field_.query(grid.centers[rows], times), dtype=float)
    admissible = grid.admissible[rows]
    r = speed * UNIT_DIRECTIONS[None, :, :] + d[:, None, :]  # (n, a, 2)
    delta = ACTION_OFFSETS * grid.cell_size  # (j, 2)
    dist = np.linalg.norm(delta, axis=1)
    r_norm = np.linalg.norm(r, axis=-1)  # (n, a)
    unit_delta = delta / np.where(dist > 0, dist, 1.0)[:, None]
    proj = np.einsum("nak,jk->nja", r, unit_delta)  # (n, j, a)
    safe_norm = np.where(r_norm > 0, r_norm, 1.0)[:, None, :]
    cos = np.where(r_norm[:, None, :] > 0, proj / safe_norm, -np.inf)
    cos = np.where(admissible[:, None, :], cos, -np.inf)
    best = np.argmax(cos, axis=-1)  # (n, j)
    best_proj = np.take_along_axis(proj, best[..., None], axis=-1)[..., 0]
    rt = np.take_along_axis(r, best[..., None], axis=1)  # (n, j, 2)
    rt_norm = np.linalg.norm(rt, axis=-1)

    cov = noise.covariance
    u = rt / np.where(rt_norm > 0, rt_norm, 1.0)[..., None]
    v = np.stack([-u[..., 1], u[..., 0]], axis=-1)
    s11 = np.einsum("...i,ij,...j->...", u, cov, u)
    s22 = np.einsum("...i,ij,...j->...", v, cov, v)
    s12 = np.einsum("...i,ij,...j->...", u, cov, v)
    cond_var = np.maximum(s11 - np.where(s22 > 0, s12**2 / np.where(s22 > 0, s22, 1.0), 0.0), 0.0)
    along = _positive_part_mean(rt_norm * duration, np.sqrt(cond_var))

    reachable = (best_proj > 0) & (along > eps_vel)
    with np.errstate(divide="ignore"):
        t = np.where(reachable, dist[None, :] / (np.maximum(along, eps_vel) / duration), np.inf)
    t[:, IDLE] = grid.cell_size / speed
    t = np.where(admissible, t, np.nan)
    return t


def one_hop_time(grid, s, s_next, field_, t, noise, speed, duration=None, eps_vel=EPS_VEL) -> float:
    """Expected time to hop from ``s`` to neighbor ``s_next``; ``inf`` if unreachable."""
    s = grid._check(s)
    grid._check(s_next)
    row = grid.successor_table[s]
    slots = np.flatnonzero(row == s_next)
    if s_next == s:
        return grid.cell_size / speed
    if slots.size == 0:
        raise ValueError(f"{s_next} is not a one-hop neighbor of {s}")
    return float(one_hop_table(grid, field_, t, noise, speed, duration, eps_vel, states=[s])[0, slots[0]])


# ---------------------------------------------------------------------------
# Kolmogorov systems


@dataclass
class KolmogorovSystem:
    matrix: sparse.csr_matrix
    rhs: np.ndarray
    end_state: int


def _finite_hop_times(one_hop: np.ndarray, sentinel: float) -> np.ndarray:
    t = np.where(np.isnan(one_hop), 0.0, one_hop)
    return np.minimum(t, sentinel)


def assemble_system(
    grid: GridWorld,
    end_state: int,
    slot_pmf: np.ndarray,
    one_hop: np.ndarray,
    pinned: dict | None = None,
    sentinel: float = UNREACHABLE_TIME,
) -> KolmogorovSystem:
    """First-step system for expected arrival times at ``end_state``.

    ``slot_pmf`` is the ``(n_cells, 9)`` policy (mixture) PMF and ``one_hop`` the
    matching one-hop times. ``pinned`` maps extra state ids to fixed values; those
    rows, blocked cells and the end state become identity rows.
    """
    n = grid.n_cells
    if not grid.is_valid(end_state):
        raise ValueError(f"invalid end state {end_state}")
    sums = slot_pmf.sum(axis=1)
    bad = np.flatnonzero(~grid.blocked & (np.abs(sums - 1.0) > 1e-6))
    if bad.size:
        raise ValueError(f"PMF missing or unnormalized for states {bad[:10].tolist()}")
    fixed = grid.blocked.copy()
    fixed[end_state] = True
    values = np.zeros(n)
    if pinned:
        idx = np.fromiter(pinned.keys(), dtype=np.int64)
        fixed[idx] = True
        values[idx] = np.fromiter(pinned.values(), dtype=float)
    values[end_state] = 0.0
    free = ~fixed
    P = slots_to_matrix(grid, slot_pmf)
    A = sparse.identity(n, format="csr") - sparse.diags(free.astype(float)) @ P
    r = np.einsum("sj,sj->s", slot_pmf, _finite_hop_times(one_hop, sentinel))
    rhs = np.where(free, r, values)
    return KolmogorovSystem(A.tocsr(), rhs, int(end_state))


def _direct(A, b, refine=3):
    """Sparse LU solve with a few steps of iterative refinement; None if singular."""
    try:
        lu = splu(A.tocsc())
    except RuntimeError:  # exactly singular factor
        return None
    x = lu.solve(b)
    for _ in range(refine):
        x = x + lu.solve(b - A @ x)
    return x


def solve_system(sys: KolmogorovSystem, tol=1e-8, maxiter=None, x0=None) -> tuple[np.ndarray, SolveStats]:
    """Jacobi-preconditioned BiCGSTAB, with restarted GMRES as a second attempt
    and a sparse LU solve as the last resort when both stall above ``tol``.

    Returns the solution and stats. Entries below ``-tol * max|x|`` are clamped
    to zero and counted. Raises :class:`SolverError` if the relative residual
    stays above ``tol``.
    """
    A, b = sys.matrix, sys.rhs
    n = b.size
    stats = SolveStats(systems=1)
    start = time.perf_counter()
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        stats.seconds = time.perf_counter() - start
        return np.zeros(n), stats
    if maxiter is None:
        maxiter = 10 * n
    diag = A.diagonal()
    if np.any(diag == 0):
        raise SolverError("zero on the diagonal; system is singular", end_state=sys.end_state)
    M = sparse.diags(1.0 / diag)
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = bicgstab(A, b, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, M=M, callback=cb)
    res = np.linalg.norm(A @ x - b)
    if info != 0 or not np.isfinite(res) or res > tol * b_norm:
        restart = min(n, 50)
        x, info = gmres(
            A, b, x0=x0, rtol=tol, atol=0.0, restart=restart, maxiter=max(1, maxiter // restart),
            M=M, callback=cb, callback_type="pr_norm",
        )
        res = np.linalg.norm(A @ x - b)
    if not np.isfinite(res) or res > tol * b_norm:
        x_lu = _direct(A, b)
        res_lu = np.inf if x_lu is None else np.linalg.norm(A @ x_lu - b)
        if np.isfinite(res_lu) and not res_lu > res:
            x, res = x_lu, res_lu
            stats.direct = 1
    stats.iterations = count[0]
    stats.seconds = time.perf_counter() - start
    if not np.isfinite(res) or res > tol * b_norm * (1 + 1e-9):
        raise SolverError(
            f"linear solve for end state {sys.end_state} did not converge "
            f"(relative residual {res / b_norm:.3e})",
            residual=res / b_norm,
            end_state=sys.end_state,
        )
    neg = x < -tol * max(np.abs(x).max(), 1.0)
    if np.any(neg):
        stats.clamped = int(neg.sum())
        warnings.warn(f"clamped {stats.clamped} negative arrival times", RuntimeWarning, stacklevel=2)
    return np.where(x < 0, 0.0, x), stats


# ---------------------------------------------------------------------------
# batched solves


def _colsq(A):
    return np.einsum("ij,ij->j", A, A)


def batched_bicgstab(P, free, B, tol=1e-8, maxiter=None, X0=None, stall=200):
    """Jacobi-preconditioned BiCGSTAB on many chain systems at once.

    System ``k`` is ``x - free[:, k] * (P @ x) = B[:, k]``: rows where
    ``free[:, k]`` is False are identity rows. Every system keeps its own
    scalars and stops on its own residual ``||b - Ax|| <= tol * ||b||``; a
    breakdown restarts only the affected column. A column whose residual has not
    reached a new minimum in ``stall`` iterations is given up on.

    Returns ``(X, residual, iterations)`` with the relative true residual per system.
    """
    m, E = B.shape
    if maxiter is None:
        maxiter = 10 * m
    free = free.astype(float)
    pdiag = P.diagonal()[:, None]

    def apply(Y, F):
        return Y - F * (P @ Y)

    X = np.zeros((m, E)) if X0 is None else np.array(X0, dtype=float)
    b_norm = np.sqrt(_colsq(B))
    X[:, b_norm == 0] = 0.0
    R = B - apply(X, free)
    cols = np.flatnonzero(np.sqrt(_colsq(R)) > tol * b_norm)
    # working copies of the unconverged columns
    Xw, R, F = X[:, cols], R[:, cols], free[:, cols]
    minv = 1.0 / (1.0 - F * pdiag)
    thresh = (tol * b_norm[cols]) ** 2
    Rhat = R.copy()
    Pd = np.zeros_like(R)
    V = np.zeros_like(R)
    rho = np.ones(cols.size)
    alpha = np.ones(cols.size)
    omega = np.ones(cols.size)
    restart = np.zeros(cols.size, dtype=bool)
    best = _colsq(R)
    best_it = np.zeros(cols.size, dtype=int)
    tiny = np.finfo(float).tiny
    it = 0
    while cols.size and it < maxiter:
        it += 1
        if restart.any():
            Rhat[:, restart] = R[:, restart]
            Pd[:, restart] = 0.0
            V[:, restart] = 0.0
            rho[restart] = alpha[restart] = omega[restart] = 1.0
        rho_new = np.einsum("ij,ij->j", Rhat, R)
        beta = (rho_new / rho) * (alpha / omega)
        Pd -= omega * V
        Pd *= beta
        Pd += R
        Y = minv * Pd
        V = apply(Y, F)
        den = np.einsum("ij,ij->j", Rhat, V)
        bad = np.abs(den) <= tiny
        alpha = rho_new / np.where(bad, 1.0, den)
        alpha[bad] = 0.0
        S = R - alpha * V
        Xw += alpha * Y
        Z = minv * S
        T = apply(Z, F)
        tt = _colsq(T)
        omega = np.einsum("ij,ij->j", T, S) / np.where(tt > 0, tt, 1.0)
        omega[tt <= 0] = 0.0
        Xw += omega * Z
        S -= omega * T
        R = S
        rho = rho_new
        restart = bad | (omega == 0.0) | (np.abs(rho) <= tiny)
        r2 = _colsq(R)
        done = r2 <= thresh
        if done.any():
            # Confirm against the true residual; drifted columns continue from it.
            idx = np.flatnonzero(done)
            true_r = B[:, cols[idx]] - apply(Xw[:, idx], F[:, idx])
            t2 = _colsq(true_r)
            drifted = idx[t2 > thresh[idx]]
            if drifted.size:
                R[:, drifted] = true_r[:, t2 > thresh[idx]]
                restart[drifted] = True
                done[drifted] = False
        better = r2 < 0.98 * best
        best = np.where(better, r2, best)
        best_it = np.where(better, it, best_it)
        drop = done | (it - best_it > stall) | ~np.isfinite(r2)
        if drop.any():
            X[:, cols[drop]] = Xw[:, drop]
            keep = ~drop
            cols = cols[keep]
            Xw, R, Rhat, Pd, V = Xw[:, keep], R[:, keep], Rhat[:, keep], Pd[:, keep], V[:, keep]
            F, minv, thresh = F[:, keep], minv[:, keep], thresh[keep]
            rho, alpha, omega, restart = rho[keep], alpha[keep], omega[keep], restart[keep]
            best, best_it = best[keep], best_it[keep]
    if cols.size:
        X[:, cols] = Xw
    residual = np.sqrt(_colsq(B - apply(X, free))) / np.where(b_norm > 0, b_norm, 1.0)
    return X, residual, it


class _ChainSystems:
    """Systems ``x - free_k * (P x) = b_k`` sharing one transition matrix ``P``."""

    def __init__(self, P: sparse.csr_matrix, free: np.ndarray):
        self.P = P
        self.free = free

    def solve(self, B, tol, maxiter, X0=None):
        X, res, it = batched_bicgstab(self.P, self.free, B, tol, maxiter, X0)
        failed = np.flatnonzero(~(res <= tol * (1 + 1e-9)))
        for k in failed:
            # Stalled columns fall back to a sparse LU solve.
            A = sparse.identity(B.shape[0], format="csr") - sparse.diags(self.free[:, k] * 1.0) @ self.P
            x = _direct(A, B[:, k])
            if x is None:
                continue
            r = np.linalg.norm(A @ x - B[:, k]) / max(np.linalg.norm(B[:, k]), 1e-300)
            if np.isfinite(r) and not r > res[k]:
                X[:, k], res[k] = x, r
        return X, res, it, failed.size


# ---------------------------------------------------------------------------
# multi-hop


def can_reach(P: sparse.csr_matrix, target: int, transposed=False) -> np.ndarray:
    """Boolean mask of states with a positive-probability path to ``target``.

    Pass ``P.T`` with ``transposed=True`` to skip the transpose when calling in a loop.
    """
    Pt = P if transposed else P.T.tocsr()
    order = csgraph.breadth_first_order(Pt, target, directed=True, return_predecessors=False)
    mask = np.zeros(P.shape[0], dtype=bool)
    mask[order] = True
    return mask


def reachable_from(P: sparse.csr_matrix, source: int) -> np.ndarray:
    order = csgraph.breadth_first_order(P, source, directed=True, return_predecessors=False)
    mask = np.zeros(P.shape[0], dtype=bool)
    mask[order] = True
    return mask


@dataclass
class TransitionTimeTable:
    """One-hop times by slot and multi-hop times from ``origin``."""

    origin: int
    one_hop: np.ndarray
    multi_hop: np.ndarray
    successors: np.ndarray = field(repr=False)
    stats: SolveStats = field(default_factory=SolveStats)

    def one_hop_time(self, s: int, s_next: int) -> float:
        slots = np.flatnonzero(self.successors[s] == s_next)
        if s_next == s:
            return float(self.one_hop[s, IDLE])
        if slots.size == 0:
            raise KeyError(f"{s_next} is not a neighbor of {s}")
        return float(self.one_hop[s, slots[0]])


class MultiHopEstimator:
    """Solves the per-end-state systems from a fixed origin.

    All end states are solved together by :func:`batched_bicgstab`. Previous
    solutions are kept as warm starts; a warm start never changes the converged
    answer, only the iteration count.
    """

    def __init__(self, grid: GridWorld, options: SolverOptions | None = None):
        self.grid = grid
        self.options = options or SolverOptions()
        n = grid.n_cells
        # states reachable from the origin in the last estimate
        self.support = np.ones(n, dtype=bool)
        self._warm = {"h": np.zeros((n, n)), "g": np.zeros((n, n))}

    def estimate(self, origin: int, slot_pmf: np.ndarray, one_hop: np.ndarray):
        """Arrival times from ``origin`` under the policy PMF ``slot_pmf``.

        The goal is absorbing in this chain: the mission ends there. Only states
        reachable from ``origin`` can affect its arrival times, so each system is
        restricted to them. With ``condition_on_arrival`` the time to ``e`` is the
        expectation given that ``e`` is reached before the goal, ``g / h`` with
        ``h`` the arrival probability and ``g = E[T 1{reach e}]``; both solve
        systems with the same matrix. Otherwise states that cannot reach ``e``
        are pinned to the sentinel.
        """
        grid, opt = self.grid, self.options
        origin = grid._check(origin)
        n = grid.n_cells
        start = time.perf_counter()
        stats = SolveStats()
        out = np.full(n, np.nan)
        out[grid.states] = opt.sentinel
        sums = slot_pmf.sum(axis=1)
        bad = np.flatnonzero(~grid.blocked & (np.abs(sums - 1.0) > 1e-6))
        if bad.size:
            raise ValueError(f"PMF missing or unnormalized for states {bad[:10].tolist()}")
        chain = slot_pmf.copy()
        chain[grid.goal] = 0.0
        chain[grid.goal, IDLE] = 1.0
        hop = _finite_hop_times(one_hop, opt.sentinel)
        nbr_row = grid.successor_table[origin]
        for j in range(N_ACTIONS):
            if nbr_row[j] >= 0:
                out[nbr_row[j]] = hop[origin, j]
        out[origin] = 0.0

        P_full = slots_to_matrix(grid, chain)
        sub = np.flatnonzero(reachable_from(P_full, origin))
        self.support = np.zeros(n, dtype=bool)
        self.support[sub] = True
        local = np.full(n, -1)
        local[sub] = np.arange(sub.size)
        P = P_full[sub][:, sub].tocsr()
        PT = slots_to_matrix(grid, chain * hop)[sub][:, sub].tocsr()
        o = local[origin]
        adjacent = nbr_row[nbr_row >= 0]
        targets = np.setdiff1d(sub, adjacent)
        if targets.size == 0:
            stats.seconds = time.perf_counter() - start
            return out, stats
        use_direct = opt.method == "direct" or (
            opt.method == "auto" and opt.condition_on_arrival and sub.size <= opt.direct_max
        )
        t0 = None
        if use_direct:
            t0 = self._direct(P, PT, o, local[grid.goal], local[targets], stats)
        if t0 is None:
            targets, t0 = self._krylov(sub, P, PT, o, local, targets, stats)
        if stats.clamped:
            warnings.warn(f"clamped {stats.clamped} negative arrival times", RuntimeWarning, stacklevel=2)
        out[targets] = np.minimum(t0, opt.sentinel)
        stats.seconds = time.perf_counter() - start
        return out, stats

    def _krylov(self, sub, P, PT, o, local, targets, stats):
        """One system per end state, solved together by :func:`batched_bicgstab`."""
        grid, opt = self.grid, self.options
        tl = local[targets]
        m, E = sub.size, targets.size
        free = np.empty((m, E), dtype=bool)
        Pt = P.T.tocsr()
        for k, e in enumerate(tl):
            free[:, k] = can_reach(Pt, e, transposed=True)
        kept = free[o]
        targets, tl, free = targets[kept], tl[kept], free[:, kept]
        E = targets.size
        free[tl, np.arange(E)] = False
        maxiter = opt.maxiter_factor * grid.n_states
        systems = _ChainSystems(P, free)
        warm = lambda key: self._warm[key][np.ix_(sub, targets)]  # noqa: E731

        if opt.condition_on_arrival:
            B = np.zeros((m, E))
            B[tl, np.arange(E)] = 1.0
            # g / h amplifies absolute errors where h is small, so both are solved tighter.
            tol_h = max(opt.tol * opt.arrival_floor, 1e-13)
            # Columns that miss tol_h went through LU; accept what float64 allows there.
            tol_ok = max(tol_h, ATTAINABLE_RESIDUAL)
            H, res_h, it_h, d_h = systems.solve(B, tol_h, maxiter, warm("h"))
            self._check(res_h, targets, "arrival probability", tol=tol_ok)
            H = np.clip(H, 0.0, 1.0)
            G_rhs = np.where(free, PT @ H, 0.0)
            G, res_g, it_g, d_g = systems.solve(G_rhs, tol_h, maxiter, warm("g"))
            self._warm["h"][np.ix_(sub, targets)] = H
            self._warm["g"][np.ix_(sub, targets)] = G
            stats.iterations += it_h + it_g
            stats.direct += d_h + d_g
            stats.systems += 2 * E
            h0, g0 = H[o], G[o]
            ok = h0 >= opt.arrival_floor
            stats.clamped += int(np.sum(ok & (g0 < 0)))
            t0 = np.where(ok, np.maximum(g0, 0.0) / np.where(ok, h0, 1.0), opt.sentinel)
            self._check(res_g, targets, "arrival time", t0, tol=tol_ok)
        else:
            c = np.asarray(PT.sum(axis=1)).ravel()
            is_end = np.zeros((m, E), dtype=bool)
            is_end[tl, np.arange(E)] = True
            B = np.where(free, c[:, None], np.where(is_end, 0.0, opt.sentinel))
            X, res, it, d = systems.solve(B, opt.tol, maxiter, warm("g"))
            stats.direct += d
            self._warm["g"][np.ix_(sub, targets)] = X
            stats.iterations += it
            stats.systems += E
            stats.clamped += int(np.sum(X[o] < 0))
            t0 = np.maximum(X[o], 0.0)
            self._check(res, targets, "arrival time", t0)
        return targets, t0

    def _direct(self, P, PT, o, goal, tl, stats):
        """All end states at once from the fundamental matrix ``N = (I - Q)^-1``.

        ``Q`` is the chain among transient states (the goal absorbs). With
        ``W = P * t`` (probability times hop time) and ``K = N W N`` the
        arrival probability is ``N_oe / N_ee`` and the conditioned arrival time
        is ``K_oe / N_oe - K_ee / N_ee``. Returns None when some state cannot
        reach the goal, since ``I - Q`` is then singular.
        """
        opt = self.options
        m = P.shape[0]
        if goal < 0 or not can_reach(P, goal).all():
            return None
        tr = np.flatnonzero(np.arange(m) != goal)
        pos = np.full(m, -1)
        pos[tr] = np.arange(tr.size)
        A = np.eye(tr.size) - P[tr][:, tr].toarray()
        try:
            N = np.linalg.inv(A)
        except np.linalg.LinAlgError:
            return None
        res = np.sqrt(_colsq(A @ N - np.eye(tr.size)))
        stats.systems += tr.size
        stats.iterations += 1
        if not np.all(res <= opt.tol):
            k = int(np.argmax(np.where(np.isfinite(res), res, np.inf)))
            log.debug("fundamental matrix residual %.3g too large; using krylov", res[k])
            return None
        W = PT[tr][:, tr]
        M = np.asarray(W @ N)
        oo = pos[o]
        k_o = N[oo] @ M
        k_diag = np.einsum("ek,ke->e", N, M)
        n_diag = np.diag(N)
        t0 = np.full(tl.size, opt.sentinel)
        at_goal = tl == goal
        e = pos[tl[~at_goal]]
        n_oe = N[oo, e]
        h = n_oe / n_diag[e]
        ok = h >= opt.arrival_floor
        t = np.where(ok, k_o[e] / np.where(ok, n_oe, 1.0) - k_diag[e] / n_diag[e], opt.sentinel)
        stats.clamped += int(np.sum(t < 0))
        t0[~at_goal] = np.maximum(t, 0.0)
        if at_goal.any():
            # the goal is reached with probability one
            c = np.asarray(PT[tr].sum(axis=1)).ravel()
            t0[at_goal] = max(float(N[oo] @ c), 0.0)
        return t0

    def _check(self, res, targets, what, t0=None, tol=None):
        # Times past the sentinel are reported as the sentinel; at that scale a
        # relative residual of ``tol`` is below floating-point reach.
        tol = self.options.tol if tol is None else tol
        bad = ~(res <= tol * (1 + 1e-9))
        if t0 is not None:
            bad &= ~(t0 >= self.options.sentinel)
        bad = np.flatnonzero(bad)
        if bad.size:
            k = bad[np.argmax(res[bad])] if np.all(np.isfinite(res[bad])) else bad[0]
            raise SolverError(
                f"{what} solve for end state {int(targets[k])} did not converge "
                f"(relative residual {res[k]:.3e})",
                residual=float(res[k]),
                end_state=int(targets[k]),
            )


def multi_hop_times(grid, origin, slot_pmf, one_hop, options=None):
    """Expected arrival times from ``origin`` to every state, plus solve stats."""
    return MultiHopEstimator(grid, options).estimate(origin, slot_pmf, one_hop)
