"""Time-varying transition model built from Gaussian motion.

Over one step of duration ``T`` the robot's displacement is Gaussian with mean
``(speed * unit_direction + d(x(s), t)) * T`` and covariance
``action_cov + disturbance_cov`` (the sum of two independent Gaussians). The PMF
over the one-hop neighborhood is the displacement density integrated over each
neighbor cell, renormalized over the admissible neighbors.

Array conventions: action PMFs are ``(n_cells, 9, 9)`` arrays indexed by
``[state, action, slot]``. Slot ``j`` is the cell reached by ``ACTION_OFFSETS[j]``,
so the successor of slot ``j`` is ``grid.successor_table[s, j]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .gridworld import ACTION_OFFSETS, N_ACTIONS, UNIT_DIRECTIONS, Action, GridWorld

# Entries below this are dropped before renormalizing; keeps the support graph sparse.
PRUNE_BELOW = 1e-12


class DegenerateCovarianceError(ValueError):
    pass


def _as_cov(c) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.ndim == 0:
        return float(c) * np.eye(2)
    return c.reshape(2, 2)


def check_spd(cov, name="covariance", allow_zero=False) -> np.ndarray:
    cov = _as_cov(cov)
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
        raise DegenerateCovarianceError(f"{name} is not symmetric: {cov.tolist()}")
    eig = np.linalg.eigvalsh(cov)
    if allow_zero and np.all(eig >= 0):
        return cov
    if np.any(eig <= 0):
        raise DegenerateCovarianceError(f"{name} is not positive definite (eigenvalues {eig})")
    return cov


@dataclass(frozen=True)
class NoiseConfig:
    """Per-step displacement covariances, in m^2.

    Either covariance may be all zeros (no noise from that source), but their sum
    must be positive definite wherever a PMF is built.
    """

    action_cov: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(2))
    disturbance_cov: np.ndarray = field(default_factory=lambda: 0.04 * np.eye(2))

    def __post_init__(self):
        object.__setattr__(self, "action_cov", check_spd(self.action_cov, "action_cov", True))
        object.__setattr__(
            self, "disturbance_cov", check_spd(self.disturbance_cov, "disturbance_cov", True)
        )

    @classmethod
    def isotropic(cls, action_sigma, disturbance_sigma):
        return cls(action_sigma**2 * np.eye(2), disturbance_sigma**2 * np.eye(2))

    @classmethod
    def default(cls, cell_size=1.0):
        return cls.isotropic(0.1 * cell_size, 0.2 * cell_size)

    @property
    def covariance(self) -> np.ndarray:
        return self.action_cov + self.disturbance_cov

    def scaled(self, factor: float) -> "NoiseConfig":
        return NoiseConfig(self.action_cov * factor, self.disturbance_cov * factor)


@dataclass(frozen=True)
class GaussianMotion:
    mean: np.ndarray
    covariance: np.ndarray
    duration: float

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(2))
        object.__setattr__(self, "covariance", check_spd(self.covariance))

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        diff = x - self.mean
        inv = np.linalg.inv(self.covariance)
        q = np.einsum("...i,ij,...j->...", diff, inv, diff)
        return np.exp(-0.5 * q) / (2 * np.pi * np.sqrt(np.linalg.det(self.covariance)))

    def sample(self, rng, size=None) -> np.ndarray:
        return rng.multivariate_normal(self.mean, self.covariance, size=size)


@dataclass(frozen=True)
class TransitionPMF:
    source: int
    time: float
    entries: tuple[tuple[int, float], ...]

    def as_dict(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for s, p in self.entries:
            out[s] = out.get(s, 0.0) + p
        return out


def step_duration(grid: GridWorld, speed: float) -> float:
    return grid.cell_size / speed


def motion_model(grid, s, action: Action, field_, t, noise: NoiseConfig, duration=None):
    """Displacement distribution for applying ``action`` at ``s`` at time ``t``."""
    x = grid.state_center(s)
    if duration is None:
        duration = step_duration(grid, action.speed)
    vel = action.velocity + np.asarray(field_.query(x, t), dtype=float)
    return GaussianMotion(vel * duration, noise.covariance, duration)


def motion_means(grid, field_, times, speed, duration=None) -> np.ndarray:
    """``(n_cells, 9, 2)`` mean displacements for every state and action.

    ``times`` is a scalar or an ``(n_cells,)`` array giving the time at which each
    state's disturbance is evaluated.
    """
    if duration is None:
        duration = step_duration(grid, speed)
    times = np.broadcast_to(np.asarray(times, dtype=float), (grid.n_cells,))
    d = np.asarray(field_.query(grid.centers, times), dtype=float)
    vel = speed * UNIT_DIRECTIONS[None, :, :] + d[:, None, :]
    return vel * duration


# Gauss-Legendre rule for the correlated-covariance path.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


def slot_probabilities(means, cov, cell_size) -> np.ndarray:
    """Integrate ``N(mean, cov)`` over the 9 neighbor cells around the origin.

    ``means`` has shape ``(..., 2)``; the result has shape ``(..., 9)`` and is not
    normalized. Diagonal covariances integrate exactly as products of normal CDF
    differences. Correlated covariances integrate the y-direction exactly and the
    x-direction with composite 5-node Gauss-Legendre on panels no wider than the
    x standard deviation.
    """
    cov = check_spd(cov)
    means = np.asarray(means, dtype=float)
    lo = (ACTION_OFFSETS - 0.5) * cell_size
    hi = (ACTION_OFFSETS + 0.5) * cell_size
    sx, sy = np.sqrt(cov[0, 0]), np.sqrt(cov[1, 1])
    mx = means[..., 0, None]
    my = means[..., 1, None]
    if cov[0, 1] == 0.0:
        px = ndtr((hi[:, 0] - mx) / sx) - ndtr((lo[:, 0] - mx) / sx)
        py = ndtr((hi[:, 1] - my) / sy) - ndtr((lo[:, 1] - my) / sy)
        return px * py
    rho = cov[0, 1] / (sx * sy)
    s_cond = sy * np.sqrt(1.0 - rho**2)
    panels = int(min(64, max(1, np.ceil(cell_size / sx))))
    # Nodes over [-0.5, 0.5] cell widths, composite over `panels` sub-intervals.
    edges = np.linspace(-0.5, 0.5, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    u = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel() * cell_size
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel() * cell_size
    xs = ACTION_OFFSETS[:, 0, None] * cell_size + u[None, :]  # (9, q)
    z = (xs - mx[..., None]) / sx  # (..., 9, q)
    phi = np.exp(-0.5 * z**2) / (np.sqrt(2 * np.pi) * sx)
    m_cond = my[..., None] + rho * sy * z
    inner = ndtr((hi[:, 1, None] - m_cond) / s_cond) - ndtr((lo[:, 1, None] - m_cond) / s_cond)
    return np.sum(phi * inner * w, axis=-1)


def normalize_slots(raw, valid, means=None, cell_size=1.0) -> np.ndarray:
    """Restrict to admissible slots, drop negligible entries and renormalize.

    Rows whose admissible mass underflows to zero put all mass on the admissible
    slot nearest the mean.
    """
    p = np.where(valid, np.maximum(raw, 0.0), 0.0)
    total = p.sum(axis=-1, keepdims=True)
    empty = total[..., 0] <= 0
    if np.any(empty):
        if means is None:
            raise ValueError("no admissible probability mass and no mean to fall back on")
        centers = ACTION_OFFSETS * cell_size
        d2 = np.sum((means[..., None, :] - centers) ** 2, axis=-1)
        d2 = np.where(valid, d2, np.inf)
        nearest = np.argmin(d2, axis=-1)
        fallback = np.zeros_like(p)
        np.put_along_axis(fallback, nearest[..., None], 1.0, axis=-1)
        p = np.where(empty[..., None], fallback, p)
        total = p.sum(axis=-1, keepdims=True)
    p = p / total
    p = np.where(p < PRUNE_BELOW, 0.0, p)
    return p / p.sum(axis=-1, keepdims=True)


def discretize(g: GaussianMotion, s: int, grid: GridWorld, time: float = 0.0) -> TransitionPMF:
    """PMF over ``N(s)`` for a displacement distribution applied at ``s``."""
    s = grid._check(s)
    raw = slot_probabilities(g.mean, g.covariance, grid.cell_size)
    valid = grid.admissible[s]
    p = normalize_slots(raw, valid, g.mean, grid.cell_size)
    succ = grid.successor_table[s]
    entries = tuple((int(succ[j]), float(p[j])) for j in range(N_ACTIONS) if valid[j])
    return TransitionPMF(s, float(time), entries)


def action_pmfs(grid, field_, times, noise: NoiseConfig, speed, duration=None) -> np.ndarray:
    """``(n_cells, 9, 9)`` PMFs for every (state, action); zero rows for inadmissible actions.

    ``times`` (scalar or per-state array) picks the disturbance time at each state.
    """
    means = motion_means(grid, field_, times, speed, duration)
    raw = slot_probabilities(means, noise.covariance, grid.cell_size)
    valid = np.broadcast_to(grid.admissible[:, None, :], raw.shape)
    p = normalize_slots(raw, valid, means, grid.cell_size)
    p[~grid.admissible] = 0.0
    return p


def mixture_from_policy(pmfs: np.ndarray, policy_mask: np.ndarray) -> np.ndarray:
    """Equal-weight mixture over each state's optimal action set: ``(n_cells, 9)``."""
    mask = policy_mask.astype(float)
    k = mask.sum(axis=1)
    if np.any(k[policy_mask.any(axis=1)] == 0):
        raise ValueError("empty optimal action set")
    k = np.where(k == 0, 1.0, k)
    return np.einsum("sa,saj->sj", mask, pmfs) / k[:, None]


def mixture_pmf(grid, s, tied_actions, field_, t, noise, duration=None) -> TransitionPMF:
    """Mixture with weights ``1/k`` over ``k`` tied actions."""
    tied_actions = list(tied_actions)
    if not tied_actions:
        raise ValueError("mixture_pmf needs at least one action")
    w = 1.0 / len(tied_actions)
    acc: dict[int, float] = {}
    for a in tied_actions:
        g = motion_model(grid, s, a, field_, t, noise, duration)
        for succ, p in discretize(g, s, grid, t).entries:
            acc[succ] = acc.get(succ, 0.0) + w * p
    order = [succ for _, succ in grid.neighbors(s)]
    return TransitionPMF(int(s), float(t), tuple((succ, acc.get(succ, 0.0)) for succ in order))


def slots_to_matrix(grid: GridWorld, slot_pmf: np.ndarray):
    """Scatter ``(n_cells, 9)`` slot probabilities into a sparse ``n_cells x n_cells`` matrix."""
    from scipy import sparse

    succ = grid.successor_table
    rows = np.repeat(np.arange(grid.n_cells), N_ACTIONS)
    cols = succ.ravel()
    vals = slot_pmf.ravel()
    keep = (cols >= 0) & (vals > 0)
    return sparse.csr_matrix(
        (vals[keep], (rows[keep], cols[keep])), shape=(grid.n_cells, grid.n_cells)
    )
