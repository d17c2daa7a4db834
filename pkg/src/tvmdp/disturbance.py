"""Time-varying disturbance fields ``d(x, t)``.

Every field exposes ``query(x, t)`` returning a velocity in m/s. ``x`` may be a
single 2-vector or an ``(n, 2)`` array, and ``t`` a scalar or an ``(n,)`` array; the
result broadcasts accordingly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class FieldFormatError(ValueError):
    pass


def rotate90(v: np.ndarray) -> np.ndarray:
    """Counter-clockwise quarter turn of the last axis."""
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


class TimeVaryingField:
    kind = "analytic"
    horizon = math.inf

    def query(self, x, t) -> np.ndarray:
        raise NotImplementedError

    def is_static(self) -> bool:
        return False

    def _clip_time(self, t):
        # Past the horizon the field holds its last value.
        return np.minimum(np.asarray(t, dtype=float), self.horizon)


@dataclass(frozen=True)
class UniformField(TimeVaryingField):
    velocity: tuple[float, float] = (0.0, 0.0)

    def query(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.velocity, dtype=float), x.shape).copy()

    def is_static(self) -> bool:
        return True


@dataclass(frozen=True)
class VortexField(TimeVaryingField):
    """Rigid-rotation vortex ``strength * rotate90(x - c(t))``.

    The center starts at ``center`` and travels on a circle of ``orbit_radius``
    at ``angular_rate`` rad/s, plus a straight drift of ``drift`` m/s.
    ``strength_rate`` changes the strength linearly in time; the result may go
    negative, which reverses the rotation sense.
    """

    center: tuple[float, float] = (0.0, 0.0)
    strength: float = 0.1
    angular_rate: float = 0.0
    orbit_radius: float = 0.0
    drift: tuple[float, float] = (0.0, 0.0)
    strength_rate: float = 0.0
    horizon: float = math.inf

    def __post_init__(self):
        if self.strength < 0:
            raise ValueError(f"vortex strength must be >= 0, got {self.strength}")

    def center_at(self, t) -> np.ndarray:
        t = self._clip_time(t)
        phase = self.angular_rate * t
        c = np.asarray(self.center, dtype=float)
        # Orbit is anchored so that c(0) == center.
        offset = self.orbit_radius * np.stack([np.cos(phase) - 1.0, np.sin(phase)], axis=-1)
        return c + offset + np.multiply.outer(t, np.asarray(self.drift, dtype=float))

    def strength_at(self, t):
        return self.strength + self.strength_rate * self._clip_time(t)

    def query(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        c = self.center_at(t)
        k = np.asarray(self.strength_at(t))[..., None]
        return k * rotate90(x - c)

    def is_static(self) -> bool:
        no_motion = self.orbit_radius == 0.0 or self.angular_rate == 0.0
        return no_motion and self.drift == (0.0, 0.0) and self.strength_rate == 0.0


@dataclass(frozen=True)
class SpinningField(TimeVaryingField):
    """Spatially uniform current whose heading turns at ``angular_rate`` rad/s."""

    magnitude: float = 0.5
    angular_rate: float = 0.1
    phase: float = 0.0
    horizon: float = math.inf

    def __post_init__(self):
        if self.magnitude < 0:
            raise ValueError(f"magnitude must be >= 0, got {self.magnitude}")

    def query(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ang = self.phase + self.angular_rate * self._clip_time(t)
        v = self.magnitude * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        return np.broadcast_to(v, x.shape).copy()

    def is_static(self) -> bool:
        return self.angular_rate == 0.0 or self.magnitude == 0.0


def make_vortex(center, strength, angular_rate=0.0, **kwargs) -> VortexField:
    return VortexField(
        center=(float(center[0]), float(center[1])),
        strength=float(strength),
        angular_rate=float(angular_rate),
        **kwargs,
    )


def make_spinning(magnitude, angular_rate, phase=0.0, horizon=math.inf) -> SpinningField:
    return SpinningField(float(magnitude), float(angular_rate), float(phase), horizon)


class GriddedFieldSeries(TimeVaryingField):
    """Snapshots of ``(u, v)`` on cell centers, interpolated bilinearly in space
    and linearly in time.

    ``u`` and ``v`` are ``(n_snapshots, height, width)`` arrays. Queries before
    the first snapshot or after the last one hold the nearest snapshot.
    """

    kind = "gridded"

    def __init__(self, times, u, v, cell_size=1.0, origin=(0.5, 0.5)):
        times = np.asarray(times, dtype=float)
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise FieldFormatError("a field series needs at least 2 snapshots")
        if np.any(np.diff(times) <= 0):
            raise FieldFormatError("snapshot timestamps must be strictly increasing")
        if u.shape != v.shape or u.ndim != 3 or u.shape[0] != times.size:
            raise FieldFormatError(
                f"u/v shapes {u.shape}/{v.shape} do not match {times.size} snapshots"
            )
        self.times = times
        self.u = u
        self.v = v
        self.cell_size = float(cell_size)
        self.origin = (float(origin[0]), float(origin[1]))
        self.height, self.width = u.shape[1:]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def _time_weights(self, t):
        t = np.clip(np.asarray(t, dtype=float), self.times[0], self.times[-1])
        k = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2)
        w = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return k, w

    def _space_weights(self, x):
        rel = (np.asarray(x, dtype=float) - np.asarray(self.origin)) / self.cell_size
        gx = np.clip(rel[..., 0], 0.0, self.width - 1)
        gy = np.clip(rel[..., 1], 0.0, self.height - 1)
        i0 = np.clip(np.floor(gx).astype(int), 0, max(self.width - 2, 0))
        j0 = np.clip(np.floor(gy).astype(int), 0, max(self.height - 2, 0))
        i1 = np.minimum(i0 + 1, self.width - 1)
        j1 = np.minimum(j0 + 1, self.height - 1)
        fx = gx - i0
        fy = gy - j0
        return i0, i1, j0, j1, fx, fy

    def query(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        k, w = self._time_weights(t)
        i0, i1, j0, j1, fx, fy = self._space_weights(x)
        out = []
        for comp in (self.u, self.v):
            a0 = _take_bilinear(comp, k, i0, i1, j0, j1, fx, fy)
            a1 = _take_bilinear(comp, k + 1, i0, i1, j0, j1, fx, fy)
            out.append(a0 * (1 - w) + a1 * w)
        return np.stack(out, axis=-1)

    def to_json(self) -> dict:
        return {
            "width": int(self.width),
            "height": int(self.height),
            "cell_size": self.cell_size,
            "snapshots": [
                {"t": float(t), "u": self.u[i].ravel().tolist(), "v": self.v[i].ravel().tolist()}
                for i, t in enumerate(self.times)
            ],
        }


def _take_bilinear(comp, k, i0, i1, j0, j1, fx, fy):
    return (
        comp[k, j0, i0] * (1 - fx) * (1 - fy)
        + comp[k, j0, i1] * fx * (1 - fy)
        + comp[k, j1, i0] * (1 - fx) * fy
        + comp[k, j1, i1] * fx * fy
    )


def interpolate(series: GriddedFieldSeries, x, t) -> np.ndarray:
    return series.query(x, t)


def load_field_file(path, origin=None) -> GriddedFieldSeries:
    """Read a JSON field file.

    Layout: ``{"width": W, "height": H, "cell_size": C, "snapshots": [{"t": s,
    "u": [W*H floats], "v": [W*H floats]}, ...]}`` with row-major flat arrays.
    """
    doc = json.loads(Path(path).read_text())
    return field_from_json(doc, origin=origin)


def field_from_json(doc: dict, origin=None) -> GriddedFieldSeries:
    try:
        w, h = int(doc["width"]), int(doc["height"])
        cell = float(doc["cell_size"])
        snaps = doc["snapshots"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FieldFormatError(f"malformed field document: {exc}") from None
    if origin is None:
        origin = (0.5 * cell, 0.5 * cell)
    times, us, vs = [], [], []
    for i, snap in enumerate(snaps):
        u = np.asarray(snap.get("u", []), dtype=float)
        v = np.asarray(snap.get("v", []), dtype=float)
        if u.size != w * h or v.size != w * h:
            raise FieldFormatError(
                f"snapshot {i}: expected {w * h} values for a {w}x{h} grid, "
                f"got u={u.size}, v={v.size}"
            )
        times.append(float(snap["t"]))
        us.append(u.reshape(h, w))
        vs.append(v.reshape(h, w))
    return GriddedFieldSeries(times, us, vs, cell_size=cell, origin=origin)


def save_field_file(series: GriddedFieldSeries, path) -> None:
    Path(path).write_text(json.dumps(series.to_json()))


def sample_series(field: TimeVaryingField, width, height, times, cell_size=1.0, origin=(0.5, 0.5)):
    """Snapshot an analytic field onto cell centers at the given times."""
    cols, rows = np.meshgrid(np.arange(width), np.arange(height))
    pts = np.stack([cols, rows], axis=-1) * cell_size + np.asarray(origin, dtype=float)
    u, v = [], []
    for t in times:
        d = field.query(pts.reshape(-1, 2), np.full(width * height, float(t))).reshape(height, width, 2)
        u.append(d[..., 0])
        v.append(d[..., 1])
    return GriddedFieldSeries(times, u, v, cell_size=cell_size, origin=origin)
