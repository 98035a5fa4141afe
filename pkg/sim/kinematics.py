"""
Closest-point-of-approach maths for pairs of moving entities.

All functions are pure. Positions are metres, velocities m/s,
accelerations m/s^2 and times seconds, in a planar local frame.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class Vec2:
    x: float
    y: float

    def __add__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x - other.x, self.y - other.y)

    def __neg__(self) -> "Vec2":
        return Vec2(-self.x, -self.y)

    def scale(self, k: float) -> "Vec2":
        return Vec2(self.x * k, self.y * k)

    def dot(self, other: "Vec2") -> float:
        return self.x * other.x + self.y * other.y

    def norm_sq(self) -> float:
        return self.x * self.x + self.y * self.y

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.y)

    @classmethod
    def from_polar(cls, magnitude: float, heading: float) -> "Vec2":
        return cls(magnitude * math.cos(heading), magnitude * math.sin(heading))


ZERO = Vec2(0.0, 0.0)


@dataclass(frozen=True)
class KinematicState:
    position: Vec2
    velocity: Vec2
    acceleration: Vec2 = field(default=ZERO)

    @property
    def speed(self) -> float:
        return self.velocity.norm()

    def advanced(self, dt: float) -> "KinematicState":
        """Constant-velocity extrapolation by dt seconds"""
        if dt == 0.0:
            return self
        return KinematicState(self.position + self.velocity.scale(dt), self.velocity, self.acceleration)

    def is_finite(self) -> bool:
        return self.position.is_finite() and self.velocity.is_finite() and self.acceleration.is_finite()


class CpaKind(str, Enum):
    APPROACHING = "approaching"
    RECEDING = "receding"
    PARALLEL = "parallel"


@dataclass(frozen=True)
class CpaResult:
    kind: CpaKind
    t_star: Optional[float] = None
    d_star: Optional[float] = None
    current_distance: Optional[float] = None

    @classmethod
    def approaching(cls, t_star: float, d_star: float) -> "CpaResult":
        return cls(CpaKind.APPROACHING, t_star=t_star, d_star=d_star)

    @classmethod
    def receding(cls) -> "CpaResult":
        return cls(CpaKind.RECEDING)

    @classmethod
    def parallel(cls, current_distance: float) -> "CpaResult":
        return cls(CpaKind.PARALLEL, current_distance=current_distance)


def squared_distance_at(a: KinematicState, b: KinematicState, t: float) -> float:
    """D(t) = |(x0 - x0b) + (v - vb) t|^2 under constant velocity"""
    d = (a.position - b.position) + (a.velocity - b.velocity).scale(t)
    return d.dot(d)


def closest_approach(a: KinematicState, b: KinematicState) -> CpaResult:
    """Closed-form time and distance of minimum separation (constant velocity)"""
    w0 = a.position - b.position
    dv = a.velocity - b.velocity
    vv = dv.dot(dv)
    if vv == 0.0:
        return CpaResult.parallel(w0.norm())

    t_star = -w0.dot(dv) / vv
    if t_star < 0.0:
        return CpaResult.receding()
    # t* == 0 means the pair is at its minimum right now
    d2 = squared_distance_at(a, b, t_star)
    return CpaResult.approaching(t_star, math.sqrt(max(d2, 0.0)))


def _positions(state: KinematicState, ts: np.ndarray) -> np.ndarray:
    """Constant-acceleration positions at times ts, frozen once braking stops the entity"""
    p = np.array([state.position.x, state.position.y])
    v = np.array([state.velocity.x, state.velocity.y])
    acc = np.array([state.acceleration.x, state.acceleration.y])

    a_dot_v = float(acc @ v)
    a_sq = float(acc @ acc)
    if a_dot_v < 0.0 and a_sq > 0.0:
        # speed reaches its minimum at t_stop; entities never reverse
        t_stop = -a_dot_v / a_sq
        ts = np.minimum(ts, t_stop)
    return p + np.outer(ts, v) + 0.5 * np.outer(ts * ts, acc)


def _separation_sq(a: KinematicState, b: KinematicState, ts: np.ndarray) -> np.ndarray:
    diff = _positions(a, ts) - _positions(b, ts)
    return np.einsum("ij,ij->i", diff, diff)


def closest_approach_accel(a: KinematicState, b: KinematicState, horizon: float, step: float) -> CpaResult:
    """
    Minimum separation under constant-acceleration extrapolation over [0, horizon].

    Grid search at `step` followed by ternary refinement inside the bracket
    around the best grid point. Speeds are clamped at zero.
    """
    if not horizon > 0.0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if not step > 0.0:
        raise ValueError(f"step must be positive, got {step}")

    dv = a.velocity - b.velocity
    da = a.acceleration - b.acceleration
    if dv.norm_sq() == 0.0 and da.norm_sq() == 0.0:
        return CpaResult.parallel((a.position - b.position).norm())

    n = int(math.floor(horizon / step + 1e-9))
    ts = np.arange(n + 1, dtype=float) * step
    if ts[-1] < horizon:
        ts = np.append(ts, horizon)
    d2 = _separation_sq(a, b, ts)

    idx = int(np.argmin(d2))
    if idx == 0 and d2[1] > d2[0]:
        # separation grows from the start; check the instantaneous slope too
        w0 = a.position - b.position
        if w0.dot(dv) > 0.0 or (w0.dot(dv) == 0.0 and w0.dot(da) > 0.0):
            return CpaResult.receding()

    lo = ts[max(idx - 1, 0)]
    hi = ts[min(idx + 1, len(ts) - 1)]
    for _ in range(100):
        if hi - lo < 1e-12:
            break
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        f1, f2 = _separation_sq(a, b, np.array([m1, m2]))
        if f1 <= f2:
            hi = m2
        else:
            lo = m1

    t_star = 0.5 * (lo + hi)
    d_refined = float(_separation_sq(a, b, np.array([t_star]))[0])
    if d_refined > d2[idx]:
        t_star, d_refined = float(ts[idx]), float(d2[idx])
    return CpaResult.approaching(float(t_star), math.sqrt(max(d_refined, 0.0)))
