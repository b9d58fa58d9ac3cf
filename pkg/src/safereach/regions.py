"""Axis-aligned boxes and Euclidean balls used for state, safe, and target sets.

All sets are closed: boundary points count as members.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box ``{x : lower <= x <= upper}``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.ndim != 1 or hi.ndim != 1 or lo.shape != hi.shape:
            raise ValueError("box bounds must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError(f"box lower bound exceeds upper bound: {lo} > {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def ndim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def contains_many(self, X: np.ndarray) -> np.ndarray:
        """Vectorized membership for points stacked in rows of ``X``."""
        X = np.asarray(X, dtype=float)
        return np.all((X >= self.lower) & (X <= self.upper), axis=-1)

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def erode(self, r: float) -> "Box":
        """Shrink the box by ``r`` on every face (Minkowski erosion by a cube)."""
        lo = self.lower + r
        hi = self.upper - r
        if np.any(lo > hi):
            raise ValueError(
                f"erosion by r={r} empties the box (widths {self.widths})"
            )
        return Box(lo, hi)

    def issubset(self, other: "Box") -> bool:
        return bool(np.all(self.lower >= other.lower) and np.all(self.upper <= other.upper))


@dataclass(frozen=True)
class Ball:
    """Closed Euclidean ball of given center and radius."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        if not np.all(np.isfinite(c)):
            raise ValueError("ball center must be finite")
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError("ball radius must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def ndim(self) -> int:
        return self.center.size

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.linalg.norm(x - self.center) <= self.radius)

    def contains_many(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.linalg.norm(X - self.center, axis=-1) <= self.radius


Region = Box | Ball
