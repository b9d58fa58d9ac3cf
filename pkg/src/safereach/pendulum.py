"""Ground-truth damped inverted pendulum with sinusoidal state disturbances.

States are plain arrays ``(angle, angular_velocity)`` in rad and rad/s.  The
continuous dynamics

    d(x1)/dt = x2 + d1(x1)
    d(x2)/dt = u / (m l^2) + (g / l) sin(x1) - (b / m) x2 + d2(x2)

are discretized by a Forward Euler step of length ``sample_time``; the
disturbances enter the derivative and are therefore multiplied by the step
length.  All functions are pure and deterministic.
"""

from dataclasses import dataclass

import numpy as np

from .regions import Box


@dataclass(frozen=True)
class PendulumParams:
    """Physical constants; all strictly positive."""

    mass: float = 1.0          # kg
    length: float = 1.0        # m
    friction: float = 0.1      # kg m^2 / s
    gravity: float = 9.81      # m / s^2
    sample_time: float = 0.2   # s

    def __post_init__(self):
        for name in ("mass", "length", "friction", "gravity", "sample_time"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be strictly positive, got {v}")


@dataclass(frozen=True)
class DisturbanceSpec:
    """Per-state sinusoidal disturbance ``d_i(x_i) = amplitude_i * sin(frequency_i * x_i)``."""

    amplitudes: np.ndarray
    frequencies: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.amplitudes, dtype=float))
        f = np.atleast_1d(np.asarray(self.frequencies, dtype=float))
        if a.shape != f.shape or a.ndim != 1:
            raise ValueError("amplitudes and frequencies must be vectors of equal length")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(f))):
            raise ValueError("disturbance parameters must be finite")
        a.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "frequencies", f)

    @classmethod
    def none(cls, ndim: int = 2) -> "DisturbanceSpec":
        return cls(np.zeros(ndim), np.zeros(ndim))

    def eval(self, state) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        return self.amplitudes * np.sin(self.frequencies * state)


def continuous_derivative(
    state,
    u: float,
    params: PendulumParams,
    disturbance: DisturbanceSpec,
) -> np.ndarray:
    """Time derivative of the disturbed pendulum at one state and control."""
    x1, x2 = float(state[0]), float(state[1])
    d = disturbance.eval((x1, x2))
    m, l, b, g = params.mass, params.length, params.friction, params.gravity
    return np.array(
        [
            x2 + d[0],
            u / (m * l * l) + (g / l) * np.sin(x1) - (b / m) * x2 + d[1],
        ]
    )


def euler_step(
    state,
    u: float,
    params: PendulumParams,
    disturbance: DisturbanceSpec,
) -> np.ndarray:
    """One Forward Euler step: ``x + sample_time * derivative(x, u)``."""
    state = np.asarray(state, dtype=float)
    return state + params.sample_time * continuous_derivative(
        state, u, params, disturbance
    )


def in_safe_set(state, safe: Box) -> bool:
    """Closed-box membership; boundary points count as safe."""
    return safe.contains(state)


def wrap_angle(state) -> np.ndarray:
    """Wrap the angle component into (-pi, pi]; optional, off by default
    because the operating box never reaches the wrap point."""
    state = np.asarray(state, dtype=float).copy()
    state[0] = -((-state[0] + np.pi) % (2.0 * np.pi) - np.pi)
    return state
