"""Fixed-step simulation, training-set sampling, noise and cost utilities."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import LengthMismatch, NonFinite
from ..koopman import SnapshotSet
from ..observables import BasisSpec, DynamicsModel, Trajectory
from .fish import wrap_angle

__all__ = [
    "rk4_step",
    "integrate",
    "SamplingSpec",
    "sample_training_set",
    "add_noise",
    "tracking_cost",
]


def rk4_step(flow, s, u, h):
    k1 = flow(s, u)
    k2 = flow(s + 0.5 * h * k1, u)
    k3 = flow(s + 0.5 * h * k2, u)
    k4 = flow(s + h * k3, u)
    return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _flow_of(model):
    return model.flow if isinstance(model, DynamicsModel) else model


def integrate(
    model,
    s0,
    controls,
    dt_out: float,
    duration: float,
    substeps: int = 10,
) -> Trajectory:
    """Classical RK4 with ``substeps`` internal steps per output interval.

    ``controls`` is held constant over each output interval and may be

    * an array of shape ``(M,)`` or ``(B, M)``: constant for the whole run;
    * an array of shape ``(steps, M)`` or ``(steps, B, M)``: one per interval;
    * a callable ``(t, s) -> u`` evaluated at the start of each interval.

    ``s0`` may carry a leading batch axis; outputs then have shape
    ``(steps + 1, B, N)``.  The returned controls have one row per sample, the
    last row repeating the final interval's control.
    """
    if not dt_out > 0:
        raise ValueError("dt_out must be positive")
    if duration < 0:
        raise ValueError("duration must be non-negative")
    flow = _flow_of(model)
    s = np.array(s0, dtype=float)
    steps = int(round(duration / dt_out))
    if abs(steps * dt_out - duration) > 1e-9 * max(1.0, duration):
        raise ValueError("duration must be an integer multiple of dt_out")
    h = dt_out / substeps

    if callable(controls):
        get_u = lambda k, t, x: np.asarray(controls(t, x), dtype=float)
    else:
        U = np.asarray(controls, dtype=float)
        per_step = U.ndim >= 2 and U.shape[0] == steps and steps > 0 and (U.ndim == s.ndim + 1)
        if per_step:
            get_u = lambda k, t, x: U[min(k, steps - 1)]
        else:
            get_u = lambda k, t, x: U

    states = np.empty((steps + 1,) + s.shape)
    states[0] = s
    u0 = get_u(0, 0.0, s)
    ctrl = np.empty((steps + 1,) + np.broadcast_shapes(u0.shape, s.shape[:-1] + u0.shape[-1:]))
    for k in range(steps):
        t = k * dt_out
        u = get_u(k, t, s) if k else u0
        ctrl[k] = u
        for _ in range(substeps):
            s = rk4_step(flow, s, u, h)
        if not np.all(np.isfinite(s)):
            raise NonFinite(f"integration blew up at t = {t + dt_out:.6g}", step=k + 1, time=t + dt_out)
        states[k + 1] = s
    ctrl[steps] = ctrl[steps - 1] if steps else u0
    t = dt_out * np.arange(steps + 1)
    if s.ndim == 1:
        return Trajectory(t, states, ctrl)
    return _BatchTrajectory(t, states, ctrl)


@dataclass(frozen=True)
class _BatchTrajectory:
    """Batch of trajectories sharing a time grid (states: (T, B, N))."""

    t: np.ndarray
    states: np.ndarray
    controls: np.ndarray

    def __len__(self):
        return len(self.t)

    def member(self, b: int) -> Trajectory:
        return Trajectory(self.t, self.states[:, b], self.controls[:, b])


@dataclass(frozen=True)
class SamplingSpec:
    """Uniform sampling intervals for initial states and controls.

    ``control_transform`` maps drawn controls to model inputs (the fish draws
    tail angles in degrees and maps them to (u1, u2)).
    """

    state_bounds: tuple
    control_bounds: tuple
    count: int
    dt: float
    seed: int = 0
    control_transform: Callable | None = None

    def __post_init__(self):
        sb = np.asarray(self.state_bounds, float).reshape(-1, 2)
        cb = np.asarray(self.control_bounds, float).reshape(-1, 2)
        if np.any(sb[:, 0] > sb[:, 1]) or np.any(cb[:, 0] > cb[:, 1]):
            raise ValueError("lower bounds must not exceed upper bounds")
        if self.count < 1:
            raise ValueError("count must be at least 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "state_bounds", sb)
        object.__setattr__(self, "control_bounds", cb)

    def draw(self, rng: np.random.Generator | None = None):
        rng = np.random.default_rng(self.seed) if rng is None else rng
        sb, cb = self.state_bounds, self.control_bounds
        s = sb[:, 0] + (sb[:, 1] - sb[:, 0]) * rng.random((self.count, sb.shape[0]))
        c = cb[:, 0] + (cb[:, 1] - cb[:, 0]) * rng.random((self.count, cb.shape[0]))
        u = c if self.control_transform is None else np.asarray(self.control_transform(c), float)
        return s, u


def sample_training_set(model: DynamicsModel, spec: SamplingSpec, basis: BasisSpec, substeps: int = 10) -> SnapshotSet:
    """One-step records (s0, u, s1, u): draws, zero-order hold over ``dt``, RK4."""
    s0, u = spec.draw()
    traj = integrate(model, s0, u, spec.dt, spec.dt, substeps=substeps)
    s1 = traj.states[-1]
    return SnapshotSet.from_records(basis, s0, u, s1, u, dt=spec.dt)


def add_noise(trajectory, sigma, seed: int = 0):
    """Independent Gaussian noise per sample and state.

    Accepts a :class:`Trajectory` (noise added to states) or a bare array.
    """
    rng = np.random.default_rng(seed)
    if isinstance(trajectory, Trajectory):
        x = trajectory.states
    else:
        x = np.asarray(trajectory, float)
    sig = np.broadcast_to(np.asarray(sigma, float), x.shape[-1:])
    if np.any(sig < 0):
        raise ValueError("sigma must be non-negative")
    noisy = x + rng.standard_normal(x.shape) * sig
    if isinstance(trajectory, Trajectory):
        return Trajectory(trajectory.t, noisy, trajectory.controls)
    return noisy


def tracking_cost(states, reference, controls, Q, R, angle_indices=(), scale: float = 1.0) -> float:
    """scale · Σ_k (s_k − r_k)ᵀQ(s_k − r_k) + u_kᵀRu_k with wrapped angle errors.

    ``scale`` lets callers report a time-integral (scale = sampling period).
    """
    s = np.asarray(states, float)
    r = np.asarray(reference, float)
    u = np.asarray(controls, float)
    if s.ndim == 1:
        s = s[:, None]
    if r.ndim == 1:
        r = r[:, None]
    if u.ndim == 1:
        u = u[:, None]
    if not (s.shape[0] == r.shape[0] == u.shape[0]):
        raise LengthMismatch(
            f"states ({s.shape[0]}), reference ({r.shape[0]}) and controls ({u.shape[0]}) must align"
        )
    e = s - r
    for i in angle_indices:
        e[..., i] = wrap_angle(e[..., i])
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))
    c = np.einsum("...i,ij,...j->...", e, Q, e).sum() + np.einsum("...i,ij,...j->...", u, R, u).sum()
    return float(scale * c)
