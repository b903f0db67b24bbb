"""Single pendulum ṡ = [ω, (g/l) sin θ + u] with θ = 0 upright."""
from __future__ import annotations

import numpy as np

from ..observables import DynamicsModel

G = 9.81
LENGTH = 1.0

#: training / test distributions for the error-bound experiments
THETA_RANGE = (-2 * np.pi, 2 * np.pi)
OMEGA_RANGE = (-5.0, 5.0)
U_RANGE = (-5.0, 5.0)


def pendulum_flow(state, u, g: float = G, l: float = LENGTH) -> np.ndarray:
    s = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    if u.ndim == s.ndim:
        u = u[..., 0]
    out = np.empty(np.broadcast_shapes(s.shape, u.shape + (2,)))
    out[..., 0] = s[..., 1]
    out[..., 1] = (g / l) * np.sin(s[..., 0]) + u
    return out


def _theta_derivatives(s, u, upto: int, k: float):
    """θ, θ', ..., θ^(upto) for constant u (k = g/l)."""
    th, w = s[..., 0], s[..., 1]
    u = np.asarray(u, float)
    if u.ndim == s.ndim:
        u = u[..., 0]
    sn, cs = np.sin(th), np.cos(th)
    acc = k * sn + u
    d = [th, w, acc]
    if upto >= 3:
        d.append(k * cs * w)
    if upto >= 4:
        d.append(-k * sn * w**2 + k * cs * acc)
    if upto >= 5:
        d.append(-k * cs * w**3 - 3 * k * sn * w * acc + k**2 * cs**2 * w)
    if upto >= 6:
        # d/dt of the fifth derivative
        d.append(
            k * sn * w**4
            - 3 * k * cs * w**2 * acc
            - 3 * k * cs * w**2 * acc
            - 3 * k * sn * acc**2
            - 3 * k * sn * w * (k * cs * w)
            - 2 * k**2 * cs * sn * w**2
            + k**2 * cs**2 * acc
        )
    return d


def pendulum_chain(g: float = G, l: float = LENGTH, max_order: int = 5) -> tuple:
    """Analytic derivative chain: entry j returns [θ^(j), ω^(j)] = [θ^(j), θ^(j+1)]."""
    k = g / l

    def make(j):
        def fn(s, u):
            s = np.asarray(s, float)
            d = _theta_derivatives(s, u, j + 1, k)
            out = np.empty(np.broadcast_shapes(s.shape, np.shape(d[j + 1]) + (2,)))
            out[..., 0] = d[j]
            out[..., 1] = d[j + 1]
            return out

        return fn

    return tuple(make(j) for j in range(1, max_order + 1))


def pendulum_model(
    theta_range=THETA_RANGE, omega_range=OMEGA_RANGE, u_range=U_RANGE, g: float = G, l: float = LENGTH
) -> DynamicsModel:
    return DynamicsModel(
        state_dim=2,
        control_dim=1,
        flow=lambda s, u: pendulum_flow(s, u, g, l),
        domain=[theta_range, omega_range],
        control_domain=[u_range],
        derivative_chain=pendulum_chain(g, l),
        state_labels=("theta", "omega"),
        control_labels=("u",),
        name="pendulum",
    )


def pendulum_orders(n: int) -> tuple[int, int]:
    """θ carries one more derivative than ω: n_θ = n, n_ω = max(n − 1, 0)."""
    return (n, max(n - 1, 0))
