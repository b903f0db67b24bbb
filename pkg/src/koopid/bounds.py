"""Taylor-structured operators and their error bounds.

For a signal f with derivatives up to order n propagated by the Taylor
operator, the global error after k steps (T = kΔt) satisfies

    |e_k| ≤ Tⁿ⁺¹/(n+1)! · max|f⁽ⁿ⁺¹⁾|.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import MissingDerivative, SeriesTooShort
from .koopman import DiscreteKoopman, SnapshotSet, one_step_residuals, predict
from .observables import BasisSpec, DynamicsModel, estimate_derivatives

__all__ = [
    "TaylorOperator",
    "ErrorBoundEstimate",
    "taylor_block",
    "taylor_operator",
    "global_error_bound",
    "exact_error_recursion",
    "estimate_fmax_model",
    "estimate_fmax_data",
    "max_local_error",
    "data_driven_estimate",
    "measured_max_error",
    "write_bounds_csv",
    "BOUNDS_HEADER",
]

BOUNDS_HEADER = ["t", "state_index", "measured_max", "bound_model", "bound_data"]


def taylor_block(n: int, dt: float) -> np.ndarray:
    """(n+1)×(n+1) unit upper-triangular block with entry (i, i+m) = Δtᵐ/m!."""
    T = np.zeros((n + 1, n + 1))
    for m in range(n + 1):
        T += np.eye(n + 1, k=m) * (dt**m / math.factorial(m))
    return T


@dataclass(frozen=True)
class TaylorOperator:
    matrix: np.ndarray
    orders: tuple[int, ...]
    dt: float

    @property
    def offsets(self) -> list[int]:
        """Row index where each state's block starts."""
        return list(np.cumsum([0] + [n + 1 for n in self.orders[:-1]]))


def taylor_operator(orders, dt: float) -> TaylorOperator:
    """Block-diagonal Taylor operator, one block per state, of size Σ(n_j + 1)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    orders = (int(orders),) if np.isscalar(orders) else tuple(int(n) for n in orders)
    if any(n < 0 for n in orders):
        raise ValueError("orders must be non-negative")
    M = scipy.linalg.block_diag(*[taylor_block(n, dt) for n in orders])
    return TaylorOperator(np.atleast_2d(M), orders, dt)


@dataclass(frozen=True)
class ErrorBoundEstimate:
    """Per-state n and max|f⁽ⁿ⁺¹⁾| with a provenance tag."""

    n: tuple[int, ...]
    fmax: np.ndarray
    provenance: str
    dt: float

    def __post_init__(self):
        fmax = np.atleast_1d(np.asarray(self.fmax, dtype=float))
        n = np.broadcast_to(np.atleast_1d(np.asarray(self.n, dtype=int)), fmax.shape)
        if np.any(fmax < 0):
            raise ValueError("fmax must be non-negative")
        if self.provenance not in ("model_based", "data_driven"):
            raise ValueError("provenance must be 'model_based' or 'data_driven'")
        object.__setattr__(self, "fmax", fmax)
        object.__setattr__(self, "n", tuple(int(v) for v in n))

    def bound(self, horizon_T) -> np.ndarray:
        return global_error_bound(self, horizon_T)


def global_error_bound(estimate: ErrorBoundEstimate, horizon_T) -> np.ndarray:
    """Tⁿ⁺¹/(n+1)!·fmax; shape ``T.shape + (states,)`` (clamped at 0)."""
    T = np.asarray(horizon_T, dtype=float)
    if np.any(T < 0):
        raise ValueError("horizon must be non-negative")
    n = np.asarray(estimate.n)
    fact = np.array([math.factorial(v + 1) for v in n], dtype=float)
    b = T[..., None] ** (n + 1) / fact * estimate.fmax
    return np.maximum(b, 0.0)


def exact_error_recursion(f_series, dt: float, steps: int) -> np.ndarray:
    """Error of Taylor propagation from the exact Lagrange remainders.

    Parameters
    ----------
    f_series : array_like, shape (n + 2, L)
        Row p holds f⁽ᵖ⁾ sampled on a half-step grid t_0 + iΔt/2, so the
        midpoint of interval k is column 2k + 1.  Only row n + 1 is used,
        at the interval midpoints, as the proxy for the Lagrange point.
    dt : float
    steps : int

    Returns
    -------
    ndarray, shape (steps + 1, n + 1)
        e_k⁽ᵖ⁾ = (true − propagated) for p = 0..n, with e_0 = 0.
    """
    F = np.atleast_2d(np.asarray(f_series, dtype=float))
    n = F.shape[0] - 2
    if n < 0:
        raise SeriesTooShort("f_series must hold at least f and f'")
    if F.shape[1] < 2 * steps + 1:
        raise SeriesTooShort(f"need {2 * steps + 1} half-step samples, got {F.shape[1]}")
    T = taylor_block(n, dt)
    rem = np.array([dt ** (n + 1 - p) / math.factorial(n + 1 - p) for p in range(n + 1)])
    e = np.zeros((steps + 1, n + 1))
    for k in range(steps):
        e[k + 1] = T @ e[k] + F[n + 1, 2 * k + 1] * rem
    return e


def _per_state_n(n, dim):
    return np.broadcast_to(np.atleast_1d(np.asarray(n, dtype=int)), (dim,)).copy()


def estimate_fmax_model(
    model: DynamicsModel,
    n,
    samples: int = 100_000,
    seed: int = 0,
    numeric: bool = False,
    fd_dt: float = 1e-3,
) -> ErrorBoundEstimate:
    """max |f⁽ⁿ⁺¹⁾| over uniform draws from the state and control domains.

    Uses the analytic derivative chain.  With ``numeric=True`` a missing
    chain is replaced by centred finite differences of short simulated
    bursts around each draw (control held constant).
    """
    nn = _per_state_n(n, model.state_dim)
    need = int(nn.max()) + 1
    rng = np.random.default_rng(seed)
    s, u = model.sample(samples, rng)
    if need <= model.chain_order:
        fmax = np.empty(model.state_dim)
        cache = {}
        for j in range(model.state_dim):
            q = int(nn[j]) + 1
            if q not in cache:
                cache[q] = model.derivative_chain[q - 1](s, u)
            fmax[j] = np.max(np.abs(cache[q][..., j]))
    elif numeric:
        from .systems.simulate import integrate

        half = need
        fwd = integrate(model, s, u, fd_dt, half * fd_dt, substeps=4).states
        bwd = integrate(_reversed(model), s, u, fd_dt, half * fd_dt, substeps=4).states
        traj = np.concatenate([bwd[::-1], fwd[1:]], axis=0)
        est = estimate_derivatives(traj.reshape(traj.shape[0], -1), fd_dt, need)
        vals = est.values[:, half].reshape(need, samples, model.state_dim)
        fmax = np.array([np.max(np.abs(vals[int(nn[j]), :, j])) for j in range(model.state_dim)])
    else:
        raise MissingDerivative(
            f"{model.name}: derivative of order {need} required, chain has {model.chain_order}"
        )
    return ErrorBoundEstimate(tuple(nn), fmax, "model_based", 0.0)


def _reversed(model: DynamicsModel):
    return lambda s, u: -model.flow(s, u)


def estimate_fmax_data(max_local_error, n, dt: float) -> np.ndarray:
    """|e₁|ₘₐₓ·(n+1)!/Δtⁿ⁺¹ (element-wise over states)."""
    e = np.asarray(max_local_error, dtype=float)
    if np.any(e < 0):
        raise ValueError("max_local_error must be non-negative")
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = np.asarray(n, dtype=int)
    fact = np.vectorize(lambda v: float(math.factorial(v + 1)))(n)
    return e * fact / dt ** (n + 1)


def max_local_error(model: DiscreteKoopman, snapshots: SnapshotSet, state_dim: int) -> np.ndarray:
    """Largest one-step training residual of each raw-state row."""
    r = one_step_residuals(model, snapshots)[:, :state_dim]
    return np.max(np.abs(r), axis=0)


def data_driven_estimate(model: DiscreteKoopman, snapshots: SnapshotSet, n, state_dim: int) -> ErrorBoundEstimate:
    nn = _per_state_n(n, state_dim)
    e1 = max_local_error(model, snapshots, state_dim)
    return ErrorBoundEstimate(tuple(nn), estimate_fmax_data(e1, nn, model.dt), "data_driven", model.dt)


def measured_max_error(
    model: DiscreteKoopman,
    truth: DynamicsModel,
    basis: BasisSpec,
    test_count: int,
    horizon_T: float,
    seed: int = 0,
    substeps: int = 10,
    initial_lift=None,
) -> np.ndarray:
    """Max over random test trajectories of |predicted − true| per state.

    Initial states and one constant control per trajectory are drawn
    uniformly from the truth model's domains.  Returns an array of shape
    ``(steps + 1, state_dim)``.  ``initial_lift(states, controls)`` overrides
    the lift of the initial conditions (used for finite-difference bases).
    """
    from .systems.simulate import integrate

    dt = model.dt
    steps = int(round(horizon_T / dt))
    rng = np.random.default_rng(seed)
    s0, u = truth.sample(test_count, rng)
    true = integrate(truth, s0, u, dt, steps * dt, substeps=substeps).states
    if initial_lift is None:
        x0 = basis.lift(s0, u)
    else:
        x0 = initial_lift(s0, u)
    U = np.broadcast_to(u, (steps,) + u.shape)
    pred = predict(model, x0, U, steps)
    err = np.abs(pred[..., : truth.state_dim] - true)
    return np.max(err, axis=1)


def write_bounds_csv(path, t, measured, bound_model, bound_data) -> None:
    """Long-format CSV: one row per (time, state)."""
    t = np.asarray(t, float)
    m = np.asarray(measured, float).reshape(len(t), -1)
    bm = np.asarray(bound_model, float).reshape(len(t), -1)
    bd = np.asarray(bound_data, float).reshape(len(t), -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BOUNDS_HEADER)
        for k in range(len(t)):
            for j in range(m.shape[1]):
                w.writerow([repr(float(t[k])), j, repr(float(m[k, j])), repr(float(bm[k, j])), repr(float(bd[k, j]))])
