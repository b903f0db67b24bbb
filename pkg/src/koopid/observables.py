"""Derivative-based observable functions.

Three ways to build a lifting Ψ(s, u) = [Ψ_s(s); u] are provided:

* ``build_analytic_basis``: states plus their time derivatives taken from a
  hand-coded derivative chain of a :class:`DynamicsModel`.
* ``build_structural_basis``: states plus the individual terms of the
  dynamics and the individual products of the second-derivative expansion,
  none of which need the (unknown) model coefficients.
* ``build_numerical_basis``: states plus finite-difference derivative
  estimates computed from sampled trajectories (``lift_trajectory``).

The module also holds the finite-difference and moving-average filters used
on measured data and the trajectory CSV format.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    DimensionMismatch,
    DuplicateLabel,
    MissingDerivative,
    TooShort,
    WindowTooLarge,
)

__all__ = [
    "DynamicsModel",
    "BasisEntry",
    "BasisSpec",
    "Term",
    "DerivativeEstimate",
    "Trajectory",
    "build_analytic_basis",
    "build_structural_basis",
    "build_numerical_basis",
    "state_basis",
    "estimate_derivatives",
    "moving_average",
    "lift",
    "lift_trajectory",
    "read_trajectory_csv",
    "write_trajectory_csv",
]

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _zeros_control(s: np.ndarray, m: int) -> np.ndarray:
    return np.zeros(s.shape[:-1] + (m,))


@dataclass(frozen=True)
class DynamicsModel:
    """Continuous-time control-affine system ṡ = flow(s, u).

    Parameters
    ----------
    state_dim, control_dim : int
        Dimensions of s and u.
    flow : callable
        ``flow(s, u)`` with ``s`` of shape ``(..., state_dim)`` and ``u`` of
        shape ``(..., control_dim)``; returns an array shaped like ``s``.
    domain : array_like, shape (state_dim, 2)
        Per-state sampling interval.
    control_domain : array_like, shape (control_dim, 2), optional
        Per-control sampling interval (used for model-based fmax estimates).
    derivative_chain : sequence of callables, optional
        ``derivative_chain[j - 1](s, u)`` returns the j-th time derivative of
        every state, assuming the control is held constant.
    """

    state_dim: int
    control_dim: int
    flow: Callable[[np.ndarray, np.ndarray], np.ndarray]
    domain: np.ndarray
    control_domain: np.ndarray | None = None
    derivative_chain: tuple | None = None
    state_labels: tuple[str, ...] | None = None
    control_labels: tuple[str, ...] | None = None
    name: str = "model"

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 0:
            raise ValueError("state_dim must be positive and control_dim non-negative")
        dom = np.asarray(self.domain, dtype=float).reshape(self.state_dim, 2)
        object.__setattr__(self, "domain", dom)
        if self.control_domain is None:
            cdom = np.zeros((self.control_dim, 2))
        else:
            cdom = np.asarray(self.control_domain, dtype=float).reshape(self.control_dim, 2)
        object.__setattr__(self, "control_domain", cdom)
        if self.derivative_chain is not None:
            object.__setattr__(self, "derivative_chain", tuple(self.derivative_chain))
        if self.state_labels is None:
            object.__setattr__(
                self, "state_labels", tuple(f"s{i + 1}" for i in range(self.state_dim))
            )
        if self.control_labels is None:
            object.__setattr__(
                self, "control_labels", tuple(f"u{i + 1}" for i in range(self.control_dim))
            )

    @property
    def chain_order(self) -> int:
        return 0 if self.derivative_chain is None else len(self.derivative_chain)

    def derivative(self, order: int) -> Callable:
        """Return the analytic ``order``-th derivative function (order ≥ 1)."""
        if order < 1 or order > self.chain_order:
            raise MissingDerivative(
                f"{self.name}: derivative of order {order} requested, chain has {self.chain_order}"
            )
        return self.derivative_chain[order - 1]

    def sample(self, count: int, rng: np.random.Generator):
        """Uniform draws of states and controls from the declared domains."""
        lo, hi = self.domain[:, 0], self.domain[:, 1]
        s = lo + (hi - lo) * rng.random((count, self.state_dim))
        clo, chi = self.control_domain[:, 0], self.control_domain[:, 1]
        u = clo + (chi - clo) * rng.random((count, self.control_dim))
        return s, u

    def check_chain(self, samples: int = 256, seed: int = 0) -> float:
        """Max abs difference between ``derivative_chain[0]`` and ``flow``."""
        if self.chain_order == 0:
            return 0.0
        s, u = self.sample(samples, np.random.default_rng(seed))
        return float(np.max(np.abs(self.derivative_chain[0](s, u) - self.flow(s, u))))


@dataclass(frozen=True)
class BasisEntry:
    """One observable function.

    ``role`` is one of ``"state"``, ``"derivative"``, ``"structural"`` or
    ``"control"``.  ``source`` is only set for finite-difference entries and
    holds ``(measured_state_index, fd_order)``.
    """

    label: str
    role: str
    evaluator: Evaluator | None
    state_index: int | None = None
    order: int = 0
    source: tuple[int, int] | None = None


@dataclass(frozen=True)
class BasisSpec:
    entries: tuple[BasisEntry, ...]
    state_dim: int
    control_dim: int
    orders: tuple[int, ...]
    kind: str = "analytic"
    domain: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        labels = [e.label for e in self.entries]
        if len(set(labels)) != len(labels):
            raise DuplicateLabel("basis labels must be unique")
        for i in range(self.state_dim):
            e = self.entries[i]
            if e.role != "state" or e.state_index != i:
                raise ValueError("the first state_dim entries must be the raw states in order")
        roles = [e.role for e in self.entries]
        n_ctrl = roles.count("control")
        if "control" in roles[: len(roles) - n_ctrl]:
            raise ValueError("control entries must come last")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(e.label for e in self.entries)

    @property
    def w_u(self) -> int:
        return sum(1 for e in self.entries if e.role == "control")

    @property
    def w_s(self) -> int:
        return len(self.entries) - self.w_u

    @property
    def w(self) -> int:
        return len(self.entries)

    @property
    def evaluable(self) -> bool:
        return all(e.evaluator is not None for e in self.entries)

    @property
    def max_fd_order(self) -> int:
        return max((e.source[1] for e in self.entries if e.source is not None), default=0)

    def lift(self, state, control=None) -> np.ndarray:
        return lift(self, state, control)

    def lift_state(self, state) -> np.ndarray:
        """Ψ_s(s) with control-dependent arguments set to zero."""
        s = np.asarray(state, dtype=float)
        return lift(self, s, _zeros_control(s, self.control_dim))[..., : self.w_s]


def _state_entries(labels: Sequence[str]) -> list[BasisEntry]:
    return [
        BasisEntry(lab, "state", (lambda s, u, i=i: s[..., i]), state_index=i)
        for i, lab in enumerate(labels)
    ]


def _control_entries(labels: Sequence[str]) -> list[BasisEntry]:
    return [
        BasisEntry(lab, "control", (lambda s, u, i=i: u[..., i]), state_index=i)
        for i, lab in enumerate(labels)
    ]


def state_basis(model: DynamicsModel) -> BasisSpec:
    """Basis made of the raw states and controls only (the linear model)."""
    return build_analytic_basis(model, 0)


def _per_state(n, state_dim: int) -> tuple[int, ...]:
    if np.isscalar(n):
        n = [int(n)] * state_dim
    n = tuple(int(v) for v in n)
    if len(n) != state_dim:
        raise DimensionMismatch(f"expected {state_dim} orders, got {len(n)}")
    if any(v < 0 for v in n):
        raise ValueError("derivative orders must be non-negative")
    return n


def build_analytic_basis(
    model: DynamicsModel, n, probe_samples: int = 64, seed: int = 0
) -> BasisSpec:
    """States, then analytic derivatives of each state up to ``n[j]``, then controls.

    Derivative entries are evaluated with the control set to zero so that
    Ψ_s depends on the state alone; the control enters through Ψ_u.  An
    entry that coincides with an earlier one on a set of probe points (for
    example θ̇ = ω) is dropped.
    """
    orders = _per_state(n, model.state_dim)
    need = max(orders, default=0)
    if need > model.chain_order:
        raise MissingDerivative(
            f"{model.name}: order {need} requested but derivative chain has {model.chain_order}"
        )
    rng = np.random.default_rng(seed)
    ps, _ = model.sample(probe_samples, rng)
    pu = _zeros_control(ps, model.control_dim)
    entries = _state_entries(model.state_labels)
    probes = [e.evaluator(ps, pu) for e in entries]
    for j, nj in enumerate(orders):
        for k in range(1, nj + 1):
            fn = model.derivative_chain[k - 1]
            ev = lambda s, u, fn=fn, j=j: fn(s, np.zeros_like(u))[..., j]
            vals = ev(ps, pu)
            scale = max(1.0, float(np.max(np.abs(vals))))
            if any(np.max(np.abs(vals - p)) <= 1e-12 * scale for p in probes):
                continue
            entries.append(
                BasisEntry(f"d{k}({model.state_labels[j]})", "derivative", ev, state_index=j, order=k)
            )
            probes.append(vals)
    entries += _control_entries(model.control_labels)
    return BasisSpec(
        tuple(entries), model.state_dim, model.control_dim, orders, "analytic", model.domain
    )


@dataclass(frozen=True)
class Term:
    """A coefficient-free term g(s) of the dynamics.

    ``partials`` lists ``(state_index, label, function)`` triples, one per
    state the term depends on, giving ∂g/∂s_j with constant factors dropped.
    """

    label: str
    func: Callable[[np.ndarray], np.ndarray]
    partials: tuple = ()


def _product_label(partial: str, term: str) -> str:
    return term if partial == "1" else f"{partial}*{term}"


def build_structural_basis(
    state_labels: Sequence[str],
    terms: Sequence[Term],
    dynamics: Sequence[Sequence[str]],
    control_labels: Sequence[str] = (),
    order: int = 2,
    expand: Sequence[int] | None = None,
    domain=None,
) -> BasisSpec:
    """Basis from the structure ṡ_i = Σ_l c_il g_il(s) + (control terms).

    ``dynamics[i]`` lists the labels of the drift terms of state i; a state
    label may be used directly as a term.  Order 1 adds the terms g_il.
    Order 2 adds, for every state i in ``expand`` (default: all), every term
    g of ṡ_i, every state j that g depends on and every term h of ṡ_j, the
    product (∂g/∂s_j)·h as its own entry.  Entries are deduplicated by label.
    """
    state_labels = list(state_labels)
    N = len(state_labels)
    if len(dynamics) != N:
        raise DimensionMismatch("dynamics must list the terms of every state")
    if order not in (0, 1, 2):
        raise ValueError("structural bases are supported up to order 2")
    catalog: dict[str, Term] = {}
    for i, lab in enumerate(state_labels):
        one = lambda s: np.ones(s.shape[:-1])
        catalog[lab] = Term(lab, (lambda s, i=i: s[..., i]), ((i, "1", one),))
    for t in terms:
        if t.label in catalog:
            raise DuplicateLabel(f"term label {t.label!r} is used more than once")
        catalog[t.label] = t
    for i, row in enumerate(dynamics):
        for lab in row:
            if lab not in catalog:
                raise ValueError(f"state {state_labels[i]!r} references unknown term {lab!r}")
    expand = range(N) if expand is None else list(expand)

    entries = _state_entries(state_labels)
    seen = set(state_labels)

    def add(label, ev, k):
        if label not in seen:
            seen.add(label)
            entries.append(BasisEntry(label, "structural", ev, order=k))

    if order >= 1:
        for row in dynamics:
            for lab in row:
                t = catalog[lab]
                add(lab, (lambda s, u, f=t.func: f(s)), 1)
    if order >= 2:
        for i in expand:
            for lab in dynamics[i]:
                g = catalog[lab]
                for j, plab, pf in g.partials:
                    for hlab in dynamics[j]:
                        h = catalog[hlab]
                        add(
                            _product_label(plab, hlab),
                            (lambda s, u, pf=pf, hf=h.func: pf(s) * hf(s)),
                            2,
                        )
    entries += _control_entries(control_labels)
    orders = tuple(order if i in expand else min(order, 1) for i in range(N))
    dom = None if domain is None else np.asarray(domain, float)
    return BasisSpec(tuple(entries), N, len(control_labels), orders, "structural", dom)


def build_numerical_basis(
    state_labels: Sequence[str],
    n,
    control_labels: Sequence[str] = (),
    derivative_of: Mapping[int, int] | None = None,
) -> BasisSpec:
    """Basis whose derivative entries are finite-difference estimates.

    ``derivative_of`` maps a state index to the index of the state it is the
    first derivative of (for the pendulum ``{1: 0}``: ω = θ̇).  Derivatives
    are then taken from the highest measured member of each chain, and
    entries that coincide through the chain are not repeated.
    """
    state_labels = list(state_labels)
    N = len(state_labels)
    orders = _per_state(n, N)
    derivative_of = dict(derivative_of or {})

    def root(i):
        off = 0
        while i in derivative_of:
            i = derivative_of[i]
            off += 1
        return i, off

    roots = [root(i) for i in range(N)]
    entries = _state_entries(state_labels)
    seen = {roots[i] for i in range(N)}
    for i, ni in enumerate(orders):
        r, off = roots[i]
        for k in range(1, ni + 1):
            key = (r, off + k)
            if key in seen:
                continue
            seen.add(key)
            members = [(roots[m][1], m) for m in range(N) if roots[m][0] == r and roots[m][1] <= off + k]
            o_m, m = max(members)
            entries.append(
                BasisEntry(
                    f"d{k}({state_labels[i]})",
                    "derivative",
                    None,
                    state_index=i,
                    order=k,
                    source=(m, off + k - o_m),
                )
            )
    entries += _control_entries(control_labels)
    return BasisSpec(tuple(entries), N, len(control_labels), orders, "numerical")


def lift(basis: BasisSpec, state, control=None) -> np.ndarray:
    """Evaluate Ψ(s, u); leading axes of ``state`` and ``control`` broadcast."""
    s = np.asarray(state, dtype=float)
    if s.shape[-1:] != (basis.state_dim,):
        raise DimensionMismatch(f"state must have trailing dimension {basis.state_dim}")
    if control is None:
        u = _zeros_control(s, basis.control_dim)
    else:
        u = np.asarray(control, dtype=float)
        if basis.control_dim == 0 and u.size == 0:
            u = _zeros_control(s, 0)
        if u.shape[-1:] != (basis.control_dim,):
            raise DimensionMismatch(f"control must have trailing dimension {basis.control_dim}")
    if not basis.evaluable:
        raise ValueError("finite-difference bases are lifted with lift_trajectory")
    if basis.domain is not None:
        lo, hi = basis.domain[:, 0], basis.domain[:, 1]
        if np.any(s < lo) or np.any(s > hi):
            warnings.warn("lifting a state outside the model domain", RuntimeWarning, stacklevel=2)
    shape = np.broadcast_shapes(s.shape[:-1], u.shape[:-1])
    s = np.broadcast_to(s, shape + s.shape[-1:])
    u = np.broadcast_to(u, shape + u.shape[-1:])
    out = np.empty(shape + (basis.w,))
    for k, e in enumerate(basis.entries):
        out[..., k] = e.evaluator(s, u)
    return out


@dataclass(frozen=True)
class DerivativeEstimate:
    """Iterated centred finite differences of a sampled signal.

    ``values[j - 1]`` holds the j-th derivative, with NaN where the stencil
    does not fit.  ``valid_range`` is the half-open index range where every
    order up to ``order`` exists.
    """

    values: np.ndarray
    order: int
    stencil_width: int
    valid_range: tuple[int, int]

    def valid(self, k: int) -> np.ndarray:
        lo, hi = self.valid_range
        return self.values[k - 1, lo:hi]


def estimate_derivatives(trajectory, dt: float, order: int) -> DerivativeEstimate:
    """Derivatives 1..order by repeated application of (x[k+1] − x[k−1])/(2Δt)."""
    x = np.asarray(trajectory, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    T = x.shape[0]
    if order < 0:
        raise ValueError("order must be non-negative")
    if T < 2 * order + 1:
        raise TooShort(f"need at least {2 * order + 1} samples for order {order}, got {T}")
    values = np.full((order,) + x.shape, np.nan)
    d = x
    for j in range(1, order + 1):
        d = (d[2:] - d[:-2]) / (2.0 * dt)
        values[j - 1, j : T - j] = d
    if squeeze:
        values = values[..., 0]
    return DerivativeEstimate(values, order, 2 * order + 1, (order, T - order))


def moving_average(series, window: int) -> np.ndarray:
    """Centred moving average along axis 0; output has ``len − window + 1`` samples."""
    x = np.asarray(series, dtype=float)
    if window < 1:
        raise ValueError("window must be positive")
    if window > x.shape[0]:
        raise WindowTooLarge(f"window {window} exceeds series length {x.shape[0]}")
    if window == 1:
        return x.copy()
    return sliding_window_view(x, window, axis=0).mean(axis=-1)


def lift_trajectory(basis: BasisSpec, states, controls=None, dt: float | None = None):
    """Lift every sample of a trajectory.

    Returns ``(lifted, (lo, hi))`` where ``lifted[k]`` corresponds to sample
    ``lo + k``.  For finite-difference bases the range excludes the samples
    where the stencil does not fit; otherwise it is the whole trajectory.
    """
    s = np.asarray(states, dtype=float)
    T = s.shape[0]
    u = _zeros_control(s, basis.control_dim) if controls is None else np.asarray(controls, float)
    if u.shape[0] != T:
        raise DimensionMismatch("states and controls must have the same length")
    if basis.evaluable:
        return lift(basis, s, u), (0, T)
    if dt is None:
        raise ValueError("dt is required for finite-difference bases")
    d = basis.max_fd_order
    est = estimate_derivatives(s, dt, d)
    lo, hi = est.valid_range
    out = np.empty((hi - lo, basis.w))
    for k, e in enumerate(basis.entries):
        if e.role == "state":
            out[:, k] = s[lo:hi, e.state_index]
        elif e.role == "control":
            out[:, k] = u[lo:hi, e.state_index]
        else:
            m, q = e.source
            out[:, k] = est.values[q - 1, lo:hi, m]
    return out, (lo, hi)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled trajectory; ``controls[k]`` is held over [t_k, t_{k+1})."""

    t: np.ndarray
    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, float)
        s = np.asarray(self.states, float)
        u = np.asarray(self.controls, float)
        if s.ndim == 1:
            s = s[:, None]
        if u.ndim == 1:
            u = u.reshape(len(t), -1)
        if not (len(t) == s.shape[0] == u.shape[0]):
            raise DimensionMismatch("t, states and controls must have the same length")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "controls", u)

    def __len__(self):
        return len(self.t)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0


def trajectory_header(state_dim: int, control_dim: int) -> list[str]:
    return ["t"] + [f"s{i + 1}" for i in range(state_dim)] + [f"u{i + 1}" for i in range(control_dim)]


def write_trajectory_csv(path, traj: Trajectory) -> None:
    N, M = traj.states.shape[1], traj.controls.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trajectory_header(N, M))
        for k in range(len(traj)):
            row = [traj.t[k], *traj.states[k], *traj.controls[k]]
            w.writerow([repr(float(v)) for v in row])


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file, header row is mandatory")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "t":
        raise ValueError(f"{path}: first column must be 't'")
    N = sum(1 for h in header if h.startswith("s"))
    M = sum(1 for h in header if h.startswith("u"))
    if header != trajectory_header(N, M):
        raise ValueError(f"{path}: header must be t, s1..sN, u1..uM")
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float).reshape(-1, 1 + N + M)
    return Trajectory(data[:, 0], data[:, 1 : 1 + N], data[:, 1 + N :])
