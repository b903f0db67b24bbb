"""Least-squares Koopman operator fitting with incremental updates.

The operator is K̃_d = 𝒜 𝒢† with

    𝒜 = (1/P) Σ Ψ(s_{k+1}, u_{k+1}) Ψ(s_k, u_k)ᵀ,
    𝒢 = (1/P) Σ Ψ(s_k, u_k) Ψ(s_k, u_k)ᵀ.

Running sums (not averages) are stored, so new snapshots can be folded in
without keeping raw data.  Since 𝒜𝒢† = (Σ…)(Σ…)†, the 1/P factors cancel at
solve time.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    BasisMismatch,
    DimensionMismatch,
    DtMismatch,
    EmptySet,
    NoPrincipalLog,
    NonFinite,
    NonFiniteLift,
)
from .observables import BasisSpec, lift, lift_trajectory

__all__ = [
    "SnapshotSet",
    "DiscreteKoopman",
    "fit",
    "incremental_update",
    "to_continuous",
    "extract_ab",
    "predict",
    "one_step_residuals",
    "RCOND",
]

RCOND = 1e-10


@dataclass(frozen=True)
class SnapshotSet:
    """Lifted snapshot pairs (Ψ(s_k, u_k), Ψ(s_{k+1}, u_{k+1})) at spacing ``dt``."""

    lifted: np.ndarray
    lifted_next: np.ndarray
    dt: float
    labels: tuple[str, ...]
    w_s: int
    w_u: int
    records: tuple | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        X = np.asarray(self.lifted, dtype=float)
        Y = np.asarray(self.lifted_next, dtype=float)
        w = self.w_s + self.w_u
        X = X.reshape(-1, w)
        Y = Y.reshape(-1, w)
        if X.shape != Y.shape:
            raise DimensionMismatch("current and next lifts must have the same shape")
        if len(self.labels) != w:
            raise DimensionMismatch("one label per basis entry is required")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "lifted", X)
        object.__setattr__(self, "lifted_next", Y)
        object.__setattr__(self, "labels", tuple(self.labels))

    def __len__(self):
        return self.lifted.shape[0]

    @property
    def P(self) -> int:
        return self.lifted.shape[0]

    @classmethod
    def from_records(cls, basis: BasisSpec, states, controls, next_states, next_controls=None, dt=1.0):
        """Lift raw records (s_k, u_k, s_{k+1}, u_{k+1}); ``next_controls`` defaults to u_k."""
        s = np.atleast_2d(np.asarray(states, float))
        s1 = np.atleast_2d(np.asarray(next_states, float))
        M = basis.control_dim
        u = np.asarray(controls, float).reshape(s.shape[0], M)
        u1 = u if next_controls is None else np.asarray(next_controls, float).reshape(s.shape[0], M)
        with warnings.catch_warnings():
            # successor states may legitimately leave the sampling domain
            warnings.simplefilter("ignore", RuntimeWarning)
            X1 = lift(basis, s1, u1)
        return cls(
            lift(basis, s, u),
            X1,
            dt,
            basis.labels,
            basis.w_s,
            basis.w_u,
            records=(s, u, s1, u1),
        )

    @classmethod
    def from_trajectories(cls, basis: BasisSpec, trajectories, dt: float):
        """Consecutive-sample pairs from one or more uniformly sampled trajectories.

        Each trajectory is a ``(states, controls)`` pair.  For finite-difference
        bases only samples with a valid stencil are used.
        """
        X, Y = [], []
        for states, controls in trajectories:
            L, _ = lift_trajectory(basis, states, controls, dt)
            if L.shape[0] >= 2:
                X.append(L[:-1])
                Y.append(L[1:])
        w = basis.w
        X = np.concatenate(X) if X else np.zeros((0, w))
        Y = np.concatenate(Y) if Y else np.zeros((0, w))
        return cls(X, Y, dt, basis.labels, basis.w_s, basis.w_u)

    def subset(self, idx) -> "SnapshotSet":
        return SnapshotSet(
            self.lifted[idx], self.lifted_next[idx], self.dt, self.labels, self.w_s, self.w_u
        )

    def concat(self, other: "SnapshotSet") -> "SnapshotSet":
        _check_compatible(self.dt, self.labels, other)
        return SnapshotSet(
            np.vstack([self.lifted, other.lifted]),
            np.vstack([self.lifted_next, other.lifted_next]),
            self.dt,
            self.labels,
            self.w_s,
            self.w_u,
        )


def _solve(A_sum: np.ndarray, G_sum: np.ndarray) -> np.ndarray:
    """A_sum · pinv(G_sum) with symmetric diagonal equilibration.

    G is scaled to unit diagonal before the SVD cut-off is applied, which
    makes the relative cut-off insensitive to the very different magnitudes
    of the basis functions.  For full-rank G the result equals A G⁻¹.
    """
    d = np.sqrt(np.diag(G_sum).copy())
    d[~(d > 0)] = 1.0
    inv = 1.0 / d
    Gs = G_sum * inv[:, None] * inv[None, :]
    Gs = 0.5 * (Gs + Gs.T)
    pinv = np.linalg.pinv(Gs, rcond=RCOND, hermitian=True)
    return (A_sum * inv[None, :]) @ pinv * inv[None, :]


@dataclass(frozen=True)
class DiscreteKoopman:
    """Fitted operator plus the running sums needed to keep fitting.

    ``A_sum`` and ``G_sum`` are Σ Ψ_{k+1}Ψ_kᵀ and Σ Ψ_kΨ_kᵀ; ``P`` is the
    (possibly forgetting-weighted) measurement count.  ``A_acc`` and
    ``G_acc`` give the averaged accumulators.
    """

    K: np.ndarray
    A_sum: np.ndarray
    G_sum: np.ndarray
    P: float
    dt: float
    w_s: int
    w_u: int
    labels: tuple[str, ...]

    @property
    def w(self) -> int:
        return self.w_s + self.w_u

    @property
    def A_acc(self) -> np.ndarray:
        return self.A_sum / self.P

    @property
    def G_acc(self) -> np.ndarray:
        return self.G_sum / self.P

    @property
    def K_d(self) -> np.ndarray:
        return self.K

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "w_s": self.w_s,
            "w_u": self.w_u,
            "P": self.P,
            "labels": list(self.labels),
            "accumulators": "sum",
            "K_d": self.K.ravel().tolist(),
            "A_acc": self.A_sum.ravel().tolist(),
            "G_acc": self.G_sum.ravel().tolist(),
        }

    def to_json(self) -> str:
        # repr-based float formatting is shortest round-trip, hence lossless
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteKoopman":
        w = int(d["w_s"]) + int(d["w_u"])
        arr = lambda key: np.array(d[key], dtype=float).reshape(w, w)
        P = d["P"]
        return cls(
            arr("K_d"), arr("A_acc"), arr("G_acc"), P, float(d["dt"]),
            int(d["w_s"]), int(d["w_u"]), tuple(d["labels"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "DiscreteKoopman":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "DiscreteKoopman":
        with open(path) as fh:
            return cls.from_json(fh.read())


def _sums(snap: SnapshotSet):
    X, Y = snap.lifted, snap.lifted_next
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        bad = np.flatnonzero(~(np.isfinite(X).all(1) & np.isfinite(Y).all(1)))
        raise NonFiniteLift(f"non-finite lift in records {bad[:10].tolist()}")
    G = X.T @ X
    G = 0.5 * (G + G.T)
    return Y.T @ X, G


def fit(snapshots: SnapshotSet) -> DiscreteKoopman:
    """Closed-form least-squares operator K̃_d = 𝒜𝒢†."""
    if snapshots.P < 1:
        raise EmptySet("cannot fit an operator on an empty snapshot set")
    A_sum, G_sum = _sums(snapshots)
    return DiscreteKoopman(
        _solve(A_sum, G_sum), A_sum, G_sum, snapshots.P, snapshots.dt,
        snapshots.w_s, snapshots.w_u, snapshots.labels,
    )


def _check_compatible(dt, labels, snap: SnapshotSet):
    if abs(snap.dt - dt) > 1e-12 * max(abs(dt), 1.0):
        raise DtMismatch(f"snapshot spacing {snap.dt} differs from model spacing {dt}")
    if tuple(snap.labels) != tuple(labels):
        raise BasisMismatch("snapshot basis differs from the model basis")


def incremental_update(
    model: DiscreteKoopman, new_snapshots: SnapshotSet, forgetting: float = 1.0
) -> DiscreteKoopman:
    """Fold new snapshots into the accumulators and refit.

    With ``forgetting = λ < 1`` the old sums and count are scaled by λ first
    (exponential forgetting); the default 1 weights all data equally.
    """
    _check_compatible(model.dt, model.labels, new_snapshots)
    if not 0.0 < forgetting <= 1.0:
        raise ValueError("forgetting factor must lie in (0, 1]")
    if new_snapshots.P == 0:
        return model
    dA, dG = _sums(new_snapshots)
    if forgetting == 1.0:
        A_sum, G_sum, P = model.A_sum + dA, model.G_sum + dG, model.P + new_snapshots.P
    else:
        A_sum = forgetting * model.A_sum + dA
        G_sum = forgetting * model.G_sum + dG
        P = forgetting * model.P + new_snapshots.P
    G_sum = 0.5 * (G_sum + G_sum.T)
    return DiscreteKoopman(
        _solve(A_sum, G_sum), A_sum, G_sum, P, model.dt, model.w_s, model.w_u, model.labels
    )


def to_continuous(model, dt: float | None = None) -> np.ndarray:
    """Real principal logarithm log(K̃_d)/Δt.

    Accepts a :class:`DiscreteKoopman` or a bare matrix plus ``dt``.
    """
    if isinstance(model, DiscreteKoopman):
        K, dt = model.K, model.dt
    else:
        K = np.asarray(model, float)
        if dt is None:
            raise ValueError("dt is required when passing a bare matrix")
    ev = np.linalg.eigvals(K)
    scale = max(1.0, float(np.max(np.abs(ev))))
    bad = ev[(ev.real <= 1e-12 * scale) & (np.abs(ev.imag) <= 1e-12 * scale)]
    if bad.size:
        raise NoPrincipalLog(bad)
    L = scipy.linalg.logm(K)
    if np.iscomplexobj(L):
        if np.max(np.abs(L.imag)) > 1e-8 * max(1.0, np.max(np.abs(L.real))):
            raise NoPrincipalLog(ev[np.abs(ev.imag) > 0])
        L = L.real
    return L / dt


def extract_ab(model) -> tuple[np.ndarray, np.ndarray]:
    """State rows of K̃_d split into the state block A and the control block B."""
    K = model.K
    ws = model.w_s
    return K[:ws, :ws].copy(), K[:ws, ws:].copy()


def predict(model: DiscreteKoopman, initial_lift, controls=None, steps: int = 0) -> np.ndarray:
    """Roll out Ψ_s ← AΨ_s + Bu.

    ``initial_lift`` has trailing length w_s or w (the control part is
    ignored) and may carry leading batch axes.  ``controls[k]`` is the
    control used for step k.  Returns an array of shape ``(steps + 1, ..., w_s)``
    whose first entry is the initial state lift.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    A, B = extract_ab(model)
    x0 = np.asarray(initial_lift, float)
    if x0.shape[-1] not in (model.w_s, model.w):
        raise DimensionMismatch("initial lift has the wrong length")
    x = x0[..., : model.w_s]
    out = np.empty((steps + 1,) + x.shape)
    out[0] = x
    if steps == 0:
        return out
    if model.w_u:
        U = np.asarray(controls, float)
        if U.shape[0] < steps:
            raise DimensionMismatch("need one control per step")
        if U.shape[-1] != model.w_u:
            U = U.reshape(U.shape[0], model.w_u) if U.ndim == 1 else U
    for k in range(steps):
        x = x @ A.T
        if model.w_u:
            x = x + U[k] @ B.T
        if not np.all(np.isfinite(x)):
            raise NonFinite(f"prediction became non-finite at step {k + 1}", step=k + 1)
        out[k + 1] = x
    return out


def one_step_residuals(model: DiscreteKoopman, snapshots: SnapshotSet) -> np.ndarray:
    """Ψ_s(s_{k+1}) − [A B]Ψ(s_k, u_k) for every record (state-dependent rows)."""
    K = model.K[: model.w_s]
    return snapshots.lifted_next[:, : model.w_s] - snapshots.lifted @ K.T
