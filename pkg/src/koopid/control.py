"""LQR synthesis on lifted linear models and fish actuation inversion."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NotPSD, RiccatiDiverged, Unstabilizable
from .koopman import DiscreteKoopman, extract_ab, to_continuous
from .observables import BasisSpec
from .systems.fish import ALPHA_A_RANGE_DEG, ALPHA_O_RANGE_DEG, fish_actuation, wrap_angle

__all__ = [
    "LqrWeights",
    "LqrController",
    "embed_weights",
    "solve_dare",
    "solve_care",
    "solve_lqr_discrete",
    "solve_lqr_continuous",
    "synthesize",
    "hold_model",
    "feedback",
    "invert_fish_actuation",
    "actuation_objective",
]


def _check_psd(M, name, strict=False):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise NotPSD(f"{name} must be square")
    if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.max(np.abs(M)))):
        raise NotPSD(f"{name} must be symmetric")
    ev = np.linalg.eigvalsh(0.5 * (M + M.T))
    tol = 1e-12 * max(1.0, float(np.max(np.abs(ev))) if ev.size else 1.0)
    if strict and np.any(ev <= 0):
        raise NotPSD(f"{name} must be positive definite")
    if np.any(ev < -tol):
        raise NotPSD(f"{name} must be positive semidefinite")
    return M


@dataclass(frozen=True)
class LqrWeights:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q", _check_psd(self.Q, "Q"))
        object.__setattr__(self, "R", _check_psd(self.R, "R", strict=True))


def embed_weights(Q, w_s: int) -> np.ndarray:
    """[[Q, 0], [0, 0]] of size w_s × w_s."""
    Q = _check_psd(Q, "Q")
    n = Q.shape[0]
    if w_s < n:
        raise DimensionMismatch(f"w_s = {w_s} is smaller than the state dimension {n}")
    out = np.zeros((w_s, w_s))
    out[:n, :n] = Q
    return out


def _riccati_map(A, B, Q, R, P):
    BtP = B.T @ P
    S = R + BtP @ B
    K = np.linalg.solve(S, BtP @ A)
    Pn = A.T @ P @ A - A.T @ P @ B @ K + Q
    return 0.5 * (Pn + Pn.T), K


#: relative change between doubling iterates treated as convergence
STATIONARY_TOL = 1e-13


def _dare_doubling(A, B, Q, R, tol, max_iter):
    """Structure-preserving doubling: P_{2^k} of the Riccati recursion from P_0 = 0."""
    n = A.shape[0]
    I = np.eye(n)
    E = A.copy()
    G = B @ np.linalg.solve(R, B.T)
    H = Q.copy()
    for it in range(1, max_iter + 1):
        M = np.linalg.solve(I + G @ H, I)
        E_new = E @ M @ E
        G_new = G + E @ M @ G @ E.T
        H_new = H + E.T @ H @ M @ E
        H_new = 0.5 * (H_new + H_new.T)
        step = np.linalg.norm(H_new - H)
        G, H = 0.5 * (G_new + G_new.T), H_new
        E = E_new
        if not np.all(np.isfinite(H)):
            raise RiccatiDiverged(f"doubling iteration became non-finite after {it} steps")
        scale = max(np.linalg.norm(H), 1e-300)
        Pr, _ = _riccati_map(A, B, Q, R, H)
        if np.linalg.norm(Pr - H) <= tol * scale:
            return H, it
        # a stationary iterate is the fixed point to working precision even
        # when evaluating Ric(P) itself loses digits to cancellation
        if it > 1 and step <= STATIONARY_TOL * scale:
            return H, it
    raise RiccatiDiverged(f"doubling iteration did not converge in {max_iter} steps")


def solve_dare(A, B, Q, R, tol: float = 1e-9, max_iter: int = 50_000, P0=None, method: str = "doubling"):
    """Discrete algebraic Riccati equation by iterating the Riccati map.

    ``method="fixed_point"`` iterates P ← Ric(P) from P0 (default Q);
    ``method="doubling"`` squares the recursion each step, reaching the same
    fixed point in logarithmically many steps.  Both stop once
    ‖P − Ric(P)‖_F ≤ tol·‖P‖_F.  Returns ``(P, K, iterations)``.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.asarray(B, float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))
    if method == "doubling" and P0 is None:
        P, it = _dare_doubling(A, B, Q, R, tol, min(max_iter, 200))
        _, K = _riccati_map(A, B, Q, R, P)
        return P, K, it
    if method not in ("doubling", "fixed_point"):
        raise ValueError("method must be 'doubling' or 'fixed_point'")
    P = Q.copy() if P0 is None else np.array(P0, float)
    for it in range(1, max_iter + 1):
        Pn, K = _riccati_map(A, B, Q, R, P)
        if not np.all(np.isfinite(Pn)):
            raise RiccatiDiverged(f"Riccati iteration became non-finite after {it} iterations")
        if np.linalg.norm(Pn - P) <= tol * max(np.linalg.norm(Pn), 1e-300) or not Pn.any():
            return Pn, _riccati_map(A, B, Q, R, Pn)[1], it
        P = Pn
    raise RiccatiDiverged(f"Riccati iteration did not converge in {max_iter} iterations")


#: relative visibility ‖Q^½v‖ / (‖Q^½‖‖v‖) below which a mode counts as
#: invisible to the cost; fitted operators leave ~1e-6 leakage into
#: modes (such as world-frame position) that the cost does not see
VISIBILITY_TOL = 1e-4


def _visible(V, Q):
    ev, U = np.linalg.eigh(0.5 * (Q + Q.T))
    C = (U * np.sqrt(np.clip(ev, 0, None))).T
    normC = np.sqrt(max(float(np.max(ev, initial=0.0)), 0.0))
    if normC == 0.0:
        return np.zeros(V.shape[1], bool)
    vis = np.linalg.norm(C @ V, axis=0) / (normC * np.maximum(np.linalg.norm(V, axis=0), 1e-300))
    return vis > VISIBILITY_TOL


def _observable_radius(Acl, Q):
    """Largest |λ| of A_cl over modes visible in the cost (PBH test)."""
    w, V = np.linalg.eig(Acl)
    seen = _visible(V, Q)
    return float(np.max(np.abs(w[seen]), initial=0.0)), float(np.max(np.abs(w), initial=0.0))


def solve_lqr_discrete(
    A, B, Q_lift, R, tol: float = 1e-9, max_iter: int = 50_000, P0=None, return_info=False, state_scale=None
):
    """Infinite-horizon discrete LQR gain for Ψ_{k+1} = AΨ_k + Bu_k.

    ``state_scale`` (one positive factor per lifted entry, or ``"balance"`` for
    the diagonal similarity that balances A) solves the Riccati equation in
    the rescaled coordinates Ψ/scale.  This is exact in exact arithmetic and
    keeps the iteration well conditioned when basis entries differ in
    magnitude by many orders.

    Closed-loop stability is checked on the modes that are visible in the
    cost: modes that are unobservable from Q_lift (for instance world-frame
    positions that nothing depends on) are left alone by LQR and are not
    reported as unstabilizable.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.asarray(B, float).reshape(A.shape[0], -1)
    Q = _check_psd(Q_lift, "Q_lift")
    R = _check_psd(R, "R", strict=True) if B.shape[1] else np.zeros((0, 0))
    if isinstance(state_scale, str):
        if state_scale != "balance":
            raise ValueError("state_scale must be an array or 'balance'")
        _, (state_scale, _) = scipy.linalg.matrix_balance(A, permute=False, separate=True)
    if state_scale is not None:
        d = np.asarray(state_scale, float)
        if d.shape != (A.shape[0],) or np.any(d <= 0):
            raise DimensionMismatch("state_scale needs one positive entry per lifted state")
        As, Bs, Qs = A * d[None, :] / d[:, None], B / d[:, None], Q * np.outer(d, d)
        P0s = None if P0 is None else np.asarray(P0, float) / np.outer(d, d)
        Ks, info = solve_lqr_discrete(As, Bs, Qs, R, tol, max_iter, P0s, True)
        K = Ks / d[None, :]
        if info["P"] is not None:
            info["P"] = info["P"] / np.outer(d, d)
        return (K, info) if return_info else K
    if B.shape[1] == 0 or not np.any(B):
        K = np.zeros((B.shape[1], A.shape[0]))
        P = None
        it = 0
    else:
        P, K, it = solve_dare(A, B, Q, R, tol, max_iter, P0)
    r_obs, r_all = _observable_radius(A - B @ K, Q)
    if r_obs >= 1.0:
        raise Unstabilizable(f"closed-loop spectral radius {r_obs:.6g} ≥ 1 on cost-visible modes", r_obs)
    if return_info:
        return K, {"P": P, "iterations": it, "radius": r_all, "observable_radius": r_obs}
    return K


def solve_care(A, B, Q, R, tol: float = 1e-8, gamma: float | None = None, max_doublings: int = 200):
    """Continuous algebraic Riccati equation by a Cayley transform to an
    equivalent discrete recursion, solved with the doubling iteration.

    Returns ``(P, K)`` with K = R⁻¹BᵀP.
    """
    A = np.atleast_2d(np.asarray(A, float))
    n = A.shape[0]
    B = np.asarray(B, float).reshape(n, -1)
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))
    I = np.eye(n)
    G = B @ np.linalg.solve(R, B.T)
    if gamma is None:
        ev = np.abs(np.linalg.eigvals(A))
        gamma = max(float(np.median(ev)), 1.0) if ev.size else 1.0
    Ag = A - gamma * I
    Ag_inv = np.linalg.inv(Ag)
    W = Ag.T + Q @ Ag_inv @ G
    W_inv = np.linalg.inv(W)
    E = I + 2 * gamma * W_inv.T
    Gk = 2 * gamma * Ag_inv @ G @ W_inv
    Hk = 2 * gamma * W_inv @ Q @ Ag_inv
    Gk = 0.5 * (Gk + Gk.T)
    Hk = 0.5 * (Hk + Hk.T)
    for _ in range(max_doublings):
        M = np.linalg.inv(I + Gk @ Hk)
        E_new = E @ M @ E
        G_new = Gk + E @ M @ Gk @ E.T
        H_new = Hk + E.T @ Hk @ M @ E
        G_new = 0.5 * (G_new + G_new.T)
        H_new = 0.5 * (H_new + H_new.T)
        if not np.all(np.isfinite(H_new)):
            raise RiccatiDiverged("doubling iteration became non-finite")
        done = np.linalg.norm(H_new - Hk) <= 1e-15 * max(np.linalg.norm(H_new), 1e-300)
        E, Gk, Hk = E_new, G_new, H_new
        res = A.T @ Hk + Hk @ A - Hk @ G @ Hk + Q
        if np.linalg.norm(res) <= tol * max(np.linalg.norm(Hk), np.linalg.norm(Q), 1e-300) and (
            done or np.linalg.norm(E) < 1e-8 or np.linalg.norm(res) == 0.0
        ):
            break
        if done:
            break
    P = Hk
    res = A.T @ P + P @ A - P @ G @ P + Q
    if np.linalg.norm(res) > tol * max(np.linalg.norm(P), np.linalg.norm(Q), 1e-300):
        raise RiccatiDiverged(f"CARE residual {np.linalg.norm(res):.3g} above tolerance")
    return P, np.linalg.solve(R, B.T @ P)


def solve_lqr_continuous(K_cont, w_s: int, Q_lift, R, tol: float = 1e-8, return_info=False):
    """Continuous-time LQR gain from the generator of the lifted model."""
    Kc = np.atleast_2d(np.asarray(K_cont, float))
    A = Kc[:w_s, :w_s]
    B = Kc[:w_s, w_s:]
    Q = _check_psd(Q_lift, "Q_lift")
    if B.shape[1] == 0 or not np.any(B):
        K = np.zeros((B.shape[1], w_s))
        P = None
    else:
        R = _check_psd(R, "R", strict=True)
        P, K = solve_care(A, B, Q, R, tol)
    ev, V = np.linalg.eig(A - B @ K)
    seen = _visible(V, Q)
    worst = float(np.max(ev.real[seen], initial=-np.inf))
    if worst >= 0:
        raise Unstabilizable(f"closed-loop eigenvalue with real part {worst:.6g} ≥ 0", worst)
    if return_info:
        return K, {"P": P, "eigenvalues": ev}
    return K


@dataclass(frozen=True)
class LqrController:
    """Gains K (w_u × w_s) plus what is needed to evaluate u = −K(Ψ_s(s) − Ψ_s(s_des)).

    ``reference`` selects how the desired state is lifted: ``"lift"`` uses
    Ψ_s(s_des) (control arguments zero); ``"states"`` uses the desired raw
    states and copies the current lift into all other entries, so only the
    raw-state error drives the feedback; ``"penalized"`` additionally copies
    the current value of raw states that Q_lift does not weight.
    """

    gains: np.ndarray
    basis: BasisSpec
    Q_lift: np.ndarray
    R: np.ndarray
    mode: str = "discrete"
    angle_indices: tuple[int, ...] = ()
    reference: str = "lift"
    hold_steps: int = 1

    def __post_init__(self):
        if self.mode not in ("discrete", "continuous"):
            raise ValueError("mode must be 'discrete' or 'continuous'")
        if self.reference not in ("lift", "states", "penalized"):
            raise ValueError("reference must be 'lift', 'states' or 'penalized'")
        g = np.atleast_2d(np.asarray(self.gains, float))
        if g.shape != (self.basis.w_u, self.basis.w_s):
            raise DimensionMismatch(f"gains must be {self.basis.w_u}×{self.basis.w_s}")
        object.__setattr__(self, "gains", g)
        object.__setattr__(self, "angle_indices", tuple(self.angle_indices))

    def lifted_error(self, state, desired) -> np.ndarray:
        s = np.asarray(state, float)
        d = np.asarray(desired, float)
        N = self.basis.state_dim
        if s.shape[-1] != N or d.shape[-1] != N:
            raise DimensionMismatch(f"states must have trailing dimension {N}")
        if self.angle_indices:
            # lift the desired state at the angle nearest to the current one
            d = np.broadcast_to(d, np.broadcast_shapes(d.shape, s.shape)).copy()
            for i in self.angle_indices:
                d[..., i] = s[..., i] - wrap_angle(s[..., i] - d[..., i])
        psi = self.basis.lift_state(s)
        if self.reference == "lift":
            e = psi - self.basis.lift_state(d)
        else:
            e = np.zeros_like(psi)
            e[..., :N] = s - d
            if self.reference == "penalized":
                e[..., :N] *= self.penalized_mask
        return e

    @property
    def penalized_mask(self) -> np.ndarray:
        """Raw-state coordinates that carry weight in Q_lift."""
        N = self.basis.state_dim
        Ql = np.asarray(self.Q_lift)
        return (np.any(Ql[:N] != 0, axis=1) | np.any(Ql[:, :N] != 0, axis=0)).astype(float)

    def __call__(self, state, desired) -> np.ndarray:
        return feedback(self, state, desired)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "reference": self.reference,
            "angle_indices": list(self.angle_indices),
            "hold_steps": self.hold_steps,
            "labels": list(self.basis.labels),
            "gains": self.gains.tolist(),
            "Q_lift": self.Q_lift.tolist(),
            "R": np.atleast_2d(self.R).tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict, basis: BasisSpec) -> "LqrController":
        if tuple(d["labels"]) != basis.labels:
            raise DimensionMismatch("serialized controller was built for a different basis")
        return cls(
            np.array(d["gains"], float), basis, np.array(d["Q_lift"], float), np.array(d["R"], float),
            d["mode"], tuple(d.get("angle_indices", ())), d.get("reference", "lift"), int(d.get("hold_steps", 1)),
        )


def hold_model(A, B, steps: int):
    """(Aᴺ, Σ_{i<N} AⁱB): the lifted model over N steps of zero-order hold."""
    A = np.atleast_2d(np.asarray(A, float))
    B = np.asarray(B, float).reshape(A.shape[0], -1)
    if steps < 1:
        raise ValueError("steps must be at least 1")
    n, m = B.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A
    M[:n, n:] = B
    M[n:, n:] = np.eye(m)
    MN = np.linalg.matrix_power(M, steps)
    return MN[:n, :n], MN[:n, n:]


def synthesize(
    model: DiscreteKoopman,
    basis: BasisSpec,
    Q,
    R,
    mode: str = "discrete",
    angle_indices=(),
    reference: str = "lift",
    hold_steps: int = 1,
    P0=None,
) -> LqrController:
    """Gains for a fitted model with the state penalty Q embedded in the lift.

    In discrete mode the gains are computed for the feedback period
    ``hold_steps·Δt``, i.e. on :func:`hold_model` of the fitted (A, B).
    """
    Q_lift = embed_weights(Q, model.w_s)
    R = np.atleast_2d(np.asarray(R, float))
    if mode == "discrete":
        A, B = extract_ab(model)
        if hold_steps > 1:
            A, B = hold_model(A, B, hold_steps)
        K = solve_lqr_discrete(A, B, Q_lift, R, P0=P0, state_scale="balance")
    elif mode == "continuous":
        K = solve_lqr_continuous(to_continuous(model), model.w_s, Q_lift, R)
    else:
        raise ValueError("mode must be 'discrete' or 'continuous'")
    return LqrController(K, basis, Q_lift, R, mode, angle_indices, reference, hold_steps)


def feedback(controller: LqrController, state, desired) -> np.ndarray:
    """u = −K (Ψ_s(s) − Ψ_s(s_des)); leading batch axes are supported."""
    e = controller.lifted_error(state, desired)
    return -e @ controller.gains.T


# -- actuation inversion -----------------------------------------------------

_A_LO, _A_HI = np.radians(ALPHA_A_RANGE_DEG)
_O_LO, _O_HI = np.radians(ALPHA_O_RANGE_DEG)


def _forward_rad(a, o):
    a2 = a * a
    return a2 * (3.0 - 1.5 * o * o - 0.375 * a2), a2 * o


def actuation_objective(alpha_a_deg, alpha_o_deg, u1, u2):
    """√((u1 − û1)² + (u2 − û2)²) for tail angles in degrees."""
    f1, f2 = fish_actuation(alpha_a_deg, alpha_o_deg)
    return np.hypot(u1 - f1, u2 - f2)


def _box_gn_step(a, o, r1, r2):
    """Minimiser of the linearised residual ‖J d + r‖ over the box, per point.

    In two dimensions the constrained linear least-squares problem is solved
    exactly by enumerating the unconstrained step, the four edges and the
    four corners.
    """
    j11 = 6 * a - 3 * a * o * o - 1.5 * a**3
    j12 = -3 * a * a * o
    j21 = 2 * a * o
    j22 = a * a
    lo_a, hi_a = _A_LO - a, _A_HI - a
    lo_o, hi_o = _O_LO - o, _O_HI - o

    def model(da, do):
        return (j11 * da + j12 * do + r1) ** 2 + (j21 * da + j22 * do + r2) ** 2

    cands = []
    det = j11 * j22 - j12 * j21
    with np.errstate(divide="ignore", invalid="ignore"):
        da = np.where(np.abs(det) > 1e-300, (-r1 * j22 + r2 * j12) / det, 0.0)
        do = np.where(np.abs(det) > 1e-300, (r1 * j21 - r2 * j11) / det, 0.0)
    cands.append((da, do))
    # edges with one coordinate fixed, the other unconstrained then clipped
    for fixed_a in (lo_a, hi_a):
        num = -(j12 * (j11 * fixed_a + r1) + j22 * (j21 * fixed_a + r2))
        den = j12**2 + j22**2
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(den > 1e-300, num / den, 0.0)
        cands.append((fixed_a, np.clip(d, lo_o, hi_o)))
    for fixed_o in (lo_o, hi_o):
        num = -(j11 * (j12 * fixed_o + r1) + j21 * (j22 * fixed_o + r2))
        den = j11**2 + j21**2
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(den > 1e-300, num / den, 0.0)
        cands.append((np.clip(d, lo_a, hi_a), fixed_o))
    for ca in (lo_a, hi_a):
        for co in (lo_o, hi_o):
            cands.append((ca, co))
    best_da = np.zeros_like(a)
    best_do = np.zeros_like(a)
    best = np.full_like(a, np.inf)
    for da, do in cands:
        da = np.broadcast_to(da, a.shape)
        do = np.broadcast_to(do, a.shape)
        feas = (da >= lo_a - 1e-15) & (da <= hi_a + 1e-15) & (do >= lo_o - 1e-15) & (do <= hi_o + 1e-15)
        val = np.where(feas, model(da, do), np.inf)
        better = val < best
        best = np.where(better, val, best)
        best_da = np.where(better, da, best_da)
        best_do = np.where(better, do, best_do)
    return best_da, best_do


def _descend(a, o, u1, u2, iters=60):
    """Projected Gauss–Newton with backtracking, vectorised over starts."""
    def f(a, o):
        g1, g2 = _forward_rad(a, o)
        return (u1 - g1) ** 2 + (u2 - g2) ** 2

    val = f(a, o)
    for _ in range(iters):
        g1, g2 = _forward_rad(a, o)
        da, do = _box_gn_step(a, o, g1 - u1, g2 - u2)
        t = np.ones_like(a)
        improved = np.zeros(a.shape, bool)
        na, no, nv = a.copy(), o.copy(), val.copy()
        for _ in range(30):
            ca = np.clip(a + t * da, _A_LO, _A_HI)
            co = np.clip(o + t * do, _O_LO, _O_HI)
            cv = f(ca, co)
            ok = (cv < nv) & ~improved
            na = np.where(ok, ca, na)
            no = np.where(ok, co, no)
            nv = np.where(ok, cv, nv)
            improved |= ok
            if improved.all():
                break
            t = np.where(improved, t, 0.5 * t)
        stall = ~improved
        # at α_a = 0 the Jacobian vanishes; nudge along +α_a, which is the
        # only direction that can reduce the residual there
        if np.any(stall):
            push = stall & (a <= _A_LO + 1e-12)
            if np.any(push):
                for step in (1e-3, 1e-2, 1e-1):
                    cav = np.clip(a + step, _A_LO, _A_HI)
                    cvv = f(cav, o)
                    ok = push & (cvv < nv)
                    na = np.where(ok, cav, na)
                    nv = np.where(ok, cvv, nv)
                    push = push & ~ok
        a, o, val = na, no, nv
        if np.all(stall):
            break
    return a, o, val


def _golden(f, lo, hi, iters=80):
    """Vectorised golden-section search of f on [lo, hi] (per element)."""
    g = (np.sqrt(5.0) - 1) / 2
    c = hi - g * (hi - lo)
    d = lo + g * (hi - lo)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        left = fc < fd
        # left: keep [lo, d], old c becomes the new d
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
        nd = np.where(left, c, lo + g * (hi - lo))
        nc = np.where(left, hi - g * (hi - lo), d)
        fnew = f(np.where(left, nc, nd))
        fd, fc = np.where(left, fc, fnew), np.where(left, fnew, fd)
        c, d = nc, nd
    x = 0.5 * (lo + hi)
    return x, f(x)


def _edge_candidates(u1, u2, seeds=61):
    """Minimisers along the edges α_a = 30° and α_o = ±45°."""
    out_a, out_o, out_v = [], [], []
    for which, fixed in (("a", _A_HI), ("o", _O_LO), ("o", _O_HI)):
        lo, hi = (_O_LO, _O_HI) if which == "a" else (_A_LO, _A_HI)
        grid = np.linspace(lo, hi, seeds)
        if which == "a":
            g1, g2 = _forward_rad(fixed, grid)
        else:
            g1, g2 = _forward_rad(grid, fixed)
        vals = (u1[:, None] - g1) ** 2 + (u2[:, None] - g2) ** 2
        j = np.argmin(vals, axis=1)
        step = (hi - lo) / (seeds - 1)
        blo = np.maximum(grid[j] - step, lo)
        bhi = np.minimum(grid[j] + step, hi)
        if which == "a":
            f = lambda x: (u1 - _forward_rad(fixed, x)[0]) ** 2 + (u2 - _forward_rad(fixed, x)[1]) ** 2
            x, v = _golden(f, blo, bhi)
            out_a.append(np.full_like(x, fixed))
            out_o.append(x)
        else:
            f = lambda x: (u1 - _forward_rad(x, fixed)[0]) ** 2 + (u2 - _forward_rad(x, fixed)[1]) ** 2
            x, v = _golden(f, blo, bhi)
            out_a.append(x)
            out_o.append(np.full_like(x, fixed))
        out_v.append(v)
    return np.stack(out_a, 1), np.stack(out_o, 1), np.stack(out_v, 1)


def invert_fish_actuation(u1, u2):
    """Tail amplitude and bias (degrees) whose actuation best matches (u1, u2).

    Minimises the actuation residual over α_a ∈ [0°, 30°], α_o ∈ [−45°, 45°]
    by projected Gauss–Newton descent from a 3×3 grid of starting points.
    Accepts scalars or arrays (element-wise).
    """
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    shape = np.broadcast_shapes(u1.shape, u2.shape)
    t1 = np.broadcast_to(u1, shape).ravel()
    t2 = np.broadcast_to(u2, shape).ravel()
    seeds_a = np.linspace(_A_LO, _A_HI, 5)[1:4]
    seeds_o = np.linspace(_O_LO, _O_HI, 5)[1:4]
    SA, SO = np.meshgrid(seeds_a, seeds_o, indexing="ij")
    SA, SO = SA.ravel(), SO.ravel()
    n, k = t1.size, SA.size
    a = np.repeat(SA[None, :], n, 0).ravel()
    o = np.repeat(SO[None, :], n, 0).ravel()
    T1 = np.repeat(t1, k)
    T2 = np.repeat(t2, k)
    a, o, val = _descend(a, o, T1, T2)
    a, o, val = a.reshape(n, k), o.reshape(n, k), val.reshape(n, k)
    # infeasible targets have their optimum on the boundary, where
    # Gauss–Newton converges slowly; add exact 1-D edge minimisers
    ea, eo, ev = _edge_candidates(t1, t2)
    a = np.concatenate([a, ea], axis=1)
    o = np.concatenate([o, eo], axis=1)
    val = np.concatenate([val, ev], axis=1)
    pick = np.argmin(val, axis=1)
    rows = np.arange(n)
    ba, bo = a[rows, pick], o[rows, pick]
    # zero amplitude makes the bias irrelevant; report it as 0
    bo = np.where(ba <= 1e-12, 0.0, bo)
    ba = np.where(ba <= 1e-12, 0.0, ba)
    out_a = np.degrees(ba).reshape(shape)
    out_o = np.degrees(bo).reshape(shape)
    if shape == ():
        return float(out_a), float(out_o)
    return out_a, out_o
