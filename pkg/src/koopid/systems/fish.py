"""Averaged dynamics of a tail-actuated robotic fish.

State s = [x, y, ψ, v_x, v_y, ω] (world position, heading, body-frame
velocities, yaw rate) and input u = [u1, u2] with

    u1 = α_a² (3 − 3/2 α_o² − 3/8 α_a²),   u2 = α_a² α_o

for tail amplitude α_a and bias α_o in radians.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import NonFinite
from ..observables import BasisSpec, DynamicsModel, Term, build_structural_basis

STATE_LABELS = ("x", "y", "psi", "vx", "vy", "w")
CONTROL_LABELS = ("u1", "u2")

ALPHA_A_RANGE_DEG = (0.0, 30.0)
ALPHA_O_RANGE_DEG = (-45.0, 45.0)

#: training distribution for the fish model
TRAIN_DOMAIN = (
    (-0.5, 0.5),
    (-0.1, 0.1),
    (-np.pi / 4, np.pi / 4),
    (0.0, 0.04),
    (-0.0025, 0.0025),
    (-0.5, 0.5),
)


@dataclass(frozen=True)
class FishParams:
    """Simulation parameters; defaults are the reference hydrodynamic values.

    ``m`` (displaced water mass per unit tail length) has no reference value
    and acts as a free input-gain scale.  ``d`` is kept for completeness but is
    not used by any equation.
    """

    m_b: float = 0.725
    m_ax: float = -0.217
    m_ay: float = -0.7888
    J_bz: float = 2.66e-3
    J_az: float = -7.93e-4
    L: float = 0.071
    d: float = 0.04
    c: float = 0.105
    rho: float = 1000.0
    S: float = 0.03
    C_D: float = 0.97
    C_L: float = 3.9047
    K_D: float = 4.5e-3
    K_f: float = 0.7
    K_m: float = 0.45
    omega_a: float = 2 * math.pi
    m: float = 1.0
    v_eps: float = 1e-6

    def __post_init__(self):
        if not (self.m1 > 0 and self.m2 > 0 and self.J3 > 0):
            raise ValueError("m_b − m_ax, m_b − m_ay and J_bz − J_az must be positive")

    @property
    def m1(self) -> float:
        return self.m_b - self.m_ax

    @property
    def m2(self) -> float:
        return self.m_b - self.m_ay

    @property
    def J3(self) -> float:
        return self.J_bz - self.J_az

    @property
    def c1(self) -> float:
        return 0.5 * self.rho * self.S * self.C_D

    @property
    def c2(self) -> float:
        return 0.5 * self.rho * self.S * self.C_L

    @property
    def c4(self) -> float:
        return self.K_D / self.J3

    @property
    def c5(self) -> float:
        # listed with the model parameters, unused by the averaged equations
        return self.L**2 * self.m * self.c / (2 * self.J3)

    @property
    def input_gains(self) -> tuple[float, float, float]:
        """Coefficients of u1 in v̇_x, of u2 in v̇_y and of u2 in ω̇."""
        base = self.m * self.L**2 * self.omega_a**2
        return (
            self.K_f * base / (12 * self.m1),
            self.K_f * base / (4 * self.m2),
            -self.K_m * base * self.c / (4 * self.J3),
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FishParams":
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown FishParams keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "FishParams":
        with open(path) as fh:
            return cls.from_json(fh.read())


DEFAULT_PARAMS = FishParams()


def fish_actuation(alpha_a_deg, alpha_o_deg):
    """Forward map (α_a, α_o) in degrees → (u1, u2)."""
    a = np.radians(alpha_a_deg)
    o = np.radians(alpha_o_deg)
    a2 = a * a
    return a2 * (3.0 - 1.5 * o * o - 0.375 * a2), a2 * o


def _speed_terms(vx, vy, v_eps):
    v = np.sqrt(vx * vx + vy * vy)
    at = np.arctan(vy / np.maximum(vx, v_eps))
    return v, at


def fish_flow(state, u, params: FishParams = DEFAULT_PARAMS) -> np.ndarray:
    s = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    p = params
    psi, vx, vy, w = s[..., 2], s[..., 3], s[..., 4], s[..., 5]
    u1, u2 = u[..., 0], u[..., 1]
    v, at = _speed_terms(vx, vy, p.v_eps)
    b1, b2, b3 = p.input_gains
    cp, sp = np.cos(psi), np.sin(psi)
    f1 = (p.m2 / p.m1) * vy * w - (p.c1 / p.m1) * vx * v + (p.c2 / p.m1) * vy * v * at
    f2 = -(p.m1 / p.m2) * vx * w - (p.c1 / p.m2) * vy * v - (p.c2 / p.m2) * vx * v * at
    f3 = (p.m1 - p.m2) * vx * vy - p.c4 * np.sign(w) * w * w
    out = np.empty(np.broadcast_shapes(s.shape, u.shape[:-1] + (6,)))
    out[..., 0] = vx * cp - vy * sp
    out[..., 1] = vx * sp + vy * cp
    out[..., 2] = w
    out[..., 3] = f1 + b1 * u1
    out[..., 4] = f2 + b2 * u2
    out[..., 5] = f3 + b3 * u2
    if not np.all(np.isfinite(out)):
        raise NonFinite("fish dynamics produced a non-finite derivative")
    return out


def fish_model(params: FishParams = DEFAULT_PARAMS, domain=TRAIN_DOMAIN) -> DynamicsModel:
    ua = fish_actuation(np.array([0.0, 30.0, 30.0]), np.array([0.0, 0.0, 45.0]))
    u1_hi = float(np.max(ua[0]))
    u2_hi = float(np.max(ua[1]))
    return DynamicsModel(
        state_dim=6,
        control_dim=2,
        flow=lambda s, u: fish_flow(s, u, params),
        domain=domain,
        control_domain=[(0.0, u1_hi), (-u2_hi, u2_hi)],
        state_labels=STATE_LABELS,
        control_labels=CONTROL_LABELS,
        name="fish",
    )


def _c(s, i):
    return s[..., i]


def _v(s):
    return np.sqrt(s[..., 3] ** 2 + s[..., 4] ** 2)


def _vs(s):
    # |v| guarded against division by zero at rest
    return np.maximum(_v(s), 1e-300)


def _at(s, v_eps=DEFAULT_PARAMS.v_eps):
    return np.arctan(s[..., 4] / np.maximum(s[..., 3], v_eps))


def fish_terms() -> tuple[list[Term], list[list[str]]]:
    """Coefficient-free terms of the fish dynamics and their partial derivatives.

    Returns ``(terms, dynamics)`` suitable for :func:`build_structural_basis`.
    Signs and constant factors are dropped, since they are absorbed by the fit.
    """
    X, Y, PSI, VX, VY, W = range(6)
    psi = lambda s: s[..., PSI]
    vx = lambda s: s[..., VX]
    vy = lambda s: s[..., VY]
    w = lambda s: s[..., W]
    cos, sin = (lambda s: np.cos(psi(s))), (lambda s: np.sin(psi(s)))
    V, A = _v, _at

    terms = [
        Term("vx*cos(psi)", lambda s: vx(s) * cos(s),
             ((VX, "cos(psi)", cos), (PSI, "vx*sin(psi)", lambda s: vx(s) * sin(s)))),
        Term("vy*sin(psi)", lambda s: vy(s) * sin(s),
             ((VY, "sin(psi)", sin), (PSI, "vy*cos(psi)", lambda s: vy(s) * cos(s)))),
        Term("vx*sin(psi)", lambda s: vx(s) * sin(s),
             ((VX, "sin(psi)", sin), (PSI, "vx*cos(psi)", lambda s: vx(s) * cos(s)))),
        Term("vy*cos(psi)", lambda s: vy(s) * cos(s),
             ((VY, "cos(psi)", cos), (PSI, "vy*sin(psi)", lambda s: vy(s) * sin(s)))),
        Term("vy*w", lambda s: vy(s) * w(s), ((VY, "w", w), (W, "vy", vy))),
        Term("vx*|v|", lambda s: vx(s) * V(s),
             ((VX, "(|v|+vx^2/|v|)", lambda s: V(s) + vx(s) ** 2 / _vs(s)),
              (VY, "vx*vy/|v|", lambda s: vx(s) * vy(s) / _vs(s)))),
        Term("vy*|v|*atan(vy/vx)", lambda s: vy(s) * V(s) * A(s),
             ((VX, "(vx*vy*atan(vy/vx)/|v|-vy^2/|v|)",
               lambda s: (vx(s) * vy(s) * A(s) - vy(s) ** 2) / _vs(s)),
              (VY, "(|v|*atan(vy/vx)+vy^2*atan(vy/vx)/|v|+vx*vy/|v|)",
               lambda s: V(s) * A(s) + (vy(s) ** 2 * A(s) + vx(s) * vy(s)) / _vs(s)))),
        Term("vx*w", lambda s: vx(s) * w(s), ((VX, "w", w), (W, "vx", vx))),
        Term("vy*|v|", lambda s: vy(s) * V(s),
             ((VX, "vx*vy/|v|", lambda s: vx(s) * vy(s) / _vs(s)),
              (VY, "(|v|+vy^2/|v|)", lambda s: V(s) + vy(s) ** 2 / _vs(s)))),
        Term("vx*|v|*atan(vy/vx)", lambda s: vx(s) * V(s) * A(s),
             ((VX, "(|v|*atan(vy/vx)+vx^2*atan(vy/vx)/|v|-vx*vy/|v|)",
               lambda s: V(s) * A(s) + (vx(s) ** 2 * A(s) - vx(s) * vy(s)) / _vs(s)),
              (VY, "(vx*vy*atan(vy/vx)/|v|+vx^2/|v|)",
               lambda s: (vx(s) * vy(s) * A(s) + vx(s) ** 2) / _vs(s)))),
        Term("vx*vy", lambda s: vx(s) * vy(s), ((VX, "vy", vy), (VY, "vx", vx))),
        Term("sgn(w)*w^2", lambda s: np.sign(w(s)) * w(s) ** 2, ((W, "|w|", lambda s: np.abs(w(s))),)),
    ]
    dynamics = [
        ["vx*cos(psi)", "vy*sin(psi)"],
        ["vx*sin(psi)", "vy*cos(psi)"],
        ["w"],
        ["vy*w", "vx*|v|", "vy*|v|*atan(vy/vx)"],
        ["vx*w", "vy*|v|", "vx*|v|*atan(vy/vx)"],
        ["vx*vy", "sgn(w)*w^2"],
    ]
    return terms, dynamics


#: states whose terms are expanded to second order; x and y feed back into
#: no right-hand side, so their kinematic terms stay at first order
EXPAND_STATES = (2, 3, 4, 5)


def fish_basis(order: int = 2, expand=EXPAND_STATES, domain=TRAIN_DOMAIN) -> BasisSpec:
    terms, dynamics = fish_terms()
    return build_structural_basis(
        STATE_LABELS, terms, dynamics, CONTROL_LABELS, order=order, expand=expand, domain=domain
    )


def figure8_reference(t) -> np.ndarray:
    """Desired state of the figure-8 manoeuvre (heading and forward speed only)."""
    t = np.asarray(t, dtype=float)
    amp = 135.0 * np.pi / 180.0
    out = np.zeros(t.shape + (6,))
    out[..., 2] = amp * np.sin(0.05 * t + np.pi / 2)
    out[..., 3] = 0.02
    out[..., 5] = 0.05 * amp * np.cos(0.05 * t + np.pi / 2)
    return out


def wrap_angle(a):
    """Wrap to (−π, π]."""
    a = np.asarray(a, dtype=float)
    r = np.mod(a + np.pi, 2 * np.pi) - np.pi
    return np.where(r == -np.pi, np.pi, r)
