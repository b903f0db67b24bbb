"""End-to-end pipelines for the pendulum and robotic-fish studies.

These wire the library pieces together; the CLI and the acceptance tests
call into them.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .bounds import (
    ErrorBoundEstimate,
    data_driven_estimate,
    estimate_fmax_model,
    global_error_bound,
    measured_max_error,
)
from .control import LqrController, invert_fish_actuation, synthesize
from .errors import RiccatiDiverged, Unstabilizable
from .koopman import DiscreteKoopman, SnapshotSet, fit, incremental_update, predict
from .observables import (
    BasisSpec,
    build_analytic_basis,
    build_numerical_basis,
    estimate_derivatives,
    moving_average,
    state_basis,
)
from .systems import (
    DEFAULT_PARAMS,
    TRAIN_DOMAIN,
    FishParams,
    SamplingSpec,
    add_noise,
    figure8_reference,
    fish_actuation,
    fish_basis,
    fish_flow,
    fish_model,
    integrate,
    pendulum_model,
    pendulum_orders,
    sample_training_set,
    tracking_cost,
)

PENDULUM_DT = 0.01
PENDULUM_Q = np.diag([5.0, 0.01])
PENDULUM_R = np.array([[0.001]])

FISH_DT = 0.005
FISH_Q = np.diag([0.0, 0.0, 0.1, 4000.0, 0.0, 0.0])
FISH_R = np.diag([0.01, 0.01])
FISH_FEEDBACK_PERIOD = 1.0
#: tail bias range (deg) then amplitude range (deg)
FISH_ALPHA_BOUNDS = ((-45.0, 45.0), (0.0, 30.0))
#: drag deceleration at the nominal 0.02 m/s cruising speed
FISH_TYPICAL_ACCEL = DEFAULT_PARAMS.c1 / DEFAULT_PARAMS.m1 * 0.02**2


# -- pendulum: error bounds -------------------------------------------------


@dataclass
class BoundsResult:
    t: np.ndarray
    measured: np.ndarray
    bound_model: np.ndarray
    bound_data: np.ndarray
    model: DiscreteKoopman
    basis: BasisSpec
    snapshots: SnapshotSet
    extra: dict = field(default_factory=dict)


def pendulum_bounds(
    n: int,
    train_count: int = 5000,
    test_count: int = 5000,
    horizon: float = 1.0,
    dt: float = PENDULUM_DT,
    seed: int = 0,
    fmax_samples: int = 100_000,
) -> BoundsResult:
    """Analytic-basis pendulum model of order n with its measured and bounded errors."""
    m = pendulum_model()
    orders = pendulum_orders(n)
    basis = build_analytic_basis(m, orders)
    spec = SamplingSpec(m.domain, m.control_domain, train_count, dt, seed=seed)
    snaps = sample_training_set(m, spec, basis)
    model = fit(snaps)
    t = dt * np.arange(int(round(horizon / dt)) + 1)
    meas = measured_max_error(model, m, basis, test_count, horizon, seed=seed + 1)
    fm = estimate_fmax_model(m, orders, samples=fmax_samples, seed=seed + 2)
    dd = data_driven_estimate(model, snaps, orders, m.state_dim)
    return BoundsResult(t, meas, fm.bound(t), dd.bound(t), model, basis, snaps, {"fmax_model": fm, "fmax_data": dd})


def _clean_initial_lift(m, basis, s0, u, dt):
    """FD lift at t0 from a noise-free three-sample stencil around s0."""
    back = integrate(lambda s, v: -m.flow(s, v), s0, u, dt, dt).states[-1]
    fwd = integrate(m, s0, u, dt, dt).states[-1]
    out = np.empty(s0.shape[:-1] + (basis.w,))
    derivs = {}
    for k, e in enumerate(basis.entries):
        if e.role == "state":
            out[..., k] = s0[..., e.state_index]
        elif e.role == "control":
            out[..., k] = u[..., e.state_index]
        else:
            src, q = e.source
            if q != 1:
                raise ValueError("clean initial lifts support first differences only")
            if src not in derivs:
                derivs[src] = (fwd[..., src] - back[..., src]) / (2 * dt)
            out[..., k] = derivs[src]
    return out


def noisy_pendulum_bounds(
    sigma: float,
    n: int = 2,
    window: int = 15,
    trajectories: int = 500,
    length: float = 0.4,
    test_count: int = 2000,
    horizon: float = 1.0,
    dt: float = PENDULUM_DT,
    seed: int = 0,
) -> BoundsResult:
    """Unknown-dynamics pendulum: noisy θ, ω filtered, derivatives by finite differences.

    ``bound_data`` uses max|f⁽ⁿ⁺¹⁾| estimated by central differences of the
    filtered training measurements; the one-step-residual estimate is kept in
    ``extra["bound_residual"]``.
    """
    m = pendulum_model()
    orders = pendulum_orders(n)
    basis = build_numerical_basis(m.state_labels, orders, m.control_labels, derivative_of={1: 0})
    rng = np.random.default_rng(seed)
    s0, u = m.sample(trajectories, rng)
    tr = integrate(m, s0, u, dt, length)
    noisy = add_noise(tr.states, [sigma, sigma], seed=seed + 1)
    runs = []
    need = n + 1
    fmax = np.zeros(m.state_dim)
    for i in range(trajectories):
        f = moving_average(noisy[:, i], window)
        runs.append((f, np.repeat(u[i][None], len(f), 0)))
        # f^(n_j+1) of each state, from the highest measured chain member (ω)
        est = estimate_derivatives(f[:, 1], dt, need - 1)
        for j, nj in enumerate(orders):
            q = nj + 1 - (1 if j == 0 else 0)
            vals = f[:, 1] if q == 0 else est.values[q - 1]
            fmax[j] = max(fmax[j], float(np.nanmax(np.abs(vals))))
    snaps = SnapshotSet.from_trajectories(basis, runs, dt)
    model = fit(snaps)

    steps = int(round(horizon / dt))
    t = dt * np.arange(steps + 1)
    trng = np.random.default_rng(seed + 2)
    ts0, tu = m.sample(test_count, trng)
    truth = integrate(m, ts0, tu, dt, steps * dt).states
    x0 = _clean_initial_lift(m, basis, ts0, tu, dt)
    pred = predict(model, x0, np.broadcast_to(tu, (steps,) + tu.shape), steps)
    meas = np.max(np.abs(pred[..., : m.state_dim] - truth), axis=1)

    fd_est = ErrorBoundEstimate(orders, fmax, "data_driven", dt)
    res_est = data_driven_estimate(model, snaps, orders, m.state_dim)
    fm = estimate_fmax_model(m, orders, samples=100_000, seed=seed + 3)
    return BoundsResult(
        t,
        meas,
        fm.bound(t),
        fd_est.bound(t),
        model,
        basis,
        snaps,
        {"bound_residual": res_est.bound(t), "fmax_fd": fd_est, "sigma": sigma, "window": window},
    )


# -- pendulum: control ---------------------------------------------------------


def pendulum_control_model(n: int, trajectories: int = 500, samples: int = 4, dt: float = PENDULUM_DT, seed: int = 0):
    """Model of order n from short trajectories (inputs drawn from ±10)."""
    m = pendulum_model(u_range=(-10.0, 10.0))
    basis = build_analytic_basis(m, pendulum_orders(n)) if n > 1 else state_basis(m)
    s0, u = SamplingSpec(m.domain, m.control_domain, trajectories, dt, seed=seed).draw()
    tr = integrate(m, s0, u, dt, (samples - 1) * dt)
    runs = [(tr.states[:, i], tr.controls[:, i]) for i in range(trajectories)]
    return fit(SnapshotSet.from_trajectories(basis, runs, dt)), basis


def pendulum_initial_conditions(count: int = 30, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.uniform(-np.pi, np.pi, count), rng.uniform(-2.0, 2.0, count)])


def run_pendulum_control(
    controller: LqrController,
    initial_states,
    duration: float = 10.0,
    dt: float = PENDULUM_DT,
    Q=PENDULUM_Q,
    R=PENDULUM_R,
):
    """Regulate to the upright (0, 0) with feedback every dt; returns (costs, trajectory).

    Costs are the time integral Σ(…)·dt of the quadratic objective.
    """
    m = pendulum_model()
    s0 = np.atleast_2d(np.asarray(initial_states, float))
    zero = np.zeros(m.state_dim)
    tr = integrate(m, s0, lambda t, s: controller(s, zero), dt, duration)
    ref = np.zeros(tr.states.shape[:1] + (m.state_dim,))
    costs = np.array([
        tracking_cost(tr.states[:, i], ref, tr.controls[:, i], Q, R, angle_indices=(0,), scale=dt)
        for i in range(s0.shape[0])
    ])
    return costs, tr


def pendulum_control_comparison(orders=(1, 2), count: int = 30, seed: int = 0, mode: str = "discrete", duration: float = 10.0):
    """Mean and std of the regulation cost per basis order."""
    ics = pendulum_initial_conditions(count, seed)
    out = {}
    for n in orders:
        model, basis = pendulum_control_model(n, seed=seed + 1)
        ctrl = synthesize(model, basis, PENDULUM_Q, PENDULUM_R, mode=mode, angle_indices=(0,))
        costs, _ = run_pendulum_control(ctrl, ics, duration)
        out[n] = {"costs": costs, "mean": float(costs.mean()), "std": float(costs.std()), "controller": ctrl}
    return out


# -- fish ---------------------------------------------------------------------


def _alpha_to_u(c):
    c = np.asarray(c, float)
    return np.column_stack(fish_actuation(c[:, 1], c[:, 0]))


def fish_training_set(basis: BasisSpec, count: int = 3000, seed: int = 0, params: FishParams = DEFAULT_PARAMS, dt: float = FISH_DT):
    m = fish_model(params)
    spec = SamplingSpec(TRAIN_DOMAIN, FISH_ALPHA_BOUNDS, count, dt, seed=seed, control_transform=_alpha_to_u)
    return sample_training_set(m, spec, basis)


def fish_controller(model, basis, mode="discrete", reference="penalized", feedback_period=FISH_FEEDBACK_PERIOD, dt=FISH_DT, P0=None):
    """LQR for the figure-8 weights; discrete gains match the feedback period."""
    hold = max(int(round(feedback_period / dt)), 1)
    return synthesize(model, basis, FISH_Q, FISH_R, mode=mode, angle_indices=(2,), reference=reference, hold_steps=hold, P0=P0)


def fish_initial_state(reference=figure8_reference) -> np.ndarray:
    """At rest at the origin, facing the reference heading."""
    s0 = np.zeros(6)
    s0[2] = reference(0.0)[2]
    return s0


@dataclass
class OnlineSettings:
    """Refit every ``update_period`` seconds from the data seen since the last refit.

    ``records_per_period`` one-step transitions are measured per feedback
    interval, evenly spaced and starting at the feedback instant.
    """

    update_period: float = 10.0
    forgetting: float = 1.0
    records_per_period: int = 1


@dataclass
class FishRun:
    t: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    reference: np.ndarray
    cost: float
    log: list = field(default_factory=list)
    model: DiscreteKoopman | None = None


def _disturbed_flow(params, disturbance):
    bx, by = (float(v) for v in np.broadcast_to(np.asarray(disturbance, float), (2,)))

    def flow(s, u):
        d = fish_flow(s, u, params)
        if bx or by:
            d = d.copy()
            d[..., 3] += bx
            d[..., 4] += by
        return d

    return flow


def run_fish(
    controller: LqrController,
    duration: float = 120.0,
    feedback_period: float = FISH_FEEDBACK_PERIOD,
    dt: float = FISH_DT,
    s0=None,
    params: FishParams = DEFAULT_PARAMS,
    disturbance=(0.0, 0.0),
    online: OnlineSettings | None = None,
    model: DiscreteKoopman | None = None,
    reference=figure8_reference,
) -> FishRun:
    """Closed-loop fish run with zero-order-hold feedback and actuation inversion.

    The truth is integrated at ``dt`` between feedback instants.  Costs are
    accumulated at the feedback instants.  With ``online`` settings the model
    absorbs the measured transitions via :func:`incremental_update` and the
    gains are re-synthesized at the given cadence.
    """
    if online is not None and model is None:
        raise ValueError("online updates need the fitted model")
    flow = _disturbed_flow(params, disturbance)
    n_fb = int(round(duration / feedback_period))
    sub = int(round(feedback_period / dt))
    s = fish_initial_state(reference) if s0 is None else np.array(s0, float)
    basis = controller.basis
    every = None
    if online is not None and np.isfinite(online.update_period):
        every = max(int(round(online.update_period / feedback_period)), 1)
    states = [s]
    controls = []
    log = []
    pending = []
    for k in range(n_fb):
        t = k * feedback_period
        cmd = controller(s, reference(t))
        a, o = invert_fish_actuation(cmd[0], cmd[1])
        u = np.array(fish_actuation(a, o))
        seg = integrate(flow, s, u, dt, feedback_period, substeps=1).states
        if every is not None:
            idx = np.linspace(0, sub - 1, min(online.records_per_period, sub)).round().astype(int)
            pending.append((seg[idx], seg[idx + 1], u))
        s = seg[-1]
        states.append(s)
        controls.append(u)
        if every is not None and (k + 1) % every == 0:
            segs = np.concatenate([p[0] for p in pending])
            nxt = np.concatenate([p[1] for p in pending])
            uu = np.concatenate([np.repeat(p[2][None], len(p[0]), 0) for p in pending])
            new = SnapshotSet.from_records(basis, segs, uu, nxt, dt=dt)
            old_K = model.K
            model = incremental_update(model, new, forgetting=online.forgetting)
            entry = {"t": (k + 1) * feedback_period, "records": len(new), "dK": float(np.linalg.norm(model.K - old_K))}
            try:
                controller = fish_controller(model, basis, controller.mode, controller.reference, feedback_period, dt)
                entry["resynthesized"] = True
            except (Unstabilizable, RiccatiDiverged) as exc:
                entry["resynthesized"] = False
                entry["error"] = str(exc)
            log.append(entry)
            pending = []
    states = np.array(states)
    controls = np.array(controls + [controls[-1] if controls else np.zeros(2)])
    t = feedback_period * np.arange(n_fb + 1)
    ref = reference(t)
    cost = tracking_cost(states, ref, controls, FISH_Q, FISH_R, angle_indices=(2,)) if n_fb else 0.0
    for e in log:
        i = int(round(e["t"] / feedback_period))
        e["running_cost"] = tracking_cost(states[: i + 1], ref[: i + 1], controls[: i + 1], FISH_Q, FISH_R, angle_indices=(2,))
    return FishRun(t, states, controls, ref, cost, log, model)


def fish_models(seed: int = 0, count: int = 3000, params: FishParams = DEFAULT_PARAMS):
    """Koopman (order-2 structural basis) and linear (raw states) models."""
    m = fish_model(params)
    out = {}
    for name, basis in (("koopman", fish_basis()), ("linear", state_basis(m))):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            out[name] = (fit(fish_training_set(basis, count, seed, params)), basis)
    return out


def fish_figure8_comparison(seed: int = 0, duration: float = 120.0, mode: str = "discrete", reference: str = "penalized"):
    out = {}
    for name, (model, basis) in fish_models(seed).items():
        ctrl = fish_controller(model, basis, mode=mode, reference=reference)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            out[name] = run_fish(ctrl, duration)
    return out


def fish_online_comparison(
    seed: int = 0,
    disturbance=None,
    duration: float = 120.0,
    update_period: float = 10.0,
    forgetting: float = 1.0,
    records_per_period: int = 1,
):
    """Frozen and online-updated Koopman-LQR under the same disturbance."""
    if disturbance is None:
        disturbance = default_disturbance()
    model, basis = fish_models(seed)["koopman"]
    ctrl = fish_controller(model, basis)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        frozen = run_fish(ctrl, duration, disturbance=disturbance)
        online = run_fish(ctrl, duration, disturbance=disturbance, online=OnlineSettings(update_period, forgetting, records_per_period), model=model)
    return {"frozen": frozen, "online": online}


def default_disturbance(fraction: float = 0.2) -> tuple[float, float]:
    """Body-frame bias of ``fraction`` times the cruising drag deceleration, split equally
    between a head-on and a lateral component."""
    a = fraction * FISH_TYPICAL_ACCEL
    return (-a / np.sqrt(2), a / np.sqrt(2))
