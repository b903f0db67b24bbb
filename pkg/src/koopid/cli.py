"""Command-line front end: ``koopid {train,bounds,control,online}``.

Every flag may also be given as a key of a JSON config (``--config``) using
underscores, e.g. ``{"weights_q": [5, 0.01]}``; command-line flags win.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import experiments as ex
from .bounds import BOUNDS_HEADER, estimate_fmax_model, max_local_error, measured_max_error, write_bounds_csv, data_driven_estimate
from .errors import ConfigError, KoopidError, NumericalError
from .koopman import DiscreteKoopman, SnapshotSet, fit, one_step_residuals
from .observables import (
    DynamicsModel,
    Trajectory,
    build_analytic_basis,
    read_trajectory_csv,
    state_basis,
    trajectory_header,
    write_trajectory_csv,
)
from .systems import SamplingSpec, fish_basis, fish_model, pendulum_model, pendulum_orders, sample_training_set

log = logging.getLogger("koopid")

SYSTEMS = ("pendulum", "fish", "constant", "custom")

COST_HEADER = ["run", "controller", "order", "cost"]
UPDATE_HEADER = ["t", "records", "dK_fro", "resynthesized", "running_cost"]


@dataclass
class ExperimentConfig:
    command: str
    system: str = "pendulum"
    order: list = field(default_factory=lambda: [2])
    samples: int | None = None
    dt: float | None = None
    seed: int = 0
    horizon: float = 1.0
    noise: list = field(default_factory=list)
    window: int = 15
    weights_q: list | None = None
    weights_r: list | None = None
    duration: float | None = None
    update_period: float = 10.0
    disturbance: list | None = None
    out: str = "koopid_out"
    snapshots: str | None = None
    model: str | None = None
    test_count: int = 1000
    count: int = 30
    mode: str = "discrete"
    reference: str | None = None
    forgetting: float = 1.0
    records_per_period: int = 1

    def validate(self) -> "ExperimentConfig":
        def bad(key, why):
            raise ConfigError(f"{key}: {why}")

        if self.system not in SYSTEMS:
            bad("system", f"must be one of {', '.join(SYSTEMS)}")
        if self.system == "custom" and self.snapshots is None and self.command == "train":
            bad("snapshots", "a CSV file is required for --system custom")
        if not self.order or any((not isinstance(n, int)) or n < 0 for n in self.order):
            bad("order", "must be non-negative integers")
        if self.samples is not None and self.samples < 1:
            bad("samples", "must be at least 1")
        if self.dt is not None and not self.dt > 0:
            bad("dt", "must be positive")
        if not self.horizon >= 0:
            bad("horizon", "must be non-negative")
        if any(not s >= 0 for s in self.noise):
            bad("noise", "standard deviations must be non-negative")
        if self.window < 1:
            bad("window", "must be at least 1")
        if self.duration is not None and not self.duration >= 0:
            bad("duration", "must be non-negative")
        if not self.update_period > 0:
            bad("update_period", "must be positive (use inf to disable updates)")
        if self.disturbance is not None and len(self.disturbance) not in (1, 2):
            bad("disturbance", "give one magnitude or a body-frame pair bx,by")
        if self.mode not in ("discrete", "continuous"):
            bad("mode", "must be discrete or continuous")
        if self.reference not in (None, "lift", "states", "penalized"):
            bad("reference", "must be lift, states or penalized")
        if not 0 < self.forgetting <= 1:
            bad("forgetting", "must lie in (0, 1]")
        if self.test_count < 1 or self.count < 0 or self.records_per_period < 1:
            bad("test_count/count/records_per_period", "must be positive")
        for key, vals in (("weights_q", self.weights_q), ("weights_r", self.weights_r)):
            if vals is not None and any(not v >= 0 for v in np.ravel(vals)):
                bad(key, "diagonal weights must be non-negative")
        if self.snapshots is not None and not Path(self.snapshots).is_file():
            bad("snapshots", f"no such file {self.snapshots}")
        if self.model is not None and not Path(self.model).is_file():
            bad("model", f"no such file {self.model}")
        return self


def _floats(text):
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _ints(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"order: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="koopid", description="Derivative-based Koopman identification and control")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("train", "fit a model and write model.json plus a training report"),
        ("bounds", "measured errors and error-bound curves"),
        ("control", "closed-loop LQR runs and costs"),
        ("online", "frozen versus online-updated control under a disturbance"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="JSON file with default values for any flag")
        s.add_argument("--system", choices=SYSTEMS)
        s.add_argument("--order", help="basis order n, or a comma list")
        s.add_argument("--samples", type=int, help="training records (or trajectories)")
        s.add_argument("--dt", type=float)
        s.add_argument("--seed", type=int)
        s.add_argument("--horizon", type=float, help="prediction horizon in seconds")
        s.add_argument("--noise", help="measurement noise σ, or a comma list")
        s.add_argument("--window", type=int, help="moving-average window")
        s.add_argument("--weights-q", help="diagonal of Q, comma separated")
        s.add_argument("--weights-r", help="diagonal of R, comma separated")
        s.add_argument("--duration", type=float)
        s.add_argument("--update-period", type=float, help="seconds between online refits (inf: never)")
        s.add_argument("--disturbance", help="bias magnitude in m/s², or bx,by")
        s.add_argument("--out", help="output directory")
        s.add_argument("--snapshots", help="trajectory or snapshot CSV to train on")
        s.add_argument("--model", help="serialized model JSON to reuse")
        s.add_argument("--test-count", type=int)
        s.add_argument("--count", type=int, help="initial conditions in a control batch")
        s.add_argument("--mode", choices=("discrete", "continuous"))
        s.add_argument("--reference", choices=("lift", "states", "penalized"))
        s.add_argument("--forgetting", type=float)
        s.add_argument("--records-per-period", type=int)
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    data: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
    known = set(ExperimentConfig.__dataclass_fields__) - {"command"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown config key")
    cli = {k: v for k, v in vars(args).items() if v is not None and k in known}
    for key in ("order",):
        if key in cli:
            cli[key] = _ints(cli[key])
        elif key in data and not isinstance(data[key], list):
            data[key] = [data[key]]
    for key in ("noise", "weights_q", "weights_r", "disturbance"):
        if key in cli:
            try:
                cli[key] = _floats(cli[key])
            except ValueError:
                raise ConfigError(f"{key}: expected comma-separated numbers") from None
        elif key in data and not isinstance(data[key], list):
            data[key] = [data[key]]
    merged = {**data, **cli}
    try:
        cfg = ExperimentConfig(command=args.command, **merged)
    except TypeError as exc:
        raise ConfigError(f"config: {exc}") from None
    return cfg.validate()


# -- CSV helpers ---------------------------------------------------------------


def _validate_csv(path, header, text_columns=()):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != list(header):
        raise NumericalError(f"{path}: header does not match {header}")
    skip = {header.index(c) for c in text_columns}
    for r in rows[1:]:
        if len(r) != len(header):
            raise NumericalError(f"{path}: ragged row")
        for j, v in enumerate(r):
            if j in skip:
                continue
            try:
                float(v)
            except ValueError:
                if v not in ("True", "False"):
                    raise NumericalError(f"{path}: non-numeric cell {v!r}") from None


def _write_rows(path, header, rows, text_columns=()):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    _validate_csv(path, header, text_columns)


def snapshot_header(state_dim: int, control_dim: int, with_next_control: bool = True) -> list[str]:
    h = [f"s{i + 1}" for i in range(state_dim)] + [f"u{i + 1}" for i in range(control_dim)]
    h += [f"s{i + 1}_next" for i in range(state_dim)]
    if with_next_control:
        h += [f"u{i + 1}_next" for i in range(control_dim)]
    return h


def read_records_csv(path):
    """Records (s, u, s_next, u_next) from a snapshot CSV or a trajectory CSV.

    Snapshot CSVs have columns s1..sN, u1..uM, s1_next..sN_next and
    optionally u1_next..uM_next; trajectory CSVs start with a ``t`` column.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"snapshots: {path} is empty (header row is mandatory)")
    header = [h.strip() for h in rows[0]]
    if header and header[0] == "t":
        try:
            tr = read_trajectory_csv(path)
        except ValueError as exc:
            raise ConfigError(f"snapshots: {exc}") from None
        if len(tr) < 2:
            raise ConfigError("snapshots: a trajectory CSV needs at least two samples")
        dt = float(np.mean(np.diff(tr.t)))
        return tr.states[:-1], tr.controls[:-1], tr.states[1:], tr.controls[1:], dt
    N = sum(1 for h in header if h.startswith("s") and not h.endswith("_next"))
    M = sum(1 for h in header if h.startswith("u") and not h.endswith("_next"))
    full = header == snapshot_header(N, M, True)
    if not (full or header == snapshot_header(N, M, False)):
        raise ConfigError("snapshots: header must be s1..sN,u1..uM,s1_next..sN_next[,u1_next..uM_next]")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], float).reshape(-1, len(header))
    except ValueError as exc:
        raise ConfigError(f"snapshots: {exc}") from None
    if data.shape[0] == 0:
        raise ConfigError("snapshots: no records")
    s, u, s1 = data[:, :N], data[:, N : N + M], data[:, N + M : 2 * N + M]
    u1 = data[:, 2 * N + M :] if full else u
    return s, u, s1, u1, None


# -- systems ---------------------------------------------------------------------


def constant_model() -> DynamicsModel:
    """ṡ = 0 with one state and one ineffective input."""
    zero = lambda s, u: np.zeros_like(np.asarray(s, dtype=float))
    return DynamicsModel(
        state_dim=1,
        control_dim=1,
        flow=zero,
        domain=[(-1.0, 1.0)],
        control_domain=[(-1.0, 1.0)],
        derivative_chain=(zero, zero, zero, zero),
        state_labels=("s",),
        control_labels=("u",),
        name="constant",
    )


def _system(cfg):
    if cfg.system == "pendulum":
        return pendulum_model()
    if cfg.system == "fish":
        return fish_model()
    if cfg.system == "constant":
        return constant_model()
    return None


def _basis(cfg, model, n):
    if cfg.system == "fish":
        return fish_basis(order=min(n, 2)) if n > 0 else state_basis(model)
    if cfg.system == "pendulum":
        return build_analytic_basis(model, pendulum_orders(n))
    return build_analytic_basis(model, n)


def _train(cfg, n):
    """(model, snapshots, basis, dynamics) for one basis order."""
    if cfg.snapshots is not None:
        s, u, s1, u1, dt_csv = read_records_csv(cfg.snapshots)
        dt = cfg.dt or dt_csv
        if dt is None:
            raise ConfigError("dt: required for snapshot CSVs")
        dyn = _system(cfg)
        from .observables import BasisSpec, _control_entries, _state_entries

        if dyn is not None:
            if s.shape[1] != dyn.state_dim or u.shape[1] != dyn.control_dim:
                raise ConfigError(f"snapshots: {cfg.system} needs {dyn.state_dim} states and {dyn.control_dim} controls")
            basis = _basis(cfg, dyn, n)
        else:
            labels = [f"s{i + 1}" for i in range(s.shape[1])]
            basis = BasisSpec(
                tuple(_state_entries(labels) + _control_entries([f"u{i + 1}" for i in range(u.shape[1])])),
                s.shape[1], u.shape[1], (0,) * s.shape[1], "state",
            )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            snaps = SnapshotSet.from_records(basis, s, u, s1, u1, dt=dt)
        return fit(snaps), snaps, basis, dyn
    dyn = _system(cfg)
    basis = _basis(cfg, dyn, n)
    if cfg.system == "fish":
        dt = cfg.dt or ex.FISH_DT
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            snaps = ex.fish_training_set(basis, cfg.samples or 3000, cfg.seed, dt=dt)
    else:
        dt = cfg.dt or ex.PENDULUM_DT
        spec = SamplingSpec(dyn.domain, dyn.control_domain, cfg.samples or 5000, dt, seed=cfg.seed)
        snaps = sample_training_set(dyn, spec, basis)
    return fit(snaps), snaps, basis, dyn


def _load_or_train(cfg, n):
    model, snaps, basis, dyn = _train(cfg, n)
    if cfg.model is not None:
        loaded = DiscreteKoopman.load(cfg.model)
        if loaded.labels != model.labels:
            raise ConfigError("model: basis labels do not match the configured system and order")
        model = loaded
    return model, snaps, basis, dyn


# -- commands ----------------------------------------------------------------


def cmd_train(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    n = cfg.order[0]
    model, snaps, basis, _ = _train(cfg, n)
    model.save(out / "model.json")
    r = one_step_residuals(model, snaps)[:, : model.w_s]
    report = {
        "system": cfg.system,
        "order": n,
        "labels": list(model.labels),
        "P": model.P,
        "dt": model.dt,
        "w_s": model.w_s,
        "w_u": model.w_u,
        "residual_rms": np.sqrt(np.mean(r**2, axis=0)).tolist() if len(r) else [],
        "residual_max": np.max(np.abs(r), axis=0).tolist() if len(r) else [],
        "e1_max": max_local_error(model, snaps, basis.state_dim).tolist(),
    }
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=1)
    log.info("trained %s order %d on %d records -> %s", cfg.system, n, model.P, out / "model.json")
    return report


def cmd_bounds(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    orders = cfg.order
    if cfg.noise:
        if cfg.system != "pendulum":
            raise ConfigError("noise: the noisy pipeline is available for the pendulum only")
        for n in orders:
            for sigma in cfg.noise:
                res = ex.noisy_pendulum_bounds(
                    sigma, n=n, window=cfg.window, trajectories=cfg.samples or 500,
                    test_count=cfg.test_count, horizon=cfg.horizon, dt=cfg.dt or ex.PENDULUM_DT, seed=cfg.seed,
                )
                path = out / f"bounds_n{n}_sigma{sigma:.6g}.csv"
                write_bounds_csv(path, res.t, res.measured, res.bound_model, res.bound_data)
                _validate_csv(path, BOUNDS_HEADER)
                summary[path.name] = _bounds_summary(res.measured, res.bound_model, res.bound_data)
        return summary
    for n in orders:
        model, snaps, basis, dyn = _load_or_train(cfg, n)
        if dyn is None:
            raise ConfigError("system: bounds need a simulated system (pendulum, fish or constant)")
        steps = int(round(cfg.horizon / model.dt))
        t = model.dt * np.arange(steps + 1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            meas = measured_max_error(model, dyn, basis, cfg.test_count, steps * model.dt, seed=cfg.seed + 1)
        orders_j = basis.orders
        fm = estimate_fmax_model(dyn, orders_j, samples=20_000 if cfg.system == "fish" else 100_000,
                                 seed=cfg.seed + 2, numeric=True, fd_dt=model.dt)
        dd = data_driven_estimate(model, snaps, orders_j, dyn.state_dim)
        bm, bd = fm.bound(t), dd.bound(t)
        path = out / f"bounds_n{n}.csv"
        write_bounds_csv(path, t, meas, bm, bd)
        _validate_csv(path, BOUNDS_HEADER)
        summary[path.name] = _bounds_summary(meas, bm, bd)
    return summary


def _bounds_summary(meas, bm, bd):
    return {
        "measured_at_T": np.asarray(meas)[-1].tolist(),
        "bound_model_at_T": np.asarray(bm)[-1].tolist(),
        "bound_data_at_T": np.asarray(bd)[-1].tolist(),
    }


def _weights(cfg, default_q, default_r):
    Q = np.diag(cfg.weights_q) if cfg.weights_q is not None else default_q
    R = np.diag(cfg.weights_r) if cfg.weights_r is not None else default_r
    return Q, R


def cmd_control(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.system == "pendulum":
        return _control_pendulum(cfg, out)
    if cfg.system == "fish":
        return _control_fish(cfg, out, online=False)
    raise ConfigError("system: control supports pendulum and fish")


def _control_pendulum(cfg, out):
    from .control import synthesize

    Q, R = _weights(cfg, ex.PENDULUM_Q, ex.PENDULUM_R)
    if Q.shape != (2, 2) or R.shape != (1, 1):
        raise ConfigError("weights_q/weights_r: pendulum needs 2 and 1 diagonal entries")
    duration = 10.0 if cfg.duration is None else cfg.duration
    dt = cfg.dt or ex.PENDULUM_DT
    orders = cfg.order if len(cfg.order) > 1 else sorted({1, *cfg.order})
    ics = ex.pendulum_initial_conditions(cfg.count, cfg.seed)
    rows, summary = [], {}
    for n in orders:
        model, basis = ex.pendulum_control_model(n, trajectories=cfg.samples or 500, dt=dt, seed=cfg.seed + 1)
        ctrl = synthesize(model, basis, Q, R, mode=cfg.mode, angle_indices=(0,), reference=cfg.reference or "lift")
        (out / f"controller_n{n}.json").write_text(ctrl.to_json())
        name = "linear" if n <= 1 else "koopman"
        path = out / f"trajectory_n{n}.csv"
        if cfg.count == 0 or duration == 0:
            costs = np.zeros(cfg.count)
            _write_rows(path, trajectory_header(2, 1), [])
        else:
            costs, batch = ex.run_pendulum_control(ctrl, ics, duration, dt, Q, R)
            write_trajectory_csv(path, batch.member(0))
            _validate_csv(path, trajectory_header(2, 1))
        rows += [(i, name, n, float(c)) for i, c in enumerate(costs)]
        summary[f"n{n}"] = {"controller": name, "mean": float(np.mean(costs)) if len(costs) else 0.0,
                            "std": float(np.std(costs)) if len(costs) else 0.0}
    _write_rows(out / "costs.csv", COST_HEADER, rows, ("controller",))
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary


def _fish_disturbance(cfg):
    if cfg.disturbance is None:
        return ex.default_disturbance() if cfg.command == "online" else (0.0, 0.0)
    if len(cfg.disturbance) == 1:
        return ex.default_disturbance(cfg.disturbance[0] / ex.FISH_TYPICAL_ACCEL)
    return tuple(cfg.disturbance)


def _control_fish(cfg, out, online):
    from .control import synthesize

    Q, R = _weights(cfg, ex.FISH_Q, ex.FISH_R)
    if Q.shape != (6, 6) or R.shape != (2, 2):
        raise ConfigError("weights_q/weights_r: fish needs 6 and 2 diagonal entries")
    duration = 120.0 if cfg.duration is None else cfg.duration
    dist = _fish_disturbance(cfg)
    ref_mode = cfg.reference or "penalized"
    hold = int(round(ex.FISH_FEEDBACK_PERIOD / ex.FISH_DT))
    summary = {"disturbance": list(dist)}
    names = ("koopman",) if online else ("koopman", "linear")
    models = ex.fish_models(cfg.seed, cfg.samples or 3000)
    for name in names:
        model, basis = models[name]
        if name == "koopman" and cfg.model is not None:
            loaded = DiscreteKoopman.load(cfg.model)
            if loaded.labels != model.labels:
                raise ConfigError("model: basis labels do not match the fish structural basis")
            model = loaded
        ctrl = synthesize(model, basis, Q, R, mode=cfg.mode, angle_indices=(2,), reference=ref_mode, hold_steps=hold)
        (out / f"controller_{name}.json").write_text(ctrl.to_json())
        runs = {"frozen": None}
        if online:
            runs["online"] = ex.OnlineSettings(cfg.update_period, cfg.forgetting, cfg.records_per_period)
        for tag, settings in runs.items():
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = ex.run_fish(ctrl, duration, disturbance=dist, online=settings, model=model if settings else None)
            label = f"{name}_{tag}" if online else name
            path = out / f"trajectory_{label}.csv"
            if duration == 0:
                _write_rows(path, trajectory_header(6, 2), [])
            else:
                write_trajectory_csv(path, Trajectory(res.t, res.states, res.controls))
                _validate_csv(path, trajectory_header(6, 2))
            summary[label] = {"cost": res.cost}
            if settings is not None:
                rows = [(e["t"], e["records"], e["dK"], str(e["resynthesized"]), e["running_cost"]) for e in res.log]
                _write_rows(out / "updates.csv", UPDATE_HEADER, rows)
                summary[label]["updates"] = len(res.log)
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary


def cmd_online(cfg: ExperimentConfig) -> dict:
    if cfg.system != "fish":
        raise ConfigError("system: online updates are implemented for the fish")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return _control_fish(cfg, out, online=True)


COMMANDS = {"train": cmd_train, "bounds": cmd_bounds, "control": cmd_control, "online": cmd_online}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    # closed-loop and test trajectories may leave the training box
    warnings.filterwarnings("ignore", "lifting a state outside", RuntimeWarning)
    try:
        cfg = load_config(args)
        result = COMMANDS[cfg.command](cfg)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"koopid: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, KoopidError, ValueError) as exc:
        print(f"koopid: configuration error: {exc}", file=sys.stderr)
        return 2
    json.dump(result, sys.stdout, indent=1, default=float)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
