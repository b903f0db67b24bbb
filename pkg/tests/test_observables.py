import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from koopid.errors import DimensionMismatch, DuplicateLabel, MissingDerivative, TooShort, WindowTooLarge
from koopid.observables import (
    BasisEntry,
    BasisSpec,
    DynamicsModel,
    Term,
    Trajectory,
    build_analytic_basis,
    build_numerical_basis,
    build_structural_basis,
    estimate_derivatives,
    lift,
    lift_trajectory,
    moving_average,
    read_trajectory_csv,
    state_basis,
    write_trajectory_csv,
)
from koopid.systems import fish_basis, pendulum_flow, pendulum_orders


class TestAnalyticBasis:
    def test_zero_order_is_states_only(self, pendulum):
        b = build_analytic_basis(pendulum, 0)
        assert b.w_s == pendulum.state_dim
        assert b.labels == ("theta", "omega", "u")

    def test_theta_first_derivative_dedups_to_omega(self, pendulum):
        b = build_analytic_basis(pendulum, (1, 0))
        assert b.labels == ("theta", "omega", "u")
        x = lift(b, np.array([np.pi / 2, 0.3]), np.array([0.0]))
        # θ̇ is carried by ω
        assert x[1] == pytest.approx(pendulum_flow([np.pi / 2, 0.3], [0.0])[0])

    def test_second_derivative_entry(self, pendulum):
        b = build_analytic_basis(pendulum, pendulum_orders(2))
        x = lift(b, np.array([np.pi / 2, 0.0]), np.array([0.0]))
        assert x[b.labels.index("d2(theta)")] == pytest.approx(9.81)

    def test_fig3_orders(self, pendulum):
        # θ and three derivatives; ω's derivatives coincide with θ's
        b = build_analytic_basis(pendulum, (3, 2))
        assert b.labels[: b.w_s] == ("theta", "omega", "d2(theta)", "d3(theta)")

    def test_fixed_point_lift(self, pendulum):
        b = build_analytic_basis(pendulum, (1, 0))
        assert np.array_equal(lift(b, np.zeros(2), np.zeros(1)), np.zeros(3))

    def test_missing_derivative(self, pendulum):
        with pytest.raises(MissingDerivative):
            build_analytic_basis(pendulum, 9)

    def test_ignores_control_in_state_part(self, pendulum):
        b = build_analytic_basis(pendulum, pendulum_orders(3))
        s = np.array([0.4, -1.0])
        assert np.allclose(lift(b, s, [3.0])[: b.w_s], lift(b, s, [0.0])[: b.w_s])

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-6, 6), st.floats(-5, 5), st.floats(-5, 5))
    def test_derivative_entries_match_finite_differences(self, theta, omega, u):
        # d2(θ) with u = 0 equals the rate of change of ω under zero input
        from koopid.systems import pendulum_model

        m = pendulum_model()
        b = build_analytic_basis(m, pendulum_orders(3))
        s = np.array([theta, omega])
        x = lift(b, s, [0.0])
        h = 1e-6
        f = pendulum_flow(s, [0.0])
        x_next = lift(b, s + h * f, [0.0])
        fd = (x_next - x) / h
        # d/dt d2(θ) = d3(θ) along the unforced flow
        assert fd[2] == pytest.approx(x[3], abs=1e-3 * max(1.0, abs(x[3])))


class TestStructuralBasis:
    def test_fish_dimensions(self):
        b = fish_basis()
        assert (b.w_s, b.w_u) == (60, 2)
        assert b.w_s - 6 == 54

    def test_fish_rest_products_vanish(self):
        b = fish_basis()
        x = lift(b, np.zeros(6), np.zeros(2))
        for lab, v in zip(b.labels, x):
            if "v" in lab and lab not in ("vx", "vy"):
                assert v == 0.0, lab

    def test_single_term(self):
        g = Term("g1", lambda s: s[..., 0] ** 2, ((0, "2*s1", lambda s: 2 * s[..., 0]),))
        b = build_structural_basis(["s1"], [g], [["g1"]], order=1)
        assert b.labels == ("s1", "g1")

    def test_two_state_products_dedup(self):
        # ṡ1 = c1 s2, ṡ2 = c2 s1: (∂s2/∂s2)·s1 and (∂s1/∂s1)·s2 are already states
        b = build_structural_basis(["s1", "s2"], [], [["s2"], ["s1"]], order=2)
        assert b.labels == ("s1", "s2")
        structural = build_structural_basis(["s1", "s2"], [], [["s2"], ["s1"]], order=1)
        assert structural.w == 2

    def test_duplicate_term_label(self):
        t = Term("s1", lambda s: s[..., 0])
        with pytest.raises(DuplicateLabel):
            build_structural_basis(["s1"], [t], [["s1"]])

    def test_unknown_term(self):
        with pytest.raises(ValueError):
            build_structural_basis(["s1"], [], [["nope"]])


class TestNumericalBasis:
    def test_pendulum_chain_entries(self):
        b = build_numerical_basis(["theta", "omega"], (2, 1), ["u"], derivative_of={1: 0})
        # θ̇ = ω is measured, d2(θ) comes from differencing ω once
        assert b.labels == ("theta", "omega", "d2(theta)", "u")
        assert b.entries[2].source == (1, 1)

    def test_needs_lift_trajectory(self):
        b = build_numerical_basis(["a"], 1)
        with pytest.raises(ValueError):
            lift(b, np.zeros(1))
        t = np.arange(20) * 0.1
        X, (lo, hi) = lift_trajectory(b, (t**2)[:, None], dt=0.1)
        assert (lo, hi) == (1, 19)
        assert np.allclose(X[:, 1], 2 * t[lo:hi])


class TestDerivatives:
    def test_quadratic_exact(self):
        t = np.arange(0, 2.01, 0.1)
        est = estimate_derivatives(t**2, 0.1, 1)
        k = int(round(1.0 / 0.1))
        assert est.values[0, k] == pytest.approx(2.0, abs=1e-12)

    def test_sine_slope(self):
        dt = 0.01
        t = np.arange(-5, 6) * dt
        est = estimate_derivatives(np.sin(t), dt, 1)
        assert abs(est.values[0, 5] - 1.0) <= 1e-4

    def test_constant_is_zero(self):
        est = estimate_derivatives(np.full(30, 2.5), 0.01, 3)
        lo, hi = est.valid_range
        assert np.all(est.values[:, lo:hi] == 0.0)

    def test_too_short(self):
        with pytest.raises(TooShort):
            estimate_derivatives(np.zeros(4), 0.1, 2)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.floats(0.01, 0.5))
    def test_polynomial_of_degree_order_plus_one(self, order, dt):
        # iterated central differences are exact for polynomials of degree ≤ order + 1
        t = np.arange(2 * order + 3) * dt
        c = np.arange(1, order + 3, dtype=float)
        f = np.polyval(c, t)
        est = estimate_derivatives(f, dt, order)
        lo, hi = est.valid_range
        exact = np.polyval(np.polyder(c, order), t)
        assert np.allclose(est.values[order - 1, lo:hi], exact[lo:hi], rtol=1e-6, atol=1e-6 * np.abs(exact).max())


class TestMovingAverage:
    def test_constant(self):
        out = moving_average(np.full(40, 5.0), 15)
        assert out.shape == (26,)
        assert np.all(out == 5.0)

    def test_alternating(self):
        x = np.tile([1.0, -1.0], 20)
        assert np.all(moving_average(x, 2) == 0.0)

    def test_variance_reduction(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(10_000)
        ratio = np.var(x) / np.var(moving_average(x, 15))
        assert ratio == pytest.approx(15, rel=0.1)

    def test_window_too_large(self):
        with pytest.raises(WindowTooLarge):
            moving_average(np.zeros(5), 6)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 2**31 - 1))
    def test_mean_is_between_extremes(self, window, seed):
        x = np.random.default_rng(seed).standard_normal(40)
        y = moving_average(x, window)
        assert len(y) == 40 - window + 1
        assert np.all(y <= x.max() + 1e-12) and np.all(y >= x.min() - 1e-12)


class TestLiftAndTypes:
    def test_batch_broadcast(self, pendulum):
        b = build_analytic_basis(pendulum, pendulum_orders(2))
        s = np.random.default_rng(1).uniform(-1, 1, (7, 2))
        X = lift(b, s, np.zeros((7, 1)))
        assert X.shape == (7, b.w)
        assert np.allclose(X[3], lift(b, s[3], np.zeros(1)))

    def test_wrong_state_length(self, pendulum):
        b = state_basis(pendulum)
        with pytest.raises(DimensionMismatch):
            lift(b, np.zeros(3))

    def test_duplicate_labels_rejected(self):
        e = BasisEntry("a", "state", lambda s, u: s[..., 0], state_index=0)
        with pytest.raises(DuplicateLabel):
            BasisSpec((e, BasisEntry("a", "control", lambda s, u: u[..., 0], state_index=0)), 1, 1, (0,))

    def test_dynamics_model_chain_check(self, pendulum):
        assert pendulum.check_chain() == 0.0

    def test_trajectory_csv_round_trip(self, tmp_path):
        t = np.arange(5) * 0.1
        tr = Trajectory(t, np.random.default_rng(0).normal(size=(5, 2)), np.ones((5, 1)))
        write_trajectory_csv(tmp_path / "a.csv", tr)
        back = read_trajectory_csv(tmp_path / "a.csv")
        assert np.array_equal(back.states, tr.states) and np.array_equal(back.t, t)

    def test_model_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            DynamicsModel(0, 0, lambda s, u: s, np.zeros((0, 2)))
