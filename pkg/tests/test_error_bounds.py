import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import linear_snapshots, random_stable
from koopid.bounds import (
    BOUNDS_HEADER,
    ErrorBoundEstimate,
    data_driven_estimate,
    estimate_fmax_data,
    estimate_fmax_model,
    exact_error_recursion,
    global_error_bound,
    measured_max_error,
    taylor_operator,
    write_bounds_csv,
)
from koopid.errors import SeriesTooShort
from koopid.experiments import pendulum_bounds
from koopid.koopman import fit
from koopid.observables import DynamicsModel
from koopid.systems import pendulum_orders


class TestTaylorOperator:
    def test_zeroth_order(self):
        assert np.array_equal(taylor_operator(0, 0.1).matrix, [[1.0]])

    def test_second_order_block(self):
        M = taylor_operator(2, 0.1).matrix
        assert np.allclose(M, [[1, 0.1, 0.005], [0, 1, 0.1], [0, 0, 1]], rtol=0, atol=1e-15)

    def test_block_composition(self):
        op = taylor_operator((1, 0), 0.2)
        assert np.allclose(op.matrix, [[1, 0.2, 0], [0, 1, 0], [0, 0, 1]])
        assert op.offsets == [0, 2]

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            taylor_operator(-1, 0.1)
        with pytest.raises(ValueError):
            taylor_operator(1, 0.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 6), st.floats(1e-3, 1.0), st.integers(1, 20))
    def test_power_is_taylor_at_k_dt(self, n, dt, k):
        # Tᵏ(Δt) = T(kΔt): the operator is a one-parameter semigroup
        A = np.linalg.matrix_power(taylor_operator(n, dt).matrix, k)
        B = taylor_operator(n, k * dt).matrix
        assert np.allclose(A, B, rtol=1e-10, atol=1e-12)


class TestGlobalBound:
    def test_zero_fmax(self):
        est = ErrorBoundEstimate((2,), [0.0], "model_based", 0.0)
        assert np.all(global_error_bound(est, np.linspace(0, 3, 7)) == 0.0)

    def test_zeroth_order_base_case(self):
        est = ErrorBoundEstimate((0,), [3.7], "model_based", 0.0)
        assert global_error_bound(est, 1.0)[0] == pytest.approx(3.7)

    def test_hand_value(self):
        est = ErrorBoundEstimate((2,), [6.0], "model_based", 0.0)
        assert global_error_bound(est, 0.5)[0] == pytest.approx(0.125)

    def test_negative_horizon(self):
        est = ErrorBoundEstimate((1,), [1.0], "model_based", 0.0)
        with pytest.raises(ValueError):
            global_error_bound(est, -1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 5), st.floats(0, 100), st.floats(0, 2), st.floats(0, 2))
    def test_monotone_in_horizon(self, n, fmax, t1, t2):
        est = ErrorBoundEstimate((n,), [fmax], "model_based", 0.0)
        lo, hi = sorted((t1, t2))
        assert global_error_bound(est, lo)[0] <= global_error_bound(est, hi)[0]


class TestExactRecursion:
    def test_polynomial_closure(self):
        n, dt, k = 2, 0.05, 30
        t = np.arange(2 * k + 1) * dt / 2
        # f = t² has f''' ≡ 0
        F = np.vstack([t**2, 2 * t, np.full_like(t, 2.0), np.zeros_like(t)])
        assert np.all(exact_error_recursion(F, dt, k) == 0.0)

    def test_one_step_lagrange(self):
        n, dt = 1, 0.01
        F = np.vstack([np.zeros(3), np.zeros(3), [0.0, 4.0, 0.0]])
        e = exact_error_recursion(F, dt, 1)
        assert e[1, 0] == pytest.approx(4.0 * dt**2 / 2)

    def test_sine_matches_rollout(self):
        n, dt, k = 1, 0.01, 100
        t = np.arange(2 * k + 1) * dt / 2
        F = np.vstack([np.sin(t), np.cos(t), -np.sin(t)])
        e = exact_error_recursion(F, dt, k)
        T = taylor_operator(n, dt).matrix
        x = np.array([0.0, 1.0])
        roll = []
        for _ in range(k):
            x = T @ x
            roll.append(x[0])
        direct = np.sin(dt * np.arange(1, k + 1)) - np.array(roll)
        bound = (k * dt) ** 2 / 2
        assert np.max(np.abs(e[1:, 0] - direct)) <= 0.1 * bound

    def test_too_short(self):
        with pytest.raises(SeriesTooShort):
            exact_error_recursion(np.zeros((3, 4)), 0.1, 5)


class TestFmax:
    def test_pendulum_theta_order_zero(self, pendulum):
        est = estimate_fmax_model(pendulum, 0, samples=50_000)
        assert est.fmax[0] == pytest.approx(5.0, rel=0.02)

    def test_pendulum_theta_order_one(self, pendulum):
        est = estimate_fmax_model(pendulum, (1, 0), samples=200_000)
        assert est.fmax[0] == pytest.approx(9.81 + 5.0, rel=0.02)

    def test_zero_dynamics(self):
        zero = lambda s, u: np.zeros_like(s)
        m = DynamicsModel(1, 0, zero, [(-1, 1)], derivative_chain=(zero, zero, zero))
        for n in range(3):
            assert estimate_fmax_model(m, n, samples=100).fmax[0] == 0.0

    def test_numeric_fallback_agrees(self, pendulum):
        analytic = estimate_fmax_model(pendulum, (1, 0), samples=20_000, seed=1)
        chainless = DynamicsModel(2, 1, pendulum.flow, pendulum.domain, pendulum.control_domain)
        numeric = estimate_fmax_model(chainless, (1, 0), samples=20_000, seed=1, numeric=True, fd_dt=1e-3)
        assert numeric.fmax[0] == pytest.approx(analytic.fmax[0], rel=1e-3)

    def test_data_zero(self):
        assert estimate_fmax_data([0.0], 2, 0.01)[0] == 0.0

    def test_data_hand_value(self):
        # 1e-6 · 3! / 0.01³
        assert estimate_fmax_data([1e-6], 2, 0.01)[0] == pytest.approx(6.0)

    def test_data_driven_within_decade_of_model(self, pendulum):
        for n in (1, 2, 3):
            res = pendulum_bounds(n, train_count=5000, test_count=10, fmax_samples=50_000)
            ratio = res.bound_data[-1, 0] / res.bound_model[-1, 0]
            assert 0.1 <= ratio <= 10.0, (n, ratio)


class TestMeasuredError:
    def test_exact_linear_model(self):
        rng = np.random.default_rng(5)
        M = random_stable(3, rng)
        snaps, basis = linear_snapshots(M, 0.01, 300, rng)
        model = fit(snaps)
        truth = DynamicsModel(3, 0, lambda s, u: s @ M.T, [(-1, 1)] * 3)
        err = measured_max_error(model, truth, basis, 50, 0.5)
        assert np.max(err) <= 1e-8

    def test_higher_order_is_more_accurate(self):
        lo = pendulum_bounds(1, train_count=5000, test_count=1000, fmax_samples=1000)
        hi = pendulum_bounds(3, train_count=5000, test_count=1000, fmax_samples=1000)
        assert np.all(hi.measured[1:, 0] < lo.measured[1:, 0])

    def test_below_model_bound(self):
        res = pendulum_bounds(2, train_count=5000, test_count=5000)
        assert np.all(res.measured[:, 0] <= res.bound_model[:, 0])

    def test_csv_schema(self, tmp_path):
        t = np.array([0.0, 0.1])
        write_bounds_csv(tmp_path / "b.csv", t, np.zeros((2, 2)), np.ones((2, 2)), np.ones((2, 2)))
        rows = list(csv.reader(open(tmp_path / "b.csv")))
        assert rows[0] == BOUNDS_HEADER
        assert len(rows) == 1 + 4
