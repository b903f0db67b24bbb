import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import linear_snapshots, random_stable
from koopid.bounds import taylor_block
from koopid.errors import BasisMismatch, DtMismatch, NoPrincipalLog
from koopid.koopman import (
    DiscreteKoopman,
    SnapshotSet,
    extract_ab,
    fit,
    incremental_update,
    one_step_residuals,
    predict,
    to_continuous,
)
from koopid.systems import fish_basis, fish_model, integrate
from koopid.experiments import fish_training_set


def _bare(K, dt=0.1, w_u=0):
    w = K.shape[0]
    return DiscreteKoopman(K, K.copy(), np.eye(w), 1, dt, w - w_u, w_u, tuple(f"e{i}" for i in range(w)))


class TestFit:
    def test_linear_system_exact(self):
        rng = np.random.default_rng(0)
        M = random_stable(4, rng)
        snaps, _ = linear_snapshots(M, 0.05, 200, rng)
        K = fit(snaps).K
        E = scipy.linalg.expm(0.05 * M)
        assert np.max(np.abs(K - E)) <= 1e-8

    def test_single_record_identity_direction(self):
        e1 = np.array([[1.0, 0.0, 0.0]])
        snaps = SnapshotSet(e1, e1, 0.1, ("a", "b", "c"), 3, 0)
        K = fit(snaps).K
        assert np.allclose(K @ e1[0], e1[0], atol=1e-14)

    def test_pendulum_taylor_structure(self, pendulum_fit):
        model, _, basis = pendulum_fit
        A, _ = extract_ab(model)
        # θ, ω = θ̇, θ̈ form one Taylor chain of order two
        T = taylor_block(2, model.dt)
        dist = np.linalg.norm(A - T) / np.linalg.norm(T)
        assert dist < 0.05

    def test_residuals_shape(self, pendulum_fit):
        model, snaps, _ = pendulum_fit
        r = one_step_residuals(model, snaps)
        assert r.shape == (snaps.P, model.w_s)
        assert np.max(np.abs(r[:, 0])) < 1e-4


class TestIncremental:
    def test_empty_update_is_identity(self, pendulum_fit):
        model, snaps, _ = pendulum_fit
        empty = snaps.subset(slice(0, 0))
        assert incremental_update(model, empty) is model

    def test_matches_batch(self, pendulum_fit):
        model, snaps, _ = pendulum_fit
        a, b = snaps.subset(slice(0, 700)), snaps.subset(slice(700, None))
        inc = incremental_update(fit(a), b)
        assert np.max(np.abs(inc.K - model.K)) <= 1e-10

    def test_order_independent_accumulators(self, pendulum_fit):
        _, snaps, _ = pendulum_fit
        parts = [snaps.subset(slice(i, i + 500)) for i in (0, 500, 1000, 1500)]
        one = fit(parts[0])
        for p in parts[1:]:
            one = incremental_update(one, p)
        two = fit(parts[0])
        for p in parts[:0:-1]:
            two = incremental_update(two, p)
        assert np.max(np.abs(one.G_sum - two.G_sum)) <= 1e-12 * np.max(np.abs(one.G_sum))
        assert np.max(np.abs(one.A_sum - two.A_sum)) <= 1e-12 * np.max(np.abs(one.A_sum))

    def test_forgetting_weights(self, pendulum_fit):
        model, snaps, _ = pendulum_fit
        new = snaps.subset(slice(0, 10))
        upd = incremental_update(model, new, forgetting=0.5)
        assert upd.P == pytest.approx(0.5 * model.P + 10)

    def test_rejects_dt_and_basis_mismatch(self, pendulum_fit):
        model, snaps, _ = pendulum_fit
        bad_dt = SnapshotSet(snaps.lifted, snaps.lifted_next, 0.02, snaps.labels, snaps.w_s, snaps.w_u)
        with pytest.raises(DtMismatch):
            incremental_update(model, bad_dt)
        labels = tuple(f"x{i}" for i in range(len(snaps.labels)))
        bad_lab = SnapshotSet(snaps.lifted, snaps.lifted_next, snaps.dt, labels, snaps.w_s, snaps.w_u)
        with pytest.raises(BasisMismatch):
            incremental_update(model, bad_lab)

    @settings(max_examples=15, deadline=None)
    @given(st.lists(st.integers(1, 1999), min_size=1, max_size=4, unique=True))
    def test_any_partition_matches_batch(self, pendulum_fit, cuts):
        model, snaps, _ = pendulum_fit
        edges = [0] + sorted(cuts) + [snaps.P]
        m = fit(snaps.subset(slice(edges[0], edges[1])))
        for lo, hi in zip(edges[1:-1], edges[2:]):
            m = incremental_update(m, snaps.subset(slice(lo, hi)))
        assert np.max(np.abs(m.K - model.K)) <= 1e-10


class TestSerialization:
    def test_json_round_trip(self, pendulum_fit, tmp_path):
        model, _, _ = pendulum_fit
        model.save(tmp_path / "m.json")
        back = DiscreteKoopman.load(tmp_path / "m.json")
        assert np.array_equal(back.K, model.K)
        assert back.labels == model.labels and back.P == model.P
        assert back.to_json() == model.to_json()


class TestContinuous:
    def test_identity_gives_zero(self):
        assert np.array_equal(to_continuous(np.eye(3), 0.1), np.zeros((3, 3)))

    def test_round_trip(self):
        rng = np.random.default_rng(4)
        M = random_stable(5, rng)
        L = to_continuous(scipy.linalg.expm(0.01 * M), 0.01)
        assert np.max(np.abs(L - M)) <= 1e-8

    def test_negative_eigenvalue(self):
        with pytest.raises(NoPrincipalLog):
            to_continuous(np.diag([1.0, -0.5]), 0.1)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 10_000))
    def test_round_trip_property(self, n, seed):
        M = random_stable(n, np.random.default_rng(seed))
        M *= 1.0 / max(1.0, np.linalg.norm(M))
        L = to_continuous(scipy.linalg.expm(0.05 * M), 0.05)
        assert np.allclose(L, M, atol=1e-8)


class TestExtractAndPredict:
    def test_autonomous(self):
        K = np.array([[0.9, 0.1], [0.0, 0.8]])
        A, B = extract_ab(_bare(K))
        assert np.array_equal(A, K) and B.shape == (2, 0)

    def test_taylor_operator_bands(self):
        dt = 0.1
        K = np.eye(4)
        K[:3, :3] = taylor_block(2, dt)
        K[1:3, 3] = [dt**2 / 2, dt]
        A, B = extract_ab(_bare(K, dt, w_u=1))
        assert np.allclose(A, taylor_block(2, dt))
        assert A[0, 2] == pytest.approx(dt**2 / math.factorial(2))

    def test_block_identity(self, pendulum_fit):
        model, snaps, _ = pendulum_fit
        A, B = extract_ab(model)
        x = snaps.lifted[:10]
        direct = (x @ model.K.T)[:, : model.w_s]
        split = x[:, : model.w_s] @ A.T + x[:, model.w_s :] @ B.T
        assert np.allclose(split, direct, rtol=0, atol=1e-14)

    def test_zero_steps(self, pendulum_fit):
        model, snaps, _ = pendulum_fit
        out = predict(model, snaps.lifted[0], None, 0)
        assert out.shape == (1, model.w_s)
        assert np.array_equal(out[0], snaps.lifted[0, : model.w_s])

    def test_linear_rollout(self):
        rng = np.random.default_rng(2)
        M = random_stable(3, rng)
        snaps, _ = linear_snapshots(M, 0.01, 100, rng)
        model = fit(snaps)
        s0 = rng.uniform(-1, 1, 3)
        out = predict(model, s0, None, 100)
        exact = scipy.linalg.expm(M * 1.0) @ s0
        assert np.allclose(out[-1], exact, atol=1e-6)

    def test_fish_rollout_stays_near_truth(self):
        from koopid.systems import fish_actuation

        basis = fish_basis()
        model = fit(fish_training_set(basis, 3000, seed=0))
        u = np.array(fish_actuation(20.0, 10.0))
        s0 = np.array([0.0, 0.0, 0.0, 0.02, 0.0, 0.0])
        tr = integrate(fish_model(), s0, u, 0.005, 5.0)
        steps = len(tr.t) - 1
        pred = predict(model, basis.lift(s0, u), np.broadcast_to(u, (steps, 2)), steps)[:, :6]
        assert np.all(np.isfinite(pred))
        # within twice the envelope of the simulated trajectory
        env = np.abs(tr.states).max(0)
        assert np.all(np.abs(pred) <= 2 * env)
