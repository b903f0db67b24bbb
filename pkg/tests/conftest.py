import warnings

import numpy as np
import pytest

from koopid.koopman import SnapshotSet, fit
from koopid.observables import build_analytic_basis
from koopid.systems import SamplingSpec, pendulum_model, pendulum_orders, sample_training_set


@pytest.fixture(autouse=True)
def _quiet_domain_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", "lifting a state outside", RuntimeWarning)
        yield


@pytest.fixture(scope="session")
def pendulum():
    return pendulum_model()


@pytest.fixture(scope="session")
def pendulum_fit(pendulum):
    """n = 2 analytic-basis pendulum model on 2000 records."""
    basis = build_analytic_basis(pendulum, pendulum_orders(2))
    spec = SamplingSpec(pendulum.domain, pendulum.control_domain, 2000, 0.01, seed=3)
    snaps = sample_training_set(pendulum, spec, basis)
    return fit(snaps), snaps, basis


def random_stable(n, rng, margin=0.2):
    """Random real matrix with spectrum shifted into Re λ ≤ −margin."""
    M = rng.standard_normal((n, n))
    shift = np.max(np.linalg.eigvals(M).real) + margin
    return M - shift * np.eye(n)


def linear_snapshots(M, dt, count, rng):
    """Exact one-step records of ṡ = Ms with the raw-state basis and no input."""
    import scipy.linalg

    from koopid.observables import BasisSpec, _state_entries

    n = M.shape[0]
    basis = BasisSpec(tuple(_state_entries([f"s{i + 1}" for i in range(n)])), n, 0, (0,) * n, "state")
    s0 = rng.uniform(-1, 1, (count, n))
    s1 = s0 @ scipy.linalg.expm(M * dt).T
    return SnapshotSet.from_records(basis, s0, np.zeros((count, 0)), s1, dt=dt), basis
