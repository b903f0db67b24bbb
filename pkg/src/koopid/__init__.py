"""Derivative-based Koopman identification with error bounds and LQR control."""
import os as _os

# cap BLAS threads before numpy loads
_threads = _os.environ.get("KOOPID_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .errors import ConfigError, KoopidError, NumericalError  # noqa: E402
from .koopman import DiscreteKoopman, SnapshotSet, fit, incremental_update, predict, to_continuous  # noqa: E402
from .observables import BasisSpec, DynamicsModel, build_analytic_basis, build_numerical_basis, lift  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "BasisSpec",
    "ConfigError",
    "DiscreteKoopman",
    "DynamicsModel",
    "KoopidError",
    "NumericalError",
    "SnapshotSet",
    "build_analytic_basis",
    "build_numerical_basis",
    "fit",
    "incremental_update",
    "lift",
    "predict",
    "to_continuous",
]
