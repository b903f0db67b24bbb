"""Reference systems: single pendulum and robotic fish average model."""
from .fish import (
    DEFAULT_PARAMS,
    TRAIN_DOMAIN,
    FishParams,
    figure8_reference,
    fish_actuation,
    fish_basis,
    fish_flow,
    fish_model,
    fish_terms,
    wrap_angle,
)
from .pendulum import pendulum_chain, pendulum_flow, pendulum_model, pendulum_orders
from .simulate import (
    SamplingSpec,
    add_noise,
    integrate,
    rk4_step,
    sample_training_set,
    tracking_cost,
)

__all__ = [
    "DEFAULT_PARAMS",
    "FishParams",
    "TRAIN_DOMAIN",
    "SamplingSpec",
    "add_noise",
    "figure8_reference",
    "fish_actuation",
    "fish_basis",
    "fish_flow",
    "fish_model",
    "fish_terms",
    "integrate",
    "pendulum_chain",
    "pendulum_flow",
    "pendulum_model",
    "pendulum_orders",
    "rk4_step",
    "sample_training_set",
    "tracking_cost",
    "wrap_angle",
]
