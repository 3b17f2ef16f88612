"""Simulation and verification toolkit for the weighted random ball model."""

from .model import (
    BallModel,
    Block,
    ConditionError,
    Density,
    IntensityLaw,
    MeasureFamily,
    ModelParams,
    RadiusLaw,
    ShapeFunction,
    WeightLaw,
    block_increment_density,
    check_conditions,
    estimate_property_P,
    lp_norm,
)

__version__ = "0.1.0"
